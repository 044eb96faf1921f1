//! Conforming 2D triangulations with newest-vertex-bisection refinement.
//!
//! Triangles are stored as vertex triples `(a, b, c)` whose first two
//! entries span the reference (refinement) edge. Bisecting `(a, b, c)` at
//! the midpoint `m` of `(a, b)` produces the children `(c, a, m)` and
//! `(b, c, m)`, so the new vertex is always last and the reference edge of
//! each child is the edge opposite the new vertex. Conformity is maintained
//! by compatible bisection: a triangle is bisected only after the neighbour
//! across its reference edge shares that edge as its own reference edge,
//! applied recursively with a chain-length cap that turns a tagging cycle
//! into an error instead of an endless loop.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static MESH_ID: AtomicU64 = AtomicU64::new(1);

/// One edge of the triangulation.
///
/// `vertices` is ordered lower index first; that order fixes the global
/// tangential direction `t_E` and, by a −90° rotation, the global normal
/// `ν_E`. `tris` lists adjacent triangles with `K⁺` (the smaller triangle
/// index) first; jumps are `K⁺ − K⁻`, and the trace from `K⁺` on the
/// boundary.
#[derive(Debug, Clone)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub tris: [Option<usize>; 2],
    pub length: f64,
    pub boundary: bool,
}

impl Edge {
    /// Unit tangent along the global direction (low → high vertex index).
    pub fn tangent(&self, mesh: &Mesh) -> [f64; 2] {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [(b[0] - a[0]) / self.length, (b[1] - a[1]) / self.length]
    }

    /// Global unit normal: tangent rotated by −90°.
    pub fn normal(&self, mesh: &Mesh) -> [f64; 2] {
        let t = self.tangent(mesh);
        [t[1], -t[0]]
    }
}

/// Set of triangle indices selected for refinement.
#[derive(Debug, Clone, Default)]
pub struct MarkSet {
    indices: Vec<usize>,
}

impl MarkSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, mesh: &Mesh) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if let Some(&bad) = v.iter().find(|&&i| i >= mesh.num_triangles()) {
            return Err(Error::InvalidMark {
                index: bad,
                ntri: mesh.num_triangles(),
            });
        }
        Ok(MarkSet { indices: v })
    }

    pub fn empty() -> Self {
        MarkSet::default()
    }

    pub fn all(mesh: &Mesh) -> Self {
        MarkSet {
            indices: (0..mesh.num_triangles()).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundary: Option<Vec<[usize; 2]>>,
}

/// Conforming triangulation. Immutable after construction; refinement
/// returns a new mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    id: u64,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    generation: Vec<u32>,
    ancestor: Vec<usize>,
    /// For refined meshes: (id of the source mesh, source triangle of each triangle).
    parent: Option<(u64, Vec<usize>)>,
    edges: Vec<Edge>,
    /// Per triangle, global edge index opposite each local vertex.
    tri_edges: Vec<[usize; 3]>,
}

fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [v[t[0]], v[t[1]], v[t[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Build a mesh from raw vertex/triangle data, validating conformity,
    /// orientation and reference-edge sanity. Generation counters start at
    /// zero and every triangle is its own ancestor.
    pub fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        let ntri = triangles.len();
        let generation = vec![0; ntri];
        let ancestor = (0..ntri).collect();
        Mesh::assemble(vertices, triangles, generation, ancestor, None, true)
    }

    fn assemble(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        generation: Vec<u32>,
        ancestor: Vec<usize>,
        parent: Option<(u64, Vec<usize>)>,
        check_hanging: bool,
    ) -> Result<Mesh> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} repeats a vertex: {t:?}"
                )));
            }
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references a vertex out of range: {t:?}"
                )));
            }
            if signed_area(&vertices, t) <= 0.0 {
                return Err(Error::DegenerateTriangle(i));
            }
        }

        // Canonical edge list sorted by (low, high) vertex pair.
        let mut keys: Vec<(usize, usize)> = Vec::with_capacity(3 * triangles.len());
        for t in &triangles {
            keys.push(edge_key(t[1], t[2]));
            keys.push(edge_key(t[2], t[0]));
            keys.push(edge_key(t[0], t[1]));
        }
        keys.sort_unstable();
        keys.dedup();
        let index_of: HashMap<(usize, usize), usize> =
            keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut edges: Vec<Edge> = keys
            .iter()
            .map(|&(a, b)| {
                let d = [
                    vertices[b][0] - vertices[a][0],
                    vertices[b][1] - vertices[a][1],
                ];
                Edge {
                    vertices: [a, b],
                    tris: [None, None],
                    length: d[0].hypot(d[1]),
                    boundary: false,
                }
            })
            .collect();

        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (i, t) in triangles.iter().enumerate() {
            for local in 0..3 {
                let (a, b) = match local {
                    0 => (t[1], t[2]),
                    1 => (t[2], t[0]),
                    _ => (t[0], t[1]),
                };
                let e = index_of[&edge_key(a, b)];
                tri_edges[i][local] = e;
                let slots = &mut edges[e].tris;
                if slots[0].is_none() {
                    slots[0] = Some(i);
                } else if slots[1].is_none() {
                    slots[1] = Some(i);
                } else {
                    return Err(Error::NonConforming(format!(
                        "edge ({},{}) is shared by more than two triangles",
                        edges[e].vertices[0], edges[e].vertices[1]
                    )));
                }
            }
        }
        for e in &mut edges {
            // K⁺ is the smaller triangle index.
            if let [Some(a), Some(b)] = e.tris {
                if a > b {
                    e.tris = [Some(b), Some(a)];
                }
            }
            e.boundary = e.tris[1].is_none();
        }

        if check_hanging {
            // A vertex strictly inside another triangle's edge breaks
            // conformity without breaking the two-triangles-per-edge count.
            for e in edges.iter().filter(|e| e.boundary) {
                let a = vertices[e.vertices[0]];
                let b = vertices[e.vertices[1]];
                for (vi, v) in vertices.iter().enumerate() {
                    if vi == e.vertices[0] || vi == e.vertices[1] {
                        continue;
                    }
                    let cross = (b[0] - a[0]) * (v[1] - a[1]) - (b[1] - a[1]) * (v[0] - a[0]);
                    let dot = (v[0] - a[0]) * (b[0] - a[0]) + (v[1] - a[1]) * (b[1] - a[1]);
                    let len2 = e.length * e.length;
                    if cross.abs() < 1e-12 * e.length && dot > 1e-12 * len2 && dot < len2 * (1.0 - 1e-12)
                    {
                        return Err(Error::NonConforming(format!(
                            "vertex {vi} hangs on edge ({},{})",
                            e.vertices[0], e.vertices[1]
                        )));
                    }
                }
            }
        }

        Ok(Mesh {
            id: MESH_ID.fetch_add(1, Ordering::Relaxed),
            vertices,
            triangles,
            generation,
            ancestor,
            parent,
            edges,
            tri_edges,
        })
    }

    /// Structured mesh of the unit square with `2n²` right isoceles
    /// triangles; each reference edge is the cell diagonal (the longest
    /// edge).
    pub fn unit_square(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidSubdivision);
        }
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (p00, p10) = (vid(i, j), vid(i + 1, j));
                let (p01, p11) = (vid(i, j + 1), vid(i + 1, j + 1));
                // diagonal p00–p11 is the reference edge of both halves
                triangles.push([p11, p00, p10]);
                triangles.push([p00, p11, p01]);
            }
        }
        Mesh::from_parts(vertices, triangles)
    }

    /// L-shaped domain (−1,1)² \ [0,1)×(−1,0) with `6n²` triangles and the
    /// reentrant corner at the origin.
    pub fn lshape(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidSubdivision);
        }
        // Grid over [−1,1]², skipping vertices interior to the removed
        // quadrant; cells of the removed quadrant are skipped. Coordinates
        // are 2·(i/m) − 1 so the reentrant corner lands exactly on (0,0).
        let m = 2 * n;
        let coord = |i: usize| 2.0 * (i as f64 / m as f64) - 1.0;
        let mut ids = vec![usize::MAX; (m + 1) * (m + 1)];
        let mut vertices = Vec::new();
        for j in 0..=m {
            for i in 0..=m {
                if !(i > n && j < n) {
                    ids[j * (m + 1) + i] = vertices.len();
                    vertices.push([coord(i), coord(j)]);
                }
            }
        }
        let vid = |i: usize, j: usize| ids[j * (m + 1) + i];
        let mut triangles = Vec::new();
        for j in 0..m {
            for i in 0..m {
                if i >= n && j < n {
                    continue;
                }
                let (p00, p10) = (vid(i, j), vid(i + 1, j));
                let (p01, p11) = (vid(i, j + 1), vid(i + 1, j + 1));
                triangles.push([p11, p00, p10]);
                triangles.push([p00, p11, p01]);
            }
        }
        Mesh::from_parts(vertices, triangles)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn generation(&self, tri: usize) -> u32 {
        self.generation[tri]
    }

    pub fn ancestor(&self, tri: usize) -> usize {
        self.ancestor[tri]
    }

    /// Map from this mesh's triangles to the triangles of the mesh it was
    /// refined from, when known.
    pub fn parent_map(&self) -> Option<(u64, &[usize])> {
        self.parent.as_ref().map(|(id, map)| (*id, map.as_slice()))
    }

    /// Edge index opposite local vertex `local` of triangle `tri`.
    /// Local 2 is the reference edge `(t[0], t[1])`.
    pub fn tri_edge(&self, tri: usize, local: usize) -> usize {
        self.tri_edges[tri][local]
    }

    pub fn tri_vertices(&self, tri: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[tri];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ]
    }

    pub fn area(&self, tri: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[tri])
    }

    /// Mesh size h_K = |K|^{1/2}.
    pub fn h_k(&self, tri: usize) -> f64 {
        self.area(tri).sqrt()
    }

    /// Affine map x = B x̂ + b from the reference triangle; returns (B, b, det B).
    pub fn jacobian(&self, tri: usize) -> ([[f64; 2]; 2], [f64; 2], f64) {
        let [v0, v1, v2] = self.tri_vertices(tri);
        let b = [[v1[0] - v0[0], v2[0] - v0[0]], [v1[1] - v0[1], v2[1] - v0[1]]];
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        (b, v0, det)
    }

    /// Reference coordinates of physical point `p` in triangle `tri`.
    pub fn to_reference(&self, tri: usize, p: [f64; 2]) -> [f64; 2] {
        let (b, v0, det) = self.jacobian(tri);
        let d = [p[0] - v0[0], p[1] - v0[1]];
        [
            (b[1][1] * d[0] - b[0][1] * d[1]) / det,
            (-b[1][0] * d[0] + b[0][0] * d[1]) / det,
        ]
    }

    pub fn from_reference(&self, tri: usize, xh: [f64; 2]) -> [f64; 2] {
        let (b, v0, _) = self.jacobian(tri);
        [
            v0[0] + b[0][0] * xh[0] + b[0][1] * xh[1],
            v0[1] + b[1][0] * xh[0] + b[1][1] * xh[1],
        ]
    }

    pub fn min_angle(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.min_angle_of(t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_angle_of(&self, tri: usize) -> f64 {
        let vs = self.tri_vertices(tri);
        let mut min = f64::INFINITY;
        for i in 0..3 {
            let a = vs[i];
            let b = vs[(i + 1) % 3];
            let c = vs[(i + 2) % 3];
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let dot = u[0] * v[0] + u[1] * v[1];
            let cross = u[0] * v[1] - u[1] * v[0];
            min = min.min(cross.abs().atan2(dot));
        }
        min
    }

    /// Number of distinct similarity classes, maximised over initial-mesh
    /// ancestors. Newest-vertex bisection keeps this at most 4.
    pub fn similarity_classes_per_ancestor(&self) -> usize {
        let mut classes: HashMap<usize, std::collections::BTreeSet<(i64, i64)>> = HashMap::new();
        for t in 0..self.num_triangles() {
            let vs = self.tri_vertices(t);
            let mut lens = [0.0f64; 3];
            for i in 0..3 {
                let a = vs[i];
                let b = vs[(i + 1) % 3];
                lens[i] = (b[0] - a[0]).hypot(b[1] - a[1]);
            }
            lens.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sig = (
                (lens[0] / lens[2] * 1e9).round() as i64,
                (lens[1] / lens[2] * 1e9).round() as i64,
            );
            classes.entry(self.ancestor[t]).or_default().insert(sig);
        }
        classes.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Newest-vertex bisection of the marked triangles with recursive
    /// conformity closure. Every marked triangle is bisected at least once;
    /// the result is conforming.
    pub fn refine(&self, marked: &MarkSet) -> Result<Mesh> {
        if let Some(&bad) = marked
            .indices()
            .iter()
            .find(|&&i| i >= self.num_triangles())
        {
            return Err(Error::InvalidMark {
                index: bad,
                ntri: self.num_triangles(),
            });
        }
        if marked.is_empty() {
            let mut copy = self.clone();
            copy.id = MESH_ID.fetch_add(1, Ordering::Relaxed);
            copy.parent = Some((self.id, (0..self.num_triangles()).collect()));
            return Ok(copy);
        }

        let mut state = RefineState::new(self);
        for &t in marked.indices() {
            state.ensure_bisected(t)?;
        }
        state.finish(self)
    }

    /// Elements of `self` (the coarse mesh) that were refined to obtain
    /// `fine`: ℛ = 𝒯_H \ 𝒯_h.
    pub fn refined_set(&self, fine: &Mesh) -> Result<Vec<usize>> {
        self.check_descendant(fine)?;
        let fine_triples: std::collections::HashSet<[usize; 3]> = fine
            .triangles
            .iter()
            .map(|t| {
                let mut s = *t;
                s.sort_unstable();
                s
            })
            .collect();
        Ok((0..self.num_triangles())
            .filter(|&t| {
                let mut s = self.triangles[t];
                s.sort_unstable();
                !fine_triples.contains(&s)
            })
            .collect())
    }

    /// The neighbourhood ℛ̃ of the refined set: every coarse element sharing
    /// at least a vertex with a refined element, refined elements included.
    pub fn refined_neighborhood(&self, fine: &Mesh) -> Result<Vec<usize>> {
        let refined = self.refined_set(fine)?;
        let mut vertex_touched = vec![false; self.num_vertices()];
        for &t in &refined {
            for &v in &self.triangles[t] {
                vertex_touched[v] = true;
            }
        }
        Ok((0..self.num_triangles())
            .filter(|&t| self.triangles[t].iter().any(|&v| vertex_touched[v]))
            .collect())
    }

    fn check_descendant(&self, fine: &Mesh) -> Result<()> {
        if fine.num_vertices() < self.num_vertices() {
            return Err(Error::UnrelatedMeshes(
                "fine mesh has fewer vertices than coarse".into(),
            ));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if fine.vertices[i] != *v {
                return Err(Error::UnrelatedMeshes(format!(
                    "vertex {i} differs between meshes"
                )));
            }
        }
        Ok(())
    }

    /// For each triangle of `fine`, the index of the triangle of `self`
    /// containing it. `fine` must be obtained from `self` by zero or more
    /// `refine` calls.
    pub fn coarse_ancestry(&self, fine: &Mesh) -> Result<Vec<usize>> {
        if let Some((pid, map)) = fine.parent_map() {
            if pid == self.id {
                return Ok(map.to_vec());
            }
        }
        self.check_descendant(fine)?;

        // Spatial bins over coarse triangles for point location.
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let nbin = (self.num_triangles() as f64).sqrt().ceil() as usize + 1;
        let span = [
            (hi[0] - lo[0]).max(f64::MIN_POSITIVE),
            (hi[1] - lo[1]).max(f64::MIN_POSITIVE),
        ];
        let bin_of = |p: [f64; 2]| -> (usize, usize) {
            let i = (((p[0] - lo[0]) / span[0]) * nbin as f64).floor() as isize;
            let j = (((p[1] - lo[1]) / span[1]) * nbin as f64).floor() as isize;
            (
                i.clamp(0, nbin as isize - 1) as usize,
                j.clamp(0, nbin as isize - 1) as usize,
            )
        };
        let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nbin * nbin];
        for t in 0..self.num_triangles() {
            let vs = self.tri_vertices(t);
            let (mut bl, mut bh) = (
                [f64::INFINITY, f64::INFINITY],
                [f64::NEG_INFINITY, f64::NEG_INFINITY],
            );
            for v in vs {
                for d in 0..2 {
                    bl[d] = bl[d].min(v[d]);
                    bh[d] = bh[d].max(v[d]);
                }
            }
            let (i0, j0) = bin_of(bl);
            let (i1, j1) = bin_of(bh);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    bins[j * nbin + i].push(t);
                }
            }
        }

        let mut out = Vec::with_capacity(fine.num_triangles());
        for ft in 0..fine.num_triangles() {
            let vs = fine.tri_vertices(ft);
            let centroid = [
                (vs[0][0] + vs[1][0] + vs[2][0]) / 3.0,
                (vs[0][1] + vs[1][1] + vs[2][1]) / 3.0,
            ];
            let (i, j) = bin_of(centroid);
            let mut found = None;
            for &ct in &bins[j * nbin + i] {
                let r = self.to_reference(ct, centroid);
                let tol = 1e-12;
                if r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= 1.0 + tol {
                    found = Some(ct);
                    break;
                }
            }
            match found {
                Some(ct) => out.push(ct),
                None => {
                    return Err(Error::UnrelatedMeshes(format!(
                        "fine triangle {ft} lies in no coarse triangle"
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let boundary: Vec<[usize; 2]> = self
            .edges
            .iter()
            .filter(|e| e.boundary)
            .map(|e| e.vertices)
            .collect();
        serde_json::to_string_pretty(&MeshJson {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary: Some(boundary),
        })
        .expect("mesh serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Mesh> {
        let raw: MeshJson = serde_json::from_str(s)?;
        let mesh = Mesh::from_parts(raw.vertices, raw.triangles)?;
        if let Some(declared) = raw.boundary {
            let mut want: Vec<(usize, usize)> = declared
                .iter()
                .map(|&[a, b]| edge_key(a, b))
                .collect();
            want.sort_unstable();
            want.dedup();
            let mut have: Vec<(usize, usize)> = mesh
                .edges
                .iter()
                .filter(|e| e.boundary)
                .map(|e| (e.vertices[0], e.vertices[1]))
                .collect();
            have.sort_unstable();
            if want != have {
                return Err(Error::InvalidMesh(
                    "declared boundary does not match the mesh topology".into(),
                ));
            }
        }
        Ok(mesh)
    }
}

/// Rotate each triangle tuple (cyclically, preserving orientation) so the
/// longest edge — ties broken by lowest opposite-vertex index — becomes the
/// reference edge. Used by mesh generators and available for imported data.
pub fn tag_longest_edges(vertices: &[[f64; 2]], triangles: &mut [[usize; 3]]) {
    for t in triangles.iter_mut() {
        let mut best = 0usize;
        let mut best_len = f64::NEG_INFINITY;
        for rot in 0..3 {
            let (a, b, c) = (t[rot], t[(rot + 1) % 3], t[(rot + 2) % 3]);
            let d = [
                vertices[b][0] - vertices[a][0],
                vertices[b][1] - vertices[a][1],
            ];
            let len = d[0].hypot(d[1]);
            let better = len > best_len + 1e-14 * len.max(best_len)
                || ((len - best_len).abs() <= 1e-14 * len.max(best_len)
                    && c < t[(best + 2) % 3]);
            if better {
                best = rot;
                best_len = len;
            }
        }
        *t = [t[best], t[(best + 1) % 3], t[(best + 2) % 3]];
    }
}

/// Working state of one `refine` call.
struct RefineState {
    verts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    gen: Vec<u32>,
    anc: Vec<usize>,
    /// Input-mesh triangle each working triangle descends from.
    origin: Vec<usize>,
    alive: Vec<bool>,
    alive_count: usize,
    edge_to_tris: HashMap<(usize, usize), Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
}

impl RefineState {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_triangles();
        let mut edge_to_tris: HashMap<(usize, usize), Vec<usize>> =
            HashMap::with_capacity(mesh.num_edges());
        for (i, t) in mesh.triangles.iter().enumerate() {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edge_to_tris.entry(edge_key(a, b)).or_default().push(i);
            }
        }
        RefineState {
            verts: mesh.vertices.clone(),
            tris: mesh.triangles.clone(),
            gen: mesh.generation.clone(),
            anc: mesh.ancestor.clone(),
            origin: (0..n).collect(),
            alive: vec![true; n],
            alive_count: n,
            edge_to_tris,
            midpoints: HashMap::new(),
        }
    }

    fn ref_edge(&self, t: usize) -> (usize, usize) {
        edge_key(self.tris[t][0], self.tris[t][1])
    }

    fn neighbor_across(&self, e: (usize, usize), t: usize) -> Option<usize> {
        self.edge_to_tris
            .get(&e)?
            .iter()
            .copied()
            .find(|&o| o != t && self.alive[o])
    }

    /// Bisect triangle `t` (and the compatible partner across its reference
    /// edge) after recursively making the neighbourhood compatible. The
    /// descent chain is capped at the number of live triangles; a longer
    /// chain must revisit a triangle, which is exactly the nonterminating
    /// reference-edge cycle.
    fn ensure_bisected(&mut self, start: usize) -> Result<()> {
        if !self.alive[start] {
            return Ok(());
        }
        let cap = self.alive_count;
        let mut chain = vec![start];
        loop {
            let t = *chain.last().unwrap();
            let e = self.ref_edge(t);
            match self.neighbor_across(e, t) {
                Some(n) if self.ref_edge(n) != e => {
                    if chain.len() >= cap {
                        return Err(Error::ClosureCycle { cap });
                    }
                    chain.push(n);
                }
                _ => break,
            }
        }
        while let Some(t) = chain.pop() {
            if !self.alive[t] {
                continue;
            }
            let e = self.ref_edge(t);
            let partner = self.neighbor_across(e, t);
            let m = self.midpoint(e);
            self.bisect(t, m);
            if let Some(p) = partner {
                debug_assert_eq!(self.ref_edge(p), e, "closure left an incompatible partner");
                self.bisect(p, m);
            }
        }
        Ok(())
    }

    fn midpoint(&mut self, e: (usize, usize)) -> usize {
        if let Some(&m) = self.midpoints.get(&e) {
            return m;
        }
        let a = self.verts[e.0];
        let b = self.verts[e.1];
        let m = self.verts.len();
        self.verts.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
        self.midpoints.insert(e, m);
        m
    }

    fn bisect(&mut self, t: usize, m: usize) {
        let [a, b, c] = self.tris[t];
        self.alive[t] = false;
        self.alive_count -= 1;
        for key in [edge_key(a, b), edge_key(b, c), edge_key(c, a)] {
            if let Some(list) = self.edge_to_tris.get_mut(&key) {
                list.retain(|&x| x != t);
            }
        }
        let gen = self.gen[t] + 1;
        let anc = self.anc[t];
        let org = self.origin[t];
        for child in [[c, a, m], [b, c, m]] {
            let id = self.tris.len();
            self.tris.push(child);
            self.gen.push(gen);
            self.anc.push(anc);
            self.origin.push(org);
            self.alive.push(true);
            self.alive_count += 1;
            for (x, y) in [(child[0], child[1]), (child[1], child[2]), (child[2], child[0])] {
                self.edge_to_tris.entry(edge_key(x, y)).or_default().push(id);
            }
        }
    }

    fn finish(self, source: &Mesh) -> Result<Mesh> {
        let mut triangles = Vec::with_capacity(self.alive_count);
        let mut generation = Vec::with_capacity(self.alive_count);
        let mut ancestor = Vec::with_capacity(self.alive_count);
        let mut parent_map = Vec::with_capacity(self.alive_count);
        for i in 0..self.tris.len() {
            if self.alive[i] {
                triangles.push(self.tris[i]);
                generation.push(self.gen[i]);
                ancestor.push(self.anc[i]);
                parent_map.push(self.origin[i]);
            }
        }
        Mesh::assemble(
            self.verts,
            triangles,
            generation,
            ancestor,
            Some((source.id, parent_map)),
            false,
        )
    }
}
