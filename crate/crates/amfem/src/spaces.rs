//! Global degree-of-freedom management for Σ_h and U_h.
//!
//! Stress dofs are numbered edge-first: edges sorted by canonical vertex
//! pair carry `edge_moments` consecutive dofs each, then per-triangle
//! interior dofs follow. Edge dofs are mean-value moments of `τ·ν_E`
//! against shifted Legendre polynomials in the global edge parameter
//! (low → high vertex index); orientation signs and edge-length scales make
//! the mapped reference bases globally H(div)-conforming. The Stokes layout
//! is two independent copies of the scalar layout plus one trace-constraint
//! multiplier.

use crate::elements::{
    legendre, piola_value, ref_edge, DisplacementElement, ElementFamily, StressElement,
};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::poly::Poly2;
use crate::problem::{ProblemKind, SourceTerm};
use crate::quadrature::{edge_rule, triangle_rule, QuadratureRule};
use crate::sparse::Coo;

/// One local stress dof of a triangle in the scalar layout.
#[derive(Debug, Clone, Copy)]
pub struct ScalarDof {
    pub global: usize,
    /// sign · (|e|/|ê|) for edge dofs, 1 for interior dofs: the local
    /// reference-basis coefficient of a global field is `weight · g[global]`.
    pub weight: f64,
}

/// Discrete solution pair (σ_h, u_h) plus the Stokes trace multiplier.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Option<f64>,
    pub mesh_id: u64,
}

impl FieldPair {
    pub fn zeros(dofmap: &DofMap) -> FieldPair {
        FieldPair {
            sigma: vec![0.0; dofmap.n_sigma],
            u: vec![0.0; dofmap.n_u],
            lambda: if dofmap.kind == ProblemKind::Stokes {
                Some(0.0)
            } else {
                None
            },
            mesh_id: dofmap.mesh_id,
        }
    }
}

/// Global dof layout for one (mesh, family, problem-kind) triple.
pub struct DofMap {
    pub family: ElementFamily,
    pub kind: ProblemKind,
    pub mesh_id: u64,
    /// Stress dofs of one scalar (per-row) copy.
    pub n_scalar_sigma: usize,
    /// Total stress dofs (d copies for Stokes).
    pub n_sigma: usize,
    pub n_scalar_u: usize,
    pub n_u: usize,
    pub components: usize,
    /// Per triangle × local stress dof, flattened with stride `stress_local_dofs`.
    locals: Vec<ScalarDof>,
    pub stress_local_dofs: usize,
    pub stress_element: StressElement,
    pub displacement_element: DisplacementElement,
}

impl DofMap {
    pub fn build(mesh: &Mesh, family: ElementFamily, kind: ProblemKind) -> Result<DofMap> {
        let stress_element = StressElement::new(family)?;
        let displacement_element = DisplacementElement::new(family.order)?;
        let nm = family.edge_moments();
        let nint = family.interior_dofs();
        let nloc = stress_element.ndof;
        let ntri = mesh.num_triangles();
        let n_scalar_sigma = mesh.num_edges() * nm + ntri * nint;
        let n_scalar_u = ntri * displacement_element.ndof;
        let components = kind.components();

        let mut locals = Vec::with_capacity(ntri * nloc);
        for t in 0..ntri {
            let tri = mesh.triangles()[t];
            let vs = mesh.tri_vertices(t);
            let centroid = [
                (vs[0][0] + vs[1][0] + vs[2][0]) / 3.0,
                (vs[0][1] + vs[1][1] + vs[2][1]) / 3.0,
            ];
            for local in 0..3 {
                let e = mesh.tri_edge(t, local);
                let edge = &mesh.edges()[e];
                let (pa, _pb) = match local {
                    0 => (tri[1], tri[2]),
                    1 => (tri[2], tri[0]),
                    _ => (tri[0], tri[1]),
                };
                let reversed = pa != edge.vertices[0];
                let nu = edge.normal(mesh);
                let a = mesh.vertices()[edge.vertices[0]];
                let b = mesh.vertices()[edge.vertices[1]];
                let emid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                let outward = [emid[0] - centroid[0], emid[1] - centroid[1]];
                let sign_n = if nu[0] * outward[0] + nu[1] * outward[1] > 0.0 {
                    1.0
                } else {
                    -1.0
                };
                let scale = edge.length / ref_edge(local).length;
                for m in 0..nm {
                    let parity = if reversed && m % 2 == 1 { -1.0 } else { 1.0 };
                    locals.push(ScalarDof {
                        global: e * nm + m,
                        weight: sign_n * parity * scale,
                    });
                }
            }
            for j in 0..nint {
                locals.push(ScalarDof {
                    global: mesh.num_edges() * nm + t * nint + j,
                    weight: 1.0,
                });
            }
        }

        Ok(DofMap {
            family,
            kind,
            mesh_id: mesh.id(),
            n_scalar_sigma,
            n_sigma: components * n_scalar_sigma,
            n_scalar_u,
            n_u: components * n_scalar_u,
            components,
            locals,
            stress_local_dofs: nloc,
            stress_element,
            displacement_element,
        })
    }

    /// Total unknowns of the saddle system (incl. the Stokes multiplier).
    pub fn n_system(&self) -> usize {
        self.n_sigma + self.n_u + if self.kind == ProblemKind::Stokes { 1 } else { 0 }
    }

    pub fn stress_locals(&self, tri: usize) -> &[ScalarDof] {
        &self.locals[tri * self.stress_local_dofs..(tri + 1) * self.stress_local_dofs]
    }

    /// Global stress index of a scalar-layout dof in component `c`.
    pub fn sigma_index(&self, c: usize, scalar: usize) -> usize {
        c * self.n_scalar_sigma + scalar
    }

    /// Global displacement index of local dof `j` on `tri` in component `c`.
    pub fn u_index(&self, c: usize, tri: usize, j: usize) -> usize {
        c * self.n_scalar_u + tri * self.displacement_element.ndof + j
    }

    /// Reference-basis coefficients of the stress on `tri`, one row per
    /// component: `coef[c][i] = weight_i · σ[sigma_index(c, locals[i].global)]`.
    pub fn local_stress_coeffs(&self, tri: usize, sigma: &[f64]) -> Vec<Vec<f64>> {
        let locals = self.stress_locals(tri);
        (0..self.components)
            .map(|c| {
                locals
                    .iter()
                    .map(|d| d.weight * sigma[self.sigma_index(c, d.global)])
                    .collect()
            })
            .collect()
    }
}

/// Elementwise L² projection Q_h f onto the displacement space.
pub fn project_source(mesh: &Mesh, f: &SourceTerm, dofmap: &DofMap) -> Vec<f64> {
    let disp = &dofmap.displacement_element;
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let mass_inv = reference_mass_inverse(disp, &rule);
    let mut out = vec![0.0; dofmap.n_u];
    for t in 0..mesh.num_triangles() {
        let mut rhs = vec![vec![0.0; disp.ndof]; dofmap.components];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let xy = mesh.from_reference(t, *p);
            let fv = f.eval(xy[0], xy[1]);
            for (c, rhs_c) in rhs.iter_mut().enumerate() {
                for (j, phi) in disp.basis.iter().enumerate() {
                    rhs_c[j] += w * fv[c] * phi.eval(p[0], p[1]);
                }
            }
        }
        // physical mass = detB · reference mass; detB cancels against the
        // physical right-hand side integral, so reference solves suffice
        for (c, rhs_c) in rhs.iter().enumerate() {
            for j in 0..disp.ndof {
                let mut q = 0.0;
                for (l, r) in rhs_c.iter().enumerate() {
                    q += mass_inv[j][l] * r;
                }
                out[dofmap.u_index(c, t, j)] = q;
            }
        }
    }
    out
}

fn reference_mass_inverse(disp: &DisplacementElement, rule: &QuadratureRule) -> Vec<Vec<f64>> {
    let n = disp.ndof;
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rule.integrate(|x, y| disp.basis[i].eval(x, y) * disp.basis[j].eval(x, y));
        }
    }
    let inv = m.try_inverse().expect("reference mass is SPD");
    (0..n)
        .map(|i| (0..n).map(|j| inv[(i, j)]).collect())
        .collect()
}

/// Evaluate a displacement-space field at a reference point of a triangle.
pub fn eval_displacement(
    dofmap: &DofMap,
    u: &[f64],
    tri: usize,
    c: usize,
    xh: [f64; 2],
) -> f64 {
    let disp = &dofmap.displacement_element;
    (0..disp.ndof)
        .map(|j| u[dofmap.u_index(c, tri, j)] * disp.basis[j].eval(xh[0], xh[1]))
        .sum()
}

/// L² norm of a displacement-space field.
pub fn displacement_l2_norm(mesh: &Mesh, dofmap: &DofMap, u: &[f64]) -> f64 {
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let (_, _, det) = mesh.jacobian(t);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            for c in 0..dofmap.components {
                let v = eval_displacement(dofmap, u, t, c, *p);
                acc += w * det * v * v;
            }
        }
    }
    acc.sqrt()
}

/// Mesh-dependent discrete H¹ norm over a subset `G` of elements:
/// broken gradients plus h_E⁻¹-weighted squared jumps, boundary edges
/// contributing the trace. `None` means the whole mesh.
pub fn discrete_h1_norm(mesh: &Mesh, dofmap: &DofMap, u: &[f64], subset: Option<&[usize]>) -> f64 {
    discrete_h1_norm_sq(mesh, dofmap, u, subset).sqrt()
}

pub(crate) fn discrete_h1_norm_sq(
    mesh: &Mesh,
    dofmap: &DofMap,
    u: &[f64],
    subset: Option<&[usize]>,
) -> f64 {
    let tris: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..mesh.num_triangles()).collect(),
    };
    let mut total = 0.0;

    // broken gradient part
    for &t in &tris {
        let (bmat, _, det) = mesh.jacobian(t);
        let area = det / 2.0;
        for c in 0..dofmap.components {
            let grad = displacement_gradient(dofmap, u, t, c, &bmat, det);
            total += area * (grad[0] * grad[0] + grad[1] * grad[1]);
        }
    }

    // jump part: each edge of the subset counted once
    let mut edge_seen = vec![false; mesh.num_edges()];
    for &t in &tris {
        for local in 0..3 {
            edge_seen[mesh.tri_edge(t, local)] = true;
        }
    }
    let (pts, ws) = edge_rule(3);
    for (e, edge) in mesh.edges().iter().enumerate() {
        if !edge_seen[e] {
            continue;
        }
        // an edge belongs to G when one of its triangles does; interior
        // jumps always use both sides
        let a = mesh.vertices()[edge.vertices[0]];
        let b = mesh.vertices()[edge.vertices[1]];
        let mut jump_int = 0.0;
        for (s, w) in pts.iter().zip(&ws) {
            let xy = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            for c in 0..dofmap.components {
                let plus = edge.tris[0]
                    .map(|t| eval_displacement(dofmap, u, t, c, mesh.to_reference(t, xy)))
                    .unwrap_or(0.0);
                let minus = edge.tris[1]
                    .map(|t| eval_displacement(dofmap, u, t, c, mesh.to_reference(t, xy)))
                    .unwrap_or(0.0);
                let j = plus - minus;
                jump_int += w * j * j;
            }
        }
        // h_E⁻¹ ∫_E [v]² ds = (1/|e|)·|e|·Σ w [v]²: the lengths cancel
        total += jump_int;
    }
    total
}

/// Physical gradient of one displacement component on a triangle.
fn displacement_gradient(
    dofmap: &DofMap,
    u: &[f64],
    tri: usize,
    c: usize,
    bmat: &[[f64; 2]; 2],
    det: f64,
) -> [f64; 2] {
    let disp = &dofmap.displacement_element;
    let mut gref = [0.0; 2];
    for j in 0..disp.ndof {
        let coef = u[dofmap.u_index(c, tri, j)];
        gref[0] += coef * disp.basis[j].dx().c[0];
        gref[1] += coef * disp.basis[j].dy().c[0];
    }
    // ∇_x = B⁻ᵀ ∇̂ ; B⁻¹ = (1/det)[[b11, −b01], [−b10, b00]]
    [
        (bmat[1][1] * gref[0] - bmat[1][0] * gref[1]) / det,
        (-bmat[0][1] * gref[0] + bmat[0][0] * gref[1]) / det,
    ]
}

/// Sparse divergence operator `B` with `(Bσ)_j = (div σ_h, w_j)`.
///
/// The entries are geometry-independent reference integrals: with the
/// displacement basis pulled back through the affine map, the Jacobians
/// cancel, which is exactly the inclusion div Σ_h ⊂ U_h at work.
pub fn divergence_matrix(mesh: &Mesh, dofmap: &DofMap) -> Coo {
    let stress = &dofmap.stress_element;
    let disp = &dofmap.displacement_element;
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    // reference moments r[j][i] = ∫ div̂ φ̂_i · ŵ_j
    let mut r = vec![vec![0.0; stress.ndof]; disp.ndof];
    for (i, dphi) in stress.div_basis.iter().enumerate() {
        for (j, w) in disp.basis.iter().enumerate() {
            r[j][i] = rule.integrate(|x, y| dphi.eval(x, y) * w.eval(x, y));
        }
    }
    let mut b = Coo::new(dofmap.n_u, dofmap.n_sigma);
    for t in 0..mesh.num_triangles() {
        for (i, d) in dofmap.stress_locals(t).iter().enumerate() {
            for j in 0..disp.ndof {
                let v = d.weight * r[j][i];
                if v != 0.0 {
                    for c in 0..dofmap.components {
                        b.push(
                            dofmap.u_index(c, t, j),
                            dofmap.sigma_index(c, d.global),
                            v,
                        );
                    }
                }
            }
        }
    }
    b
}

/// Coefficients of `div σ_h` in the displacement basis (exact thanks to the
/// inclusion div Σ_h ⊂ U_h).
pub fn divergence_coefficients(mesh: &Mesh, dofmap: &DofMap, sigma: &[f64]) -> Vec<f64> {
    let disp = &dofmap.displacement_element;
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let mass_inv = reference_mass_inverse(disp, &rule);
    let mut out = vec![0.0; dofmap.n_u];
    for t in 0..mesh.num_triangles() {
        let (_, _, det) = mesh.jacobian(t);
        let coeffs = dofmap.local_stress_coeffs(t, sigma);
        for (c, row) in coeffs.iter().enumerate() {
            // d̂(x̂) = (1/det) Σ_i ĉ_i div̂ φ̂_i — the physical divergence in
            // reference coordinates
            let mut dpoly = Poly2::ZERO;
            for (i, ci) in row.iter().enumerate() {
                dpoly.axpy(ci / det, &dofmap.stress_element.div_basis[i]);
            }
            for j in 0..disp.ndof {
                let mut q = 0.0;
                for (l, wl) in disp.basis.iter().enumerate() {
                    let moment = rule.integrate(|x, y| dpoly.eval(x, y) * wl.eval(x, y));
                    q += mass_inv[j][l] * moment;
                }
                out[dofmap.u_index(c, t, j)] = q;
            }
        }
    }
    out
}

/// Interpolate a stress field given by rowwise point values onto the global
/// stress space: edge dofs by mean-value edge moments of the global normal
/// trace, interior dofs by pullback reference moments.
pub fn interpolate_stress(
    mesh: &Mesh,
    dofmap: &DofMap,
    field: &dyn Fn(f64, f64) -> [[f64; 2]; 2],
) -> Vec<f64> {
    let nm = dofmap.family.edge_moments();
    let nint = dofmap.family.interior_dofs();
    let mut sigma = vec![0.0; dofmap.n_sigma];
    let (pts, ws) = edge_rule(4);
    for (e, edge) in mesh.edges().iter().enumerate() {
        let a = mesh.vertices()[edge.vertices[0]];
        let b = mesh.vertices()[edge.vertices[1]];
        let nu = edge.normal(mesh);
        for m in 0..nm {
            let mut acc = [0.0; 2];
            for (s, w) in pts.iter().zip(&ws) {
                let xy = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let rows = field(xy[0], xy[1]);
                for (c, acc_c) in acc.iter_mut().enumerate() {
                    *acc_c += w * (rows[c][0] * nu[0] + rows[c][1] * nu[1]) * legendre(m, *s);
                }
            }
            for c in 0..dofmap.components {
                sigma[dofmap.sigma_index(c, e * nm + m)] = acc[c];
            }
        }
    }
    if nint > 0 {
        for t in 0..mesh.num_triangles() {
            let (bmat, _, det) = mesh.jacobian(t);
            let dofs = pullback_reference_dofs(mesh, dofmap, t, &bmat, det, &mut |xy| field(xy[0], xy[1]));
            let locals = dofmap.stress_locals(t);
            for (i, d) in locals.iter().enumerate().skip(3 * nm) {
                for c in 0..dofmap.components {
                    sigma[dofmap.sigma_index(c, d.global)] = dofs[c][i] / d.weight;
                }
            }
        }
    }
    sigma
}

/// Reference dofs of the pullback of a physical rowwise field on `tri`.
fn pullback_reference_dofs(
    mesh: &Mesh,
    dofmap: &DofMap,
    tri: usize,
    bmat: &[[f64; 2]; 2],
    det: f64,
    field: &mut dyn FnMut([f64; 2]) -> [[f64; 2]; 2],
) -> Vec<Vec<f64>> {
    let fam = dofmap.family;
    let nm = fam.edge_moments();
    let nloc = dofmap.stress_local_dofs;
    let mut out = vec![vec![0.0; nloc]; dofmap.components];
    // τ̂(x̂) = det·B⁻¹·τ(F(x̂)) rowwise
    let binv = [
        [bmat[1][1] / det, -bmat[0][1] / det],
        [-bmat[1][0] / det, bmat[0][0] / det],
    ];
    let mut pullback = |xh: [f64; 2]| -> [[f64; 2]; 2] {
        let xy = mesh.from_reference(tri, xh);
        let rows = field(xy);
        let mut out = [[0.0; 2]; 2];
        for c in 0..2 {
            out[c] = [
                det * (binv[0][0] * rows[c][0] + binv[0][1] * rows[c][1]),
                det * (binv[1][0] * rows[c][0] + binv[1][1] * rows[c][1]),
            ];
        }
        out
    };
    let (pts, ws) = edge_rule(4);
    for local in 0..3 {
        let re = ref_edge(local);
        for m in 0..nm {
            let mut acc = [0.0; 2];
            for (s, w) in pts.iter().zip(&ws) {
                let xh = [
                    re.start[0] + s * (re.end[0] - re.start[0]),
                    re.start[1] + s * (re.end[1] - re.start[1]),
                ];
                let rows = pullback(xh);
                for (c, acc_c) in acc.iter_mut().enumerate() {
                    *acc_c += w * (rows[c][0] * re.normal[0] + rows[c][1] * re.normal[1])
                        * legendre(m, *s);
                }
            }
            for c in 0..dofmap.components {
                out[c][local * nm + m] = acc[c];
            }
        }
    }
    if fam.interior_dofs() > 0 {
        let rule = triangle_rule(6).expect("degree 6 rule");
        let weights = interior_weight_values(fam, &rule);
        for (j, wvals) in weights.iter().enumerate() {
            let mut acc = [0.0; 2];
            for (p, wv) in rule.points.iter().zip(wvals) {
                let rows = pullback(*p);
                for (c, acc_c) in acc.iter_mut().enumerate() {
                    *acc_c += rows[c][0] * wv[0] + rows[c][1] * wv[1];
                }
            }
            for c in 0..dofmap.components {
                out[c][3 * nm + j] = acc[c];
            }
        }
    }
    out
}

/// Interior weight functions pre-multiplied by quadrature weights.
fn interior_weight_values(fam: ElementFamily, rule: &QuadratureRule) -> Vec<Vec<[f64; 2]>> {
    use crate::elements::FamilyKind;
    let weights: Vec<Box<dyn Fn(f64, f64) -> [f64; 2]>> = match (fam.kind, fam.order) {
        (_, 0) => vec![],
        (FamilyKind::RaviartThomas, _) => vec![
            Box::new(|_, _| [1.0, 0.0]),
            Box::new(|_, _| [0.0, 1.0]),
        ],
        (FamilyKind::BrezziDouglasMarini, _) => vec![
            Box::new(|_, _| [1.0, 0.0]),
            Box::new(|_, _| [0.0, 1.0]),
            Box::new(|x, y| [x - x * x - 2.0 * x * y, -(y - 2.0 * x * y - y * y)]),
        ],
    };
    weights
        .iter()
        .map(|f| {
            rule.points
                .iter()
                .zip(&rule.weights)
                .map(|(p, w)| {
                    let v = f(p[0], p[1]);
                    [w * v[0], w * v[1]]
                })
                .collect()
        })
        .collect()
}

/// Moment vector ((v, w_j))_j of a displacement-space function given by its
/// coefficients; the load vector of the intermediate problem with datum f_H.
pub fn displacement_moments(mesh: &Mesh, dofmap: &DofMap, coeffs: &[f64]) -> Vec<f64> {
    let disp = &dofmap.displacement_element;
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let mut out = vec![0.0; dofmap.n_u];
    for t in 0..mesh.num_triangles() {
        let (_, _, det) = mesh.jacobian(t);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            for c in 0..dofmap.components {
                let v = eval_displacement(dofmap, coeffs, t, c, *p);
                for (j, phi) in disp.basis.iter().enumerate() {
                    out[dofmap.u_index(c, t, j)] += w * det * v * phi.eval(p[0], p[1]);
                }
            }
        }
    }
    out
}

/// Represent a coarse-mesh displacement function on a refined mesh
/// (U_H ⊂ U_h, exact for nested P_k spaces).
pub fn prolong_displacement(
    coarse: &Mesh,
    coarse_dofmap: &DofMap,
    fine: &Mesh,
    fine_dofmap: &DofMap,
    ancestry: &[usize],
    coeffs: &[f64],
) -> Result<Vec<f64>> {
    if ancestry.len() != fine.num_triangles() {
        return Err(Error::DimensionMismatch(
            "ancestry length != fine triangle count".into(),
        ));
    }
    let disp = &fine_dofmap.displacement_element;
    let rule = triangle_rule(fine_dofmap.family.quad_degree()).expect("valid degree");
    let mass_inv = reference_mass_inverse(disp, &rule);
    let mut out = vec![0.0; fine_dofmap.n_u];
    for ft in 0..fine.num_triangles() {
        let ct = ancestry[ft];
        for c in 0..fine_dofmap.components {
            let mut rhs = vec![0.0; disp.ndof];
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let xy = fine.from_reference(ft, *p);
                let xh = coarse.to_reference(ct, xy);
                let v = eval_displacement(coarse_dofmap, coeffs, ct, c, xh);
                for (j, phi) in disp.basis.iter().enumerate() {
                    rhs[j] += w * v * phi.eval(p[0], p[1]);
                }
            }
            for j in 0..disp.ndof {
                let mut q = 0.0;
                for (l, r) in rhs.iter().enumerate() {
                    q += mass_inv[j][l] * r;
                }
                out[fine_dofmap.u_index(c, ft, j)] = q;
            }
        }
    }
    Ok(out)
}

/// Represent a coarse-mesh stress field on a refined mesh (Σ_H ⊂ Σ_h).
pub fn prolong_stress(
    coarse: &Mesh,
    coarse_dofmap: &DofMap,
    fine: &Mesh,
    fine_dofmap: &DofMap,
    ancestry: &[usize],
    sigma_coarse: &[f64],
) -> Result<Vec<f64>> {
    if ancestry.len() != fine.num_triangles() {
        return Err(Error::DimensionMismatch(
            "ancestry length != fine triangle count".into(),
        ));
    }
    if coarse_dofmap.family != fine_dofmap.family || coarse_dofmap.kind != fine_dofmap.kind {
        return Err(Error::DimensionMismatch(
            "prolongation requires identical family and problem kind".into(),
        ));
    }
    let mut sigma = vec![0.0; fine_dofmap.n_sigma];
    for ft in 0..fine.num_triangles() {
        let ct = ancestry[ft];
        let (cb, _, cdet) = coarse.jacobian(ct);
        let ccoeffs = coarse_dofmap.local_stress_coeffs(ct, sigma_coarse);
        let celem = &coarse_dofmap.stress_element;
        let mut eval_coarse = |xy: [f64; 2]| -> [[f64; 2]; 2] {
            let xh = coarse.to_reference(ct, xy);
            let mut rows = [[0.0; 2]; 2];
            for (c, row) in ccoeffs.iter().enumerate() {
                let mut vr = [0.0; 2];
                for (i, ci) in row.iter().enumerate() {
                    let v = celem.basis[i].eval(xh[0], xh[1]);
                    vr[0] += ci * v[0];
                    vr[1] += ci * v[1];
                }
                rows[c] = piola_value(&cb, cdet, vr);
            }
            rows
        };
        let (fb, _, fdet) = fine.jacobian(ft);
        let dofs = pullback_reference_dofs(fine, fine_dofmap, ft, &fb, fdet, &mut eval_coarse);
        let locals = fine_dofmap.stress_locals(ft);
        for (i, d) in locals.iter().enumerate() {
            for c in 0..fine_dofmap.components {
                sigma[fine_dofmap.sigma_index(c, d.global)] = dofs[c][i] / d.weight;
            }
        }
    }
    Ok(sigma)
}

/// Evaluate the stress field rowwise at a reference point of a triangle,
/// returning physical values.
pub fn eval_stress(
    mesh: &Mesh,
    dofmap: &DofMap,
    sigma: &[f64],
    tri: usize,
    xh: [f64; 2],
) -> [[f64; 2]; 2] {
    let (bmat, _, det) = mesh.jacobian(tri);
    let coeffs = dofmap.local_stress_coeffs(tri, sigma);
    let mut rows = [[0.0; 2]; 2];
    for (c, row) in coeffs.iter().enumerate() {
        let mut vr = [0.0; 2];
        for (i, ci) in row.iter().enumerate() {
            let v = dofmap.stress_element.basis[i].eval(xh[0], xh[1]);
            vr[0] += ci * v[0];
            vr[1] += ci * v[1];
        }
        rows[c] = piola_value(&bmat, det, vr);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MarkSet;
    use crate::problem::manufactured_poisson;

    fn rt0() -> ElementFamily {
        ElementFamily::rt(0).unwrap()
    }

    #[test]
    fn dof_counts_unit_square() {
        let mesh = Mesh::unit_square(1).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        assert_eq!(dm.n_sigma, 5);
        assert_eq!(dm.n_u, 2);

        let dms = DofMap::build(&mesh, rt0(), ProblemKind::Stokes).unwrap();
        assert_eq!(dms.n_sigma, 10);
        assert_eq!(dms.n_u, 4);
        assert_eq!(dms.n_system(), 15);

        let bdm = DofMap::build(
            &mesh,
            ElementFamily::bdm(0).unwrap(),
            ProblemKind::Poisson,
        )
        .unwrap();
        assert_eq!(bdm.n_sigma, 10);
        assert_eq!(bdm.n_u, 2);
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let mesh = Mesh::unit_square(1).unwrap();
        // constants at k = 0
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let f = SourceTerm::constant_scalar(3.5);
        let q = project_source(&mesh, &f, &dm);
        assert!((q[0] - 3.5).abs() < 1e-13 && (q[1] - 3.5).abs() < 1e-13);

        // f(x,y) = x at k = 0: per-triangle means {2/3, 1/3}
        let fx = SourceTerm::scalar("x", |x, _| x);
        let q = project_source(&mesh, &fx, &dm);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-13, "got {}", q[0]);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-13, "got {}", q[1]);

        // f(x,y) = x at k = 1 is reproduced exactly
        let dm1 = DofMap::build(&mesh, ElementFamily::rt(1).unwrap(), ProblemKind::Poisson)
            .unwrap();
        let q = project_source(&mesh, &fx, &dm1);
        let rule = triangle_rule(4).unwrap();
        for t in 0..2 {
            for (p, _) in rule.points.iter().zip(&rule.weights) {
                let xy = mesh.from_reference(t, *p);
                let v = eval_displacement(&dm1, &q, t, 0, *p);
                assert!((v - xy[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_residual_orthogonal() {
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let (f, _) = manufactured_poisson();
        let q = project_source(&mesh, &f, &dm);
        // residual f − f_h orthogonal to P_0 per element
        let rule = triangle_rule(dm.family.quad_degree()).unwrap();
        for t in 0..mesh.num_triangles() {
            let mut moment = 0.0;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let xy = mesh.from_reference(t, *p);
                moment += w * (f.eval(xy[0], xy[1])[0] - eval_displacement(&dm, &q, t, 0, *p));
            }
            assert!(moment.abs() < 1e-13);
        }
    }

    #[test]
    fn discrete_norm_hand_values() {
        let mesh = Mesh::unit_square(1).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();

        let zero = vec![0.0; dm.n_u];
        assert_eq!(discrete_h1_norm(&mesh, &dm, &zero, None), 0.0);

        // v ≡ 1: four boundary edges of length 1 contribute 1 each
        let ones = vec![1.0; dm.n_u];
        let norm = discrete_h1_norm(&mesh, &dm, &ones, None);
        assert!((norm - 2.0).abs() < 1e-13, "got {norm}");

        // v = 1 on the lower triangle, 0 on the upper: diagonal jump plus
        // two unit boundary edges → norm² = 3
        let mut v = vec![0.0; dm.n_u];
        v[dm.u_index(0, 0, 0)] = 1.0;
        let norm = discrete_h1_norm(&mesh, &dm, &v, None);
        assert!((norm * norm - 3.0).abs() < 1e-13, "got {}", norm * norm);
    }

    #[test]
    fn discrete_norm_positive_definite() {
        let mesh = Mesh::unit_square(2).unwrap();
        for fam in [rt0(), ElementFamily::rt(1).unwrap()] {
            let dm = DofMap::build(&mesh, fam, ProblemKind::Poisson).unwrap();
            // Gram positive definiteness probed with coordinate directions
            for j in 0..dm.n_u {
                let mut v = vec![0.0; dm.n_u];
                v[j] = 1.0;
                assert!(discrete_h1_norm(&mesh, &dm, &v, None) > 1e-8);
            }
        }
    }

    #[test]
    fn divergence_matrix_column_sums() {
        // RT0 on the two-triangle square: the column sum over displacement
        // dofs is the net flux, ±|e| for boundary edges and 0 inside
        let mesh = Mesh::unit_square(1).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let b = divergence_matrix(&mesh, &dm);
        let dense = b.to_dense();
        for (e, edge) in mesh.edges().iter().enumerate() {
            let sum: f64 = (0..dm.n_u).map(|j| dense[(j, e)]).sum();
            if edge.boundary {
                assert!(
                    (sum.abs() - edge.length).abs() < 1e-12,
                    "edge {e}: sum {sum}, length {}",
                    edge.length
                );
            } else {
                assert!(sum.abs() < 1e-12, "interior edge {e}: sum {sum}");
            }
        }
        // B applied to zero is zero
        assert!(b.matvec(&vec![0.0; dm.n_sigma]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_then_divergence_is_exact() {
        // div of any discrete stress stays in the displacement space:
        // interpolate a linear field, project its divergence, reconstruct
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|x, y| [[y + 0.5 * x, 2.0 * x], [0.0; 2]]);
        let divc = divergence_coefficients(&mesh, &dm, &sigma);
        // exact divergence 0.5 everywhere
        for t in 0..mesh.num_triangles() {
            let v = eval_displacement(&dm, &divc, t, 0, [0.3, 0.3]);
            assert!((v - 0.5).abs() < 1e-12, "tri {t}: div {v}");
        }
    }

    #[test]
    fn hdiv_conformity_of_global_basis() {
        // normal component of every global basis function agrees across
        // interior edges
        let mut mesh = Mesh::unit_square(2).unwrap();
        mesh = mesh.refine(&MarkSet::new([0, 3], &mesh).unwrap()).unwrap();
        for fam in [
            rt0(),
            ElementFamily::rt(1).unwrap(),
            ElementFamily::bdm(0).unwrap(),
            ElementFamily::bdm(1).unwrap(),
        ] {
            let dm = DofMap::build(&mesh, fam, ProblemKind::Poisson).unwrap();
            let (pts, _) = edge_rule(3);
            for g in 0..dm.n_sigma {
                let mut sigma = vec![0.0; dm.n_sigma];
                sigma[g] = 1.0;
                for edge in mesh.edges().iter().filter(|e| !e.boundary) {
                    let (tp, tm) = (edge.tris[0].unwrap(), edge.tris[1].unwrap());
                    let a = mesh.vertices()[edge.vertices[0]];
                    let b = mesh.vertices()[edge.vertices[1]];
                    let nu = edge.normal(&mesh);
                    for s in &pts {
                        let xy = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                        let vp = eval_stress(&mesh, &dm, &sigma, tp, mesh.to_reference(tp, xy));
                        let vm = eval_stress(&mesh, &dm, &sigma, tm, mesh.to_reference(tm, xy));
                        let np = vp[0][0] * nu[0] + vp[0][1] * nu[1];
                        let nm_ = vm[0][0] * nu[0] + vm[0][1] * nu[1];
                        assert!(
                            (np - nm_).abs() < 1e-12,
                            "{}: dof {g} jump {:.2e}",
                            fam.name(),
                            np - nm_
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn mapped_basis_mean_flux_is_one() {
        // mean normal flux of the scaled local basis on its own edge is 1
        // for an arbitrary affine image
        let mesh = Mesh::from_parts(
            vec![[0.0, 0.0], [2.0, 0.3], [-0.4, 1.7]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let (pts, ws) = edge_rule(4);
        for (e, edge) in mesh.edges().iter().enumerate() {
            let mut sigma = vec![0.0; dm.n_sigma];
            sigma[e] = 1.0;
            let a = mesh.vertices()[edge.vertices[0]];
            let b = mesh.vertices()[edge.vertices[1]];
            let nu = edge.normal(&mesh);
            let mut mean = 0.0;
            for (s, w) in pts.iter().zip(&ws) {
                let xy = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let v = eval_stress(&mesh, &dm, &sigma, 0, mesh.to_reference(0, xy));
                mean += w * (v[0][0] * nu[0] + v[0][1] * nu[1]);
            }
            assert!((mean - 1.0).abs() < 1e-12, "edge {e}: mean flux {mean}");
        }
    }

    #[test]
    fn prolongation_preserves_field() {
        // the prolonged fine field must agree pointwise with the coarse
        // discrete field (Σ_H ⊂ Σ_h)
        let coarse = Mesh::unit_square(2).unwrap();
        let fine = coarse.refine(&MarkSet::new([0, 1, 4], &coarse).unwrap()).unwrap();
        let anc = coarse.coarse_ancestry(&fine).unwrap();
        for fam in [rt0(), ElementFamily::bdm(1).unwrap()] {
            let dmc = DofMap::build(&coarse, fam, ProblemKind::Poisson).unwrap();
            let dmf = DofMap::build(&fine, fam, ProblemKind::Poisson).unwrap();
            let field = |x: f64, y: f64| [[1.0 + 2.0 * x - y, x + 0.5 * y], [0.0; 2]];
            let sc = interpolate_stress(&coarse, &dmc, &field);
            let sf = prolong_stress(&coarse, &dmc, &fine, &dmf, &anc, &sc).unwrap();
            for ft in 0..fine.num_triangles() {
                for &xh in &[[1.0 / 3.0, 1.0 / 3.0], [0.2, 0.7], [0.6, 0.1]] {
                    let xy = fine.from_reference(ft, xh);
                    let want = eval_stress(&coarse, &dmc, &sc, anc[ft], coarse.to_reference(anc[ft], xy));
                    let got = eval_stress(&fine, &dmf, &sf, ft, xh);
                    for c in 0..2 {
                        assert!(
                            (got[0][c] - want[0][c]).abs() < 1e-11,
                            "{}: tri {ft} comp {c}: {} vs {}",
                            fam.name(),
                            got[0][c],
                            want[0][c]
                        );
                    }
                }
            }
        }
    }
}
