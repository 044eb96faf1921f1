//! A posteriori error indicators and data oscillation.
//!
//! Per element, the indicator is
//!   η²(K) = h_K² ‖rot(𝒜σ_h)‖²_{L²(K)} + Σ_{E ⊂ ∂K} h_E ‖[𝒜σ_h·t_E]‖²_{L²(E)},
//! with rot applied rowwise for Stokes, boundary edges contributing the
//! trace, and interior edges contributing to both adjacent elements (the
//! per-element sum taken literally, so interior edges are counted twice in
//! global totals). Oscillation is osc²(K) = h_K² ‖f − Q_h f‖²_{L²(K)}.
//!
//! rot(𝒜σ_h) is evaluated from the exact polynomial representation (the
//! reference-basis coefficients are differentiated, never the field), so
//! the only quadrature is of polynomial integrands, which is exact.

use crate::elements::piola_value;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::poly::Poly2;
use crate::problem::{ProblemKind, ProblemSpec, SourceTerm};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::spaces::{eval_displacement, project_source, DofMap, FieldPair};
use crate::system::MaterialOperator;

/// Per-element indicator and oscillation values with subset-sum queries.
#[derive(Debug, Clone, Default)]
pub struct IndicatorSet {
    pub eta2: Vec<f64>,
    pub osc2: Vec<f64>,
}

impl IndicatorSet {
    pub fn len(&self) -> usize {
        self.eta2.len().max(self.osc2.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Combine an η-part and an osc-part into one set.
    pub fn merge(eta_part: IndicatorSet, osc_part: IndicatorSet) -> IndicatorSet {
        IndicatorSet {
            eta2: eta_part.eta2,
            osc2: osc_part.osc2,
        }
    }

    /// Exact sums over a subset (`None` = all elements).
    pub fn total(&self, subset: Option<&[usize]>) -> Result<(f64, f64)> {
        let pick = |v: &[f64], i: usize| -> Result<f64> {
            if v.is_empty() {
                Ok(0.0)
            } else {
                v.get(i).copied().ok_or(Error::InvalidMark {
                    index: i,
                    ntri: v.len(),
                })
            }
        };
        match subset {
            None => Ok((self.eta2.iter().sum(), self.osc2.iter().sum())),
            Some(ids) => {
                let mut e = 0.0;
                let mut o = 0.0;
                for &i in ids {
                    e += pick(&self.eta2, i)?;
                    o += pick(&self.osc2, i)?;
                }
                Ok((e, o))
            }
        }
    }

    /// Per-element combined total η²(K) + osc²(K).
    pub fn combined(&self, k: usize) -> f64 {
        self.eta2.get(k).copied().unwrap_or(0.0) + self.osc2.get(k).copied().unwrap_or(0.0)
    }
}

/// Edge error indicator η²(K) for a solved stress field.
pub fn indicators(
    mesh: &Mesh,
    dofmap: &DofMap,
    field: &FieldPair,
    problem: &ProblemSpec,
) -> Result<IndicatorSet> {
    if field.mesh_id != dofmap.mesh_id || dofmap.mesh_id != mesh.id() {
        return Err(Error::DimensionMismatch(
            "field, dofmap and mesh do not belong together".into(),
        ));
    }
    indicators_of_coefficients(mesh, dofmap, &field.sigma, problem.kind)
}

/// Indicator of a raw coefficient vector (also used to re-evaluate a coarse
/// field prolonged onto a finer mesh).
pub fn indicators_of_coefficients(
    mesh: &Mesh,
    dofmap: &DofMap,
    sigma: &[f64],
    kind: ProblemKind,
) -> Result<IndicatorSet> {
    if sigma.len() != dofmap.n_sigma {
        return Err(Error::DimensionMismatch(format!(
            "stress vector has {} entries, expected {}",
            sigma.len(),
            dofmap.n_sigma
        )));
    }
    let op = kind.operator();
    let stress = &dofmap.stress_element;
    let nloc = stress.ndof;
    let rule = triangle_rule(dofmap.family.quad_degree())?;

    // exact reference derivatives of the basis components
    let mut dref: Vec<[Poly2; 4]> = Vec::with_capacity(nloc);
    for phi in &stress.basis {
        dref.push([phi.x.dx(), phi.x.dy(), phi.y.dx(), phi.y.dy()]);
    }

    let mut eta2 = vec![0.0; mesh.num_triangles()];

    // volume term h_K² ‖rot(𝒜σ)‖²
    for t in 0..mesh.num_triangles() {
        let (bmat, _, det) = mesh.jacobian(t);
        let binv = [
            [bmat[1][1] / det, -bmat[0][1] / det],
            [-bmat[1][0] / det, bmat[0][0] / det],
        ];
        let coeffs = dofmap.local_stress_coeffs(t, sigma);
        let mut acc = 0.0;
        for (q, w) in rule.weights.iter().enumerate() {
            let p = rule.points[q];
            // jac[r][a][c] = ∂(σ row r)_a / ∂x_c
            let mut jac = [[[0.0f64; 2]; 2]; 2];
            for (r, row) in coeffs.iter().enumerate() {
                // reference jacobian of the row field
                let mut jr = [[0.0f64; 2]; 2];
                for (i, ci) in row.iter().enumerate() {
                    jr[0][0] += ci * dref[i][0].eval(p[0], p[1]);
                    jr[0][1] += ci * dref[i][1].eval(p[0], p[1]);
                    jr[1][0] += ci * dref[i][2].eval(p[0], p[1]);
                    jr[1][1] += ci * dref[i][3].eval(p[0], p[1]);
                }
                // physical: (1/det)·B·jr·B⁻¹
                for a in 0..2 {
                    for c in 0..2 {
                        let mut v = 0.0;
                        for b in 0..2 {
                            for e in 0..2 {
                                v += bmat[a][b] * jr[b][e] * binv[e][c];
                            }
                        }
                        jac[r][a][c] = v / det;
                    }
                }
            }
            let rot2 = match op {
                MaterialOperator::Identity => {
                    let rot = jac[0][0][1] - jac[0][1][0];
                    rot * rot
                }
                MaterialOperator::Deviatoric => {
                    // rot(𝒜σ)_r = rot(σ_r) − ½·rot((tr σ)e_r)
                    let dtr = [
                        jac[0][0][0] + jac[1][1][0],
                        jac[0][0][1] + jac[1][1][1],
                    ];
                    let r1 = (jac[0][0][1] - jac[0][1][0]) - 0.5 * dtr[1];
                    let r2 = (jac[1][0][1] - jac[1][1][0]) + 0.5 * dtr[0];
                    r1 * r1 + r2 * r2
                }
            };
            acc += w * det * rot2;
        }
        eta2[t] += mesh.area(t) * acc; // h_K² = |K|
    }

    // edge terms h_E ‖[𝒜σ·t]‖²; each edge once, added to all adjacent
    // elements
    let (pts, ws) = edge_rule(4);
    for edge in mesh.edges() {
        let a = mesh.vertices()[edge.vertices[0]];
        let b = mesh.vertices()[edge.vertices[1]];
        let tang = edge.tangent(mesh);
        let mut jump_int = 0.0;
        for (s, w) in pts.iter().zip(&ws) {
            let xy = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let tan_of = |tri: usize| -> [f64; 2] {
                let rows = eval_stress_local(mesh, dofmap, sigma, tri, xy);
                let arows = op.apply(rows);
                [
                    arows[0][0] * tang[0] + arows[0][1] * tang[1],
                    arows[1][0] * tang[0] + arows[1][1] * tang[1],
                ]
            };
            let plus = edge.tris[0].map(&tan_of).unwrap_or([0.0; 2]);
            let minus = edge.tris[1].map(&tan_of).unwrap_or([0.0; 2]);
            let j = [plus[0] - minus[0], plus[1] - minus[1]];
            let ncomp = if dofmap.components == 2 { 2 } else { 1 };
            for v in j.iter().take(ncomp) {
                jump_int += w * v * v;
            }
        }
        // h_E ∫_E [·]² ds = |e| · |e| · Σ w [·]²
        let contrib = edge.length * edge.length * jump_int;
        for t in edge.tris.iter().flatten() {
            eta2[*t] += contrib;
        }
    }

    Ok(IndicatorSet {
        eta2,
        osc2: Vec::new(),
    })
}

fn eval_stress_local(
    mesh: &Mesh,
    dofmap: &DofMap,
    sigma: &[f64],
    tri: usize,
    xy: [f64; 2],
) -> [[f64; 2]; 2] {
    let xh = mesh.to_reference(tri, xy);
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

/// Data oscillation osc²(K) = h_K² ‖f − Q_h f‖²_{L²(K)}.
pub fn oscillation(mesh: &Mesh, dofmap: &DofMap, f: &SourceTerm) -> Result<IndicatorSet> {
    let rule = triangle_rule(dofmap.family.quad_degree())?;
    let qf = project_source(mesh, f, dofmap);
    let mut osc2 = vec![0.0; mesh.num_triangles()];
    for t in 0..mesh.num_triangles() {
        let (_, _, det) = mesh.jacobian(t);
        let mut acc = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let xy = mesh.from_reference(t, *p);
            let fv = f.eval(xy[0], xy[1]);
            for c in 0..dofmap.components {
                let r = fv[c] - eval_displacement(dofmap, &qf, t, c, *p);
                acc += w * det * r * r;
            }
        }
        osc2[t] = mesh.area(t) * acc; // h_K² = |K|
    }
    Ok(IndicatorSet {
        eta2: Vec::new(),
        osc2,
    })
}

/// Oscillation of the refined region only: osc²(f, 𝒯_H \ 𝒯_h) on the
/// coarse mesh.
pub fn oscillation_on_subset(
    mesh: &Mesh,
    dofmap: &DofMap,
    f: &SourceTerm,
    subset: &[usize],
) -> Result<f64> {
    let osc = oscillation(mesh, dofmap, f)?;
    Ok(osc.total(Some(subset))?.1)
}

/// Dump per-element indicators as CSV lines `element_id,eta2,osc2`.
pub fn indicators_to_csv(ind: &IndicatorSet) -> String {
    let mut out = String::from("element_id,eta2,osc2\n");
    let n = ind.len();
    for k in 0..n {
        let e = ind.eta2.get(k).copied().unwrap_or(0.0);
        let o = ind.osc2.get(k).copied().unwrap_or(0.0);
        out.push_str(&format!("{k},{e},{o}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::ElementFamily;
    use crate::spaces::interpolate_stress;

    fn rt0() -> ElementFamily {
        ElementFamily::rt(0).unwrap()
    }

    #[test]
    fn zero_stress_zero_indicator() {
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let ind =
            indicators_of_coefficients(&mesh, &dm, &vec![0.0; dm.n_sigma], ProblemKind::Poisson)
                .unwrap();
        assert!(ind.eta2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_indicator() {
        // σ = (y, 0) in BDM k=0 on the two-triangle square:
        // rot σ = 1 on both triangles (h_K²·‖1‖² = 1/4 each) and the only
        // nonzero tangential trace is on the top boundary edge (value 1,
        // h_E‖1‖² = 1) → total η² = 3/2
        let mesh = Mesh::unit_square(1).unwrap();
        let fam = ElementFamily::bdm(0).unwrap();
        let dm = DofMap::build(&mesh, fam, ProblemKind::Poisson).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|_, y| [[y, 0.0], [0.0, 0.0]]);
        let ind =
            indicators_of_coefficients(&mesh, &dm, &sigma, ProblemKind::Poisson).unwrap();
        let (eta2, _) = ind.total(None).unwrap();
        assert!((eta2 - 1.5).abs() < 1e-12, "η² = {eta2}");
    }

    #[test]
    fn stokes_identity_field_invisible() {
        let mesh = Mesh::unit_square(1).unwrap();
        let fam = ElementFamily::bdm(0).unwrap();
        let dm = DofMap::build(&mesh, fam, ProblemKind::Stokes).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|_, _| [[1.0, 0.0], [0.0, 1.0]]);
        let ind = indicators_of_coefficients(&mesh, &dm, &sigma, ProblemKind::Stokes).unwrap();
        let (eta2, _) = ind.total(None).unwrap();
        assert!(eta2 < 1e-24, "η² = {eta2}");
    }

    #[test]
    fn oscillation_hand_values() {
        let mesh = Mesh::unit_square(1).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();

        // f constant: zero oscillation at k=0
        let ind = oscillation(&mesh, &dm, &SourceTerm::constant_scalar(1.0)).unwrap();
        assert!(ind.osc2.iter().all(|&v| v < 1e-28));

        // f = x at k=0: per-triangle variance 1/36, h_K² = 1/2
        let fx = SourceTerm::scalar("x", |x, _| x);
        let ind = oscillation(&mesh, &dm, &fx).unwrap();
        let (_, total) = ind.total(None).unwrap();
        assert!((total - 1.0 / 36.0).abs() < 1e-14, "osc² = {total}");
    }

    #[test]
    fn oscillation_vanishes_for_p1_at_order_one() {
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(
            &mesh,
            ElementFamily::rt(1).unwrap(),
            ProblemKind::Poisson,
        )
        .unwrap();
        let fx = SourceTerm::scalar("x", |x, _| x);
        let ind = oscillation(&mesh, &dm, &fx).unwrap();
        assert!(ind.osc2.iter().all(|&v| v < 1e-26));
    }

    #[test]
    fn totals_additive_and_validated() {
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let fx = SourceTerm::scalar("x*y", |x, y| x * y);
        let osc = oscillation(&mesh, &dm, &fx).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|x, y| [[x + y, y], [0.0, 0.0]]);
        let eta = indicators_of_coefficients(&mesh, &dm, &sigma, ProblemKind::Poisson).unwrap();
        let ind = IndicatorSet::merge(eta, osc);

        assert_eq!(ind.total(Some(&[])).unwrap(), (0.0, 0.0));
        let (e_all, o_all) = ind.total(None).unwrap();
        let (e1, o1) = ind.total(Some(&[0, 1, 2, 3])).unwrap();
        let (e2, o2) = ind.total(Some(&[4, 5, 6, 7])).unwrap();
        assert!((e1 + e2 - e_all).abs() < 1e-14 * e_all.max(1.0));
        assert!((o1 + o2 - o_all).abs() < 1e-14);
        // singleton returns the stored entry
        let (es, os) = ind.total(Some(&[3])).unwrap();
        assert_eq!(es, ind.eta2[3]);
        assert_eq!(os, ind.osc2[3]);
        // invalid index rejected
        assert!(ind.total(Some(&[99])).is_err());
        // nonnegativity
        assert!(ind.eta2.iter().all(|&v| v >= 0.0));
        assert!(ind.osc2.iter().all(|&v| v >= 0.0));
    }
}
