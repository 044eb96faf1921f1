//! Assembly and solution of the discrete saddle-point problem.
//!
//! The discrete equations are
//!   (𝒜σ_h, τ_h) − (div τ_h, u_h) = 0          for all τ_h,
//!   (div σ_h, v_h) = (f, v_h)                  for all v_h,
//! plus, for Stokes, the single multiplier row enforcing ∫ tr σ_h = 0.
//! The assembled symmetric indefinite system
//!   [ M  −Bᵀ  gᵀ] [σ]   [ 0]
//!   [−B   0   0 ] [u] = [−F]
//!   [ g   0   0 ] [λ]   [ 0]
//! is factorised by sparse LU with partial pivoting.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::elements::piola_value;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::problem::{ExactSolution, ProblemKind, ProblemSpec};
use crate::quadrature::triangle_rule;
use crate::spaces::{divergence_coefficients, divergence_matrix, project_source, DofMap, FieldPair};
use crate::sparse::Coo;

/// The material operator 𝒜 applied pointwise to rowwise stress values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialOperator {
    /// 𝒜τ = τ (Poisson). Symmetric positive definite.
    Identity,
    /// 𝒜τ = τ − (1/2)(tr τ)I (Stokes). Positive semidefinite with kernel
    /// spanned by multiples of the identity.
    Deviatoric,
}

impl MaterialOperator {
    pub fn apply(&self, rows: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        match self {
            MaterialOperator::Identity => rows,
            MaterialOperator::Deviatoric => {
                let half_tr = 0.5 * (rows[0][0] + rows[1][1]);
                [
                    [rows[0][0] - half_tr, rows[0][1]],
                    [rows[1][0], rows[1][1] - half_tr],
                ]
            }
        }
    }

    /// Pointwise energy density (𝒜τ)·τ. Both operators are orthogonal
    /// projections, so (𝒜τ)·τ = |𝒜τ|², which avoids the catastrophic
    /// cancellation of |τ|² − ½(tr τ)² near the deviatoric kernel.
    pub fn energy_density(&self, rows: [[f64; 2]; 2]) -> f64 {
        let a = self.apply(rows);
        a[0][0] * a[0][0] + a[0][1] * a[0][1] + a[1][0] * a[1][0] + a[1][1] * a[1][1]
    }
}

/// Assembled blocks of the saddle-point system.
pub struct SaddleSystem {
    /// 𝒜-weighted stress mass matrix (n_σ × n_σ, symmetric).
    pub mass: Coo,
    /// Divergence operator (n_u × n_σ).
    pub divergence: Coo,
    /// Trace-constraint row ∫ tr τ (Stokes only).
    pub trace_row: Option<Vec<f64>>,
    /// Coefficients of the constant identity tensor: the kernel direction
    /// of the unconstrained Stokes saddle matrix (Stokes only).
    pub kernel_vector: Option<Vec<f64>>,
    /// Load vector (f, w_j).
    pub rhs: Vec<f64>,
    pub n_sigma: usize,
    pub n_u: usize,
}

impl SaddleSystem {
    pub fn n_system(&self) -> usize {
        self.n_sigma + self.n_u + usize::from(self.trace_row.is_some())
    }

    /// Full symmetric system in COO form.
    pub fn full_matrix(&self) -> Coo {
        let n = self.n_system();
        let mut a = Coo::new(n, n);
        for &(i, j, v) in &self.mass.entries {
            a.push(i, j, v);
        }
        for &(l, j, v) in &self.divergence.entries {
            a.push(j, self.n_sigma + l, -v);
            a.push(self.n_sigma + l, j, -v);
        }
        if let Some(g) = &self.trace_row {
            let last = n - 1;
            for (j, &v) in g.iter().enumerate() {
                if v != 0.0 {
                    a.push(j, last, v);
                    a.push(last, j, v);
                }
            }
        }
        a
    }

    pub fn full_rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n_system()];
        for (l, &v) in self.rhs.iter().enumerate() {
            b[self.n_sigma + l] = -v;
        }
        b
    }
}

/// Assemble mass, divergence, trace row and load for the given problem.
pub fn assemble(mesh: &Mesh, dofmap: &DofMap, problem: &ProblemSpec) -> Result<SaddleSystem> {
    if dofmap.mesh_id != mesh.id() {
        return Err(Error::DimensionMismatch(
            "dofmap was built for a different mesh".into(),
        ));
    }
    let stress = &dofmap.stress_element;
    let disp = &dofmap.displacement_element;
    let rule = triangle_rule(dofmap.family.quad_degree())?;
    let nloc = stress.ndof;
    let nq = rule.len();

    // reference basis values at quadrature points
    let mut ref_vals = vec![[0.0f64; 2]; nloc * nq];
    for (i, phi) in stress.basis.iter().enumerate() {
        for (q, p) in rule.points.iter().enumerate() {
            ref_vals[i * nq + q] = phi.eval(p[0], p[1]);
        }
    }
    let mut disp_vals = vec![0.0f64; disp.ndof * nq];
    for (j, w) in disp.basis.iter().enumerate() {
        for (q, p) in rule.points.iter().enumerate() {
            disp_vals[j * nq + q] = w.eval(p[0], p[1]);
        }
    }
    // reference integrals ∫ φ̂_i for the trace row
    let ref_int: Vec<[f64; 2]> = stress
        .basis
        .iter()
        .map(|phi| {
            [
                rule.integrate(|x, y| phi.eval(x, y)[0]),
                rule.integrate(|x, y| phi.eval(x, y)[1]),
            ]
        })
        .collect();

    let stokes = dofmap.kind == ProblemKind::Stokes;
    let mut mass = Coo::new(dofmap.n_sigma, dofmap.n_sigma);
    let mut rhs = vec![0.0; dofmap.n_u];
    let mut trace_row = if stokes {
        Some(vec![0.0; dofmap.n_sigma])
    } else {
        None
    };

    let mut phys = vec![[0.0f64; 2]; nloc * nq];
    for t in 0..mesh.num_triangles() {
        let (bmat, _, det) = mesh.jacobian(t);
        for i in 0..nloc {
            for q in 0..nq {
                phys[i * nq + q] = piola_value(&bmat, det, ref_vals[i * nq + q]);
            }
        }
        let locals = dofmap.stress_locals(t);

        // stress mass: a_ij = ∫ Pφ̂_i·Pφ̂_j, t_ij[a][b] = ∫ (Pφ̂_i)_a (Pφ̂_j)_b
        for i in 0..nloc {
            let di = locals[i];
            for j in 0..nloc {
                let dj = locals[j];
                let mut a_ij = 0.0;
                let mut t_ij = [[0.0f64; 2]; 2];
                for (q, w) in rule.weights.iter().enumerate() {
                    let vi = phys[i * nq + q];
                    let vj = phys[j * nq + q];
                    let w = w * det;
                    a_ij += w * (vi[0] * vj[0] + vi[1] * vj[1]);
                    if stokes {
                        for (a, via) in vi.iter().enumerate() {
                            for (b, vjb) in vj.iter().enumerate() {
                                t_ij[a][b] += w * via * vjb;
                            }
                        }
                    }
                }
                let ww = di.weight * dj.weight;
                if stokes {
                    for ci in 0..2 {
                        for cj in 0..2 {
                            let v = if ci == cj { a_ij } else { 0.0 };
                            let entry = ww * (v - 0.5 * t_ij[ci][cj]);
                            mass.push(
                                dofmap.sigma_index(ci, di.global),
                                dofmap.sigma_index(cj, dj.global),
                                entry,
                            );
                        }
                    }
                } else {
                    mass.push(di.global, dj.global, ww * a_ij);
                }
            }
        }

        // load: (f, w_j) with exact-f quadrature of degree 2k+4
        for (q, w) in rule.weights.iter().enumerate() {
            let xy = mesh.from_reference(t, rule.points[q]);
            let fv = problem.source.eval(xy[0], xy[1]);
            for c in 0..dofmap.components {
                for j in 0..disp.ndof {
                    rhs[dofmap.u_index(c, t, j)] += w * det * fv[c] * disp_vals[j * nq + q];
                }
            }
        }

        // trace row: ∫_K (Φ_{c,i})_c dx = weight_i · (B ∫ φ̂_i)_c
        if let Some(g) = trace_row.as_mut() {
            for (i, d) in locals.iter().enumerate() {
                let v = [
                    bmat[0][0] * ref_int[i][0] + bmat[0][1] * ref_int[i][1],
                    bmat[1][0] * ref_int[i][0] + bmat[1][1] * ref_int[i][1],
                ];
                for c in 0..2 {
                    g[dofmap.sigma_index(c, d.global)] += d.weight * v[c];
                }
            }
        }
    }

    let kernel_vector = if stokes {
        Some(crate::spaces::interpolate_stress(mesh, dofmap, &|_, _| {
            [[1.0, 0.0], [0.0, 1.0]]
        }))
    } else {
        None
    };

    Ok(SaddleSystem {
        mass,
        divergence: divergence_matrix(mesh, dofmap),
        trace_row,
        kernel_vector,
        rhs,
        n_sigma: dofmap.n_sigma,
        n_u: dofmap.n_u,
    })
}

/// Solve the saddle system by sparse LU with iterative refinement; the
/// relative residual of the full system is checked against 1e-10.
///
/// The Stokes trace constraint is not put into the matrix: its multiplier
/// row is dense and would destroy sparsity in the factorisation. Instead
/// the unconstrained saddle matrix — whose kernel is exactly the span of
/// the identity-tensor field paired with λ = 0 — is made regular by pinning
/// the stress dof where that kernel vector is largest, and the solution is
/// shifted along the kernel onto the constraint surface afterwards.
pub fn solve(system: &SaddleSystem, dofmap: &DofMap) -> Result<FieldPair> {
    let nc = system.n_sigma + system.n_u;
    let pin = system.kernel_vector.as_ref().map(|kv| {
        (0..kv.len())
            .max_by(|&a, &b| kv[a].abs().partial_cmp(&kv[b].abs()).unwrap())
            .expect("kernel vector is nonempty")
    });

    let mut core = Coo::new(nc, nc);
    let keep = |r: usize, c: usize| pin.is_none_or(|j| r != j && c != j);
    for &(i, j, v) in &system.mass.entries {
        if keep(i, j) {
            core.push(i, j, v);
        }
    }
    for &(l, j, v) in &system.divergence.entries {
        if keep(j, system.n_sigma + l) {
            core.push(j, system.n_sigma + l, -v);
            core.push(system.n_sigma + l, j, -v);
        }
    }
    if let Some(j) = pin {
        core.push(j, j, 1.0);
    }
    let mut b = vec![0.0; nc];
    for (l, &v) in system.rhs.iter().enumerate() {
        b[system.n_sigma + l] = -v;
    }

    let triplets: Vec<Triplet<usize, usize, f64>> = core
        .entries
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(nc, nc, &triplets)
        .map_err(|e| Error::SolverBreakdown(format!("matrix creation failed: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
    let rhs_mat = Mat::<f64>::from_fn(nc, 1, |i, _| b[i]);
    let x = lu.solve(&rhs_mat);
    let mut xv: Vec<f64> = (0..nc).map(|i| x[(i, 0)]).collect();
    if xv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(
            "solution contains non-finite entries".into(),
        ));
    }

    // iterative refinement: threshold pivoting in the sparse factorisation
    // can leave noticeable pivot growth on locally refined meshes, and each
    // refinement step shrinks the residual by the same growth factor
    let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual_of = |xv: &[f64]| -> (Vec<f64>, f64) {
        let ax = core.matvec(xv);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, norm)
    };
    let (mut r, mut res) = residual_of(&xv);
    let target = 1e-13 * bnorm.max(1e-300);
    for _ in 0..15 {
        if res <= target {
            break;
        }
        let rmat = Mat::<f64>::from_fn(nc, 1, |i, _| r[i]);
        let dx = lu.solve(&rmat);
        let candidate: Vec<f64> = (0..nc).map(|i| xv[i] + dx[(i, 0)]).collect();
        let (r_new, res_new) = residual_of(&candidate);
        if !res_new.is_finite() || res_new >= 0.5 * res {
            break; // stagnation: keep the better iterate
        }
        xv = candidate;
        r = r_new;
        res = res_new;
    }

    let mut sigma = xv[..system.n_sigma].to_vec();
    let u = xv[system.n_sigma..nc].to_vec();
    let mut lambda = None;
    if let (Some(g), Some(kv)) = (&system.trace_row, &system.kernel_vector) {
        // shift along the kernel onto ∫ tr σ = 0; the multiplier vanishes
        // identically because 𝒜σ is pointwise trace-free
        let g_sigma: f64 = g.iter().zip(&sigma).map(|(a, b)| a * b).sum();
        let g_kernel: f64 = g.iter().zip(kv).map(|(a, b)| a * b).sum();
        let alpha = -g_sigma / g_kernel;
        for (s, k) in sigma.iter_mut().zip(kv) {
            *s += alpha * k;
        }
        lambda = Some(0.0);
    }

    // final residual check against the full (bordered) system
    let full = system.full_matrix();
    let mut xf = Vec::with_capacity(system.n_system());
    xf.extend_from_slice(&sigma);
    xf.extend_from_slice(&u);
    if lambda.is_some() {
        xf.push(0.0);
    }
    let bf = system.full_rhs();
    let axf = full.matvec(&xf);
    let resf: f64 = axf
        .iter()
        .zip(&bf)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let bfnorm: f64 = bf.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = resf / bfnorm.max(1e-300);
    if bfnorm > 0.0 && rel > 1e-10 {
        return Err(Error::ResidualTooLarge {
            residual: rel,
            tol: 1e-10,
        });
    }

    Ok(FieldPair {
        sigma,
        u,
        lambda,
        mesh_id: dofmap.mesh_id,
    })
}

/// Assemble and solve in one step.
pub fn assemble_and_solve(
    mesh: &Mesh,
    dofmap: &DofMap,
    problem: &ProblemSpec,
) -> Result<(SaddleSystem, FieldPair)> {
    let system = assemble(mesh, dofmap, problem)?;
    let field = solve(&system, dofmap)?;
    Ok((system, field))
}

/// Energy norm ‖τ‖_𝒜 = (𝒜τ, τ)^{1/2} of a discrete stress field.
pub fn energy_norm(mesh: &Mesh, dofmap: &DofMap, op: MaterialOperator, sigma: &[f64]) -> f64 {
    energy_norm_sq(mesh, dofmap, op, sigma).sqrt()
}

pub fn energy_norm_sq(mesh: &Mesh, dofmap: &DofMap, op: MaterialOperator, sigma: &[f64]) -> f64 {
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let stress = &dofmap.stress_element;
    let nloc = stress.ndof;
    let nq = rule.len();
    let mut ref_vals = vec![[0.0f64; 2]; nloc * nq];
    for (i, phi) in stress.basis.iter().enumerate() {
        for (q, p) in rule.points.iter().enumerate() {
            ref_vals[i * nq + q] = phi.eval(p[0], p[1]);
        }
    }
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let (bmat, _, det) = mesh.jacobian(t);
        let coeffs = dofmap.local_stress_coeffs(t, sigma);
        for (q, w) in rule.weights.iter().enumerate() {
            let mut rows = [[0.0f64; 2]; 2];
            for (c, row) in coeffs.iter().enumerate() {
                let mut vr = [0.0; 2];
                for (i, ci) in row.iter().enumerate() {
                    let v = ref_vals[i * nq + q];
                    vr[0] += ci * v[0];
                    vr[1] += ci * v[1];
                }
                rows[c] = piola_value(&bmat, det, vr);
            }
            acc += w * det * op.energy_density(rows);
        }
    }
    acc.max(0.0)
}

/// Energy norm of the difference between two stress fields on one mesh.
pub fn energy_norm_diff(
    mesh: &Mesh,
    dofmap: &DofMap,
    op: MaterialOperator,
    a: &[f64],
    b: &[f64],
) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    energy_norm(mesh, dofmap, op, &diff)
}

/// Energy-norm error ‖σ_exact − σ_h‖_𝒜 by degree-6 quadrature.
pub fn energy_error_vs_exact(
    mesh: &Mesh,
    dofmap: &DofMap,
    op: MaterialOperator,
    sigma: &[f64],
    exact: &ExactSolution,
) -> f64 {
    let rule = triangle_rule(6).expect("degree 6 rule");
    let stress = &dofmap.stress_element;
    let nloc = stress.ndof;
    let nq = rule.len();
    let mut ref_vals = vec![[0.0f64; 2]; nloc * nq];
    for (i, phi) in stress.basis.iter().enumerate() {
        for (q, p) in rule.points.iter().enumerate() {
            ref_vals[i * nq + q] = phi.eval(p[0], p[1]);
        }
    }
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let (bmat, _, det) = mesh.jacobian(t);
        let coeffs = dofmap.local_stress_coeffs(t, sigma);
        for (q, w) in rule.weights.iter().enumerate() {
            let xy = mesh.from_reference(t, rule.points[q]);
            let want = exact.stress(xy[0], xy[1]);
            let mut rows = [[0.0f64; 2]; 2];
            for c in 0..dofmap.components {
                let mut vr = [0.0; 2];
                for (i, ci) in coeffs[c].iter().enumerate() {
                    let v = ref_vals[i * nq + q];
                    vr[0] += ci * v[0];
                    vr[1] += ci * v[1];
                }
                let pv = piola_value(&bmat, det, vr);
                rows[c] = [want[c][0] - pv[0], want[c][1] - pv[1]];
            }
            acc += w * det * op.energy_density(rows);
        }
    }
    acc.max(0.0).sqrt()
}

/// Relative L² distance between div σ_h and Q_h f: the commuting-load
/// identity that must hold to solver precision after every solve.
pub fn commuting_residual(
    mesh: &Mesh,
    dofmap: &DofMap,
    field: &FieldPair,
    problem: &ProblemSpec,
) -> f64 {
    let div = divergence_coefficients(mesh, dofmap, &field.sigma);
    let qf = project_source(mesh, &problem.source, dofmap);
    let diff: Vec<f64> = div.iter().zip(&qf).map(|(a, b)| a - b).collect();
    let num = crate::spaces::displacement_l2_norm(mesh, dofmap, &diff);
    let den = crate::spaces::displacement_l2_norm(mesh, dofmap, &qf);
    num / den.max(1e-300)
}

/// ∫_Ω tr σ_h dx for rowwise tensor fields (zero by constraint for Stokes).
pub fn trace_integral(mesh: &Mesh, dofmap: &DofMap, sigma: &[f64]) -> f64 {
    if dofmap.components < 2 {
        return 0.0;
    }
    let rule = triangle_rule(dofmap.family.quad_degree()).expect("valid degree");
    let stress = &dofmap.stress_element;
    let ref_int: Vec<[f64; 2]> = stress
        .basis
        .iter()
        .map(|phi| {
            [
                rule.integrate(|x, y| phi.eval(x, y)[0]),
                rule.integrate(|x, y| phi.eval(x, y)[1]),
            ]
        })
        .collect();
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let (bmat, _, _) = mesh.jacobian(t);
        let coeffs = dofmap.local_stress_coeffs(t, sigma);
        for (c, row) in coeffs.iter().enumerate() {
            for (i, ci) in row.iter().enumerate() {
                let v = [
                    bmat[0][0] * ref_int[i][0] + bmat[0][1] * ref_int[i][1],
                    bmat[1][0] * ref_int[i][0] + bmat[1][1] * ref_int[i][1],
                ];
                acc += ci * v[c];
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::ElementFamily;
    use crate::problem::{manufactured_poisson, SourceTerm};
    use crate::spaces::interpolate_stress;
    use nalgebra::DMatrix;

    fn rt0() -> ElementFamily {
        ElementFamily::rt(0).unwrap()
    }

    #[test]
    fn poisson_mass_is_spd() {
        let mesh = Mesh::unit_square(1).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let problem =
            ProblemSpec::new(ProblemKind::Poisson, rt0(), SourceTerm::zero(ProblemKind::Poisson))
                .unwrap();
        let sys = assemble(&mesh, &dm, &problem).unwrap();
        assert_eq!(sys.n_sigma, 5);
        let m = sys.mass.to_dense();
        // dense symmetric eigenvalue oracle
        let sym = DMatrix::from_fn(5, 5, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        let eig = sym.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 1e-8, "smallest eigenvalue {min}");
    }

    #[test]
    fn deviatoric_kernel_contains_identity() {
        let mesh = Mesh::unit_square(1).unwrap();
        let fam = ElementFamily::bdm(0).unwrap();
        let dm = DofMap::build(&mesh, fam, ProblemKind::Stokes).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|_, _| [[1.0, 0.0], [0.0, 1.0]]);
        // (𝒜I, I) = 0
        let e = energy_norm(&mesh, &dm, MaterialOperator::Deviatoric, &sigma);
        assert!(e <= 1e-14, "energy of identity field: {e}");
        // and through the assembled mass matrix
        let problem = ProblemSpec::new(
            ProblemKind::Stokes,
            fam,
            SourceTerm::zero(ProblemKind::Stokes),
        )
        .unwrap();
        let sys = assemble(&mesh, &dm, &problem).unwrap();
        let msig = sys.mass.matvec(&sigma);
        let quad: f64 = msig.iter().zip(&sigma).map(|(a, b)| a * b).sum();
        assert!(quad.abs() < 1e-12, "σᵀMσ = {quad}");
    }

    #[test]
    fn zero_source_zero_solution() {
        for kind in [ProblemKind::Poisson, ProblemKind::Stokes] {
            let mesh = Mesh::unit_square(2).unwrap();
            let dm = DofMap::build(&mesh, rt0(), kind).unwrap();
            let problem = ProblemSpec::new(kind, rt0(), SourceTerm::zero(kind)).unwrap();
            let (sys, field) = assemble_and_solve(&mesh, &dm, &problem).unwrap();
            assert!(sys.rhs.iter().all(|&v| v == 0.0));
            assert!(field.sigma.iter().all(|v| v.abs() < 1e-10));
            assert!(field.u.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn energy_norm_matches_l2_for_identity_operator() {
        let mesh = Mesh::unit_square(2).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let sigma = interpolate_stress(&mesh, &dm, &|x, y| [[y, x + 1.0], [0.0, 0.0]]);
        let e = energy_norm(&mesh, &dm, MaterialOperator::Identity, &sigma);
        // independent quadrature of the interpolated field itself
        let rule = triangle_rule(6).unwrap();
        let mut l2 = 0.0;
        for t in 0..mesh.num_triangles() {
            let (_, _, det) = mesh.jacobian(t);
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let v = crate::spaces::eval_stress(&mesh, &dm, &sigma, t, *p);
                l2 += w * det * (v[0][0] * v[0][0] + v[0][1] * v[0][1]);
            }
        }
        let l2 = l2.sqrt();
        assert!((e - l2).abs() <= 1e-12 * l2, "energy {e} vs l2 {l2}");
        // zero field
        assert_eq!(
            energy_norm(&mesh, &dm, MaterialOperator::Identity, &vec![0.0; dm.n_sigma]),
            0.0
        );
    }

    #[test]
    fn commuting_identity_holds_after_solve() {
        let mesh = Mesh::unit_square(2).unwrap();
        let (f, exact) = manufactured_poisson();
        let problem = ProblemSpec::new(ProblemKind::Poisson, rt0(), f)
            .unwrap()
            .with_exact(exact);
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
        let (_, field) = assemble_and_solve(&mesh, &dm, &problem).unwrap();
        let r = commuting_residual(&mesh, &dm, &field, &problem);
        assert!(r < 1e-10, "commuting residual {r}");
    }

    #[test]
    fn stokes_solve_trace_free() {
        let mesh = Mesh::unit_square(2).unwrap();
        let (f, _) = crate::problem::manufactured_stokes();
        let problem = ProblemSpec::new(ProblemKind::Stokes, rt0(), f).unwrap();
        let dm = DofMap::build(&mesh, rt0(), ProblemKind::Stokes).unwrap();
        let (_, field) = assemble_and_solve(&mesh, &dm, &problem).unwrap();
        let tr = trace_integral(&mesh, &dm, &field.sigma);
        assert!(tr.abs() < 1e-10, "∫ tr σ = {tr}");
        let r = commuting_residual(&mesh, &dm, &field, &problem);
        assert!(r < 1e-10, "commuting residual {r}");
    }

    #[test]
    fn manufactured_error_decreases() {
        let (f, exact) = manufactured_poisson();
        let problem = ProblemSpec::new(ProblemKind::Poisson, rt0(), f)
            .unwrap()
            .with_exact(exact.clone());
        let mut errs = Vec::new();
        for n in [2, 4, 8] {
            let mesh = Mesh::unit_square(n).unwrap();
            let dm = DofMap::build(&mesh, rt0(), ProblemKind::Poisson).unwrap();
            let (_, field) = assemble_and_solve(&mesh, &dm, &problem).unwrap();
            errs.push(energy_error_vs_exact(
                &mesh,
                &dm,
                MaterialOperator::Identity,
                &field.sigma,
                &exact,
            ));
        }
        assert!(errs[1] < 0.6 * errs[0]);
        assert!(errs[2] < 0.6 * errs[1]);
    }
}
