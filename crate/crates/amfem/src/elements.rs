//! Reference-triangle shape functions for RT_k, BDM_k and discontinuous P_k
//! (k ∈ {0,1}), plus the contravariant Piola transform.
//!
//! The stress bases are constructed numerically: a spanning set of the local
//! polynomial space is assembled, the degree-of-freedom functionals are
//! applied to it, and the resulting Vandermonde system is inverted. Edge
//! degrees of freedom are mean-value moments against shifted Legendre
//! polynomials, so the lowest moment of the RT₀ basis is a unit average
//! normal flux.
//!
//! Reference triangle: vertices (0,0), (1,0), (0,1). Local edge ℓ is the
//! edge opposite vertex ℓ, directed v₁→v₂, v₂→v₀, v₀→v₁.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::poly::{Poly2, VecPoly2};
use crate::quadrature::{edge_rule, triangle_rule};

/// Element family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    RaviartThomas,
    BrezziDouglasMarini,
}

/// Stress element family with displacement order `k ∈ {0,1}`.
///
/// The stress space is `P_k(K)² + x·P̃_k(K)` for Raviart–Thomas and
/// `P_{k+1}(K)²` for Brezzi–Douglas–Marini; the displacement space is
/// `P_k(K)` in both cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementFamily {
    pub kind: FamilyKind,
    pub order: u8,
}

impl ElementFamily {
    pub fn rt(order: u8) -> Result<Self> {
        if order > 1 {
            return Err(Error::UnsupportedOrder {
                family: "Raviart-Thomas",
                order,
            });
        }
        Ok(ElementFamily {
            kind: FamilyKind::RaviartThomas,
            order,
        })
    }

    pub fn bdm(order: u8) -> Result<Self> {
        if order > 1 {
            return Err(Error::UnsupportedOrder {
                family: "Brezzi-Douglas-Marini",
                order,
            });
        }
        Ok(ElementFamily {
            kind: FamilyKind::BrezziDouglasMarini,
            order,
        })
    }

    /// Normal-trace moments carried per edge.
    pub fn edge_moments(&self) -> usize {
        match self.kind {
            FamilyKind::RaviartThomas => self.order as usize + 1,
            FamilyKind::BrezziDouglasMarini => self.order as usize + 2,
        }
    }

    /// Interior stress degrees of freedom.
    pub fn interior_dofs(&self) -> usize {
        match (self.kind, self.order) {
            (FamilyKind::RaviartThomas, 0) => 0,
            (FamilyKind::RaviartThomas, _) => 2,
            (FamilyKind::BrezziDouglasMarini, 0) => 0,
            (FamilyKind::BrezziDouglasMarini, _) => 3,
        }
    }

    pub fn stress_dofs(&self) -> usize {
        3 * self.edge_moments() + self.interior_dofs()
    }

    pub fn displacement_dofs(&self) -> usize {
        ((self.order as usize + 1) * (self.order as usize + 2)) / 2
    }

    /// Default quadrature degree 2k+4 used for assembly and estimator
    /// integrals; exact for every polynomial integrand at k ≤ 1.
    pub fn quad_degree(&self) -> u32 {
        2 * self.order as u32 + 4
    }

    pub fn name(&self) -> String {
        match self.kind {
            FamilyKind::RaviartThomas => format!("RT{}", self.order),
            FamilyKind::BrezziDouglasMarini => format!("BDM(k={})", self.order),
        }
    }
}

/// Reference edges: (start vertex, end vertex, outward normal, length).
pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

pub struct RefEdge {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub normal: [f64; 2],
    pub length: f64,
}

pub fn ref_edge(local: usize) -> RefEdge {
    let sqrt2 = std::f64::consts::SQRT_2;
    match local {
        0 => RefEdge {
            start: [1.0, 0.0],
            end: [0.0, 1.0],
            normal: [1.0 / sqrt2, 1.0 / sqrt2],
            length: sqrt2,
        },
        1 => RefEdge {
            start: [0.0, 1.0],
            end: [0.0, 0.0],
            normal: [-1.0, 0.0],
            length: 1.0,
        },
        _ => RefEdge {
            start: [0.0, 0.0],
            end: [1.0, 0.0],
            normal: [0.0, -1.0],
            length: 1.0,
        },
    }
}

/// Shifted Legendre polynomial L_m on [0,1].
pub fn legendre(m: usize, s: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0 * s - 1.0,
        _ => 6.0 * s * s - 6.0 * s + 1.0,
    }
}

/// Reference stress element: basis dual to the local degrees of freedom.
pub struct StressElement {
    pub family: ElementFamily,
    /// Basis functions, edge-major: dof `ℓ·edge_moments + m` is the moment-m
    /// function of edge ℓ; interior functions follow.
    pub basis: Vec<VecPoly2>,
    /// Exact divergences of the basis functions.
    pub div_basis: Vec<Poly2>,
    pub ndof: usize,
}

impl StressElement {
    pub fn new(family: ElementFamily) -> Result<StressElement> {
        let span = spanning_set(family);
        let ndof = family.stress_dofs();
        assert_eq!(span.len(), ndof, "spanning set size mismatch");

        let mut d = DMatrix::zeros(ndof, ndof);
        for (j, tau) in span.iter().enumerate() {
            let dofs = reference_dofs(family, tau);
            for (i, v) in dofs.iter().enumerate() {
                d[(i, j)] = *v;
            }
        }
        let inv = d.clone().try_inverse().ok_or_else(|| {
            Error::SingularSystem(format!(
                "degree-of-freedom system of {} is singular",
                family.name()
            ))
        })?;

        let mut basis = Vec::with_capacity(ndof);
        for j in 0..ndof {
            let mut phi = VecPoly2::ZERO;
            for (m, tau) in span.iter().enumerate() {
                phi.axpy(inv[(m, j)], tau);
            }
            basis.push(phi);
        }
        let div_basis = basis.iter().map(|p| p.divergence()).collect();
        Ok(StressElement {
            family,
            basis,
            div_basis,
            ndof,
        })
    }

    /// Max |dof_i(φ_j) − δ_ij| over all pairs; construction sanity.
    pub fn duality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (j, phi) in self.basis.iter().enumerate() {
            let dofs = reference_dofs(self.family, phi);
            for (i, v) in dofs.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - want).abs());
            }
        }
        worst
    }
}

/// Apply the reference degrees of freedom to a stress field on the
/// reference triangle. Edge dofs are mean-value Legendre moments of the
/// outward normal trace; interior dofs are area moments.
pub fn reference_dofs(family: ElementFamily, tau: &VecPoly2) -> Vec<f64> {
    let nm = family.edge_moments();
    let mut out = Vec::with_capacity(family.stress_dofs());
    let (pts, ws) = edge_rule(4);
    for local in 0..3 {
        let e = ref_edge(local);
        for m in 0..nm {
            let mut acc = 0.0;
            for (s, w) in pts.iter().zip(&ws) {
                let x = e.start[0] + s * (e.end[0] - e.start[0]);
                let y = e.start[1] + s * (e.end[1] - e.start[1]);
                let v = tau.eval(x, y);
                acc += w * (v[0] * e.normal[0] + v[1] * e.normal[1]) * legendre(m, *s);
            }
            // ds = |ê| dŝ and the mean-value normalisation divides by |ê|
            out.push(acc);
        }
    }
    let rule = triangle_rule(6).expect("degree 6 rule exists");
    for w in interior_weights(family) {
        let mut acc = 0.0;
        for (p, qw) in rule.points.iter().zip(&rule.weights) {
            let v = tau.eval(p[0], p[1]);
            let wv = w.eval(p[0], p[1]);
            acc += qw * (v[0] * wv[0] + v[1] * wv[1]);
        }
        out.push(acc);
    }
    out
}

/// Interior moment weights per family.
fn interior_weights(family: ElementFamily) -> Vec<VecPoly2> {
    match (family.kind, family.order) {
        (_, 0) => vec![],
        (FamilyKind::RaviartThomas, _) => vec![
            VecPoly2 {
                x: Poly2::constant(1.0),
                y: Poly2::ZERO,
            },
            VecPoly2 {
                x: Poly2::ZERO,
                y: Poly2::constant(1.0),
            },
        ],
        (FamilyKind::BrezziDouglasMarini, _) => {
            // bubble b = xy(1−x−y) = xy − x²y − xy²; curl b = (∂b/∂y, −∂b/∂x)
            // has degree 2, which exceeds Poly2; integrate it via its exact
            // coefficients below instead. ∂b/∂y = x − x² − 2xy,
            // ∂b/∂x = y − 2xy − y².
            vec![
                VecPoly2 {
                    x: Poly2::constant(1.0),
                    y: Poly2::ZERO,
                },
                VecPoly2 {
                    x: Poly2::ZERO,
                    y: Poly2::constant(1.0),
                },
                VecPoly2 {
                    x: Poly2 {
                        c: [0.0, 1.0, 0.0, -1.0, -2.0, 0.0],
                    },
                    y: Poly2 {
                        c: [0.0, 0.0, -1.0, 0.0, 2.0, 1.0],
                    },
                },
            ]
        }
    }
}

fn spanning_set(family: ElementFamily) -> Vec<VecPoly2> {
    let p0 = Poly2::monomial(0, 0);
    let px = Poly2::monomial(1, 0);
    let py = Poly2::monomial(0, 1);
    let vx = |p: Poly2| VecPoly2 { x: p, y: Poly2::ZERO };
    let vy = |p: Poly2| VecPoly2 { x: Poly2::ZERO, y: p };
    match (family.kind, family.order) {
        (FamilyKind::RaviartThomas, 0) => vec![
            vx(p0),
            vy(p0),
            VecPoly2 { x: px, y: py },
        ],
        (FamilyKind::RaviartThomas, _) => vec![
            vx(p0),
            vx(px),
            vx(py),
            vy(p0),
            vy(px),
            vy(py),
            // x · {x, y}: (x², xy) and (xy, y²)
            VecPoly2 {
                x: Poly2::monomial(2, 0),
                y: Poly2::monomial(1, 1),
            },
            VecPoly2 {
                x: Poly2::monomial(1, 1),
                y: Poly2::monomial(0, 2),
            },
        ],
        (FamilyKind::BrezziDouglasMarini, 0) => vec![
            vx(p0),
            vx(px),
            vx(py),
            vy(p0),
            vy(px),
            vy(py),
        ],
        (FamilyKind::BrezziDouglasMarini, _) => {
            let mut set = Vec::new();
            for (a, b) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
                set.push(vx(Poly2::monomial(a, b)));
            }
            for (a, b) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
                set.push(vy(Poly2::monomial(a, b)));
            }
            set
        }
    }
}

/// Scalar P_k basis on the reference triangle (monomials).
pub struct DisplacementElement {
    pub order: u8,
    pub basis: Vec<Poly2>,
    pub ndof: usize,
}

impl DisplacementElement {
    pub fn new(order: u8) -> Result<DisplacementElement> {
        if order > 1 {
            return Err(Error::UnsupportedOrder {
                family: "P_k displacement",
                order,
            });
        }
        let basis = if order == 0 {
            vec![Poly2::monomial(0, 0)]
        } else {
            vec![
                Poly2::monomial(0, 0),
                Poly2::monomial(1, 0),
                Poly2::monomial(0, 1),
            ]
        };
        let ndof = basis.len();
        Ok(DisplacementElement { order, basis, ndof })
    }
}

/// Contravariant Piola transform of a reference stress value: given the
/// affine map x = B x̂ + b, values map as τ = (1/det B)·B·τ̂. Normal fluxes
/// across edges are preserved and div τ = (div̂ τ̂)/det B ∘ F⁻¹.
pub fn piola_value(bmat: &[[f64; 2]; 2], det: f64, vhat: [f64; 2]) -> [f64; 2] {
    [
        (bmat[0][0] * vhat[0] + bmat[0][1] * vhat[1]) / det,
        (bmat[1][0] * vhat[0] + bmat[1][1] * vhat[1]) / det,
    ]
}
