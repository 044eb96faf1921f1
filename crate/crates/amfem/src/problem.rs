//! Problem selection: material operator, source terms and benchmark data.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::elements::ElementFamily;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::system::MaterialOperator;

/// Which saddle-point problem is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Mixed Poisson: 𝒜τ = τ, scalar displacement.
    Poisson,
    /// Pseudostress Stokes: 𝒜τ = τ − (1/2)(tr τ)I, vector velocity, stress
    /// trace constrained to zero mean.
    Stokes,
}

impl ProblemKind {
    pub fn components(&self) -> usize {
        match self {
            ProblemKind::Poisson => 1,
            ProblemKind::Stokes => 2,
        }
    }

    pub fn operator(&self) -> MaterialOperator {
        match self {
            ProblemKind::Poisson => MaterialOperator::Identity,
            ProblemKind::Stokes => MaterialOperator::Deviatoric,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::Poisson => write!(f, "poisson"),
            ProblemKind::Stokes => write!(f, "stokes"),
        }
    }
}

type VecFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type TensorFn = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;

/// Point-evaluable source term f. Scalar for Poisson (component 0), vector
/// for Stokes.
#[derive(Clone)]
pub struct SourceTerm {
    pub name: String,
    pub components: usize,
    f: VecFn,
}

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SourceTerm({})", self.name)
    }
}

impl SourceTerm {
    pub fn scalar(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        SourceTerm {
            name: name.into(),
            components: 1,
            f: Arc::new(move |x, y| [f(x, y), 0.0]),
        }
    }

    pub fn vector(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        SourceTerm {
            name: name.into(),
            components: 2,
            f: Arc::new(f),
        }
    }

    pub fn constant_scalar(c: f64) -> Self {
        SourceTerm::scalar(format!("constant({c})"), move |_, _| c)
    }

    pub fn zero(kind: ProblemKind) -> Self {
        SourceTerm {
            name: "zero".into(),
            components: kind.components(),
            f: Arc::new(|_, _| [0.0, 0.0]),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        (self.f)(x, y)
    }
}

/// Exact solution data for manufactured benchmarks: the stress rowwise
/// (row 0 only for Poisson).
#[derive(Clone)]
pub struct ExactSolution {
    pub name: String,
    stress: TensorFn,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactSolution({})", self.name)
    }
}

impl ExactSolution {
    pub fn new(
        name: impl Into<String>,
        stress: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        ExactSolution {
            name: name.into(),
            stress: Arc::new(stress),
        }
    }

    pub fn stress(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        (self.stress)(x, y)
    }
}

/// Full problem description: operator kind, element family and data.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub family: ElementFamily,
    pub source: SourceTerm,
    pub exact: Option<ExactSolution>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, family: ElementFamily, source: SourceTerm) -> Result<Self> {
        if source.components != kind.components() {
            return Err(Error::SourceMismatch(format!(
                "{} source has {} component(s), {} needs {}",
                source.name,
                source.components,
                kind,
                kind.components()
            )));
        }
        Ok(ProblemSpec {
            kind,
            family,
            source,
            exact: None,
        })
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }
}

/// Computational domain selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainSpec {
    UnitSquare { subdivisions: usize },
    LShape { subdivisions: usize },
    File { path: String },
}

impl DomainSpec {
    pub fn build(&self) -> Result<Mesh> {
        match self {
            DomainSpec::UnitSquare { subdivisions } => Mesh::unit_square(*subdivisions),
            DomainSpec::LShape { subdivisions } => Mesh::lshape(*subdivisions),
            DomainSpec::File { path } => Mesh::from_json(&std::fs::read_to_string(path)?),
        }
    }
}

/// How the energy-error column of an adaptive history is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Leave the column empty.
    None,
    /// Use the configured exact stress.
    Exact,
    /// Use a discrete reference solution two uniform refinements beyond the
    /// finest mesh.
    Reference,
}

/// Poisson benchmark u = sin(πx)sin(πy) on the unit square:
/// σ = ∇u, f = Δu = −2π² sin(πx)sin(πy).
pub fn manufactured_poisson() -> (SourceTerm, ExactSolution) {
    use std::f64::consts::PI;
    let f = SourceTerm::scalar("poisson-manufactured", |x, y| {
        -2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
    });
    let exact = ExactSolution::new("poisson-manufactured", |x, y| {
        [
            [
                PI * (PI * x).cos() * (PI * y).sin(),
                PI * (PI * x).sin() * (PI * y).cos(),
            ],
            [0.0, 0.0],
        ]
    });
    (f, exact)
}

/// Stokes benchmark on the unit square built from the stream function
/// ψ = sin²(πx)sin²(πy) (so the velocity u = curl ψ vanishes on the
/// boundary and is divergence-free) and the zero-mean pressure
/// p = cos(πx)cos(πy). The pseudostress is σ = ∇u − pI and f = div σ.
pub fn manufactured_stokes() -> (SourceTerm, ExactSolution) {
    use std::f64::consts::PI;
    let f = SourceTerm::vector("stokes-manufactured", |x, y| {
        let (s2x, c2x) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
        let (s2y, c2y) = ((2.0 * PI * y).sin(), (2.0 * PI * y).cos());
        let pi3 = PI * PI * PI;
        // Δu − ∇p with u = (π sin²(πx) sin(2πy), −π sin(2πx) sin²(πy))
        [
            2.0 * pi3 * s2y * (2.0 * c2x - 1.0) + PI * (PI * x).sin() * (PI * y).cos(),
            -2.0 * pi3 * s2x * (2.0 * c2y - 1.0) + PI * (PI * x).cos() * (PI * y).sin(),
        ]
    });
    let exact = ExactSolution::new("stokes-manufactured", |x, y| {
        let (sx, cx) = ((PI * x).sin(), (PI * x).cos());
        let (sy, cy) = ((PI * y).sin(), (PI * y).cos());
        let (s2x, c2x) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos());
        let (s2y, c2y) = ((2.0 * PI * y).sin(), (2.0 * PI * y).cos());
        let p = cx * cy;
        let pi2 = PI * PI;
        // ∇u rows minus p on the diagonal
        [
            [pi2 * s2x * s2y - p, 2.0 * pi2 * sx * sx * c2y],
            [-2.0 * pi2 * c2x * sy * sy, -pi2 * s2x * s2y - p],
        ]
    });
    (f, exact)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of a scalar function.
    fn fd(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, dir: usize) -> f64 {
        let h = 1e-6;
        if dir == 0 {
            (f(x + h, y) - f(x - h, y)) / (2.0 * h)
        } else {
            (f(x, y + h) - f(x, y - h)) / (2.0 * h)
        }
    }

    #[test]
    fn poisson_manufactured_consistent() {
        // independent check: div σ_exact = f by finite differences
        let (f, exact) = manufactured_poisson();
        for &(x, y) in &[(0.3, 0.4), (0.71, 0.22), (0.5, 0.9)] {
            let div = fd(|a, b| exact.stress(a, b)[0][0], x, y, 0)
                + fd(|a, b| exact.stress(a, b)[0][1], x, y, 1);
            assert!(
                (div - f.eval(x, y)[0]).abs() < 1e-5,
                "div σ = {div}, f = {}",
                f.eval(x, y)[0]
            );
        }
    }

    #[test]
    fn stokes_manufactured_consistent() {
        let (f, exact) = manufactured_stokes();
        use std::f64::consts::PI;
        let u1 = |x: f64, y: f64| PI * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
        let u2 = |x: f64, y: f64| -PI * (2.0 * PI * x).sin() * (PI * y).sin().powi(2);
        for &(x, y) in &[(0.3, 0.4), (0.67, 0.13), (0.52, 0.81)] {
            // div σ rows = f
            for r in 0..2 {
                let div = fd(|a, b| exact.stress(a, b)[r][0], x, y, 0)
                    + fd(|a, b| exact.stress(a, b)[r][1], x, y, 1);
                assert!(
                    (div - f.eval(x, y)[r]).abs() < 1e-4,
                    "row {r}: div σ = {div}, f = {}",
                    f.eval(x, y)[r]
                );
            }
            // 𝒜σ = ∇u against finite differences of the stream-function
            // velocity
            let s = exact.stress(x, y);
            let tr = s[0][0] + s[1][1];
            let dev = [
                [s[0][0] - 0.5 * tr, s[0][1]],
                [s[1][0], s[1][1] - 0.5 * tr],
            ];
            let grad = [
                [fd(u1, x, y, 0), fd(u1, x, y, 1)],
                [fd(u2, x, y, 0), fd(u2, x, y, 1)],
            ];
            for r in 0..2 {
                for c in 0..2 {
                    assert!(
                        (dev[r][c] - grad[r][c]).abs() < 1e-4,
                        "(𝒜σ)[{r}][{c}] = {} vs ∇u = {}",
                        dev[r][c],
                        grad[r][c]
                    );
                }
            }
            // velocity is divergence-free
            assert!((fd(u1, x, y, 0) + fd(u2, x, y, 1)).abs() < 1e-5);
        }
    }

    #[test]
    fn source_arity_validated() {
        let fam = ElementFamily::rt(0).unwrap();
        let f = SourceTerm::constant_scalar(1.0);
        assert!(ProblemSpec::new(ProblemKind::Poisson, fam, f.clone()).is_ok());
        assert!(ProblemSpec::new(ProblemKind::Stokes, fam, f).is_err());
    }
}
