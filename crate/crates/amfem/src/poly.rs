//! Small fixed-degree bivariate polynomials on the reference triangle.
//!
//! Coefficients are stored against the monomial basis
//! `[1, x, y, x², xy, y²]`, which covers everything the RT₀/RT₁/BDM
//! reference bases need. Differentiation is exact coefficient manipulation;
//! no numerical differentiation happens anywhere downstream.

/// Scalar polynomial of total degree ≤ 2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Poly2 {
    /// Coefficients for `[1, x, y, x², xy, y²]`.
    pub c: [f64; 6],
}

impl Poly2 {
    pub const ZERO: Poly2 = Poly2 { c: [0.0; 6] };

    pub fn constant(v: f64) -> Self {
        Poly2 {
            c: [v, 0.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// Monomial x^a y^b with a + b ≤ 2.
    pub fn monomial(a: u32, b: u32) -> Self {
        let mut p = Poly2::ZERO;
        let idx = match (a, b) {
            (0, 0) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            (2, 0) => 3,
            (1, 1) => 4,
            (0, 2) => 5,
            _ => panic!("monomial degree above 2"),
        };
        p.c[idx] = 1.0;
        p
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let c = &self.c;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    }

    pub fn dx(&self) -> Poly2 {
        let c = &self.c;
        Poly2 {
            c: [c[1], 2.0 * c[3], c[4], 0.0, 0.0, 0.0],
        }
    }

    pub fn dy(&self) -> Poly2 {
        let c = &self.c;
        Poly2 {
            c: [c[2], c[4], 2.0 * c[5], 0.0, 0.0, 0.0],
        }
    }

    pub fn scale(&self, s: f64) -> Poly2 {
        let mut c = self.c;
        for v in &mut c {
            *v *= s;
        }
        Poly2 { c }
    }

    pub fn add(&self, other: &Poly2) -> Poly2 {
        let mut c = self.c;
        for (v, o) in c.iter_mut().zip(other.c) {
            *v += o;
        }
        Poly2 { c }
    }

    pub fn axpy(&mut self, a: f64, other: &Poly2) {
        for (v, o) in self.c.iter_mut().zip(other.c) {
            *v += a * o;
        }
    }

    /// Largest coefficient magnitude above the quadratic terms' indices,
    /// i.e. how far the polynomial is from having degree ≤ `deg`.
    pub fn excess_above_degree(&self, deg: u32) -> f64 {
        let start = match deg {
            0 => 1,
            1 => 3,
            _ => 6,
        };
        self.c[start..].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Vector-valued polynomial (one stress row or a 2D vector field).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VecPoly2 {
    pub x: Poly2,
    pub y: Poly2,
}

impl VecPoly2 {
    pub const ZERO: VecPoly2 = VecPoly2 {
        x: Poly2::ZERO,
        y: Poly2::ZERO,
    };

    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        [self.x.eval(x, y), self.y.eval(x, y)]
    }

    pub fn divergence(&self) -> Poly2 {
        self.x.dx().add(&self.y.dy())
    }

    pub fn scale(&self, s: f64) -> VecPoly2 {
        VecPoly2 {
            x: self.x.scale(s),
            y: self.y.scale(s),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &VecPoly2) {
        self.x.axpy(a, &other.x);
        self.y.axpy(a, &other.y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_is_exact() {
        // p = 1 + 2x + 3y + 4x² + 5xy + 6y²
        let p = Poly2 {
            c: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        let px = p.dx();
        let py = p.dy();
        assert_eq!(px.eval(0.3, 0.7), 2.0 + 8.0 * 0.3 + 5.0 * 0.7);
        assert_eq!(py.eval(0.3, 0.7), 3.0 + 5.0 * 0.3 + 12.0 * 0.7);
    }

    #[test]
    fn divergence_of_linear_field() {
        // τ = (x, y) has div = 2
        let v = VecPoly2 {
            x: Poly2::monomial(1, 0),
            y: Poly2::monomial(0, 1),
        };
        let d = v.divergence();
        assert_eq!(d.eval(0.2, 0.9), 2.0);
        assert_eq!(d.excess_above_degree(0), 0.0);
    }
}
