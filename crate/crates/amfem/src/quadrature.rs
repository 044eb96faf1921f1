//! Quadrature on the reference triangle and the unit interval.
//!
//! Triangle rules are symmetric Gauss (Dunavant) rules for degrees 1–6 on
//! the reference triangle with vertices (0,0), (1,0), (0,1); weights sum to
//! the reference area 1/2. Edge rules are Gauss–Legendre on [0,1].

use crate::error::{Error, Result};

/// Quadrature rule on the reference triangle.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Points in reference coordinates (x̂, ŷ).
    pub points: Vec<[f64; 2]>,
    /// Weights summing to 1/2.
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: u32,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrate a function over the reference triangle.
    pub fn integrate(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

/// Push all permutations of a symmetric barycentric orbit.
fn push_orbit(pts: &mut Vec<[f64; 2]>, ws: &mut Vec<f64>, bary: [f64; 3], w: f64) {
    let perms: &[[usize; 3]] = if bary[0] == bary[1] && bary[1] == bary[2] {
        &[[0, 1, 2]]
    } else if bary[1] == bary[2] {
        &[[0, 1, 2], [1, 0, 2], [2, 1, 0]]
    } else {
        &[
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ]
    };
    for p in perms {
        let l = [bary[p[0]], bary[p[1]], bary[p[2]]];
        // reference coordinates (x̂, ŷ) = (λ₁, λ₂)
        pts.push([l[1], l[2]]);
        ws.push(w * 0.5);
    }
}

/// Symmetric rule on the reference triangle, exact for polynomials of the
/// requested total degree (max 6).
pub fn triangle_rule(degree: u32) -> Result<QuadratureRule> {
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    let third = 1.0 / 3.0;
    match degree {
        0 | 1 => push_orbit(&mut pts, &mut ws, [third; 3], 1.0),
        2 => {
            push_orbit(
                &mut pts,
                &mut ws,
                [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                third,
            );
        }
        3 | 4 => {
            let a = 0.445_948_490_915_965;
            let b = 0.091_576_213_509_771;
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * a, a, a],
                0.223_381_589_678_011,
            );
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * b, b, b],
                0.109_951_743_655_322,
            );
        }
        5 => {
            let a = 0.470_142_064_105_115;
            let b = 0.101_286_507_323_456;
            push_orbit(&mut pts, &mut ws, [third; 3], 0.225);
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * a, a, a],
                0.132_394_152_788_506,
            );
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * b, b, b],
                0.125_939_180_544_827,
            );
        }
        6 => {
            let a = 0.249_286_745_170_910;
            let b = 0.063_089_014_491_502;
            let c = 0.310_352_451_033_785;
            let d = 0.053_145_049_844_816;
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * a, a, a],
                0.116_786_275_726_379,
            );
            push_orbit(
                &mut pts,
                &mut ws,
                [1.0 - 2.0 * b, b, b],
                0.050_844_906_370_207,
            );
            push_orbit(
                &mut pts,
                &mut ws,
                [c, d, 1.0 - c - d],
                0.082_851_075_618_374,
            );
        }
        d => return Err(Error::QuadratureDegree(d)),
    }
    Ok(QuadratureRule {
        points: pts,
        weights: ws,
        degree: degree.max(1),
    })
}

/// Gauss–Legendre rule on [0,1] with `n` points (exact for degree 2n−1).
pub fn edge_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    // nodes/weights on [-1,1], mapped to [0,1]
    let (nodes, weights): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3.0f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt();
            let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let wa = (18.0 + 30.0f64.sqrt()) / 36.0;
            let wb = (18.0 - 30.0f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => {
            let s = (10.0f64 / 7.0).sqrt();
            let a = (5.0 - 2.0 * s).sqrt() / 3.0;
            let b = (5.0 + 2.0 * s).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
            (
                vec![-b, -a, 0.0, a, b],
                vec![wb, wa, 128.0 / 225.0, wa, wb],
            )
        }
    };
    let pts = nodes.iter().map(|t| 0.5 * (t + 1.0)).collect();
    let ws = weights.iter().map(|w| 0.5 * w).collect();
    (pts, ws)
}

/// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
pub fn reference_monomial_integral(a: u32, b: u32) -> f64 {
    fn fact(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }
    fact(a) * fact(b) / fact(a + b + 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_reference_area() {
        for deg in 1..=6 {
            let rule = triangle_rule(deg).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!(
                (total - 0.5).abs() < 1e-14,
                "degree {deg}: weight sum {total}"
            );
        }
    }

    #[test]
    fn exact_on_monomials_up_to_degree() {
        for deg in 1..=6u32 {
            let rule = triangle_rule(deg).unwrap();
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let got = rule.integrate(|x, y| x.powi(a as i32) * y.powi(b as i32));
                    let want = reference_monomial_integral(a, b);
                    assert!(
                        (got - want).abs() <= 1e-14 * want.max(1.0),
                        "deg {deg}, x^{a} y^{b}: got {got}, want {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree_one_integrates_x() {
        let rule = triangle_rule(1).unwrap();
        let got = rule.integrate(|x, _| x);
        assert!((got - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degree_two_integrates_x_squared() {
        // closed form: ∫ x² over reference triangle = 2!0!/4! = 1/12
        let rule = triangle_rule(2).unwrap();
        let got = rule.integrate(|x, _| x * x);
        assert!((got - 1.0 / 12.0).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn degree_above_six_rejected() {
        assert!(matches!(
            triangle_rule(7),
            Err(Error::QuadratureDegree(7))
        ));
    }

    #[test]
    fn edge_rules_exact() {
        for n in 1..=5usize {
            let (pts, ws) = edge_rule(n);
            for d in 0..=(2 * n - 1) as u32 {
                let got: f64 = pts
                    .iter()
                    .zip(&ws)
                    .map(|(t, w)| w * t.powi(d as i32))
                    .sum();
                let want = 1.0 / (d as f64 + 1.0);
                assert!(
                    (got - want).abs() < 1e-14,
                    "n={n} degree {d}: got {got} want {want}"
                );
            }
        }
    }
}
