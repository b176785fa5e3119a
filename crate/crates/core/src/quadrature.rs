//! Symmetric Gauss rules on the reference triangle, stored in barycentric
//! coordinates with weights summing to one (scaled by element area on use).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("unsupported quadrature degree {0} (supported: 2, 4, 6)")]
    UnsupportedDegree(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    /// Barycentric coordinates (l0, l1, l2).
    pub bary: [f64; 3],
    /// Weight relative to the element area.
    pub weight: f64,
}

/// Rule exact for polynomials up to the requested degree.
pub fn triangle_rule(degree: usize) -> Result<&'static [QuadPoint], QuadratureError> {
    match degree {
        2 => Ok(&DEG2),
        4 => Ok(&DEG4),
        6 => Ok(&DEG6),
        d => Err(QuadratureError::UnsupportedDegree(d)),
    }
}

// Edge-midpoint rule, degree 2.
static DEG2: [QuadPoint; 3] = [
    QuadPoint { bary: [0.5, 0.5, 0.0], weight: 1.0 / 3.0 },
    QuadPoint { bary: [0.0, 0.5, 0.5], weight: 1.0 / 3.0 },
    QuadPoint { bary: [0.5, 0.0, 0.5], weight: 1.0 / 3.0 },
];

// Six-point rule, degree 4 (Dunavant).
const A4A: f64 = 0.445948490915965;
const B4A: f64 = 0.108103018168070;
const W4A: f64 = 0.223381589678011;
const A4B: f64 = 0.091576213509771;
const B4B: f64 = 0.816847572980459;
const W4B: f64 = 0.109951743655322;
static DEG4: [QuadPoint; 6] = [
    QuadPoint { bary: [B4A, A4A, A4A], weight: W4A },
    QuadPoint { bary: [A4A, B4A, A4A], weight: W4A },
    QuadPoint { bary: [A4A, A4A, B4A], weight: W4A },
    QuadPoint { bary: [B4B, A4B, A4B], weight: W4B },
    QuadPoint { bary: [A4B, B4B, A4B], weight: W4B },
    QuadPoint { bary: [A4B, A4B, B4B], weight: W4B },
];

// Twelve-point rule, degree 6 (Dunavant).
const A6A: f64 = 0.063089014491502;
const B6A: f64 = 0.873821971016996;
const W6A: f64 = 0.050844906370207;
const A6B: f64 = 0.249286745170910;
const B6B: f64 = 0.501426509658179;
const W6B: f64 = 0.116786275726379;
const A6C: f64 = 0.310352451033785;
const B6C: f64 = 0.636502499121399;
const C6C: f64 = 0.053145049844816;
const W6C: f64 = 0.082851075618374;
static DEG6: [QuadPoint; 12] = [
    QuadPoint { bary: [B6A, A6A, A6A], weight: W6A },
    QuadPoint { bary: [A6A, B6A, A6A], weight: W6A },
    QuadPoint { bary: [A6A, A6A, B6A], weight: W6A },
    QuadPoint { bary: [B6B, A6B, A6B], weight: W6B },
    QuadPoint { bary: [A6B, B6B, A6B], weight: W6B },
    QuadPoint { bary: [A6B, A6B, B6B], weight: W6B },
    QuadPoint { bary: [B6C, A6C, C6C], weight: W6C },
    QuadPoint { bary: [B6C, C6C, A6C], weight: W6C },
    QuadPoint { bary: [A6C, B6C, C6C], weight: W6C },
    QuadPoint { bary: [C6C, B6C, A6C], weight: W6C },
    QuadPoint { bary: [A6C, C6C, B6C], weight: W6C },
    QuadPoint { bary: [C6C, A6C, B6C], weight: W6C },
];

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of l1^p l2^q over the reference triangle:
    /// p! q! / (p + q + 2)!.
    fn monomial_exact(p: u32, q: u32) -> f64 {
        fn fact(n: u32) -> f64 {
            (1..=n).map(|i| i as f64).product::<f64>().max(1.0)
        }
        fact(p) * fact(q) / fact(p + q + 2)
    }

    fn integrate(rule: &[QuadPoint], f: impl Fn(f64, f64) -> f64) -> f64 {
        // reference triangle (0,0), (1,0), (0,1): x = l1, y = l2, area 1/2
        rule.iter()
            .map(|qp| 0.5 * qp.weight * f(qp.bary[1], qp.bary[2]))
            .sum()
    }

    #[test]
    fn weights_positive_and_sum_to_one() {
        for degree in [2, 4, 6] {
            let rule = triangle_rule(degree).unwrap();
            let sum: f64 = rule.iter().map(|q| q.weight).sum();
            assert!((sum - 1.0).abs() < 1e-13, "degree {degree}");
            assert!(rule.iter().all(|q| q.weight > 0.0));
        }
        assert!(triangle_rule(3).is_err());
    }

    #[test]
    fn exactness_by_monomials() {
        for (degree, rule) in [(2usize, &DEG2[..]), (4, &DEG4[..]), (6, &DEG6[..])] {
            for p in 0..=degree as u32 {
                for q in 0..=(degree as u32 - p) {
                    let got = integrate(rule, |x, y| x.powi(p as i32) * y.powi(q as i32));
                    let exact = monomial_exact(p, q);
                    assert!(
                        (got - exact).abs() < 1e-14,
                        "degree {degree} monomial x^{p} y^{q}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree4_quartic_example() {
        // x^2 y^2 integrates to 2! 2! / 6! = 1/180
        let got = integrate(&DEG4, |x, y| x * x * y * y);
        assert!((got - 1.0 / 180.0).abs() < 1e-15);
    }

    #[test]
    fn degree6_reproduces_degree4_on_random_quartics() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let c: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let poly = |x: f64, y: f64| {
                let mut v = 0.0;
                let mut idx = 0;
                for p in 0..=4u32 {
                    for q in 0..=(4 - p) {
                        v += c[idx] * x.powi(p as i32) * y.powi(q as i32);
                        idx += 1;
                    }
                }
                v
            };
            let a = integrate(&DEG4, poly);
            let b = integrate(&DEG6, poly);
            assert!((a - b).abs() < 1e-13);
        }
    }
}
