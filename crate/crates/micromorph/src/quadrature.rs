//! Quadrature on the reference tetrahedron (unit simplex) and on edges.
//!
//! Tet rules are Grundmann-Moeller rules of index s, exact for polynomials of
//! degree 2s+1. The requested order is rounded up to the next available rule.

/// Quadrature rule on the reference tetrahedron
/// `{(x,y,z) | x,y,z >= 0, x+y+z <= 1}`.
///
/// Points are stored as barycentric 4-tuples, weights sum to the reference
/// volume 1/6.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// All multi-indices beta in N_0^parts with |beta| = total.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            let mut c = vec![first];
            c.append(&mut rest);
            out.push(c);
        }
    }
    out
}

impl QuadratureRule {
    /// Grundmann-Moeller rule of index `s` on the 3-simplex, degree 2s+1.
    pub fn grundmann_moeller(s: usize) -> Self {
        let n = 3usize; // dimension
        let deg = 2 * s + 1;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for i in 0..=s {
            let denom = (n + deg - 2 * i) as f64;
            let w = (-1.0f64).powi(i as i32) * 2f64.powi(-2 * s as i32) * denom.powi(deg as i32)
                / (factorial(i) * factorial(n + deg - i));
            for beta in compositions(s - i, n + 1) {
                let p = [
                    (2.0 * beta[0] as f64 + 1.0) / denom,
                    (2.0 * beta[1] as f64 + 1.0) / denom,
                    (2.0 * beta[2] as f64 + 1.0) / denom,
                    (2.0 * beta[3] as f64 + 1.0) / denom,
                ];
                points.push(p);
                weights.push(w);
            }
        }
        QuadratureRule { order: deg, points, weights }
    }

    /// Rule exact for polynomials of degree at least `order`; orders 2, 4 and
    /// 6 map to Grundmann-Moeller indices 1, 2 and 3.
    pub fn for_order(order: usize) -> Self {
        let s = order / 2; // degree 2s+1 >= order for even order
        Self::grundmann_moeller(s.max(1))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre points and weights on [0,1], 4 points (degree 7).
pub fn gauss_legendre_unit_4() -> ([f64; 4], [f64; 4]) {
    // nodes/weights on [-1,1] mapped to [0,1]
    let x1 = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    let x2 = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
    let w1 = (18.0 + 30.0f64.sqrt()) / 36.0;
    let w2 = (18.0 - 30.0f64.sqrt()) / 36.0;
    (
        [0.5 * (1.0 - x2), 0.5 * (1.0 - x1), 0.5 * (1.0 + x1), 0.5 * (1.0 + x2)],
        [0.5 * w2, 0.5 * w1, 0.5 * w1, 0.5 * w2],
    )
}

/// Exact integral of x^a y^b z^c over the reference tetrahedron.
pub fn monomial_integral_ref_tet(a: usize, b: usize, c: usize) -> f64 {
    factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_reference_volume() {
        for order in [2, 4, 6] {
            let rule = QuadratureRule::for_order(order);
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 1.0 / 6.0).abs() < 1e-14, "order {order}: sum {sum}");
        }
    }

    #[test]
    fn exactness_up_to_declared_degree() {
        for order in [2usize, 4, 6] {
            let rule = QuadratureRule::for_order(order);
            for a in 0..=order {
                for b in 0..=(order - a) {
                    for c in 0..=(order - a - b) {
                        let approx: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32) * p[3].powi(c as i32))
                            .sum();
                        let exact = monomial_integral_ref_tet(a, b, c);
                        assert!(
                            (approx - exact).abs() < 1e-14,
                            "order {order} monomial ({a},{b},{c}): {approx} vs {exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gauss_edge_rule_integrates_cubics() {
        let (x, w) = gauss_legendre_unit_4();
        for p in 0..=7usize {
            let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
            let exact = 1.0 / (p as f64 + 1.0);
            assert!((approx - exact).abs() < 1e-14);
        }
    }
}
