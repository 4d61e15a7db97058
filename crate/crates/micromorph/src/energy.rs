//! Energy densities of the relaxed micromorphic model and their gradients.
//!
//! The linear density is
//! `W(x,Q) = 1/2<C_e sym(F-P), sym(F-P)> + 1/2<C_micro sym P, sym P> + 1/2<L_c C, C>`
//! with `Q = (F, P, C)` standing for `(Du, P, Curl P)`. The physically
//! nonlinear variant replaces the quadratic curl term by
//! `alpha ||C||^q + 1/2 ||C||^2` with `1 < q < 2`. The structural conditions
//! on `W` (Lipschitz x-dependence, linear gradient growth, uniform convexity)
//! are exposed as sampling-based checks.

use crate::fespace::{FieldP, FieldU, H1VectorSpace, HCurlTensorSpace};
use crate::geometry::{Mesh, Vec3};
use crate::{Error, Result};
use nalgebra::Matrix3;

/// Scalar-times-identity coefficient tensor with affine spatial dependence:
/// `A(x) M = (c0 + <grad, x>) M`. Minor symmetry and the symmetry condition
/// hold trivially; positivity must be checked at sampled points.
#[derive(Debug, Clone, Copy)]
pub struct TensorCoefficient {
    pub c0: f64,
    pub grad: Vec3,
}

impl TensorCoefficient {
    pub fn constant(c0: f64) -> Self {
        TensorCoefficient { c0, grad: Vec3::zeros() }
    }

    pub fn affine(c0: f64, grad: Vec3) -> Self {
        TensorCoefficient { c0, grad }
    }

    pub fn scale(&self, x: &Vec3) -> f64 {
        self.c0 + self.grad.dot(x)
    }

    pub fn apply(&self, x: &Vec3, m: &Matrix3<f64>) -> Matrix3<f64> {
        m * self.scale(x)
    }

    /// Lipschitz constant of x -> A(x) in operator norm.
    pub fn lipschitz(&self) -> f64 {
        self.grad.norm()
    }

    pub fn is_positive_at(&self, x: &Vec3) -> bool {
        self.scale(x) > 0.0
    }

    /// Pointwise sum of two coefficients (both scalar multiples of identity).
    pub fn sum(&self, other: &TensorCoefficient) -> TensorCoefficient {
        TensorCoefficient { c0: self.c0 + other.c0, grad: self.grad + other.grad }
    }
}

/// Coefficient triple of the linear model.
#[derive(Debug, Clone, Copy)]
pub struct LinearCoefficients {
    pub c_e: TensorCoefficient,
    pub c_micro: TensorCoefficient,
    pub l_c: TensorCoefficient,
}

impl LinearCoefficients {
    pub fn identity() -> Self {
        LinearCoefficients {
            c_e: TensorCoefficient::constant(1.0),
            c_micro: TensorCoefficient::constant(1.0),
            l_c: TensorCoefficient::constant(1.0),
        }
    }

    /// Positivity of all three tensors at a sampled point.
    pub fn check_positive_at(&self, x: &Vec3) -> Result<()> {
        if self.c_e.is_positive_at(x) && self.c_micro.is_positive_at(x) && self.l_c.is_positive_at(x)
        {
            Ok(())
        } else {
            Err(Error::NonPositiveCoefficient([x[0], x[1], x[2]]))
        }
    }

    /// Combined Lipschitz constant of the coefficient fields.
    pub fn lipschitz(&self) -> f64 {
        self.c_e.lipschitz() + self.c_micro.lipschitz() + self.l_c.lipschitz()
    }
}

/// Parameters of the nonlinear curl term `alpha ||C||^q`.
#[derive(Debug, Clone, Copy)]
pub struct NonlinearParams {
    pub q: f64,
    pub alpha: f64,
}

impl NonlinearParams {
    pub fn new(q: f64, alpha: f64) -> Result<Self> {
        if !(1.0 < q && q < 2.0) {
            return Err(Error::ConfigError(format!("q must lie in (1,2), got {q}")));
        }
        if alpha < 0.0 {
            return Err(Error::ConfigError(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(NonlinearParams { q, alpha })
    }

    /// Canonical choice alpha = 1/q.
    pub fn canonical(q: f64) -> Result<Self> {
        Self::new(q, 1.0 / q)
    }
}

/// Material model selector.
#[derive(Debug, Clone, Copy)]
pub enum MaterialModel {
    Linear(LinearCoefficients),
    Nonlinear(NonlinearParams),
}

impl MaterialModel {
    pub fn w(&self, x: &Vec3, state: &StateTriple) -> f64 {
        match self {
            MaterialModel::Linear(c) => w_linear(x, state, c),
            MaterialModel::Nonlinear(p) => w_nonlinear(state, p),
        }
    }

    pub fn dw(&self, x: &Vec3, state: &StateTriple) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
        match self {
            MaterialModel::Linear(c) => dw_linear(x, state, c),
            MaterialModel::Nonlinear(p) => dw_nonlinear(state, p),
        }
    }
}

/// A state `Q = (F, P, C)`; `F` and `C` are placeholders for `Du` and
/// `Curl P`.
#[derive(Debug, Clone, Copy)]
pub struct StateTriple {
    pub f: Matrix3<f64>,
    pub p: Matrix3<f64>,
    pub c: Matrix3<f64>,
}

impl StateTriple {
    pub fn zero() -> Self {
        StateTriple { f: Matrix3::zeros(), p: Matrix3::zeros(), c: Matrix3::zeros() }
    }

    pub fn norm(&self) -> f64 {
        (self.f.norm_squared() + self.p.norm_squared() + self.c.norm_squared()).sqrt()
    }
}

pub fn sym(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Linear density.
pub fn w_linear(x: &Vec3, state: &StateTriple, coeffs: &LinearCoefficients) -> f64 {
    let e = sym(&(state.f - state.p));
    let sp = sym(&state.p);
    0.5 * coeffs.c_e.scale(x) * e.norm_squared()
        + 0.5 * coeffs.c_micro.scale(x) * sp.norm_squared()
        + 0.5 * coeffs.l_c.scale(x) * state.c.norm_squared()
}

/// Gradient of the linear density with respect to `(F, P, C)`.
pub fn dw_linear(
    x: &Vec3,
    state: &StateTriple,
    coeffs: &LinearCoefficients,
) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let e = sym(&(state.f - state.p)) * coeffs.c_e.scale(x);
    let sp = sym(&state.p) * coeffs.c_micro.scale(x);
    let dc = state.c * coeffs.l_c.scale(x);
    (e, -e + sp, dc)
}

/// Nonlinear density; the coefficient tensors are identities here.
pub fn w_nonlinear(state: &StateTriple, params: &NonlinearParams) -> f64 {
    let e = sym(&(state.f - state.p));
    let sp = sym(&state.p);
    let cn = state.c.norm();
    0.5 * e.norm_squared() + 0.5 * sp.norm_squared() + params.alpha * cn.powf(params.q)
        + 0.5 * cn * cn
}

/// Gradient of the nonlinear density. The `q`-term gradient is extended by 0
/// at `C = 0`, the unique continuous extension for `q > 1`.
pub fn dw_nonlinear(
    state: &StateTriple,
    params: &NonlinearParams,
) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let e = sym(&(state.f - state.p));
    let sp = sym(&state.p);
    let cn = state.c.norm();
    // the q-term gradient extends continuously by zero at C = 0; treat
    // roundoff-scale norms as exactly zero, since ||C||^{q-2} C evaluated
    // on noise of size 1e-15 would otherwise fabricate gradient components
    // of size ~ alpha q 1e-15^{q-1} (far above machine epsilon for q < 2)
    let qfactor = if cn > 1e-13 {
        params.q * params.alpha * cn.powf(params.q - 2.0)
    } else {
        0.0
    };
    let dc = state.c * (qfactor + 1.0);
    (e, -e + sp, dc)
}

/// Observed Lipschitz constant of `x -> W(x, Q)` over sample triples
/// `(x, y, Q)`: the maximum of `|W(x,Q) - W(y,Q)| / (|x-y| (1 + ||Q||^2))`.
pub fn check_w1_lipschitz(model: &MaterialModel, samples: &[(Vec3, Vec3, StateTriple)]) -> f64 {
    let mut observed: f64 = 0.0;
    for (x, y, state) in samples {
        let dx = (x - y).norm();
        if dx == 0.0 {
            continue;
        }
        let dw = (model.w(x, state) - model.w(y, state)).abs();
        observed = observed.max(dw / (dx * (1.0 + state.norm().powi(2))));
    }
    observed
}

/// Empirical uniform-convexity constant over discrete trial pairs:
/// `min [W(v,Q) - W(u,P) - <DW(u,P), (v-u, Q-P)>] / (||v-u||_H1^2 + ||Q-P||_Hcurl^2)`.
/// Pairs with vanishing denominator are skipped.
pub fn check_convexity_gap(
    model: &MaterialModel,
    mesh: &Mesh,
    u_space: &H1VectorSpace,
    p_space: &HCurlTensorSpace,
    pairs: &[((FieldU, FieldP), (FieldU, FieldP))],
) -> Result<f64> {
    let functional = crate::solve::DiscreteEnergy::new(mesh, u_space, p_space, *model);
    let mut gap = f64::INFINITY;
    for ((u, p), (v, q)) in pairs {
        let du: Vec<f64> = v.coeffs.iter().zip(&u.coeffs).map(|(a, b)| a - b).collect();
        let dp: Vec<f64> = q.coeffs.iter().zip(&p.coeffs).map(|(a, b)| a - b).collect();
        let denom = crate::fespace::norm_h1(mesh, &FieldU { coeffs: du.clone() }).powi(2)
            + crate::fespace::norm_hcurl(mesh, &FieldP { coeffs: dp.clone() }).powi(2);
        if denom < 1e-28 {
            continue;
        }
        let (gu, gp) = functional.internal_gradient(u, p);
        let directional = crate::sparse::dot(&gu, &du) + crate::sparse::dot(&gp, &dp);
        let excess = functional.internal_energy(v, q) - functional.internal_energy(u, p) - directional;
        gap = gap.min(excess / denom);
    }
    if gap <= 0.0 {
        return Err(Error::NonPositiveGap(gap));
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix<R: Rng>(rng: &mut R) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_state<R: Rng>(rng: &mut R) -> StateTriple {
        StateTriple { f: random_matrix(rng), p: random_matrix(rng), c: random_matrix(rng) }
    }

    /// Central finite differences of a scalar function of (F, P, C).
    pub(crate) fn fd_gradient(
        w: impl Fn(&StateTriple) -> f64,
        state: &StateTriple,
        step: f64,
    ) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
        let mut out = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
        for slot in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut sp = *state;
                    let mut sm = *state;
                    let (p, m, o) = match slot {
                        0 => (&mut sp.f, &mut sm.f, &mut out.0),
                        1 => (&mut sp.p, &mut sm.p, &mut out.1),
                        _ => (&mut sp.c, &mut sm.c, &mut out.2),
                    };
                    p[(i, j)] += step;
                    m[(i, j)] -= step;
                    o[(i, j)] = (w(&sp) - w(&sm)) / (2.0 * step);
                }
            }
        }
        out
    }

    #[test]
    fn zero_state_energies_and_gradients() {
        let x = Vec3::new(0.3, 0.4, 0.5);
        let coeffs = LinearCoefficients::identity();
        let params = NonlinearParams::canonical(1.5).unwrap();
        let zero = StateTriple::zero();
        assert_eq!(w_linear(&x, &zero, &coeffs), 0.0);
        assert_eq!(w_nonlinear(&zero, &params), 0.0);
        let (df, dp, dc) = dw_linear(&x, &zero, &coeffs);
        assert_eq!(df.norm() + dp.norm() + dc.norm(), 0.0);
        let (_, _, dc) = dw_nonlinear(&zero, &params);
        assert_eq!(dc.norm(), 0.0);
    }

    #[test]
    fn linear_density_identity_coefficients() {
        let x = Vec3::zeros();
        let coeffs = LinearCoefficients::identity();
        let s = StateTriple { f: Matrix3::identity(), p: Matrix3::zeros(), c: Matrix3::zeros() };
        assert!((w_linear(&x, &s, &coeffs) - 1.5).abs() < 1e-15);
        let (df, dp, dc) = dw_linear(&x, &s, &coeffs);
        assert!((df - Matrix3::identity()).norm() < 1e-15);
        assert!((dp + Matrix3::identity()).norm() < 1e-15);
        assert!(dc.norm() < 1e-15);

        // sym of a skew matrix vanishes
        let mut skew = Matrix3::zeros();
        skew[(0, 1)] = 1.0;
        skew[(1, 0)] = -1.0;
        let s = StateTriple { f: skew, p: skew, c: Matrix3::zeros() };
        assert_eq!(w_linear(&x, &s, &coeffs), 0.0);
    }

    #[test]
    fn nonlinear_density_values() {
        let params = NonlinearParams::canonical(1.5).unwrap();
        let mut c = Matrix3::zeros();
        c[(0, 0)] = 1.0;
        let s = StateTriple { f: Matrix3::zeros(), p: Matrix3::zeros(), c };
        assert!((w_nonlinear(&s, &params) - (2.0 / 3.0 + 0.5)).abs() < 1e-15);

        // ||C|| = 4, q = 1.5, alpha = 1: dC W = (1.5 * 4^-0.5 + 1) C = 1.75 C
        let params = NonlinearParams::new(1.5, 1.0).unwrap();
        let c = Matrix3::identity() * (4.0 / 3.0f64.sqrt());
        let s = StateTriple { f: Matrix3::zeros(), p: Matrix3::zeros(), c };
        let (_, _, dc) = dw_nonlinear(&s, &params);
        assert!((dc - c * 1.75).norm() < 1e-12);
    }

    #[test]
    fn nonlinear_growth_bound() {
        // W(Q) <= ||F||^2 + 3/2 ||P||^2 + const + (q/2 + 1/2) ||C||^2
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = 1.5;
        let params = NonlinearParams::canonical(q).unwrap();
        let konst = (2.0 - q) / 2.0 * (1.0f64 / q).powf(2.0 / (2.0 - q));
        for _ in 0..10_000 {
            let s = random_state(&mut rng);
            let bound = s.f.norm_squared()
                + 1.5 * s.p.norm_squared()
                + konst
                + (q / 2.0 + 0.5) * s.c.norm_squared();
            assert!(w_nonlinear(&s, &params) <= bound + 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coeffs = LinearCoefficients {
            c_e: TensorCoefficient::affine(1.0, Vec3::new(0.5, 0.0, 0.0)),
            c_micro: TensorCoefficient::constant(2.0),
            l_c: TensorCoefficient::constant(0.7),
        };
        let params = NonlinearParams::canonical(1.5).unwrap();
        let x = Vec3::new(0.2, 0.7, 0.4);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            let (af, ap, ac) = dw_linear(&x, &s, &coeffs);
            let (ff, fp, fc) = fd_gradient(|t| w_linear(&x, t, &coeffs), &s, 1e-5);
            let scale = 1.0 + s.norm();
            assert!((af - ff).norm() / scale < 1e-7);
            assert!((ap - fp).norm() / scale < 1e-7);
            assert!((ac - fc).norm() / scale < 1e-7);
            if s.c.norm() >= 0.1 {
                let (nf, np, nc) = dw_nonlinear(&s, &params);
                let (gf, gp, gc) = fd_gradient(|t| w_nonlinear(t, &params), &s, 1e-5);
                assert!((nf - gf).norm() / scale < 1e-6);
                assert!((np - gp).norm() / scale < 1e-6);
                assert!((nc - gc).norm() / scale < 1e-6);
            }
        }
    }

    #[test]
    fn gradient_growth_bound() {
        // ||DW(Q)|| <= c2 (1 + ||Q||)
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let coeffs = LinearCoefficients::identity();
        let params = NonlinearParams::canonical(1.5).unwrap();
        let x = Vec3::new(0.5, 0.5, 0.5);
        let c2 = 4.0;
        for _ in 0..10_000 {
            let s = random_state(&mut rng);
            for model in [MaterialModel::Linear(coeffs), MaterialModel::Nonlinear(params)] {
                let (df, dp, dc) = model.dw(&x, &s);
                let norm = (df.norm_squared() + dp.norm_squared() + dc.norm_squared()).sqrt();
                assert!(norm <= c2 * (1.0 + s.norm()));
            }
        }
    }

    #[test]
    fn q_term_gradient_vanishes_at_origin_like_t_to_q_minus_1() {
        let params = NonlinearParams::new(1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dir = random_matrix(&mut rng).normalize();
        // |W(tD) - W(0)| / t ~ alpha t^{q-1}: fit the decay exponent
        let mut logs = Vec::new();
        for k in 1..=6 {
            let t = 0.5f64.powi(k);
            let s = StateTriple { f: Matrix3::zeros(), p: Matrix3::zeros(), c: dir * t };
            let quotient = (s.c.norm().powf(params.q)) / t; // the q-term's difference quotient
            let w = w_nonlinear(&s, &params) - 0.5 * t * t;
            assert!((w - quotient * t).abs() < 1e-14);
            logs.push((t.ln(), quotient.ln()));
        }
        let slope = slope_fit(&logs);
        assert!((slope - (params.q - 1.0)).abs() < 1e-10);
    }

    pub(crate) fn slope_fit(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn w1_lipschitz_observed_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let constant = MaterialModel::Linear(LinearCoefficients::identity());
        let affine = MaterialModel::Linear(LinearCoefficients {
            c_e: TensorCoefficient::affine(1.0, Vec3::new(0.5, 0.0, 0.0)),
            c_micro: TensorCoefficient::constant(1.0),
            l_c: TensorCoefficient::constant(1.0),
        });
        let nonlinear = MaterialModel::Nonlinear(NonlinearParams::canonical(1.5).unwrap());
        let samples: Vec<(Vec3, Vec3, StateTriple)> = (0..500)
            .map(|_| {
                let x = Vec3::new(rng.random(), rng.random(), rng.random());
                let y = Vec3::new(rng.random(), rng.random(), rng.random());
                (x, y, random_state(&mut rng))
            })
            .collect();
        assert_eq!(check_w1_lipschitz(&constant, &samples), 0.0);
        assert_eq!(check_w1_lipschitz(&nonlinear, &samples), 0.0);
        let observed = check_w1_lipschitz(&affine, &samples);
        assert!(observed > 0.0 && observed <= 0.5 + 1e-12, "observed {observed}");
    }
}
