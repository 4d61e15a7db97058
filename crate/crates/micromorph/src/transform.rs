//! Inner variations and their pullbacks.
//!
//! For a radial cutoff `phi` and a shift `h` the inner variation is
//! `T_h(x) = x + phi(x) h` with `DT_h = I + h (x) grad phi` and
//! `det DT_h = 1 + <h, grad phi>`. For `|h| <= delta = 1/(2 ||grad phi||_oo)`
//! the map is a bi-Lipschitz bijection with `det DT_h >= 1/2`; the inverse
//! `S_h` is computed by the fixed point `x <- y - phi(x) h`, a contraction
//! with rate `||grad phi||_oo |h| <= 1/2`.
//!
//! Tensor fields pull back covariantly, `tau_h(Q)(x) = Q(T_h x) DT_h(x)`,
//! which preserves row-wise tangential traces and satisfies the curl
//! identity `Curl tau_h(Q) = det DT_h ((Curl Q) o T_h) DT_h^{-T}`. Test
//! functions pull back by the row-wise Piola transform
//! `piola_h(M)(y) = det DS_h(y) M(S_h y) DS_h(y)^{-T}`, which satisfies
//! `Div piola_h(M) = det DS_h (Div M) o S_h` and is the adjoint of `tau_h`
//! in the `L^2` pairing.

use crate::geometry::{DomainSpec, Mesh, Vec3};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result};
use nalgebra::Matrix3;
use rand::Rng;

/// Radial quintic cutoff: identically one on `|x - center| <= radius/2`,
/// identically zero outside `|x - center| >= radius`, C^2 across both
/// junction spheres, with `||grad phi||_oo = 3.75 / radius`.
#[derive(Debug, Clone, Copy)]
pub struct CutoffSpec {
    pub center: Vec3,
    pub radius: f64,
}

fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

fn smoothstep5_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

impl CutoffSpec {
    pub fn new(center: Vec3, radius: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::ConfigError(format!("cutoff radius must be positive, got {radius}")));
        }
        Ok(CutoffSpec { center, radius })
    }

    pub fn phi(&self, x: &Vec3) -> f64 {
        let s = (x - self.center).norm() / self.radius;
        1.0 - smoothstep5(2.0 * s - 1.0)
    }

    pub fn grad_phi(&self, x: &Vec3) -> Vec3 {
        let d = x - self.center;
        let n = d.norm();
        if n == 0.0 {
            return Vec3::zeros();
        }
        let s = n / self.radius;
        let dpsi = -2.0 * smoothstep5_deriv(2.0 * s - 1.0) / self.radius;
        d * (dpsi / n)
    }

    /// Exact supremum of `|grad phi|`: the quintic step has maximal slope
    /// 15/8 at its midpoint, and the chain rule contributes `2 / radius`.
    pub fn grad_sup(&self) -> f64 {
        3.75 / self.radius
    }
}

/// A validated inner variation `T_h(x) = x + phi(x) h`.
#[derive(Debug, Clone, Copy)]
pub struct InnerVariation {
    pub cutoff: CutoffSpec,
    pub h: Vec3,
    /// `delta = 1/(2 ||grad phi||_oo)`; bi-Lipschitz bijectivity threshold
    pub delta: f64,
    /// admissible shift length `h0 = min(delta, rho)`
    pub h0: f64,
}

impl InnerVariation {
    pub fn new(cutoff: CutoffSpec, h: Vec3, rho: f64) -> Result<Self> {
        let delta = 0.5 / cutoff.grad_sup();
        let h0 = delta.min(rho);
        if h.norm() > h0 {
            return Err(Error::ConfigError(format!(
                "shift length {} exceeds the admissible h0 = {h0}",
                h.norm()
            )));
        }
        Ok(InnerVariation { cutoff, h, delta, h0 })
    }

    pub fn t(&self, x: &Vec3) -> Vec3 {
        x + self.h * self.cutoff.phi(x)
    }

    pub fn dt(&self, x: &Vec3) -> Matrix3<f64> {
        let g = self.cutoff.grad_phi(x);
        Matrix3::identity() + self.h * g.transpose()
    }

    pub fn det_dt(&self, x: &Vec3) -> f64 {
        1.0 + self.h.dot(&self.cutoff.grad_phi(x))
    }

    /// Closed-form inverse of the rank-one perturbation:
    /// `(I + h g^T)^{-1} = I - h g^T / (1 + <h, g>)`.
    pub fn inv_dt(&self, x: &Vec3) -> Matrix3<f64> {
        let g = self.cutoff.grad_phi(x);
        Matrix3::identity() - self.h * g.transpose() / (1.0 + self.h.dot(&g))
    }

    /// Inverse map by fixed-point iteration.
    pub fn s(&self, y: &Vec3) -> Vec3 {
        let mut x = *y;
        for _ in 0..200 {
            let next = y - self.h * self.cutoff.phi(&x);
            if (next - x).norm() < 1e-14 {
                return next;
            }
            x = next;
        }
        x
    }

    pub fn det_ds(&self, y: &Vec3) -> f64 {
        1.0 / self.det_dt(&self.s(y))
    }

    /// Covariant pullback `tau_h(Q)(x) = Q(T_h x) DT_h(x)`.
    pub fn tau<'a>(
        &'a self,
        q: &'a dyn Fn(&Vec3) -> Matrix3<f64>,
    ) -> impl Fn(&Vec3) -> Matrix3<f64> + 'a {
        move |x| q(&self.t(x)) * self.dt(x)
    }

    /// Row-wise Piola pullback
    /// `piola_h(M)(y) = det DS_h(y) M(S_h y) DS_h(y)^{-T}`,
    /// written through `T_h` at `x = S_h(y)` as `M(x) DT_h(x)^T / det DT_h(x)`.
    pub fn piola<'a>(
        &'a self,
        m: &'a dyn Fn(&Vec3) -> Matrix3<f64>,
    ) -> impl Fn(&Vec3) -> Matrix3<f64> + 'a {
        move |y| {
            let x = self.s(y);
            m(&x) * self.dt(&x).transpose() / self.det_dt(&x)
        }
    }

    /// Difference quotient `(tau_h(Q) - Q) / |h|`.
    pub fn diff_quotient<'a>(
        &'a self,
        q: &'a dyn Fn(&Vec3) -> Matrix3<f64>,
    ) -> impl Fn(&Vec3) -> Matrix3<f64> + 'a {
        let hn = self.h.norm().max(1e-300);
        move |x| (q(&self.t(x)) * self.dt(x) - q(x)) / hn
    }
}

/// Extend a field by zero outside the closed domain.
pub fn extend_by_zero<'a>(
    domain: &'a DomainSpec,
    f: impl Fn(&Vec3) -> Matrix3<f64> + 'a,
) -> impl Fn(&Vec3) -> Matrix3<f64> + 'a {
    move |x| {
        if domain.contains_closure(x, 1e-12) {
            f(x)
        } else {
            Matrix3::zeros()
        }
    }
}

/// Empirical record of the mapping properties of an inner variation.
#[derive(Debug, Clone, Copy)]
pub struct MappingCheck {
    /// samples of `T_h(x)` escaping the closed domain
    pub escapes: usize,
    pub min_det: f64,
    pub max_det: f64,
    /// worst `|S_h(T_h(x)) - x|`
    pub max_roundtrip: f64,
    /// `sup ||DT_h - I|| / |h|`; at most (and for dense sampling close to)
    /// `||grad phi||_oo`
    pub sup_dt_ratio: f64,
}

/// Sample interior points and verify domain preservation, the determinant
/// bounds, invertibility and the uniform derivative bound.
pub fn check_mapping<R: Rng>(
    iv: &InnerVariation,
    domain: &DomainSpec,
    n_samples: usize,
    rng: &mut R,
) -> MappingCheck {
    let (lo, hi) = domain.bounding_box();
    let mut out = MappingCheck {
        escapes: 0,
        min_det: f64::INFINITY,
        max_det: f64::NEG_INFINITY,
        max_roundtrip: 0.0,
        sup_dt_ratio: 0.0,
    };
    let hn = iv.h.norm().max(1e-300);
    let mut accepted = 0;
    while accepted < n_samples {
        let x = Vec3::new(
            lo[0] + rng.random::<f64>() * (hi[0] - lo[0]),
            lo[1] + rng.random::<f64>() * (hi[1] - lo[1]),
            lo[2] + rng.random::<f64>() * (hi[2] - lo[2]),
        );
        if !domain.contains(&x) {
            continue;
        }
        accepted += 1;
        let y = iv.t(&x);
        if !domain.contains_closure(&y, 1e-12) {
            out.escapes += 1;
        }
        let det = iv.det_dt(&x);
        out.min_det = out.min_det.min(det);
        out.max_det = out.max_det.max(det);
        out.max_roundtrip = out.max_roundtrip.max((iv.s(&y) - x).norm());
        let dev = (iv.dt(&x) - Matrix3::identity()).norm();
        out.sup_dt_ratio = out.sup_dt_ratio.max(dev / hn);
    }
    out
}

/// 4th-order central difference of a scalar function along direction `d`.
fn fd4(f: impl Fn(f64) -> f64, step: f64) -> f64 {
    (8.0 * (f(step) - f(-step)) - (f(2.0 * step) - f(-2.0 * step))) / (12.0 * step)
}

/// Row-wise curl of a tensor field by 4th-order finite differences.
pub fn fd_curl(f: &dyn Fn(&Vec3) -> Matrix3<f64>, x: &Vec3, step: f64) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for (d, (a, b)) in [(1usize, 2usize), (2, 0), (0, 1)].iter().enumerate() {
            let mut ea = Vec3::zeros();
            let mut eb = Vec3::zeros();
            ea[*a] = 1.0;
            eb[*b] = 1.0;
            out[(i, d)] = fd4(|t| f(&(x + ea * t))[(i, *b)], step)
                - fd4(|t| f(&(x + eb * t))[(i, *a)], step);
        }
    }
    out
}

/// Row-wise divergence of a tensor field by 4th-order finite differences.
pub fn fd_div(f: &dyn Fn(&Vec3) -> Matrix3<f64>, x: &Vec3, step: f64) -> Vec3 {
    let mut out = Vec3::zeros();
    for j in 0..3 {
        let mut e = Vec3::zeros();
        e[j] = 1.0;
        for i in 0..3 {
            out[i] += fd4(|t| f(&(x + e * t))[(i, j)], step);
        }
    }
    out
}

/// Keep finite-difference stencils away from the two junction spheres of
/// the cutoff, where `phi` is only C^2.
pub fn safe_for_stencil(iv: &InnerVariation, x: &Vec3, margin: f64) -> bool {
    let check = |p: &Vec3| {
        let s = (p - iv.cutoff.center).norm() / iv.cutoff.radius;
        (s - 0.5).abs() > margin && (s - 1.0).abs() > margin
    };
    check(x) && check(&iv.t(x))
}

/// Worst pointwise residual of the curl identity
/// `Curl tau_h(Q) = det DT_h ((Curl Q) o T_h) DT_h^{-T}` over the samples.
/// `q` and `curl_q` must be smooth closed forms (no extension by zero).
pub fn check_curl_identity(
    iv: &InnerVariation,
    q: &dyn Fn(&Vec3) -> Matrix3<f64>,
    curl_q: &dyn Fn(&Vec3) -> Matrix3<f64>,
    samples: &[Vec3],
    fd_step: f64,
) -> f64 {
    let pulled = iv.tau(q);
    let mut worst = 0.0f64;
    for x in samples {
        let lhs = fd_curl(&pulled, x, fd_step);
        let rhs = curl_q(&iv.t(x)) * iv.inv_dt(x).transpose() * iv.det_dt(x);
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

/// Worst pointwise residual of the divergence identity
/// `Div piola_h(M) = det DS_h (Div M) o S_h` over the samples.
pub fn check_div_identity(
    iv: &InnerVariation,
    m: &dyn Fn(&Vec3) -> Matrix3<f64>,
    div_m: &dyn Fn(&Vec3) -> Vec3,
    samples: &[Vec3],
    fd_step: f64,
) -> f64 {
    let pulled = iv.piola(m);
    let mut worst = 0.0f64;
    for y in samples {
        let lhs = fd_div(&pulled, y, fd_step);
        let rhs = div_m(&iv.s(y)) * iv.det_ds(y);
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

fn integrate_pairing(
    mesh: &Mesh,
    a: &dyn Fn(&Vec3) -> Matrix3<f64>,
    b: &dyn Fn(&Vec3) -> Matrix3<f64>,
    rule: &QuadratureRule,
) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.n_tets() {
        let tet = &mesh.tets[t];
        let vol = mesh.geom[t].volume;
        for (q, l) in rule.points.iter().enumerate() {
            let mut x = Vec3::zeros();
            for i in 0..4 {
                x += mesh.vertices[tet[i]] * l[i];
            }
            let w = 6.0 * vol * rule.weights[q];
            acc += w * a(&x).component_mul(&b(&x)).sum();
        }
    }
    acc
}

/// Both sides of the adjointness relation
/// `int <tau_h(Q), M> = int <Q, piola_h(M)>` integrated with the given
/// rule; returns `(lhs, rhs, relative difference)`.
pub fn check_adjoint(
    iv: &InnerVariation,
    mesh: &Mesh,
    q: &dyn Fn(&Vec3) -> Matrix3<f64>,
    m: &dyn Fn(&Vec3) -> Matrix3<f64>,
    rule: &QuadratureRule,
) -> (f64, f64, f64) {
    let tau_q = iv.tau(q);
    let piola_m = iv.piola(m);
    let lhs = integrate_pairing(mesh, &tau_q, m, rule);
    let rhs = integrate_pairing(mesh, q, &piola_m, rule);
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    (lhs, rhs, (lhs - rhs).abs() / scale)
}

/// Lemma-style pairing bound: the normalized ratio
/// `|int <Q - tau_h(Q), M>| / (|h| ||Q||_Hcurl ||M||_Hdiv)`, which must stay
/// bounded as `|h| -> 0`.
#[allow(clippy::too_many_arguments)]
pub fn divcurl_pairing_ratio(
    iv: &InnerVariation,
    mesh: &Mesh,
    q: &dyn Fn(&Vec3) -> Matrix3<f64>,
    m: &dyn Fn(&Vec3) -> Matrix3<f64>,
    norm_q_hcurl: f64,
    norm_m_hdiv: f64,
    rule: &QuadratureRule,
) -> f64 {
    let tau_q = iv.tau(q);
    let diff = |x: &Vec3| q(x) - tau_q(x);
    let lhs = integrate_pairing(mesh, &diff, m, rule).abs();
    lhs / (iv.h.norm() * norm_q_hcurl * norm_m_hdiv).max(1e-300)
}

/// L2 norm of an analytic tensor field over the mesh.
pub fn field_l2(mesh: &Mesh, f: &dyn Fn(&Vec3) -> Matrix3<f64>, rule: &QuadratureRule) -> f64 {
    integrate_pairing(mesh, f, f, rule).sqrt()
}

/// L2 norm of an analytic vector field over the mesh.
pub fn vector_field_l2(mesh: &Mesh, f: &dyn Fn(&Vec3) -> Vec3, rule: &QuadratureRule) -> f64 {
    let as_tensor = |x: &Vec3| {
        let v = f(x);
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, 0)] = v[i];
        }
        m
    };
    integrate_pairing(mesh, &as_tensor, &as_tensor, rule).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_mesh;
    use crate::solve::manufactured::{self, Manufactured};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_cutoff() -> CutoffSpec {
        CutoffSpec::new(Vec3::new(0.5, 0.5, 0.0), 0.5).unwrap()
    }

    fn interior_samples(iv: &InnerVariation, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vec3::new(
                0.05 + 0.9 * rng.random::<f64>(),
                0.05 + 0.9 * rng.random::<f64>(),
                0.05 + 0.9 * rng.random::<f64>(),
            );
            if safe_for_stencil(iv, &x, 0.05) {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn cutoff_plateau_support_and_slope() {
        let c = sample_cutoff();
        assert_eq!(c.phi(&c.center), 1.0);
        assert_eq!(c.phi(&(c.center + Vec3::new(0.2, 0.0, 0.0))), 1.0);
        assert_eq!(c.phi(&(c.center + Vec3::new(0.0, 0.55, 0.0))), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut sup = 0.0f64;
        for _ in 0..20_000 {
            let x = c.center
                + Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ) * 2.0
                    * c.radius;
            let g = c.grad_phi(&x);
            sup = sup.max(g.norm());
            // finite-difference check of the gradient
            let h = 1e-6;
            for d in 0..3 {
                let mut e = Vec3::zeros();
                e[d] = 1.0;
                let fd = (c.phi(&(x + e * h)) - c.phi(&(x - e * h))) / (2.0 * h);
                assert!((g[d] - fd).abs() < 1e-7, "{x:?}");
            }
        }
        assert!(sup <= c.grad_sup() + 1e-12);
        assert!(sup > 0.99 * c.grad_sup(), "sampled sup {sup} vs {}", c.grad_sup());
    }

    #[test]
    fn admissible_shift_is_enforced() {
        let c = sample_cutoff();
        // delta = radius / 7.5 = 1/15
        let iv = InnerVariation::new(c, Vec3::new(0.0, 0.0, 0.05), 0.1).unwrap();
        assert!((iv.delta - 1.0 / 15.0).abs() < 1e-15);
        assert!((iv.h0 - 1.0 / 15.0).abs() < 1e-15);
        assert!(InnerVariation::new(c, Vec3::new(0.0, 0.0, 0.07), 0.1).is_err());
        assert!(InnerVariation::new(c, Vec3::new(0.0, 0.0, 0.05), 0.01).is_err());
    }

    #[test]
    fn jacobian_determinant_inverse_and_fixed_point() {
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, Vec3::new(0.01, -0.02, 0.05), 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let x = Vec3::new(rng.random(), rng.random(), rng.random());
            let dt = iv.dt(&x);
            // closed-form determinant vs matrix determinant
            assert!((iv.det_dt(&x) - dt.determinant()).abs() < 1e-14);
            assert!(iv.det_dt(&x) >= 0.5);
            assert!((iv.inv_dt(&x) * dt - Matrix3::identity()).norm() < 1e-13);
            // finite-difference Jacobian
            let h = 1e-6;
            for d in 0..3 {
                let mut e = Vec3::zeros();
                e[d] = 1.0;
                let col = (iv.t(&(x + e * h)) - iv.t(&(x - e * h))) / (2.0 * h);
                for r in 0..3 {
                    assert!((dt[(r, d)] - col[r]).abs() < 1e-7);
                }
            }
            // round trip through the fixed-point inverse
            assert!((iv.s(&iv.t(&x)) - x).norm() < 1e-12);
        }
    }

    #[test]
    fn boundary_variation_preserves_the_cube() {
        // inward shift (opposite the exterior cone axis) at a face center
        let domain = DomainSpec::UnitCube;
        let cone = domain.exterior_cone(&Vec3::new(0.5, 0.5, 0.0)).unwrap();
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, -cone.axis * 0.05, cone.rho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let check = check_mapping(&iv, &domain, 20_000, &mut rng);
        assert_eq!(check.escapes, 0);
        assert!(check.min_det >= 0.5);
        assert!(check.max_roundtrip < 1e-12);
        // est:Th-style uniform bound, attained up to sampling resolution
        assert!(check.sup_dt_ratio <= c.grad_sup() + 1e-12);
        assert!(check.sup_dt_ratio > 0.95 * c.grad_sup());
    }

    #[test]
    fn curl_identity_for_a_smooth_field() {
        let exact = Manufactured::standard();
        let q = |x: &Vec3| exact.p_star(x);
        let curl_q = |x: &Vec3| exact.curl_p_star(x);
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, Vec3::new(0.01, 0.015, 0.05), 0.1).unwrap();
        let samples = interior_samples(&iv, 200, 44);
        let worst = check_curl_identity(&iv, &q, &curl_q, &samples, 1e-3);
        assert!(worst < 1e-7, "worst residual {worst}");
    }

    #[test]
    fn div_identity_for_a_smooth_field() {
        let exact = Manufactured::standard();
        let m = |x: &Vec3| exact.m_load(x);
        let div_m = |x: &Vec3| exact.div_m(x);
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, Vec3::new(-0.02, 0.01, 0.04), 0.1).unwrap();
        // stencil safety in the S_h preimage coordinates
        let samples: Vec<Vec3> = interior_samples(&iv, 400, 45)
            .into_iter()
            .filter(|y| {
                let x = iv.s(y);
                let s = (x - c.center).norm() / c.radius;
                (s - 0.5).abs() > 0.05 && (s - 1.0).abs() > 0.05
            })
            .collect();
        assert!(samples.len() > 100);
        let worst = check_div_identity(&iv, &m, &div_m, &samples, 1e-3);
        assert!(worst < 1e-6, "worst residual {worst}");
    }

    #[test]
    fn pullbacks_are_adjoint() {
        let exact = Manufactured::standard();
        // both fields vanish on the boundary, so extension by zero is
        // continuous and the change of variables is exact
        let q = |x: &Vec3| exact.p_star(x);
        let g2 = Matrix3::new(0.5, -1.0, 0.25, 1.0, 0.75, -0.5, -0.25, 0.5, 1.0);
        let m = move |x: &Vec3| g2 * manufactured::bump(x);
        let domain = DomainSpec::UnitCube;
        let q_ext = extend_by_zero(&domain, q);
        let m_ext = extend_by_zero(&domain, m);
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, Vec3::new(0.0, 0.01, 0.05), 0.1).unwrap();
        let rule = QuadratureRule::for_order(6);
        let mut rels = Vec::new();
        for n in [4usize, 8] {
            let mesh = build_mesh(DomainSpec::UnitCube, n);
            let (lhs, rhs, rel) = check_adjoint(&iv, &mesh, &q_ext, &m_ext, &rule);
            assert!(lhs.abs() > 1e-6, "pairing degenerate: {lhs}");
            rels.push((rel, rhs));
        }
        assert!(rels[1].0 < rels[0].0, "no improvement under refinement: {rels:?}");
        assert!(rels[1].0 < 1e-4, "refined relative defect {}", rels[1].0);
    }

    #[test]
    fn pairing_ratio_stays_bounded_as_h_shrinks() {
        let exact = Manufactured::standard();
        let q = |x: &Vec3| exact.p_star(x);
        let m = |x: &Vec3| exact.m_load(x);
        let mesh = build_mesh(DomainSpec::UnitCube, 6);
        let rule = QuadratureRule::for_order(6);
        let norm_q = {
            let curl_q = |x: &Vec3| exact.curl_p_star(x);
            (field_l2(&mesh, &q, &rule).powi(2) + field_l2(&mesh, &curl_q, &rule).powi(2)).sqrt()
        };
        let norm_m = {
            let div_m = |x: &Vec3| exact.div_m(x);
            (field_l2(&mesh, &m, &rule).powi(2) + vector_field_l2(&mesh, &div_m, &rule).powi(2))
                .sqrt()
        };
        let c = sample_cutoff();
        let dir = Vec3::new(0.0, 0.0, 1.0);
        let mut ratios = Vec::new();
        for k in 0..4 {
            let iv = InnerVariation::new(c, dir * 0.05 * 0.5f64.powi(k), 0.1).unwrap();
            ratios.push(divcurl_pairing_ratio(&iv, &mesh, &q, &m, norm_q, norm_m, &rule));
        }
        for r in &ratios {
            assert!(*r < 5.0, "unbounded pairing ratio {ratios:?}");
        }
    }

    #[test]
    fn difference_quotient_of_constant_field_follows_the_jacobian() {
        // for constant Q the quotient is Q (DT - I) / |h|, supported in the
        // cutoff annulus and bounded by ||Q|| ||grad phi||_oo
        let g = Matrix3::new(1.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.25, 0.0, 2.0);
        let q = move |_: &Vec3| g;
        let c = sample_cutoff();
        let iv = InnerVariation::new(c, Vec3::new(0.0, 0.0, 0.05), 0.1).unwrap();
        let dq = iv.diff_quotient(&q);
        assert!(dq(&c.center).norm() < 1e-14); // plateau: DT = I
        assert!(dq(&(c.center + Vec3::new(0.0, 0.6, 0.0))).norm() < 1e-14); // outside
        let x = c.center + Vec3::new(0.0, 0.375, 0.0); // max-slope sphere
        let expect = g * (iv.dt(&x) - Matrix3::identity()) / iv.h.norm();
        assert!((dq(&x) - expect).norm() < 1e-13);
        assert!(dq(&x).norm() <= g.norm() * c.grad_sup() + 1e-12);
    }
}
