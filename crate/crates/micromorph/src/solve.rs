//! Discrete minimization of the micromorphic energy.
//!
//! The first-order conditions of the linear model form the symmetric block
//! system
//!
//! ```text
//! [  A_uu   -B  ] [u]   [b_u]       A_uu = symgrad/symgrad (C_e)
//! [ -B^T   A_PP ] [P] = [b_P]       B    = symgrad/symP    (C_e)
//! ```
//!
//! with `A_PP = symP/symP (C_e + C_micro) + curlcurl (L_c)`, solved by
//! Jacobi-preconditioned CG on the constrained system. The nonlinear model
//! is minimized directly by preconditioned Barzilai-Borwein descent with an
//! Armijo backtracking line search; the discrete energy and its gradient
//! are evaluated with the *same* quadrature rule, so descent directions are
//! exact for the function being minimized.

use crate::energy::{LinearCoefficients, MaterialModel, NonlinearParams, StateTriple};
use crate::fespace::{
    self, assemble, FieldP, FieldU, FormKind, H1VectorSpace, HCurlTensorSpace,
};
use crate::geometry::{Mesh, Vec3, LOCAL_EDGES};
use crate::quadrature::QuadratureRule;
use crate::sparse::{self, cg_jacobi, CsrMatrix, Triplets};
use crate::{Error, Result};
use nalgebra::Matrix3;
use serde::Serialize;

/// Volume loads: body force `f`, micro-moment `M` and (when known in closed
/// form) the row-wise divergence of `M`.
pub struct LoadSpec {
    pub f: Box<dyn Fn(&Vec3) -> Vec3>,
    pub m: Box<dyn Fn(&Vec3) -> Matrix3<f64>>,
    pub div_m: Option<Box<dyn Fn(&Vec3) -> Vec3>>,
}

impl LoadSpec {
    pub fn zero() -> Self {
        LoadSpec {
            f: Box::new(|_| Vec3::zeros()),
            m: Box::new(|_| Matrix3::zeros()),
            div_m: Some(Box::new(|_| Vec3::zeros())),
        }
    }
}

/// Outcome record of a solve, serialized into `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub dofs_u: usize,
    pub dofs_p: usize,
    pub free_dofs: usize,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub nonlinear_iterations: Option<usize>,
    pub energy: f64,
    pub el_residual: f64,
    /// final relative gradient `||g|| / max(||g_0||, 1)` (nonlinear solves)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_gradient: Option<f64>,
    /// energy after each nonlinear iteration, starting from the initial state
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_trace: Option<Vec<f64>>,
    pub norm_u_h1: f64,
    pub norm_p_hcurl: f64,
}

/// Constrained block system of the linear model.
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub n_u: usize,
    pub n_p: usize,
}

/// Load vector `(int f . phi, int <M, W>)` in block layout.
pub fn assemble_loads(mesh: &Mesh, load: &LoadSpec, rule: &QuadratureRule) -> Vec<f64> {
    let nv = mesh.n_vertices();
    let ne = mesh.n_edges();
    let mut b = vec![0.0; 3 * nv + 3 * ne];
    for t in 0..mesh.n_tets() {
        let tet = &mesh.tets[t];
        let g = &mesh.geom[t];
        for (q, l) in rule.points.iter().enumerate() {
            let mut x = Vec3::zeros();
            for i in 0..4 {
                x += mesh.vertices[tet[i]] * l[i];
            }
            let w = 6.0 * g.volume * rule.weights[q];
            let fx = (load.f)(&x);
            for i in 0..4 {
                for a in 0..3 {
                    b[3 * tet[i] + a] += w * l[i] * fx[a];
                }
            }
            let mx = (load.m)(&x);
            for (k, le) in LOCAL_EDGES.iter().enumerate() {
                let (e, s) = mesh.tet_edges[t][k];
                let we = (g.grad_lambda[le[1]] * l[le[0]] - g.grad_lambda[le[0]] * l[le[1]])
                    * (s as f64);
                for r in 0..3 {
                    b[3 * nv + r * ne + e] += w * mx.row(r).transpose().dot(&we);
                }
            }
        }
    }
    b
}

/// Assemble the constrained block system of the linear model.
pub fn assemble_system(
    mesh: &Mesh,
    u_space: &H1VectorSpace,
    p_space: &HCurlTensorSpace,
    coeffs: &LinearCoefficients,
    load: &LoadSpec,
    rule: &QuadratureRule,
) -> Result<LinearSystem> {
    let n_u = u_space.dim();
    let n_p = p_space.dim();
    let a_uu = assemble(mesh, FormKind::SymgradSymgrad(coeffs.c_e), rule)?;
    let b_up = assemble(mesh, FormKind::CouplingSymgradSymP(coeffs.c_e), rule)?;
    let a_pp_sym = assemble(mesh, FormKind::SymPSymP(coeffs.c_e.sum(&coeffs.c_micro)), rule)?;
    let a_pp_curl = assemble(mesh, FormKind::CurlCurl(coeffs.l_c), rule)?;

    let n = n_u + n_p;
    let constrained: Vec<bool> = u_space
        .constrained
        .iter()
        .chain(&p_space.constrained)
        .copied()
        .collect();
    let mut trip = Triplets::new(n, n);
    let push_block =
        |m: &CsrMatrix, roff: usize, coff: usize, sign: f64, trip: &mut Triplets| {
            for i in 0..m.nrows {
                if constrained[roff + i] {
                    continue;
                }
                for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                    let j = m.col_idx[k];
                    if constrained[coff + j] {
                        continue;
                    }
                    trip.push(roff + i, coff + j, sign * m.values[k]);
                }
            }
        };
    push_block(&a_uu, 0, 0, 1.0, &mut trip);
    push_block(&b_up, 0, n_u, -1.0, &mut trip);
    push_block(&a_pp_sym, n_u, n_u, 1.0, &mut trip);
    push_block(&a_pp_curl, n_u, n_u, 1.0, &mut trip);
    // the transposed coupling block
    for i in 0..b_up.nrows {
        if constrained[i] {
            continue;
        }
        for k in b_up.row_ptr[i]..b_up.row_ptr[i + 1] {
            let j = b_up.col_idx[k];
            if constrained[n_u + j] {
                continue;
            }
            trip.push(n_u + j, i, -b_up.values[k]);
        }
    }
    for (d, &c) in constrained.iter().enumerate() {
        if c {
            trip.push(d, d, 1.0);
        }
    }

    let mut rhs = assemble_loads(mesh, load, rule);
    for (r, &c) in rhs.iter_mut().zip(&constrained) {
        if c {
            *r = 0.0;
        }
    }
    Ok(LinearSystem { matrix: trip.to_csr(), rhs, n_u, n_p })
}

fn split_fields(x: &[f64], n_u: usize) -> (FieldU, FieldP) {
    (FieldU { coeffs: x[..n_u].to_vec() }, FieldP { coeffs: x[n_u..].to_vec() })
}

/// Solve the linear model by CG on the constrained block system.
pub fn solve_linear(
    mesh: &Mesh,
    u_space: &H1VectorSpace,
    p_space: &HCurlTensorSpace,
    coeffs: &LinearCoefficients,
    load: &LoadSpec,
    tol: f64,
) -> Result<(FieldU, FieldP, SolveReport)> {
    let rule = QuadratureRule::for_order(4);
    let system = assemble_system(mesh, u_space, p_space, coeffs, load, &rule)?;
    let n = system.matrix.nrows;
    let (x, info) = cg_jacobi(&system.matrix, &system.rhs, tol, 40 * n + 1000)?;
    let mut residual = system.matrix.apply(&x);
    for (r, b) in residual.iter_mut().zip(&system.rhs) {
        *r -= b;
    }
    let (u, p) = split_fields(&x, system.n_u);
    let functional = DiscreteEnergy::new(mesh, u_space, p_space, MaterialModel::Linear(*coeffs));
    let b_loads = assemble_loads(mesh, load, &rule);
    let energy = functional.internal_energy(&u, &p) - sparse::dot(&b_loads, &x);
    let report = SolveReport {
        dofs_u: u_space.dim(),
        dofs_p: p_space.dim(),
        free_dofs: u_space.n_free() + p_space.n_free(),
        cg_iterations: info.iterations,
        cg_residual: info.relative_residual,
        nonlinear_iterations: None,
        energy,
        el_residual: sparse::norm(&residual),
        rel_gradient: None,
        energy_trace: None,
        norm_u_h1: fespace::norm_h1(mesh, &u),
        norm_p_hcurl: fespace::norm_hcurl(mesh, &p),
    };
    Ok((u, p, report))
}

/// The discrete energy `x -> int W(x, Du, P, Curl P)` and its exact
/// gradient, both evaluated with one shared quadrature rule.
pub struct DiscreteEnergy<'m> {
    mesh: &'m Mesh,
    model: MaterialModel,
    rule: QuadratureRule,
    pub constrained: Vec<bool>,
    n_u: usize,
}

impl<'m> DiscreteEnergy<'m> {
    pub fn new(
        mesh: &'m Mesh,
        u_space: &H1VectorSpace,
        p_space: &HCurlTensorSpace,
        model: MaterialModel,
    ) -> Self {
        let constrained: Vec<bool> = u_space
            .constrained
            .iter()
            .chain(&p_space.constrained)
            .copied()
            .collect();
        DiscreteEnergy {
            mesh,
            model,
            rule: QuadratureRule::for_order(4),
            constrained,
            n_u: u_space.dim(),
        }
    }

    fn state_at(&self, u: &FieldU, p: &FieldP, t: usize, lambda: &[f64; 4]) -> StateTriple {
        StateTriple {
            f: fespace::eval_du_local(self.mesh, u, t),
            p: fespace::eval_p_local(self.mesh, p, t, lambda),
            c: fespace::eval_curl_p_local(self.mesh, p, t),
        }
    }

    /// `int_Omega W(x, Du, P, Curl P) dx` under the shared quadrature rule.
    pub fn internal_energy(&self, u: &FieldU, p: &FieldP) -> f64 {
        let mesh = self.mesh;
        let mut acc = 0.0;
        for t in 0..mesh.n_tets() {
            let vol = mesh.geom[t].volume;
            let tet = &mesh.tets[t];
            for (q, l) in self.rule.points.iter().enumerate() {
                let mut x = Vec3::zeros();
                for i in 0..4 {
                    x += mesh.vertices[tet[i]] * l[i];
                }
                let state = self.state_at(u, p, t, l);
                acc += 6.0 * vol * self.rule.weights[q] * self.model.w(&x, &state);
            }
        }
        acc
    }

    /// Exact gradient of [`Self::internal_energy`] with respect to the
    /// coefficient vectors.
    pub fn internal_gradient(&self, u: &FieldU, p: &FieldP) -> (Vec<f64>, Vec<f64>) {
        let mesh = self.mesh;
        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let mut gu = vec![0.0; 3 * nv];
        let mut gp = vec![0.0; 3 * ne];
        for t in 0..mesh.n_tets() {
            let vol = mesh.geom[t].volume;
            let tet = &mesh.tets[t];
            let geom = &mesh.geom[t];
            for (q, l) in self.rule.points.iter().enumerate() {
                let mut x = Vec3::zeros();
                for i in 0..4 {
                    x += mesh.vertices[tet[i]] * l[i];
                }
                let w = 6.0 * vol * self.rule.weights[q];
                let state = self.state_at(u, p, t, l);
                let (df, dp, dc) = self.model.dw(&x, &state);
                // u dofs: d/dc_{i,a} Du = e_a (x) grad lambda_i
                for i in 0..4 {
                    for a in 0..3 {
                        gu[3 * tet[i] + a] +=
                            w * df.row(a).transpose().dot(&geom.grad_lambda[i]);
                    }
                }
                // P dofs: d/dc_{r,e} (P, Curl P) = (e_r (x) w_e, e_r (x) curl w_e)
                for (k, le) in LOCAL_EDGES.iter().enumerate() {
                    let (e, s) = mesh.tet_edges[t][k];
                    let sf = s as f64;
                    let we = (geom.grad_lambda[le[1]] * l[le[0]]
                        - geom.grad_lambda[le[0]] * l[le[1]])
                        * sf;
                    let ce = geom.grad_lambda[le[0]].cross(&geom.grad_lambda[le[1]]) * (2.0 * sf);
                    for r in 0..3 {
                        gp[r * ne + e] += w
                            * (dp.row(r).transpose().dot(&we)
                                + dc.row(r).transpose().dot(&ce));
                    }
                }
            }
        }
        (gu, gp)
    }

    /// Total energy including loads, as a function of the block vector.
    pub fn total_energy(&self, x: &[f64], b_loads: &[f64]) -> f64 {
        let (u, p) = split_fields(x, self.n_u);
        self.internal_energy(&u, &p) - sparse::dot(b_loads, x)
    }

    /// Gradient of the total energy, zeroed on constrained dofs.
    pub fn total_gradient(&self, x: &[f64], b_loads: &[f64]) -> Vec<f64> {
        let (u, p) = split_fields(x, self.n_u);
        let (gu, gp) = self.internal_gradient(&u, &p);
        let mut g: Vec<f64> = gu.into_iter().chain(gp).collect();
        for (gi, bi) in g.iter_mut().zip(b_loads) {
            *gi -= bi;
        }
        for (gi, &c) in g.iter_mut().zip(&self.constrained) {
            if c {
                *gi = 0.0;
            }
        }
        g
    }
}

/// Options of the nonlinear minimizer.
#[derive(Debug, Clone)]
pub struct NonlinearOptions {
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// optional initial coefficient vector (u block then P block)
    pub initial: Option<Vec<f64>>,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions { grad_tol: 1e-8, max_iterations: 500, initial: None }
    }
}

/// Minimize the nonlinear discrete energy by iteratively reweighted least
/// squares. The concave bound
/// `||C||^q <= (q/2) w^{q-2} ||C||^2 + (1 - q/2) w^q` (tight at `w = ||C||`)
/// majorizes the q-term for every `w > 0`, so each iteration minimizes a
/// quadratic surrogate -- the identity-coefficient linear operator plus a
/// per-tet weighted curl-curl term -- and the true energy decreases
/// monotonically. The weight floor `eps` guards the `w^{q-2}` blow-up at
/// `C = 0` and is driven to zero geometrically.
pub fn solve_nonlinear(
    mesh: &Mesh,
    u_space: &H1VectorSpace,
    p_space: &HCurlTensorSpace,
    params: &NonlinearParams,
    load: &LoadSpec,
    opts: &NonlinearOptions,
) -> Result<(FieldU, FieldP, SolveReport)> {
    let rule = QuadratureRule::for_order(4);
    let model = MaterialModel::Nonlinear(*params);
    let functional = DiscreteEnergy::new(mesh, u_space, p_space, model);
    let b_loads = {
        let mut b = assemble_loads(mesh, load, &rule);
        for (bi, &c) in b.iter_mut().zip(&functional.constrained) {
            if c {
                *bi = 0.0;
            }
        }
        b
    };
    let quadratic = assemble_system(
        mesh,
        u_space,
        p_space,
        &LinearCoefficients::identity(),
        &LoadSpec::zero(),
        &rule,
    )?
    .matrix;
    let diag = quadratic.diagonal();
    let pnorm = |g: &[f64]| -> f64 {
        g.iter()
            .zip(&diag)
            .map(|(gi, di)| if di.abs() > 1e-300 { gi * gi / di } else { gi * gi })
            .sum::<f64>()
            .sqrt()
    };

    let n = u_space.dim() + p_space.dim();
    let n_u = u_space.dim();
    let mut x = match &opts.initial {
        Some(x0) => {
            let mut x0 = x0.clone();
            for (xi, &c) in x0.iter_mut().zip(&functional.constrained) {
                if c {
                    *xi = 0.0;
                }
            }
            x0
        }
        None => vec![0.0; n],
    };
    let mut energy = functional.total_energy(&x, &b_loads);
    let mut grad = functional.total_gradient(&x, &b_loads);
    let g0 = pnorm(&grad).max(1e-300);
    // weight floor: tets with ||C|| <= eps contribute true-gradient
    // components up to alpha q eps^{q-1}, so the terminal floor must sit
    // well below the convergence target
    let eps_min = (0.1 * opts.grad_tol * g0.max(1.0) / (params.alpha * params.q).max(1e-300))
        .powf(1.0 / (params.q - 1.0))
        .clamp(1e-300, 1e-12);
    let mut eps = 1e-3;
    let mut iterations = 0;
    let mut cg_total = 0;
    let mut cg_residual = 0.0;
    let mut energy_trace = vec![energy];
    loop {
        let gn = pnorm(&grad);
        if gn <= opts.grad_tol * g0.max(1.0) {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence(iterations, gn / g0));
        }
        // per-tet surrogate weights alpha q max(||Curl P||, eps)^{q-2}
        let (_, p_cur) = split_fields(&x, n_u);
        let weights: Vec<f64> = (0..mesh.n_tets())
            .map(|t| {
                let c = fespace::eval_curl_p_local(mesh, &p_cur, t).norm();
                params.alpha * params.q * c.max(eps).powf(params.q - 2.0)
            })
            .collect();
        let reweighted = fespace::assemble_curlcurl_weighted(mesh, &weights);
        let surrogate = {
            let mut trip = sparse::Triplets::new(n, n);
            for i in 0..n {
                for k in quadratic.row_ptr[i]..quadratic.row_ptr[i + 1] {
                    trip.push(i, quadratic.col_idx[k], quadratic.values[k]);
                }
            }
            for i in 0..reweighted.nrows {
                let gi = n_u + i;
                if functional.constrained[gi] {
                    continue;
                }
                for k in reweighted.row_ptr[i]..reweighted.row_ptr[i + 1] {
                    let gj = n_u + reweighted.col_idx[k];
                    if !functional.constrained[gj] {
                        trip.push(gi, gj, reweighted.values[k]);
                    }
                }
            }
            trip.to_csr()
        };
        let (x_new, info) = cg_jacobi(&surrogate, &b_loads, 1e-12, 40 * n + 1000)?;
        cg_total += info.iterations;
        cg_residual = info.relative_residual;
        let e_new = functional.total_energy(&x_new, &b_loads);
        if e_new > energy + 1e-12 * (1.0 + energy.abs()) {
            return Err(Error::LineSearchStall(iterations));
        }
        x = x_new;
        energy = e_new;
        energy_trace.push(energy);
        grad = functional.total_gradient(&x, &b_loads);
        eps = (eps * 0.25).max(eps_min);
        iterations += 1;
    }
    let gn = pnorm(&grad);
    let (u, p) = split_fields(&x, n_u);
    let report = SolveReport {
        dofs_u: u_space.dim(),
        dofs_p: p_space.dim(),
        free_dofs: u_space.n_free() + p_space.n_free(),
        cg_iterations: cg_total,
        cg_residual,
        nonlinear_iterations: Some(iterations),
        energy,
        el_residual: gn,
        rel_gradient: Some(gn / g0.max(1.0)),
        energy_trace: Some(energy_trace),
        norm_u_h1: fespace::norm_h1(mesh, &u),
        norm_p_hcurl: fespace::norm_hcurl(mesh, &p),
    };
    Ok((u, p, report))
}

/// A-priori stability ratio `||(u,P)|| / ||(f,M)||`; errors on vanishing
/// loads, where the ratio is undefined.
pub fn apriori_ratio(
    mesh: &Mesh,
    u: &FieldU,
    p: &FieldP,
    load: &LoadSpec,
    rule: &QuadratureRule,
) -> Result<f64> {
    let mut load_sq = 0.0;
    for t in 0..mesh.n_tets() {
        let tet = &mesh.tets[t];
        let vol = mesh.geom[t].volume;
        for (q, l) in rule.points.iter().enumerate() {
            let mut x = Vec3::zeros();
            for i in 0..4 {
                x += mesh.vertices[tet[i]] * l[i];
            }
            let w = 6.0 * vol * rule.weights[q];
            load_sq += w * ((load.f)(&x).norm_squared() + (load.m)(&x).norm_squared());
        }
    }
    let load_norm = load_sq.sqrt();
    if load_norm < 1e-14 {
        return Err(Error::ZeroLoad);
    }
    let state = (fespace::norm_h1(mesh, u).powi(2) + fespace::norm_hcurl(mesh, p).powi(2)).sqrt();
    Ok(state / load_norm)
}

/// Manufactured solution on the unit cube: `u* = (b,b,b)`, `P* = b G` with
/// the polynomial bump `b = x(1-x) y(1-y) z(1-z)` and a constant matrix `G`.
/// Both fields satisfy the homogeneous essential conditions exactly, and all
/// associated loads are available in closed form.
pub mod manufactured {
    use super::*;

    fn b1(t: f64) -> f64 {
        t * (1.0 - t)
    }
    fn db1(t: f64) -> f64 {
        1.0 - 2.0 * t
    }

    pub fn bump(x: &Vec3) -> f64 {
        b1(x[0]) * b1(x[1]) * b1(x[2])
    }

    pub fn grad_bump(x: &Vec3) -> Vec3 {
        Vec3::new(
            db1(x[0]) * b1(x[1]) * b1(x[2]),
            b1(x[0]) * db1(x[1]) * b1(x[2]),
            b1(x[0]) * b1(x[1]) * db1(x[2]),
        )
    }

    pub fn hess_bump(x: &Vec3) -> Matrix3<f64> {
        let (bx, by, bz) = (b1(x[0]), b1(x[1]), b1(x[2]));
        let (dx, dy, dz) = (db1(x[0]), db1(x[1]), db1(x[2]));
        Matrix3::new(
            -2.0 * by * bz,
            dx * dy * bz,
            dx * by * dz,
            dx * dy * bz,
            -2.0 * bx * bz,
            bx * dy * dz,
            dx * by * dz,
            bx * dy * dz,
            -2.0 * bx * by,
        )
    }

    pub fn laplace_bump(x: &Vec3) -> f64 {
        hess_bump(x).trace()
    }

    /// The manufactured pair and its loads for a fixed constant `G`.
    pub struct Manufactured {
        pub g: Matrix3<f64>,
    }

    impl Manufactured {
        pub fn new(g: Matrix3<f64>) -> Self {
            Manufactured { g }
        }

        /// The default `G` used by the verification experiments.
        pub fn standard() -> Self {
            Manufactured::new(Matrix3::new(1.0, 0.5, -0.25, 0.75, -1.0, 0.5, 0.25, -0.5, 1.5))
        }

        pub fn u_star(&self, x: &Vec3) -> Vec3 {
            let b = bump(x);
            Vec3::new(b, b, b)
        }

        /// Rows of `Du*` all equal `grad b`.
        pub fn du_star(&self, x: &Vec3) -> Matrix3<f64> {
            let g = grad_bump(x);
            Matrix3::from_fn(|_, j| g[j])
        }

        pub fn p_star(&self, x: &Vec3) -> Matrix3<f64> {
            self.g * bump(x)
        }

        /// Row-wise curl: `Curl(b G)_i = grad b x g_i`.
        pub fn curl_p_star(&self, x: &Vec3) -> Matrix3<f64> {
            let gb = grad_bump(x);
            let mut m = Matrix3::zeros();
            for i in 0..3 {
                let gi = self.g.row(i).transpose();
                let c = gb.cross(&gi);
                for d in 0..3 {
                    m[(i, d)] = c[d];
                }
            }
            m
        }

        /// Row-wise `Curl Curl (b G)_i = Hess(b) g_i - g_i lap b`.
        pub fn curl_curl_p_star(&self, x: &Vec3) -> Matrix3<f64> {
            let h = hess_bump(x);
            let lap = laplace_bump(x);
            let mut m = Matrix3::zeros();
            for i in 0..3 {
                let gi = self.g.row(i).transpose();
                let c = h * gi - gi * lap;
                for d in 0..3 {
                    m[(i, d)] = c[d];
                }
            }
            m
        }

        fn sym_g(&self) -> Matrix3<f64> {
            (self.g + self.g.transpose()) * 0.5
        }

        /// Body force `f = -Div sym(Du* - P*)` (identity coefficients).
        pub fn f_load(&self, x: &Vec3) -> Vec3 {
            let h = hess_bump(x);
            let lap = laplace_bump(x);
            let ones = Vec3::new(1.0, 1.0, 1.0);
            -(ones * lap + h * ones) * 0.5 + self.sym_g() * grad_bump(x)
        }

        /// Micro moment `M = Curl Curl P* - sym(Du* - P*) + sym P*`.
        pub fn m_load(&self, x: &Vec3) -> Matrix3<f64> {
            let e = self.du_star(x) - self.p_star(x);
            let sym_e = (e + e.transpose()) * 0.5;
            let sp = self.sym_g() * bump(x);
            self.curl_curl_p_star(x) - sym_e + sp
        }

        /// Row-wise divergence `Div M = f + sym(G) grad b`.
        pub fn div_m(&self, x: &Vec3) -> Vec3 {
            self.f_load(x) + self.sym_g() * grad_bump(x)
        }

        pub fn loads(&self) -> LoadSpec
        where
            Self: Clone,
        {
            let a = self.clone();
            let b = self.clone();
            let c = self.clone();
            LoadSpec {
                f: Box::new(move |x| a.f_load(x)),
                m: Box::new(move |x| b.m_load(x)),
                div_m: Some(Box::new(move |x| c.div_m(x))),
            }
        }
    }

    impl Clone for Manufactured {
        fn clone(&self) -> Self {
            Manufactured { g: self.g }
        }
    }

    /// L2 errors of a discrete pair against the manufactured fields.
    pub fn l2_errors(mesh: &Mesh, u: &FieldU, p: &FieldP, exact: &Manufactured) -> (f64, f64) {
        let rule = QuadratureRule::for_order(6);
        let mut eu = 0.0;
        let mut ep = 0.0;
        for t in 0..mesh.n_tets() {
            let tet = &mesh.tets[t];
            let vol = mesh.geom[t].volume;
            for (q, l) in rule.points.iter().enumerate() {
                let mut x = Vec3::zeros();
                for i in 0..4 {
                    x += mesh.vertices[tet[i]] * l[i];
                }
                let w = 6.0 * vol * rule.weights[q];
                eu += w * (fespace::eval_u_local(mesh, u, t, l) - exact.u_star(&x)).norm_squared();
                ep += w
                    * (fespace::eval_p_local(mesh, p, t, l) - exact.p_star(&x)).norm_squared();
            }
        }
        (eu.sqrt(), ep.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::manufactured::Manufactured;
    use super::*;
    use crate::geometry::{build_mesh, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_dir(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn manufactured_loads_match_finite_differences() {
        let exact = Manufactured::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = 1e-5;
        for _ in 0..30 {
            let x = Vec3::new(
                0.1 + 0.8 * rng.random::<f64>(),
                0.1 + 0.8 * rng.random::<f64>(),
                0.1 + 0.8 * rng.random::<f64>(),
            );
            // grad and Hessian of the bump
            for d in 0..3 {
                let mut e = Vec3::zeros();
                e[d] = 1.0;
                let fd = fd_dir(|t| manufactured::bump(&(x + e * t)), h);
                assert!((manufactured::grad_bump(&x)[d] - fd).abs() < 1e-9);
                for c in 0..3 {
                    let fdh = fd_dir(|t| manufactured::grad_bump(&(x + e * t))[c], h);
                    assert!((manufactured::hess_bump(&x)[(c, d)] - fdh).abs() < 1e-9);
                }
            }
            // f = -Div sym(Du* - P*)
            let mut div = Vec3::zeros();
            for j in 0..3 {
                let mut e = Vec3::zeros();
                e[j] = 1.0;
                for i in 0..3 {
                    div[i] += fd_dir(
                        |t| {
                            let y = x + e * t;
                            let m = exact.du_star(&y) - exact.p_star(&y);
                            0.5 * (m[(i, j)] + m[(j, i)])
                        },
                        h,
                    );
                }
            }
            assert!((exact.f_load(&x) + div).norm() < 1e-8);
            // row-wise curl of P*
            let mut curl = Matrix3::zeros();
            for i in 0..3 {
                for (d, (a, b)) in [(1, 2), (2, 0), (0, 1)].iter().enumerate() {
                    let mut ea = Vec3::zeros();
                    let mut eb = Vec3::zeros();
                    ea[*a] = 1.0;
                    eb[*b] = 1.0;
                    curl[(i, d)] = fd_dir(|t| exact.p_star(&(x + ea * t))[(i, *b)], h)
                        - fd_dir(|t| exact.p_star(&(x + eb * t))[(i, *a)], h);
                }
            }
            assert!((exact.curl_p_star(&x) - curl).norm() < 1e-8);
            // Curl Curl and Div M by differentiating the closed forms
            let mut curl2 = Matrix3::zeros();
            for i in 0..3 {
                for (d, (a, b)) in [(1, 2), (2, 0), (0, 1)].iter().enumerate() {
                    let mut ea = Vec3::zeros();
                    let mut eb = Vec3::zeros();
                    ea[*a] = 1.0;
                    eb[*b] = 1.0;
                    curl2[(i, d)] = fd_dir(|t| exact.curl_p_star(&(x + ea * t))[(i, *b)], h)
                        - fd_dir(|t| exact.curl_p_star(&(x + eb * t))[(i, *a)], h);
                }
            }
            assert!((exact.curl_curl_p_star(&x) - curl2).norm() < 1e-7);
            let mut div_m = Vec3::zeros();
            for j in 0..3 {
                let mut e = Vec3::zeros();
                e[j] = 1.0;
                for i in 0..3 {
                    div_m[i] += fd_dir(|t| exact.m_load(&(x + e * t))[(i, j)], h);
                }
            }
            assert!((exact.div_m(&x) - div_m).norm() < 1e-7);
        }
    }

    #[test]
    fn discrete_gradient_matches_finite_differences() {
        let mesh = build_mesh(DomainSpec::UnitCube, 2);
        let us = H1VectorSpace::new(&mesh);
        let ps = HCurlTensorSpace::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let u = FieldU { coeffs: (0..us.dim()).map(|_| rng.random::<f64>() - 0.5).collect() };
        let p = FieldP { coeffs: (0..ps.dim()).map(|_| rng.random::<f64>() - 0.5).collect() };
        for model in [
            MaterialModel::Linear(LinearCoefficients::identity()),
            MaterialModel::Nonlinear(NonlinearParams::canonical(1.5).unwrap()),
        ] {
            let functional = DiscreteEnergy::new(&mesh, &us, &ps, model);
            let (gu, gp) = functional.internal_gradient(&u, &p);
            let h = 1e-6;
            for trial in 0..20 {
                let d = rng.random_range(0..us.dim() + ps.dim());
                let mut up = (u.clone(), p.clone());
                let mut um = (u.clone(), p.clone());
                let (g, _) = if d < us.dim() {
                    up.0.coeffs[d] += h;
                    um.0.coeffs[d] -= h;
                    (gu[d], trial)
                } else {
                    up.1.coeffs[d - us.dim()] += h;
                    um.1.coeffs[d - us.dim()] -= h;
                    (gp[d - us.dim()], trial)
                };
                let fd = (functional.internal_energy(&up.0, &up.1)
                    - functional.internal_energy(&um.0, &um.1))
                    / (2.0 * h);
                assert!((g - fd).abs() < 1e-6 * (1.0 + g.abs()), "dof {d}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn linear_solve_is_discretely_optimal() {
        // the CG solution must beat the interpolated exact solution in energy
        let mesh = build_mesh(DomainSpec::UnitCube, 2);
        let us = H1VectorSpace::new(&mesh);
        let ps = HCurlTensorSpace::new(&mesh);
        let coeffs = LinearCoefficients::identity();
        let exact = Manufactured::standard();
        let (u, p, report) = solve_linear(&mesh, &us, &ps, &coeffs, &exact.loads(), 1e-12).unwrap();
        assert!(report.el_residual < 1e-9, "residual {}", report.el_residual);
        assert!(report.energy < 0.0);

        let functional =
            DiscreteEnergy::new(&mesh, &us, &ps, MaterialModel::Linear(coeffs));
        let b = assemble_loads(&mesh, &exact.loads(), &QuadratureRule::for_order(4));
        let x: Vec<f64> = u.coeffs.iter().chain(&p.coeffs).copied().collect();
        let e_h = functional.total_energy(&x, &b);
        let mut ui = fespace::interpolate_u(&mesh, |y| exact.u_star(y));
        ui.constrain(&us);
        let mut pi = fespace::interpolate_p(&mesh, |y| exact.p_star(y));
        pi.constrain(&ps);
        let xi: Vec<f64> = ui.coeffs.iter().chain(&pi.coeffs).copied().collect();
        let e_i = functional.total_energy(&xi, &b);
        assert!(e_h <= e_i + 1e-12, "solver energy {e_h} vs interpolant {e_i}");
    }

    #[test]
    fn nonlinear_alpha_zero_agrees_with_linear_solve() {
        let mesh = build_mesh(DomainSpec::UnitCube, 2);
        let us = H1VectorSpace::new(&mesh);
        let ps = HCurlTensorSpace::new(&mesh);
        let exact = Manufactured::standard();
        let (ul, pl, _) =
            solve_linear(&mesh, &us, &ps, &LinearCoefficients::identity(), &exact.loads(), 1e-13)
                .unwrap();
        let params = NonlinearParams::new(1.5, 0.0).unwrap();
        let opts = NonlinearOptions { grad_tol: 1e-10, ..Default::default() };
        let (un, pn, report) =
            solve_nonlinear(&mesh, &us, &ps, &params, &exact.loads(), &opts).unwrap();
        assert!(report.nonlinear_iterations.unwrap() > 0);
        let du = FieldU {
            coeffs: un.coeffs.iter().zip(&ul.coeffs).map(|(a, b)| a - b).collect(),
        };
        let dp = FieldP {
            coeffs: pn.coeffs.iter().zip(&pl.coeffs).map(|(a, b)| a - b).collect(),
        };
        let rel_u = fespace::norm_h1(&mesh, &du) / fespace::norm_h1(&mesh, &ul);
        let rel_p = fespace::norm_hcurl(&mesh, &dp) / fespace::norm_hcurl(&mesh, &pl);
        assert!(rel_u < 1e-6, "u mismatch {rel_u}");
        assert!(rel_p < 1e-6, "P mismatch {rel_p}");
    }

    #[test]
    fn manufactured_errors_shrink_under_refinement() {
        let exact = Manufactured::standard();
        let coeffs = LinearCoefficients::identity();
        let mut errors = Vec::new();
        for n in [2usize, 4] {
            let mesh = build_mesh(DomainSpec::UnitCube, n);
            let us = H1VectorSpace::new(&mesh);
            let ps = HCurlTensorSpace::new(&mesh);
            let (u, p, _) = solve_linear(&mesh, &us, &ps, &coeffs, &exact.loads(), 1e-12).unwrap();
            errors.push(manufactured::l2_errors(&mesh, &u, &p, &exact));
        }
        assert!(errors[1].0 < 0.5 * errors[0].0, "u errors {errors:?}");
        assert!(errors[1].1 < 0.75 * errors[0].1, "P errors {errors:?}");
    }

    #[test]
    fn zero_load_apriori_is_rejected() {
        let mesh = build_mesh(DomainSpec::UnitCube, 1);
        let u = FieldU { coeffs: vec![0.0; 3 * mesh.n_vertices()] };
        let p = FieldP { coeffs: vec![0.0; 3 * mesh.n_edges()] };
        let err = apriori_ratio(&mesh, &u, &p, &LoadSpec::zero(), &QuadratureRule::for_order(2));
        assert!(matches!(err, Err(Error::ZeroLoad)));
    }

    #[test]
    fn convexity_gap_is_positive_for_the_linear_model() {
        let mesh = build_mesh(DomainSpec::UnitCube, 2);
        let us = H1VectorSpace::new(&mesh);
        let ps = HCurlTensorSpace::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut random_pair = || {
            let mut u =
                FieldU { coeffs: (0..us.dim()).map(|_| rng.random::<f64>() - 0.5).collect() };
            let mut p =
                FieldP { coeffs: (0..ps.dim()).map(|_| rng.random::<f64>() - 0.5).collect() };
            u.constrain(&us);
            p.constrain(&ps);
            (u, p)
        };
        let pairs: Vec<_> = (0..6).map(|_| (random_pair(), random_pair())).collect();
        let gap = crate::energy::check_convexity_gap(
            &MaterialModel::Linear(LinearCoefficients::identity()),
            &mesh,
            &us,
            &ps,
            &pairs,
        )
        .unwrap();
        assert!(gap > 0.0 && gap < 1.0, "gap {gap}");
    }
}
