//! Finite element spaces and bilinear forms.
//!
//! The displacement `u` lives in (P1)^3 with dofs `3*vertex + component`;
//! homogeneous Dirichlet data is imposed on all boundary vertices. The
//! microdistortion `P` lives in three copies of the lowest-order Nedelec
//! space of the first kind, one per row, with dofs `row * n_edges + edge`.
//! Global edges are oriented from the lower to the higher vertex id, the
//! edge basis function is `w_e = lambda_a grad lambda_b - lambda_b grad
//! lambda_a` and its (row-wise) curl is the constant `2 grad lambda_a x
//! grad lambda_b`. Tangential boundary conditions are imposed by
//! constraining every edge of a boundary face.

use crate::energy::TensorCoefficient;
use crate::geometry::{Mesh, Vec3, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre_unit_4, QuadratureRule};
use crate::sparse::{CsrMatrix, Triplets};
use crate::{Error, Result};
use nalgebra::Matrix3;

/// Vector-valued P1 space; `constrained[dof]` marks Dirichlet dofs.
#[derive(Debug, Clone)]
pub struct H1VectorSpace {
    pub n_vertices: usize,
    pub constrained: Vec<bool>,
}

impl H1VectorSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let mut constrained = vec![false; 3 * mesh.n_vertices()];
        for (v, &on) in mesh.boundary_vertex.iter().enumerate() {
            if on {
                for a in 0..3 {
                    constrained[3 * v + a] = true;
                }
            }
        }
        H1VectorSpace { n_vertices: mesh.n_vertices(), constrained }
    }

    pub fn dim(&self) -> usize {
        3 * self.n_vertices
    }

    pub fn n_free(&self) -> usize {
        self.constrained.iter().filter(|&&c| !c).count()
    }
}

/// Row-wise Nedelec space for the tensor field `P`; dof `row * n_edges + edge`.
#[derive(Debug, Clone)]
pub struct HCurlTensorSpace {
    pub n_edges: usize,
    pub constrained: Vec<bool>,
}

impl HCurlTensorSpace {
    pub fn new(mesh: &Mesh) -> Self {
        let ne = mesh.n_edges();
        let mut constrained = vec![false; 3 * ne];
        for (e, &on) in mesh.boundary_edge.iter().enumerate() {
            if on {
                for r in 0..3 {
                    constrained[r * ne + e] = true;
                }
            }
        }
        HCurlTensorSpace { n_edges: ne, constrained }
    }

    pub fn dim(&self) -> usize {
        3 * self.n_edges
    }

    pub fn n_free(&self) -> usize {
        self.constrained.iter().filter(|&&c| !c).count()
    }
}

/// Coefficient vector of a discrete displacement field.
#[derive(Debug, Clone)]
pub struct FieldU {
    pub coeffs: Vec<f64>,
}

/// Coefficient vector of a discrete microdistortion field.
#[derive(Debug, Clone)]
pub struct FieldP {
    pub coeffs: Vec<f64>,
}

impl FieldU {
    pub fn zeros(space: &H1VectorSpace) -> Self {
        FieldU { coeffs: vec![0.0; space.dim()] }
    }

    /// Zero out Dirichlet dofs.
    pub fn constrain(&mut self, space: &H1VectorSpace) {
        for (c, &m) in self.coeffs.iter_mut().zip(&space.constrained) {
            if m {
                *c = 0.0;
            }
        }
    }
}

impl FieldP {
    pub fn zeros(space: &HCurlTensorSpace) -> Self {
        FieldP { coeffs: vec![0.0; space.dim()] }
    }

    pub fn constrain(&mut self, space: &HCurlTensorSpace) {
        for (c, &m) in self.coeffs.iter_mut().zip(&space.constrained) {
            if m {
                *c = 0.0;
            }
        }
    }
}

/// The six bilinear forms of the coupled system. The coefficient is the
/// scalar tensor field it is weighted with; mass forms carry none.
#[derive(Debug, Clone, Copy)]
pub enum FormKind {
    MassU,
    SymgradSymgrad(TensorCoefficient),
    CouplingSymgradSymP(TensorCoefficient),
    SymPSymP(TensorCoefficient),
    MassP,
    CurlCurl(TensorCoefficient),
}

/// Element-local evaluation data for one tetrahedron.
struct CellBasis {
    grad: [Vec3; 4],
    /// local edge -> (global edge, local tail, local head, sign)
    edges: [(usize, usize, usize, f64); 6],
    volume: f64,
}

impl CellBasis {
    fn new(mesh: &Mesh, t: usize) -> Self {
        let g = &mesh.geom[t];
        let mut edges = [(0usize, 0usize, 0usize, 0.0f64); 6];
        for (k, le) in LOCAL_EDGES.iter().enumerate() {
            let (e, s) = mesh.tet_edges[t][k];
            edges[k] = (e, le[0], le[1], s as f64);
        }
        CellBasis { grad: g.grad_lambda, edges, volume: g.volume }
    }

    /// Edge basis function at barycentric coordinates.
    fn edge_value(&self, k: usize, lambda: &[f64; 4]) -> Vec3 {
        let (_, i, j, s) = self.edges[k];
        (self.grad[j] * lambda[i] - self.grad[i] * lambda[j]) * s
    }

    /// Constant row-wise curl of the edge basis function.
    fn edge_curl(&self, k: usize) -> Vec3 {
        let (_, i, j, s) = self.edges[k];
        self.grad[i].cross(&self.grad[j]) * (2.0 * s)
    }
}

fn sym_outer(a: usize, g: &Vec3) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for c in 0..3 {
        m[(a, c)] += 0.5 * g[c];
        m[(c, a)] += 0.5 * g[c];
    }
    m
}

fn quad_point(mesh: &Mesh, t: usize, lambda: &[f64; 4]) -> Vec3 {
    let tet = &mesh.tets[t];
    let mut x = Vec3::zeros();
    for i in 0..4 {
        x += mesh.vertices[tet[i]] * lambda[i];
    }
    x
}

/// Assemble one of the six forms over the whole mesh. Coefficients are
/// checked for positivity at every quadrature point.
pub fn assemble(mesh: &Mesh, form: FormKind, rule: &QuadratureRule) -> Result<CsrMatrix> {
    let nv = mesh.n_vertices();
    let ne = mesh.n_edges();
    let (nrows, ncols) = match form {
        FormKind::MassU | FormKind::SymgradSymgrad(_) => (3 * nv, 3 * nv),
        FormKind::CouplingSymgradSymP(_) => (3 * nv, 3 * ne),
        _ => (3 * ne, 3 * ne),
    };
    let mut trip = Triplets::new(nrows, ncols);
    for t in 0..mesh.n_tets() {
        let cell = CellBasis::new(mesh, t);
        let tet = &mesh.tets[t];
        match form {
            FormKind::MassU => {
                // local integrals of lambda_i lambda_j
                let mut lam = [[0.0f64; 4]; 4];
                for (q, l) in rule.points.iter().enumerate() {
                    let w = 6.0 * cell.volume * rule.weights[q];
                    for i in 0..4 {
                        for j in 0..4 {
                            lam[i][j] += w * l[i] * l[j];
                        }
                    }
                }
                for i in 0..4 {
                    for j in 0..4 {
                        for a in 0..3 {
                            trip.push(3 * tet[i] + a, 3 * tet[j] + a, lam[i][j]);
                        }
                    }
                }
            }
            FormKind::SymgradSymgrad(c) => {
                let isc = integrated_scale(mesh, t, &c, rule)?;
                let s: Vec<Matrix3<f64>> = (0..4)
                    .flat_map(|i| (0..3).map(move |a| (i, a)))
                    .map(|(i, a)| sym_outer(a, &cell.grad[i]))
                    .collect();
                for (li, &ti) in tet.iter().enumerate() {
                    for (lj, &tj) in tet.iter().enumerate() {
                        for a in 0..3 {
                            for b in 0..3 {
                                let v = isc * inner(&s[3 * li + a], &s[3 * lj + b]);
                                trip.push(3 * ti + a, 3 * tj + b, v);
                            }
                        }
                    }
                }
            }
            FormKind::CouplingSymgradSymP(c) => {
                for (q, l) in rule.points.iter().enumerate() {
                    let x = quad_point(mesh, t, l);
                    let sc = positive_scale(&c, &x)?;
                    let w = 6.0 * cell.volume * rule.weights[q] * sc;
                    for k in 0..6 {
                        let we = cell.edge_value(k, l);
                        let ge = cell.edges[k].0;
                        for r in 0..3 {
                            let sp = sym_outer(r, &we);
                            for (li, &ti) in tet.iter().enumerate() {
                                for a in 0..3 {
                                    let su = sym_outer(a, &cell.grad[li]);
                                    trip.push(3 * ti + a, r * ne + ge, w * inner(&su, &sp));
                                }
                            }
                        }
                    }
                }
            }
            FormKind::SymPSymP(c) => {
                for (q, l) in rule.points.iter().enumerate() {
                    let x = quad_point(mesh, t, l);
                    let sc = positive_scale(&c, &x)?;
                    let w = 6.0 * cell.volume * rule.weights[q] * sc;
                    let wv: Vec<Vec3> = (0..6).map(|k| cell.edge_value(k, l)).collect();
                    for k in 0..6 {
                        for m in 0..6 {
                            for r in 0..3 {
                                for s in 0..3 {
                                    let v = w * inner(&sym_outer(r, &wv[k]), &sym_outer(s, &wv[m]));
                                    trip.push(
                                        r * ne + cell.edges[k].0,
                                        s * ne + cell.edges[m].0,
                                        v,
                                    );
                                }
                            }
                        }
                    }
                }
            }
            FormKind::MassP => {
                let mut loc = [[0.0f64; 6]; 6];
                for (q, l) in rule.points.iter().enumerate() {
                    let w = 6.0 * cell.volume * rule.weights[q];
                    let wv: Vec<Vec3> = (0..6).map(|k| cell.edge_value(k, l)).collect();
                    for k in 0..6 {
                        for m in 0..6 {
                            loc[k][m] += w * wv[k].dot(&wv[m]);
                        }
                    }
                }
                for k in 0..6 {
                    for m in 0..6 {
                        for r in 0..3 {
                            trip.push(r * ne + cell.edges[k].0, r * ne + cell.edges[m].0, loc[k][m]);
                        }
                    }
                }
            }
            FormKind::CurlCurl(c) => {
                let isc = integrated_scale(mesh, t, &c, rule)?;
                let curls: Vec<Vec3> = (0..6).map(|k| cell.edge_curl(k)).collect();
                for k in 0..6 {
                    for m in 0..6 {
                        let v = isc * curls[k].dot(&curls[m]);
                        for r in 0..3 {
                            trip.push(r * ne + cell.edges[k].0, r * ne + cell.edges[m].0, v);
                        }
                    }
                }
            }
        }
    }
    Ok(trip.to_csr())
}

/// Curl-curl form with a piecewise-constant nonnegative weight (one value
/// per tet), as needed by reweighted iterations: since the edge curls are
/// constant per cell the local integral is exact.
pub fn assemble_curlcurl_weighted(mesh: &Mesh, weights: &[f64]) -> CsrMatrix {
    let ne = mesh.n_edges();
    let mut trip = Triplets::new(3 * ne, 3 * ne);
    for t in 0..mesh.n_tets() {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        let cell = CellBasis::new(mesh, t);
        let curls: Vec<Vec3> = (0..6).map(|k| cell.edge_curl(k)).collect();
        let scale = w * cell.volume;
        for k in 0..6 {
            for m in 0..6 {
                let v = scale * curls[k].dot(&curls[m]);
                for r in 0..3 {
                    trip.push(r * ne + cell.edges[k].0, r * ne + cell.edges[m].0, v);
                }
            }
        }
    }
    trip.to_csr()
}

fn positive_scale(c: &TensorCoefficient, x: &Vec3) -> Result<f64> {
    let s = c.scale(x);
    if s <= 0.0 {
        return Err(Error::NonPositiveCoefficient([x[0], x[1], x[2]]));
    }
    Ok(s)
}

/// Integral of the scalar coefficient over cell `t`.
fn integrated_scale(
    mesh: &Mesh,
    t: usize,
    c: &TensorCoefficient,
    rule: &QuadratureRule,
) -> Result<f64> {
    let vol = mesh.geom[t].volume;
    let mut acc = 0.0;
    for (q, l) in rule.points.iter().enumerate() {
        let x = quad_point(mesh, t, l);
        acc += 6.0 * vol * rule.weights[q] * positive_scale(c, &x)?;
    }
    Ok(acc)
}

fn inner(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Impose homogeneous essential conditions: zero the constrained rows and
/// columns, put ones on the diagonal and zero the right-hand side entries.
pub fn apply_essential_bc(a: &CsrMatrix, rhs: &mut [f64], constrained: &[bool]) -> CsrMatrix {
    for (r, &m) in rhs.iter_mut().zip(constrained) {
        if m {
            *r = 0.0;
        }
    }
    a.constrain(constrained)
}

/// Vertex interpolation of a displacement field.
pub fn interpolate_u(mesh: &Mesh, f: impl Fn(&Vec3) -> Vec3) -> FieldU {
    let mut coeffs = vec![0.0; 3 * mesh.n_vertices()];
    for (v, x) in mesh.vertices.iter().enumerate() {
        let val = f(x);
        for a in 0..3 {
            coeffs[3 * v + a] = val[a];
        }
    }
    FieldU { coeffs }
}

/// Row-wise edge-moment interpolation of a tensor field: the dof of row `r`
/// on edge `e = (a,b)` is the 4-point Gauss approximation of
/// `int_0^1 G(x(t)) (x_b - x_a) dt` applied to that row.
pub fn interpolate_p(mesh: &Mesh, g: impl Fn(&Vec3) -> Matrix3<f64>) -> FieldP {
    let ne = mesh.n_edges();
    let mut coeffs = vec![0.0; 3 * ne];
    let (nodes, weights) = gauss_legendre_unit_4();
    for (e, pair) in mesh.edges.iter().enumerate() {
        let (xa, xb) = (mesh.vertices[pair[0]], mesh.vertices[pair[1]]);
        let tangent = xb - xa;
        for (t, w) in nodes.iter().zip(&weights) {
            let gx = g(&(xa + tangent * *t));
            for r in 0..3 {
                coeffs[r * ne + e] += w * gx.row(r).transpose().dot(&tangent);
            }
        }
    }
    FieldP { coeffs }
}

/// Evaluate `u` at `x`; evaluation on cell interfaces uses the cell of
/// lowest index.
pub fn evaluate_u(mesh: &Mesh, field: &FieldU, x: &Vec3) -> Result<Vec3> {
    let (t, lambda) = mesh
        .locate(x)
        .ok_or(Error::PointOutsideDomain([x[0], x[1], x[2]]))?;
    Ok(eval_u_local(mesh, field, t, &lambda))
}

pub fn eval_u_local(mesh: &Mesh, field: &FieldU, t: usize, lambda: &[f64; 4]) -> Vec3 {
    let tet = &mesh.tets[t];
    let mut val = Vec3::zeros();
    for i in 0..4 {
        for a in 0..3 {
            val[a] += lambda[i] * field.coeffs[3 * tet[i] + a];
        }
    }
    val
}

/// Evaluate the (piecewise constant) gradient `Du`, row `a` holding the
/// gradient of component `a`.
pub fn evaluate_du(mesh: &Mesh, field: &FieldU, x: &Vec3) -> Result<Matrix3<f64>> {
    let (t, _) = mesh
        .locate(x)
        .ok_or(Error::PointOutsideDomain([x[0], x[1], x[2]]))?;
    Ok(eval_du_local(mesh, field, t))
}

pub fn eval_du_local(mesh: &Mesh, field: &FieldU, t: usize) -> Matrix3<f64> {
    let tet = &mesh.tets[t];
    let g = &mesh.geom[t];
    let mut m = Matrix3::zeros();
    for i in 0..4 {
        for a in 0..3 {
            let c = field.coeffs[3 * tet[i] + a];
            for d in 0..3 {
                m[(a, d)] += c * g.grad_lambda[i][d];
            }
        }
    }
    m
}

/// Evaluate the tensor field `P` at `x`.
pub fn evaluate_p(mesh: &Mesh, field: &FieldP, x: &Vec3) -> Result<Matrix3<f64>> {
    let (t, lambda) = mesh
        .locate(x)
        .ok_or(Error::PointOutsideDomain([x[0], x[1], x[2]]))?;
    Ok(eval_p_local(mesh, field, t, &lambda))
}

pub fn eval_p_local(mesh: &Mesh, field: &FieldP, t: usize, lambda: &[f64; 4]) -> Matrix3<f64> {
    let ne = mesh.n_edges();
    let cell = CellBasis::new(mesh, t);
    let mut m = Matrix3::zeros();
    for k in 0..6 {
        let we = cell.edge_value(k, lambda);
        let e = cell.edges[k].0;
        for r in 0..3 {
            let c = field.coeffs[r * ne + e];
            for d in 0..3 {
                m[(r, d)] += c * we[d];
            }
        }
    }
    m
}

/// Evaluate the (piecewise constant) row-wise curl of `P` at `x`.
pub fn evaluate_curl_p(mesh: &Mesh, field: &FieldP, x: &Vec3) -> Result<Matrix3<f64>> {
    let (t, _) = mesh
        .locate(x)
        .ok_or(Error::PointOutsideDomain([x[0], x[1], x[2]]))?;
    Ok(eval_curl_p_local(mesh, field, t))
}

pub fn eval_curl_p_local(mesh: &Mesh, field: &FieldP, t: usize) -> Matrix3<f64> {
    let ne = mesh.n_edges();
    let cell = CellBasis::new(mesh, t);
    let mut m = Matrix3::zeros();
    for k in 0..6 {
        let ce = cell.edge_curl(k);
        let e = cell.edges[k].0;
        for r in 0..3 {
            let c = field.coeffs[r * ne + e];
            for d in 0..3 {
                m[(r, d)] += c * ce[d];
            }
        }
    }
    m
}

fn quadrature_norm_sq(mesh: &Mesh, mut f: impl FnMut(usize, &[f64; 4]) -> f64) -> f64 {
    let rule = QuadratureRule::for_order(4);
    let mut acc = 0.0;
    for t in 0..mesh.n_tets() {
        let vol = mesh.geom[t].volume;
        for (q, l) in rule.points.iter().enumerate() {
            acc += 6.0 * vol * rule.weights[q] * f(t, l);
        }
    }
    acc
}

pub fn norm_l2_u(mesh: &Mesh, field: &FieldU) -> f64 {
    quadrature_norm_sq(mesh, |t, l| eval_u_local(mesh, field, t, l).norm_squared()).sqrt()
}

/// Full H1 norm `(||u||^2 + ||Du||^2)^{1/2}`.
pub fn norm_h1(mesh: &Mesh, field: &FieldU) -> f64 {
    quadrature_norm_sq(mesh, |t, l| {
        eval_u_local(mesh, field, t, l).norm_squared() + eval_du_local(mesh, field, t).norm_squared()
    })
    .sqrt()
}

pub fn norm_l2_p(mesh: &Mesh, field: &FieldP) -> f64 {
    quadrature_norm_sq(mesh, |t, l| eval_p_local(mesh, field, t, l).norm_squared()).sqrt()
}

pub fn norm_l2_curl_p(mesh: &Mesh, field: &FieldP) -> f64 {
    quadrature_norm_sq(mesh, |t, _| eval_curl_p_local(mesh, field, t).norm_squared()).sqrt()
}

/// Full H(Curl) norm `(||P||^2 + ||Curl P||^2)^{1/2}`.
pub fn norm_hcurl(mesh: &Mesh, field: &FieldP) -> f64 {
    quadrature_norm_sq(mesh, |t, l| {
        eval_p_local(mesh, field, t, l).norm_squared() + eval_curl_p_local(mesh, field, t).norm_squared()
    })
    .sqrt()
}

/// Scalar P1 stiffness matrix `int grad v . grad w` (used by the discrete
/// Helmholtz decomposition).
pub fn assemble_scalar_stiffness(mesh: &Mesh) -> CsrMatrix {
    let nv = mesh.n_vertices();
    let mut trip = Triplets::new(nv, nv);
    for t in 0..mesh.n_tets() {
        let g = &mesh.geom[t];
        let tet = &mesh.tets[t];
        for i in 0..4 {
            for j in 0..4 {
                trip.push(tet[i], tet[j], g.volume * g.grad_lambda[i].dot(&g.grad_lambda[j]));
            }
        }
    }
    trip.to_csr()
}
