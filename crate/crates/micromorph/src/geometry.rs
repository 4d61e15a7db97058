//! Lipschitz polyhedra (boxes and an L-shaped prism), structured tetrahedral
//! meshes via Kuhn subdivision, uniform red refinement and exterior-cone data
//! at boundary points.
//!
//! All shipped domains admit exact point-membership tests by half-space and
//! quadrant comparisons. The L-prism has a re-entrant edge along
//! `x = y = 1`, `0 < z < 1`, which is the non-convex case the regularity
//! experiments target.

use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use std::io::Write;

pub type Vec3 = Vector3<f64>;

const BND_TOL: f64 = 1e-12;

/// Shipped computational domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    /// (0,1)^3
    UnitCube,
    /// L-shaped cross-section times (0,1): ((0,2)^2 minus [1,2)x[1,2)) x (0,1)
    LPrism,
    /// (0,a) x (0,b) x (0,c)
    Box { a: f64, b: f64, c: f64 },
}

impl DomainSpec {
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            DomainSpec::UnitCube => (Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)),
            DomainSpec::LPrism => (Vec3::zeros(), Vec3::new(2.0, 2.0, 1.0)),
            DomainSpec::Box { a, b, c } => (Vec3::zeros(), Vec3::new(*a, *b, *c)),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            DomainSpec::UnitCube => 1.0,
            DomainSpec::LPrism => 3.0,
            DomainSpec::Box { a, b, c } => a * b * c,
        }
    }

    /// Exact membership in the open set.
    pub fn contains(&self, x: &Vec3) -> bool {
        match self {
            DomainSpec::UnitCube => (0..3).all(|i| x[i] > 0.0 && x[i] < 1.0),
            DomainSpec::Box { a, b, c } => {
                x[0] > 0.0 && x[0] < *a && x[1] > 0.0 && x[1] < *b && x[2] > 0.0 && x[2] < *c
            }
            DomainSpec::LPrism => {
                x[2] > 0.0
                    && x[2] < 1.0
                    && x[0] > 0.0
                    && x[0] < 2.0
                    && x[1] > 0.0
                    && x[1] < 2.0
                    && !(x[0] >= 1.0 && x[1] >= 1.0)
            }
        }
    }

    /// Membership in the closure, up to `tol`.
    pub fn contains_closure(&self, x: &Vec3, tol: f64) -> bool {
        match self {
            DomainSpec::UnitCube => (0..3).all(|i| x[i] >= -tol && x[i] <= 1.0 + tol),
            DomainSpec::Box { a, b, c } => {
                let dims = [*a, *b, *c];
                (0..3).all(|i| x[i] >= -tol && x[i] <= dims[i] + tol)
            }
            DomainSpec::LPrism => {
                x[2] >= -tol
                    && x[2] <= 1.0 + tol
                    && x[0] >= -tol
                    && x[0] <= 2.0 + tol
                    && x[1] >= -tol
                    && x[1] <= 2.0 + tol
                    && !(x[0] > 1.0 + tol && x[1] > 1.0 + tol)
            }
        }
    }

    /// Distance from a point of the closure to the boundary.
    pub fn boundary_distance(&self, x: &Vec3) -> f64 {
        match self {
            DomainSpec::UnitCube => {
                (0..3).map(|i| x[i].min(1.0 - x[i])).fold(f64::INFINITY, f64::min)
            }
            DomainSpec::Box { a, b, c } => {
                let dims = [*a, *b, *c];
                (0..3).map(|i| x[i].min(dims[i] - x[i])).fold(f64::INFINITY, f64::min)
            }
            DomainSpec::LPrism => {
                let dz = x[2].min(1.0 - x[2]);
                dz.min(l_section_boundary_distance(x[0], x[1]))
            }
        }
    }

    pub fn is_on_boundary(&self, x: &Vec3, tol: f64) -> bool {
        self.contains_closure(x, tol) && self.boundary_distance(x) <= tol
    }

    /// Outward unit normals of all boundary faces active at `x0`.
    fn active_normals(&self, x0: &Vec3, tol: f64) -> Vec<Vec3> {
        let mut normals = Vec::new();
        match self {
            DomainSpec::UnitCube | DomainSpec::Box { .. } => {
                let (_, hi) = self.bounding_box();
                for i in 0..3 {
                    if x0[i].abs() <= tol {
                        normals.push(-Vec3::ith(i, 1.0));
                    }
                    if (x0[i] - hi[i]).abs() <= tol {
                        normals.push(Vec3::ith(i, 1.0));
                    }
                }
            }
            DomainSpec::LPrism => {
                if x0[2].abs() <= tol {
                    normals.push(-Vec3::z());
                }
                if (x0[2] - 1.0).abs() <= tol {
                    normals.push(Vec3::z());
                }
                if x0[0].abs() <= tol {
                    normals.push(-Vec3::x());
                }
                if x0[1].abs() <= tol {
                    normals.push(-Vec3::y());
                }
                if (x0[0] - 2.0).abs() <= tol {
                    normals.push(Vec3::x());
                }
                if (x0[1] - 2.0).abs() <= tol {
                    normals.push(Vec3::y());
                }
                // re-entrant faces x = 1 (y >= 1) and y = 1 (x >= 1): only the
                // bisector of the removed quadrant gives an exterior cone that
                // is uniform over the whole face, so both quadrant normals
                // enter as soon as either face is active
                let reentrant_x = (x0[0] - 1.0).abs() <= tol && x0[1] >= 1.0 - tol;
                let reentrant_y = (x0[1] - 1.0).abs() <= tol && x0[0] >= 1.0 - tol;
                if reentrant_x || reentrant_y {
                    normals.push(Vec3::x());
                    normals.push(Vec3::y());
                }
            }
        }
        normals
    }

    /// Distance from a boundary point to the nearest boundary face that is
    /// not active at that point.
    fn min_inactive_face_distance(&self, x0: &Vec3, tol: f64) -> f64 {
        let mut d = f64::INFINITY;
        match self {
            DomainSpec::UnitCube | DomainSpec::Box { .. } => {
                let (_, hi) = self.bounding_box();
                for i in 0..3 {
                    for v in [0.0, hi[i]] {
                        let dist = (x0[i] - v).abs();
                        if dist > tol {
                            d = d.min(dist);
                        }
                    }
                }
            }
            DomainSpec::LPrism => {
                for v in [0.0, 1.0] {
                    let dist = (x0[2] - v).abs();
                    if dist > tol {
                        d = d.min(dist);
                    }
                }
                for s in L_SEGS {
                    let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
                    let (ex, ey) = (bx - ax, by - ay);
                    let t = (((x0[0] - ax) * ex + (x0[1] - ay) * ey) / (ex * ex + ey * ey))
                        .clamp(0.0, 1.0);
                    let dist = ((x0[0] - ax - t * ex).powi(2) + (x0[1] - ay - t * ey).powi(2))
                        .sqrt();
                    if dist > tol {
                        d = d.min(dist);
                    }
                }
            }
        }
        d
    }

    /// Exterior cone at a boundary point. Half-angle is pi/4 on a face
    /// interior and pi/8 at edges and corners; the axis is the normalized sum
    /// of the active outward face normals.
    pub fn exterior_cone(&self, x0: &Vec3) -> Result<ConeSpec> {
        if !self.is_on_boundary(x0, BND_TOL) {
            return Err(Error::NotOnBoundary([x0[0], x0[1], x0[2]]));
        }
        // classification tolerance is looser than the membership tolerance so
        // that nearly-coincident constraints are all picked up
        let normals = self.active_normals(x0, 1e-9);
        assert!(!normals.is_empty());
        let axis = normals.iter().sum::<Vec3>().normalize();
        let half_angle = if normals.len() == 1 {
            std::f64::consts::FRAC_PI_4
        } else {
            std::f64::consts::FRAC_PI_8
        };
        let (lo, hi) = self.bounding_box();
        let min_dim = (hi - lo).min();
        // the cone test samples boundary points near the apex; keep the
        // neighborhood away from faces whose normal is not active here
        let clearance = 0.9 * self.min_inactive_face_distance(x0, 1e-9);
        Ok(ConeSpec {
            apex: *x0,
            axis,
            half_angle,
            rho: 0.1_f64.min(0.45 * min_dim),
            sample_radius: 0.25_f64.min(0.45 * min_dim).min(clearance),
        })
    }

    /// Boundary point used by the regularity experiments: the midpoint of the
    /// re-entrant edge for the L-prism, a face center otherwise.
    pub fn probe_point(&self) -> Vec3 {
        match self {
            DomainSpec::LPrism => Vec3::new(1.0, 1.0, 0.5),
            DomainSpec::UnitCube => Vec3::new(0.5, 0.5, 0.0),
            DomainSpec::Box { a, b, .. } => Vec3::new(0.5 * a, 0.5 * b, 0.0),
        }
    }

    /// Project a nearby point onto the boundary (used by sampling tests).
    pub fn project_to_boundary(&self, x: &Vec3) -> Vec3 {
        let mut p = *x;
        match self {
            DomainSpec::UnitCube | DomainSpec::Box { .. } => {
                let (_, hi) = self.bounding_box();
                for i in 0..3 {
                    p[i] = p[i].clamp(0.0, hi[i]);
                }
                // snap the coordinate closest to a face
                let (mut best, mut bi, mut bv) = (f64::INFINITY, 0, 0.0);
                for i in 0..3 {
                    if p[i] < best {
                        best = p[i];
                        bi = i;
                        bv = 0.0;
                    }
                    if hi[i] - p[i] < best {
                        best = hi[i] - p[i];
                        bi = i;
                        bv = hi[i];
                    }
                }
                p[bi] = bv;
            }
            DomainSpec::LPrism => {
                let z = p[2].clamp(0.0, 1.0);
                let (bx, by) = l_section_closest_boundary(p[0], p[1]);
                let inside_section =
                    p[0] >= 0.0 && p[0] <= 2.0 && p[1] >= 0.0 && p[1] <= 2.0 && !(p[0] > 1.0 && p[1] > 1.0);
                if !inside_section {
                    return Vec3::new(bx, by, z);
                }
                // nearest of the two lids and the lateral wall
                let lateral = Vec3::new(bx, by, z);
                let bottom = Vec3::new(p[0], p[1], 0.0);
                let top = Vec3::new(p[0], p[1], 1.0);
                p = [lateral, bottom, top]
                    .into_iter()
                    .min_by(|a, b| {
                        (a - x).norm().partial_cmp(&(b - x).norm()).unwrap()
                    })
                    .unwrap();
            }
        }
        p
    }
}

/// Boundary segments of the L polygon (counter-clockwise).
const L_SEGS: [[f64; 4]; 6] = [
    [0.0, 0.0, 2.0, 0.0],
    [2.0, 0.0, 2.0, 1.0],
    [2.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 2.0],
    [1.0, 2.0, 0.0, 2.0],
    [0.0, 2.0, 0.0, 0.0],
];

/// Closest point on the boundary of the L cross-section.
fn l_section_closest_boundary(x: f64, y: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, (0.0, 0.0));
    for s in L_SEGS {
        let (ax, ay, bx, by) = (s[0], s[1], s[2], s[3]);
        let (ex, ey) = (bx - ax, by - ay);
        let t = (((x - ax) * ex + (y - ay) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (px, py) = (ax + t * ex, ay + t * ey);
        let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        if d < best.0 {
            best = (d, (px, py));
        }
    }
    best.1
}

/// Distance from an interior point of the L cross-section to its boundary.
fn l_section_boundary_distance(x: f64, y: f64) -> f64 {
    let (px, py) = l_section_closest_boundary(x, y);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

/// Exterior cone attached to a boundary point: the open cone
/// `{x0 + h | angle(h, axis) < half_angle, 0 < |h| < rho}` avoids the domain.
#[derive(Debug, Clone)]
pub struct ConeSpec {
    pub apex: Vec3,
    pub axis: Vec3,
    pub half_angle: f64,
    pub rho: f64,
    /// radius of the boundary neighborhood over which the cone test is run
    pub sample_radius: f64,
}

impl ConeSpec {
    pub fn contains_direction(&self, d: &Vec3) -> bool {
        let n = d.norm();
        n > 0.0 && self.axis.dot(d) >= n * self.half_angle.cos()
    }

    /// Random unit vector in the open cone.
    pub fn sample_direction<R: Rng>(&self, rng: &mut R) -> Vec3 {
        let cos_max = self.half_angle.cos();
        loop {
            let d = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let n = d.norm();
            if n > 1e-9 && n <= 1.0 && self.axis.dot(&d) >= n * cos_max {
                return d / n;
            }
        }
    }

    /// Sampling oracle for the exterior-cone property: for boundary points x
    /// near the apex and shifts h in the cone, x + h must avoid the domain.
    /// Returns the number of violations over `n_samples` samples.
    pub fn exterior_violations<R: Rng>(
        &self,
        domain: &DomainSpec,
        n_samples: usize,
        rng: &mut R,
    ) -> usize {
        let mut violations = 0;
        for _ in 0..n_samples {
            let offset = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ) * self.sample_radius;
            let x = domain.project_to_boundary(&(self.apex + offset));
            if (x - self.apex).norm() >= self.sample_radius {
                continue;
            }
            let h = self.sample_direction(rng) * (rng.random::<f64>() * self.rho).max(1e-9);
            if domain.contains(&(x + h)) {
                violations += 1;
            }
        }
        violations
    }
}

/// Local edges of a tetrahedron, by local vertex indices.
pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
/// Local faces, by local vertex indices.
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Per-tet affine geometry: barycentric gradients and volume.
#[derive(Debug, Clone)]
pub struct TetGeometry {
    pub grad_lambda: [Vec3; 4],
    pub centroid: Vec3,
    pub volume: f64,
}

/// Conforming tetrahedral mesh of a [`DomainSpec`] with globally oriented
/// edges (ascending vertex id).
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: DomainSpec,
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    /// global edges, lower vertex id first; this fixes the edge orientation
    pub edges: Vec<[usize; 2]>,
    pub faces: Vec<[usize; 3]>,
    /// per tet: the six global edge ids in [`LOCAL_EDGES`] order, with sign
    /// +1 if the local orientation agrees with the global (ascending) one
    pub tet_edges: Vec<[(usize, i8); 6]>,
    pub boundary_vertex: Vec<bool>,
    pub boundary_edge: Vec<bool>,
    pub boundary_face: Vec<bool>,
    pub geom: Vec<TetGeometry>,
    /// longest edge in the mesh
    pub mesh_size: f64,
    bins: LocatorBins,
}

#[derive(Debug, Clone)]
struct LocatorBins {
    origin: Vec3,
    inv_h: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl LocatorBins {
    fn build(vertices: &[Vec3], tets: &[[usize; 4]], lo: Vec3, hi: Vec3, h: f64) -> Self {
        let h = h.max(1e-12);
        let dims = [
            (((hi[0] - lo[0]) / h).ceil() as usize).max(1),
            (((hi[1] - lo[1]) / h).ceil() as usize).max(1),
            (((hi[2] - lo[2]) / h).ceil() as usize).max(1),
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clampi = |v: f64, d: usize| -> usize { (v.floor().max(0.0) as usize).min(d - 1) };
        for (t, tet) in tets.iter().enumerate() {
            let mut bmin = vertices[tet[0]];
            let mut bmax = vertices[tet[0]];
            for &v in &tet[1..] {
                bmin = bmin.inf(&vertices[v]);
                bmax = bmax.sup(&vertices[v]);
            }
            let i0 = clampi((bmin[0] - lo[0]) / h - 1e-9, dims[0]);
            let i1 = clampi((bmax[0] - lo[0]) / h + 1e-9, dims[0]);
            let j0 = clampi((bmin[1] - lo[1]) / h - 1e-9, dims[1]);
            let j1 = clampi((bmax[1] - lo[1]) / h + 1e-9, dims[1]);
            let k0 = clampi((bmin[2] - lo[2]) / h - 1e-9, dims[2]);
            let k1 = clampi((bmax[2] - lo[2]) / h + 1e-9, dims[2]);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    for k in k0..=k1 {
                        cells[(k * dims[1] + j) * dims[0] + i].push(t as u32);
                    }
                }
            }
        }
        LocatorBins { origin: lo, inv_h: 1.0 / h, dims, cells }
    }

    fn candidates(&self, x: &Vec3) -> &[u32] {
        let idx = |v: f64, d: usize| -> usize {
            (v.floor().max(0.0) as usize).min(d.saturating_sub(1))
        };
        let i = idx((x[0] - self.origin[0]) * self.inv_h, self.dims[0]);
        let j = idx((x[1] - self.origin[1]) * self.inv_h, self.dims[1]);
        let k = idx((x[2] - self.origin[2]) * self.inv_h, self.dims[2]);
        &self.cells[(k * self.dims[1] + j) * self.dims[0] + i]
    }
}

fn signed_volume(v: &[Vec3; 4]) -> f64 {
    let m = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    m.determinant() / 6.0
}

impl Mesh {
    /// Assemble edge/face incidence, boundary flags and the point locator
    /// from raw cells. Tets with negative orientation are repaired by
    /// swapping their last two vertices.
    pub fn from_cells(domain: DomainSpec, vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Self {
        for tet in tets.iter_mut() {
            let vs = [
                vertices[tet[0]],
                vertices[tet[1]],
                vertices[tet[2]],
                vertices[tet[3]],
            ];
            if signed_volume(&vs) < 0.0 {
                tet.swap(2, 3);
            }
        }
        // global edges
        let mut edge_map = std::collections::HashMap::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut tet_edges = Vec::with_capacity(tets.len());
        for tet in &tets {
            let mut te = [(0usize, 0i8); 6];
            for (k, le) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (tet[le[0]], tet[le[1]]);
                let key = if a < b { [a, b] } else { [b, a] };
                let id = *edge_map.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
                te[k] = (id, if a < b { 1 } else { -1 });
            }
            tet_edges.push(te);
        }
        // global faces with adjacency counts
        let mut face_map: std::collections::HashMap<[usize; 3], usize> =
            std::collections::HashMap::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();
        let mut face_count: Vec<u8> = Vec::new();
        for tet in &tets {
            for lf in LOCAL_FACES.iter() {
                let mut key = [tet[lf[0]], tet[lf[1]], tet[lf[2]]];
                key.sort_unstable();
                match face_map.get(&key) {
                    Some(&id) => face_count[id] += 1,
                    None => {
                        face_map.insert(key, faces.len());
                        faces.push(key);
                        face_count.push(1);
                    }
                }
            }
        }
        let boundary_face: Vec<bool> = face_count.iter().map(|&c| c == 1).collect();
        let mut boundary_vertex = vec![false; vertices.len()];
        let mut boundary_edge_set = std::collections::HashSet::new();
        for (f, face) in faces.iter().enumerate() {
            if boundary_face[f] {
                for &v in face {
                    boundary_vertex[v] = true;
                }
                for pair in [[face[0], face[1]], [face[0], face[2]], [face[1], face[2]]] {
                    boundary_edge_set.insert(pair);
                }
            }
        }
        let boundary_edge: Vec<bool> =
            edges.iter().map(|e| boundary_edge_set.contains(e)).collect();

        let geom: Vec<TetGeometry> = tets
            .iter()
            .map(|tet| {
                let v = [
                    vertices[tet[0]],
                    vertices[tet[1]],
                    vertices[tet[2]],
                    vertices[tet[3]],
                ];
                let j = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
                let jinv = j.try_inverse().expect("degenerate tet");
                let g1 = Vec3::new(jinv[(0, 0)], jinv[(0, 1)], jinv[(0, 2)]);
                let g2 = Vec3::new(jinv[(1, 0)], jinv[(1, 1)], jinv[(1, 2)]);
                let g3 = Vec3::new(jinv[(2, 0)], jinv[(2, 1)], jinv[(2, 2)]);
                let g0 = -(g1 + g2 + g3);
                TetGeometry {
                    grad_lambda: [g0, g1, g2, g3],
                    centroid: (v[0] + v[1] + v[2] + v[3]) / 4.0,
                    volume: signed_volume(&v),
                }
            })
            .collect();

        let mesh_size = edges
            .iter()
            .map(|e| (vertices[e[0]] - vertices[e[1]]).norm())
            .fold(0.0f64, f64::max);
        let (lo, hi) = {
            let mut lo = vertices[0];
            let mut hi = vertices[0];
            for v in &vertices {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            (lo, hi)
        };
        let bins = LocatorBins::build(&vertices, &tets, lo, hi, mesh_size);
        Mesh {
            domain,
            vertices,
            tets,
            edges,
            faces,
            tet_edges,
            boundary_vertex,
            boundary_edge,
            boundary_face,
            geom,
            mesh_size,
            bins,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.geom.iter().map(|g| g.volume).sum()
    }

    pub fn boundary_area(&self) -> f64 {
        self.faces
            .iter()
            .zip(&self.boundary_face)
            .filter(|(_, &b)| b)
            .map(|(f, _)| {
                let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Barycentric coordinates of `x` in tet `t`.
    pub fn barycentric(&self, t: usize, x: &Vec3) -> [f64; 4] {
        let g = &self.geom[t];
        let mut l = [0.0; 4];
        for i in 0..4 {
            l[i] = 0.25 + g.grad_lambda[i].dot(&(x - g.centroid));
        }
        l
    }

    /// Containing cell (lowest id on interfaces) and barycentric coordinates.
    pub fn locate(&self, x: &Vec3) -> Option<(usize, [f64; 4])> {
        let mut cands: Vec<u32> = self.bins.candidates(x).to_vec();
        cands.sort_unstable();
        for &t in &cands {
            let l = self.barycentric(t as usize, x);
            if l.iter().all(|&li| li >= -1e-12) {
                return Some((t as usize, l));
            }
        }
        None
    }

    /// Mesh invariants: positive volumes, conforming faces, exact volume.
    pub fn validate(&self) -> Result<()> {
        for (t, g) in self.geom.iter().enumerate() {
            if g.volume <= 0.0 {
                return Err(Error::ConfigError(format!("tet {t} has non-positive volume")));
            }
        }
        // face adjacency counts were checked during construction via
        // boundary flags; re-derive the conformity check here
        let mut counts = std::collections::HashMap::new();
        for tet in &self.tets {
            for lf in LOCAL_FACES.iter() {
                let mut key = [tet[lf[0]], tet[lf[1]], tet[lf[2]]];
                key.sort_unstable();
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        for (_, c) in counts {
            if c > 2 {
                return Err(Error::ConfigError("non-conforming face".into()));
            }
        }
        let vol = self.total_volume();
        if (vol - self.domain.volume()).abs() > 1e-10 * self.domain.volume() {
            return Err(Error::ConfigError(format!(
                "mesh volume {vol} does not match domain volume {}",
                self.domain.volume()
            )));
        }
        Ok(())
    }

    /// Legacy ASCII VTK export (unstructured grid, cell type 10) with named
    /// point and cell data arrays.
    pub fn write_vtk<W: Write>(
        &self,
        w: &mut W,
        point_data: &[(&str, usize, &[f64])],
        cell_data: &[(&str, usize, &[f64])],
    ) -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "micromorph mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.n_vertices())?;
        for v in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
        }
        writeln!(w, "CELLS {} {}", self.n_tets(), 5 * self.n_tets())?;
        for t in &self.tets {
            writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
        }
        writeln!(w, "CELL_TYPES {}", self.n_tets())?;
        for _ in 0..self.n_tets() {
            writeln!(w, "10")?;
        }
        if !point_data.is_empty() {
            writeln!(w, "POINT_DATA {}", self.n_vertices())?;
            for (name, comps, data) in point_data {
                write_vtk_array(w, name, *comps, data, self.n_vertices())?;
            }
        }
        if !cell_data.is_empty() {
            writeln!(w, "CELL_DATA {}", self.n_tets())?;
            for (name, comps, data) in cell_data {
                write_vtk_array(w, name, *comps, data, self.n_tets())?;
            }
        }
        Ok(())
    }
}

fn write_vtk_array<W: Write>(
    w: &mut W,
    name: &str,
    comps: usize,
    data: &[f64],
    n: usize,
) -> std::io::Result<()> {
    assert_eq!(data.len(), comps * n);
    if comps == 3 {
        writeln!(w, "VECTORS {name} double")?;
        for i in 0..n {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", data[3 * i], data[3 * i + 1], data[3 * i + 2])?;
        }
    } else {
        writeln!(w, "SCALARS {name} double {comps}")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for i in 0..n {
            for c in 0..comps {
                if c > 0 {
                    write!(w, " ")?;
                }
                write!(w, "{:.17e}", data[comps * i + c])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Structured mesh by Kuhn (Freudenthal) subdivision: each grid cube is split
/// into the six path tetrahedra, `n` cubes per unit length.
pub fn build_mesh(domain: DomainSpec, n: usize) -> Mesh {
    assert!(n >= 1, "subdivision count must be >= 1");
    let (lo, hi) = domain.bounding_box();
    let cells = [
        (((hi[0] - lo[0]) * n as f64).round() as usize).max(1),
        (((hi[1] - lo[1]) * n as f64).round() as usize).max(1),
        (((hi[2] - lo[2]) * n as f64).round() as usize).max(1),
    ];
    let h = [
        (hi[0] - lo[0]) / cells[0] as f64,
        (hi[1] - lo[1]) / cells[1] as f64,
        (hi[2] - lo[2]) / cells[2] as f64,
    ];
    let grid_point = |i: usize, j: usize, k: usize| {
        Vec3::new(
            lo[0] + i as f64 * h[0],
            lo[1] + j as f64 * h[1],
            lo[2] + k as f64 * h[2],
        )
    };
    let mut vid = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    // the six tets of the Kuhn split: lattice paths from corner 000 to 111
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for k in 0..cells[2] {
        for j in 0..cells[1] {
            for i in 0..cells[0] {
                let center = Vec3::new(
                    lo[0] + (i as f64 + 0.5) * h[0],
                    lo[1] + (j as f64 + 0.5) * h[1],
                    lo[2] + (k as f64 + 0.5) * h[2],
                );
                if !domain.contains(&center) {
                    continue;
                }
                let mut corner_id = |d: [usize; 3]| -> usize {
                    let key = (i + d[0], j + d[1], k + d[2]);
                    *vid.entry(key).or_insert_with(|| {
                        vertices.push(grid_point(key.0, key.1, key.2));
                        vertices.len() - 1
                    })
                };
                for perm in PERMS {
                    let mut d = [0usize; 3];
                    let mut tet = [0usize; 4];
                    tet[0] = corner_id(d);
                    for (step, &axis) in perm.iter().enumerate() {
                        d[axis] = 1;
                        tet[step + 1] = corner_id(d);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    Mesh::from_cells(domain, vertices, tets)
}

/// Exact point membership for the shipped polyhedral domains.
pub fn point_in_domain(domain: &DomainSpec, x: &Vec3) -> bool {
    domain.contains(x)
}

/// Uniform red refinement: every tet is split into eight children through its
/// edge midpoints (Bey's rule); the old vertex set is preserved.
pub fn refine(mesh: &Mesh) -> Mesh {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    for e in &mesh.edges {
        vertices.push((mesh.vertices[e[0]] + mesh.vertices[e[1]]) * 0.5);
    }
    let mut tets = Vec::with_capacity(8 * mesh.n_tets());
    for (t, tet) in mesh.tets.iter().enumerate() {
        // midpoint ids in LOCAL_EDGES order: 01, 02, 03, 12, 13, 23
        let m: Vec<usize> = mesh.tet_edges[t].iter().map(|&(e, _)| nv + e).collect();
        let [v0, v1, v2, v3] = *tet;
        let (m01, m02, m03, m12, m13, m23) = (m[0], m[1], m[2], m[3], m[4], m[5]);
        tets.push([v0, m01, m02, m03]);
        tets.push([m01, v1, m12, m13]);
        tets.push([m02, m12, v2, m23]);
        tets.push([m03, m13, m23, v3]);
        // interior octahedron, split along the m02-m13 diagonal
        tets.push([m01, m02, m03, m13]);
        tets.push([m01, m02, m12, m13]);
        tets.push([m02, m03, m13, m23]);
        tets.push([m02, m12, m13, m23]);
    }
    Mesh::from_cells(mesh.domain, vertices, tets)
}
