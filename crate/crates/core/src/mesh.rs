//! Triangulated 2-dimensional domains (unit sphere, flat square torus) with
//! piecewise-linear tensor calculus on tangent vector fields.
//!
//! Every face carries an orthonormal frame `{e₁, e₂}` and a 2×2 matrix that
//! turns vertex differences into frame derivatives, so derivatives of any
//! vertex-sampled quantity are per-face constants.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add3, cross, dot3, norm3, normalize3, scale3, sub3};
use crate::par;

pub type Vec3 = [f64; 3];
/// Symmetric 2×2 tensor in a face frame.
pub type Sym2 = [[f64; 2]; 2];
pub type Mat2 = [[f64; 2]; 2];

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    RoundSphere2,
    FlatTorus2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: DomainKind,
    /// Icosphere subdivision level, or grid cells per axis for the torus.
    pub resolution: usize,
}

impl DomainSpec {
    pub fn sphere(level: usize) -> Self {
        DomainSpec {
            kind: DomainKind::RoundSphere2,
            resolution: level,
        }
    }

    pub fn torus(n: usize) -> Self {
        DomainSpec {
            kind: DomainKind::FlatTorus2,
            resolution: n,
        }
    }
}

/// Maximum icosphere level accepted by [`DomainMesh::build`].
pub const MAX_SPHERE_LEVEL: usize = 8;
/// Maximum torus grid size accepted by [`DomainMesh::build`].
pub const MAX_TORUS_GRID: usize = 1024;

#[derive(Debug, Clone)]
pub struct DomainMesh {
    pub kind: DomainKind,
    pub resolution: usize,
    /// Unit vectors on the sphere; `(u, v, 0)` chart points on the torus.
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Geodesic-triangle area on the sphere, flat area on the torus.
    pub face_area: Vec<f64>,
    /// Orthonormal tangent pair per face, embedded in R³.
    pub face_frame: Vec<[Vec3; 2]>,
    /// `G` with `(D_{e₁}f, D_{e₂}f) = G·(f₁ − f₀, f₂ − f₀)`.
    pub face_grad: Vec<Mat2>,
    /// Lumped vertex areas.
    pub vertex_mass: Vec<f64>,
    /// `Ric = ricci_coeff · g`.
    pub ricci_coeff: f64,
}

/// Tangent vector field sampled at vertices, stored in R³ coordinates.
///
/// Torus fields live in the `z = 0` plane with `(∂_u, ∂_v)` as the first two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField(pub Vec<Vec3>);

impl TangentField {
    pub fn zeros(mesh: &DomainMesh) -> Self {
        TangentField(vec![[0.0; 3]; mesh.vertices.len()])
    }

    /// Samples `f` at every vertex and projects onto the tangent plane.
    pub fn from_fn(mesh: &DomainMesh, f: impl Fn(&Vec3) -> Vec3) -> Self {
        TangentField(
            mesh.vertices
                .iter()
                .map(|p| mesh.project_to_tangent(p, f(p)))
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Self {
        TangentField(self.0.iter().map(|x| scale3(x, c)).collect())
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(norm3).fold(0.0, f64::max)
    }
}

impl DomainMesh {
    pub fn build(spec: DomainSpec) -> Result<Self> {
        match spec.kind {
            DomainKind::RoundSphere2 => {
                if spec.resolution > MAX_SPHERE_LEVEL {
                    return Err(Error::Resolution {
                        kind: "round_sphere2",
                        resolution: spec.resolution,
                    });
                }
                let (vertices, faces) = icosphere(spec.resolution);
                Ok(Self::assemble(spec, vertices, faces, 1.0))
            }
            DomainKind::FlatTorus2 => {
                if spec.resolution < 4 || spec.resolution > MAX_TORUS_GRID {
                    return Err(Error::Resolution {
                        kind: "flat_torus2",
                        resolution: spec.resolution,
                    });
                }
                let (vertices, faces) = torus_grid(spec.resolution);
                Ok(Self::assemble(spec, vertices, faces, 0.0))
            }
        }
    }

    fn assemble(spec: DomainSpec, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, ricci: f64) -> Self {
        let mut mesh = DomainMesh {
            kind: spec.kind,
            resolution: spec.resolution,
            vertices,
            faces,
            face_area: Vec::new(),
            face_frame: Vec::new(),
            face_grad: Vec::new(),
            vertex_mass: Vec::new(),
            ricci_coeff: ricci,
        };
        let geo = par::map_indexed(mesh.faces.len(), |f| mesh.face_geometry(f));
        for (area, frame, grad) in geo {
            mesh.face_area.push(area);
            mesh.face_frame.push(frame);
            mesh.face_grad.push(grad);
        }
        let mut mass = vec![0.0; mesh.vertices.len()];
        for (face, area) in mesh.faces.iter().zip(&mesh.face_area) {
            for &v in face {
                mass[v] += area / 3.0;
            }
        }
        mesh.vertex_mass = mass;
        mesh
    }

    /// Edge vectors `p₁ − p₀`, `p₂ − p₀`, wrapped across the torus seam.
    pub fn face_edges(&self, f: usize) -> (Vec3, Vec3) {
        let [a, b, c] = self.faces[f];
        let (p0, p1, p2) = (&self.vertices[a], &self.vertices[b], &self.vertices[c]);
        match self.kind {
            DomainKind::RoundSphere2 => (sub3(p1, p0), sub3(p2, p0)),
            DomainKind::FlatTorus2 => (wrap_chart(sub3(p1, p0)), wrap_chart(sub3(p2, p0))),
        }
    }

    fn face_geometry(&self, f: usize) -> (f64, [Vec3; 2], Mat2) {
        let (a, b) = self.face_edges(f);
        let (area, frame) = match self.kind {
            DomainKind::RoundSphere2 => {
                let [i, j, k] = self.faces[f];
                let area = spherical_triangle_area(&self.vertices[i], &self.vertices[j], &self.vertices[k]);
                let e1 = normalize3(&a);
                let n = normalize3(&cross(&a, &b));
                (area, [e1, cross(&n, &e1)])
            }
            DomainKind::FlatTorus2 => {
                let area = 0.5 * (a[0] * b[1] - a[1] * b[0]).abs();
                (area, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            }
        };
        // E has the edge coordinates in the frame as columns; G = E^{-T}.
        let e = [
            [dot3(&a, &frame[0]), dot3(&b, &frame[0])],
            [dot3(&a, &frame[1]), dot3(&b, &frame[1])],
        ];
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        let grad = [[e[1][1] / det, -e[1][0] / det], [-e[0][1] / det, e[0][0] / det]];
        (area, frame, grad)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn total_area(&self) -> f64 {
        self.face_area.iter().sum()
    }

    /// Quadrature `Σ density·area` of a per-face density.
    pub fn integrate(&self, density: &[f64]) -> f64 {
        assert_eq!(density.len(), self.faces.len(), "density must be per-face");
        density.iter().zip(&self.face_area).map(|(d, a)| d * a).sum()
    }

    /// Per-face mean of a vertex scalar (exact face integral of its PL interpolant / area).
    pub fn face_average(&self, values: &[f64]) -> Vec<f64> {
        self.faces
            .iter()
            .map(|&[a, b, c]| (values[a] + values[b] + values[c]) / 3.0)
            .collect()
    }

    /// Frame derivatives `(D_{e₁}, D_{e₂})` on face `f` of a PL quantity with
    /// vertex values `w0, w1, w2`, written to `d1`, `d2`.
    #[inline]
    pub fn frame_derivative(&self, f: usize, w: [&[f64]; 3], d1: &mut [f64], d2: &mut [f64]) {
        let g = &self.face_grad[f];
        for c in 0..d1.len() {
            let da = w[1][c] - w[0][c];
            let db = w[2][c] - w[0][c];
            d1[c] = g[0][0] * da + g[0][1] * db;
            d2[c] = g[1][0] * da + g[1][1] * db;
        }
    }

    /// Tangential projection at a vertex position (identity in the torus chart, up to `z`).
    pub fn project_to_tangent(&self, p: &Vec3, x: Vec3) -> Vec3 {
        match self.kind {
            DomainKind::RoundSphere2 => sub3(&x, &scale3(p, dot3(&x, p))),
            DomainKind::FlatTorus2 => [x[0], x[1], 0.0],
        }
    }

    /// Face barycenter: normalized centroid on the sphere, wrapped chart mean on the torus.
    pub fn face_barycenter(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        match self.kind {
            DomainKind::RoundSphere2 => {
                normalize3(&add3(&add3(&self.vertices[a], &self.vertices[b]), &self.vertices[c]))
            }
            DomainKind::FlatTorus2 => {
                let (e1, e2) = self.face_edges(f);
                let p = add3(&self.vertices[a], &scale3(&add3(&e1, &e2), 1.0 / 3.0));
                [p[0].rem_euclid(TWO_PI), p[1].rem_euclid(TWO_PI), 0.0]
            }
        }
    }

    /// `A_{ij} = ⟨∇_{e_i}X, e_j⟩` on one face.
    pub fn covariant_on_face(&self, f: usize, x: &TangentField) -> Mat2 {
        let [a, b, c] = self.faces[f];
        let (mut d1, mut d2) = ([0.0; 3], [0.0; 3]);
        self.frame_derivative(f, [&x.0[a], &x.0[b], &x.0[c]], &mut d1, &mut d2);
        let [e1, e2] = &self.face_frame[f];
        [[dot3(&d1, e1), dot3(&d1, e2)], [dot3(&d2, e1), dot3(&d2, e2)]]
    }

    pub fn covariant_derivative(&self, x: &TangentField) -> Vec<Mat2> {
        par::map_indexed(self.n_faces(), |f| self.covariant_on_face(f, x))
    }

    pub fn divergence(&self, x: &TangentField) -> Vec<f64> {
        par::map_indexed(self.n_faces(), |f| {
            let a = self.covariant_on_face(f, x);
            a[0][0] + a[1][1]
        })
    }

    /// `(L_X g)_{ij} = A_{ij} + A_{ji}`; its trace is `2·div X` identically.
    pub fn lie_derivative_metric(&self, x: &TangentField) -> Vec<Sym2> {
        par::map_indexed(self.n_faces(), |f| lie_from_covariant(&self.covariant_on_face(f, x)))
    }

    /// `|L_X g|² − (4/m)(div X)²` per face, with `m = 2`.
    pub fn cauchy_schwarz_check(&self, x: &TangentField) -> Vec<f64> {
        par::map_indexed(self.n_faces(), |f| {
            let a = self.covariant_on_face(f, x);
            let l = lie_from_covariant(&a);
            let div = a[0][0] + a[1][1];
            frob2(&l) - 2.0 * div * div
        })
    }

    /// Face frame coordinates of the vertex-averaged field on face `f`.
    pub fn face_value(&self, f: usize, x: &TangentField) -> [f64; 2] {
        let [a, b, c] = self.faces[f];
        let m = scale3(&add3(&add3(&x.0[a], &x.0[b]), &x.0[c]), 1.0 / 3.0);
        let [e1, e2] = &self.face_frame[f];
        [dot3(&m, e1), dot3(&m, e2)]
    }

    /// Checks the vertex tangency invariant of a field.
    pub fn tangency_defect(&self, x: &TangentField) -> f64 {
        match self.kind {
            DomainKind::RoundSphere2 => self
                .vertices
                .iter()
                .zip(&x.0)
                .map(|(p, v)| dot3(p, v).abs())
                .fold(0.0, f64::max),
            DomainKind::FlatTorus2 => x.0.iter().map(|v| v[2].abs()).fold(0.0, f64::max),
        }
    }

    /// Writes the mesh in OFF format (torus in its chart plane).
    pub fn to_off(&self) -> String {
        let mut s = String::from("OFF\n");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.faces.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.12} {:.12} {:.12}", p[0], p[1], p[2]);
        }
        for [a, b, c] in &self.faces {
            let _ = writeln!(s, "3 {a} {b} {c}");
        }
        s
    }
}

pub fn lie_from_covariant(a: &Mat2) -> Sym2 {
    let off = a[0][1] + a[1][0];
    [[2.0 * a[0][0], off], [off, 2.0 * a[1][1]]]
}

/// Squared Frobenius norm.
pub fn frob2(m: &Mat2) -> f64 {
    m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x - TWO_PI * (x / TWO_PI).round();
    if y <= -PI {
        y += TWO_PI;
    }
    y
}

fn wrap_chart(d: Vec3) -> Vec3 {
    [wrap_angle(d[0]), wrap_angle(d[1]), 0.0]
}

/// Area of the geodesic triangle on the unit sphere (spherical excess).
pub fn spherical_triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let num = dot3(a, &cross(b, c)).abs();
    let den = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a);
    2.0 * num.atan2(den)
}

fn icosphere(level: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(normalize3)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |i: usize, j: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (i.min(j), i.max(j));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(normalize3(&add3(&verts[i], &verts[j])));
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for face in &mut faces {
        let [a, b, c] = *face;
        let n = cross(&sub3(&vertices[b], &vertices[a]), &sub3(&vertices[c], &vertices[a]));
        if dot3(&n, &vertices[a]) < 0.0 {
            face.swap(1, 2);
        }
    }
    (vertices, faces)
}

fn torus_grid(n: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let h = TWO_PI / n as f64;
    let idx = |i: usize, j: usize| (i % n) + n * (j % n);
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    (vertices, faces)
}
