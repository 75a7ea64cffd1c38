//! Maps `φ: M → Sⁿ` sampled at mesh vertices, their piecewise-linear
//! differential, and sections of the pullback bundle `φ⁻¹TSⁿ`.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, project_out};
use crate::mesh::{DomainKind, DomainMesh, Sym2};
use crate::par;

/// Per-vertex unit vectors in `R^{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereMap {
    n: usize,
    values: Vec<f64>,
}

/// Per-vertex ambient vectors tangent to the sphere at `φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionField {
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum MapKind {
    /// Sphere mesh to S², `φ(x) = x`.
    IdentityS2,
    /// Sphere mesh into the equator of Sⁿ.
    Equatorial { n: usize },
    /// Torus mesh to S³, `(u, v) ↦ (cos u, sin u, cos v, sin v)/√2`.
    CliffordTorus,
    /// Tangent noise added to a base map, then renormalized.
    Perturbed {
        base: Box<MapKind>,
        seed: u64,
        amplitude: f64,
    },
    /// Explicit per-vertex rows with `n+1` columns.
    Custom { data: Vec<Vec<f64>> },
}

/// Builds a map of the requested kind on `mesh`.
pub fn make_map(mesh: &DomainMesh, kind: &MapKind) -> Result<SphereMap> {
    match kind {
        MapKind::IdentityS2 => make_map(mesh, &MapKind::Equatorial { n: 2 }),
        MapKind::Equatorial { n } => {
            if mesh.kind != DomainKind::RoundSphere2 {
                return Err(Error::Incompatible("equatorial maps need a sphere mesh".into()));
            }
            if *n < 2 {
                return Err(Error::Incompatible(format!("target dimension must be >= 2, got {n}")));
            }
            let d = n + 1;
            let mut values = vec![0.0; d * mesh.n_vertices()];
            for (row, p) in values.chunks_mut(d).zip(&mesh.vertices) {
                row[..3].copy_from_slice(p);
            }
            Ok(SphereMap { n: *n, values })
        }
        MapKind::CliffordTorus => {
            if mesh.kind != DomainKind::FlatTorus2 {
                return Err(Error::Incompatible("the Clifford torus needs a torus mesh".into()));
            }
            let values = mesh
                .vertices
                .iter()
                .flat_map(|p| {
                    let (su, cu) = p[0].sin_cos();
                    let (sv, cv) = p[1].sin_cos();
                    [cu, su, cv, sv].map(|x| x * FRAC_1_SQRT_2)
                })
                .collect();
            Ok(SphereMap { n: 3, values })
        }
        MapKind::Perturbed {
            base,
            seed,
            amplitude,
        } => {
            if !(amplitude.is_finite() && *amplitude >= 0.0) {
                return Err(Error::Incompatible(format!("invalid perturbation amplitude {amplitude}")));
            }
            let mut map = make_map(mesh, base)?;
            map.perturb(*seed, *amplitude);
            Ok(map)
        }
        MapKind::Custom { data } => {
            let map = SphereMap::from_rows(data)?;
            if map.n_vertices() != mesh.n_vertices() {
                return Err(Error::Incompatible(format!(
                    "custom map has {} rows, mesh has {} vertices",
                    map.n_vertices(),
                    mesh.n_vertices()
                )));
            }
            Ok(map)
        }
    }
}

impl SphereMap {
    /// Builds a map from rows, renormalizing each. Rows off the sphere by
    /// more than 1e−6 are logged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if d < 3 {
            return Err(Error::Incompatible("map rows need at least 3 columns".into()));
        }
        let mut values = Vec::with_capacity(d * rows.len());
        let mut worst: f64 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Incompatible(format!("row {i} has {} columns, expected {d}", row.len())));
            }
            let mut r = row.clone();
            let norm = normalize(&mut r);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Incompatible(format!("row {i} cannot be normalized")));
            }
            worst = worst.max((norm - 1.0).abs());
            values.extend_from_slice(&r);
        }
        if worst > 1e-6 {
            log::warn!("custom map rows renormalized (max norm deviation {worst:.3e})");
        }
        Ok(SphereMap { n: d - 1, values })
    }

    /// Parses a JSON array of per-vertex rows.
    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
        Self::from_rows(&rows)
    }

    pub fn target_dim(&self) -> usize {
        self.n
    }

    /// Ambient dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn n_vertices(&self) -> usize {
        self.values.len() / self.dim()
    }

    #[inline]
    pub fn value(&self, v: usize) -> &[f64] {
        let d = self.dim();
        &self.values[v * d..(v + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }

    /// Largest `| |φ(x)| − 1 |` over vertices.
    pub fn unit_defect(&self) -> f64 {
        self.values
            .chunks(self.dim())
            .map(|r| (dot(r, r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `φ(x) ← (φ(x) + s·w(x)) / |…|` at every vertex.
    pub fn retract(&self, w: &[f64], s: f64) -> SphereMap {
        let mut values = self.values.clone();
        for (row, dir) in values.chunks_mut(self.dim()).zip(w.chunks(self.dim())) {
            for (x, y) in row.iter_mut().zip(dir) {
                *x += s * y;
            }
            normalize(row);
        }
        SphereMap { n: self.n, values }
    }

    fn perturb(&mut self, seed: u64, amplitude: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut noise = vec![0.0; d];
        for row in self.values.chunks_mut(d) {
            for x in noise.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            project_out(&mut noise, row);
            for (x, e) in row.iter_mut().zip(&noise) {
                *x += amplitude * e;
            }
            normalize(row);
        }
    }

    /// Unit vector normal to `φ` on face `f`: the normalized vertex average.
    pub fn face_point(&self, mesh: &DomainMesh, f: usize, out: &mut [f64]) {
        let [a, b, c] = mesh.faces[f];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.value(a)[k] + self.value(b)[k] + self.value(c)[k];
        }
        normalize(out);
    }
}

impl SectionField {
    pub fn zeros(dim: usize, n_vertices: usize) -> Self {
        SectionField {
            dim,
            values: vec![0.0; dim * n_vertices],
        }
    }

    /// Wraps raw values, trusting the caller on tangency.
    pub(crate) fn from_raw(dim: usize, values: Vec<f64>) -> Self {
        SectionField { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn value(&self, v: usize) -> &[f64] {
        &self.values[v * self.dim..(v + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        SectionField {
            dim: self.dim,
            values: self.values.iter().map(|x| c * x).collect(),
        }
    }

    pub fn add(&self, other: &SectionField) -> Self {
        SectionField {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    /// Largest `|⟨w(x), φ(x)⟩|`.
    pub fn tangency_defect(&self, map: &SphereMap) -> f64 {
        (0..self.n_vertices())
            .map(|v| dot(self.value(v), map.value(v)).abs())
            .fold(0.0, f64::max)
    }
}

/// `w(x) = v − ⟨v, φ(x)⟩ φ(x)`.
pub fn conformal_section(map: &SphereMap, v: &[f64]) -> SectionField {
    assert_eq!(v.len(), map.dim(), "ambient vector has the wrong dimension");
    let mut values = Vec::with_capacity(map.values.len());
    for x in 0..map.n_vertices() {
        let p = map.value(x);
        let c = dot(v, p);
        values.extend(v.iter().zip(p).map(|(vi, pi)| vi - c * pi));
    }
    SectionField::from_raw(map.dim(), values)
}

/// The `n+1` sections of the ambient standard basis.
pub fn conformal_basis(map: &SphereMap) -> Vec<SectionField> {
    (0..map.dim())
        .map(|a| {
            let mut e = vec![0.0; map.dim()];
            e[a] = 1.0;
            conformal_section(map, &e)
        })
        .collect()
}

/// Removes the `φ` component of an ambient per-vertex field.
pub fn project_tangent(map: &SphereMap, ambient: &[f64]) -> SectionField {
    assert_eq!(ambient.len(), map.values.len(), "field size does not match the map");
    let mut values = ambient.to_vec();
    for (row, p) in values.chunks_mut(map.dim()).zip(map.values.chunks(map.dim())) {
        project_out(row, p);
    }
    SectionField::from_raw(map.dim(), values)
}

/// Face-wise first-order data of a map.
#[derive(Debug, Clone)]
pub struct MapGeometry {
    pub dim: usize,
    /// `dφ(e₁)` then `dφ(e₂)` per face, `2·dim` entries each.
    pub dphi: Vec<f64>,
    /// Energy density `t = |dφ|²/2`.
    pub density: Vec<f64>,
    /// `φ*can` in the face frame.
    pub pullback: Vec<Sym2>,
    /// Normalized vertex average of `φ`, `dim` entries per face.
    pub face_point: Vec<f64>,
}

impl MapGeometry {
    #[inline]
    pub fn dphi(&self, f: usize) -> (&[f64], &[f64]) {
        let s = &self.dphi[2 * self.dim * f..2 * self.dim * (f + 1)];
        s.split_at(self.dim)
    }

    #[inline]
    pub fn point(&self, f: usize) -> &[f64] {
        &self.face_point[self.dim * f..self.dim * (f + 1)]
    }

    /// `|dφ|²` per face.
    pub fn dphi_sq(&self, f: usize) -> f64 {
        2.0 * self.density[f]
    }
}

pub fn map_geometry(mesh: &DomainMesh, map: &SphereMap) -> MapGeometry {
    assert_eq!(mesh.n_vertices(), map.n_vertices(), "map is not defined on this mesh");
    let d = map.dim();
    let per_face = par::map_indexed(mesh.n_faces(), |f| {
        let [a, b, c] = mesh.faces[f];
        let mut cols = vec![0.0; 2 * d];
        let (d1, d2) = cols.split_at_mut(d);
        mesh.frame_derivative(f, [map.value(a), map.value(b), map.value(c)], d1, d2);
        let g = [[dot(d1, d1), dot(d1, d2)], [dot(d1, d2), dot(d2, d2)]];
        let mut p = vec![0.0; d];
        map.face_point(mesh, f, &mut p);
        (cols, g, p)
    });
    let mut geom = MapGeometry {
        dim: d,
        dphi: Vec::with_capacity(2 * d * mesh.n_faces()),
        density: Vec::with_capacity(mesh.n_faces()),
        pullback: Vec::with_capacity(mesh.n_faces()),
        face_point: Vec::with_capacity(d * mesh.n_faces()),
    };
    for (cols, g, p) in per_face {
        geom.dphi.extend_from_slice(&cols);
        geom.density.push(0.5 * (g[0][0] + g[1][1]));
        geom.pullback.push(g);
        geom.face_point.extend_from_slice(&p);
    }
    geom
}

/// Residual threshold below which a map is declared homothetic.
pub const HOMOTHETY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomothetyFit {
    pub k2: f64,
    /// Largest face deviation `‖φ*can − k²g‖ / k²`.
    pub residual: f64,
    pub homothetic: bool,
}

/// Area-weighted least-squares fit of `φ*can ≈ k²·g`.
pub fn homothety_fit(geom: &MapGeometry, mesh: &DomainMesh) -> Result<HomothetyFit> {
    let num: f64 = geom
        .pullback
        .iter()
        .zip(&mesh.face_area)
        .map(|(g, a)| a * (g[0][0] + g[1][1]))
        .sum();
    let k2 = num / (2.0 * mesh.total_area());
    let dev = geom
        .pullback
        .iter()
        .map(|g| {
            let (x, y, z) = (g[0][0] - k2, g[0][1], g[1][1] - k2);
            (x * x + 2.0 * y * y + z * z).sqrt()
        })
        .fold(0.0, f64::max);
    if !(k2 > 0.0) {
        return Err(Error::NotHomothetic { k2, residual: f64::INFINITY });
    }
    let residual = dev / k2;
    Ok(HomothetyFit {
        k2,
        residual,
        homothetic: residual <= HOMOTHETY_THRESHOLD,
    })
}
