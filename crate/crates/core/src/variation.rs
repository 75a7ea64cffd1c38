//! F-energy, its discrete gradient (the tension field), a projected
//! gradient-flow solver for F-harmonic maps, and the second variation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{index_from_matrix, polarize, IndexReport};
use crate::linalg::{dot, norm2, project_out};
use crate::mesh::DomainMesh;
use crate::par;
use crate::profile::{Derivatives, FProfile};
use crate::sphere_map::{
    conformal_basis, map_geometry, MapGeometry, SectionField, SphereMap,
};

/// Largest supported ambient dimension `n + 1`.
pub const MAX_AMBIENT: usize = 16;

/// Default cap on the size of a dense full Hessian.
pub const FULL_HESSIAN_CAP: usize = 4000;

fn check_dim(map: &SphereMap) -> Result<()> {
    if map.dim() > MAX_AMBIENT {
        return Err(Error::Incompatible(format!(
            "ambient dimension {} exceeds the supported maximum {MAX_AMBIENT}",
            map.dim()
        )));
    }
    Ok(())
}

fn check_compatible(mesh: &DomainMesh, map: &SphereMap) -> Result<()> {
    if mesh.n_vertices() != map.n_vertices() {
        return Err(Error::Incompatible(format!(
            "map has {} vertices, mesh has {}",
            map.n_vertices(),
            mesh.n_vertices()
        )));
    }
    check_dim(map)
}

fn face_derivatives(geom: &MapGeometry, profile: &FProfile) -> Result<Vec<Derivatives>> {
    geom.density.iter().map(|&t| profile.evaluate(t)).collect()
}

/// Quadrature of `∫ F(|dφ|²/2) dv_g`.
pub fn f_energy(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile) -> Result<f64> {
    check_compatible(mesh, map)?;
    let geom = map_geometry(mesh, map);
    energy_of(mesh, &geom, profile)
}

fn energy_of(mesh: &DomainMesh, geom: &MapGeometry, profile: &FProfile) -> Result<f64> {
    let vals: Result<Vec<f64>> = par::map_indexed(mesh.n_faces(), |f| {
        Ok(mesh.face_area[f] * profile.evaluate(geom.density[f])?.f)
    })
    .into_iter()
    .collect();
    Ok(vals?.iter().sum())
}

/// Discrete tension field: minus the mass-normalized, tangentially projected
/// gradient of the discrete energy.
#[derive(Debug, Clone)]
pub struct ResidualField {
    pub field: SectionField,
    pub sup_norm: f64,
}

/// `r` with `dE(φ_s)/ds|₀ = −Σ_x mass(x)·⟨w(x), r(x)⟩` for every section `w`.
pub fn energy_gradient(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile) -> Result<ResidualField> {
    check_compatible(mesh, map)?;
    let geom = map_geometry(mesh, map);
    gradient_of(mesh, map, &geom, profile)
}

fn gradient_of(
    mesh: &DomainMesh,
    map: &SphereMap,
    geom: &MapGeometry,
    profile: &FProfile,
) -> Result<ResidualField> {
    let d = map.dim();
    // per face: (∂E/∂φ₁, ∂E/∂φ₂); ∂E/∂φ₀ is minus their sum
    let contributions: Result<Vec<Vec<f64>>> = par::map_indexed(mesh.n_faces(), |f| {
        let der = profile.evaluate(geom.density[f])?;
        let w = mesh.face_area[f] * der.d1;
        let g = &mesh.face_grad[f];
        let (c1, c2) = geom.dphi(f);
        let mut out = vec![0.0; 2 * d];
        for k in 0..d {
            out[k] = w * (g[0][0] * c1[k] + g[1][0] * c2[k]);
            out[d + k] = w * (g[0][1] * c1[k] + g[1][1] * c2[k]);
        }
        Ok(out)
    })
    .into_iter()
    .collect();
    let contributions = contributions?;
    let mut grad = vec![0.0; d * mesh.n_vertices()];
    for (f, c) in contributions.iter().enumerate() {
        let [a, b, e] = mesh.faces[f];
        for k in 0..d {
            grad[b * d + k] += c[k];
            grad[e * d + k] += c[d + k];
            grad[a * d + k] -= c[k] + c[d + k];
        }
    }
    let mut sup: f64 = 0.0;
    for (x, row) in grad.chunks_mut(d).enumerate() {
        project_out(row, map.value(x));
        let inv = -1.0 / mesh.vertex_mass[x];
        for r in row.iter_mut() {
            *r *= inv;
        }
        sup = sup.max(norm2(row).sqrt());
    }
    Ok(ResidualField {
        field: SectionField::from_raw(d, grad),
        sup_norm: sup,
    })
}

/// Metric in which the descent direction is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descent {
    /// The tension field `r` itself (lumped-mass L² gradient).
    #[default]
    L2,
    /// `(M + K)⁻¹M·r`, projected: an H¹ gradient whose useful step size does
    /// not shrink with the mesh spacing.
    Sobolev,
}

/// Line-search parameters for [`solve_f_harmonic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRule {
    /// Initial trial step; `None` uses `1 / (max_face F′·|dφ|² + 1)`.
    pub initial: Option<f64>,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub descent: Descent,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            initial: None,
            backtrack: 0.5,
            max_halvings: 40,
            descent: Descent::L2,
        }
    }
}

/// `y = (M + K)x` for the lumped mass `M` and the P1 stiffness matrix `K`.
fn apply_h1(mesh: &DomainMesh, x: &[f64], y: &mut [f64]) {
    for (v, (yi, xi)) in y.iter_mut().zip(x).enumerate() {
        *yi = mesh.vertex_mass[v] * xi;
    }
    for (f, face) in mesh.faces.iter().enumerate() {
        let g = &mesh.face_grad[f];
        // frame gradients of the hat functions at vertices 1 and 2; vertex 0 is minus their sum
        let g1 = [g[0][0], g[1][0]];
        let g2 = [g[0][1], g[1][1]];
        let grads = [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2];
        let grad_x = [0, 1].map(|k| (0..3).map(|i| grads[i][k] * x[face[i]]).sum::<f64>());
        let a = mesh.face_area[f];
        for i in 0..3 {
            y[face[i]] += a * (grads[i][0] * grad_x[0] + grads[i][1] * grad_x[1]);
        }
    }
}

/// Conjugate-gradient solve of `(M + K)z = b`.
fn solve_h1(mesh: &DomainMesh, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut z = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let stop = 1e-24 * rr.max(f64::MIN_POSITIVE);
    for _ in 0..(4 * n).max(50) {
        if rr <= stop {
            break;
        }
        apply_h1(mesh, &p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            z[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    z
}

fn sobolev_direction(mesh: &DomainMesh, map: &SphereMap, r: &SectionField) -> Vec<f64> {
    let d = map.dim();
    let nv = mesh.n_vertices();
    let columns = par::map_indexed(d, |k| {
        let b: Vec<f64> = (0..nv).map(|v| mesh.vertex_mass[v] * r.value(v)[k]).collect();
        solve_h1(mesh, &b)
    });
    let mut out = vec![0.0; d * nv];
    for (v, row) in out.chunks_mut(d).enumerate() {
        for k in 0..d {
            row[k] = columns[k][v];
        }
        project_out(row, map.value(v));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub map: SphereMap,
    pub iterations: usize,
    pub residual: f64,
    /// Energy after each accepted step, starting with the initial energy.
    pub energies: Vec<f64>,
}

/// Projected gradient descent with backtracking and vertexwise renormalization.
pub fn solve_f_harmonic(
    mesh: &DomainMesh,
    map0: &SphereMap,
    profile: &FProfile,
    tol: f64,
    max_iter: usize,
    rule: StepRule,
) -> Result<SolveOutcome> {
    if !(tol > 0.0) {
        return Err(Error::Incompatible(format!("tolerance must be positive, got {tol}")));
    }
    check_compatible(mesh, map0)?;
    let mut map = map0.clone();
    let mut geom = map_geometry(mesh, &map);
    let mut energy = energy_of(mesh, &geom, profile)?;
    let mut energies = vec![energy];
    let mut iterations = 0;
    loop {
        let r = gradient_of(mesh, &map, &geom, profile)?;
        if r.sup_norm <= tol {
            return Ok(SolveOutcome {
                map,
                iterations,
                residual: r.sup_norm,
                energies,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: r.sup_norm,
            });
        }
        let mut step = match rule.initial {
            Some(s) => s,
            None => {
                let ders = face_derivatives(&geom, profile)?;
                let stiff = ders
                    .iter()
                    .enumerate()
                    .map(|(f, d)| d.d1 * geom.dphi_sq(f))
                    .fold(0.0, f64::max);
                1.0 / (stiff + 1.0)
            }
        };
        let direction = match rule.descent {
            Descent::L2 => r.field.values().to_vec(),
            Descent::Sobolev => sobolev_direction(mesh, &map, &r.field),
        };
        let mut accepted = None;
        for _ in 0..=rule.max_halvings {
            let trial = map.retract(&direction, step);
            let tgeom = map_geometry(mesh, &trial);
            // densities can leave the profile's domain only through NaN; treat as rejection
            if let Ok(e) = energy_of(mesh, &tgeom, profile) {
                if e <= energy {
                    accepted = Some((trial, tgeom, e));
                    break;
                }
            }
            step *= rule.backtrack;
        }
        let Some((m, g, e)) = accepted else {
            return Err(Error::NoConvergence {
                iterations,
                residual: r.sup_norm,
            });
        };
        map = m;
        geom = g;
        energy = e;
        energies.push(e);
        iterations += 1;
    }
}

/// A quadrature value with its magnitude scale (sum of absolute parts).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QParts {
    pub value: f64,
    pub scale: f64,
}

impl std::ops::AddAssign for QParts {
    fn add_assign(&mut self, o: Self) {
        self.value += o.value;
        self.scale += o.scale;
    }
}

/// Second variation of `E_F` at a fixed map, evaluated on sections.
///
/// The pullback connection is the ambient frame derivative of the PL section
/// projected onto `T_{φ_b}Sⁿ`, `φ_b` the normalized face average of `φ`.
pub struct SecondVariation<'a> {
    pub mesh: &'a DomainMesh,
    pub geom: MapGeometry,
    pub derivs: Vec<Derivatives>,
    dim: usize,
}

impl<'a> SecondVariation<'a> {
    pub fn new(mesh: &'a DomainMesh, map: &SphereMap, profile: &FProfile) -> Result<Self> {
        check_compatible(mesh, map)?;
        let geom = map_geometry(mesh, map);
        let derivs = face_derivatives(&geom, profile)?;
        Ok(SecondVariation {
            mesh,
            geom,
            derivs,
            dim: map.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Integrand of `F″⟨∇w, dφ⟩² + F′(|∇w|² − Σᵢ⟨R(w, dφeᵢ)dφeᵢ, w⟩)` on face `f`, times area.
    pub fn face_q(&self, f: usize, w: [&[f64]; 3]) -> QParts {
        let d = self.dim;
        let p = self.geom.point(f);
        let (c1, c2) = self.geom.dphi(f);
        let mut dw1 = [0.0; MAX_AMBIENT];
        let mut dw2 = [0.0; MAX_AMBIENT];
        let (dw1, dw2) = (&mut dw1[..d], &mut dw2[..d]);
        self.mesh.frame_derivative(f, w, dw1, dw2);
        project_out(dw1, p);
        project_out(dw2, p);
        let mut wb = [0.0; MAX_AMBIENT];
        let wb = &mut wb[..d];
        for k in 0..d {
            wb[k] = (w[0][k] + w[1][k] + w[2][k]) / 3.0;
        }
        project_out(wb, p);
        let wb2 = norm2(wb);

        let grad = norm2(dw1) + norm2(dw2);
        let coupling = dot(dw1, c1) + dot(dw2, c2);
        let mut curv = 0.0;
        for c in [c1, c2] {
            let cp = dot(c, p);
            let pc2 = norm2(c) - cp * cp;
            let cw = dot(c, wb);
            curv += pc2 * wb2 - cw * cw;
        }
        let der = &self.derivs[f];
        let a = self.mesh.face_area[f];
        QParts {
            value: a * (der.d2 * coupling * coupling + der.d1 * (grad - curv)),
            scale: a * (der.d2.abs() * coupling * coupling + der.d1 * (grad + curv.abs())),
        }
    }

    fn face_values<'s>(&self, w: &'s SectionField, f: usize) -> [&'s [f64]; 3] {
        let [a, b, c] = self.mesh.faces[f];
        [w.value(a), w.value(b), w.value(c)]
    }

    pub fn q(&self, w: &SectionField) -> QParts {
        assert_eq!(w.dim(), self.dim, "section dimension mismatch");
        let parts = par::map_indexed(self.mesh.n_faces(), |f| self.face_q(f, self.face_values(w, f)));
        let mut total = QParts::default();
        for p in parts {
            total += p;
        }
        total
    }

    /// `2∫(tF″+F′)|dφ_v|² − ∫F′|dφ|²|v̄∘φ|²` with `φ_v = ⟨v, φ⟩`.
    pub fn q_conformal_closed(&self, v: &[f64]) -> QParts {
        assert_eq!(v.len(), self.dim, "ambient vector dimension mismatch");
        let v2 = norm2(v);
        let parts = par::map_indexed(self.mesh.n_faces(), |f| {
            let (c1, c2) = self.geom.dphi(f);
            let t = self.geom.density[f];
            let der = &self.derivs[f];
            let dphi_v = dot(v, c1).powi(2) + dot(v, c2).powi(2);
            let vbar2 = v2 - dot(v, self.geom.point(f)).powi(2);
            let a = self.mesh.face_area[f];
            let first = 2.0 * (t * der.d2 + der.d1) * dphi_v;
            let second = der.d1 * 2.0 * t * vbar2;
            QParts {
                value: a * (first - second),
                scale: a * (first.abs() + second.abs()),
            }
        });
        let mut total = QParts::default();
        for p in parts {
            total += p;
        }
        total
    }

    /// Polarized Hessian on the given sections.
    pub fn hessian_on_fields(&self, fields: &[SectionField], labels: Vec<String>, tol_rel: f64) -> IndexReport {
        assert!(!fields.is_empty(), "hessian_on_fields needs at least one field");
        assert_eq!(fields.len(), labels.len());
        let h = polarize(fields.len(), |a, b| match b {
            None => self.q(&fields[a]).value,
            Some(b) => self.q(&fields[a].add(&fields[b])).value,
        });
        index_from_matrix(labels, h, tol_rel)
    }

    /// Hessian over the `n+1` sections `v̄∘φ` of the ambient standard basis.
    pub fn conformal_index_bound(&self, map: &SphereMap, tol_rel: f64) -> IndexReport {
        let fields = conformal_basis(map);
        let labels = (0..fields.len()).map(|a| format!("conformal_{a}")).collect();
        self.hessian_on_fields(&fields, labels, tol_rel)
    }

    /// Hessian over per-vertex orthonormal tangent coordinates.
    pub fn full_hessian_index(&self, map: &SphereMap, tol_rel: f64, cap: usize) -> Result<IndexReport> {
        let n = map.target_dim();
        let d = self.dim;
        let size = n * map.n_vertices();
        if size > cap {
            return Err(Error::SizeCap { size, cap });
        }
        let frames: Vec<Vec<Vec<f64>>> = (0..map.n_vertices()).map(|x| tangent_basis(map.value(x))).collect();
        let zero = vec![0.0; d];
        let local = 3 * n;
        let blocks = par::map_indexed(self.mesh.n_faces(), |f| {
            let verts = self.mesh.faces[f];
            let vec_of = |i: usize| &frames[verts[i / n]][i % n];
            let single = |i: usize| {
                let mut w = [zero.as_slice(); 3];
                w[i / n] = vec_of(i);
                self.face_q(f, w).value
            };
            let diag: Vec<f64> = (0..local).map(single).collect();
            let mut block = vec![0.0; local * local];
            for i in 0..local {
                block[i * local + i] = diag[i];
                for j in (i + 1)..local {
                    let val = if i / n == j / n {
                        let sum: Vec<f64> = vec_of(i).iter().zip(vec_of(j)).map(|(a, b)| a + b).collect();
                        let mut w = [zero.as_slice(); 3];
                        w[i / n] = &sum;
                        self.face_q(f, w).value
                    } else {
                        let mut w = [zero.as_slice(); 3];
                        w[i / n] = vec_of(i);
                        w[j / n] = vec_of(j);
                        self.face_q(f, w).value
                    };
                    let h = 0.5 * (val - diag[i] - diag[j]);
                    block[i * local + j] = h;
                    block[j * local + i] = h;
                }
            }
            block
        });
        let mut h = nalgebra::DMatrix::<f64>::zeros(size, size);
        for (f, block) in blocks.iter().enumerate() {
            let verts = self.mesh.faces[f];
            let global = |i: usize| verts[i / n] * n + i % n;
            for i in 0..local {
                for j in 0..local {
                    h[(global(i), global(j))] += block[i * local + j];
                }
            }
        }
        // exact symmetry after floating-point accumulation
        for i in 0..size {
            for j in (i + 1)..size {
                let s = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let labels = (0..size).map(|i| format!("v{}_t{}", i / n, i % n)).collect();
        Ok(index_from_matrix(labels, h, tol_rel))
    }
}

/// Orthonormal basis of `p^⊥` in `R^{n+1}` from the standard basis, least aligned first.
pub fn tangent_basis(p: &[f64]) -> Vec<Vec<f64>> {
    let d = p.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| p[a].abs().total_cmp(&p[b].abs()).then(a.cmp(&b)));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    for &k in &order {
        if basis.len() == d - 1 {
            break;
        }
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        project_out(&mut e, p);
        for b in &basis {
            project_out(&mut e, b);
        }
        let r = norm2(&e).sqrt();
        if r > 1e-6 {
            e.iter_mut().for_each(|x| *x /= r);
            basis.push(e);
        }
    }
    basis
}

/// Quadrature of the second variation on a single section.
pub fn second_variation_generic(
    mesh: &DomainMesh,
    map: &SphereMap,
    profile: &FProfile,
    w: &SectionField,
) -> Result<QParts> {
    Ok(SecondVariation::new(mesh, map, profile)?.q(w))
}

/// Closed form of the second variation on `£(φ)` for the ambient vector `v`.
pub fn q_conformal_closed(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile, v: &[f64]) -> Result<QParts> {
    Ok(SecondVariation::new(mesh, map, profile)?.q_conformal_closed(v))
}

pub fn hessian_on_fields(
    mesh: &DomainMesh,
    map: &SphereMap,
    profile: &FProfile,
    fields: &[SectionField],
    tol_rel: f64,
) -> Result<IndexReport> {
    if fields.is_empty() {
        return Err(Error::Incompatible("hessian_on_fields needs at least one field".into()));
    }
    let labels = (0..fields.len()).map(|a| format!("field_{a}")).collect();
    Ok(SecondVariation::new(mesh, map, profile)?.hessian_on_fields(fields, labels, tol_rel))
}

pub fn conformal_index_bound(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile, tol_rel: f64) -> Result<IndexReport> {
    Ok(SecondVariation::new(mesh, map, profile)?.conformal_index_bound(map, tol_rel))
}

pub fn full_hessian_index(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile, tol_rel: f64) -> Result<IndexReport> {
    SecondVariation::new(mesh, map, profile)?.full_hessian_index(map, tol_rel, FULL_HESSIAN_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainSpec;
    use crate::sphere_map::{conformal_section, make_map, MapKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sphere(level: usize) -> DomainMesh {
        DomainMesh::build(DomainSpec::sphere(level)).unwrap()
    }

    fn torus(n: usize) -> DomainMesh {
        DomainMesh::build(DomainSpec::torus(n)).unwrap()
    }

    fn clifford(n: usize) -> (DomainMesh, SphereMap) {
        let m = torus(n);
        let map = make_map(&m, &MapKind::CliffordTorus).unwrap();
        (m, map)
    }

    fn identity(level: usize) -> (DomainMesh, SphereMap) {
        let m = sphere(level);
        let map = make_map(&m, &MapKind::IdentityS2).unwrap();
        (m, map)
    }

    /// Energy density of the PL Clifford map on an n×n grid.
    fn clifford_density(n: usize) -> f64 {
        let h = 2.0 * PI / n as f64;
        0.5 * ((0.5 * h).sin() / (0.5 * h)).powi(2)
    }

    fn random_section(map: &SphereMap, seed: u64) -> SectionField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..map.values().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        crate::sphere_map::project_tangent(map, &raw)
    }

    #[test]
    fn energy_examples() {
        let (m, id) = identity(4);
        let e = f_energy(&m, &id, &FProfile::linear()).unwrap();
        assert!((e / (4.0 * PI) - 1.0).abs() < 0.01, "{e}");

        let n = 32;
        let (t, cl) = clifford(n);
        let e = f_energy(&t, &cl, &FProfile::linear()).unwrap();
        let exact = 4.0 * PI * PI * clifford_density(n);
        assert!((e - exact).abs() < 1e-8 * exact);
        assert!((e - 2.0 * PI * PI).abs() < 2.0 * PI * PI * (2.0 * PI / n as f64).powi(2) / 12.0 * 1.01);

        // a constant F is not a valid profile (F′ = 0); a constant offset adds δ·area
        assert!(FProfile::exp_affine(0.0, 1.0, 0.0, 2.5).is_err());
        let shifted = FProfile::exp_affine(0.0, 1.0, 1.0, 2.5).unwrap();
        let base = f_energy(&m, &id, &FProfile::linear()).unwrap();
        let e = f_energy(&m, &id, &shifted).unwrap();
        assert!((e - base - 2.5 * m.total_area()).abs() < 1e-12);
    }

    #[test]
    fn incompatible_map_is_rejected() {
        let (m, _) = identity(2);
        let (_, cl) = clifford(4);
        assert!(matches!(f_energy(&m, &cl, &FProfile::linear()), Err(Error::Incompatible(_))));
    }

    #[test]
    fn clifford_is_critical() {
        for profile in [FProfile::linear(), FProfile::sqrt_shift()] {
            let (t, cl) = clifford(32);
            let r = energy_gradient(&t, &cl, &profile).unwrap();
            assert!(r.sup_norm <= 1e-3, "{}", r.sup_norm);
            assert!(r.field.tangency_defect(&cl) < 1e-12);
        }
    }

    fn fd_check(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile, seed: u64) -> f64 {
        let w = random_section(map, seed);
        let s = 1e-5;
        let ep = f_energy(mesh, &map.retract(w.values(), s), profile).unwrap();
        let em = f_energy(mesh, &map.retract(w.values(), -s), profile).unwrap();
        let fd = (ep - em) / (2.0 * s);
        let r = energy_gradient(mesh, map, profile).unwrap();
        let exact: f64 = (0..map.n_vertices())
            .map(|x| -mesh.vertex_mass[x] * dot(w.value(x), r.field.value(x)))
            .sum();
        (fd - exact).abs() / exact.abs().max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = sphere(2);
        let map = make_map(
            &m,
            &MapKind::Perturbed {
                base: Box::new(MapKind::IdentityS2),
                seed: 3,
                amplitude: 0.2,
            },
        )
        .unwrap();
        for (i, p) in [FProfile::linear(), FProfile::sqrt_shift(), FProfile::p_norm(4.0).unwrap()]
            .iter()
            .enumerate()
        {
            let err = fd_check(&m, &map, p, 11 + i as u64);
            assert!(err <= 1e-5, "{p}: {err}");
        }
        let t = torus(8);
        let cl = make_map(
            &t,
            &MapKind::Perturbed {
                base: Box::new(MapKind::CliffordTorus),
                seed: 5,
                amplitude: 0.1,
            },
        )
        .unwrap();
        assert!(fd_check(&t, &cl, &FProfile::sqrt_shift(), 17) <= 1e-5);
    }

    fn perturbed_clifford(n: usize) -> (DomainMesh, SphereMap) {
        let t = torus(n);
        let start = make_map(
            &t,
            &MapKind::Perturbed {
                base: Box::new(MapKind::CliffordTorus),
                seed: 7,
                amplitude: 0.05,
            },
        )
        .unwrap();
        (t, start)
    }

    #[test]
    fn solver_reaches_a_critical_map() {
        let (t, start) = perturbed_clifford(16);
        let profile = FProfile::linear();
        let e0 = f_energy(&t, &start, &profile).unwrap();
        let out = solve_f_harmonic(&t, &start, &profile, 1e-3, 2000, StepRule::default()).unwrap();
        assert!(out.residual <= 1e-3);
        assert!(*out.energies.last().unwrap() <= e0);
        assert!(out.energies.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.map.unit_defect() < 1e-12);
    }

    #[test]
    fn sobolev_descent_is_mesh_independent() {
        let profile = FProfile::linear();
        let rule = StepRule {
            descent: Descent::Sobolev,
            ..StepRule::default()
        };
        for n in [16, 32] {
            let (t, start) = perturbed_clifford(n);
            let out = solve_f_harmonic(&t, &start, &profile, 1e-3, 150, rule).unwrap();
            assert!(out.energies.windows(2).all(|w| w[1] <= w[0]));
            // the Clifford torus is unstable for F = t: the flow leaves it for a constant map
            assert!(*out.energies.last().unwrap() < 1e-3);
        }
    }

    #[test]
    fn h1_operator_is_symmetric_and_kills_constants_in_k() {
        let m = sphere(2);
        let n = m.n_vertices();
        let ones = vec![1.0; n];
        let mut y = vec![0.0; n];
        apply_h1(&m, &ones, &mut y);
        for (yi, mi) in y.iter().zip(&m.vertex_mass) {
            assert!((yi - mi).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut ya, mut yb) = (vec![0.0; n], vec![0.0; n]);
        apply_h1(&m, &a, &mut ya);
        apply_h1(&m, &b, &mut yb);
        assert!((dot(&ya, &b) - dot(&yb, &a)).abs() < 1e-12);
        assert!(dot(&ya, &a) > 0.0);
        let z = solve_h1(&m, &ya);
        assert!(z.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn solver_edge_cases() {
        let (t, cl) = clifford(16);
        let profile = FProfile::linear();
        let r0 = energy_gradient(&t, &cl, &profile).unwrap().sup_norm;
        let out = solve_f_harmonic(&t, &cl, &profile, 1e-3, 10, StepRule::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.residual, r0);

        let noisy = make_map(
            &t,
            &MapKind::Perturbed {
                base: Box::new(MapKind::CliffordTorus),
                seed: 1,
                amplitude: 0.1,
            },
        )
        .unwrap();
        assert!(matches!(
            solve_f_harmonic(&t, &noisy, &profile, 1e-3, 0, StepRule::default()),
            Err(Error::NoConvergence { iterations: 0, .. })
        ));
        assert!(solve_f_harmonic(&t, &noisy, &profile, 0.0, 10, StepRule::default()).is_err());
    }

    #[test]
    fn q_is_quadratic() {
        let (m, id) = identity(3);
        let sv = SecondVariation::new(&m, &id, &FProfile::sqrt_shift()).unwrap();
        assert_eq!(sv.q(&SectionField::zeros(3, m.n_vertices())).value, 0.0);
        let w = random_section(&id, 4);
        let q1 = sv.q(&w).value;
        for c in [-2.0, 0.5, 3.0] {
            let qc = sv.q(&w.scaled(c)).value;
            assert!((qc - c * c * q1).abs() <= 1e-12 * qc.abs().max(1.0));
        }
    }

    #[test]
    fn identity_conformal_nulls() {
        let (m, id) = identity(4);
        let sv = SecondVariation::new(&m, &id, &FProfile::linear()).unwrap();
        for a in 0..3 {
            let mut v = [0.0; 3];
            v[a] = 1.0;
            let q = sv.q(&conformal_section(&id, &v));
            assert!(q.value.abs() <= 0.02 * q.scale, "{q:?}");
            let c = sv.q_conformal_closed(&v);
            assert!(c.value.abs() <= 0.02 * c.scale, "{c:?}");
        }
        assert_eq!(sv.q_conformal_closed(&[0.0; 3]).value, 0.0);
    }

    #[test]
    fn clifford_closed_form() {
        let (t, cl) = clifford(32);
        let sv = SecondVariation::new(&t, &cl, &FProfile::sqrt_shift()).unwrap();
        let oracle = -0.5443 * PI * PI;
        assert!((oracle + 5.372).abs() < 1e-3);
        for a in 0..4 {
            let mut v = [0.0; 4];
            v[a] = 1.0;
            let c = sv.q_conformal_closed(&v).value;
            assert!((c / oracle - 1.0).abs() < 0.03, "{a}: {c}");
            let g = sv.q(&conformal_section(&cl, &v)).value;
            assert!((g / oracle - 1.0).abs() < 0.03, "{a}: {g}");
        }
    }

    #[test]
    fn generic_and_closed_routes_agree() {
        let mut errs = Vec::new();
        for level in [3, 4] {
            let (m, id) = identity(level);
            let sv = SecondVariation::new(&m, &id, &FProfile::sqrt_shift()).unwrap();
            let v = [0.3, -0.5, 0.8];
            let g = sv.q(&conformal_section(&id, &v));
            let c = sv.q_conformal_closed(&v);
            let err = (g.value - c.value).abs() / g.value.abs().max(c.value.abs()).max(g.scale);
            errs.push(err);
        }
        assert!(errs[1] <= 0.05 && errs[1] < errs[0], "{errs:?}");
    }

    #[test]
    fn hessian_examples() {
        let (m, id) = identity(3);
        let zero = SectionField::zeros(3, m.n_vertices());
        let r = hessian_on_fields(&m, &id, &FProfile::linear(), &[zero], 1e-3).unwrap();
        assert_eq!(r.hessian, vec![vec![0.0]]);
        assert_eq!(r.negative_count, 0);
        assert!(hessian_on_fields(&m, &id, &FProfile::linear(), &[], 1e-3).is_err());

        let w = random_section(&id, 9);
        let r = hessian_on_fields(&m, &id, &FProfile::sqrt_shift(), &[w.clone(), w], 1e-3).unwrap();
        let big = r.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max);
        assert!(r.eigenvalues.iter().filter(|e| e.abs() > 1e-9 * big).count() <= 1);
        assert_eq!(r.hessian[0][1], r.hessian[1][0]);
    }

    #[test]
    fn conformal_index_counts() {
        let (t, cl) = clifford(32);
        let r = conformal_index_bound(&t, &cl, &FProfile::sqrt_shift(), 1e-3).unwrap();
        assert_eq!(r.negative_count, 4);
        let (m, id) = identity(4);
        assert_eq!(conformal_index_bound(&m, &id, &FProfile::linear(), 1e-3).unwrap().negative_count, 0);
        assert_eq!(conformal_index_bound(&m, &id, &FProfile::sqrt_shift(), 1e-3).unwrap().negative_count, 3);
    }

    #[test]
    fn full_hessian_examples() {
        let (m, id) = identity(2);
        let r = full_hessian_index(&m, &id, &FProfile::linear(), 1e-3).unwrap();
        assert_eq!(r.size(), 2 * m.n_vertices());
        assert_eq!(r.negative_count, 0, "{:?}", &r.eigenvalues[..4]);

        let (t, cl) = clifford(8);
        let r = full_hessian_index(&t, &cl, &FProfile::sqrt_shift(), 1e-3).unwrap();
        assert!(r.negative_count >= 4, "{}", r.negative_count);

        let sv = SecondVariation::new(&t, &cl, &FProfile::sqrt_shift()).unwrap();
        assert!(matches!(sv.full_hessian_index(&cl, 1e-3, 10), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn hessian_scaling() {
        let (t, cl) = clifford(8);
        let sv = SecondVariation::new(&t, &cl, &FProfile::sqrt_shift()).unwrap();
        let fields = conformal_basis(&cl);
        let labels: Vec<String> = (0..4).map(|a| a.to_string()).collect();
        let base = sv.hessian_on_fields(&fields, labels.clone(), 1e-3);
        let scaled: Vec<SectionField> = fields.iter().map(|f| f.scaled(3.0)).collect();
        let r = sv.hessian_on_fields(&scaled, labels, 1e-3);
        assert_eq!(r.negative_count, base.negative_count);
        for (a, b) in r.eigenvalues.iter().zip(&base.eigenvalues) {
            assert!((a - 9.0 * b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for p in [vec![1.0, 0.0, 0.0], vec![0.6, 0.0, 0.8], vec![0.5, 0.5, 0.5, 0.5]] {
            let b = tangent_basis(&p);
            assert_eq!(b.len(), p.len() - 1);
            for (i, u) in b.iter().enumerate() {
                assert!(dot(u, &p).abs() < 1e-14);
                for (j, v) in b.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(u, v) - expected).abs() < 1e-14);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn polarized_hessian_is_symmetric(seed in 0u64..500) {
                let (m, id) = identity(1);
                let fields = vec![random_section(&id, seed), random_section(&id, seed + 1), random_section(&id, seed + 2)];
                let r = hessian_on_fields(&m, &id, &FProfile::sqrt_shift(), &fields, 1e-3).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        prop_assert_eq!(r.hessian[i][j], r.hessian[j][i]);
                    }
                }
            }

            #[test]
            fn accepted_steps_never_raise_energy(seed in 0u64..500) {
                let t = torus(6);
                let start = make_map(&t, &MapKind::Perturbed { base: Box::new(MapKind::CliffordTorus), seed, amplitude: 0.2 }).unwrap();
                let out = solve_f_harmonic(&t, &start, &FProfile::sqrt_shift(), 1e-12, 5, StepRule::default());
                if let Ok(o) = &out {
                    prop_assert!(o.energies.windows(2).all(|w| w[1] <= w[0]));
                }
            }
        }
    }
}
