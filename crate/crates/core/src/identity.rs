//! Identity-map and homothetic-map analysis: canonical conformal and Killing
//! fields of spheres, the Yano integral identity, the identity-map quadratic
//! form `F″(m/2)∫(div v)² + F′(m/2)∫[½|L_v g|² − (div v)²]`, and the
//! homothetic reduction `Q_φ(dφX)` vs `k²·Q_I(X)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hessian::{index_from_matrix, polarize, IndexReport};
use crate::linalg::{add3, dot3, project_out};
use crate::mesh::{frob2, lie_from_covariant, DomainKind, DomainMesh, TangentField};
use crate::par;
use crate::profile::{Derivatives, FProfile};
use crate::sphere_map::{homothety_fit, map_geometry, SectionField, SphereMap};
use crate::variation::{QParts, SecondVariation};

/// Homothety residual required by [`homothetic_reduction_check`].
pub const REDUCTION_HOMOTHETY_TOL: f64 = 0.01;

/// Conformal gradient fields and rotation (Killing) fields of `Sⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalFields {
    pub n: usize,
    /// Indices `a` of `v̄_a(y) = e_a − y_a·y`.
    pub conformal: Vec<usize>,
    /// Pairs `a < b` of `K_ab(y) = y_b·e_a − y_a·e_b`.
    pub killing: Vec<(usize, usize)>,
}

pub fn canonical_fields(n: usize) -> CanonicalFields {
    CanonicalFields {
        n,
        conformal: (0..=n).collect(),
        killing: (0..=n).flat_map(|a| ((a + 1)..=n).map(move |b| (a, b))).collect(),
    }
}

impl CanonicalFields {
    pub fn conformal_at(a: usize, y: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = y.iter().map(|yi| -y[a] * yi).collect();
        out[a] += 1.0;
        out
    }

    pub fn killing_at((a, b): (usize, usize), y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        out[a] = y[b];
        out[b] = -y[a];
        out
    }

    pub fn conformal_label(a: usize) -> String {
        format!("conformal_{a}")
    }

    pub fn killing_label((a, b): (usize, usize)) -> String {
        format!("killing_{a}{b}")
    }

    /// All fields as labelled tangent fields on a 2-sphere mesh (requires `n = 2`).
    pub fn on_sphere_mesh(&self, mesh: &DomainMesh) -> Result<Vec<(String, TangentField)>> {
        if self.n != 2 || mesh.kind != DomainKind::RoundSphere2 {
            return Err(Error::Incompatible("canonical tangent fields need n = 2 on a sphere mesh".into()));
        }
        let to3 = |v: Vec<f64>| [v[0], v[1], v[2]];
        let mut out = Vec::new();
        for &a in &self.conformal {
            out.push((
                Self::conformal_label(a),
                TangentField::from_fn(mesh, |p| to3(Self::conformal_at(a, p))),
            ));
        }
        for &ab in &self.killing {
            out.push((
                Self::killing_label(ab),
                TangentField::from_fn(mesh, |p| to3(Self::killing_at(ab, p))),
            ));
        }
        Ok(out)
    }

    /// All fields composed with `φ` as sections of `φ⁻¹TSⁿ`.
    pub fn sections(&self, map: &SphereMap) -> Result<Vec<(String, SectionField)>> {
        if map.target_dim() != self.n {
            return Err(Error::Incompatible(format!(
                "fields of S^{} cannot be composed with a map into S^{}",
                self.n,
                map.target_dim()
            )));
        }
        let build = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
            let mut values = Vec::with_capacity(map.values().len());
            for x in 0..map.n_vertices() {
                let mut w = f(map.value(x));
                project_out(&mut w, map.value(x));
                values.extend(w);
            }
            SectionField::from_raw(map.dim(), values)
        };
        let mut out = Vec::new();
        for &a in &self.conformal {
            out.push((Self::conformal_label(a), build(&|y| Self::conformal_at(a, y))));
        }
        for &ab in &self.killing {
            out.push((Self::killing_label(ab), build(&|y| Self::killing_at(ab, y))));
        }
        Ok(out)
    }

    /// JSON object `{label: [[x, y, z], ...]}` of the fields sampled on a sphere mesh.
    pub fn export_json(&self, mesh: &DomainMesh) -> Result<serde_json::Value> {
        let mut obj = BTreeMap::new();
        for (label, field) in self.on_sphere_mesh(mesh)? {
            obj.insert(label, field.0);
        }
        Ok(serde_json::to_value(obj)?)
    }
}

/// Components of the identity-map quadratic form on one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityQ {
    pub value: f64,
    /// `∫(div X)²`
    pub div_sq: f64,
    /// `∫[½|L_X g|² − (div X)²]`
    pub lie_term: f64,
    pub scale: f64,
}

fn identity_q_with(mesh: &DomainMesh, der: Derivatives, x: &TangentField) -> IdentityQ {
    let parts = par::map_indexed(mesh.n_faces(), |f| {
        let a = mesh.covariant_on_face(f, x);
        let l = lie_from_covariant(&a);
        let div = a[0][0] + a[1][1];
        let area = mesh.face_area[f];
        (area * div * div, area * (0.5 * frob2(&l) - div * div), area * 0.5 * frob2(&l))
    });
    let (div_sq, lie_term, lie_abs) = parts
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    IdentityQ {
        value: der.d2 * div_sq + der.d1 * lie_term,
        div_sq,
        lie_term,
        scale: der.d2.abs() * div_sq + der.d1 * (lie_abs + div_sq),
    }
}

/// Identity-map quadratic form on a 2-dimensional mesh, `F` taken at `m/2 = 1`.
pub fn q_identity_discrete(mesh: &DomainMesh, profile: &FProfile, x: &TangentField) -> Result<IdentityQ> {
    Ok(identity_q_with(mesh, profile.evaluate(1.0)?, x))
}

/// Polarized identity-map quadratic form over labelled tangent fields.
pub fn identity_hessian(
    mesh: &DomainMesh,
    profile: &FProfile,
    fields: &[(String, TangentField)],
    tol_rel: f64,
) -> Result<IndexReport> {
    if fields.is_empty() {
        return Err(Error::Incompatible("identity_hessian needs at least one field".into()));
    }
    let der = profile.evaluate(1.0)?;
    let h = polarize(fields.len(), |a, b| {
        let x = match b {
            None => fields[a].1.clone(),
            Some(b) => TangentField(fields[a].1 .0.iter().zip(&fields[b].1 .0).map(|(p, q)| add3(p, q)).collect()),
        };
        identity_q_with(mesh, der, &x).value
    });
    Ok(index_from_matrix(fields.iter().map(|f| f.0.clone()).collect(), h, tol_rel))
}

/// L² Gram matrix `∫⟨X_a, X_b⟩` with vertex-mass quadrature.
pub fn gram_matrix(mesh: &DomainMesh, fields: &[TangentField]) -> Vec<Vec<f64>> {
    fields
        .iter()
        .map(|a| {
            fields
                .iter()
                .map(|b| (0..mesh.n_vertices()).map(|v| mesh.vertex_mass[v] * dot3(&a.0[v], &b.0[v])).sum())
                .collect()
        })
        .collect()
}

/// Volume of the unit m-sphere, `2π^{(m+1)/2} / Γ((m+1)/2)`.
pub fn sphere_volume(m: u32) -> f64 {
    // Γ at integers and half-integers by recursion from Γ(1) = 1, Γ(½) = √π
    let k = m + 1;
    let mut gamma = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while x < 0.5 * k as f64 - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(0.5 * k as f64) / gamma
}

/// `(F″(m/2) + (2−m)/m·F′(m/2))·∫_{Sᵐ}(div v̄_a)²` with `∫(div v̄_a)² = m²·vol(Sᵐ)/(m+1)`;
/// the bare coefficient when `normalize` is set.
pub fn q_identity_conformal_closed(m: u32, profile: &FProfile, normalize: bool) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidCondition(format!("m must be >= 2, got {m}")));
    }
    let mf = m as f64;
    let der = profile.evaluate(0.5 * mf)?;
    let coeff = der.d2 + (2.0 - mf) / mf * der.d1;
    if normalize {
        Ok(coeff)
    } else {
        Ok(coeff * mf * mf * sphere_volume(m) / (mf + 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub scale: f64,
}

impl Comparison {
    fn new(lhs: f64, rhs: f64, scale: f64) -> Self {
        let denom = lhs.abs().max(rhs.abs()).max(scale);
        let rel_err = if denom > 0.0 { (lhs - rhs).abs() / denom } else { 0.0 };
        Comparison {
            lhs,
            rhs,
            rel_err,
            scale,
        }
    }
}

/// `∫[|∇X|² − Ric(X,X)]` against `∫[½|L_X g|² − (div X)²]`.
pub fn yano_check(mesh: &DomainMesh, x: &TangentField) -> Comparison {
    let parts = par::map_indexed(mesh.n_faces(), |f| {
        let a = mesh.covariant_on_face(f, x);
        let l = lie_from_covariant(&a);
        let div = a[0][0] + a[1][1];
        let xf = mesh.face_value(f, x);
        let ric = mesh.ricci_coeff * (xf[0] * xf[0] + xf[1] * xf[1]);
        let area = mesh.face_area[f];
        (area * (frob2(&a) - ric), area * (0.5 * frob2(&l) - div * div), area * (frob2(&a) + ric.abs()))
    });
    let (lhs, rhs, scale) = parts
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    Comparison::new(lhs, rhs, scale)
}

/// `q_identity_discrete(X) − (1/m)(F″(m/2) + (2−m)F′(m/2))∫(div X)²` at `m = 2`,
/// where the bracket reduces to `½F″(1)`.
pub fn stability_bound_check(mesh: &DomainMesh, profile: &FProfile, x: &TangentField) -> Result<f64> {
    let q = q_identity_discrete(mesh, profile, x)?;
    let der = profile.evaluate(1.0)?;
    Ok(q.value - 0.5 * der.d2 * q.div_sq)
}

/// `dφ(X)` computed per face, averaged to vertices with area weights, and
/// projected onto `T_{φ(x)}Sⁿ`.
pub fn pushforward_section(mesh: &DomainMesh, map: &SphereMap, x: &TangentField) -> SectionField {
    let geom = map_geometry(mesh, map);
    let d = map.dim();
    let mut acc = vec![0.0; d * mesh.n_vertices()];
    for f in 0..mesh.n_faces() {
        let xf = mesh.face_value(f, x);
        let (c1, c2) = geom.dphi(f);
        let area = mesh.face_area[f];
        for &v in &mesh.faces[f] {
            for k in 0..d {
                acc[v * d + k] += area * (xf[0] * c1[k] + xf[1] * c2[k]);
            }
        }
    }
    for (v, row) in acc.chunks_mut(d).enumerate() {
        let w = 3.0 * mesh.vertex_mass[v];
        row.iter_mut().for_each(|r| *r /= w);
        project_out(row, map.value(v));
    }
    SectionField::from_raw(d, acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionCheck {
    pub k2: f64,
    /// Against `k²·Q_I^F(X)`.
    pub comparison: Comparison,
    /// Against `k⁴F″∫(div X)² + k²F′∫[½|L_X g|² − (div X)²]`: since
    /// `⟨∇dφX, dφ⟩ = k²·div X`, the `F″` term carries `k⁴`. The two agree
    /// for divergence-free `X` or `k² = 1`.
    pub corrected: Comparison,
}

/// `Q_φ^F(dφX)` against `k²·Q_I^F(X)` with `F′`, `F″` taken at `m·k²/2`.
pub fn homothetic_reduction_check(
    mesh: &DomainMesh,
    map: &SphereMap,
    profile: &FProfile,
    x: &TangentField,
) -> Result<ReductionCheck> {
    let fit = homothety_fit(&map_geometry(mesh, map), mesh)?;
    if fit.residual > REDUCTION_HOMOTHETY_TOL {
        return Err(Error::NotHomothetic {
            k2: fit.k2,
            residual: fit.residual,
        });
    }
    let section = pushforward_section(mesh, map, x);
    let lhs: QParts = SecondVariation::new(mesh, map, profile)?.q(&section);
    let m = 2.0;
    let der = profile.evaluate(0.5 * m * fit.k2)?;
    let rhs = identity_q_with(mesh, der, x);
    let k2 = fit.k2;
    let corrected = k2 * k2 * der.d2 * rhs.div_sq + k2 * der.d1 * rhs.lie_term;
    Ok(ReductionCheck {
        k2,
        comparison: Comparison::new(lhs.value, k2 * rhs.value, lhs.scale),
        corrected: Comparison::new(lhs.value, corrected, lhs.scale),
    })
}

/// Tangent field on a sphere mesh: `y ↦ x₂·v̄₁(y)` (0-based `y[1]·v̄_0`).
pub fn generic_sphere_field(mesh: &DomainMesh) -> TangentField {
    TangentField::from_fn(mesh, |p| {
        let v = CanonicalFields::conformal_at(0, p);
        [p[1] * v[0], p[1] * v[1], p[1] * v[2]]
    })
}

/// Unit normal-free check that a field is tangent: `max |⟨X(y), y⟩|`.
pub fn sphere_tangency(mesh: &DomainMesh, x: &TangentField) -> f64 {
    mesh.vertices
        .iter()
        .zip(&x.0)
        .map(|(p, v)| dot3(p, v).abs())
        .fold(0.0, f64::max)
}
