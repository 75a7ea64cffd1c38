//! The F-stress-energy tensor `S = F′|dφ|²g − 2(F′ + tF″)φ*can`, its
//! pointwise minimum `S^{o,F}`, and the index-bound verifier.

use serde::Serialize;

use crate::error::Result;
use crate::hessian::IndexReport;
use crate::linalg::{dot, norm2, sym2_eigen};
use crate::mesh::{DomainMesh, Sym2};
use crate::par;
use crate::profile::FProfile;
use crate::sphere_map::{map_geometry, SphereMap};
use crate::variation::{energy_gradient, SecondVariation, MAX_AMBIENT};

/// Relative threshold used by [`Classification`].
pub const CLASSIFICATION_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

#[derive(Debug, Clone, Serialize)]
pub struct StressReport {
    /// `S` per face in the face frame.
    pub tensors: Vec<Sym2>,
    pub s_min: Vec<f64>,
    pub global_min: f64,
    pub classification: Classification,
    /// `max_face |dφ|²·F′`; thresholds are `CLASSIFICATION_EPS · scale`.
    pub scale: f64,
}

/// `S` from the pullback metric `G`, density `t`, and `F′`, `F″` at `t`.
#[inline]
pub fn stress_from_pullback(g: &Sym2, t: f64, d1: f64, d2: f64) -> Sym2 {
    let iso = d1 * 2.0 * t;
    let c = 2.0 * (d1 + t * d2);
    [[iso - c * g[0][0], -c * g[0][1]], [-c * g[1][0], iso - c * g[1][1]]]
}

pub fn stress_tensor(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile) -> Result<StressReport> {
    let geom = map_geometry(mesh, map);
    let per_face: Result<Vec<(Sym2, f64, f64)>> = par::map_indexed(mesh.n_faces(), |f| {
        let t = geom.density[f];
        let der = profile.evaluate(t)?;
        let s = stress_from_pullback(&geom.pullback[f], t, der.d1, der.d2);
        let (eig, _) = sym2_eigen(&s);
        Ok((s, eig[0], 2.0 * t * der.d1))
    })
    .into_iter()
    .collect();
    let per_face = per_face?;
    let scale = per_face.iter().map(|p| p.2).fold(0.0, f64::max);
    let global_min = per_face.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let eps = CLASSIFICATION_EPS * if scale > 0.0 { scale } else { 1.0 };
    let classification = if global_min > eps {
        Classification::PositiveDefinite
    } else if global_min >= -eps {
        Classification::PositiveSemidefinite
    } else {
        Classification::Indefinite
    };
    Ok(StressReport {
        tensors: per_face.iter().map(|p| p.0).collect(),
        s_min: per_face.iter().map(|p| p.1).collect(),
        global_min,
        classification,
        scale,
    })
}

/// Per-face margin `−S^{o,F}|v̄|² − [2(F′+tF″)|dφ_v|² − F′|dφ|²|v̄|²]`.
///
/// Everything is evaluated with the differential projected onto the tangent
/// space at the face point, so the pointwise chain of inequalities holds
/// exactly wherever `F′ + tF″ ≥ 0`.
pub fn pointwise_inequality6(mesh: &DomainMesh, map: &SphereMap, profile: &FProfile, v: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(v.len(), map.dim(), "ambient vector dimension mismatch");
    let geom = map_geometry(mesh, map);
    let d = map.dim();
    let v2 = norm2(v);
    par::map_indexed(mesh.n_faces(), |f| {
        let p = geom.point(f);
        let (c1, c2) = geom.dphi(f);
        let mut pc = [[0.0; MAX_AMBIENT]; 2];
        for (dst, src) in pc.iter_mut().zip([c1, c2]) {
            let cp = dot(src, p);
            for k in 0..d {
                dst[k] = src[k] - cp * p[k];
            }
        }
        let (a, b) = (&pc[0][..d], &pc[1][..d]);
        let g = [[norm2(a), dot(a, b)], [dot(a, b), norm2(b)]];
        let t = 0.5 * (g[0][0] + g[1][1]);
        let der = profile.evaluate(t)?;
        let s = stress_from_pullback(&g, t, der.d1, der.d2);
        let s_min = sym2_eigen(&s).0[0];
        let vbar2 = v2 - dot(v, p).powi(2);
        let dphi_v = dot(v, a).powi(2) + dot(v, b).powi(2);
        Ok(-s_min * vbar2 - (2.0 * (der.d1 + t * der.d2) * dphi_v - der.d1 * 2.0 * t * vbar2))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Stress positive definite on every face and the map is critical.
    Met,
    StressNotPositive,
    NotCritical,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremCheck {
    pub stress: StressReport,
    pub index: IndexReport,
    pub residual: f64,
    pub hypothesis: Hypothesis,
    /// False only when the hypothesis holds and fewer than `n+1` negative
    /// directions are found on `£(φ)`.
    pub theorem_consistent: bool,
}

pub fn verify_theorem1(
    mesh: &DomainMesh,
    map: &SphereMap,
    profile: &FProfile,
    tol_eig: f64,
    tol_residual: f64,
) -> Result<TheoremCheck> {
    let stress = stress_tensor(mesh, map, profile)?;
    let residual = energy_gradient(mesh, map, profile)?.sup_norm;
    let index = SecondVariation::new(mesh, map, profile)?.conformal_index_bound(map, tol_eig);
    let hypothesis = if residual > tol_residual {
        Hypothesis::NotCritical
    } else if stress.classification != Classification::PositiveDefinite {
        Hypothesis::StressNotPositive
    } else {
        Hypothesis::Met
    };
    let theorem_consistent = hypothesis != Hypothesis::Met || index.negative_count >= map.dim();
    Ok(TheoremCheck {
        stress,
        index,
        residual,
        hypothesis,
        theorem_consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainSpec;
    use crate::sphere_map::{make_map, MapKind};

    fn clifford(n: usize) -> (DomainMesh, SphereMap) {
        let mesh = DomainMesh::build(DomainSpec::torus(n)).unwrap();
        let map = make_map(&mesh, &MapKind::CliffordTorus).unwrap();
        (mesh, map)
    }

    fn identity(level: usize) -> (DomainMesh, SphereMap) {
        let mesh = DomainMesh::build(DomainSpec::sphere(level)).unwrap();
        let map = make_map(&mesh, &MapKind::IdentityS2).unwrap();
        (mesh, map)
    }

    #[test]
    fn clifford_linear_is_stress_free() {
        let (mesh, map) = clifford(16);
        let r = stress_tensor(&mesh, &map, &FProfile::linear()).unwrap();
        assert!(r.tensors.iter().flatten().flatten().all(|x| x.abs() < 1e-8));
        assert_eq!(r.classification, Classification::PositiveSemidefinite);
    }

    #[test]
    fn clifford_sqrt_is_positive_definite() {
        let (mesh, map) = clifford(32);
        let r = stress_tensor(&mesh, &map, &FProfile::sqrt_shift()).unwrap();
        // −2t²F″(t) at t = ½
        let oracle = -2.0 * 0.25 * FProfile::sqrt_shift().evaluate(0.5).unwrap().d2;
        assert!((oracle - 0.06804).abs() < 1e-5);
        assert!(r.s_min.iter().all(|s| (s / oracle - 1.0).abs() < 0.02));
        assert_eq!(r.classification, Classification::PositiveDefinite);
        for s in &r.tensors {
            assert!(s[0][1].abs() < 1e-12 && (s[0][0] - s[1][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_linear_is_stress_free() {
        let (mesh, map) = identity(3);
        let r = stress_tensor(&mesh, &map, &FProfile::linear()).unwrap();
        assert!(r.global_min.abs() < 1e-12);
        assert!(r.tensors.iter().flatten().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn diagonalization_identity() {
        let mesh = DomainMesh::build(DomainSpec::sphere(2)).unwrap();
        let map = make_map(
            &mesh,
            &MapKind::Perturbed {
                base: Box::new(MapKind::Equatorial { n: 3 }),
                seed: 5,
                amplitude: 0.3,
            },
        )
        .unwrap();
        let geom = map_geometry(&mesh, &map);
        for profile in [FProfile::linear(), FProfile::sqrt_shift(), FProfile::p_norm(3.0).unwrap()] {
            let r = stress_tensor(&mesh, &map, &profile).unwrap();
            for f in 0..mesh.n_faces() {
                let t = geom.density[f];
                let der = profile.evaluate(t).unwrap();
                let (mu, vecs) = sym2_eigen(&geom.pullback[f]);
                let s = &r.tensors[f];
                for k in 0..2 {
                    let e = vecs[k];
                    let see = e[0] * (s[0][0] * e[0] + s[0][1] * e[1]) + e[1] * (s[1][0] * e[0] + s[1][1] * e[1]);
                    let lhs = 2.0 * (der.d1 + t * der.d2) * mu[k];
                    assert!((lhs - (2.0 * t * der.d1 - see)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn homothetic_closed_form() {
        let (mesh, map) = clifford(32);
        let geom = map_geometry(&mesh, &map);
        let profile = FProfile::sqrt_shift();
        let r = stress_tensor(&mesh, &map, &profile).unwrap();
        for (f, s) in r.tensors.iter().enumerate() {
            let t = geom.density[f];
            let der = profile.evaluate(t).unwrap();
            let closed = 2.0 * t * ((1.0 - 2.0 / 2.0) * der.d1 - (2.0 * t / 2.0) * der.d2);
            assert!((s[0][0] / closed - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn inequality6_examples() {
        let (mesh, map) = clifford(16);
        let sqrt = FProfile::sqrt_shift();
        let zero = pointwise_inequality6(&mesh, &map, &sqrt, &[0.0; 4]).unwrap();
        assert!(zero.iter().all(|&m| m == 0.0));
        for a in 0..4 {
            let mut v = [0.0; 4];
            v[a] = 1.0;
            let m = pointwise_inequality6(&mesh, &map, &sqrt, &v).unwrap();
            assert!(m.iter().all(|&x| x >= -1e-8));
        }
        let (mesh, map) = identity(3);
        let m = pointwise_inequality6(&mesh, &map, &FProfile::linear(), &[0.0, 0.0, 1.0]).unwrap();
        assert!(m.iter().all(|&x| x >= -1e-8));
    }

    #[test]
    fn verify_examples() {
        let (mesh, map) = clifford(16);
        let c = verify_theorem1(&mesh, &map, &FProfile::sqrt_shift(), 1e-3, 1e-3).unwrap();
        assert_eq!(c.hypothesis, Hypothesis::Met);
        assert_eq!(c.index.negative_count, 4);
        assert!(c.theorem_consistent);

        let c = verify_theorem1(&mesh, &map, &FProfile::linear(), 1e-3, 1e-3).unwrap();
        assert_eq!(c.stress.classification, Classification::PositiveSemidefinite);
        assert_eq!(c.hypothesis, Hypothesis::StressNotPositive);
        assert!(c.theorem_consistent);

        let noisy = make_map(
            &mesh,
            &MapKind::Perturbed {
                base: Box::new(MapKind::CliffordTorus),
                seed: 1,
                amplitude: 0.1,
            },
        )
        .unwrap();
        let c = verify_theorem1(&mesh, &noisy, &FProfile::sqrt_shift(), 1e-3, 1e-3).unwrap();
        assert_eq!(c.hypothesis, Hypothesis::NotCritical);
        assert!(c.residual > 1e-3 && c.theorem_consistent);
    }
}
