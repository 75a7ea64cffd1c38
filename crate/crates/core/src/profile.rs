//! Weight functions `F` for the F-energy `∫ F(|dφ|²/2)` and the scalar
//! stability/index conditions built from `F′` and `F″`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled range on which `F′ > 0` and `F ≥ 0` are checked at construction.
pub const VALIDATION_RANGE: (f64, f64) = (1e-6, 100.0);
const VALIDATION_SAMPLES: usize = 2001;

/// Closed-form families of weight functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileKind {
    /// `F(t) = t`, the Dirichlet energy.
    Linear,
    /// `F(t) = (2t)^{p/2} / p`, the p-energy.
    PNorm {
        p: f64,
    },
    /// `F(t) = α·e^{βt} + γ·t + δ`.
    ExpAffine {
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
    },
    /// `F(t) = √(1 + t)`.
    SqrtShift,
}

/// `F`, `F′` and `F″` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivatives {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
}

/// A validated weight function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FProfile {
    kind: ProfileKind,
}

impl<'de> Deserialize<'de> for FProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let kind = ProfileKind::deserialize(d)?;
        FProfile::new(kind).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for FProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ProfileKind::Linear => write!(f, "linear"),
            ProfileKind::PNorm { p } => write!(f, "p_norm(p={p})"),
            ProfileKind::ExpAffine {
                alpha,
                beta,
                gamma,
                delta,
            } => write!(f, "exp_affine({alpha}, {beta}, {gamma}, {delta})"),
            ProfileKind::SqrtShift => write!(f, "sqrt_shift"),
        }
    }
}

impl FProfile {
    /// Builds a profile, rejecting parameters for which `F′ ≤ 0` or `F < 0`
    /// somewhere on [`VALIDATION_RANGE`].
    pub fn new(kind: ProfileKind) -> Result<Self> {
        match kind {
            ProfileKind::PNorm { p } if !(p >= 2.0 && p.is_finite()) => {
                return Err(Error::InvalidProfile(format!("p_norm requires p >= 2, got {p}")));
            }
            ProfileKind::ExpAffine {
                alpha,
                beta,
                gamma,
                delta,
            } if ![alpha, beta, gamma, delta].iter().all(|x| x.is_finite()) => {
                return Err(Error::InvalidProfile("exp_affine parameters must be finite".into()));
            }
            _ => {}
        }
        let profile = FProfile { kind };
        let (lo, hi) = VALIDATION_RANGE;
        for k in 0..VALIDATION_SAMPLES {
            let t = lo + (hi - lo) * k as f64 / (VALIDATION_SAMPLES - 1) as f64;
            let d = profile.evaluate(t)?;
            if !(d.d1 > 0.0) || !d.d1.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "{profile}: F'({t}) = {} is not positive",
                    d.d1
                )));
            }
            if !(d.f >= 0.0) || !d.f.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "{profile}: F({t}) = {} is negative",
                    d.f
                )));
            }
        }
        Ok(profile)
    }

    pub fn linear() -> Self {
        FProfile {
            kind: ProfileKind::Linear,
        }
    }

    pub fn sqrt_shift() -> Self {
        FProfile {
            kind: ProfileKind::SqrtShift,
        }
    }

    pub fn p_norm(p: f64) -> Result<Self> {
        Self::new(ProfileKind::PNorm { p })
    }

    pub fn exp_affine(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        Self::new(ProfileKind::ExpAffine {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    /// `F(t) = e^{(2−m)t}/(2−m) + c`, offered as satisfying the identity
    /// stability condition (it does not; see [`Condition::StabilityIdentity`]).
    pub fn stability_family(m: u32, c: f64) -> Result<Self> {
        let a = 2.0 - m as f64;
        Self::exp_affine(1.0 / a, a, 0.0, c)
    }

    /// `F(t) = m/(m−2)·e^{(m−2)t/m} + c·t`.
    pub fn index_family(m: u32, c: f64) -> Result<Self> {
        let m = m as f64;
        Self::exp_affine(m / (m - 2.0), (m - 2.0) / m, c, 0.0)
    }

    /// `F(t) = m²/(m−2)·e^{(m−2)t/m²}`.
    pub fn homothetic_family(m: u32) -> Result<Self> {
        let m = m as f64;
        Self::exp_affine(m * m / (m - 2.0), (m - 2.0) / (m * m), 0.0, 0.0)
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    /// Closed-form `(F, F′, F″)` at `t ≥ 0`.
    pub fn evaluate(&self, t: f64) -> Result<Derivatives> {
        if !(t >= 0.0) {
            return Err(Error::InvalidProfile(format!("energy density must be >= 0, got {t}")));
        }
        let d = match self.kind {
            ProfileKind::Linear => Derivatives {
                f: t,
                d1: 1.0,
                d2: 0.0,
            },
            ProfileKind::PNorm { p } => {
                let s = 2.0 * t;
                let h = 0.5 * p;
                if p == 2.0 {
                    Derivatives {
                        f: t,
                        d1: 1.0,
                        d2: 0.0,
                    }
                } else if s == 0.0 {
                    let d2 = if p == 4.0 {
                        2.0
                    } else if p > 4.0 {
                        0.0
                    } else {
                        return Err(Error::SingularDerivative {
                            profile: self.to_string(),
                            t,
                        });
                    };
                    Derivatives { f: 0.0, d1: 0.0, d2 }
                } else {
                    Derivatives {
                        f: s.powf(h) / p,
                        d1: s.powf(h - 1.0),
                        d2: (p - 2.0) * s.powf(h - 2.0),
                    }
                }
            }
            ProfileKind::ExpAffine {
                alpha,
                beta,
                gamma,
                delta,
            } => {
                let e = (beta * t).exp();
                Derivatives {
                    f: alpha * e + gamma * t + delta,
                    d1: alpha * beta * e + gamma,
                    d2: alpha * beta * beta * e,
                }
            }
            ProfileKind::SqrtShift => {
                let r = (1.0 + t).sqrt();
                Derivatives {
                    f: r,
                    d1: 0.5 / r,
                    d2: -0.25 / (r * r * r),
                }
            }
        };
        Ok(d)
    }

    /// Worst mixed relative error `|fd − exact| / max(|exact|, 1)` of the
    /// closed-form `F′`, `F″` against central differences of `F`.
    pub fn validate_derivatives(&self, t_lo: f64, t_hi: f64, samples: usize) -> Result<f64> {
        if !(t_lo > 0.0 && t_lo < t_hi) || samples < 3 {
            return Err(Error::InvalidProfile(format!(
                "validate_derivatives needs 0 < t_lo < t_hi and samples >= 3 (got {t_lo}, {t_hi}, {samples})"
            )));
        }
        let mut worst: f64 = 0.0;
        for k in 0..samples {
            let t = t_lo + (t_hi - t_lo) * k as f64 / (samples - 1) as f64;
            let scale = t.max(1.0);
            let h1 = (1e-5 * scale).min(0.5 * t);
            let h2 = (1e-3 * scale).min(0.5 * t);
            let exact = self.evaluate(t)?;
            let fp = self.evaluate(t + h1)?.f;
            let fm = self.evaluate(t - h1)?.f;
            let d1 = (fp - fm) / (2.0 * h1);
            let fp = self.evaluate(t + h2)?.f;
            let fm = self.evaluate(t - h2)?.f;
            let d2 = (fp - 2.0 * exact.f + fm) / (h2 * h2);
            worst = worst
                .max((d1 - exact.d1).abs() / exact.d1.abs().max(1.0))
                .max((d2 - exact.d2).abs() / exact.d2.abs().max(1.0));
        }
        Ok(worst)
    }

    /// Left-hand side of the selected inequality and whether it holds.
    pub fn check_condition(&self, cond: Condition) -> Result<ConditionOutcome> {
        cond.validate()?;
        let (value, strict) = match cond {
            Condition::StabilityIdentity { m } => {
                let m = m as f64;
                let d = self.evaluate(0.5 * m)?;
                (d.d2 + (2.0 - m) * d.d1, false)
            }
            Condition::IndexIdentity { m } => {
                let m = m as f64;
                let d = self.evaluate(0.5 * m)?;
                ((m - 2.0) / m * d.d1 - d.d2, true)
            }
            Condition::Homothetic { m, t } => {
                let m = m as f64;
                let d = self.evaluate(t)?;
                ((1.0 - 2.0 / m) * d.d1 - (2.0 * t / m) * d.d2, true)
            }
        };
        let holds = if strict { value > 0.0 } else { value >= 0.0 };
        Ok(ConditionOutcome { cond, value, holds })
    }
}

/// Scalar conditions on `F` at a fixed energy density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// `F″(m/2) + (2−m)F′(m/2) ≥ 0`: stability of the identity.
    StabilityIdentity { m: u32 },
    /// `(m−2)/m·F′(m/2) − F″(m/2) > 0`: index of the identity at least `dim C/K`.
    IndexIdentity { m: u32 },
    /// `(1−2/m)F′(t) − (2t/m)F″(t) > 0` with `t = m·k²/2`: index of a
    /// homothetic map at least `n+1`.
    Homothetic { m: u32, t: f64 },
}

impl Condition {
    /// Homothetic condition for a map with `φ*can = k²·g` on an m-manifold.
    pub fn homothetic_k2(m: u32, k2: f64) -> Self {
        Condition::Homothetic {
            m,
            t: 0.5 * m as f64 * k2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Condition::StabilityIdentity { m } | Condition::IndexIdentity { m } if m < 3 => {
                Err(Error::InvalidCondition(format!("identity conditions need m >= 3, got {m}")))
            }
            Condition::Homothetic { m, .. } if m < 2 => {
                Err(Error::InvalidCondition(format!("homothetic condition needs m >= 2, got {m}")))
            }
            Condition::Homothetic { t, .. } if !(t > 0.0) => {
                Err(Error::InvalidCondition(format!("homothetic density must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionOutcome {
    pub cond: Condition,
    pub value: f64,
    pub holds: bool,
}
