//! Physical parameters and the closed-form constants derived from them.
//!
//! Everything here is a pure function of `(alpha, c, Z, q)` and the retraction
//! radius `R`. Validity predicates never error: they return a verdict together
//! with the numbers that produced it, so callers can stamp reports.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coupling constant, speed of light, nuclear charge and electron count.
///
/// `alpha_c` and `z_c` are always recomputed from the stored fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParams {
    pub alpha: f64,
    pub c: f64,
    pub z: f64,
    pub q: usize,
}

impl PhysParams {
    pub fn new(alpha: f64, c: f64, z: f64, q: usize) -> Result<Self> {
        let p = Self { alpha, c, z, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Config(format!("c must be > 0, got {}", self.c)));
        }
        if !(self.z.is_finite() && self.z >= 0.0) {
            return Err(Error::Config(format!("Z must be >= 0, got {}", self.z)));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn alpha_c(&self) -> f64 {
        self.alpha / self.c
    }

    #[inline]
    pub fn z_c(&self) -> f64 {
        self.z / self.c
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }
}

/// Constants of the retraction lemma and its supporting estimates.
///
/// Quantities whose closed form needs `sqrt((1 - kappa) * lambda0)` are `None`
/// when that product is not positive; `A`, `L` and `C_kl` additionally need
/// `2 a R < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub kappa: f64,
    pub lambda0: f64,
    pub a_const: Option<f64>,
    pub r: f64,
    pub a_big: Option<f64>,
    pub l_const: Option<f64>,
    pub c_kl: Option<f64>,
    /// `kappa < 1`.
    pub kappa_ok: bool,
    /// `L < 1`.
    pub contraction_ok: bool,
}

impl DerivedConstants {
    pub fn a_const(&self) -> Result<f64> {
        self.a_const.ok_or_else(|| {
            Error::Domain(format!(
                "a(alpha, c) needs (1 - kappa) * lambda0 > 0, have kappa = {}, lambda0 = {}",
                self.kappa, self.lambda0
            ))
        })
    }

    pub fn a_big(&self) -> Result<f64> {
        self.a_big.ok_or_else(|| {
            Error::Domain(format!(
                "A(alpha, c) needs 2 a R < 1 (kappa = {}, R = {})",
                self.kappa, self.r
            ))
        })
    }

    pub fn l_const(&self) -> Result<f64> {
        self.l_const
            .ok_or_else(|| Error::Domain("L(alpha, c) undefined: a(alpha, c) is undefined".into()))
    }

    pub fn c_kl(&self) -> Result<f64> {
        self.c_kl.ok_or_else(|| {
            Error::Domain(format!(
                "C(kappa, L) needs kappa < 1, lambda0 > 0 and L < 1 (kappa = {}, L = {:?})",
                self.kappa, self.l_const
            ))
        })
    }
}

pub fn derive_constants(p: &PhysParams, r: f64) -> DerivedConstants {
    let ac = p.alpha_c();
    let zc = p.z_c();
    let q = p.q as f64;
    let kappa = 2.0 * (ac * q + zc);
    let lambda0 = 1.0 - (ac * q).max(zc);
    let prod = (1.0 - kappa) * lambda0;
    let a_const = if 1.0 - kappa > 0.0 && lambda0 > 0.0 {
        Some(PI * ac / (4.0 * prod.sqrt()))
    } else {
        None
    };
    let l_const = a_const.map(|a| 2.0 * a * r);
    let a_big = match (a_const, l_const) {
        (Some(a), Some(l)) if l < 1.0 => Some((1.0 / (1.0 - l)).max((2.0 + a * q) / 2.0)),
        _ => None,
    };
    let c_kl = match l_const {
        Some(l) if l < 1.0 => Some(
            5.0 * PI * PI
                / (4.0 * (1.0 - kappa).powi(2) * lambda0.powf(1.5) * (1.0 - l).powi(2)),
        ),
        _ => None,
    };
    DerivedConstants {
        kappa,
        lambda0,
        a_const,
        r,
        a_big,
        l_const,
        c_kl,
        kappa_ok: kappa < 1.0,
        contraction_ok: l_const.is_some_and(|l| l < 1.0),
    }
}

/// Default retraction radius `2 (1 + K^2) q` for an orbital `H^1` bound `K`.
pub fn default_radius(k: f64, q: usize) -> f64 {
    2.0 * (1.0 + k * k) * q as f64
}

/// Outcome of the two-item smallness assumption on `(alpha, c, Z, q, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub holds: bool,
    pub item1: bool,
    pub item2: bool,
    /// Lower end of the admissible `R` interval; infinite when item 1 fails.
    pub r_lower: f64,
    /// Upper end of the admissible `R` interval; infinite when `alpha = 0`.
    pub r_upper: f64,
    pub r: f64,
    pub reason: Option<String>,
}

pub fn check_assumption_1(d: &DerivedConstants, p: &PhysParams, r: f64) -> AssumptionCheck {
    let ac = p.alpha_c();
    let q = p.q as f64;
    let margin = 1.0 - d.kappa - 0.25 * PI * ac * q;
    let item1 = margin > 0.0;
    let r_lower = if item1 { q / margin.sqrt() } else { f64::INFINITY };
    let prod = (1.0 - d.kappa) * d.lambda0;
    let r_upper = if ac == 0.0 {
        f64::INFINITY
    } else if prod > 0.0 {
        2.0 * prod.sqrt() / (PI * ac)
    } else {
        0.0
    };
    let item2 = item1 && r_lower < r && r < r_upper;
    let reason = if !item1 {
        Some("item (1) violated".to_string())
    } else if !item2 {
        Some(format!(
            "item (2) violated: R = {r} outside ({r_lower}, {r_upper})"
        ))
    } else {
        None
    };
    AssumptionCheck {
        holds: item1 && item2,
        item1,
        item2,
        r_lower,
        r_upper,
        r,
        reason,
    }
}

/// The constant `C_a` and the admissibility level `mu_a` for the ep-HF model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpHfAdmissibility {
    pub mu_a: f64,
    pub c_a: f64,
}

pub fn c_of(a: f64) -> f64 {
    (-4.0 * a.abs() + (9.0 + 4.0 * a * a).sqrt()) / 3.0
}

/// Largest `mu` in `[0, C_a^2]` with `mu + C_a^2 a^2 / (C_a^2 - mu) <= 1`.
///
/// The left side is increasing in `mu`, so the answer is the smaller root of
/// `mu^2 - (C^2 + 1) mu + C^2 (1 - a^2) = 0`, capped at `C^2`.
pub fn mu_of(a: f64) -> Result<f64> {
    let edge = 0.75f64.sqrt();
    if !(a.abs() < edge) {
        return Err(Error::Domain(format!("mu_a needs |a| < sqrt(3)/2, got {a}")));
    }
    let c2 = c_of(a).powi(2);
    let b = c2 + 1.0;
    let k = c2 * (1.0 - a * a);
    let disc = (b * b - 4.0 * k).max(0.0);
    // b + sqrt(disc) never cancels; this form keeps full precision near a = sqrt(3)/2.
    let root = 2.0 * k / (b + disc.sqrt());
    Ok(root.min(c2))
}

pub fn ephf_admissibility(p: &PhysParams) -> Result<EpHfAdmissibility> {
    let a = p.z_c();
    Ok(EpHfAdmissibility {
        mu_a: mu_of(a)?,
        c_a: c_of(a),
    })
}

/// Smallness condition under which ep-HF minimizers have no unfilled shell.
pub fn check_ephf_condition(p: &PhysParams, trace_g: f64) -> Result<bool> {
    let mu = mu_of(p.z_c())?;
    let ac = p.alpha_c();
    let lhs = PI * ac * (0.25 + trace_g.max(p.q as f64)) + 4.0 * ac * trace_g;
    Ok(lhs < mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trivial_constants() {
        let p = PhysParams::new(0.01, 100.0, 10.0, 2).unwrap();
        let d = derive_constants(&p, 1.0);
        assert_relative_eq!(d.kappa, 0.2004, epsilon = 1e-15);
        assert_relative_eq!(d.lambda0, 0.9, epsilon = 1e-15);

        let p = PhysParams::new(0.0, 3.0, 0.0, 1).unwrap();
        let d = derive_constants(&p, 1.0);
        assert_eq!(d.kappa, 0.0);
        assert_eq!(d.lambda0, 1.0);
        assert_eq!(d.a_const, Some(0.0));
        assert_eq!(d.l_const, Some(0.0));
        assert_eq!(d.a_big, Some(1.0));
    }

    #[test]
    fn missing_constants_are_domain_errors() {
        let p = PhysParams::new(0.1, 1.0, 0.8, 1).unwrap();
        let d = derive_constants(&p, 1.0);
        assert!(!d.kappa_ok);
        assert!(d.a_const.is_none());
        assert!(matches!(d.a_const(), Err(Error::Domain(_))));
        assert!(matches!(d.c_kl(), Err(Error::Domain(_))));
    }

    #[test]
    fn assumption_examples() {
        let p = PhysParams::new(0.0, 1.0, 0.1, 1).unwrap();
        let d = derive_constants(&p, 1.0);
        let chk = check_assumption_1(&d, &p, 1.0);
        assert!(chk.r_upper.is_infinite());
        assert!(chk.r_lower < 1.2);
        let chk = check_assumption_1(&d, &p, 2.0);
        assert!(chk.holds);

        let p = PhysParams::new(0.1, 1.0, 0.6, 1).unwrap();
        let d = derive_constants(&p, 1.0);
        let chk = check_assumption_1(&d, &p, 1.0);
        assert!(!chk.holds);
        assert_eq!(chk.reason.as_deref(), Some("item (1) violated"));
    }

    #[test]
    fn mu_at_zero_is_one() {
        assert_eq!(c_of(0.0), 1.0);
        assert_eq!(mu_of(0.0).unwrap(), 1.0);
        assert!(mu_of(0.9).is_err());
    }

    #[test]
    fn mu_vanishes_at_the_endpoint() {
        // C_a -> 0 as a -> sqrt(3)/2, and mu_a <= C_a^2.
        let a = 0.75f64.sqrt() - 1e-9;
        let mu = mu_of(a).unwrap();
        assert!(mu > 0.0);
        assert!(mu < 1e-8);
    }

    #[test]
    fn ephf_condition_zero_alpha() {
        let p = PhysParams::new(0.0, 10.0, 5.0, 3).unwrap();
        assert!(check_ephf_condition(&p, 3.0).unwrap());
        let p = PhysParams::new(1.0, 1.0, 0.9, 1).unwrap();
        assert!(check_ephf_condition(&p, 1.0).is_err());
    }
}
