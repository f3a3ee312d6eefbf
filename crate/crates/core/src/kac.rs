//! Kac-table weights, central charge, fractal dimensions, fusion rules and
//! the closed-form exponent identities relating them.
//!
//! Everything here is exact rational arithmetic. No floating point: each
//! identity below is algebraic, and a tolerance would only hide defects.

use crate::{int, ratio, Rational};
use num::{One, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KacError {
    /// κ must be strictly positive.
    #[error("kappa must be positive, got {0}")]
    Domain(String),
    /// Operation needs a κ-phase the given value is not in.
    #[error("kappa = {kappa} outside the valid phase for {what}: requires {requires}")]
    Phase {
        kappa: String,
        what: &'static str,
        requires: &'static str,
    },
    /// Kac labels must have r ≥ 1 and s ≥ 1.
    #[error("Kac label indices must be >= 1, got ({0},{1})")]
    Label(u32, u32),
    /// Only the two self-fusions (1,2)×(1,2) and (2,1)×(2,1) are in scope.
    #[error("unsupported fusion ({0})x({1})")]
    UnsupportedFusion(KacLabel, KacLabel),
}

/// SLE speed parameter. Always an exact rational, always > 0.
///
/// Phase restrictions (κ < 8 for hull quantities, branch pairing for
/// exponent identities) are checked by the individual operations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Kappa {
    value: Rational,
}

impl Kappa {
    pub fn new(value: Rational) -> Result<Self, KacError> {
        if value <= Rational::zero() {
            return Err(KacError::Domain(value.to_string()));
        }
        Ok(Kappa { value })
    }

    /// κ = n/d for literal arguments.
    pub fn from_ratio(n: i64, d: i64) -> Result<Self, KacError> {
        if d == 0 {
            return Err(KacError::Domain(format!("{n}/0")));
        }
        Kappa::new(ratio(n, d))
    }

    pub fn from_int(n: i64) -> Result<Self, KacError> {
        Kappa::new(int(n))
    }

    pub fn value(&self) -> &Rational {
        &self.value
    }

    /// Nearest f64, for handing to the numerical modules.
    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.value)
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// Best-effort f64 value of an exact rational.
pub fn rational_to_f64(q: &Rational) -> f64 {
    // num's Ratio<BigInt> has no direct to_f64 that is always in range;
    // go through a scaled integer division to keep precision.
    use num::ToPrimitive;
    q.to_f64().unwrap_or_else(|| {
        let approx = q.numer().to_f64().unwrap_or(f64::NAN) / q.denom().to_f64().unwrap_or(f64::NAN);
        approx
    })
}

/// Kac label (r,s), both indices ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KacLabel {
    pub r: u32,
    pub s: u32,
}

impl KacLabel {
    pub fn new(r: u32, s: u32) -> Result<Self, KacError> {
        if r < 1 || s < 1 {
            return Err(KacError::Label(r, s));
        }
        Ok(KacLabel { r, s })
    }
}

impl fmt::Display for KacLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.r, self.s)
    }
}

/// The two in-scope self-fusion channels.
///
/// Output labels obey r′ = 2r−1, s′ = 2s−1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionBranch {
    /// (1,2)×(1,2) → (1,1) + (1,3)
    OneTwo,
    /// (2,1)×(2,1) → (1,1) + (3,1)
    TwoOne,
}

impl FusionBranch {
    pub fn input(self) -> KacLabel {
        match self {
            FusionBranch::OneTwo => KacLabel { r: 1, s: 2 },
            FusionBranch::TwoOne => KacLabel { r: 2, s: 1 },
        }
    }

    pub fn output(self) -> KacLabel {
        match self {
            FusionBranch::OneTwo => KacLabel { r: 1, s: 3 },
            FusionBranch::TwoOne => KacLabel { r: 3, s: 1 },
        }
    }
}

impl fmt::Display for FusionBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionBranch::OneTwo => write!(f, "one-two"),
            FusionBranch::TwoOne => write!(f, "two-one"),
        }
    }
}

/// c(κ) = (3κ−8)(6−κ)/(2κ). Satisfies c ≤ 1 for all κ > 0 and c(κ) = c(16/κ).
pub fn central_charge(kappa: &Kappa) -> Rational {
    let k = kappa.value();
    (int(3) * k - int(8)) * (int(6) - k) / (int(2) * k)
}

/// h_{(r,s)}(κ) = ((rκ − 4s)² − (κ − 4)²) / (16κ).
pub fn kac_weight(kappa: &Kappa, label: KacLabel) -> Rational {
    let k = kappa.value();
    let a = int(label.r as i64) * k - int(4 * label.s as i64);
    let b = k - int(4);
    (&a * &a - &b * &b) / (int(16) * k)
}

/// The dual speed 16/κ. Involution; κ = 4 is the fixed point.
pub fn dual_kappa(kappa: &Kappa) -> Kappa {
    Kappa {
        value: int(16) / kappa.value(),
    }
}

/// Trace dimension min{1 + κ/8, 2}.
pub fn trace_dimension(kappa: &Kappa) -> Rational {
    let d = Rational::one() + kappa.value() / int(8);
    let two = int(2);
    if d > two {
        two
    } else {
        d
    }
}

/// Hull dimension: the trace value for κ ≤ 4, and 1 + 2/κ for 4 < κ < 8.
///
/// κ ≥ 8 is rejected: the hitting-probability law behind this quantity is
/// stated only for 0 < κ < 8.
pub fn hull_dimension(kappa: &Kappa) -> Result<Rational, KacError> {
    let k = kappa.value();
    if *k >= int(8) {
        return Err(KacError::Phase {
            kappa: kappa.to_string(),
            what: "hull_dimension",
            requires: "0 < kappa < 8",
        });
    }
    if *k <= int(4) {
        Ok(trace_dimension(kappa))
    } else {
        Ok(Rational::one() + int(2) / k)
    }
}

/// Self-fusion of the two level-2-degenerate fields.
///
/// Only a = b ∈ {(1,2), (2,1)} is in scope; anything else errors.
pub fn fuse(a: KacLabel, b: KacLabel) -> Result<Vec<KacLabel>, KacError> {
    let branch = if a == b && a == (KacLabel { r: 1, s: 2 }) {
        FusionBranch::OneTwo
    } else if a == b && a == (KacLabel { r: 2, s: 1 }) {
        FusionBranch::TwoOne
    } else {
        return Err(KacError::UnsupportedFusion(a, b));
    };
    Ok(vec![KacLabel { r: 1, s: 1 }, branch.output()])
}

/// Fusion gap ν := h_{(r′,s′)} − 2·h_{(r,s)}.
///
/// With this sign ν ≥ 0 and equals 2/κ on the OneTwo branch and κ/8 on
/// TwoOne. The source convention is ambiguous about the sign of μ; the
/// nonnegative choice is canonical here because it makes 1 − ν = 2 − d hold
/// literally (see `exponent_identity`).
pub fn fusion_gap(kappa: &Kappa, branch: FusionBranch) -> Rational {
    let h_in = kac_weight(kappa, branch.input());
    let h_out = kac_weight(kappa, branch.output());
    h_out - int(2) * h_in
}

/// The exponent identity (ν, 2−d) with ν = d − 1 exactly.
///
/// d is the hull dimension on the OneTwo branch (4 ≤ κ < 8) and the trace
/// dimension on TwoOne (0 < κ ≤ 4). The self-dual boundary κ = 4 is valid
/// for both branches and gives ν = 1/2 either way.
pub fn exponent_identity(
    kappa: &Kappa,
    branch: FusionBranch,
) -> Result<(Rational, Rational), KacError> {
    let k = kappa.value();
    let d = match branch {
        FusionBranch::OneTwo => {
            if *k < int(4) || *k >= int(8) {
                return Err(KacError::Phase {
                    kappa: kappa.to_string(),
                    what: "exponent_identity (one-two branch)",
                    requires: "4 <= kappa < 8",
                });
            }
            hull_dimension(kappa)?
        }
        FusionBranch::TwoOne => {
            if *k > int(4) {
                return Err(KacError::Phase {
                    kappa: kappa.to_string(),
                    what: "exponent_identity (two-one branch)",
                    requires: "0 < kappa <= 4",
                });
            }
            trace_dimension(kappa)
        }
    };
    let nu = fusion_gap(kappa, branch);
    Ok((nu, int(2) - d))
}

/// Both sides of the collapse identity plus their (always-true) comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollapseWitness {
    /// h_{(1,m+1)}(κ)
    pub lhs: Rational,
    /// m·h_{(1,2)} + (m(m−1)/2)·(2/κ)
    pub rhs: Rational,
    pub equal: bool,
}

/// Collapse identity h_{(1,m+1)} = m·h_{(1,2)} + (m(m−1)/2)·(2/κ).
///
/// m = 1 is allowed and degenerate: both sides are h_{(1,2)} with an empty
/// pairwise-gap sum.
pub fn collapse_exponent_identity(kappa: &Kappa, m: u32) -> Result<CollapseWitness, KacError> {
    if m < 1 {
        return Err(KacError::Label(1, m));
    }
    let lhs = kac_weight(kappa, KacLabel { r: 1, s: m + 1 });
    let pairs = int((m as i64) * (m as i64 - 1) / 2);
    let rhs = int(m as i64) * kac_weight(kappa, KacLabel { r: 1, s: 2 })
        + pairs * (int(2) / kappa.value());
    let equal = lhs == rhs;
    Ok(CollapseWitness { lhs, rhs, equal })
}

/// True when the trace is a simple curve (κ ≤ 4).
pub fn is_simple_phase(kappa: &Kappa) -> bool {
    *kappa.value() <= int(4)
}

/// True when the trace is space filling (κ ≥ 8).
pub fn is_space_filling(kappa: &Kappa) -> bool {
    *kappa.value() >= int(8)
}

/// Sanity bound used by property tests: c ≤ 1 for every κ > 0.
pub fn central_charge_bounded(kappa: &Kappa) -> bool {
    central_charge(kappa) <= Rational::one()
}
