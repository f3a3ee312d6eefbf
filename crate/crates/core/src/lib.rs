//! SLE laboratory: a stochastic Löwner-evolution simulator and an exact
//! Virasoro/Kac algebra engine that derive the same scaling exponents by
//! independent routes, plus the cross-checks tying them together.
//!
//! Layering (no cycles): `kac` is pure exact-rational arithmetic, `virasoro`
//! builds descendant algebra on top of it, `loewner` is the numerical map
//! engine, `montecarlo` drives `loewner` statistically, `multi` combines the
//! numerics with `kac`/`virasoro` data, and `cli` wraps everything.

pub mod cli;
pub mod fitting;
pub mod kac;
pub mod loewner;
pub mod montecarlo;
pub mod multi;
pub mod virasoro;

/// Exact rational scalar used by every algebraic module.
pub type Rational = num::BigRational;

/// Convenience constructor for small rationals.
///
/// Panics on d = 0; callers only use literal denominators.
pub fn ratio(n: i64, d: i64) -> Rational {
    use num::BigInt;
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// Integer as a rational.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(num::BigInt::from(n))
}
