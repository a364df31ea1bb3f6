//! Exact-rational protocol parameters and threshold arithmetic.
//!
//! Thresholds compare an integer message counter against a rational
//! fraction of a set size (`gamma * |Present|`, `beta * |Members|`).
//! Several published parameter choices sit exactly on constraint
//! boundaries, so all comparisons are done in exact arithmetic; floats
//! would flip verdicts at those points.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

use std::str::FromStr;

/// Exact rational used for all parameter math.
pub type Rat = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid decimal literal {literal:?}: {reason}")]
pub struct ParseRatError {
    pub literal: String,
    pub reason: &'static str,
}

/// Parses a decimal literal (`-12`, `0.79`, `1.25e-3`) into an exact rational.
///
/// JSON numbers are parsed through this so that `0.79` means exactly 79/100,
/// not the nearest double.
pub fn rat_from_decimal(s: &str) -> Result<Rat, ParseRatError> {
    let err = |reason: &'static str| ParseRatError {
        literal: s.to_owned(),
        reason,
    };
    let (mantissa, exp10) = split_exponent(s).ok_or_else(|| err("malformed exponent"))?;
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let (sign, int_digits) = match int_part.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, int_part.strip_prefix('+').unwrap_or(int_part)),
    };
    if int_digits.is_empty() && frac_part.is_empty() {
        return Err(err("no digits"));
    }
    if !int_digits.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(err("non-digit character"));
    }
    let digits = format!("{int_digits}{frac_part}");
    let unsigned = BigInt::from_str(if digits.is_empty() { "0" } else { &digits })
        .map_err(|_| err("digit parse"))?;
    let numer = if sign < 0 { -unsigned } else { unsigned };
    let scale = exp10 - frac_part.len() as i64;
    let ten = BigInt::from(10);
    let rat = if scale >= 0 {
        Rat::from_integer(numer * ten.pow(scale as u32))
    } else {
        Rat::new(numer, ten.pow((-scale) as u32))
    };
    Ok(rat)
}

fn split_exponent(s: &str) -> Option<(&str, i64)> {
    match s.find(['e', 'E']) {
        None => Some((s, 0)),
        Some(i) => {
            let exp: i64 = s[i + 1..].parse().ok()?;
            Some((&s[..i], exp))
        }
    }
}

/// Renders a rational as an exact decimal string when the denominator is a
/// product of 2s and 5s, and as `numer/denom` otherwise.
pub fn rat_to_string(r: &Rat) -> String {
    if let Some(s) = rat_to_decimal(r) {
        s
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Exact terminating-decimal rendering, if one exists.
pub fn rat_to_decimal(r: &Rat) -> Option<String> {
    let mut den = r.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return None;
    }
    let shift = twos.max(fives);
    let scaled = (r.numer() * BigInt::from(10).pow(shift) / r.denom()).abs();
    let digits = scaled.to_string();
    let sign = if r.numer().is_negative() { "-" } else { "" };
    let s = if shift == 0 {
        digits
    } else {
        let shift = shift as usize;
        let padded = format!("{digits:0>width$}", width = shift + 1);
        let split = padded.len() - shift;
        let frac = padded[split..].trim_end_matches('0');
        if frac.is_empty() {
            padded[..split].to_owned()
        } else {
            format!("{}.{}", &padded[..split], frac)
        }
    };
    Some(format!("{sign}{s}"))
}

/// Closest `f64` to a rational, for reporting only (never for comparisons).
pub fn rat_to_f64(r: &Rat) -> f64 {
    let digits = 17i64;
    let scale = BigInt::from(10).pow(digits as u32);
    let scaled = (r.numer() * &scale) / r.denom();
    let approx: f64 = scaled.to_string().parse().unwrap_or(f64::NAN);
    approx / 1e17
}

/// The parameter subset visible to protocol code.
///
/// The full model also fixes a minimum system size and a message-delay bound,
/// but nodes must never read those; they are deliberately absent here and
/// live in the simulator's configuration instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolParams {
    pub alpha: Rat,
    pub delta: Rat,
    pub gamma: Rat,
    pub beta: Rat,
}

impl ProtocolParams {
    pub fn new(alpha: Rat, delta: Rat, gamma: Rat, beta: Rat) -> Self {
        Self {
            alpha,
            delta,
            gamma,
            beta,
        }
    }
}

/// Join threshold: `gamma * |Present|`, set once when the first echo from a
/// joined node arrives.
pub fn join_threshold(gamma: &Rat, present: usize) -> Rat {
    gamma * Rat::from_integer(BigInt::from(present))
}

/// Phase threshold: `beta * |Members|`, floored at 1 so a phase can never
/// complete with zero acknowledgments even in degenerate configurations.
pub fn phase_threshold(beta: &Rat, members: usize) -> Rat {
    let raw = beta * Rat::from_integer(BigInt::from(members));
    let one = Rat::one();
    if raw < one {
        one
    } else {
        raw
    }
}

/// Integer counter vs rational threshold.
pub fn counter_meets(counter: u64, threshold: &Rat) -> bool {
    &Rat::from_integer(BigInt::from(counter)) >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(s: &str) -> Rat {
        rat_from_decimal(s).unwrap()
    }

    #[test]
    fn decimal_parse_exact() {
        assert_eq!(rat("0.79"), Rat::new(BigInt::from(79), BigInt::from(100)));
        assert_eq!(rat("1"), Rat::from_integer(BigInt::from(1)));
        assert_eq!(rat("-2.5"), Rat::new(BigInt::from(-5), BigInt::from(2)));
        assert_eq!(rat("1.25e-2"), Rat::new(BigInt::from(1), BigInt::from(80)));
        assert_eq!(rat("3e2"), Rat::from_integer(BigInt::from(300)));
        assert_eq!(rat("0.0"), Rat::zero());
    }

    #[test]
    fn decimal_parse_rejects_garbage() {
        assert!(rat_from_decimal("").is_err());
        assert!(rat_from_decimal("abc").is_err());
        assert!(rat_from_decimal("1.2.3").is_err());
        assert!(rat_from_decimal("1e").is_err());
    }

    #[test]
    fn decimal_render_round_trips() {
        for s in ["0.79", "1", "-2.5", "0.87348736", "0"] {
            assert_eq!(rat_to_string(&rat(s)), s);
        }
        assert_eq!(rat_to_string(&Rat::new(BigInt::from(1), BigInt::from(3))), "1/3");
    }

    #[test]
    fn join_threshold_examples() {
        // gamma = 0.79, |Present| = 10 -> exactly 7.9; a counter of 8 meets
        // it and a counter of 7 does not.
        let th = join_threshold(&rat("0.79"), 10);
        assert_eq!(th, rat("7.9"));
        assert!(!counter_meets(7, &th));
        assert!(counter_meets(8, &th));
    }

    #[test]
    fn phase_threshold_examples() {
        // beta = 0.79, |Members| = 3 -> exactly 2.37.
        let th = phase_threshold(&rat("0.79"), 3);
        assert_eq!(th, rat("2.37"));
        assert!(!counter_meets(2, &th));
        assert!(counter_meets(3, &th));
        // Degenerate membership floors at 1.
        assert_eq!(phase_threshold(&rat("0.79"), 0), Rat::one());
        assert_eq!(phase_threshold(&rat("0.5"), 1), Rat::one());
    }

    #[test]
    fn f64_report_close() {
        let z = rat("0.87348736");
        assert!((rat_to_f64(&z) - 0.87348736).abs() < 1e-12);
    }
}
