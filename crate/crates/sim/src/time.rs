//! Virtual time as integer ticks.
//!
//! One virtual time unit is 1,000,000 ticks, so any decimal with at most six
//! fractional digits converts exactly. All engine arithmetic is on integer
//! ticks; floats never touch ordering decisions, which keeps runs
//! reproducible across platforms.

use churnstore_protocol::params::{rat_from_decimal, Rat};
use num::{BigInt, ToPrimitive};
use thiserror::Error;

pub const TICKS_PER_UNIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid time {literal:?}: {reason}")]
pub struct TimeError {
    pub literal: String,
    pub reason: String,
}

fn err(literal: &str, reason: &str) -> TimeError {
    TimeError { literal: literal.to_string(), reason: reason.to_string() }
}

/// Exact conversion of a nonnegative decimal literal to ticks. Rejects
/// values finer than one tick and values that do not fit in u64.
pub fn ticks_from_decimal(s: &str) -> Result<u64, TimeError> {
    let r = rat_from_decimal(s).map_err(|e| err(s, &e.to_string()))?;
    ticks_from_rat(&r).map_err(|reason| err(s, &reason))
}

/// Exact conversion of a nonnegative rational number of time units to ticks.
pub fn ticks_from_rat(r: &Rat) -> Result<u64, String> {
    let scaled = r * Rat::from_integer(BigInt::from(TICKS_PER_UNIT));
    if !scaled.is_integer() {
        return Err(format!("time is finer than 1/{TICKS_PER_UNIT} of a unit"));
    }
    scaled
        .to_integer()
        .to_u64()
        .ok_or_else(|| "time is negative or too large".to_string())
}

/// Renders ticks as a decimal number of units, trailing zeros trimmed.
pub fn ticks_to_decimal(ticks: u64) -> String {
    let whole = ticks / TICKS_PER_UNIT;
    let frac = ticks % TICKS_PER_UNIT;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:06}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_exactness() {
        for (lit, ticks) in [
            ("0", 0),
            ("1", TICKS_PER_UNIT),
            ("12.5", 12_500_000),
            ("0.000001", 1),
            ("3.000001", 3_000_001),
            ("2.25", 2_250_000),
        ] {
            assert_eq!(ticks_from_decimal(lit).unwrap(), ticks, "{lit}");
            assert_eq!(
                ticks_from_decimal(&ticks_to_decimal(ticks)).unwrap(),
                ticks,
                "{lit} round trip"
            );
        }
        assert_eq!(ticks_to_decimal(12_500_000), "12.5");
        assert_eq!(ticks_to_decimal(3_000_001), "3.000001");
        assert_eq!(ticks_to_decimal(0), "0");
    }

    #[test]
    fn rejects_sub_tick_and_negative() {
        assert!(ticks_from_decimal("0.0000001").is_err());
        assert!(ticks_from_decimal("-1").is_err());
        assert!(ticks_from_decimal("bogus").is_err());
    }
}
