//! Exact sentence-count ratios.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A ratio of two sentence counts, kept unreduced so the counts it was
/// built from stay visible in serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u32,
    den: u32,
}

impl Ratio {
    /// Returns `None` when `den == 0` or `num > den`.
    pub fn new(num: u32, den: u32) -> Option<Self> {
        (den > 0 && num <= den).then_some(Self { num, den })
    }

    pub const ONE: Ratio = Ratio { num: 1, den: 1 };
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    /// Compares by value, so `1/2` and `2/4` are equal here although
    /// they are distinct as counts.
    pub fn cmp_value(self, other: Ratio) -> Ordering {
        (u64::from(self.num) * u64::from(other.den)).cmp(&(u64::from(other.num) * u64::from(self.den)))
    }

    pub fn to_big(self) -> BigRational {
        BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }
}


impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Serialize, Deserialize)]
struct RatioRepr {
    num: u32,
    den: u32,
    value: f64,
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RatioRepr { num: self.num, den: self.den, value: self.value() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RatioRepr::deserialize(deserializer)?;
        Ratio::new(repr.num, repr.den).ok_or_else(|| {
            serde::de::Error::custom(format!("invalid ratio {}/{}", repr.num, repr.den))
        })
    }
}

/// Exact mean of a sequence of ratios, converted to a percentage rounded
/// half away from zero to two decimals. `None` for an empty sequence.
pub fn mean_percent<I: IntoIterator<Item = Ratio>>(values: I) -> Option<f64> {
    let mut sum = BigRational::zero();
    let mut count = 0u64;
    for v in values {
        sum += v.to_big();
        count += 1;
    }
    if count == 0 {
        return None;
    }
    let hundredths = sum * BigRational::from_integer(BigInt::from(10_000)) / BigRational::from_integer(BigInt::from(count));
    let rounded = hundredths.round();
    rounded.to_integer().to_f64().map(|h| h / 100.0)
}
