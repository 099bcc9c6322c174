//! Extended real values for quantities that may be `-∞`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A real number or negative infinity.
///
/// Spectral potentials of nilpotent operators, entropies of non-invariant
/// measures and logarithms of zero probabilities are all `-∞`. They are kept
/// as an explicit variant instead of `f64::NEG_INFINITY` so that no
/// arithmetic silently runs on the sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    NegInfinity,
}

impl ExtReal {
    pub fn from_log(x: f64) -> Self {
        if x == f64::NEG_INFINITY {
            ExtReal::NegInfinity
        } else {
            ExtReal::Finite(x)
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::NegInfinity => None,
        }
    }

    /// Lossy conversion for plotting and tables.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(x) => x,
            ExtReal::NegInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn add(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::NegInfinity,
        }
    }

    pub fn add_f64(self, c: f64) -> ExtReal {
        match self {
            ExtReal::Finite(a) => ExtReal::Finite(a + c),
            ExtReal::NegInfinity => ExtReal::NegInfinity,
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a.max(b)),
            (ExtReal::NegInfinity, x) | (x, ExtReal::NegInfinity) => x,
        }
    }

    /// `self <= other` in the extended order.
    pub fn le(self, other: ExtReal) -> bool {
        match (self, other) {
            (ExtReal::NegInfinity, _) => true,
            (ExtReal::Finite(_), ExtReal::NegInfinity) => false,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a <= b,
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => {
                if let Some(p) = f.precision() {
                    write!(f, "{x:.p$}")
                } else {
                    write!(f, "{x}")
                }
            }
            ExtReal::NegInfinity => f.write_str("-inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => s.serialize_f64(*x),
            ExtReal::NegInfinity => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(ExtReal::Finite(x)),
            Repr::Text(t) if t == "-inf" => Ok(ExtReal::NegInfinity),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"-inf\", found {t:?}"
            ))),
        }
    }
}
