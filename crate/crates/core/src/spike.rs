use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Time of a neuron's single spike, or [`SpikeTime::NEVER`] if it stays silent.
///
/// `NEVER` is stored as positive infinity so that ordering and `min` behave
/// naturally: a silent neuron loses to any neuron that fires. It is written as
/// the string `"never"` in every serialized form.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SpikeTime(f64);

impl SpikeTime {
    pub const NEVER: SpikeTime = SpikeTime(f64::INFINITY);

    /// # Panics
    /// If `t` is NaN or infinite.
    pub fn at(t: f64) -> Self {
        assert!(t.is_finite(), "spike time must be finite, got {t}");
        SpikeTime(t)
    }

    /// `t` if finite, otherwise `NEVER`.
    pub fn from_f64(t: f64) -> Self {
        if t.is_finite() {
            SpikeTime(t)
        } else {
            Self::NEVER
        }
    }

    pub fn is_never(self) -> bool {
        self.0 == f64::INFINITY
    }

    pub fn time(self) -> Option<f64> {
        if self.is_never() {
            None
        } else {
            Some(self.0)
        }
    }

    /// Raw value; `f64::INFINITY` for `NEVER`.
    pub fn as_f64(self) -> f64 {
        self.0
    }
}

impl fmt::Debug for SpikeTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SpikeTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.time() {
            Some(t) => write!(f, "{t}"),
            None => f.write_str("never"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid spike time {0:?}")]
pub struct ParseSpikeTimeError(String);

impl FromStr for SpikeTime {
    type Err = ParseSpikeTimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("never") {
            return Ok(Self::NEVER);
        }
        match s.parse::<f64>() {
            Ok(t) if t.is_finite() => Ok(SpikeTime(t)),
            _ => Err(ParseSpikeTimeError(s.to_string())),
        }
    }
}

impl Serialize for SpikeTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.time() {
            Some(t) => s.serialize_f64(t),
            None => s.serialize_str("never"),
        }
    }
}

impl<'de> Deserialize<'de> for SpikeTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SpikeTimeVisitor;

        impl Visitor<'_> for SpikeTimeVisitor {
            type Value = SpikeTime;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or the string \"never\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SpikeTime, E> {
                if v.is_finite() {
                    Ok(SpikeTime(v))
                } else {
                    Err(E::custom("non-finite spike time"))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SpikeTime, E> {
                Ok(SpikeTime(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SpikeTime, E> {
                Ok(SpikeTime(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<SpikeTime, E> {
                v.parse().map_err(E::custom)
            }
        }

        d.deserialize_any(SpikeTimeVisitor)
    }
}
