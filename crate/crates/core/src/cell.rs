//! Feature-map cell coordinates: turn count by curvature bin.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::road::RoadFeatures;

pub const DEFAULT_CURVATURE_BIN_WIDTH: f64 = 0.01;

/// Cell coordinate. Serialized as `"turns:curvbin"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub turns: u32,
    pub curvature_bin: u32,
}

impl CellKey {
    pub fn new(turns: u32, curvature_bin: u32) -> Self {
        CellKey {
            turns,
            curvature_bin,
        }
    }

    pub fn from_features(f: &RoadFeatures, bin_width: f64) -> Self {
        CellKey {
            turns: f.turn_count,
            curvature_bin: curvature_bin(f.curvature, bin_width),
        }
    }
}

/// Bin index of a curvature value. A small relative epsilon keeps values
/// like `0.3` (= 30 bins of 0.01) from landing one bin low.
pub fn curvature_bin(curvature: f64, bin_width: f64) -> u32 {
    let q = curvature / bin_width;
    (q + q.abs() * 1e-9).floor().max(0.0) as u32
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.turns, self.curvature_bin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed cell key {0:?}")]
pub struct ParseCellKeyError(String);

impl FromStr for CellKey {
    type Err = ParseCellKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseCellKeyError(s.to_string());
        let (a, b) = s.split_once(':').ok_or_else(err)?;
        Ok(CellKey {
            turns: a.parse().map_err(|_| err())?,
            curvature_bin: b.parse().map_err(|_| err())?,
        })
    }
}

impl Serialize for CellKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive axis bounds of a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub turns: (u32, u32),
    pub curvature_bin: (u32, u32),
}

impl Bounds {
    pub fn of(key: CellKey) -> Self {
        Bounds {
            turns: (key.turns, key.turns),
            curvature_bin: (key.curvature_bin, key.curvature_bin),
        }
    }

    pub fn include(&mut self, key: CellKey) {
        self.turns.0 = self.turns.0.min(key.turns);
        self.turns.1 = self.turns.1.max(key.turns);
        self.curvature_bin.0 = self.curvature_bin.0.min(key.curvature_bin);
        self.curvature_bin.1 = self.curvature_bin.1.max(key.curvature_bin);
    }

    pub fn union(self, other: Bounds) -> Bounds {
        Bounds {
            turns: (
                self.turns.0.min(other.turns.0),
                self.turns.1.max(other.turns.1),
            ),
            curvature_bin: (
                self.curvature_bin.0.min(other.curvature_bin.0),
                self.curvature_bin.1.max(other.curvature_bin.1),
            ),
        }
    }

    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a CellKey>) -> Option<Bounds> {
        let mut it = keys.into_iter();
        let mut b = Bounds::of(*it.next()?);
        for k in it {
            b.include(*k);
        }
        Some(b)
    }
}
