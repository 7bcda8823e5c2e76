use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary per-sensor mask. Bit `i` set means sensor `i` is kept.
///
/// Construction accepts any bit pattern; operations that need at least one
/// selected sensor check with [`SelectionVector::ensure_nonempty`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SelectionVector {
    bits: Vec<bool>,
}

impl SelectionVector {
    pub fn all(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn none(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::Shape(format!("sensor {i} out of range for {n} sensors")));
            }
            bits[i] = true;
        }
        Ok(Self { bits })
    }

    /// Parses a string of `0`/`1` characters, sensor 0 first.
    pub fn parse_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!("invalid selection bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Population count ||s||₀.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Copy with sensor `i` dropped.
    pub fn without(&self, i: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[i] = false;
        Self { bits }
    }

    /// Per-sensor multiplier: 1.0 where kept, 0.0 where masked.
    pub fn weights(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.count() == 0 {
            Err(Error::EmptySelection)
        } else {
            Ok(())
        }
    }

    pub fn ensure_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Shape(format!(
                "selection has {} entries, expected {n}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Stable 64-bit key of the bit pattern, used to derive per-subset seeds.
    pub fn key(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, (i, &b)| {
                (h ^ ((i as u64) << 1 | b as u64)).wrapping_mul(0x0100_0000_01b3)
            })
    }
}

impl fmt::Display for SelectionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

impl From<SelectionVector> for String {
    fn from(s: SelectionVector) -> String {
        s.bitstring()
    }
}

impl TryFrom<String> for SelectionVector {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse_bitstring(&s)
    }
}
