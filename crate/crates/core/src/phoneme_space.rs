//! The universal phoneme space: the ordered union of per-language monophone
//! inventories. Column `i` of every posteriorgram refers to unit `i` here.
//!
//! Spaces are immutable; [`PhonemeSpace::extend`] returns a new space whose
//! existing units keep their indices.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Tolerance on posteriorgram row sums.
pub const ROW_SUM_TOL: f64 = 1e-5;

/// Silence symbol reserved in every synthetic inventory.
pub const SIL: &str = "sil";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhonemeUnit {
    pub language_id: String,
    pub symbol: String,
}

impl PhonemeUnit {
    pub fn new(language_id: impl Into<String>, symbol: impl Into<String>) -> Self {
        Self {
            language_id: language_id.into(),
            symbol: symbol.into(),
        }
    }
}

impl std::fmt::Display for PhonemeUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.language_id, self.symbol)
    }
}

/// One language's inventory in the order its units should appear.
pub type Inventory = (String, Vec<String>);

#[derive(Debug, Clone)]
pub struct PhonemeSpace {
    units: Vec<PhonemeUnit>,
    index: HashMap<PhonemeUnit, usize>,
    checksum: u64,
}

impl PartialEq for PhonemeSpace {
    fn eq(&self, other: &Self) -> bool {
        self.units == other.units
    }
}

impl Eq for PhonemeSpace {}

impl Default for PhonemeSpace {
    fn default() -> Self {
        Self::from_units(Vec::new()).expect("empty space is valid")
    }
}

impl PhonemeSpace {
    pub fn build(inventories: &[Inventory]) -> Result<Self> {
        inventories
            .iter()
            .try_fold(Self::default(), |space, inv| space.extend(inv))
    }

    /// Appends a new language. Existing indices are unchanged.
    pub fn extend(&self, (language, symbols): &Inventory) -> Result<Self> {
        if self.has_language(language) {
            return Err(Error::LanguageExists(language.clone()));
        }
        let mut units = self.units.clone();
        units.extend(symbols.iter().map(|s| PhonemeUnit::new(language.clone(), s.clone())));
        Self::from_units(units)
    }

    fn from_units(units: Vec<PhonemeUnit>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.clone(), i).is_some() {
                return Err(Error::DuplicateSymbol {
                    language: u.language_id.clone(),
                    symbol: u.symbol.clone(),
                });
            }
        }
        let checksum = fnv1a64(serialize(&units).as_bytes());
        Ok(Self {
            units,
            index,
            checksum,
        })
    }

    pub fn units(&self) -> &[PhonemeUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn has_language(&self, language: &str) -> bool {
        self.units.iter().any(|u| u.language_id == language)
    }

    /// Languages in first-appearance order.
    pub fn languages(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for u in &self.units {
            if out.last() != Some(&u.language_id.as_str()) && !out.contains(&u.language_id.as_str())
            {
                out.push(&u.language_id);
            }
        }
        out
    }

    pub fn index_of(&self, language: &str, symbol: &str) -> Result<usize> {
        self.index
            .get(&PhonemeUnit::new(language, symbol))
            .copied()
            .ok_or_else(|| Error::UnknownUnit {
                language: language.to_string(),
                symbol: symbol.to_string(),
            })
    }

    /// Column indices belonging to `language`.
    pub fn language_columns(&self, language: &str) -> Vec<usize> {
        (0..self.units.len())
            .filter(|&i| self.units[i].language_id == language)
            .collect()
    }

    /// The text file form: one `language<TAB>symbol` line per unit.
    pub fn to_text(&self) -> String {
        serialize(&self.units)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut units = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (lang, sym) = line.split_once('\t').ok_or_else(|| {
                Error::format("phoneme space", format!("line {}: expected TAB", n + 1))
            })?;
            if lang.is_empty() || sym.is_empty() || sym.contains('\t') {
                return Err(Error::format("phoneme space", format!("line {}: bad unit", n + 1)));
            }
            units.push(PhonemeUnit::new(lang, sym));
        }
        // Languages must be contiguous so that extension stays append-only.
        let mut seen: Vec<&str> = Vec::new();
        for u in &units {
            match seen.last() {
                Some(&l) if l == u.language_id => {}
                _ if seen.contains(&u.language_id.as_str()) => {
                    return Err(Error::format(
                        "phoneme space",
                        format!("language {} is not contiguous", u.language_id),
                    ))
                }
                _ => seen.push(&u.language_id),
            }
        }
        Self::from_units(units)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn serialize(units: &[PhonemeUnit]) -> String {
    units
        .iter()
        .map(|u| format!("{}\t{}\n", u.language_id, u.symbol))
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A row-stochastic `T x P` posteriorgram tied to a phoneme space.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppg {
    matrix: Array2<f64>,
    space_checksum: u64,
}

impl Ppg {
    pub fn new(matrix: Array2<f64>, space_checksum: u64) -> Result<Self> {
        for (t, row) in matrix.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidPpg(format!("frame {t}: entry {v} outside [0, 1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPpg(format!("frame {t}: row sums to {s}")));
            }
        }
        Ok(Self {
            matrix,
            space_checksum,
        })
    }

    /// Validates against a specific space, including the column count.
    pub fn for_space(matrix: Array2<f64>, space: &PhonemeSpace) -> Result<Self> {
        if matrix.ncols() != space.len() {
            return Err(Error::DimMismatch {
                expected: space.len(),
                found: matrix.ncols(),
            });
        }
        Self::new(matrix, space.checksum())
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn space_checksum(&self) -> u64 {
        self.space_checksum
    }

    pub fn frames(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| {
                (0..r.len())
                    .max_by(|&a, &b| r[a].total_cmp(&r[b]))
                    .unwrap_or(0)
            })
            .collect()
    }
}
