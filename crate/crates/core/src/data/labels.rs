//! The fixed label universe: ten binary attributes and six exclusive shape
//! classes, with "no nucleus" belonging to both groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_ATTRIBUTES: usize = 10;
pub const N_SHAPES: usize = 6;
/// Distinct labels once the shared "no nucleus" label is counted once.
pub const N_CLASSES: usize = 15;
/// Position of "no nucleus" among the attributes.
pub const NO_NUCLEUS_ATTR: usize = 9;

/// Attribute column names, in manifest order.
pub const ATTRIBUTE_KEYS: [&str; N_ATTRIBUTES] = [
    "halo",
    "gemistocyte",
    "nucleoli",
    "grooved",
    "hyperchromasia",
    "overlapping",
    "multinucleation",
    "mitosis",
    "apoptosis",
    "no_nucleus",
];

pub const ATTRIBUTE_TITLES: [&str; N_ATTRIBUTES] = [
    "Perinuclear Halos",
    "Gemistocyte",
    "Nucleoli",
    "Grooved",
    "Hyperchromasia",
    "Overlapping Nuclei",
    "Multinucleation",
    "Mitosis",
    "Apoptosis",
    "No Nucleus",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Oval,
    CloseRound,
    Round,
    Elongated,
    Irregular,
    NoNucleus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; N_SHAPES] = [
        ShapeClass::Oval,
        ShapeClass::CloseRound,
        ShapeClass::Round,
        ShapeClass::Elongated,
        ShapeClass::Irregular,
        ShapeClass::NoNucleus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            ShapeClass::Oval => "oval",
            ShapeClass::CloseRound => "close_round",
            ShapeClass::Round => "round",
            ShapeClass::Elongated => "elongated",
            ShapeClass::Irregular => "irregular",
            ShapeClass::NoNucleus => "no_nucleus",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ShapeClass::Oval => "Oval",
            ShapeClass::CloseRound => "Close to Round",
            ShapeClass::Round => "Round",
            ShapeClass::Elongated => "Elongated",
            ShapeClass::Irregular => "Irregular",
            ShapeClass::NoNucleus => "No Nucleus",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.key() == s)
            .ok_or_else(|| Error::Data(format!("unknown shape class '{s}'")))
    }
}

/// Ground truth for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    pub attributes: [bool; N_ATTRIBUTES],
    pub shape: ShapeClass,
}

impl LabelVector {
    pub fn no_nucleus() -> Self {
        let mut attributes = [false; N_ATTRIBUTES];
        attributes[NO_NUCLEUS_ATTR] = true;
        LabelVector {
            attributes,
            shape: ShapeClass::NoNucleus,
        }
    }

    /// The shared label must agree between the two groups.
    pub fn validate(&self) -> Result<()> {
        let flag = self.attributes[NO_NUCLEUS_ATTR];
        let shape = self.shape == ShapeClass::NoNucleus;
        if flag != shape {
            return Err(Error::Data(format!(
                "no_nucleus flag is {} but shape is {}",
                flag as u8, self.shape
            )));
        }
        Ok(())
    }

    /// Membership in each of the 15 distinct classes (10 attributes, then
    /// the five nucleus shapes).
    pub fn class_truths(&self) -> [bool; N_CLASSES] {
        let mut out = [false; N_CLASSES];
        out[..N_ATTRIBUTES].copy_from_slice(&self.attributes);
        if self.shape != ShapeClass::NoNucleus {
            out[N_ATTRIBUTES + self.shape.index()] = true;
        }
        out
    }

    /// Flat sigmoid targets: the 15 distinct labels.
    pub fn flat_targets(&self) -> [f64; N_CLASSES] {
        self.class_truths().map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn attribute_targets(&self) -> [f64; N_ATTRIBUTES] {
        self.attributes.map(|b| if b { 1.0 } else { 0.0 })
    }
}

/// Titles of the 15 distinct classes in report order.
pub fn class_titles() -> Vec<&'static str> {
    ATTRIBUTE_TITLES
        .iter()
        .copied()
        .chain(ShapeClass::ALL[..5].iter().map(|s| s.title()))
        .collect()
}

/// File-friendly keys of the 15 distinct classes in report order.
pub fn class_keys() -> Vec<&'static str> {
    ATTRIBUTE_KEYS
        .iter()
        .copied()
        .chain(ShapeClass::ALL[..5].iter().map(|s| s.key()))
        .collect()
}

/// Whether class `i` (report order) is one of the five nucleus shapes.
pub fn is_shape_class(i: usize) -> bool {
    (N_ATTRIBUTES..N_CLASSES).contains(&i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_label_consistency() {
        assert!(LabelVector::no_nucleus().validate().is_ok());
        let mut bad = LabelVector::no_nucleus();
        bad.shape = ShapeClass::Round;
        assert!(bad.validate().is_err());
        let mut bad = LabelVector::no_nucleus();
        bad.attributes[NO_NUCLEUS_ATTR] = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn class_layout() {
        assert_eq!(class_titles().len(), N_CLASSES);
        let mut l = LabelVector {
            attributes: [false; N_ATTRIBUTES],
            shape: ShapeClass::Elongated,
        };
        l.attributes[4] = true;
        let t = l.class_truths();
        assert!(t[4] && t[13]);
        assert_eq!(t.iter().filter(|&&b| b).count(), 2);
        let n = LabelVector::no_nucleus().class_truths();
        assert_eq!(n.iter().filter(|&&b| b).count(), 1);
        assert!(n[NO_NUCLEUS_ATTR]);
    }
}
