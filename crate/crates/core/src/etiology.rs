//! The six-way hemorrhage etiology taxonomy.
//!
//! The canonical index order is fixed everywhere: probability vectors,
//! CSV columns, confusion-matrix rows and report tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const CLASS_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Etiology {
    Aneurysm,
    Hypertensive,
    Avm,
    Mmd,
    Cm,
    Others,
}

impl Etiology {
    pub const ALL: [Etiology; CLASS_COUNT] = [
        Etiology::Aneurysm,
        Etiology::Hypertensive,
        Etiology::Avm,
        Etiology::Mmd,
        Etiology::Cm,
        Etiology::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Etiology> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase token used in manifests, CSVs and the HTTP API.
    pub fn token(self) -> &'static str {
        match self {
            Etiology::Aneurysm => "aneurysm",
            Etiology::Hypertensive => "hypertensive",
            Etiology::Avm => "avm",
            Etiology::Mmd => "mmd",
            Etiology::Cm => "cm",
            Etiology::Others => "others",
        }
    }

    /// Human-facing column title.
    pub fn display_name(self) -> &'static str {
        match self {
            Etiology::Aneurysm => "Aneurysm",
            Etiology::Hypertensive => "Hypertensive",
            Etiology::Avm => "AVM",
            Etiology::Mmd => "MMD",
            Etiology::Cm => "CM",
            Etiology::Others => "Others",
        }
    }

    /// The two majority classes train with the full triplet margin.
    pub fn is_main_class(self) -> bool {
        matches!(self, Etiology::Aneurysm | Etiology::Hypertensive)
    }
}

impl fmt::Display for Etiology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Etiology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.token() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Index of the largest entry; ties go to the lowest canonical index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
