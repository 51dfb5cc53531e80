//! Patch manifests, stratified fold plans, and per-fold train/validation views.

mod folds;
mod manifest;
mod view;

pub use folds::{stratified_kfold, FoldPlan};
pub use manifest::{load_manifest, load_manifest_unchecked, Manifest};
pub use view::{training_view, MixPolicy, Regime, TrainingView};

use std::fmt;
use std::path::PathBuf;

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal = 0,
    Atypical = 1,
}

impl Label {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "normal" => Ok(Label::Normal),
            "atypical" => Ok(Label::Atypical),
            other => Err(Error::invalid(format!("unknown label token {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Atypical => "atypical",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Atypical),
            _ => Err(Error::invalid(format!("label index {i} not in {{0, 1}}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
}

impl Provenance {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "real" => Ok(Provenance::Real),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(Error::invalid(format!("unknown provenance {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        }
    }
}

/// One labeled 128x128 RGB crop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRecord {
    pub id: String,
    pub image_ref: PathBuf,
    pub label: Label,
    /// Tumor type / species / scanner / lab combination. Carried for reporting only.
    pub domain: String,
    pub provenance: Provenance,
    /// Fold whose generator produced this record. Synthetic records only.
    pub origin_fold: Option<usize>,
}

impl PatchRecord {
    pub fn real(id: impl Into<String>, image_ref: impl Into<PathBuf>, label: Label, domain: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_ref: image_ref.into(),
            label,
            domain: domain.into(),
            provenance: Provenance::Real,
            origin_fold: None,
        }
    }

    pub fn synthetic(
        id: impl Into<String>,
        image_ref: impl Into<PathBuf>,
        label: Label,
        origin_fold: usize,
    ) -> Self {
        Self {
            id: id.into(),
            image_ref: image_ref.into(),
            label,
            domain: "synthetic".into(),
            provenance: Provenance::Synthetic,
            origin_fold: Some(origin_fold),
        }
    }

    pub fn is_real(&self) -> bool {
        self.provenance == Provenance::Real
    }

    pub(crate) fn validate(&self) -> Result<()> {
        ensure!(!self.id.is_empty(), "record with empty id");
        ensure!(
            !self.id.contains(',') && !self.id.contains('\n'),
            "record id {:?} contains a delimiter",
            self.id
        );
        match (self.provenance, self.origin_fold) {
            (Provenance::Synthetic, None) => Err(Error::invalid(format!(
                "synthetic record {} has no origin_fold",
                self.id
            ))),
            (Provenance::Real, Some(_)) => Err(Error::invalid(format!(
                "real record {} carries an origin_fold",
                self.id
            ))),
            _ => Ok(()),
        }
    }
}

/// Class balance of a record set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCounts {
    pub n_neg: usize,
    pub n_pos: usize,
    pub prevalence: f64,
}

pub fn class_counts(set: &Manifest) -> Result<ClassCounts> {
    ensure!(!set.is_empty(), "class counts of an empty set");
    let n_pos = set.count_label(Label::Atypical);
    let n_neg = set.count_label(Label::Normal);
    Ok(ClassCounts {
        n_neg,
        n_pos,
        prevalence: n_pos as f64 / (n_pos + n_neg) as f64,
    })
}
