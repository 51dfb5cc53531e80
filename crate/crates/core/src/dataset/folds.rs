use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Label, Manifest};
use crate::error::{ensure, Error, Result};
use crate::seed;

/// Assignment of every real record to one of `k` validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Seed the plan was drawn with; `None` for plans read back from disk.
    pub seed: Option<u64>,
    /// `(id, fold)` in manifest order.
    assignment: Vec<(String, usize)>,
    index: HashMap<String, usize>,
}

impl FoldPlan {
    pub fn from_assignment(k: usize, seed: Option<u64>, assignment: Vec<(String, usize)>) -> Result<Self> {
        ensure!(k >= 2, "fold count must be at least 2, got {k}");
        let mut index = HashMap::with_capacity(assignment.len());
        for (id, fold) in &assignment {
            ensure!(*fold < k, "fold {fold} out of range for k = {k}");
            ensure!(index.insert(id.clone(), *fold).is_none(), "id {id:?} assigned twice");
        }
        Ok(Self {
            k,
            seed,
            assignment,
            index,
        })
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn assignment(&self) -> &[(String, usize)] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn validation_ids(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, f)| *f == fold)
            .map(|(id, _)| id.as_str())
    }

    /// Checks that the plan covers exactly the real records of `manifest`.
    pub fn check_against(&self, manifest: &Manifest) -> Result<()> {
        let mut n_real = 0;
        for r in manifest.records().iter().filter(|r| r.is_real()) {
            n_real += 1;
            ensure!(
                self.index.contains_key(&r.id),
                "fold plan has no assignment for record {:?}",
                r.id
            );
        }
        ensure!(
            n_real == self.len(),
            "fold plan assigns {} ids but the manifest has {n_real} real records",
            self.len()
        );
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,fold\n");
        for (id, fold) in &self.assignment {
            out.push_str(&format!("{id},{fold}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, self.to_csv().as_bytes())
    }

    /// Reads an `id,fold` file; `k` is the number of distinct folds.
    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::fsutil::read_to_string(path)?;
        let mut lines = text.lines();
        ensure!(
            lines.next().map(str::trim) == Some("id,fold"),
            "{}: fold plan header must be `id,fold`",
            path.display()
        );
        let mut assignment = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (id, fold) = line
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("fold plan line {}: {line:?}", i + 2)))?;
            let fold = fold
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("fold plan line {}: bad fold {fold:?}", i + 2)))?;
            assignment.push((id.trim().to_string(), fold));
        }
        let k = assignment.iter().map(|(_, f)| f + 1).max().unwrap_or(0);
        Self::from_assignment(k, None, assignment)
    }
}

/// Label-stratified k-fold assignment.
///
/// Each class is shuffled with a seeded permutation and dealt round-robin;
/// the negative deal continues where the positive deal stopped so fold
/// totals also differ by at most one.
pub fn stratified_kfold(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    ensure!(k >= 2, "fold count must be at least 2, got {k}");
    ensure!(
        manifest.records().iter().all(|r| r.is_real()),
        "fold planning takes real records only"
    );
    let mut rng = seed::rng(seed::derive(seed, "kfold", k as u64));
    let mut folds = vec![0usize; manifest.len()];
    let mut offset = 0;
    for label in [Label::Atypical, Label::Normal] {
        let mut members: Vec<usize> = manifest
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        ensure!(
            members.len() >= k,
            "class {label} has {} members, fewer than k = {k}",
            members.len()
        );
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = (pos + offset) % k;
        }
        offset = (offset + members.len()) % k;
    }
    let assignment = manifest
        .records()
        .iter()
        .zip(folds)
        .map(|(r, f)| (r.id.clone(), f))
        .collect();
    FoldPlan::from_assignment(k, Some(seed), assignment)
}
