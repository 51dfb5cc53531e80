use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::classifier::{predict_proba, FoldCheckpoint};
use crate::dataset::Manifest;
use crate::error::{ensure, Error, Result};
use crate::metrics::{ensemble_average, MetricsReport, ScoredSet};
use crate::{fsutil, imageio};

/// Attached to results on directories tagged `preliminary`.
pub const PRELIMINARY_NOTE: &str =
    "preliminary test set: a small functionality check, not predictive of final performance";

pub const PREDICTIONS_HEADER: &str = "id,probability,label";

/// Decision rule: a probability at or above the threshold is atypical.
pub fn predicted_label(probability: f64, threshold: f64) -> u8 {
    u8::from(probability >= threshold)
}

/// How the per-image probability was formed.
pub fn ensemble_mode(n_checkpoints: usize) -> String {
    if n_checkpoints == 1 {
        "single".into()
    } else {
        format!("ensemble_mean_of_{n_checkpoints}")
    }
}

fn check_family(checkpoints: &[FoldCheckpoint]) -> Result<()> {
    ensure!(!checkpoints.is_empty(), "no checkpoints given");
    let family = checkpoints[0].backbone.family;
    ensure!(
        checkpoints.iter().all(|c| c.backbone.family == family),
        "checkpoints mix backbone families"
    );
    Ok(())
}

/// Mean atypical probability over `checkpoints` for each image.
pub fn ensemble_proba(checkpoints: &[FoldCheckpoint], images: &[RgbImage]) -> Result<Vec<f64>> {
    check_family(checkpoints)?;
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let per_model = checkpoints
        .iter()
        .map(|c| predict_proba(c, images))
        .collect::<Result<Vec<_>>>()?;
    ensemble_average(&per_model)
}

/// Result of [`package_submission`].
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub predictions_path: PathBuf,
    pub n_images: usize,
    /// `(id, message)` for images that could not be scored.
    pub errors: Vec<(String, String)>,
}

/// Image files directly inside `dir`, keyed by file stem.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else {
            continue;
        };
        if stem.starts_with('.') {
            continue;
        }
        ensure!(
            !stem.contains(',') && !stem.contains('\n'),
            "{}: file name cannot be used as an id",
            path.display()
        );
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::invalid(format!(
                "duplicate id {stem:?}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    ensure!(!out.is_empty(), "{} contains no images", dir.display());
    Ok(out)
}

/// Scores every image in `input_dir` with the mean probability of
/// `checkpoints` and writes `predictions.csv` and `submission.json` into
/// `out_dir`.
///
/// Rows are sorted by id. An image that cannot be read gets an `id,,` row
/// and an entry in `errors.csv`; the rest of the directory is still scored.
pub fn package_submission(
    checkpoints: &[FoldCheckpoint],
    input_dir: &Path,
    threshold: f64,
    out_dir: &Path,
    tag: Option<&str>,
) -> Result<Submission> {
    check_family(checkpoints)?;
    ensure!((0.0..=1.0).contains(&threshold), "threshold must lie in [0, 1]");
    let files = list_images(input_dir)?;
    let mut ok_ids = Vec::new();
    let mut images = Vec::new();
    let mut errors = Vec::new();
    for (id, path) in &files {
        match imageio::read_patch(path) {
            Ok(img) => {
                ok_ids.push(id.as_str());
                images.push(img);
            }
            Err(e) => errors.push((id.clone(), e.to_string())),
        }
    }
    let probs = ensemble_proba(checkpoints, &images)?;
    let scored: BTreeMap<&str, f64> = ok_ids.into_iter().zip(probs).collect();

    let mut text = format!("{PREDICTIONS_HEADER}\n");
    for id in files.keys() {
        match scored.get(id.as_str()) {
            Some(p) => text.push_str(&format!("{id},{p:.6},{}\n", predicted_label(*p, threshold))),
            None => text.push_str(&format!("{id},,\n")),
        }
    }
    fsutil::create_dir(out_dir)?;
    let predictions_path = out_dir.join("predictions.csv");
    fsutil::write_atomic(&predictions_path, text.as_bytes())?;

    let errors_path = out_dir.join("errors.csv");
    if errors.is_empty() {
        if errors_path.exists() {
            std::fs::remove_file(&errors_path).map_err(|e| Error::io(&errors_path, e))?;
        }
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "error"]).expect("in-memory write");
        for (id, msg) in &errors {
            w.write_record([id, msg]).expect("in-memory write");
        }
        fsutil::write_atomic(&errors_path, &w.into_inner().expect("in-memory flush"))?;
    }

    let mut meta = serde_json::json!({
        "mode": ensemble_mode(checkpoints.len()),
        "family": checkpoints[0].backbone.family.as_str(),
        "folds": checkpoints.iter().map(|c| c.fold).collect::<Vec<_>>(),
        "threshold": threshold,
        "images": files.len(),
        "errors": errors.len(),
        "tag": tag,
    });
    if tag == Some("preliminary") {
        meta["note"] = PRELIMINARY_NOTE.into();
    }
    fsutil::write_atomic(
        &out_dir.join("submission.json"),
        format!("{}\n", serde_json::to_string_pretty(&meta).unwrap()).as_bytes(),
    )?;
    Ok(Submission {
        predictions_path,
        n_images: files.len(),
        errors,
    })
}

/// Metrics of the `checkpoints` ensemble on a labeled manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mode: String,
    pub report: MetricsReport,
    pub note: Option<&'static str>,
}

pub fn evaluate_labeled(
    checkpoints: &[FoldCheckpoint],
    manifest: &Manifest,
    threshold: f64,
    tag: Option<&str>,
) -> Result<Evaluation> {
    check_family(checkpoints)?;
    let images = manifest
        .records()
        .iter()
        .map(|r| imageio::read_patch(&r.image_ref))
        .collect::<Result<Vec<_>>>()?;
    let probs = ensemble_proba(checkpoints, &images)?;
    let labels = manifest.records().iter().map(|r| r.label.index() as u8).collect();
    Ok(Evaluation {
        mode: ensemble_mode(checkpoints.len()),
        report: MetricsReport::evaluate(&ScoredSet::new(probs, labels)?, threshold)?,
        note: (tag == Some("preliminary")).then_some(PRELIMINARY_NOTE),
    })
}

impl Evaluation {
    pub fn render(&self) -> String {
        let mut out = format!("mode,{}\n", self.mode);
        out.push_str(self.report.to_record().trim_start_matches("key,value\n"));
        if let Some(n) = self.note {
            out.push_str(&format!("note,{n}\n"));
        }
        out
    }
}
