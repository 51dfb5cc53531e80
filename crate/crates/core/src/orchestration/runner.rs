use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::classifier::{
    default_norm, predict_proba, save_fold, train_fold, FoldCheckpoint, FoldSetup, RunLog, TrainedFold,
};
use crate::dataset::{load_manifest, stratified_kfold, training_view, FoldPlan, Manifest, Regime};
use crate::error::{ensure, Error, Result};
use crate::generator::fingerprint;
use crate::metrics::{aggregate_folds_with, FoldSummary, MetricsReport, ScoredSet};
use crate::{fsutil, imageio};

use super::config::ExperimentConfig;
use super::package::predicted_label;

static RUN_SEED: AtomicU64 = AtomicU64::new(0);

/// Records `seed` as the process-wide run seed.
///
/// Every random stream in the pipeline is an explicitly seeded ChaCha
/// generator derived from a run seed, and CPU kernels do not reorder
/// reductions between runs, so there is no hidden global state left to pin.
/// The value is kept for artifacts that want to stamp it.
pub fn set_determinism(seed: u64) {
    RUN_SEED.store(seed, Ordering::SeqCst);
}

/// Seed last passed to [`set_determinism`].
pub fn current_seed() -> u64 {
    RUN_SEED.load(Ordering::SeqCst)
}

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const COMPLETE_MARKER: &str = "COMPLETE";

/// Outputs of one validation fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub checkpoint: FoldCheckpoint,
    pub log: RunLog,
    pub report: MetricsReport,
    /// `(id, probability, label)` for every validation record, manifest order.
    pub predictions: Vec<(String, f64, u8)>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub snapshot: String,
    pub fingerprint: String,
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    /// One summary per metric key, in `MetricsReport::KEYS` order.
    pub summaries: Vec<(String, FoldSummary)>,
}

impl RunArtifacts {
    pub fn summary(&self, metric: &str) -> Option<&FoldSummary> {
        self.summaries.iter().find(|(k, _)| k == metric).map(|(_, s)| s)
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

fn fold_dir(dir: &Path, fold: usize) -> PathBuf {
    dir.join("folds").join(format!("fold_{fold}"))
}

fn summaries_of(reports: &[&MetricsReport], cfg: &ExperimentConfig) -> Result<Vec<(String, FoldSummary)>> {
    MetricsReport::KEYS
        .iter()
        .map(|key| {
            let values: Vec<f64> = reports.iter().map(|r| r.get(key).unwrap()).collect();
            Ok((key.to_string(), aggregate_folds_with(&values, cfg.sd_kind)?))
        })
        .collect()
}

fn summary_csv(summaries: &[(String, FoldSummary)], k: usize) -> String {
    let mut out = String::from("metric");
    for f in 0..k {
        out.push_str(&format!(",fold_{f}"));
    }
    out.push_str(",mean,sd\n");
    for (key, s) in summaries {
        out.push_str(key);
        for v in &s.values {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", s.mean, s.sd));
    }
    out
}

fn predictions_csv(rows: &[(String, f64, u8)], threshold: f64) -> String {
    let mut out = String::from("id,probability,predicted,label\n");
    for (id, p, label) in rows {
        out.push_str(&format!("{id},{p:.6},{},{label}\n", predicted_label(*p, threshold)));
    }
    out
}

fn run_fold(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    plan: &FoldPlan,
    pool: Option<&Manifest>,
    fold: usize,
    fp: &str,
) -> Result<FoldOutcome> {
    let view = training_view(manifest, plan, fold, &cfg.mix, pool, cfg.seed)?;
    let setup = FoldSetup {
        fold,
        spec: &cfg.backbone,
        config: &cfg.train,
        augment: &cfg.augment,
        norm: default_norm(cfg.backbone.family),
        seed: cfg.seed,
        fingerprint: fp.to_string(),
    };
    log::info!(
        "fold {fold}: {} training records ({} synthetic), {} validation",
        view.train.len(),
        view.train.records().iter().filter(|r| !r.is_real()).count(),
        view.val.len()
    );
    let TrainedFold { checkpoint, log } = train_fold(&view.train, &view.val, &setup)?;
    let images = view
        .val
        .records()
        .iter()
        .map(|r| imageio::read_patch(&r.image_ref))
        .collect::<Result<Vec<_>>>()?;
    let probs = predict_proba(&checkpoint, &images)?;
    let labels: Vec<u8> = view.val.records().iter().map(|r| r.label.index() as u8).collect();
    let report = MetricsReport::evaluate(&ScoredSet::new(probs.clone(), labels.clone())?, cfg.threshold)?;
    let predictions = view
        .val
        .records()
        .iter()
        .zip(probs)
        .zip(labels)
        .map(|((r, p), l)| (r.id.clone(), p, l))
        .collect();
    Ok(FoldOutcome {
        checkpoint,
        log,
        report,
        predictions,
    })
}

fn write_fold(dir: &Path, outcome: &FoldOutcome, threshold: f64) -> Result<()> {
    fsutil::create_dir(dir)?;
    save_fold(
        dir,
        &TrainedFold {
            checkpoint: outcome.checkpoint.clone(),
            log: outcome.log.clone(),
        },
    )?;
    fsutil::write_atomic(&dir.join("metrics.csv"), outcome.report.to_record().as_bytes())?;
    fsutil::write_atomic(
        &dir.join("predictions.csv"),
        predictions_csv(&outcome.predictions, threshold).as_bytes(),
    )
}

fn marker(dir: &Path, name: &str, text: &str) -> Result<()> {
    fsutil::write_atomic(&dir.join(name), text.as_bytes())
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Runs every fold of `cfg` and writes the run directory.
///
/// `input` is the config text exactly as supplied; it is stored verbatim
/// next to the resolved snapshot. Until the run finishes the directory
/// carries an `INCOMPLETE` marker, which on failure also holds the error.
pub fn run_cv_experiment(cfg: &ExperimentConfig, input: Option<&str>) -> Result<RunArtifacts> {
    cfg.validate()?;
    set_determinism(cfg.seed);
    let manifest = load_manifest(&cfg.manifest)?;
    ensure!(
        manifest.records().iter().all(|r| r.is_real()),
        "{} must list real records only; synthetic records go in data.synth_pool",
        cfg.manifest.display()
    );
    let plan = match &cfg.fold_plan {
        Some(p) => FoldPlan::read(p)?,
        None => stratified_kfold(&manifest, cfg.k, cfg.seed)?,
    };
    ensure!(plan.k == cfg.k, "fold plan has k = {}, config says k = {}", plan.k, cfg.k);
    plan.check_against(&manifest)?;
    let pool = match (&cfg.synth_pool, cfg.mix.regime) {
        (Some(p), Regime::SynthBalanced) => Some(load_manifest(p)?),
        _ => None,
    };

    let dir = cfg.output_dir.clone();
    fsutil::create_dir(&dir)?;
    remove_if_present(&dir.join(COMPLETE_MARKER))?;
    marker(&dir, INCOMPLETE_MARKER, "running\n")?;

    let snapshot = cfg.snapshot();
    let fp = fingerprint(&snapshot);
    fsutil::write_atomic(&dir.join("config.snapshot"), snapshot.as_bytes())?;
    if let Some(text) = input {
        fsutil::write_atomic(&dir.join("config.input"), text.as_bytes())?;
    }
    plan.write(&dir.join("fold_plan.csv"))?;
    let run_meta = serde_json::json!({
        "seed": cfg.seed,
        "fingerprint": fp,
        "k": cfg.k,
        "regime": cfg.mix.regime.as_str(),
        "family": cfg.backbone.family.as_str(),
        "fold_plan": if cfg.fold_plan.is_some() { "file" } else { "drawn" },
        "parallel_folds": cfg.parallel_folds,
    });
    fsutil::write_atomic(
        &dir.join("run.json"),
        format!("{}\n", serde_json::to_string_pretty(&run_meta).unwrap()).as_bytes(),
    )?;

    let result = (|| -> Result<Vec<FoldOutcome>> {
        let folds: Vec<Result<FoldOutcome>> = if cfg.parallel_folds {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..cfg.k)
                    .map(|f| {
                        let (m, p, pool, fp) = (&manifest, &plan, pool.as_ref(), fp.as_str());
                        s.spawn(move || run_fold(cfg, m, p, pool, f, fp))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::runtime("fold worker panicked"))))
                    .collect()
            })
        } else {
            (0..cfg.k).map(|f| run_fold(cfg, &manifest, &plan, pool.as_ref(), f, &fp)).collect()
        };
        let mut out = Vec::with_capacity(cfg.k);
        for (f, outcome) in folds.into_iter().enumerate() {
            let outcome = outcome.map_err(|e| match e {
                Error::Invalid(m) => Error::Invalid(format!("fold {f}: {m}")),
                Error::Runtime(m) => Error::Runtime(format!("fold {f}: {m}")),
                other => other,
            })?;
            write_fold(&fold_dir(&dir, f), &outcome, cfg.threshold)?;
            out.push(outcome);
        }
        Ok(out)
    })();

    let folds = match result {
        Ok(f) => f,
        Err(e) => {
            marker(&dir, INCOMPLETE_MARKER, &format!("failed: {e}\n"))?;
            return Err(e);
        }
    };
    let reports: Vec<&MetricsReport> = folds.iter().map(|f| &f.report).collect();
    let summaries = summaries_of(&reports, cfg)?;
    fsutil::write_atomic(&dir.join("summary.csv"), summary_csv(&summaries, cfg.k).as_bytes())?;
    marker(&dir, COMPLETE_MARKER, &format!("{fp}\n"))?;
    remove_if_present(&dir.join(INCOMPLETE_MARKER))?;
    Ok(RunArtifacts {
        dir,
        config: cfg.clone(),
        snapshot,
        fingerprint: fp,
        plan,
        folds,
        summaries,
    })
}

fn read_predictions(path: &Path) -> Result<Vec<(String, f64, u8)>> {
    let text = fsutil::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            ensure!(cols.len() == 4, "{}: malformed row {line:?}", path.display());
            let p = cols[1]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad probability {:?}", path.display(), cols[1])))?;
            let l = cols[3]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad label {:?}", path.display(), cols[3])))?;
            Ok((cols[0].to_string(), p, l))
        })
        .collect()
}

/// Reads a finished run directory back.
pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    ensure!(
        dir.join(COMPLETE_MARKER).is_file() && !dir.join(INCOMPLETE_MARKER).exists(),
        "{} is not a finished run",
        dir.display()
    );
    let snapshot = fsutil::read_to_string(&dir.join("config.snapshot"))?;
    let config = ExperimentConfig::parse(&snapshot)?;
    let plan = FoldPlan::read(&dir.join("fold_plan.csv"))?;
    ensure!(plan.k == config.k, "{}: fold plan and config disagree on k", dir.display());
    let fp = fingerprint(&snapshot);
    let mut folds = Vec::with_capacity(config.k);
    for f in 0..config.k {
        let fd = fold_dir(dir, f);
        let checkpoint = FoldCheckpoint::load(&fd.join("checkpoint.bin"))?;
        ensure!(
            checkpoint.fold == f && checkpoint.fingerprint == fp,
            "{}: checkpoint does not belong to this run",
            fd.display()
        );
        folds.push(FoldOutcome {
            checkpoint,
            log: RunLog::from_csv(&fsutil::read_to_string(&fd.join("run_log.csv"))?)?,
            report: MetricsReport::from_record(&fsutil::read_to_string(&fd.join("metrics.csv"))?)?,
            predictions: read_predictions(&fd.join("predictions.csv"))?,
        });
    }
    let reports: Vec<&MetricsReport> = folds.iter().map(|f| &f.report).collect();
    let summaries = summaries_of(&reports, &config)?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        config,
        snapshot,
        fingerprint: fp,
        plan,
        folds,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_csv_layout() {
        let s = vec![("auroc".to_string(), crate::metrics::aggregate_folds(&[90.0, 92.0]).unwrap())];
        assert_eq!(summary_csv(&s, 2), "metric,fold_0,fold_1,mean,sd\nauroc,90,92,91,1\n");
    }

    #[test]
    fn predictions_threshold_is_inclusive() {
        let rows = vec![("a".to_string(), 0.5, 1), ("b".to_string(), 0.4999999, 0)];
        assert_eq!(
            predictions_csv(&rows, 0.5),
            "id,probability,predicted,label\na,0.500000,1,1\nb,0.500000,0,0\n"
        );
    }

    #[test]
    fn seed_is_recorded() {
        set_determinism(7);
        assert_eq!(current_seed(), 7);
    }

    #[test]
    fn unfinished_dir_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        marker(dir.path(), INCOMPLETE_MARKER, "running\n").unwrap();
        assert!(load_run(dir.path()).is_err());
    }
}
