use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use mitobal::classifier::FoldCheckpoint;
use mitobal::dataset::{load_manifest, stratified_kfold, FoldPlan, Label, Manifest, PatchRecord};
use mitobal::generator::{
    build_synth_pool, finetune_fold, pretrain_generator, sample_synthetic, GenConfig, GeneratorCheckpoint,
    SynthPoolSpec,
};
use mitobal::kv::KeyValues;
use mitobal::orchestration::{
    compare_regimes, evaluate_labeled, load_run, package_submission, render_report, run_cv_experiment,
    set_determinism, ExperimentConfig,
};
use mitobal::{fsutil, imageio, toy};

const ENV_OUTPUT_DIR: &str = "MITOBAL_OUTPUT_DIR";
const ENV_SEED: &str = "MITOBAL_SEED";

#[derive(Parser)]
#[command(name = "mitobal", version, about = "Imbalanced mitosis-patch classification pipeline")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from `ROOT/<label>/[<domain>/]*.png`.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a label-stratified fold plan.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, env = ENV_SEED, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the unconditional generator, or fine-tune one conditional
    /// generator per fold.
    TrainGenerator {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        manifest: PathBuf,
        /// `full` or `tiny`.
        #[arg(long, default_value = "full")]
        profile: String,
        /// Key-value overrides on top of the profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained checkpoint (finetune only).
        #[arg(long)]
        base: Option<PathBuf>,
        /// Fold plan (finetune only).
        #[arg(long)]
        fold_plan: Option<PathBuf>,
        /// Fine-tune only this fold.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long, env = ENV_SEED, default_value_t = 0)]
        seed: u64,
        /// Checkpoint file (pretrain) or directory (finetune).
        #[arg(long, env = ENV_OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Sample patches of one class from a fine-tuned generator.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long)]
        count: usize,
        #[arg(long, env = ENV_SEED, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Sample the per-fold synthetic pool from a directory of fold generators.
    BuildPool {
        /// Directory holding `fold_<f>.bin` generator checkpoints.
        #[arg(long)]
        generators: PathBuf,
        #[arg(long, default_value_t = SynthPoolSpec::default().atypical_total)]
        atypical_total: usize,
        #[arg(long, default_value_t = SynthPoolSpec::default().normal_total)]
        normal_total: usize,
        #[arg(long, env = ENV_SEED, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Run a cross-validated classifier experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a finished run's fold ensemble on a labeled manifest.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Use a single fold's checkpoint instead of the ensemble.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// `preliminary` attaches the functionality-check disclaimer.
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold-wise deltas (a - b) between two runs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "auroc")]
        metric: String,
    },
    /// Fold table of one metric over several runs.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "auroc")]
        metric: String,
    },
    /// Write a predictions file for an unlabeled image directory.
    Package {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Write the separable toy dataset.
    MakeToy {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.15)]
        positive_fraction: f64,
        #[arg(long, env = ENV_SEED, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = ENV_OUTPUT_DIR)]
        out: PathBuf,
    },
}

fn gen_config(profile: &str, overrides: Option<&Path>) -> anyhow::Result<GenConfig> {
    let base = GenConfig::profile(profile)?;
    Ok(match overrides {
        Some(p) => GenConfig::from_kv(&KeyValues::parse(&fsutil::read_to_string(p)?)?, &base)?,
        None => base,
    })
}

fn ingest(root: &Path, out: &Path) -> anyhow::Result<()> {
    let mut records = Vec::new();
    for label in [Label::Normal, Label::Atypical] {
        let dir = root.join(label.as_str());
        if !dir.is_dir() {
            continue;
        }
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&dir).with_context(|| dir.display().to_string())? {
            let path = entry?.path();
            if path.is_dir() {
                let domain = path.file_name().unwrap().to_string_lossy().into_owned();
                for inner in std::fs::read_dir(&path)? {
                    files.push((inner?.path(), domain.clone()));
                }
            } else {
                files.push((path, "unknown".to_string()));
            }
        }
        files.retain(|(p, _)| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
        files.sort();
        for (path, domain) in files {
            imageio::check_patch(&path)?;
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            let path = std::fs::canonicalize(&path)?;
            records.push(PatchRecord::real(id, path, label, domain));
        }
    }
    if records.is_empty() {
        return Err(mitobal::Error::invalid(format!(
            "no patches under {}/{{normal,atypical}}",
            root.display()
        ))
        .into());
    }
    let m = Manifest::from_records(records)?;
    m.write(out)?;
    println!(
        "{} patches ({} atypical) -> {}",
        m.len(),
        m.count_label(Label::Atypical),
        out.display()
    );
    Ok(())
}

fn fold_generators(dir: &Path) -> anyhow::Result<Vec<GeneratorCheckpoint>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            name.starts_with("fold_") && name.ends_with(".bin")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(mitobal::Error::invalid(format!("no fold_<f>.bin generators in {}", dir.display())).into());
    }
    Ok(paths
        .iter()
        .map(|p| GeneratorCheckpoint::load(p))
        .collect::<mitobal::Result<_>>()?)
}

fn run_checkpoints(run: &Path, fold: Option<usize>) -> anyhow::Result<(Vec<FoldCheckpoint>, f64)> {
    let art = load_run(run)?;
    let threshold = art.config.threshold;
    let mut cks: Vec<FoldCheckpoint> = art.folds.into_iter().map(|f| f.checkpoint).collect();
    if let Some(f) = fold {
        if f >= cks.len() {
            return Err(mitobal::Error::invalid(format!("fold {f} out of range for k = {}", cks.len())).into());
        }
        cks = vec![cks.swap_remove(f)];
    }
    Ok((cks, threshold))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { root, out } => ingest(&root, &out)?,
        Command::Split { manifest, k, seed, out } => {
            set_determinism(seed);
            let m = load_manifest(&manifest)?;
            let plan = stratified_kfold(&m, k, seed)?;
            plan.write(&out)?;
            println!("{k}-fold plan over {} records -> {}", m.len(), out.display());
        }
        Command::TrainGenerator {
            stage,
            manifest,
            profile,
            config,
            base,
            fold_plan,
            fold,
            seed,
            out,
        } => {
            set_determinism(seed);
            let cfg = gen_config(&profile, config.as_deref())?;
            let m = load_manifest(&manifest)?;
            match stage {
                Stage::Pretrain => {
                    let ck = pretrain_generator(&m, &cfg, seed)?;
                    ck.save(&out)?;
                    println!(
                        "pretrained on {} patches, final VAE loss {:.5}, denoiser loss {:.5} -> {}",
                        m.len(),
                        ck.vae_losses.last().copied().unwrap_or(f64::NAN),
                        ck.ddpm_losses.last().copied().unwrap_or(f64::NAN),
                        out.display()
                    );
                }
                Stage::Finetune => {
                    let (Some(base), Some(plan)) = (base, fold_plan) else {
                        return Err(mitobal::Error::invalid("finetune needs --base and --fold-plan").into());
                    };
                    let base = GeneratorCheckpoint::load(&base)?;
                    let plan = FoldPlan::read(&plan)?;
                    let folds: Vec<usize> = match fold {
                        Some(f) => vec![f],
                        None => (0..plan.k).collect(),
                    };
                    fsutil::create_dir(&out)?;
                    for f in folds {
                        let ck = finetune_fold(&m, &plan, f, &base, &cfg, seed)?;
                        ck.save(&out.join(format!("fold_{f}.bin")))?;
                        let ids = format!("id\n{}\n", ck.training_ids.join("\n"));
                        fsutil::write_atomic(&out.join(format!("fold_{f}_training_ids.csv")), ids.as_bytes())?;
                        println!("fold {f}: fine-tuned on {} patches", ck.training_ids.len());
                    }
                }
            }
        }
        Command::Sample {
            checkpoint,
            label,
            count,
            seed,
            out,
        } => {
            set_determinism(seed);
            let ck = GeneratorCheckpoint::load(&checkpoint)?;
            let label = Label::parse(&label)?;
            let images = sample_synthetic(&ck, label, count, seed)?;
            fsutil::create_dir(&out)?;
            for (i, img) in images.iter().enumerate() {
                imageio::write_png(&out.join(format!("{}_{i:05}.png", label.as_str())), img)?;
            }
            println!("{count} {} samples -> {}", label.as_str(), out.display());
        }
        Command::BuildPool {
            generators,
            atypical_total,
            normal_total,
            seed,
            out,
        } => {
            set_determinism(seed);
            let cks = fold_generators(&generators)?;
            let spec = SynthPoolSpec {
                atypical_total,
                normal_total,
                folds: cks.len(),
            };
            let pool = build_synth_pool(&cks, &spec, seed, &out)?;
            println!(
                "{} synthetic patches ({} atypical) -> {}",
                pool.len(),
                pool.count_label(Label::Atypical),
                out.join("manifest.csv").display()
            );
        }
        Command::Train { config } => {
            let text = fsutil::read_to_string(&config)?;
            let mut kv = KeyValues::parse(&text)?;
            if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
                kv.set("output_dir", dir);
            }
            if let Ok(seed) = std::env::var(ENV_SEED) {
                kv.set("seed", seed);
            }
            let cfg = ExperimentConfig::from_kv(&kv)?;
            let art = run_cv_experiment(&cfg, Some(&text))?;
            let rows: Vec<_> = ["auroc", "balanced_accuracy"]
                .iter()
                .map(|m| (m.to_string(), art.summary(m).unwrap().clone()))
                .collect();
            print!("{}", render_report(&rows)?);
            println!("run -> {}", art.dir.display());
        }
        Command::Evaluate {
            run,
            manifest,
            fold,
            threshold,
            tag,
            out,
        } => {
            let (cks, default_threshold) = run_checkpoints(&run, fold)?;
            let m = load_manifest(&manifest)?;
            let ev = evaluate_labeled(&cks, &m, threshold.unwrap_or(default_threshold), tag.as_deref())?;
            let text = ev.render();
            if let Some(out) = out {
                fsutil::write_atomic(&out, text.as_bytes())?;
            }
            print!("{text}");
        }
        Command::Compare { a, b, metric } => {
            let c = compare_regimes(&load_run(&a)?, &load_run(&b)?, &metric)?;
            print!("{}", c.render());
        }
        Command::Report { runs, metric } => {
            let rows = runs
                .iter()
                .map(|r| {
                    let art = load_run(r)?;
                    let s = art
                        .summary(&metric)
                        .ok_or_else(|| mitobal::Error::invalid(format!("unknown metric {metric:?}")))?
                        .clone();
                    Ok((art.config.label.clone(), s))
                })
                .collect::<mitobal::Result<Vec<_>>>()?;
            print!("{}", render_report(&rows)?);
        }
        Command::Package {
            run,
            input,
            fold,
            threshold,
            tag,
            out,
        } => {
            let (cks, default_threshold) = run_checkpoints(&run, fold)?;
            let sub = package_submission(&cks, &input, threshold.unwrap_or(default_threshold), &out, tag.as_deref())?;
            println!(
                "{} images, {} unreadable -> {}",
                sub.n_images,
                sub.errors.len(),
                sub.predictions_path.display()
            );
        }
        Command::MakeToy {
            n,
            positive_fraction,
            seed,
            out,
        } => {
            let m = toy::generate_toy_dataset(&out, n, positive_fraction, seed)?;
            println!(
                "{} toy patches ({} atypical) -> {}",
                m.len(),
                m.count_label(Label::Atypical),
                out.join("manifest.csv").display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mitobal::Error>() {
        Some(e) if e.is_validation() => 1,
        Some(_) => 2,
        // io and parse errors raised directly by the CLI are input problems
        None if err.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&mitobal::Error::invalid("x").into()), 1);
        assert_eq!(exit_code(&mitobal::Error::runtime("x").into()), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&io.into()), 1);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
