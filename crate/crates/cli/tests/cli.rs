use std::path::Path;
use std::process::{Command, Output};

fn mitobal(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mitobal"));
    cmd.args(args).env_remove("MITOBAL_OUTPUT_DIR").env_remove("MITOBAL_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str], envs: &[(&str, &str)]) -> String {
    let out = mitobal(args, envs);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(mitobal(&["--help"], &[]).status.code(), Some(0));
    assert_eq!(mitobal(&["no-such-command"], &[]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "data.manifest=m.csv\nbogus.key=1\n").unwrap();
    let out = mitobal(&["train", "--config", s(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));

    std::fs::write(&cfg, "data.manifest=m.csv\nmix.regime=synth_balanced\n").unwrap();
    assert_eq!(mitobal(&["train", "--config", s(&cfg)], &[]).status.code(), Some(1));

    let bad_dir = dir.path().join("empty");
    std::fs::create_dir_all(&bad_dir).unwrap();
    let out = mitobal(&["ingest", "--root", s(&bad_dir), "--out", s(&dir.path().join("m.csv"))], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn toy_classifier_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let toy = root.join("toy");
    ok(&["make-toy", "--n", "40", "--out", s(&toy)], &[("MITOBAL_SEED", "2")]);
    let manifest = toy.join("manifest.csv");
    assert!(manifest.is_file());

    let plan = root.join("plan.csv");
    ok(&["split", "--manifest", s(&manifest), "--k", "2", "--out", s(&plan)], &[]);
    assert!(std::fs::read_to_string(&plan).unwrap().starts_with("id,fold\n"));

    let cfg = root.join("exp.cfg");
    std::fs::write(
        &cfg,
        format!(
            "data.manifest={}\nk=2\ntrain.epochs=1\ntrain.base_lr=0.001\noutput_dir=ignored\n",
            manifest.display()
        ),
    )
    .unwrap();
    let run = root.join("run");
    let printed = ok(
        &["train", "--config", s(&cfg)],
        &[("MITOBAL_OUTPUT_DIR", s(&run)), ("MITOBAL_SEED", "11")],
    );
    assert!(printed.contains("Mean ± SD"), "{printed}");
    let snapshot = std::fs::read_to_string(run.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("seed=11\n"));
    assert!(snapshot.contains(&format!("output_dir={}\n", run.display())));
    assert!(!root.join("ignored").exists());

    let report = ok(&["report", "--run", s(&run), "--run", s(&run)], &[]);
    assert_eq!(report.lines().count(), 3);
    let cmp = ok(&["compare", "--a", s(&run), "--b", s(&run)], &[]);
    assert!(cmp.contains("delta +0.00"), "{cmp}");

    let eval = ok(
        &["evaluate", "--run", s(&run), "--manifest", s(&manifest), "--tag", "preliminary"],
        &[],
    );
    assert!(eval.starts_with("mode,ensemble_mean_of_2\n"), "{eval}");
    assert!(eval.contains("not predictive of final performance"));

    let out = root.join("submission");
    ok(
        &["package", "--run", s(&run), "--input", s(&toy.join("images")), "--fold", "1", "--out", s(&out)],
        &[],
    );
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 41);
    assert!(preds.starts_with("id,probability,label\ntoy_0000,"));
    let meta = std::fs::read_to_string(out.join("submission.json")).unwrap();
    assert!(meta.contains("\"single\""));

    assert_eq!(
        mitobal(&["package", "--run", s(&toy), "--input", s(&toy), "--out", s(&out)], &[]).status.code(),
        Some(1)
    );
}

#[test]
fn generator_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let toy = root.join("toy");
    ok(&["make-toy", "--n", "20", "--positive-fraction", "0.3", "--out", s(&toy)], &[]);

    // ingest the same patches from a label/domain tree
    let tree = root.join("tree");
    for (i, label) in ["normal", "atypical"].iter().enumerate() {
        let d = tree.join(label).join(format!("site{i}"));
        std::fs::create_dir_all(&d).unwrap();
        std::fs::copy(toy.join("images/toy_0000.png"), d.join(format!("{label}_a.png"))).unwrap();
        std::fs::copy(toy.join("images/toy_0001.png"), d.join(format!("{label}_b.png"))).unwrap();
    }
    let ingested = root.join("ingested.csv");
    let msg = ok(&["ingest", "--root", s(&tree), "--out", s(&ingested)], &[]);
    assert!(msg.starts_with("4 patches (2 atypical)"), "{msg}");

    let manifest = toy.join("manifest.csv");
    let plan = root.join("plan.csv");
    ok(&["split", "--manifest", s(&manifest), "--k", "2", "--out", s(&plan)], &[]);
    let gcfg = root.join("gen.cfg");
    std::fs::write(
        &gcfg,
        "pretrain.vae_epochs=1\npretrain.ddpm_epochs=1\nfinetune.vae_epochs=1\nfinetune.ddpm_epochs=1\n",
    )
    .unwrap();
    let base = root.join("base.bin");
    let common = ["--manifest", s(&manifest), "--profile", "tiny", "--config", s(&gcfg)];
    let mut args = vec!["train-generator", "--stage", "pretrain", "--out", s(&base)];
    args.extend(common);
    ok(&args, &[]);

    let gens = root.join("gens");
    let mut args = vec![
        "train-generator", "--stage", "finetune", "--base", s(&base), "--fold-plan", s(&plan), "--out", s(&gens),
    ];
    args.extend(common);
    ok(&args, &[]);
    for f in 0..2 {
        assert!(gens.join(format!("fold_{f}.bin")).is_file());
        let ids = std::fs::read_to_string(gens.join(format!("fold_{f}_training_ids.csv"))).unwrap();
        let plan_text = std::fs::read_to_string(&plan).unwrap();
        for line in plan_text.lines().skip(1) {
            let (id, fold) = line.split_once(',').unwrap();
            if fold == f.to_string() {
                assert!(!ids.lines().any(|l| l == id), "fold {f} generator saw {id}");
            }
        }
    }

    let samples = root.join("samples");
    ok(
        &["sample", "--checkpoint", s(&gens.join("fold_0.bin")), "--label", "atypical", "--count", "2", "--out", s(&samples)],
        &[],
    );
    assert!(samples.join("atypical_00001.png").is_file());

    let pool = root.join("pool");
    let msg = ok(
        &["build-pool", "--generators", s(&gens), "--atypical-total", "4", "--normal-total", "1", "--out", s(&pool)],
        &[],
    );
    assert!(msg.starts_with("5 synthetic patches (4 atypical)"), "{msg}");

    // unconditional checkpoints cannot be sampled by class
    let out = mitobal(
        &["sample", "--checkpoint", s(&base), "--label", "normal", "--count", "1", "--out", s(&samples)],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}
