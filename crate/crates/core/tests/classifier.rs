use image::RgbImage;
use mitobal::classifier::{
    default_norm, predict_proba, train_fold, train_on_images, BackboneFamily, BackboneSpec, FoldCheckpoint,
    FoldSetup, TrainConfig, TrainedFold,
};
use mitobal::dataset::{Label, Manifest, PatchRecord};
use mitobal::metrics::{auroc, ScoredSet};
use mitobal::transforms::AugmentConfig;
use mitobal::{seed, toy};

fn toy_images(n: usize, seed_value: u64) -> Vec<(RgbImage, u8)> {
    let mut rng = seed::rng(seed_value);
    (0..n)
        .map(|i| {
            let label = if i % 4 == 0 { Label::Atypical } else { Label::Normal };
            (toy::render_patch(label, i % 9, &mut rng), label.index() as u8)
        })
        .collect()
}

fn setup<'a>(spec: &'a BackboneSpec, cfg: &'a TrainConfig, aug: &'a AugmentConfig) -> FoldSetup<'a> {
    FoldSetup {
        fold: 0,
        spec,
        config: cfg,
        augment: aug,
        norm: default_norm(spec.family),
        seed: 3,
        fingerprint: "test".into(),
    }
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        base_lr: 1e-3,
        ..TrainConfig::for_family(BackboneFamily::Native128Conv)
    }
}

fn trained(epochs: usize) -> (TrainedFold, Vec<(RgbImage, u8)>) {
    let train = toy_images(240, 1);
    let val = toy_images(60, 2);
    let spec = BackboneSpec::reference(BackboneFamily::Native128Conv);
    let cfg = quick_config(epochs);
    let aug = AugmentConfig::default();
    (train_on_images(&train, &val, &setup(&spec, &cfg, &aug)).unwrap(), train)
}

#[test]
fn separable_toy_fold() {
    let (fold, train) = trained(6);
    let ck = &fold.checkpoint;

    // training-set AUROC of the selected model
    let imgs: Vec<RgbImage> = train.iter().map(|(i, _)| i.clone()).collect();
    let labels: Vec<u8> = train.iter().map(|(_, l)| *l).collect();
    let probs = predict_proba(ck, &imgs).unwrap();
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    let train_auc = auroc(&ScoredSet::new(probs.clone(), labels).unwrap()).unwrap();
    assert!(train_auc > 0.95, "train AUROC {train_auc}");

    // the learning rate restarts every five epochs
    let log = &fold.log.epochs;
    assert_eq!(log.len(), 6);
    assert_eq!(log[0].lr, 1e-3);
    assert_eq!(log[5].lr, 1e-3);
    assert!(log[2].lr < log[0].lr);

    // selection keeps the best validation epoch
    let best = log.iter().map(|e| e.val_auroc).fold(f64::MIN, f64::max);
    assert_eq!(ck.val_auroc, best);
    assert!(ck.val_auroc >= log[0].val_auroc);
    assert_eq!(log[ck.selected_epoch].val_auroc, best);

    // predictions are repeatable and survive a save/load
    assert_eq!(predict_proba(ck, &imgs).unwrap(), probs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    let back = FoldCheckpoint::load(&path).unwrap();
    assert_eq!(&back, ck);
    assert_eq!(predict_proba(&back, &imgs).unwrap(), probs);
}

#[test]
fn single_class_validation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seed::rng(0);
    let mut recs = Vec::new();
    for i in 0..6 {
        let label = if i < 2 { Label::Atypical } else { Label::Normal };
        let path = dir.path().join(format!("p{i}.png"));
        mitobal::imageio::write_png(&path, &toy::render_patch(label, 0, &mut rng)).unwrap();
        recs.push(PatchRecord::real(format!("p{i}"), path, label, "d"));
    }
    let train = Manifest::from_records(recs[..4].to_vec()).unwrap();
    let val = Manifest::from_records(recs[4..].to_vec()).unwrap();
    let spec = BackboneSpec::reference(BackboneFamily::Native128Conv);
    let cfg = quick_config(1);
    let aug = AugmentConfig::default();
    let err = train_fold(&train, &val, &setup(&spec, &cfg, &aug)).unwrap_err();
    assert!(err.to_string().contains("validation AUROC undefined"), "{err}");
    assert!(err.is_validation());
}

#[test]
fn token_family_trains_at_its_own_side() {
    let train = toy_images(24, 5);
    let val = toy_images(8, 6);
    let spec = BackboneSpec::reference(BackboneFamily::Token224Cls);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::for_family(BackboneFamily::Token224Cls)
    };
    let aug = AugmentConfig::identity();
    let fold = train_on_images(&train, &val, &setup(&spec, &cfg, &aug)).unwrap();
    assert_eq!(fold.checkpoint.backbone.family, BackboneFamily::Token224Cls);
    assert_eq!(fold.log.epochs[0].lr, 1e-5);
    let imgs: Vec<RgbImage> = val.into_iter().map(|(i, _)| i).collect();
    assert_eq!(predict_proba(&fold.checkpoint, &imgs).unwrap().len(), 8);
}
