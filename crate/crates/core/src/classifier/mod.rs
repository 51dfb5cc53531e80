//! Binary patch classifier: backbone families with a single-logit head,
//! BCE loss, NAdam with cosine warm restarts, and AUROC-based checkpoint
//! selection.

mod loss;
mod model;
mod schedule;
mod train;

pub use loss::{bce_grad, bce_mean, bce_with_logits, bce_with_logits_tensor, sigmoid};
pub use model::{build_model, default_norm, to_batch, BackboneFamily, BackboneSpec, Model, WeightSource};
pub use schedule::cosine_restart_lr;
pub use train::{
    predict_proba, save_fold, train_fold, train_on_images, EpochRecord, FoldCheckpoint, FoldSetup,
    RunLog, TrainConfig, TrainedFold,
};
