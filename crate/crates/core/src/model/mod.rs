//! Small differentiable stand-ins for the detector, the mask/foreground
//! head and the inpainter, with the training loop and single-view inference.

mod adam;
mod checkpoint;
mod detector;
mod features;
mod inpaint;
mod mask_head;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use detector::{
    cell_box_params, cell_probs, detect, BBoxField, DetectorParams, DETECTOR_OUTPUTS,
    INITIAL_BOX_FRACTION, MIN_BOX_PX,
};
pub use features::{cell_features, detector_features, standardize, CellFeatures, N_FEATURES};
pub use inpaint::{
    hidden_region, inpaint, inpaint_with_stats, InpaintStats, INPAINT_MAX_SWEEPS, INPAINT_TOLERANCE,
};
pub use mask_head::{MaskHeadParams, MaskOutput, MASK_HIDDEN};
pub use train::{
    evaluate_model, holdout_split, infer_single_view, train, train_and_evaluate,
    triangulation_loss_baseline, ConsistencyFlags, Model, SingleView, Stage, StepReport,
    TrainConfig, TrainLog, Trainer, Variant,
};
