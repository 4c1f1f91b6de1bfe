//! Multi-view consensus detection.
//!
//! Per-view grid-cell probability maps are fused on a 3D voxel grid, one
//! voxel is importance-sampled, and the resulting per-view boxes are made
//! geometrically consistent by differentiable least-squares triangulation
//! before an inpainting/recomposition objective scores them.

pub mod autodiff;
pub mod bbox;
pub mod camera;
pub mod error;
pub mod grid;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod mvgeom;
pub mod sampling;
pub mod simulator;
pub mod vec3;

pub use autodiff::{check_grad, grad, GradCheck, Real, Tape, Var};
pub use bbox::{adjust_centers, adjust_heights, adjust_widths, decode_bbox, BBoxParams, PixelBBox};
pub use camera::{load_rig, save_rig, CameraModel, CameraRig, Line3};
pub use error::{Error, Result};
pub use grid::{
    build_grid, fuse, ConsensusGrid, GridSpec2D, ProbMap2D, VoxelDistribution, VoxelGrid,
};
pub use image::Image;
pub use losses::{LossBreakdown, LossConfig, LossWeights, Reduction};
pub use metrics::{evaluate, threshold_search, BinaryMask, EvalReport};
pub use model::{
    evaluate_model, holdout_split, infer_single_view, train, train_and_evaluate, Checkpoint, Model,
    TrainConfig, TrainLog, Trainer, Variant,
};
pub use mvgeom::{
    nearest_point_bruteforce, nearest_point_to_lines, rig_focus_point, Aabb, LsqResult,
};
pub use sampling::{sample_voxel, ImportanceSample};
pub use simulator::{make_scene, FrameBundle, Scene, SceneConfig};
