//! The training step, the training loop and single-view inference.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::detector::{cell_box_params, cell_probs, detect, DetectorParams, MIN_BOX_PX};
use super::features::{detector_features, CellFeatures};
use super::inpaint::inpaint;
use super::mask_head::MaskHeadParams;
use crate::autodiff::{external, Real, Tape, Var};
use crate::bbox::{
    adjust_centers, adjust_heights, composite, composite_backward, consensus_points, crop,
    crop_backward, decode_bbox_generic, paste, PixelBBox,
};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::grid::{build_grid, ConsensusGrid, GridSpec2D, ProbMap2D};
use crate::image::Image;
use crate::losses::{
    inpaint_error, prior_q, reconstruction_error, reconstruction_grad, seg_prior_term,
    LossBreakdown, LossConfig, Phi, Reduction,
};
use crate::metrics::{evaluate, EvalReport};
use crate::mvgeom::{nearest_point_to_lines, rig_focus_point};
use crate::sampling::{importance_weights, sample_index};
use crate::simulator::Scene;

/// Which consistency mechanism couples the per-view boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyFlags {
    pub center: bool,
    pub height: bool,
    pub width: bool,
    /// Replaces every adjustment by a penalty on center-ray disagreement.
    pub triangulation_loss: bool,
}

impl Default for ConsistencyFlags {
    fn default() -> Self {
        Variant::Full.flags()
    }
}

/// The structural variants compared in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoViewConsistency,
    NoHeightConsistency,
    WidthConsistency,
    TriangulationLoss,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoViewConsistency,
        Variant::NoHeightConsistency,
        Variant::WidthConsistency,
        Variant::TriangulationLoss,
    ];

    pub fn flags(self) -> ConsistencyFlags {
        let f = |center, height, width, triangulation_loss| ConsistencyFlags {
            center,
            height,
            width,
            triangulation_loss,
        };
        match self {
            Variant::Full => f(true, true, false, false),
            Variant::NoViewConsistency => f(false, false, false, false),
            Variant::NoHeightConsistency => f(true, false, false, false),
            Variant::WidthConsistency => f(true, true, true, false),
            Variant::TriangulationLoss => f(false, false, false, true),
        }
    }

    /// Short key used on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoViewConsistency => "vc",
            Variant::NoHeightConsistency => "hc",
            Variant::WidthConsistency => "wc",
            Variant::TriangulationLoss => "tc",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Ours",
            Variant::NoViewConsistency => "Ours w/o VC",
            Variant::NoHeightConsistency => "Ours w/o HC",
            Variant::WidthConsistency => "Ours w/ WC",
            Variant::TriangulationLoss => "Ours w/ TC",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub mask_lr: f64,
    /// Multi-view frame sets per step.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub n_cameras: usize,
    pub grid_dims: [usize; 3],
    /// Edge length of the voxel grid, meters.
    pub grid_side: f64,
    pub cells: (usize, usize),
    pub flags: ConsistencyFlags,
    pub loss: LossConfig,
    pub tc_weight: f64,
    /// Differentiate the inpainting error wrt the box through the inpainter
    /// itself (central differences of `box_step` pixels). When off, the
    /// inpainted image is a constant and only the region weighting carries
    /// box gradients.
    pub inpaint_box_gradient: bool,
    pub box_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            mask_lr: 1e-4,
            batch_size: 1,
            steps: 2000,
            seed: 7,
            n_cameras: 3,
            grid_dims: [10, 10, 10],
            grid_side: 4.0,
            cells: (8, 8),
            flags: ConsistencyFlags::default(),
            loss: LossConfig {
                reduction: Reduction::PixelMean,
                ..LossConfig::default()
            },
            tc_weight: 0.1,
            inpaint_box_gradient: true,
            box_step: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.mask_lr > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.box_step > 0.0) {
            return Err(Error::InvalidConfig("box step must be positive".into()));
        }
        if !(self.grid_side > 0.0) {
            return Err(Error::InvalidConfig("grid side must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub detector: DetectorParams,
    pub mask_head: MaskHeadParams,
    pub cells: (usize, usize),
}

impl Model {
    pub fn initial(width: usize, height: usize, cells: (usize, usize), seed: u64) -> Self {
        Self {
            detector: DetectorParams::initial(width, height),
            mask_head: MaskHeadParams::initial(seed ^ 0x6d61_736b),
            cells,
        }
    }
}

/// Pipeline stages, recorded in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Detect,
    Fuse,
    Sample,
    Decode,
    AdjustCenters,
    AdjustHeights,
    AdjustWidths,
    TriangulationLoss,
    Compose,
    Loss,
    Update,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Triangulation penalty, when that variant is active.
    pub tc: Option<f64>,
    pub trace: Vec<Stage>,
    pub voxel: usize,
    pub ratio: f64,
    pub boxes: Vec<PixelBBox>,
    /// Draws needed; 2 means the first one hit degenerate geometry.
    pub attempts: usize,
}

struct FramePass {
    loss: LossBreakdown,
    tc: Option<f64>,
    det_grad: Vec<f64>,
    mask_grad: Vec<f64>,
    voxel: usize,
    ratio: f64,
    boxes: Vec<PixelBBox>,
    attempts: usize,
}

/// Sum of squared distances from the least-squares point of the box-center
/// rays to each ray.
pub fn triangulation_loss_baseline<T: Real>(rig: &CameraRig, boxes: &[PixelBBox<T>]) -> Result<T> {
    if rig.len() != boxes.len() {
        return Err(Error::LengthMismatch {
            left: boxes.len(),
            right: rig.len(),
        });
    }
    let lines: Vec<_> = rig
        .cameras()
        .iter()
        .zip(boxes)
        .map(|(cam, b)| cam.ray_through_pixel(b.cu, b.cv))
        .collect();
    Ok(nearest_point_to_lines(&lines)?.residual)
}

pub struct Trainer {
    config: TrainConfig,
    rig: CameraRig,
    consensus: ConsensusGrid,
    phi: Phi,
    model: Model,
    det_opt: Adam,
    mask_opt: Adam,
}

impl Trainer {
    pub fn new(config: TrainConfig, rig: CameraRig) -> Result<Self> {
        config.validate()?;
        if rig.len() != config.n_cameras {
            return Err(Error::InvalidConfig(format!(
                "config expects {} cameras, rig has {}",
                config.n_cameras,
                rig.len()
            )));
        }
        let cam = rig.camera(0);
        if rig
            .cameras()
            .iter()
            .any(|c| c.width() != cam.width() || c.height() != cam.height())
        {
            return Err(Error::InvalidConfig(
                "all cameras must share one image size".into(),
            ));
        }
        let grid = build_grid(rig_focus_point(&rig)?, config.grid_side, config.grid_dims)?;
        let consensus = ConsensusGrid::new(&rig, grid, config.cells.0, config.cells.1)?;
        let model = Model::initial(cam.width(), cam.height(), config.cells, config.seed);
        Ok(Self {
            det_opt: Adam::new(config.lr, DetectorParams::LEN),
            mask_opt: Adam::new(config.mask_lr, MaskHeadParams::LEN),
            config,
            rig,
            consensus,
            phi: Phi::default(),
            model,
        })
    }

    /// Continues from saved parameters; optimizer moments start fresh.
    pub fn with_model(mut self, model: Model) -> Result<Self> {
        model.detector.validate()?;
        model.mask_head.validate()?;
        if model.cells != self.config.cells {
            return Err(Error::InvalidConfig(
                "model and config cell grids differ".into(),
            ));
        }
        self.model = model;
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn consensus(&self) -> &ConsensusGrid {
        &self.consensus
    }

    pub fn steps_done(&self) -> u64 {
        self.det_opt.steps()
    }

    /// One update from one multi-view frame set.
    pub fn train_step(&mut self, views: &[Image], rng: &mut ChaCha8Rng) -> Result<StepReport> {
        self.train_step_batch(&[views], rng)
    }

    /// One update from several frame sets, gradients averaged.
    pub fn train_step_batch(
        &mut self,
        batch: &[&[Image]],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut trace = Vec::new();
        let mut passes = Vec::with_capacity(batch.len());
        for views in batch {
            trace.clear();
            passes.push(self.frame_pass(views, rng, &mut trace)?);
        }
        let n = passes.len() as f64;
        let mut det_grad = vec![0.0; DetectorParams::LEN];
        let mut mask_grad = vec![0.0; MaskHeadParams::LEN];
        let mut loss = LossBreakdown::default();
        let mut tc: Option<f64> = None;
        for p in &passes {
            for (a, b) in det_grad.iter_mut().zip(&p.det_grad) {
                *a += b / n;
            }
            for (a, b) in mask_grad.iter_mut().zip(&p.mask_grad) {
                *a += b / n;
            }
            loss.g += p.loss.g / n;
            loss.o += p.loss.o / n;
            loss.o_perc += p.loss.o_perc / n;
            loss.l_seg += p.loss.l_seg / n;
            loss.l_q += p.loss.l_q / n;
            loss.total += p.loss.total / n;
            if let Some(t) = p.tc {
                *tc.get_or_insert(0.0) += t / n;
            }
        }
        self.det_opt.step(&mut self.model.detector.theta, &det_grad);
        self.mask_opt
            .step(&mut self.model.mask_head.theta, &mask_grad);
        trace.push(Stage::Update);
        let last = passes.pop().expect("batch is non-empty");
        Ok(StepReport {
            loss,
            tc,
            trace,
            voxel: last.voxel,
            ratio: last.ratio,
            boxes: last.boxes,
            attempts: last.attempts,
        })
    }

    fn frame_pass(
        &self,
        views: &[Image],
        rng: &mut ChaCha8Rng,
        trace: &mut Vec<Stage>,
    ) -> Result<FramePass> {
        if views.len() != self.rig.len() {
            return Err(Error::LengthMismatch {
                left: views.len(),
                right: self.rig.len(),
            });
        }
        let specs = self.consensus.specs();
        let feats: Vec<Vec<CellFeatures>> = views
            .iter()
            .zip(specs)
            .map(|(v, s)| detector_features(v, s))
            .collect::<Result<_>>()?;
        let tape = Tape::new();
        let theta = tape.vars(&self.model.detector.theta);
        let probs: Vec<Vec<Var>> = feats
            .iter()
            .zip(specs)
            .map(|(f, s)| cell_probs(&theta, f, s))
            .collect();
        trace.push(Stage::Detect);
        let q = self.consensus.fuse_generic(&probs);
        trace.push(Stage::Fuse);
        let q_vals: Vec<f64> = q.iter().map(|v| v.val()).collect();
        let k = importance_weights(&q_vals);
        let prefix = trace.len();
        let mut failure = None;
        for attempt in 1..=2 {
            trace.truncate(prefix);
            let slot = sample_index(&k, rng);
            trace.push(Stage::Sample);
            match self.sampled_pass(&tape, &theta, &q, &q_vals, &k, slot, views, &feats, trace) {
                Ok(mut p) => {
                    p.attempts = attempt;
                    return Ok(p);
                }
                Err(e) => failure = Some(e),
            }
        }
        Err(failure.expect("two attempts ran"))
    }

    #[allow(clippy::too_many_arguments)]
    fn sampled_pass<'t>(
        &self,
        tape: &'t Tape,
        theta: &[Var<'t>],
        q: &[Var<'t>],
        q_vals: &[f64],
        k: &[f64],
        slot: usize,
        views: &[Image],
        feats: &[Vec<CellFeatures>],
        trace: &mut Vec<Stage>,
    ) -> Result<FramePass> {
        let cfg = &self.config;
        let w = &cfg.loss.weights;
        let specs = self.consensus.specs();
        let n_cams = views.len();
        let r = q[slot] * (1.0 / k[slot]);
        let rv = r.val();

        let mut boxes: Vec<PixelBBox<Var<'t>>> = (0..n_cams)
            .map(|c| {
                let cell = self.consensus.cell(slot, c);
                let p = cell_box_params(theta, &feats[c][cell], &specs[c]);
                decode_bbox_generic(&specs[c], cell, p)
            })
            .collect::<Result<_>>()?;
        trace.push(Stage::Decode);
        let mut tc = None;
        if cfg.flags.triangulation_loss {
            tc = Some(triangulation_loss_baseline(&self.rig, &boxes)?);
            trace.push(Stage::TriangulationLoss);
        } else {
            if cfg.flags.center {
                boxes = adjust_centers(&self.rig, &boxes)?;
                trace.push(Stage::AdjustCenters);
            }
            if cfg.flags.height {
                boxes = adjust_heights(&self.rig, &boxes)?;
                trace.push(Stage::AdjustHeights);
            }
            if cfg.flags.width {
                boxes = floored_width_consensus(&self.rig, &boxes)?;
                trace.push(Stage::AdjustWidths);
            }
        }
        let plain: Vec<PixelBBox> = boxes.iter().map(|b| b.values()).collect();

        struct Composed {
            bg: Image,
            patch: Image,
            head: super::mask_head::MaskOutput,
            recon: Image,
            pasted: Image,
        }
        let mut composed = Vec::with_capacity(n_cams);
        for (img, b) in views.iter().zip(&plain) {
            b.validate()?;
            let bg = inpaint(img, b)?;
            let patch = crop(img, b)?;
            let head = self.model.mask_head.forward(&patch)?;
            let comp = composite(&head.fg, &head.mask, &bg, b)?;
            composed.push(Composed {
                bg,
                patch,
                head,
                recon: comp.image,
                pasted: comp.mask,
            });
        }
        trace.push(Stage::Compose);

        let red = cfg.loss.reduction;
        let mut loss = LossBreakdown::default();
        let mut mask_grad = vec![0.0; MaskHeadParams::LEN];
        let mut terms = Vec::with_capacity(n_cams + 1);
        for ((img, b), cv) in views.iter().zip(&plain).zip(&composed) {
            let (err, mut d_err) = inpaint_error(img, &cv.bg, b)?;
            if cfg.inpaint_box_gradient {
                for (i, d) in d_err.iter_mut().enumerate() {
                    *d = inpaint_box_derivative(img, b, i, cfg.box_step)?;
                }
            }
            let o = reconstruction_error(img, &cv.recon, red)?;
            let op = self.phi.distance(&cv.recon, img, red)?;
            let (seg, seg_g) = seg_prior_term(&cv.pasted, w.lambda);
            loss.g -= rv * err;
            loss.o += rv * o;
            loss.o_perc += rv * op;
            loss.l_seg += seg;
            let a = -w.alpha * err + w.beta * o + w.gamma * op;

            let mut d_recon = reconstruction_grad(img, &cv.recon, red);
            let d_perc = self.phi.distance_grad(&cv.recon, img, red);
            for (x, y) in d_recon.data_mut().iter_mut().zip(d_perc.data()) {
                *x = rv * (w.beta * *x + w.gamma * y);
            }
            let d_seg = Image::filled(img.width(), img.height(), 1, w.eta * seg_g);
            let cg = composite_backward(
                &cv.head.fg,
                &cv.head.mask,
                &cv.bg,
                b,
                &cv.pasted,
                &d_recon,
                Some(&d_seg),
            );
            let (g_head, d_patch) = self
                .model
                .mask_head
                .backward(&cv.patch, &cv.head, &cg.fg, &cg.mask);
            for (x, y) in mask_grad.iter_mut().zip(&g_head) {
                *x += y;
            }
            let (_, d_box_crop) = crop_backward(img, b, &d_patch, false);
            let mut partials = [0.0; 5];
            for i in 0..4 {
                partials[i] = cg.bbox[i] + d_box_crop[i] - w.alpha * rv * d_err[i];
            }
            partials[4] = a;
            let bv = boxes[terms.len()];
            terms.push(external(
                &[bv.cu, bv.cv, bv.w, bv.h, r],
                rv * a + w.eta * seg,
                &partials,
                "view_loss",
            ));
        }
        if cfg.loss.prior_q {
            let dist = self.consensus.distribution(q_vals);
            loss.l_q = prior_q(&dist, true);
        }
        loss.total = w.combine(-loss.g, loss.o, loss.o_perc, loss.l_seg, loss.l_q);
        if let Some(t) = tc {
            terms.push(t * cfg.tc_weight);
            loss.total += cfg.tc_weight * t.val();
        }
        trace.push(Stage::Loss);
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteValue { op: "train_step" });
        }
        let total = crate::autodiff::sum(&terms);
        let det_grad = tape.gradient(total)?.wrt_all(theta);
        if det_grad.iter().chain(&mask_grad).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteValue { op: "train_step" });
        }
        Ok(FramePass {
            loss,
            tc: tc.map(|t| t.val()),
            det_grad,
            mask_grad,
            voxel: self.consensus.support()[slot],
            ratio: rv,
            boxes: plain,
            attempts: 0,
        })
    }
}

/// Width consensus for training. On a surround rig the left-edge rays of
/// all views meet near the subject axis, so consensus widths often collapse
/// or invert; those are held at the detector's minimum box size instead of
/// aborting the step.
fn floored_width_consensus<'t>(
    rig: &CameraRig,
    boxes: &[PixelBBox<Var<'t>>],
) -> Result<Vec<PixelBBox<Var<'t>>>> {
    let lefts: Vec<[Var<'t>; 2]> = boxes.iter().map(|b| [b.cu - b.w * 0.5, b.cv]).collect();
    let rights: Vec<[Var<'t>; 2]> = boxes.iter().map(|b| [b.cu + b.w * 0.5, b.cv]).collect();
    let lefts = consensus_points(rig, &lefts)?;
    let rights = consensus_points(rig, &rights)?;
    Ok(boxes
        .iter()
        .zip(lefts.iter().zip(&rights))
        .map(|(b, (l, r))| {
            let w = r[0] - l[0];
            let w = if w.val() < MIN_BOX_PX {
                w.lift(MIN_BOX_PX)
            } else {
                w
            };
            PixelBBox { w, ..*b }
        })
        .collect())
}

/// Central difference of the inpainting error wrt box coordinate `i` of
/// `(cu, cv, w, h)`, re-running the inpainter on both sides.
fn inpaint_box_derivative(img: &Image, b: &PixelBBox, i: usize, step: f64) -> Result<f64> {
    let mut a = b.to_array();
    let half = if i < 2 {
        0.5 * step
    } else {
        (0.5 * step).min(0.5 * (a[i] - 1.0)).max(1e-3)
    };
    let mut eval = |size: f64| -> Result<f64> {
        a[i] = size;
        let bb = PixelBBox::from_array(a);
        Ok(inpaint_error(img, &inpaint(img, &bb)?, &bb)?.0)
    };
    let s = b.to_array()[i];
    Ok((eval(s + half)? - eval(s - half)?) / (2.0 * half))
}

/// Loss trajectory of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub losses: Vec<LossBreakdown>,
    /// Step index of each entry of `losses`.
    pub steps: Vec<usize>,
    /// Steps dropped after two degenerate draws.
    pub skipped: usize,
    /// Steps that needed a second draw.
    pub resampled: usize,
}

/// Trains on frames drawn uniformly from `frames` of `scene`.
pub fn train(
    scene: &Scene,
    config: &TrainConfig,
    frames: Range<usize>,
) -> Result<(Trainer, TrainLog)> {
    if frames.is_empty() || frames.end > scene.frames() {
        return Err(Error::InvalidConfig(format!(
            "training frames {frames:?} outside the scene's {} frames",
            scene.frames()
        )));
    }
    let mut trainer = Trainer::new(config.clone(), scene.rig.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let t = rng.random_range(frames.clone());
            batch.push(scene.frame(t)?.images);
        }
        let views: Vec<&[Image]> = batch.iter().map(|v| v.as_slice()).collect();
        match trainer.train_step_batch(&views, &mut rng) {
            Ok(report) => {
                if report.attempts > 1 {
                    log.resampled += 1;
                }
                log.losses.push(report.loss);
                log.steps.push(step);
            }
            Err(
                Error::DegenerateConfiguration { .. }
                | Error::InvertedBox { .. }
                | Error::DegenerateBox { .. }
                | Error::BehindCamera { .. },
            ) => log.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((trainer, log))
}

/// Training frames and the held-out tail (the last fifth) of a scene.
pub fn holdout_split(frames: usize) -> (Range<usize>, Range<usize>) {
    let cut = (frames * 4 / 5).max(1).min(frames);
    (0..cut, cut..frames)
}

/// Trains on the training split and evaluates single-view inference on the
/// held-out split.
pub fn train_and_evaluate(
    scene: &Scene,
    config: &TrainConfig,
) -> Result<(Trainer, TrainLog, EvalReport)> {
    let (fit, held) = holdout_split(scene.frames());
    if held.is_empty() {
        return Err(Error::InvalidConfig(
            "scene is too short to hold out frames".into(),
        ));
    }
    let (trainer, log) = train(scene, config, fit)?;
    let report = evaluate_model(trainer.model(), scene, held)?;
    Ok((trainer, log, report))
}

/// Result of running the detector and mask head on a single image.
#[derive(Debug, Clone)]
pub struct SingleView {
    pub bbox: PixelBBox,
    pub cell: usize,
    pub probs: ProbMap2D,
    /// Foreground probability in the image frame, zero outside the box.
    pub mask: Image,
}

/// Detection and segmentation from one image: the most probable interior
/// cell's box, and the mask head's output warped back to the image.
pub fn infer_single_view(model: &Model, image: &Image) -> Result<SingleView> {
    let spec = GridSpec2D::new(model.cells.0, model.cells.1, image.width(), image.height())?;
    let (probs, field) = detect(&model.detector, image, &spec)?;
    let cell = probs.argmax();
    let bbox = field.decode(cell)?;
    let patch = crop(image, &bbox)?;
    let head = model.mask_head.forward(&patch)?;
    let mask = paste(&head.mask, &bbox, image.width(), image.height())?;
    Ok(SingleView {
        bbox,
        cell,
        probs,
        mask,
    })
}

/// Single-view evaluation over every camera of every frame in `frames`.
pub fn evaluate_model(model: &Model, scene: &Scene, frames: Range<usize>) -> Result<EvalReport> {
    let mut prob = Vec::new();
    let mut gt = Vec::new();
    let mut pred_boxes = Vec::new();
    let mut gt_boxes = Vec::new();
    for t in frames {
        let f = scene.frame(t)?;
        for (c, img) in f.images.iter().enumerate() {
            let out = infer_single_view(model, img)?;
            prob.push(out.mask);
            pred_boxes.push(out.bbox);
            gt.push(f.gt_masks[c].clone());
            gt_boxes.push(f.gt_boxes[c]);
        }
    }
    evaluate(&prob, &gt, &pred_boxes, &gt_boxes, None)
}
