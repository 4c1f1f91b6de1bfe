use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mvc_core::grid::{build_grid, fuse as fuse_maps};
use mvc_core::losses::Reduction;
use mvc_core::model::ConsistencyFlags;
use mvc_core::simulator::CameraMotion;
use mvc_core::{
    infer_single_view, load_rig, make_scene, nearest_point_to_lines, rig_focus_point, save_rig,
    train_and_evaluate, Checkpoint, EvalReport, GridSpec2D, Image, ProbMap2D, SceneConfig,
    TrainConfig, Variant,
};
use serde::Serialize;

use crate::error::CliError;
use crate::io::{self, header, BoxRow, VERSION};
use crate::manifest::RunManifest;
use crate::{
    AblateArgs, EvalArgs, FuseArgs, InferArgs, SceneArgs, SimulateArgs, TrainArgs, TrainFlags,
    TriangulateArgs,
};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_list<T: std::str::FromStr>(
    flag: &str,
    text: &str,
    sep: char,
    n: usize,
) -> Result<Vec<T>, CliError> {
    let v: Vec<T> = text
        .split(sep)
        .map(|t| t.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(format!("--{flag}: cannot parse `{text}`")))?;
    if v.len() != n {
        return Err(invalid(format!(
            "--{flag}: expected {n} values separated by `{sep}`, got `{text}`"
        )));
    }
    Ok(v)
}

fn parse_size(flag: &str, text: &str) -> Result<(usize, usize), CliError> {
    let v = parse_list::<usize>(flag, text, 'x', 2)?;
    if v.contains(&0) {
        return Err(invalid(format!("--{flag}: sizes must be positive")));
    }
    Ok((v[0], v[1]))
}

fn parse_dims(text: &str) -> Result<[usize; 3], CliError> {
    let v = parse_list::<usize>("grid-dims", text, ',', 3)?;
    Ok([v[0], v[1], v[2]])
}

fn scene_config(a: &SceneArgs) -> Result<SceneConfig, CliError> {
    if let Some(path) = &a.scene {
        let cfg: SceneConfig = serde_json::from_str(&io::read_text(path)?)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if let Some(n) = a.cams {
            if n != cfg.n_cameras {
                return Err(invalid(format!(
                    "--cams {n} disagrees with the scene's {} cameras",
                    cfg.n_cameras
                )));
            }
        }
        return Ok(cfg);
    }
    if !(a.pan >= 0.0 && a.pan.is_finite()) {
        return Err(invalid("--pan must be a non-negative number of pixels"));
    }
    let mut cfg = SceneConfig {
        n_cameras: a.cams.unwrap_or(3),
        frames: a.frames,
        seed: a.scene_seed,
        image_size: parse_size("size", &a.size)?,
        ..SceneConfig::default()
    };
    if a.pan > 0.0 {
        cfg.motion = CameraMotion::Panning {
            amplitude_px: a.pan,
            period_frames: 80.0,
        };
    }
    if a.distractors {
        cfg = cfg.with_single_view_distractors();
    }
    Ok(cfg)
}

fn train_config(
    t: &TrainFlags,
    seed: u64,
    n_cameras: usize,
    flags: ConsistencyFlags,
) -> Result<TrainConfig, CliError> {
    let cells = parse_size("cells", &t.cells)?;
    let reduction = match t.reduction.as_str() {
        "mean" => Reduction::PixelMean,
        "sum" => Reduction::Sum,
        other => {
            return Err(invalid(format!(
                "--reduction: expected `mean` or `sum`, got `{other}`"
            )))
        }
    };
    let mut cfg = TrainConfig {
        lr: t.lr,
        mask_lr: t.mask_lr,
        batch_size: t.batch_size,
        steps: t.steps,
        seed,
        n_cameras,
        grid_dims: parse_dims(&t.grid_dims)?,
        grid_side: t.grid_side,
        cells,
        flags,
        inpaint_box_gradient: !t.detached_inpaint,
        ..TrainConfig::default()
    };
    cfg.loss.reduction = reduction;
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(a: &SimulateArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let cfg = scene_config(&a.scene)?;
    let scene = make_scene(cfg.clone())?;
    let seed = Some(cfg.seed);
    let (images, masks) = (a.out.join("images"), a.out.join("masks"));
    create_dir(&images)?;
    create_dir(&masks)?;
    let rig_path = a.out.join("rig.json");
    save_rig(&scene.rig, &rig_path)?;
    let scene_path = a.out.join("scene.json");
    write_file(
        &scene_path,
        &(serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n"),
    )?;
    let mut rows = Vec::new();
    for t in 0..scene.frames() {
        let f = scene.frame(t)?;
        for c in 0..scene.rig.len() {
            io::write_png(&images.join(io::view_name(t, c)), &f.images[c], seed)?;
            io::write_mask_png(&masks.join(io::view_name(t, c)), &f.gt_masks[c], seed)?;
            rows.push(BoxRow {
                frame: t,
                cam: c,
                bbox: f.gt_boxes[c],
            });
        }
    }
    let boxes_path = a.out.join("boxes.csv");
    io::write_boxes(&boxes_path, &rows, seed)?;

    let mut m = RunManifest::new("simulate", argv, threads);
    m.config(&cfg);
    m.seed = seed;
    for p in [rig_path, scene_path, images, masks, boxes_path] {
        m.artifact(p);
    }
    m.write(&a.out)?;
    println!(
        "wrote {} frames x {} cameras to {}",
        scene.frames(),
        scene.rig.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    version: &'a str,
    seed: Option<u64>,
    #[serde(flatten)]
    report: EvalReport,
    views: usize,
}

pub fn train(a: &TrainArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    if a.tc_baseline && (a.width_consistency || a.no_center_consistency || a.no_height_consistency)
    {
        return Err(invalid(
            "--tc-baseline replaces the consistency adjustments; drop the other consistency flags",
        ));
    }
    let flags = ConsistencyFlags {
        center: !a.tc_baseline && !a.no_center_consistency,
        height: !a.tc_baseline && !a.no_height_consistency,
        width: a.width_consistency,
        triangulation_loss: a.tc_baseline,
    };
    let scene_cfg = scene_config(&a.scene)?;
    let scene = make_scene(scene_cfg.clone())?;
    let cfg = train_config(&a.train, a.seed, scene_cfg.n_cameras, flags)?;
    create_dir(&a.out)?;
    let (trainer, log, report) = train_and_evaluate(&scene, &cfg)?;
    let seed = Some(cfg.seed);

    let ck_path = a.out.join("checkpoint.json");
    Checkpoint::new(
        trainer.model().clone(),
        cfg.clone(),
        trainer.steps_done(),
        log.skipped,
    )
    .save(&ck_path)?;

    let mut csv = header(seed) + "\nstep,g,o,o_perc,l_seg,l_q,total\n";
    for (s, l) in log.steps.iter().zip(&log.losses) {
        let _ = writeln!(
            csv,
            "{s},{},{},{},{},{},{}",
            l.g, l.o, l.o_perc, l.l_seg, l.l_q, l.total
        );
    }
    let loss_path = a.out.join("losses.csv");
    write_file(&loss_path, &csv)?;

    let (_, held) = mvc_core::holdout_split(scene.frames());
    let eval_path = a.out.join("eval.json");
    let file = ReportFile {
        version: VERSION,
        seed,
        report,
        views: held.len() * scene.rig.len(),
    };
    write_file(
        &eval_path,
        &(serde_json::to_string_pretty(&file).expect("report serializes") + "\n"),
    )?;

    let mut m = RunManifest::new("train", argv, threads);
    m.config(&serde_json::json!({ "scene": scene_cfg, "train": cfg }));
    m.seed = seed;
    for p in [ck_path, loss_path, eval_path] {
        m.artifact(p);
    }
    m.write(&a.out)?;
    println!(
        "trained {} steps ({} skipped); held-out J {:.4} F {:.4} mAP@0.5 {:.4} at threshold {:.2}",
        trainer.steps_done(),
        log.skipped,
        report.j,
        report.f,
        report.map50,
        report.threshold
    );
    Ok(())
}

pub fn infer(a: &InferArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let img = io::read_png(&a.image)?;
    if img.channels() != 3 {
        return Err(invalid(format!(
            "{}: expected an RGB image",
            a.image.display()
        )));
    }
    let out = infer_single_view(&ck.model, &img)?;
    create_dir(&a.out)?;
    let seed = Some(ck.seed);
    let box_path = a.out.join("box.csv");
    let row = BoxRow {
        frame: a.frame,
        cam: a.cam,
        bbox: out.bbox,
    };
    io::write_boxes(&box_path, &[row], seed)?;
    let mask_path = a.out.join("mask.png");
    io::write_png(&mask_path, &out.mask, seed)?;

    let mut m = RunManifest::new("infer", argv, threads);
    m.config(&serde_json::json!({
        "checkpoint": a.checkpoint,
        "image": a.image,
        "frame": a.frame,
        "cam": a.cam,
    }));
    m.seed = seed;
    m.artifact(box_path);
    m.artifact(mask_path);
    m.write(&a.out)?;
    let b = out.bbox;
    println!("box {} {} {} {} cell {}", b.cu, b.cv, b.w, b.h, out.cell);
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn eval(a: &EvalArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let names = png_names(&a.gt_masks)?;
    if names.is_empty() {
        return Err(invalid(format!("{}: no PNG masks", a.gt_masks.display())));
    }
    let mut probs: Vec<Image> = Vec::with_capacity(names.len());
    let mut gts = Vec::with_capacity(names.len());
    for n in &names {
        let pred = a.pred_masks.join(n);
        if !pred.exists() {
            return Err(invalid(format!(
                "{}: missing prediction for {n}",
                a.pred_masks.display()
            )));
        }
        probs.push(io::read_png(&pred)?.channel(0));
        gts.push(io::read_mask_png(&a.gt_masks.join(n))?);
    }
    let gt_rows = io::read_boxes(&a.gt_boxes)?;
    let pred_rows = io::read_boxes(&a.pred_boxes)?;
    if gt_rows.is_empty() {
        return Err(invalid(format!("{}: no boxes", a.gt_boxes.display())));
    }
    let mut pred_boxes = Vec::with_capacity(gt_rows.len());
    for g in &gt_rows {
        let p = pred_rows
            .iter()
            .find(|p| p.frame == g.frame && p.cam == g.cam)
            .ok_or_else(|| {
                invalid(format!(
                    "no predicted box for frame {} camera {}",
                    g.frame, g.cam
                ))
            })?;
        pred_boxes.push(p.bbox);
    }
    let gt_boxes: Vec<_> = gt_rows.iter().map(|r| r.bbox).collect();
    if a.f_tol.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
        return Err(invalid("--f-tol must be a non-negative number of pixels"));
    }
    let report = mvc_core::evaluate(&probs, &gts, &pred_boxes, &gt_boxes, a.f_tol)?;
    create_dir(&a.out)?;
    let path = a.out.join("report.json");
    let file = ReportFile {
        version: VERSION,
        seed: None,
        report,
        views: names.len(),
    };
    let text = serde_json::to_string_pretty(&file).expect("report serializes");
    write_file(&path, &(text.clone() + "\n"))?;

    let mut m = RunManifest::new("eval", argv, threads);
    m.config(&serde_json::json!({
        "pred_masks": a.pred_masks,
        "gt_masks": a.gt_masks,
        "pred_boxes": a.pred_boxes,
        "gt_boxes": a.gt_boxes,
        "f_tol": a.f_tol,
    }));
    m.artifact(path);
    m.write(&a.out)?;
    println!("{text}");
    Ok(())
}

pub fn triangulate(a: &TriangulateArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let rig = load_rig(&a.rig)?;
    let text = io::read_text(&a.points)?;
    let mut pixels = Vec::new();
    for (n, line) in io::data_lines(&text) {
        let v = io::parse_numbers(&a.points, n, line)?;
        if v.len() != 2 {
            return Err(invalid(format!(
                "{}:{n}: expected `u v`",
                a.points.display()
            )));
        }
        pixels.push([v[0], v[1]]);
    }
    if pixels.len() != rig.len() {
        return Err(invalid(format!(
            "{} pixels for {} cameras",
            pixels.len(),
            rig.len()
        )));
    }
    let lines: Vec<_> = rig
        .cameras()
        .iter()
        .zip(&pixels)
        .map(|(c, p)| c.ray_through_pixel(p[0], p[1]))
        .collect();
    let r = nearest_point_to_lines(&lines)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("triangulate", argv, threads);
    m.config(&serde_json::json!({ "rig": a.rig, "points": a.points }));
    m.write(&a.out)?;
    println!("{}", header(None));
    println!("point {} {} {}", r.point[0], r.point[1], r.point[2]);
    println!("residual {}", r.residual);
    println!("condition {}", r.condition);
    Ok(())
}

fn read_map(path: &Path, width: usize, height: usize) -> Result<ProbMap2D, CliError> {
    let text = io::read_text(path)?;
    let mut rows = Vec::new();
    for (n, line) in io::data_lines(&text) {
        rows.push(io::parse_numbers(path, n, line)?);
    }
    let n_col = rows.first().map_or(0, |r| r.len());
    if n_col == 0 || rows.iter().any(|r| r.len() != n_col) {
        return Err(invalid(format!(
            "{}: rows must be non-empty and equally long",
            path.display()
        )));
    }
    let spec = GridSpec2D::new(n_col, rows.len(), width, height)?;
    ProbMap2D::new(spec, rows.concat()).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn fuse(a: &FuseArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let rig = load_rig(&a.rig)?;
    if a.maps.len() != rig.len() {
        return Err(invalid(format!(
            "{} maps for {} cameras",
            a.maps.len(),
            rig.len()
        )));
    }
    let maps: Vec<ProbMap2D> = a
        .maps
        .iter()
        .zip(rig.cameras())
        .map(|(p, c)| read_map(p, c.width(), c.height()))
        .collect::<Result<_, _>>()?;
    let center = match &a.center {
        Some(t) => {
            let v = parse_list::<f64>("center", t, ',', 3)?;
            [v[0], v[1], v[2]]
        }
        None => rig_focus_point(&rig)?,
    };
    let grid = build_grid(center, a.grid_side, parse_dims(&a.grid_dims)?)?;
    let dist = fuse_maps(&maps, &rig, &grid)?;
    let mut csv = header(None) + "\nindex,x,y,z,q\n";
    for (i, (c, q)) in grid.centers().iter().zip(&dist.q).enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{q}", c[0], c[1], c[2]);
    }
    create_dir(&a.out)?;
    let path = a.out.join("voxels.csv");
    write_file(&path, &csv)?;
    let mut m = RunManifest::new("fuse", argv, threads);
    m.config(&serde_json::json!({
        "rig": a.rig,
        "maps": a.maps,
        "grid_dims": a.grid_dims,
        "grid_side": a.grid_side,
        "center": center,
    }));
    m.artifact(path);
    m.write(&a.out)?;
    let best = dist.argmax();
    let c = grid.centers()[best];
    println!(
        "argmax voxel {best} at {} {} {} q {} ({} voxels in support)",
        c[0],
        c[1],
        c[2],
        dist.q[best],
        dist.support.len()
    );
    Ok(())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub fn ablate(a: &AblateArgs, argv: &[String], threads: usize) -> Result<(), CliError> {
    let mut variants = vec![Variant::Full];
    for key in &a.variants {
        let v = Variant::from_key(key.trim()).ok_or_else(|| {
            invalid(format!(
                "--variants: unknown variant `{key}` (use full, vc, hc, wc, tc)"
            ))
        })?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if a.seeds.is_empty() {
        return Err(invalid("--seeds: need at least one seed"));
    }
    let scene_cfg = scene_config(&a.scene)?;
    let scene = make_scene(scene_cfg.clone())?;
    let configs: Vec<(Variant, TrainConfig)> = variants
        .iter()
        .flat_map(|&v| a.seeds.iter().map(move |&s| (v, s)))
        .map(|(v, s)| {
            Ok((
                v,
                train_config(&a.train, s, scene_cfg.n_cameras, v.flags())?,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    create_dir(&a.out)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EvalReport, CliError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((v, cfg)) = configs.get(i) else {
                    break;
                };
                let r = train_and_evaluate(&scene, cfg)
                    .map(|(_, _, rep)| rep)
                    .map_err(CliError::from);
                if let Ok(rep) = &r {
                    eprintln!(
                        "{} seed {}: J {:.4} F {:.4} mAP {:.4}",
                        v.label(),
                        cfg.seed,
                        rep.j,
                        rep.f,
                        rep.map50
                    );
                }
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let reports: Vec<EvalReport> = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_, _>>()?;

    let mut csv = header(None) + "\nvariant,seed,j,f,map50,threshold\n";
    for ((v, cfg), r) in configs.iter().zip(&reports) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            v.key(),
            cfg.seed,
            r.j,
            r.f,
            r.map50,
            r.threshold
        );
    }
    let path = a.out.join("ablation.csv");
    write_file(&path, &csv)?;

    let mut m = RunManifest::new("ablate", argv, threads);
    m.config(&serde_json::json!({
        "scene": scene_cfg,
        "train": configs[0].1,
        "variants": variants.iter().map(|v| v.key()).collect::<Vec<_>>(),
        "seeds": a.seeds,
    }));
    m.artifact(path);
    m.write(&a.out)?;

    println!("{:<14} {:>15} {:>15} {:>15}", "Method", "J", "F", "mAP@0.5");
    let k = a.seeds.len();
    for (i, v) in variants.iter().enumerate() {
        let rs = &reports[i * k..(i + 1) * k];
        let cell = |f: fn(&EvalReport) -> f64| {
            let (m, sd) = mean_sd(&rs.iter().map(f).collect::<Vec<_>>());
            format!("{m:.3} ± {sd:.3}")
        };
        println!(
            "{:<14} {:>15} {:>15} {:>15}",
            v.label(),
            cell(|r| r.j),
            cell(|r| r.f),
            cell(|r| r.map50)
        );
    }
    Ok(())
}
