use std::path::Path;
use std::process::{Command, Output};

fn mvc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvc"))
        .args(args)
        .current_dir(dir)
        .env_remove("MVC_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, out: &str, frames: &str) {
    let o = mvc(&["simulate", "--out", out, "--frames", frames], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let o = mvc(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_documents_every_flag() {
    let d = tempfile::tempdir().unwrap();
    let o = mvc(&["--help"], d.path());
    assert_eq!(o.status.code(), Some(0));
    for sub in [
        "simulate",
        "train",
        "infer",
        "eval",
        "triangulate",
        "fuse",
        "ablate",
    ] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
    assert!(stdout(&o).contains("MVC_THREADS"));
    let o = mvc(&["train", "--help"], d.path());
    let text = stdout(&o);
    for flag in [
        "--cams",
        "--grid-dims",
        "--steps",
        "--seed",
        "--no-center-consistency",
        "--no-height-consistency",
        "--width-consistency",
        "--tc-baseline",
    ] {
        let line = text
            .lines()
            .find(|l| l.trim_start().starts_with(flag))
            .unwrap_or_else(|| panic!("{flag}"));
        assert!(line.split_whitespace().count() > 2, "undocumented {flag}");
    }
}

#[test]
fn simulate_writes_every_artifact_deterministically() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "a", "3");
    simulate(d.path(), "b", "3");
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for f in [
        "rig.json",
        "scene.json",
        "boxes.csv",
        "images/f0002_c1.png",
        "masks/f0000_c2.png",
    ] {
        let (x, y) = (
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
        );
        assert_eq!(x, y, "{f}");
    }
    let boxes = std::fs::read_to_string(a.join("boxes.csv")).unwrap();
    assert!(boxes.starts_with("# mvc ") && boxes.lines().next().unwrap().contains("seed=7"));
    assert_eq!(boxes.lines().count(), 2 + 3 * 3);
    let m = manifest(&a);
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 5);
    assert!(m["version"].is_string() && m["config"]["n_cameras"] == 3);
}

#[test]
fn triangulate_prints_point_and_residual() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s", "1");
    let boxes = std::fs::read_to_string(d.path().join("s/boxes.csv")).unwrap();
    let pts: String = boxes
        .lines()
        .skip(2)
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            format!("{} {}\n", v[2], v[3])
        })
        .collect();
    std::fs::write(d.path().join("pts.txt"), pts).unwrap();
    let o = mvc(
        &["triangulate", "--rig", "s/rig.json", "--points", "pts.txt"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# mvc "));
    let point: Vec<f64> = text
        .lines()
        .find_map(|l| l.strip_prefix("point "))
        .unwrap()
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(point.len(), 3);
    // The subject stays within a meter or so of the origin.
    assert!(point.iter().all(|x| x.abs() < 2.0), "{point:?}");
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("residual "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..1e-2).contains(&residual));
    assert_eq!(manifest(d.path())["subcommand"], "triangulate");
}

#[test]
fn validation_errors_exit_1_with_one_line() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s", "1");
    std::fs::write(d.path().join("pts.txt"), "1 2\n3 4\n").unwrap();
    let o = mvc(
        &["triangulate", "--rig", "s/rig.json", "--points", "pts.txt"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    let o = mvc(
        &[
            "triangulate",
            "--rig",
            "missing.json",
            "--points",
            "pts.txt",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    let o = mvc(
        &[
            "train",
            "--out",
            "t",
            "--grid-dims",
            "10,10",
            "--steps",
            "1",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grid-dims"));

    let o = Command::new(env!("CARGO_BIN_EXE_mvc"))
        .args(["triangulate", "--rig", "s/rig.json", "--points", "pts.txt"])
        .current_dir(d.path())
        .env("MVC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MVC_THREADS"));
}

#[test]
fn fuse_writes_a_normalized_voxel_table() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s", "1");
    let mut maps = Vec::new();
    for c in 0..3 {
        let rows: Vec<String> = (0..8)
            .map(|r| {
                (0..8)
                    .map(|k| {
                        if (1..7).contains(&r) && (1..7).contains(&k) {
                            "0.027777777777777776"
                        } else {
                            "0"
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let name = format!("m{c}.txt");
        std::fs::write(d.path().join(&name), rows.join("\n")).unwrap();
        maps.push(name);
    }
    let o = mvc(
        &[
            "fuse",
            "--rig",
            "s/rig.json",
            "--maps",
            &maps.join(","),
            "--out",
            "f",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("f/voxels.csv")).unwrap();
    let q: Vec<f64> = text
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(q.len(), 1000);
    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let o = mvc(
        &[
            "fuse",
            "--rig",
            "s/rig.json",
            "--maps",
            "m0.txt,m1.txt",
            "--out",
            "f",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_infer_eval_round_trip() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s", "10");
    let o = mvc(
        &[
            "train",
            "--scene",
            "s/scene.json",
            "--steps",
            "3",
            "--out",
            "t",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let losses = std::fs::read_to_string(d.path().join("t/losses.csv")).unwrap();
    assert!(losses.lines().next().unwrap().contains("seed=7"));
    assert_eq!(
        losses.lines().nth(1),
        Some("step,g,o,o_perc,l_seg,l_q,total")
    );
    assert_eq!(manifest(&d.path().join("t"))["config"]["train"]["steps"], 3);

    let o = mvc(
        &[
            "infer",
            "--checkpoint",
            "t/checkpoint.json",
            "--image",
            "s/images/f0009_c0.png",
            "--out",
            "i",
            "--frame",
            "9",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = std::fs::read_to_string(d.path().join("i/box.csv")).unwrap();
    assert!(row.lines().nth(2).unwrap().starts_with("9,0,"));
    assert!(d.path().join("i/mask.png").exists());

    std::fs::create_dir(d.path().join("pred")).unwrap();
    std::fs::copy(
        d.path().join("i/mask.png"),
        d.path().join("pred/f0009_c0.png"),
    )
    .unwrap();
    std::fs::create_dir(d.path().join("gt")).unwrap();
    std::fs::copy(
        d.path().join("s/masks/f0009_c0.png"),
        d.path().join("gt/f0009_c0.png"),
    )
    .unwrap();
    let gt_row: String = std::fs::read_to_string(d.path().join("s/boxes.csv"))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("9,0,"))
        .collect();
    std::fs::write(
        d.path().join("gt.csv"),
        format!("frame,cam,cu,cv,w,h\n{gt_row}\n"),
    )
    .unwrap();
    let o = mvc(
        &[
            "eval",
            "--pred-masks",
            "pred",
            "--gt-masks",
            "gt",
            "--pred-boxes",
            "i/box.csv",
            "--gt-boxes",
            "gt.csv",
            "--out",
            "e",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("e/report.json")).unwrap())
            .unwrap();
    for k in ["j", "f", "map50", "threshold"] {
        assert!(r[k].as_f64().is_some(), "{k}");
    }
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s", "2");
    let o = mvc(
        &[
            "eval",
            "--pred-masks",
            "s/masks",
            "--gt-masks",
            "s/masks",
            "--pred-boxes",
            "s/boxes.csv",
            "--gt-boxes",
            "s/boxes.csv",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["j"], 1.0);
    assert_eq!(r["f"], 1.0);
    assert_eq!(r["map50"], 1.0);
    assert_eq!(r["views"], 6);
}

#[test]
fn ablate_prints_one_row_per_variant() {
    let d = tempfile::tempdir().unwrap();
    let o = mvc(
        &[
            "ablate",
            "--variants",
            "vc,tc",
            "--seeds",
            "1,2",
            "--steps",
            "2",
            "--frames",
            "10",
            "--out",
            "ab",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].contains("J") && rows[0].contains("mAP"));
    assert!(rows[1].starts_with("Ours "));
    assert!(rows[2].starts_with("Ours w/o VC"));
    assert!(rows[3].starts_with("Ours w/ TC"));
    let csv = std::fs::read_to_string(d.path().join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 3 * 2);

    let o = mvc(&["ablate", "--variants", "xx", "--steps", "1"], d.path());
    assert_eq!(o.status.code(), Some(1));
}
