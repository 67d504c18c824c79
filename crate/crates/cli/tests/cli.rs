//! End-to-end checks of the command-line surface: exit codes, file
//! formats, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_objmap"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("objmap-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

/// Small scene config keeping integration runs quick.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("scene.toml");
    std::fs::write(
        &path,
        r#"
seed = 5

[trajectory]
frames = 6
sweep_deg = 150.0

[[objects]]
radii = [0.9, 0.7, 0.5]

[optim]
pose_iterations = 30
shape_iterations = 60
camera_iterations = 10
"#,
    )
    .unwrap();
    path
}

#[test]
fn gradcheck_passes_and_reports_blocks() {
    let output = bin().args(["gradcheck", "--samples", "30", "--seed", "7"]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = stdout(&output);
    for block in [
        "camera_rotation",
        "camera_translation",
        "object_rotation",
        "object_translation",
        "vertex",
        "mask_loss",
        "kps_loss",
        "curvature",
    ] {
        assert!(text.contains(block), "missing block {block} in:\n{text}");
    }
    assert!(text.contains("samples"), "report must carry per-block sample counts");
    assert!(text.contains("gradcheck: PASS"));
}

#[test]
fn gradcheck_sign_flip_exits_nonzero_naming_the_block() {
    let output = bin()
        .args(["gradcheck", "--samples", "10", "--flip-block", "object_rotation"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let text = stdout(&output);
    assert!(text.contains("gradcheck: FAIL (object_rotation)"), "{text}");
}

#[test]
fn render_writes_centered_mask_and_matching_csv() {
    let dir = temp_dir("render");
    let config = dir.join("scene.toml");
    // A sphere straight ahead of an explicit identity-rotation camera.
    std::fs::write(
        &config,
        r#"
seed = 1

[trajectory]
kind = "explicit"
[[trajectory.poses]]
t = 0.0
position = [0.0, 0.0, -5.0]
axis_angle = [0.0, 0.0, 0.0]

[[objects]]
radii = [0.8, 0.8, 0.8]
position = [0.0, 0.0, 0.0]
"#,
    )
    .unwrap();
    let out = dir.join("run");
    let output = bin()
        .args(["render", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let pgm = std::fs::read(out.join("det_000.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n128 128\n255\n"));
    let pixels = &pgm[pgm.len() - 128 * 128..];
    // Disk-like mask centered on the principal point.
    assert_eq!(pixels[64 * 128 + 64], 255, "center pixel must be set");
    let area = pixels.iter().filter(|&&p| p == 255).count() as f64;
    let radius_px = (area / std::f64::consts::PI).sqrt();
    for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
        let x = (64.0 + dx * (radius_px - 3.0)) as usize;
        let y = (64.0 + dy * (radius_px - 3.0)) as usize;
        assert_eq!(pixels[y * 128 + x], 255, "disk should extend to ({x},{y})");
    }
    let csv = std::fs::read_to_string(out.join("keypoints.csv")).unwrap();
    assert!(csv.starts_with("det_id,class,kp_id,u_pix,v_pix,q,bbox_x,bbox_y,bbox_w,bbox_h,u_det"));
    assert!(out.join("manifest.json").exists());

    // Identical bytes on a rerun.
    let out2 = dir.join("run2");
    bin().args(["render", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(
        std::fs::read(out.join("det_000.pgm")).unwrap(),
        std::fs::read(out2.join("det_000.pgm")).unwrap()
    );
    assert_eq!(
        std::fs::read(out.join("keypoints.csv")).unwrap(),
        std::fs::read(out2.join("keypoints.csv")).unwrap()
    );
}

#[test]
fn simulate_dumps_per_frame_observations() {
    let dir = temp_dir("simulate");
    let config = small_config(&dir);
    let out = dir.join("run");
    let output = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--frames", "4", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    for frame in 0..4 {
        let frame_dir = out.join(format!("frame_{frame:04}"));
        assert!(frame_dir.join("keypoints.csv").exists());
        assert!(frame_dir.join("det_000.pgm").exists());
        let csv = std::fs::read_to_string(frame_dir.join("keypoints.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "det_id,class,kp_id,u_pix,v_pix,q,bbox_x,bbox_y,bbox_w,bbox_h,u_det");
        // One row per (detection, keypoint): 12 keypoints of one object.
        assert_eq!(csv.lines().count(), 13);
    }
}

#[test]
fn map_emits_deterministic_iou_table_and_meshes() {
    let dir = temp_dir("map");
    let config = small_config(&dir);
    let run = |out: &Path| {
        let output = bin()
            .args(["map", "--config"])
            .arg(&config)
            .args(["--views", "2", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    };
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run(&out_a);
    run(&out_b);

    let csv = std::fs::read_to_string(out_a.join("iou_vs_views.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "views,object,track,initial_voxel_iou,voxel_iou,mean_mask_iou"
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("1,")));
    assert!(rows.iter().any(|r| r.starts_with("2,")));
    assert!(out_a.join("object_000.obj").exists());
    assert!(out_a.join("object_000.pose.txt").exists());
    let pose_line = std::fs::read_to_string(out_a.join("object_000.pose.txt")).unwrap();
    assert_eq!(pose_line.trim().split_whitespace().count(), 8);

    assert_eq!(
        std::fs::read(out_a.join("iou_vs_views.csv")).unwrap(),
        std::fs::read(out_b.join("iou_vs_views.csv")).unwrap(),
        "rerun with the same seed must be byte-identical"
    );
    assert_eq!(
        std::fs::read(out_a.join("object_000.obj")).unwrap(),
        std::fs::read(out_b.join("object_000.obj")).unwrap()
    );
}

#[test]
fn localize_writes_trajectories_and_ate_curve() {
    let dir = temp_dir("localize");
    let out = dir.join("run");
    let output = bin()
        .args(["localize", "--frames", "8", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    for name in ["groundtruth.txt", "odometry.txt", "optimized.txt"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(text.lines().count(), 8, "{name} must have one line per frame");
        for line in text.lines() {
            assert_eq!(line.split_whitespace().count(), 8, "t tx ty tz qx qy qz qw");
        }
    }
    let csv = std::fs::read_to_string(out.join("ate_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iteration,ate");
    assert!(lines.count() >= 2, "one ATE row per optimization iteration");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["metrics"]["ate_odometry"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["command"], "localize");
    assert_eq!(manifest["seed"].as_u64().unwrap(), 11);
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = temp_dir("badconfig");
    let config = dir.join("broken.toml");
    std::fs::write(&config, "seed = \"not a number\"\n").unwrap();
    let output = bin()
        .args(["map", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    let missing = dir.join("does-not-exist.toml");
    let output = bin()
        .args(["localize", "--config"])
        .arg(&missing)
        .args(["--out"])
        .arg(dir.join("out2"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn existing_output_directory_is_never_overwritten() {
    let dir = temp_dir("noclobber");
    let out = dir.join("run");
    let args = |out: &Path| {
        let mut cmd = bin();
        cmd.args(["render", "--out"]).arg(out);
        cmd
    };
    assert!(args(&out).output().unwrap().status.success());
    let manifest_before = std::fs::read(out.join("manifest.json")).unwrap();
    assert!(args(&out).output().unwrap().status.success());
    // The first run's outputs are untouched; the rerun landed elsewhere.
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), manifest_before);
    let siblings = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("run")
        })
        .count();
    assert_eq!(siblings, 2, "second run must create a suffixed directory");
}
