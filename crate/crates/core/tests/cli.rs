use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{Matrix3, Vector3};

use planecal::distortion::{DistortionCoeffs, RadialModel};
use planecal::formats::{write_corner_file, write_pose_scene, write_result_file, write_scene_config, ImageCorners, PoseScene, ResultFile};
use planecal::geometry::{CameraIntrinsics, Point3W, Rotation3};
use planecal::imaging::{write_pgm, GrayImage};
use planecal::pose::{observe, CameraPose, LineObservation};
use planecal::synth::{synth_views, tilted_view, SceneConfig};

fn planecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planecal")).args(args).output().expect("spawn planecal")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn odis() -> CameraIntrinsics {
    CameraIntrinsics::new(260.7636, 255.1465, -0.2739, 140.0564, 113.1723)
}

fn result_file(d: DistortionCoeffs) -> String {
    write_result_file(&ResultFile {
        intrinsics: odis(),
        distortion: d,
        objective: None,
        before: None,
        views: Vec::new(),
    })
}

fn gradient_image() -> GrayImage {
    let (w, h) = (64, 48);
    let data = (0..w * h).map(|i| ((i % w) * 3 + (i / w) * 2) as u8).collect();
    GrayImage::new(w, h, data).unwrap()
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&planecal(&["--help"])), 0);
    assert_eq!(code(&planecal(&["calibrate", "--corners", "x", "--model", "4"])), 2);
    assert_eq!(code(&planecal(&["frobnicate"])), 2);
}

#[test]
fn blank_image_is_an_extraction_failure() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("blank.pgm");
    std::fs::write(&img, write_pgm(&GrayImage::filled(80, 60, 220))).unwrap();
    let out = planecal(&["extract", s(&img)]);
    assert_eq!(code(&out), 3);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_and_malformed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pgm");
    assert_eq!(code(&planecal(&["extract", s(&missing)])), 2);

    let bad_pgm = dir.path().join("bad.pgm");
    std::fs::write(&bad_pgm, b"P5\n4 4\n255\n\x00\x01").unwrap();
    assert_eq!(code(&planecal(&["extract", s(&bad_pgm)])), 2);

    let img = dir.path().join("img.pgm");
    std::fs::write(&img, write_pgm(&gradient_image())).unwrap();
    let corrupt = dir.path().join("result.txt");
    std::fs::write(&corrupt, "alpha = 260.0\nbeta = lots\n").unwrap();
    let out = dir.path().join("out.pgm");
    assert_eq!(code(&planecal(&["undistort", s(&img), "--result", s(&corrupt), "--out", s(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn two_views_cannot_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SceneConfig::default();
    cfg.views.truncate(2);
    let scene = synth_views(&cfg).unwrap();
    let images: Vec<ImageCorners> = scene
        .exact
        .iter()
        .enumerate()
        .map(|(i, pts)| ImageCorners {
            source: format!("view_{i}.pgm"),
            points: pts.clone(),
        })
        .collect();
    let corners = dir.path().join("corners.txt");
    std::fs::write(&corners, write_corner_file(&images).unwrap()).unwrap();
    let result = dir.path().join("result.txt");
    let out = planecal(&["calibrate", "--corners", s(&corners), "--out", s(&result)]);
    assert_eq!(code(&out), 4);
    assert!(!result.exists());
}

#[test]
fn out_of_frame_scene_is_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SceneConfig::default();
    cfg.views[1] = tilted_view(&cfg.target, 0.0, 0.2, 5.0);
    let path = dir.path().join("scene.cfg");
    std::fs::write(&path, write_scene_config(&cfg)).unwrap();
    let out_dir = dir.path().join("synth");
    let out = planecal(&["synth", "--config", s(&path), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains('1'));
}

#[test]
fn zero_distortion_undistort_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.pgm");
    let bytes = write_pgm(&gradient_image());
    std::fs::write(&img, &bytes).unwrap();
    let result = dir.path().join("result.txt");
    std::fs::write(&result, result_file(DistortionCoeffs::none(RadialModel::Model1))).unwrap();
    let out = dir.path().join("out.pgm");
    assert_eq!(code(&planecal(&["undistort", s(&img), "--result", s(&result), "--out", s(&out)])), 0);
    assert_eq!(std::fs::read(&out).unwrap(), bytes);
}

fn vehicle_pose() -> CameraPose {
    let down = 30f64.to_radians();
    let rot = Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, -down.sin(), down.cos(), //
        0.0, -down.cos(), -down.sin(),
    );
    CameraPose::new(Rotation3::new(rot).unwrap(), Vector3::new(0.0, 0.0, 100.0))
}

fn field(out: &Output, key: &str) -> Vec<f64> {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with(key)).expect("key in output");
    line.split('=').nth(1).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn pose_from_consistent_line_needs_no_correction() {
    let dir = tempfile::tempdir().unwrap();
    let d = DistortionCoeffs::new(RadialModel::Model1, -0.3554, 0.1633);
    let pose = vehicle_pose();
    let (a, b) = (Point3W::new(-20.0, 180.0, 0.0), Point3W::new(25.0, 200.0, 0.0));
    let mut scene = PoseScene {
        assumed: pose,
        line: LineObservation {
            world_a: a,
            world_b: b,
            image_a: observe(a, &pose, &odis(), &d).unwrap(),
            image_b: observe(b, &pose, &odis(), &d).unwrap(),
        },
    };
    let result = dir.path().join("result.txt");
    std::fs::write(&result, result_file(d)).unwrap();
    let scene_path = dir.path().join("pose.txt");
    std::fs::write(&scene_path, write_pose_scene(&scene)).unwrap();

    let out = planecal(&["pose", "--scene", s(&scene_path), "--result", s(&result)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(field(&out, "delta_theta")[0].abs() < 1e-3);
    let t1 = field(&out, "t1");
    assert!((t1[0]).abs() < 1e-2 && (t1[1]).abs() < 1e-2 && (t1[2] - 100.0).abs() < 1e-2, "{t1:?}");

    scene.line.world_b = scene.line.world_a;
    std::fs::write(&scene_path, write_pose_scene(&scene)).unwrap();
    assert_eq!(code(&planecal(&["pose", "--scene", s(&scene_path), "--result", s(&result)])), 3);
}
