//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad input, 3 extraction or line-geometry
//! failure, 4 calibration failure (degenerate or too few views).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::calib::{calibrate, CalibConfig, CalibrationDataset, DistortionInit};
use crate::distortion::{undistort_image, RadialModel};
use crate::error::Error;
use crate::formats::{
    parse_corner_file, parse_pose_scene, parse_result_file, parse_scene_config, write_atomic, write_corner_file,
    write_result_file, write_scene_config, ImageCorners, ResultFile,
};
use crate::imaging::{extract_corners, flatten_corners, load_pgm, write_pgm, ExtractConfig};
use crate::optim::OptimConfig;
use crate::pose::align_from_line;
use crate::synth::{make_target, render_pgm, synth_views, SceneConfig, TargetSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_EXTRACTION: i32 = 3;
pub const EXIT_CALIBRATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "planecal", version, about = "Planar-target camera calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// `COLSxROWS`, e.g. `8x8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxGrid {
    pub x: usize,
    pub y: usize,
}

impl std::str::FromStr for BoxGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
        let x: usize = a.trim().parse().map_err(|_| format!("bad column count {a:?}"))?;
        let y: usize = b.trim().parse().map_err(|_| format!("bad row count {b:?}"))?;
        if x == 0 || y == 0 {
            return Err("box counts must be positive".into());
        }
        Ok(BoxGrid { x, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Start the optimizer with zero distortion.
    Zero,
    /// Start from the linear least-squares distortion estimate.
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find box corners in PGM images and write a corner file.
    Extract {
        /// Input images (PGM, P2 or P5).
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Foreground is intensity below this value.
        #[arg(long, default_value_t = 150)]
        threshold: u8,
        /// Box grid of the target, columns x rows.
        #[arg(long, default_value = "8x8")]
        boxes: BoxGrid,
        /// Scan-line split distance, pixels.
        #[arg(long, default_value_t = 5.0)]
        scan_threshold: f64,
        /// Use the binary mask only, without gray-level edge refinement.
        #[arg(long)]
        no_subpixel: bool,
        /// Output corner file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate from a corner file and write a result file.
    Calibrate {
        #[arg(long)]
        corners: PathBuf,
        /// Box grid of the target, columns x rows.
        #[arg(long, default_value = "8x8")]
        boxes: BoxGrid,
        /// Box side, cm.
        #[arg(long, default_value_t = 1.3)]
        side: f64,
        /// Gap between neighboring boxes, cm.
        #[arg(long, default_value_t = 1.3)]
        gap: f64,
        /// Radial model: 1 = k1 r² + k2 r⁴, 2 = k1 r², 3 = k1 r + k2 r².
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        model: u8,
        /// Initial distortion for the optimizer.
        #[arg(long, value_enum, default_value_t = InitArg::Zero)]
        init: InitArg,
        /// Step tolerance (infinity norm of the parameter step).
        #[arg(long, default_value_t = 1e-5)]
        tol_x: f64,
        /// Relative objective-change tolerance.
        #[arg(long, default_value_t = 1e-5)]
        tol_f: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Output result file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append the optimizer iteration log to the result.
        #[arg(long)]
        trace: bool,
    },
    /// Remove radial distortion from a PGM image.
    Undistort {
        image: PathBuf,
        /// Result file with the camera parameters.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic data set: PGM views, corner file and ground truth.
    Synth {
        /// Scene config (key = value); built-in default scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Correct a vehicle's yaw and position from one observed ground line.
    Pose {
        /// Pose scene file.
        #[arg(long)]
        scene: PathBuf,
        /// Result file with the camera parameters.
        #[arg(long)]
        result: PathBuf,
    },
}

/// A failure with its exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::WrongBoxCount { .. }
        | Error::TooFewResponses { .. }
        | Error::NotSimpleBoundary
        | Error::DegenerateLine
        | Error::RayParallelToPlane => EXIT_EXTRACTION,
        Error::Io(_)
        | Error::Parse(_)
        | Error::MalformedPgm(_)
        | Error::InvalidInput(_)
        | Error::PoseOutOfFrame { .. }
        | Error::SingularIntrinsics => EXIT_BAD_INPUT,
        _ => EXIT_CALIBRATION,
    }
}

fn fail(context: impl std::fmt::Display) -> impl FnOnce(Error) -> Failure {
    move |e| Failure::new(exit_code(&e), format!("{context}: {e}"))
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> std::result::Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(fail(p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_extract(
    images: &[PathBuf],
    cfg: &ExtractConfig,
    out: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let mut all = Vec::with_capacity(images.len());
    for path in images {
        let bytes = std::fs::read(path).map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", path.display())))?;
        let img = load_pgm(&bytes).map_err(fail(path.display()))?;
        let boxes = extract_corners(&img, cfg).map_err(fail(path.display()))?;
        let source = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        all.push(ImageCorners {
            source,
            points: flatten_corners(&boxes),
        });
    }
    let text = write_corner_file(&all).map_err(fail("corner file"))?;
    emit(out, &text)
}

fn load_result(path: &Path) -> std::result::Result<ResultFile, Failure> {
    parse_result_file(&read_text(path)?).map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", path.display())))
}

fn cmd_calibrate(
    corners: &Path,
    target: &TargetSpec,
    cfg: &CalibConfig,
    out: Option<&Path>,
    trace: bool,
) -> std::result::Result<(), Failure> {
    let images = parse_corner_file(&read_text(corners)?).map_err(fail(corners.display()))?;
    let world = make_target(target).map_err(fail("target"))?;
    if images.len() < 3 {
        return Err(Failure::new(
            EXIT_CALIBRATION,
            format!("{}: need at least 3 views, got {}", corners.display(), images.len()),
        ));
    }
    if let Some(im) = images.iter().find(|im| im.points.len() != world.len()) {
        return Err(Failure::new(
            EXIT_BAD_INPUT,
            format!(
                "{}: image {} has {} corners but the target has {}",
                corners.display(),
                im.source,
                im.points.len(),
                world.len()
            ),
        ));
    }
    let data = CalibrationDataset::new(world, images.into_iter().map(|im| im.points).collect())
        .map_err(fail(corners.display()))?;
    let result = calibrate(&data, cfg).map_err(|e| {
        let msg = match e.root() {
            Error::DegenerateViews(ratio) => {
                format!("degenerate views: conditioning ratio {ratio:.3e} (planes too close to parallel?)")
            }
            _ => format!("calibration failed: {e}"),
        };
        Failure::new(exit_code(&e), msg)
    })?;

    let file = ResultFile {
        intrinsics: result.intrinsics,
        distortion: result.distortion,
        objective: Some(result.objective),
        before: Some((result.initial.intrinsics, result.initial.distortion, result.initial.objective)),
        views: result.views.clone(),
    };
    let mut text = write_result_file(&file);
    if trace {
        writeln!(text, "# stop: {:?}", result.report.stop).expect("string write");
        for line in result.report.trace_table().lines() {
            writeln!(text, "# {line}").expect("string write");
        }
    }
    if result.report.hit_iteration_cap() {
        eprintln!("warning: optimizer stopped at the iteration cap");
    }
    emit(out, &text)?;
    if out.is_some() {
        println!("objective before {:.6} after {:.6}", result.initial.objective, result.objective);
    }
    Ok(())
}

fn cmd_undistort(image: &Path, result: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let params = load_result(result)?;
    let bytes = std::fs::read(image).map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", image.display())))?;
    let img = load_pgm(&bytes).map_err(fail(image.display()))?;
    let fixed = undistort_image(&img, &params.intrinsics, &params.distortion).map_err(fail(image.display()))?;
    write_atomic(out, &write_pgm(&fixed)).map_err(fail(out.display()))
}

fn cmd_synth(config: Option<&Path>, out_dir: &Path) -> std::result::Result<(), Failure> {
    let cfg = match config {
        Some(p) => parse_scene_config(&read_text(p)?).map_err(fail(p.display()))?,
        None => SceneConfig::default(),
    };
    let scene = synth_views(&cfg).map_err(fail("scene"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("{}: {e}", out_dir.display())))?;
    let mut images = Vec::with_capacity(cfg.views.len());
    for (i, pts) in scene.observed.iter().enumerate() {
        let name = format!("view_{i}.pgm");
        let img = render_pgm(&cfg, i).map_err(fail("scene"))?;
        let path = out_dir.join(&name);
        write_atomic(&path, &write_pgm(&img)).map_err(fail(path.display()))?;
        images.push(ImageCorners {
            source: name,
            points: pts.clone(),
        });
    }
    let corners = write_corner_file(&images).map_err(fail("corner file"))?;
    let truth = write_result_file(&ResultFile {
        intrinsics: cfg.intrinsics,
        distortion: cfg.distortion,
        objective: None,
        before: None,
        views: cfg.views.clone(),
    });
    for (name, text) in [("corners.txt", corners), ("truth.txt", truth), ("scene.txt", write_scene_config(&cfg))] {
        let path = out_dir.join(name);
        write_atomic(&path, text.as_bytes()).map_err(fail(path.display()))?;
    }
    Ok(())
}

fn cmd_pose(scene: &Path, result: &Path) -> std::result::Result<(), Failure> {
    let params = load_result(result)?;
    let s = parse_pose_scene(&read_text(scene)?).map_err(fail(scene.display()))?;
    let c = align_from_line(&s.line, &params.intrinsics, &params.distortion, &s.assumed).map_err(fail(scene.display()))?;
    println!("delta_theta = {:.6}", c.delta_theta.to_degrees());
    println!("t1 = {:.6} {:.6} {:.6}", c.t1.x, c.t1.y, c.t1.z);
    Ok(())
}

fn dispatch(cmd: &Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Extract {
            images,
            threshold,
            boxes,
            scan_threshold,
            no_subpixel,
            out,
        } => {
            if !(*scan_threshold > 0.0) {
                return Err(Failure::new(EXIT_BAD_INPUT, "--scan-threshold must be positive"));
            }
            let cfg = ExtractConfig {
                threshold: *threshold,
                boxes_x: boxes.x,
                boxes_y: boxes.y,
                scan_threshold: *scan_threshold,
                subpixel: !no_subpixel,
                ..Default::default()
            };
            cmd_extract(images, &cfg, out.as_deref())
        }
        Command::Calibrate {
            corners,
            boxes,
            side,
            gap,
            model,
            init,
            tol_x,
            tol_f,
            max_iter,
            out,
            trace,
        } => {
            let target = TargetSpec {
                boxes_x: boxes.x,
                boxes_y: boxes.y,
                side: *side,
                gap: *gap,
            };
            let cfg = CalibConfig {
                model: RadialModel::from_tag(*model).expect("range-checked by clap"),
                distortion_init: match init {
                    InitArg::Zero => DistortionInit::Zero,
                    InitArg::Linear => DistortionInit::Linear,
                },
                optim: OptimConfig {
                    tol_x: *tol_x,
                    tol_f: *tol_f,
                    max_iter: *max_iter,
                },
                ..Default::default()
            };
            cmd_calibrate(corners, &target, &cfg, out.as_deref(), *trace)
        }
        Command::Undistort { image, result, out } => cmd_undistort(image, result, out),
        Command::Synth { config, out_dir } => cmd_synth(config.as_deref(), out_dir),
        Command::Pose { scene, result } => cmd_pose(scene, result),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
