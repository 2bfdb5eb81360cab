//! Text file formats: corner lists, calibration results, synthetic scene
//! configs and pose scenes. Numbers are written with six decimals; angles
//! in files are degrees.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::distortion::{DistortionCoeffs, RadialModel};
use crate::error::{Error, Result};
use crate::geometry::{euler_zyz_lenient, rotation_from_euler_zyz, CameraIntrinsics, EulerZYZ, Extrinsics, Point2Px, Point3W};
use crate::pose::{CameraPose, LineObservation};
use crate::synth::{SceneConfig, TargetSpec};

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let x: f64 = s.parse().map_err(|_| parse_err(line, format!("bad number {s:?}")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(parse_err(line, format!("non-finite number {s:?}")))
    }
}

fn parse_floats<const N: usize>(s: &str, line: usize) -> Result<[f64; N]> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(line, format!("expected {N} numbers, got {:?}", s)));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_f64(p, line)?;
    }
    Ok(out)
}

/// `key = value` lines, skipping blanks and `#` comments. Yields 1-based
/// line numbers.
fn key_values(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str)>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) => Ok((i + 1, k.trim(), v.trim())),
            None => Err(parse_err(i + 1, format!("expected key = value, got {line:?}"))),
        })
    })
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Corners of one image in target order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCorners {
    pub source: String,
    pub points: Vec<Point2Px>,
}

/// ```text
/// images N points n
/// image 0 view_0.pgm
/// 12.500000 40.250000
/// ...
/// ```
pub fn write_corner_file(images: &[ImageCorners]) -> Result<String> {
    let n = images.first().map_or(0, |im| im.points.len());
    if images.iter().any(|im| im.points.len() != n) {
        return Err(Error::InvalidInput("images have different corner counts".into()));
    }
    let mut out = format!("images {} points {n}\n", images.len());
    for (i, im) in images.iter().enumerate() {
        writeln!(out, "image {i} {}", im.source).expect("string write");
        for p in &im.points {
            writeln!(out, "{:.6} {:.6}", p.u, p.v).expect("string write");
        }
    }
    Ok(out)
}

pub fn parse_corner_file(text: &str) -> Result<Vec<ImageCorners>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (ln, header) = lines.next().ok_or_else(|| Error::Parse("empty corner file".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let (count, points) = match h.as_slice() {
        ["images", n, "points", m] => (
            n.parse::<usize>().map_err(|_| parse_err(ln, "bad image count"))?,
            m.parse::<usize>().map_err(|_| parse_err(ln, "bad point count"))?,
        ),
        _ => return Err(parse_err(ln, "expected `images N points n`")),
    };
    let mut images = Vec::with_capacity(count);
    for index in 0..count {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing block for image {index}")))?;
        let source = match line.split_once(' ') {
            Some(("image", rest)) => {
                let (i, name) = rest.trim().split_once(' ').unwrap_or((rest.trim(), ""));
                if i.parse::<usize>().ok() != Some(index) {
                    return Err(parse_err(ln, format!("expected image {index}")));
                }
                name.trim().to_string()
            }
            _ => return Err(parse_err(ln, "expected `image <index> <source>`")),
        };
        let mut pts = Vec::with_capacity(points);
        for _ in 0..points {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("image {index}: too few points")))?;
            let [u, v] = parse_floats::<2>(line, ln)?;
            pts.push(Point2Px::new(u, v));
        }
        images.push(ImageCorners { source, points: pts });
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(ln, format!("unexpected trailing content {extra:?}")));
    }
    Ok(images)
}

/// Camera parameters as stored in a result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub intrinsics: CameraIntrinsics,
    pub distortion: DistortionCoeffs,
    pub objective: Option<f64>,
    /// Closed-form parameters and their objective, before refinement.
    pub before: Option<(CameraIntrinsics, DistortionCoeffs, f64)>,
    pub views: Vec<Extrinsics>,
}

fn write_camera(out: &mut String, prefix: &str, k: &CameraIntrinsics, d: &DistortionCoeffs) {
    for (key, val) in [
        ("alpha", k.alpha),
        ("gamma", k.gamma),
        ("u0", k.u0),
        ("beta", k.beta),
        ("v0", k.v0),
        ("k1", d.k1),
        ("k2", d.k2),
    ] {
        writeln!(out, "{prefix}{key} = {val:.6}").expect("string write");
    }
}

pub fn write_result_file(r: &ResultFile) -> String {
    let mut out = String::new();
    write_camera(&mut out, "", &r.intrinsics, &r.distortion);
    writeln!(out, "model = {}", r.distortion.model.tag()).expect("string write");
    if let Some(j) = r.objective {
        writeln!(out, "objective = {j:.6}").expect("string write");
    }
    if let Some((k, d, j)) = &r.before {
        write_camera(&mut out, "before.", k, d);
        writeln!(out, "before.objective = {j:.6}").expect("string write");
    }
    for (i, v) in r.views.iter().enumerate() {
        let e = euler_zyz_lenient(&v.rot);
        writeln!(
            out,
            "view {i}: euler_zyz {:.6} {:.6} {:.6}; t {:.6} {:.6} {:.6}",
            e.a.to_degrees(),
            e.b.to_degrees(),
            e.c.to_degrees(),
            v.t.x,
            v.t.y,
            v.t.z
        )
        .expect("string write");
    }
    out
}

fn parse_view_line(rest: &str, ln: usize) -> Result<(usize, Extrinsics)> {
    let (idx, body) = rest
        .split_once(':')
        .ok_or_else(|| parse_err(ln, "expected `view <i>: ...`"))?;
    let idx = idx.trim().parse::<usize>().map_err(|_| parse_err(ln, "bad view index"))?;
    let (rot, t) = body
        .split_once(';')
        .ok_or_else(|| parse_err(ln, "expected `euler_zyz a b c; t x y z`"))?;
    let rot = rot
        .trim()
        .strip_prefix("euler_zyz")
        .ok_or_else(|| parse_err(ln, "expected euler_zyz"))?;
    let t = t.trim().strip_prefix('t').ok_or_else(|| parse_err(ln, "expected t"))?;
    let [a, b, c] = parse_floats::<3>(rot, ln)?;
    let [x, y, z] = parse_floats::<3>(t, ln)?;
    let rot = rotation_from_euler_zyz(EulerZYZ::new(a.to_radians(), b.to_radians(), c.to_radians()));
    Ok((idx, Extrinsics::new(rot, Vector3::new(x, y, z))))
}

pub fn parse_result_file(text: &str) -> Result<ResultFile> {
    let mut cur = [None::<f64>; 7];
    let mut before = [None::<f64>; 8];
    let mut model = None;
    let mut objective = None;
    let mut views = Vec::new();
    const KEYS: [&str; 7] = ["alpha", "gamma", "u0", "beta", "v0", "k1", "k2"];
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("view ") {
            let (idx, ex) = parse_view_line(rest, ln)?;
            if idx != views.len() {
                return Err(parse_err(ln, format!("expected view {}", views.len())));
            }
            views.push(ex);
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| parse_err(ln, format!("expected key = value, got {line:?}")))?;
        if key == "model" {
            let tag = val.parse::<u8>().ok().and_then(RadialModel::from_tag);
            model = Some(tag.ok_or_else(|| parse_err(ln, format!("unknown model {val:?}")))?);
        } else if key == "objective" {
            objective = Some(parse_f64(val, ln)?);
        } else if key == "before.objective" {
            before[7] = Some(parse_f64(val, ln)?);
        } else if let Some(pos) = KEYS.iter().position(|&k| k == key) {
            cur[pos] = Some(parse_f64(val, ln)?);
        } else if let Some(pos) = key.strip_prefix("before.").and_then(|k| KEYS.iter().position(|&x| x == k)) {
            before[pos] = Some(parse_f64(val, ln)?);
        } else {
            return Err(parse_err(ln, format!("unknown key {key:?}")));
        }
    }
    let model = model.ok_or_else(|| Error::Parse("missing key \"model\"".into()))?;
    let camera = |vals: &[Option<f64>], prefix: &str| -> Result<(CameraIntrinsics, DistortionCoeffs)> {
        let mut v = [0.0; 7];
        for (i, key) in KEYS.iter().enumerate() {
            v[i] = vals[i].ok_or_else(|| Error::Parse(format!("missing key \"{prefix}{key}\"")))?;
        }
        let [alpha, gamma, u0, beta, v0, k1, k2] = v;
        let k = CameraIntrinsics::new(alpha, beta, gamma, u0, v0);
        k.check_invertible()?;
        Ok((k, DistortionCoeffs::new(model, k1, k2)))
    };
    let (intrinsics, distortion) = camera(&cur, "")?;
    let before = if before.iter().all(Option::is_none) {
        None
    } else {
        let (k, d) = camera(&before, "before.")?;
        let j = before[7].ok_or_else(|| Error::Parse("missing key \"before.objective\"".into()))?;
        Some((k, d, j))
    };
    Ok(ResultFile {
        intrinsics,
        distortion,
        objective,
        before,
        views,
    })
}

/// Synthetic scene config. Every key is optional and defaults to
/// [`SceneConfig::default`]; `view` lines, if any, replace the default
/// views.
///
/// ```text
/// width = 640
/// height = 480
/// alpha = 832.5
/// beta = 832.5
/// gamma = 0.2
/// u0 = 304
/// v0 = 206.6
/// model = 1
/// k1 = -0.2286
/// k2 = 0.1903
/// boxes_x = 8
/// boxes_y = 8
/// side = 1.3
/// gap = 1.3
/// noise_sigma = 0
/// seed = 1
/// # ZYZ angles in degrees, then translation in cm (Pc = R·Pw + t)
/// view = 0 25 0 -9.75 -9.75 50
/// ```
pub fn parse_scene_config(text: &str) -> Result<SceneConfig> {
    let mut cfg = SceneConfig::default();
    let mut views = Vec::new();
    let (mut k, mut model, mut k1, mut k2) = (cfg.intrinsics, cfg.distortion.model, cfg.distortion.k1, cfg.distortion.k2);
    let mut target: TargetSpec = cfg.target;
    for item in key_values(text) {
        let (ln, key, val) = item?;
        let count = |v: &str| v.parse::<usize>().map_err(|_| parse_err(ln, format!("bad count {v:?}")));
        match key {
            "width" => cfg.width = count(val)?,
            "height" => cfg.height = count(val)?,
            "alpha" => k.alpha = parse_f64(val, ln)?,
            "beta" => k.beta = parse_f64(val, ln)?,
            "gamma" => k.gamma = parse_f64(val, ln)?,
            "u0" => k.u0 = parse_f64(val, ln)?,
            "v0" => k.v0 = parse_f64(val, ln)?,
            "model" => {
                model = val
                    .parse::<u8>()
                    .ok()
                    .and_then(RadialModel::from_tag)
                    .ok_or_else(|| parse_err(ln, format!("unknown model {val:?}")))?
            }
            "k1" => k1 = parse_f64(val, ln)?,
            "k2" => k2 = parse_f64(val, ln)?,
            "boxes_x" => target.boxes_x = count(val)?,
            "boxes_y" => target.boxes_y = count(val)?,
            "side" => target.side = parse_f64(val, ln)?,
            "gap" => target.gap = parse_f64(val, ln)?,
            "noise_sigma" => cfg.noise_sigma = parse_f64(val, ln)?,
            "seed" => cfg.seed = val.parse().map_err(|_| parse_err(ln, format!("bad seed {val:?}")))?,
            "view" => {
                let [a, b, c, x, y, z] = parse_floats::<6>(val, ln)?;
                let rot = rotation_from_euler_zyz(EulerZYZ::new(a.to_radians(), b.to_radians(), c.to_radians()));
                views.push(Extrinsics::new(rot, Vector3::new(x, y, z)));
            }
            other => return Err(parse_err(ln, format!("unknown key {other:?}"))),
        }
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    target.validate()?;
    k.check_invertible()?;
    cfg.intrinsics = k;
    cfg.distortion = DistortionCoeffs::new(model, k1, k2);
    cfg.target = target;
    if !views.is_empty() {
        cfg.views = views;
    }
    Ok(cfg)
}

pub fn write_scene_config(cfg: &SceneConfig) -> String {
    let k = &cfg.intrinsics;
    let d = &cfg.distortion;
    let t = &cfg.target;
    let mut out = String::new();
    writeln!(out, "width = {}\nheight = {}", cfg.width, cfg.height).expect("string write");
    for (key, val) in [("alpha", k.alpha), ("beta", k.beta), ("gamma", k.gamma), ("u0", k.u0), ("v0", k.v0)] {
        writeln!(out, "{key} = {val:.6}").expect("string write");
    }
    writeln!(out, "model = {}\nk1 = {:.6}\nk2 = {:.6}", d.model.tag(), d.k1, d.k2).expect("string write");
    writeln!(out, "boxes_x = {}\nboxes_y = {}\nside = {:.6}\ngap = {:.6}", t.boxes_x, t.boxes_y, t.side, t.gap)
        .expect("string write");
    writeln!(out, "noise_sigma = {:.6}\nseed = {}", cfg.noise_sigma, cfg.seed).expect("string write");
    for v in &cfg.views {
        let e = euler_zyz_lenient(&v.rot);
        writeln!(
            out,
            "view = {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            e.a.to_degrees(),
            e.b.to_degrees(),
            e.c.to_degrees(),
            v.t.x,
            v.t.y,
            v.t.z
        )
        .expect("string write");
    }
    out
}

/// Assumed camera pose plus one observed ground line.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseScene {
    pub assumed: CameraPose,
    pub line: LineObservation,
}

/// ```text
/// # camera-to-world rotation as ZYZ degrees, camera center in cm
/// assumed_euler_zyz = 90 120 0
/// assumed_t = 0 0 100
/// world_a = 100 -50
/// world_b = 100 50
/// image_a = 210.5 300.2
/// image_b = 420.1 298.7
/// ```
pub fn parse_pose_scene(text: &str) -> Result<PoseScene> {
    let (mut euler, mut t, mut wa, mut wb, mut ia, mut ib) = (None, None, None, None, None, None);
    for item in key_values(text) {
        let (ln, key, val) = item?;
        match key {
            "assumed_euler_zyz" => euler = Some(parse_floats::<3>(val, ln)?),
            "assumed_t" => t = Some(parse_floats::<3>(val, ln)?),
            "world_a" => wa = Some(parse_floats::<2>(val, ln)?),
            "world_b" => wb = Some(parse_floats::<2>(val, ln)?),
            "image_a" => ia = Some(parse_floats::<2>(val, ln)?),
            "image_b" => ib = Some(parse_floats::<2>(val, ln)?),
            other => return Err(parse_err(ln, format!("unknown key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("missing key {k:?}"));
    let [a, b, c] = euler.ok_or_else(|| missing("assumed_euler_zyz"))?;
    let [x, y, z] = t.ok_or_else(|| missing("assumed_t"))?;
    let [wax, way] = wa.ok_or_else(|| missing("world_a"))?;
    let [wbx, wby] = wb.ok_or_else(|| missing("world_b"))?;
    let [iau, iav] = ia.ok_or_else(|| missing("image_a"))?;
    let [ibu, ibv] = ib.ok_or_else(|| missing("image_b"))?;
    let rot = rotation_from_euler_zyz(EulerZYZ::new(a.to_radians(), b.to_radians(), c.to_radians()));
    Ok(PoseScene {
        assumed: CameraPose::new(rot, Vector3::new(x, y, z)),
        line: LineObservation {
            world_a: Point3W::new(wax, way, 0.0),
            world_b: Point3W::new(wbx, wby, 0.0),
            image_a: Point2Px::new(iau, iav),
            image_b: Point2Px::new(ibu, ibv),
        },
    })
}

pub fn write_pose_scene(scene: &PoseScene) -> String {
    let e = euler_zyz_lenient(&scene.assumed.rot);
    let (t, l) = (&scene.assumed.t, &scene.line);
    format!(
        "assumed_euler_zyz = {:.6} {:.6} {:.6}\nassumed_t = {:.6} {:.6} {:.6}\n\
         world_a = {:.6} {:.6}\nworld_b = {:.6} {:.6}\nimage_a = {:.6} {:.6}\nimage_b = {:.6} {:.6}\n",
        e.a.to_degrees(),
        e.b.to_degrees(),
        e.c.to_degrees(),
        t.x,
        t.y,
        t.z,
        l.world_a.x,
        l.world_a.y,
        l.world_b.x,
        l.world_b.y,
        l.image_a.u,
        l.image_a.v,
        l.image_b.u,
        l.image_b.v
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_file_layout_is_frozen() {
        let images = vec![
            ImageCorners {
                source: "a.pgm".into(),
                points: vec![Point2Px::new(1.0, 2.5), Point2Px::new(-3.25, 4.0)],
            },
            ImageCorners {
                source: "b c.pgm".into(),
                points: vec![Point2Px::new(0.1234567, 9.0), Point2Px::new(10.0, 11.0)],
            },
        ];
        let text = write_corner_file(&images).unwrap();
        assert_eq!(
            text,
            "images 2 points 2\nimage 0 a.pgm\n1.000000 2.500000\n-3.250000 4.000000\n\
             image 1 b c.pgm\n0.123457 9.000000\n10.000000 11.000000\n"
        );
        let back = parse_corner_file(&text).unwrap();
        assert_eq!(back[1].source, "b c.pgm");
        assert_eq!(back[0].points, images[0].points);
    }

    #[test]
    fn corner_file_errors() {
        assert!(parse_corner_file("").is_err());
        assert!(parse_corner_file("images 1 points 2\nimage 0 x\n1 2\n").is_err());
        assert!(parse_corner_file("images 1 points 1\nimage 3 x\n1 2\n").is_err());
        assert!(parse_corner_file("images 1 points 1\nimage 0 x\n1 nan\n").is_err());
        assert!(parse_corner_file("images 1 points 1\nimage 0 x\n1 2\n3 4\n").is_err());
    }

    #[test]
    fn result_file_round_trip() {
        let k = CameraIntrinsics::new(260.7636, 255.1465, -0.2739, 140.0564, 113.1723);
        let d = DistortionCoeffs::new(RadialModel::Model3, -0.1192, -0.1365);
        let rot = rotation_from_euler_zyz(EulerZYZ::new(0.3, 0.5, -0.2));
        let r = ResultFile {
            intrinsics: k,
            distortion: d,
            objective: Some(12.5),
            before: Some((k, DistortionCoeffs::none(RadialModel::Model3), 40.0)),
            views: vec![Extrinsics::new(rot, Vector3::new(-10.0, -9.0, 50.0))],
        };
        let text = write_result_file(&r);
        assert!(text.starts_with("alpha = 260.763600\ngamma = -0.273900\nu0 = 140.056400\nbeta = 255.146500\n"));
        assert!(text.contains("model = 3\n"));
        assert!(text.contains("view 0: euler_zyz 17.188734 28.647890 -11.459156; t -10.000000 -9.000000 50.000000\n"));
        let back = parse_result_file(&text).unwrap();
        assert_eq!(back.intrinsics, k);
        assert_eq!(back.distortion, d);
        assert_eq!(back.objective, Some(12.5));
        assert!((back.views[0].rot.matrix() - rot.matrix()).amax() < 1e-6);
        // Writing again is stable.
        assert_eq!(write_result_file(&back), text);
    }

    #[test]
    fn result_file_errors() {
        assert!(parse_result_file("alpha = 1\n").is_err());
        assert!(parse_result_file("alpha = x\nmodel = 1\n").is_err());
        assert!(parse_result_file("model = 9\n").is_err());
        let ok = "alpha = 1\ngamma = 0\nu0 = 0\nbeta = 1\nv0 = 0\nk1 = 0\nk2 = 0\nmodel = 1\n";
        assert!(parse_result_file(ok).is_ok());
        assert!(parse_result_file(&format!("{ok}bogus = 2\n")).is_err());
        assert!(parse_result_file(&ok.replace("beta = 1", "beta = 0")).is_err());
    }

    #[test]
    fn scene_config_round_trip() {
        let cfg = SceneConfig {
            noise_sigma: 0.5,
            seed: 7,
            ..Default::default()
        };
        let text = write_scene_config(&cfg);
        let back = parse_scene_config(&text).unwrap();
        assert_eq!(write_scene_config(&back), text);
        assert_eq!(back.seed, 7);
        assert_eq!(back.views.len(), cfg.views.len());
        for (a, b) in back.views.iter().zip(&cfg.views) {
            assert!((a.rot.matrix() - b.rot.matrix()).amax() < 1e-7);
            assert!((a.t - b.t).amax() < 1e-6);
        }
    }

    #[test]
    fn empty_scene_config_is_default() {
        assert_eq!(parse_scene_config("# nothing\n").unwrap(), SceneConfig::default());
        assert!(parse_scene_config("colour = red\n").is_err());
        assert!(parse_scene_config("side = -1\n").is_err());
    }

    #[test]
    fn pose_scene_round_trip() {
        let text = "assumed_euler_zyz = 90 120 0\nassumed_t = 0 0 100\nworld_a = 100 -50\nworld_b = 100 50\n\
                    image_a = 210.5 300.2\nimage_b = 420.1 298.7\n";
        let s = parse_pose_scene(text).unwrap();
        assert_eq!(s.line.world_b, Point3W::new(100.0, 50.0, 0.0));
        let again = parse_pose_scene(&write_pose_scene(&s)).unwrap();
        assert!((again.assumed.rot.matrix() - s.assumed.rot.matrix()).amax() < 1e-9);
        assert!(parse_pose_scene("assumed_t = 0 0 1\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
