//! TUM RGB-D layout: `depth.txt` lists `timestamp path` pairs of 16-bit PNGs
//! (1/5000 m units), `groundtruth.txt` lists `timestamp tx ty tz qx qy qz qw`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};

use super::{CameraIntrinsics, DepthFrame};
use crate::{Error, Result};

pub const DEPTH_SCALE: f64 = 5000.0;
/// Maximum depth/pose timestamp gap for association, in seconds.
pub const MAX_TIME_DIFF: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct TumEntry {
    pub timestamp: f64,
    pub depth_path: PathBuf,
    pub pose: Isometry3<f64>,
}

#[derive(Debug, Clone)]
pub struct TumSequence {
    pub root: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub entries: Vec<TumEntry>,
    /// Depth entries with no pose within [`MAX_TIME_DIFF`].
    pub unmatched: usize,
    /// Lines in either list that failed to parse.
    pub malformed: usize,
}

fn data_lines(path: &Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn parse_pose(line: &str) -> Option<(f64, Isometry3<f64>)> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse().ok())
        .collect::<Option<_>>()?;
    let [t, tx, ty, tz, qx, qy, qz, qw] = v.as_slice().try_into().ok()?;
    if !v.iter().all(|x| x.is_finite()) {
        return None;
    }
    let q = Quaternion::new(qw, qx, qy, qz);
    if q.norm() < 1e-9 {
        return None;
    }
    Some((
        t,
        Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::from_quaternion(q),
        ),
    ))
}

fn parse_depth(line: &str) -> Option<(f64, String)> {
    let mut it = line.split_whitespace();
    let t: f64 = it.next()?.parse().ok()?;
    let p = it.next()?;
    (t.is_finite() && it.next().is_none()).then(|| (t, p.to_string()))
}

/// Reads and associates the index files; depth images are decoded lazily by
/// [`TumSequence::frames`].
pub fn load_tum_sequence(root: &Path, intrinsics: CameraIntrinsics) -> Result<TumSequence> {
    intrinsics.validate()?;
    if !root.is_dir() {
        return Err(Error::MissingFile {
            path: root.to_path_buf(),
        });
    }
    let depth_lines = data_lines(&root.join("depth.txt"))?;
    let pose_lines = data_lines(&root.join("groundtruth.txt"))?;
    let mut malformed = 0;

    let mut poses: Vec<(f64, Isometry3<f64>)> = Vec::with_capacity(pose_lines.len());
    for l in &pose_lines {
        match parse_pose(l) {
            Some(p) => poses.push(p),
            None => malformed += 1,
        }
    }
    poses.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut depths = Vec::with_capacity(depth_lines.len());
    for l in &depth_lines {
        match parse_depth(l) {
            Some(d) => depths.push(d),
            None => malformed += 1,
        }
    }
    depths.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut entries = Vec::with_capacity(depths.len());
    let mut unmatched = 0;
    for (t, rel) in depths {
        let i = poses.partition_point(|p| p.0 < t);
        let best = [i.checked_sub(1), (i < poses.len()).then_some(i)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (poses[a].0 - t).abs().total_cmp(&(poses[b].0 - t).abs()));
        match best.filter(|&j| (poses[j].0 - t).abs() <= MAX_TIME_DIFF) {
            Some(j) => entries.push(TumEntry {
                timestamp: t,
                depth_path: root.join(rel),
                pose: poses[j].1,
            }),
            None => unmatched += 1,
        }
    }
    if malformed > 0 || unmatched > 0 {
        log::warn!(
            "{}: skipped {malformed} malformed lines and {unmatched} depth frames without a pose",
            root.display()
        );
    }
    Ok(TumSequence {
        root: root.to_path_buf(),
        intrinsics,
        entries,
        unmatched,
        malformed,
    })
}

/// Decodes a 16-bit depth PNG into meters.
pub fn read_depth_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    let img = img.into_luma16();
    let (w, h) = img.dimensions();
    let depth = img
        .into_raw()
        .into_iter()
        .map(|raw| raw as f64 / DEPTH_SCALE)
        .collect();
    Ok((depth, w as usize, h as usize))
}

pub fn write_depth_png(path: &Path, depth: &[f64], width: usize, height: usize) -> Result<()> {
    let raw: Vec<u16> = depth
        .iter()
        .map(|z| {
            if z.is_finite() && *z > 0.0 {
                (z * DEPTH_SCALE).round().min(u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw)
            .ok_or_else(|| Error::InvalidFrame("depth buffer does not match image size".into()))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

impl TumSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_frame(&self, i: usize) -> Result<DepthFrame> {
        let e = &self.entries[i];
        let (depth, w, h) = read_depth_png(&e.depth_path)?;
        if (w, h) != (self.intrinsics.width, self.intrinsics.height) {
            return Err(Error::InvalidFrame(format!(
                "{}: image is {w}x{h}, intrinsics expect {}x{}",
                e.depth_path.display(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        DepthFrame::new(depth, self.intrinsics, e.pose, e.timestamp)
    }

    /// Frames in timestamp order.
    pub fn frames(&self) -> impl Iterator<Item = Result<DepthFrame>> + '_ {
        (0..self.len()).map(|i| self.load_frame(i))
    }
}

/// Writes frames in TUM layout under `root` (created if needed).
pub fn write_tum_sequence(root: &Path, frames: &[DepthFrame]) -> Result<()> {
    let depth_dir = root.join("depth");
    fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    let mut depth_txt = String::from("# timestamp filename\n");
    let mut gt_txt = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for f in frames {
        let name = format!("depth/{:.6}.png", f.timestamp);
        write_depth_png(&root.join(&name), &f.depth, f.width(), f.height())?;
        depth_txt.push_str(&format!("{:.6} {name}\n", f.timestamp));
        let t = f.pose.translation.vector;
        let q = f.pose.rotation.quaternion();
        gt_txt.push_str(&format!(
            "{:.6} {} {} {} {} {} {} {}\n",
            f.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
    }
    for (name, text) in [("depth.txt", depth_txt), ("groundtruth.txt", gt_txt)] {
        let p = root.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            width: w,
            height: h,
        }
    }

    #[test]
    fn pose_line_parses() {
        let (t, pose) = parse_pose("1.5 1 2 3 0 0 0 1").unwrap();
        assert_eq!(t, 1.5);
        let c = pose * nalgebra::Point3::origin();
        assert_eq!(c, nalgebra::Point3::new(1.0, 2.0, 3.0));
        assert!(parse_pose("1.5 1 2 3 0 0 0").is_none());
        assert!(parse_pose("1.5 1 2 x 0 0 0 1").is_none());
    }

    #[test]
    fn association_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir(root.join("depth")).unwrap();
        write_depth_png(&root.join("depth/a.png"), &[1.0, 0.0, 0.5, 13.1071], 2, 2).unwrap();
        write_depth_png(&root.join("depth/b.png"), &[1.0; 4], 2, 2).unwrap();
        fs::write(
            root.join("depth.txt"),
            "# comment\n1.000 depth/a.png\n2.000 depth/b.png\nbogus\n1.500 depth/b.png\n",
        )
        .unwrap();
        fs::write(
            root.join("groundtruth.txt"),
            "0.990 0 0 0 0 0 0 1\n1.015 1 2 3 0 0 0 1\n2.030 0 0 0 0 0 0 1\nnot a pose\n",
        )
        .unwrap();
        let seq = load_tum_sequence(root, intr(2, 2)).unwrap();
        assert_eq!(seq.malformed, 2);
        // 1.5 has no pose within 20 ms; 2.0 is 30 ms away.
        assert_eq!(seq.unmatched, 2);
        assert_eq!(seq.len(), 1);
        // Nearer of the two candidates (10 ms vs 15 ms).
        assert_eq!(seq.entries[0].pose.translation.vector.x, 0.0);
        let f = seq.load_frame(0).unwrap();
        assert_eq!(f.depth, vec![1.0, 0.0, 0.5, 65535.0 / DEPTH_SCALE]);
    }

    #[test]
    fn raw_5000_is_one_meter() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(1, 1, vec![5000]).unwrap();
        img.save(&p).unwrap();
        assert_eq!(read_depth_png(&p).unwrap().0, vec![1.0]);
    }

    #[test]
    fn missing_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_tum_sequence(dir.path(), intr(2, 2)).unwrap_err();
        assert!(matches!(err, Error::MissingFile { ref path } if path.ends_with("depth.txt")));
        let err = load_tum_sequence(&dir.path().join("nope"), intr(2, 2)).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
