//! Sample files and the dataset manifest.
//!
//! A sample `id` is stored as `{id}_rgb.png` (8-bit RGB), `{id}_depth.png`
//! (16-bit millimeters), `{id}_labels.vxg` (VXG1, u8) and `{id}_camera.txt`.
//! Manifest lines list `rgb depth labels camera` paths relative to the
//! manifest's directory; `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{DataError, Manifest, Sample};
use crate::geometry::{CameraModel, DepthMap, LabelGrid, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePaths {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub labels: PathBuf,
    pub camera: PathBuf,
}

impl SamplePaths {
    pub fn in_dir(dir: &Path, id: &str) -> Self {
        SamplePaths {
            rgb: dir.join(format!("{id}_rgb.png")),
            depth: dir.join(format!("{id}_depth.png")),
            labels: dir.join(format!("{id}_labels.vxg")),
            camera: dir.join(format!("{id}_camera.txt")),
        }
    }

    /// Sample id implied by the RGB file name.
    pub fn id(&self) -> String {
        let stem = self
            .rgb
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        stem.strip_suffix("_rgb").map(str::to_owned).unwrap_or(stem)
    }
}

pub fn save_sample(sample: &Sample, paths: &SamplePaths) -> Result<(), DataError> {
    sample.rgb.write_png(&paths.rgb)?;
    sample.depth.write_png(&paths.depth)?;
    sample.gt_labels.write_file(&paths.labels)?;
    std::fs::write(&paths.camera, sample.camera.to_text())?;
    Ok(())
}

/// Reads the four files and recomputes the F-TSDF from depth.
pub fn load_sample(paths: &SamplePaths) -> Result<Sample, DataError> {
    let rgb = RgbImage::read_png(&paths.rgb)?;
    let depth = DepthMap::read_png(&paths.depth)?;
    let labels = LabelGrid::read_file(&paths.labels)?;
    let camera = CameraModel::from_text(&std::fs::read_to_string(&paths.camera)?, depth.width, depth.height)?;
    Sample::new(paths.id(), rgb, depth, camera, labels)
}

pub fn write_manifest(path: &Path, entries: &[SamplePaths]) -> Result<(), DataError> {
    let root = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| -> Result<String, DataError> {
        let r = p
            .strip_prefix(root)
            .map_err(|_| DataError::FormatViolation(format!("{} is not under {}", p.display(), root.display())))?;
        let s = r.to_string_lossy().into_owned();
        if s.contains(char::is_whitespace) {
            return Err(DataError::FormatViolation(format!("path `{s}` contains whitespace")));
        }
        Ok(s)
    };
    let mut out = String::from("# rgb depth labels camera\n");
    for e in entries {
        writeln!(
            out,
            "{} {} {} {}",
            rel(&e.rgb)?,
            rel(&e.depth)?,
            rel(&e.labels)?,
            rel(&e.camera)?
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [rgb, depth, labels, camera] = cols[..] else {
            return Err(DataError::FormatViolation(format!(
                "manifest line {}: expected 4 paths, found {}",
                n + 1,
                cols.len()
            )));
        };
        entries.push(SamplePaths {
            rgb: root.join(rgb),
            depth: root.join(depth),
            labels: root.join(labels),
            camera: root.join(camera),
        });
    }
    Ok(Manifest { root, entries })
}
