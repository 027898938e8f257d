//! 2D semantic-feature providers: a small trainable CNN, or precomputed maps
//! read from disk.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::autodiff::{Conv3dOpts, Tensor};
use crate::geometry::{GridSpec, VoxelGrid};
use crate::losses::NUM_CLASSES;

use super::layers::{Conv3dLayer, HasParams, ParamSet};
use super::BlocksError;

/// Four same-resolution convolutions over an N×3×1×H×W image: three 3×3
/// feature layers with ReLU, then a 1×1 classifier.
#[derive(Debug, Clone)]
pub struct SemanticHead {
    pub channels: usize,
    pub layers: [Conv3dLayer; 4],
}

impl SemanticHead {
    pub fn new<R: Rng>(name: &str, channels: usize, rng: &mut R) -> Self {
        let k = [1, 3, 3];
        let c3 = |i: usize, cin: usize, rng: &mut R| {
            Conv3dLayer::new(
                &format!("{name}.conv{}", i + 1),
                cin,
                channels,
                k,
                Conv3dOpts::same(k, 1),
                true,
                rng,
            )
        };
        let l1 = c3(0, 3, rng);
        let l2 = c3(1, channels, rng);
        let l3 = c3(2, channels, rng);
        let cls = Conv3dLayer::new(
            &format!("{name}.classifier"),
            channels,
            NUM_CLASSES,
            [1; 3],
            Conv3dOpts::new(1, 0),
            true,
            rng,
        );
        SemanticHead {
            channels,
            layers: [l1, l2, l3, cls],
        }
    }

    /// Returns (features N×C×1×H×W, logits N×12×1×H×W).
    pub fn forward(&self, rgb: &Tensor) -> Result<(Tensor, Tensor), BlocksError> {
        let s = rgb.shape();
        if s.len() != 5 || s[1] != 3 || s[2] != 1 {
            return Err(BlocksError::ShapeMismatch(format!(
                "semantic head expects N×3×1×H×W, got {s:?}"
            )));
        }
        let h = self.layers[0].forward(rgb)?.relu();
        let h = self.layers[1].forward(&h)?.relu();
        let features = self.layers[2].forward(&h)?.relu();
        let logits = self.layers[3].forward(&features)?;
        Ok((features, logits))
    }
}

impl HasParams for SemanticHead {
    fn collect(&self, out: &mut ParamSet) {
        for l in &self.layers {
            l.collect(out);
        }
    }
}

/// Feature-map files of a sample in a provider directory.
pub fn provider_paths(dir: &Path, sample_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{sample_id}.features.vxg")),
        dir.join(format!("{sample_id}.logits.vxg")),
    )
}

/// Stores a C×H×W map as a VXG1 grid of dims 1×H×W.
pub fn write_feature_map(
    path: &Path,
    channels: usize,
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<(), BlocksError> {
    let spec = GridSpec::new([1, height, width], [0.0; 3], 1.0, 1.0)?;
    let grid = VoxelGrid::from_values(spec, channels, values.iter().map(|&v| v as f32).collect())?;
    grid.write_file(path)?;
    Ok(())
}

/// Loads a C×H×W map written by [`write_feature_map`] as a 1×C×1×H×W tensor.
pub fn read_feature_map(path: &Path, height: usize, width: usize) -> Result<Tensor, BlocksError> {
    if !path.exists() {
        return Err(BlocksError::ProviderFileMissing(path.to_path_buf()));
    }
    let grid = VoxelGrid::<f32>::read_file(path)?;
    if grid.spec.dims != [1, height, width] {
        return Err(BlocksError::ShapeMismatch(format!(
            "{}: feature map {:?}, image {height}×{width}",
            path.display(),
            grid.spec.dims
        )));
    }
    Ok(Tensor::new(
        &[1, grid.channels, 1, height, width],
        grid.values.iter().map(|&v| v as f64).collect(),
    ))
}

#[derive(Debug, Clone)]
pub enum SemanticProvider {
    Trainable(SemanticHead),
    /// Precomputed `<id>.features.vxg` / `<id>.logits.vxg` maps.
    Files(PathBuf),
}

impl SemanticProvider {
    /// Features and logits for a batch; `ids` name the samples for the file provider.
    pub fn forward(&self, rgb: &Tensor, ids: &[String]) -> Result<(Tensor, Tensor), BlocksError> {
        match self {
            SemanticProvider::Trainable(h) => h.forward(rgb),
            SemanticProvider::Files(dir) => {
                let s = rgb.shape();
                if s.len() != 5 || s[0] != ids.len() {
                    return Err(BlocksError::ShapeMismatch(format!(
                        "{} ids for image batch {s:?}",
                        ids.len()
                    )));
                }
                let (h, w) = (s[3], s[4]);
                let mut feats = Vec::new();
                let mut logits = Vec::new();
                let mut channels = None;
                for id in ids {
                    let (fp, lp) = provider_paths(dir, id);
                    let f = read_feature_map(&fp, h, w)?;
                    let l = read_feature_map(&lp, h, w)?;
                    if l.shape()[1] != NUM_CLASSES || channels.is_some_and(|c| c != f.shape()[1]) {
                        return Err(BlocksError::ShapeMismatch(format!(
                            "provider maps for `{id}` have inconsistent channels"
                        )));
                    }
                    channels = Some(f.shape()[1]);
                    feats.extend(f.to_vec());
                    logits.extend(l.to_vec());
                }
                let c = channels.unwrap_or(0);
                Ok((
                    Tensor::new(&[ids.len(), c, 1, h, w], feats),
                    Tensor::new(&[ids.len(), NUM_CLASSES, 1, h, w], logits),
                ))
            }
        }
    }
}

impl HasParams for SemanticProvider {
    fn collect(&self, out: &mut ParamSet) {
        if let SemanticProvider::Trainable(h) = self {
            h.collect(out);
        }
    }
}
