use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::Scheme;
use crate::mesh::shapes::MeanFaceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Output channels of the backbone conv blocks.
    pub channels: Vec<usize>,
    /// Strides of the backbone conv blocks.
    pub strides: Vec<usize>,
    pub hidden: usize,
    /// Index of the backbone block feeding the landmark branch.
    pub feature_block: usize,
    pub lm_hidden: usize,
    /// Channels of the sampled landmark feature map.
    pub feature_dim: usize,
    pub n_controls: usize,
    pub scheme: Scheme,
    pub mesh_lon: usize,
    pub mesh_lat: usize,
    pub w_3d: f64,
    pub w_proj: f64,
    pub w_reg: f64,
    /// Supervise only landmarks flagged visible in the ground truth.
    pub visibility_gated: bool,
    /// Let the refinement loss reach the camera and TPS heads through the
    /// feature sampling positions. Off: sampling positions are treated as
    /// constants, so upstream heads learn from the 3D and projection losses only.
    pub feature_position_grad: bool,
    /// Canonical camera distance and focal length (pixels) at initialization.
    pub init_distance: f64,
    pub init_focal: f64,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    /// L2 penalty coefficient added to the gradient of every trained parameter.
    pub weight_decay: f64,
    /// Upper bound on the L2 norm of `lr · gradient` per iteration.
    pub max_step: f64,
    pub seed: u64,
    /// Synthetic data: maximum control displacement as a fraction of the mesh
    /// bounding-box diagonal.
    pub max_displacement: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            input_size: 64,
            channels: vec![8, 16, 32, 32],
            strides: vec![2, 2, 2, 1],
            hidden: 64,
            feature_block: 1,
            lm_hidden: 32,
            feature_dim: 64,
            n_controls: 40,
            scheme: Scheme::Mpie68,
            mesh_lon: 71,
            mesh_lat: 71,
            w_3d: 1.0,
            w_proj: 1.0,
            w_reg: 1.0,
            visibility_gated: false,
            feature_position_grad: false,
            init_distance: 10.0,
            init_focal: 200.0,
            batch_size: 16,
            phase1_epochs: 30,
            phase2_epochs: 5,
            lr_phase1: 0.3,
            lr_phase2: 200.0,
            lr_decay: 0.92,
            momentum: 0.9,
            weight_decay: 0.0,
            max_step: 1.0,
            seed: 0,
            max_displacement: 0.05,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let w = [self.w_3d, self.w_proj, self.w_reg];
        if w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("loss weights must be finite and nonnegative");
        }
        if w.iter().all(|w| *w == 0.0) {
            return bad("loss weights are all zero");
        }
        if self.input_size < 8 {
            return bad("input_size must be at least 8");
        }
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return bad("channels and strides must be nonempty and of equal length");
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return bad("channels and strides must be positive");
        }
        if self.feature_block >= self.channels.len() {
            return bad("feature_block out of range");
        }
        if self.hidden == 0 || self.lm_hidden == 0 || self.feature_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.n_controls < 4 {
            return bad("n_controls must be at least 4");
        }
        if self.mesh_lon < 8 || self.mesh_lat < 8 {
            return bad("mesh resolution too small");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_phase1 >= 0.0 && self.lr_phase2 >= 0.0 && self.lr_decay > 0.0) {
            return bad("learning rates must be nonnegative and decay positive");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.init_distance > 0.0 && self.init_focal > 0.0) {
            return bad("init_distance and init_focal must be positive");
        }
        if !(self.max_displacement >= 0.0) {
            return bad("max_displacement must be nonnegative");
        }
        Ok(())
    }

    pub fn mesh_config(&self) -> MeanFaceConfig {
        MeanFaceConfig {
            n_lon: self.mesh_lon,
            n_lat: self.mesh_lat,
            scheme: self.scheme,
            n_controls: self.n_controls,
        }
    }

    /// Total downsampling factor of the backbone up to block `b` inclusive.
    pub fn stride_upto(&self, b: usize) -> usize {
        self.strides[..=b].iter().product()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_weights_checked() {
        let mut c = EstimatorConfig::default();
        c.validate().unwrap();
        c.w_3d = 0.0;
        c.w_proj = 0.0;
        c.w_reg = 0.0;
        assert!(c.validate().is_err());
        c.w_reg = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: EstimatorConfig = serde_json::from_str(r#"{"seed": 9, "w_reg": 2.0}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.w_reg, 2.0);
        assert_eq!(c.input_size, 64);
    }
}
