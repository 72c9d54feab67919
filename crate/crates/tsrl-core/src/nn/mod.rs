//! Layers, loss, optimizer, and the finite-difference checker.

mod adam;
mod gradcheck;
mod ops;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, max_rel_err};
pub use ops::{
    conv2d_backward, conv2d_forward, conv_output_hw, huber_loss, linear_backward, linear_forward,
    relu_backward, relu_forward,
};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Geometry of one convolution layer (valid padding, square stride).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
}

impl ConvLayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize), stride: usize) -> Self {
        ConvLayerSpec { in_channels, out_channels, kernel, stride }
    }

    pub fn validate(&self, layer: usize) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return config_err(format!("conv layer {}: channel counts must be positive", layer));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return config_err(format!("conv layer {}: kernel must be positive", layer));
        }
        if self.stride == 0 {
            return config_err(format!("conv layer {}: stride must be positive", layer));
        }
        Ok(())
    }

    /// Output spatial size for `input` (valid padding), or an error when the
    /// kernel does not fit.
    pub fn output_hw(&self, layer: usize, input: (usize, usize)) -> Result<(usize, usize)> {
        conv_output_hw(input, self.kernel, self.stride).ok_or_else(|| {
            crate::error::Error::Config(format!(
                "conv layer {}: kernel {:?} with stride {} does not fit input {}x{}",
                layer, self.kernel, self.stride, input.0, input.1
            ))
        })
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }
}
