//! Q-network variants over a short history of frames.
//!
//! All variants share the same convolutional trunk shape and two-layer head;
//! they differ only in how the `T` frames of history enter the network:
//!
//! * [`Variant::Tsrl`]: every frame runs through the trunk independently
//!   (as a `B*T` batch) and a temporal channel shift is applied after each
//!   conv+relu level; the head sees all `T` per-frame latents.
//! * [`Variant::FrameStack`]: the `T` frames are the input channels of the
//!   first convolution; the head sees one latent.
//! * [`Variant::Flare`]: frames run through the trunk independently with no
//!   shift; the head sees the `T` latents plus the `T-1` consecutive latent
//!   differences.
//! * [`Variant::SingleFrame`]: only the newest frame is used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, conv_output_hw, linear_backward, linear_forward,
    relu_backward, relu_forward, ConvLayerSpec,
};
use crate::shift::{shift_backward, shift_forward, shifted_channel_count};
use crate::tensor::{ParamStore, Scalar, Tensor};

/// How the frame history is wired into the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tsrl,
    FrameStack,
    Flare,
    SingleFrame,
}

impl Variant {
    pub fn all() -> [Variant; 4] {
        [Variant::Tsrl, Variant::FrameStack, Variant::Flare, Variant::SingleFrame]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tsrl => "tsrl",
            Variant::FrameStack => "framestack",
            Variant::Flare => "flare",
            Variant::SingleFrame => "singleframe",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant '{}', expected one of tsrl, framestack, flare, singleframe", s)))
    }
}

/// One trunk convolution; input channels are derived from the variant and
/// the previous layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkLayer {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
}

/// Complete network geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// History length `T`.
    pub frames: usize,
    pub input_hw: (usize, usize),
    pub actions: usize,
    pub trunk: Vec<TrunkLayer>,
    pub fc_width: usize,
    /// The first `channels / shift_divisor` channels shift (Tsrl only).
    pub shift_divisor: usize,
}

pub fn default_trunk() -> Vec<TrunkLayer> {
    vec![
        TrunkLayer { out_channels: 16, kernel: (5, 5), stride: 2 },
        TrunkLayer { out_channels: 32, kernel: (5, 5), stride: 2 },
        TrunkLayer { out_channels: 32, kernel: (3, 3), stride: 1 },
    ]
}

impl NetworkConfig {
    pub fn with_default_trunk(
        variant: Variant,
        frames: usize,
        input_hw: (usize, usize),
        actions: usize,
        shift_divisor: usize,
    ) -> Self {
        NetworkConfig {
            variant,
            frames,
            input_hw,
            actions,
            trunk: default_trunk(),
            fc_width: 128,
            shift_divisor,
        }
    }

    fn input_channels(&self) -> usize {
        match self.variant {
            Variant::FrameStack => self.frames,
            _ => 1,
        }
    }

    /// Trunk layers with input channels resolved.
    pub fn conv_specs(&self) -> Vec<ConvLayerSpec> {
        let mut specs = Vec::with_capacity(self.trunk.len());
        let mut cin = self.input_channels();
        for layer in &self.trunk {
            specs.push(ConvLayerSpec::new(cin, layer.out_channels, layer.kernel, layer.stride));
            cin = layer.out_channels;
        }
        specs
    }

    /// Spatial size after each trunk layer.
    pub fn feature_map_hw(&self) -> Result<Vec<(usize, usize)>> {
        let mut sizes = Vec::with_capacity(self.trunk.len());
        let mut hw = self.input_hw;
        for (i, layer) in self.trunk.iter().enumerate() {
            hw = conv_output_hw(hw, layer.kernel, layer.stride).ok_or_else(|| {
                Error::Config(format!(
                    "trunk layer {}: kernel {:?} with stride {} does not fit input {}x{}",
                    i + 1,
                    layer.kernel,
                    layer.stride,
                    hw.0,
                    hw.1
                ))
            })?;
            sizes.push(hw);
        }
        Ok(sizes)
    }

    /// Flattened per-frame latent length after the trunk.
    pub fn latent_len(&self) -> Result<usize> {
        let sizes = self.feature_map_hw()?;
        let last = self.trunk.last().ok_or_else(|| Error::Config("trunk must have at least one layer".to_string()))?;
        let (h, w) = sizes[sizes.len() - 1];
        Ok(last.out_channels * h * w)
    }

    /// Width of the first fully connected layer's input.
    pub fn fc1_inputs(&self) -> Result<usize> {
        let z = self.latent_len()?;
        Ok(match self.variant {
            Variant::Tsrl => self.frames * z,
            Variant::FrameStack | Variant::SingleFrame => z,
            Variant::Flare => (2 * self.frames - 1) * z,
        })
    }

    /// How many channels shift at each trunk level.
    pub fn shifted_channels(&self) -> Result<Vec<usize>> {
        self.trunk
            .iter()
            .map(|layer| shifted_channel_count(layer.out_channels, self.shift_divisor))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return config_err("frames must be at least 1".to_string());
        }
        if self.actions == 0 {
            return config_err("actions must be at least 1".to_string());
        }
        if self.fc_width == 0 {
            return config_err("fc_width must be at least 1".to_string());
        }
        if self.trunk.is_empty() {
            return config_err("trunk must have at least one layer".to_string());
        }
        for (i, layer) in self.trunk.iter().enumerate() {
            if layer.out_channels == 0 {
                return config_err(format!("trunk layer {}: out_channels must be positive", i + 1));
            }
        }
        self.shifted_channels()?;
        self.feature_map_hw()?;
        Ok(())
    }

    /// Closed-form parameter count: conv weights and biases, then the head.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let mut count = 0;
        for spec in self.conv_specs() {
            count += spec.weight_count() + spec.out_channels;
        }
        let fc1_in = self.fc1_inputs()?;
        count += self.fc_width * fc1_in + self.fc_width;
        count += self.actions * self.fc_width + self.actions;
        Ok(count)
    }
}

/// Pre-shift trunk activations and the gradients that reach them, one entry
/// per trunk level, shaped (B,T,C,h,w). Empty for variants without a shift.
///
/// The newest frame's shifted channels are discarded by the shift, so their
/// entries in `input_grads` are exactly zero.
#[derive(Debug, Default)]
pub struct ShiftTaps<E: Scalar> {
    pub inputs: Vec<Tensor<E>>,
    pub input_grads: Vec<Tensor<E>>,
}

/// Activations recorded by [`QNetwork::forward_cached`], consumed by
/// [`QNetwork::backward`].
pub struct Cache<E: Scalar> {
    batch: usize,
    /// Input to each trunk convolution, (N,Cin,h,w).
    trunk_inputs: Vec<Tensor<E>>,
    /// Tsrl only: post-relu, pre-shift activations, (B,T,C,h,w).
    tsrl_relu_outs: Vec<Tensor<E>>,
    /// Final trunk activation for the relu mask; `None` for Tsrl, where the
    /// masks live in `tsrl_relu_outs`.
    trunk_out: Option<Tensor<E>>,
    /// (B, fc1 inputs).
    head_input: Tensor<E>,
    /// Post-relu hidden activation, (B, fc_width).
    fc1_out: Tensor<E>,
}

/// A Q-network with its parameters.
#[derive(Clone, Debug)]
pub struct QNetwork<E: Scalar> {
    config: NetworkConfig,
    specs: Vec<ConvLayerSpec>,
    pub params: ParamStore<E>,
}

impl<E: Scalar> QNetwork<E> {
    /// Build and initialize a network: He-uniform weights (limit
    /// `sqrt(6 / fan_in)`), zero biases. Draws happen in `f64` in parameter
    /// order so the same seed gives the same network at any precision.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.conv_specs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let he_uniform = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| E::from_f64_lossy(rng.gen_range(-limit..limit)))
                .collect();
            Tensor::from_vec(shape, data).expect("shape/data length agree by construction")
        };

        for (i, spec) in specs.iter().enumerate() {
            let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
            let wshape = [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1];
            params.add(format!("conv{}.weight", i + 1), he_uniform(&wshape, fan_in, &mut rng))?;
            params.add(format!("conv{}.bias", i + 1), Tensor::zeros(&[spec.out_channels]))?;
        }
        let fc1_in = config.fc1_inputs()?;
        params.add("fc1.weight", he_uniform(&[config.fc_width, fc1_in], fc1_in, &mut rng))?;
        params.add("fc1.bias", Tensor::zeros(&[config.fc_width]))?;
        params.add("fc2.weight", he_uniform(&[config.actions, config.fc_width], config.fc_width, &mut rng))?;
        params.add("fc2.bias", Tensor::zeros(&[config.actions]))?;

        Ok(QNetwork { config, specs, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    // Parameters are added conv1.w, conv1.b, ..., fc1.w, fc1.b, fc2.w, fc2.b.
    fn conv_w(&self, layer: usize) -> usize {
        2 * layer
    }

    fn fc1_w(&self) -> usize {
        2 * self.specs.len()
    }

    fn fc2_w(&self) -> usize {
        2 * self.specs.len() + 2
    }

    fn check_input(&self, frames: &Tensor<E>) -> Result<usize> {
        let want_tail = [self.config.frames, self.config.input_hw.0, self.config.input_hw.1];
        if frames.rank() != 4 || frames.shape()[1..] != want_tail {
            return config_err(format!(
                "network input must be (B,{},{},{}), got {:?}",
                want_tail[0],
                want_tail[1],
                want_tail[2],
                frames.shape()
            ));
        }
        Ok(frames.shape()[0])
    }

    /// The trunk input as the variant sees it.
    fn trunk_input(&self, frames: &Tensor<E>, batch: usize) -> Result<Tensor<E>> {
        let (t, (h, w)) = (self.config.frames, self.config.input_hw);
        match self.config.variant {
            Variant::Tsrl | Variant::Flare => frames.reshaped(&[batch * t, 1, h, w]),
            Variant::FrameStack => frames.reshaped(&[batch, t, h, w]),
            Variant::SingleFrame => {
                let mut newest = Tensor::zeros(&[batch, 1, h, w]);
                let plane = h * w;
                let src = frames.data();
                let dst = newest.data_mut();
                for b in 0..batch {
                    let from = (b * t + (t - 1)) * plane;
                    dst[b * plane..(b + 1) * plane].copy_from_slice(&src[from..from + plane]);
                }
                Ok(newest)
            }
        }
    }

    /// Q-values for a batch of frame histories (oldest frame first):
    /// input (B,T,H,W), output (B,actions).
    pub fn forward(&self, frames: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_cached(frames)?.0)
    }

    /// Like [`QNetwork::forward`], but records the activations needed by
    /// [`QNetwork::backward`].
    pub fn forward_cached(&self, frames: &Tensor<E>) -> Result<(Tensor<E>, Cache<E>)> {
        let batch = self.check_input(frames)?;
        let t = self.config.frames;
        let is_tsrl = self.config.variant == Variant::Tsrl;

        let mut x = self.trunk_input(frames, batch)?;
        let mut trunk_inputs = Vec::with_capacity(self.specs.len());
        let mut tsrl_relu_outs = Vec::new();
        let sizes = self.config.feature_map_hw()?;

        for (i, spec) in self.specs.iter().enumerate() {
            let pre = conv2d_forward(
                &x,
                self.params.value(self.conv_w(i)),
                self.params.value(self.conv_w(i) + 1),
                spec.stride,
            )?;
            trunk_inputs.push(std::mem::replace(&mut x, Tensor::zeros(&[0])));
            let post = relu_forward(&pre);
            x = if is_tsrl {
                let (oh, ow) = sizes[i];
                let post5 = post.into_shape(&[batch, t, spec.out_channels, oh, ow])?;
                let shifted = shift_forward(&post5, self.config.shift_divisor)?;
                tsrl_relu_outs.push(post5);
                shifted.into_shape(&[batch * t, spec.out_channels, oh, ow])?
            } else {
                post
            };
        }

        let z = self.config.latent_len()?;
        let (trunk_out, head_input) = match self.config.variant {
            Variant::Tsrl => {
                // (B*T,C,h,w) flattens frame-major straight into (B, T*z).
                (None, x.into_shape(&[batch, t * z])?)
            }
            Variant::FrameStack | Variant::SingleFrame => {
                let head = x.reshaped(&[batch, z])?;
                (Some(x), head)
            }
            Variant::Flare => {
                let head = flare_head_input(&x, batch, t, z);
                (Some(x), head)
            }
        };

        let fc1_pre = linear_forward(
            &head_input,
            self.params.value(self.fc1_w()),
            self.params.value(self.fc1_w() + 1),
        )?;
        let fc1_out = relu_forward(&fc1_pre);
        let q = linear_forward(&fc1_out, self.params.value(self.fc2_w()), self.params.value(self.fc2_w() + 1))?;

        Ok((q, Cache { batch, trunk_inputs, tsrl_relu_outs, trunk_out, head_input, fc1_out }))
    }

    /// Accumulate parameter gradients for `d(loss)/d(q) = grad_q`.
    ///
    /// Existing gradients are added to, not replaced; call
    /// `params.zero_grads()` between steps. Returns the shift taps (empty for
    /// variants without a shift).
    pub fn backward(&mut self, cache: Cache<E>, grad_q: &Tensor<E>) -> Result<ShiftTaps<E>> {
        if grad_q.shape() != [cache.batch, self.config.actions] {
            return config_err(format!(
                "backward: grad shape {:?} does not match q-value shape {:?}",
                grad_q.shape(),
                [cache.batch, self.config.actions]
            ));
        }
        let Cache { batch, trunk_inputs, mut tsrl_relu_outs, trunk_out, head_input, fc1_out } = cache;
        let t = self.config.frames;
        let z = self.config.latent_len()?;
        let sizes = self.config.feature_map_hw()?;

        // Head. A relu output is a valid mask for its own backward pass:
        // out > 0 exactly where the pre-activation was > 0.
        let (g_fc1_out, gw2, gb2) = linear_backward(&fc1_out, self.params.value(self.fc2_w()), grad_q)?;
        self.params.accumulate_grad(self.fc2_w(), &gw2);
        self.params.accumulate_grad(self.fc2_w() + 1, &gb2);
        let g_fc1_pre = relu_backward(&fc1_out, &g_fc1_out)?;
        let (g_head, gw1, gb1) = linear_backward(&head_input, self.params.value(self.fc1_w()), &g_fc1_pre)?;
        self.params.accumulate_grad(self.fc1_w(), &gw1);
        self.params.accumulate_grad(self.fc1_w() + 1, &gb1);

        // Route the head gradient back to the trunk output.
        let last = self.specs.len() - 1;
        let (lc, (lh, lw)) = (self.specs[last].out_channels, sizes[last]);
        let mut g_trunk: Tensor<E> = match self.config.variant {
            Variant::Tsrl => g_head.into_shape(&[batch * t, lc, lh, lw])?,
            Variant::FrameStack | Variant::SingleFrame => g_head.into_shape(&[batch, lc, lh, lw])?,
            Variant::Flare => flare_head_backward(&g_head, batch, t, z).into_shape(&[batch * t, lc, lh, lw])?,
        };

        let mut taps = ShiftTaps::default();
        let mut tap_grads_rev = Vec::new();

        for i in (0..self.specs.len()).rev() {
            let spec = &self.specs[i];
            let g_relu = if self.config.variant == Variant::Tsrl {
                let (oh, ow) = sizes[i];
                let g5 = g_trunk.into_shape(&[batch, t, spec.out_channels, oh, ow])?;
                let tap_grad = shift_backward(&g5, self.config.shift_divisor)?;
                let relu_out5 = tsrl_relu_outs.pop().expect("one recorded activation per trunk level");
                let g = relu_backward(&relu_out5, &tap_grad)?
                    .into_shape(&[batch * t, spec.out_channels, oh, ow])?;
                taps.inputs.push(relu_out5);
                tap_grads_rev.push(tap_grad);
                g
            } else {
                let relu_out =
                    if i == last { trunk_out.as_ref().expect("recorded for non-shift variants") } else { &trunk_inputs[i + 1] };
                relu_backward(relu_out, &g_trunk)?
            };
            let (g_x, g_w, g_b) =
                conv2d_backward(&trunk_inputs[i], self.params.value(self.conv_w(i)), spec.stride, &g_relu)?;
            self.params.accumulate_grad(self.conv_w(i), &g_w);
            self.params.accumulate_grad(self.conv_w(i) + 1, &g_b);
            g_trunk = g_x;
        }

        taps.inputs.reverse();
        tap_grads_rev.reverse();
        taps.input_grads = tap_grads_rev;
        Ok(taps)
    }
}

/// Flare head layout per batch row: the `T` latents in time order, then the
/// `T-1` consecutive differences `z_t - z_{t-1}`.
fn flare_head_input<E: Scalar>(trunk_out: &Tensor<E>, batch: usize, t: usize, z: usize) -> Tensor<E> {
    let mut head = Tensor::zeros(&[batch, (2 * t - 1) * z]);
    let src = trunk_out.data();
    let dst = head.data_mut();
    let row = (2 * t - 1) * z;
    for b in 0..batch {
        let latents = &src[b * t * z..(b + 1) * t * z];
        dst[b * row..b * row + t * z].copy_from_slice(latents);
        for dt in 1..t {
            let out = b * row + t * z + (dt - 1) * z;
            for i in 0..z {
                dst[out + i] = latents[dt * z + i] - latents[(dt - 1) * z + i];
            }
        }
    }
    head
}

/// Adjoint of [`flare_head_input`]: gradient for the `(B*T, z)` latents.
fn flare_head_backward<E: Scalar>(g_head: &Tensor<E>, batch: usize, t: usize, z: usize) -> Tensor<E> {
    let mut g_latent = Tensor::zeros(&[batch * t, z]);
    let src = g_head.data();
    let dst = g_latent.data_mut();
    let row = (2 * t - 1) * z;
    for b in 0..batch {
        for tt in 0..t {
            let out = (b * t + tt) * z;
            let direct = b * row + tt * z;
            for i in 0..z {
                dst[out + i] = src[direct + i];
            }
            // z_t appears in d_t with +1 and in d_{t+1} with -1.
            if tt >= 1 {
                let d = b * row + t * z + (tt - 1) * z;
                for i in 0..z {
                    dst[out + i] += src[d + i];
                }
            }
            if tt + 1 < t {
                let d = b * row + t * z + tt * z;
                for i in 0..z {
                    dst[out + i] -= src[d + i];
                }
            }
        }
    }
    g_latent
}
