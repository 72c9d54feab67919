//! Uni-directional temporal channel shift.
//!
//! Activations of a stack of frames are viewed as (B, T, C, H, W). The first
//! `C / divisor` channels of every frame are moved one step toward the newer
//! frame (a roll of +1 along the time axis), and the slot at frame 0 is then
//! restored from the original tensor, so the oldest frame is duplicated
//! rather than zero-filled. The remaining channels pass through untouched.
//!
//! The operation owns no parameters and is linear, so its adjoint
//! ([`shift_backward`]) is a fixed re-indexing as well: the gradient for the
//! newest frame's shifted channels is exactly zero because those inputs are
//! discarded by the forward map.

use crate::error::{config_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of leading channels that shift: `channels / divisor`, rounded down.
pub fn shifted_channel_count(channels: usize, divisor: usize) -> Result<usize> {
    if divisor == 0 {
        return config_err("shift divisor must be positive".to_string());
    }
    Ok(channels / divisor)
}

fn check_axes<E: Scalar>(x: &Tensor<E>, what: &str) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 5 {
        return config_err(format!("{}: activation must have 5 axes (B,T,C,H,W), got {:?}", what, x.shape()));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2], s[3] * s[4]))
}

/// Shift the first `C/divisor` channels one frame toward the newer end.
///
/// Implemented as a roll of +1 on the time axis followed by restoring frame 0
/// from the input (the roll's wrap-around is overwritten, duplicating the
/// oldest frame).
pub fn shift_forward<E: Scalar>(x: &Tensor<E>, divisor: usize) -> Result<Tensor<E>> {
    let (b, t, c, plane) = check_axes(x, "shift_forward")?;
    let k = shifted_channel_count(c, divisor)?;
    let mut out = x.clone();
    if k == 0 || t == 0 {
        return Ok(out);
    }
    let xd = x.data();
    let od = out.data_mut();
    let frame = c * plane;
    for bb in 0..b {
        let base = bb * t * frame;
        for tt in 0..t {
            // roll: destination frame tt takes source frame (tt - 1) mod T
            let src_t = (tt + t - 1) % t;
            for ch in 0..k {
                let dst = base + tt * frame + ch * plane;
                let src = base + src_t * frame + ch * plane;
                od[dst..dst + plane].copy_from_slice(&xd[src..src + plane]);
            }
        }
        // restore frame 0 so the oldest frame duplicates instead of wrapping
        for ch in 0..k {
            let at = base + ch * plane;
            od[at..at + plane].copy_from_slice(&xd[at..at + plane]);
        }
    }
    Ok(out)
}

/// Adjoint of [`shift_forward`] for the same divisor.
///
/// For a shifted channel: frame 0 collects its own gradient plus frame 1's
/// (the duplication), interior frames take the gradient one frame newer, and
/// the newest frame receives exactly zero.
pub fn shift_backward<E: Scalar>(grad_out: &Tensor<E>, divisor: usize) -> Result<Tensor<E>> {
    let (b, t, c, plane) = check_axes(grad_out, "shift_backward")?;
    let k = shifted_channel_count(c, divisor)?;
    let mut grad_in = grad_out.clone();
    if k == 0 || t <= 1 {
        return Ok(grad_in);
    }
    let gd = grad_out.data();
    let gi = grad_in.data_mut();
    let frame = c * plane;
    for bb in 0..b {
        let base = bb * t * frame;
        for ch in 0..k {
            let ch_off = ch * plane;
            // frame 0: own gradient plus the copy sent to frame 1
            {
                let dst = base + ch_off;
                let src = base + frame + ch_off;
                for p in 0..plane {
                    gi[dst + p] = gd[dst + p] + gd[src + p];
                }
            }
            // interior frames: gradient arrives from one frame newer
            for tt in 1..t - 1 {
                let dst = base + tt * frame + ch_off;
                let src = base + (tt + 1) * frame + ch_off;
                gi[dst..dst + plane].copy_from_slice(&gd[src..src + plane]);
            }
            // newest frame: its shifted input was discarded
            let dst = base + (t - 1) * frame + ch_off;
            for p in 0..plane {
                gi[dst + p] = E::zero();
            }
        }
    }
    Ok(grad_in)
}
