//! Forward and backward kernels: valid-padding conv2d, fully connected,
//! ReLU, and the importance-weighted Huber loss.
//!
//! Convolutions run as im2col plus a matrix product. In `f64` the product
//! accumulates in the same order as a naive nested-loop summation, so the
//! 64-bit path is bit-identical to the reference oracle; the `f32` path
//! trades that for speed.

use crate::error::{config_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Valid-padding output size; `None` when the kernel does not fit.
pub fn conv_output_hw(input: (usize, usize), kernel: (usize, usize), stride: usize) -> Option<(usize, usize)> {
    if stride == 0 || kernel.0 == 0 || kernel.1 == 0 || input.0 < kernel.0 || input.1 < kernel.1 {
        return None;
    }
    Some(((input.0 - kernel.0) / stride + 1, (input.1 - kernel.1) / stride + 1))
}

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<E: Scalar>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>, stride: usize) -> Result<ConvDims> {
    if x.rank() != 4 {
        return config_err(format!("conv2d: input must have 4 axes (B,C,H,W), got {:?}", x.shape()));
    }
    if weight.rank() != 4 {
        return config_err(format!(
            "conv2d: weight must have 4 axes (Cout,Cin,KH,KW), got {:?}",
            weight.shape()
        ));
    }
    if bias.rank() != 1 {
        return config_err(format!("conv2d: bias must have 1 axis, got {:?}", bias.shape()));
    }
    let (batch, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wcin, kh, kw) = (weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    if wcin != cin {
        return config_err(format!(
            "conv2d: channel axis mismatch, input has {} channels but weight expects {}",
            cin, wcin
        ));
    }
    if bias.shape()[0] != cout {
        return config_err(format!(
            "conv2d: bias axis has {} entries but weight has {} output channels",
            bias.shape()[0],
            cout
        ));
    }
    let (oh, ow) = conv_output_hw((h, w), (kh, kw), stride).ok_or_else(|| {
        crate::error::Error::Config(format!(
            "conv2d: kernel {}x{} with stride {} does not fit input {}x{}",
            kh, kw, stride, h, w
        ))
    })?;
    Ok(ConvDims { batch, cin, h, w, cout, kh, kw, oh, ow })
}

/// Gather conv patches into a (B*OH*OW, Cin*KH*KW) row-major matrix.
fn im2col<E: Scalar>(x: &Tensor<E>, d: &ConvDims, stride: usize) -> Vec<E> {
    let k = d.cin * d.kh * d.kw;
    let mut col = vec![E::zero(); d.batch * d.oh * d.ow * k];
    let xd = x.data();
    let plane = d.h * d.w;
    for b in 0..d.batch {
        let xb = &xd[b * d.cin * plane..(b + 1) * d.cin * plane];
        for i in 0..d.oh {
            for j in 0..d.ow {
                let row = ((b * d.oh + i) * d.ow + j) * k;
                let mut dst = row;
                for c in 0..d.cin {
                    let cbase = c * plane + i * stride * d.w + j * stride;
                    for u in 0..d.kh {
                        let src = cbase + u * d.w;
                        col[dst..dst + d.kw].copy_from_slice(&xb[src..src + d.kw]);
                        dst += d.kw;
                    }
                }
            }
        }
    }
    col
}

/// 2-D convolution, valid padding.
///
/// `x` is (B,Cin,H,W), `weight` is (Cout,Cin,KH,KW), `bias` is (Cout).
/// Returns (B,Cout,OH,OW) with `OH = (H-KH)/stride + 1`.
pub fn conv2d_forward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
) -> Result<Tensor<E>> {
    let d = conv_dims(x, weight, bias, stride)?;
    let k = d.cin * d.kh * d.kw;
    let rows = d.batch * d.oh * d.ow;
    let col = im2col(x, &d, stride);

    // out2[row, o] starts at bias[o] and accumulates the patch dot product.
    let mut out2 = vec![E::zero(); rows * d.cout];
    for row in 0..rows {
        out2[row * d.cout..(row + 1) * d.cout].copy_from_slice(bias.data());
    }
    E::gemm_nt(rows, k, d.cout, &col, weight.data(), &mut out2);

    // Permute (b,i,j,o) rows into (B,Cout,OH,OW).
    let mut out = Tensor::zeros(&[d.batch, d.cout, d.oh, d.ow]);
    let od = out.data_mut();
    let ospatial = d.oh * d.ow;
    for b in 0..d.batch {
        for ij in 0..ospatial {
            let src = (b * ospatial + ij) * d.cout;
            for o in 0..d.cout {
                od[(b * d.cout + o) * ospatial + ij] = out2[src + o];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let bias = Tensor::zeros(&[weight.shape()[0]]);
    let d = conv_dims(x, weight, &bias, stride)?;
    let want = [d.batch, d.cout, d.oh, d.ow];
    if grad_out.shape() != want {
        return config_err(format!(
            "conv2d backward: grad_out shape {:?} does not match output shape {:?}",
            grad_out.shape(),
            want
        ));
    }
    let k = d.cin * d.kh * d.kw;
    let rows = d.batch * d.oh * d.ow;
    let ospatial = d.oh * d.ow;

    // Permute grad_out (B,Cout,OH,OW) into (rows, Cout).
    let gd = grad_out.data();
    let mut grad2 = vec![E::zero(); rows * d.cout];
    for b in 0..d.batch {
        for o in 0..d.cout {
            let src = (b * d.cout + o) * ospatial;
            for ij in 0..ospatial {
                grad2[(b * ospatial + ij) * d.cout + o] = gd[src + ij];
            }
        }
    }

    let mut grad_bias = Tensor::zeros(&[d.cout]);
    let gb = grad_bias.data_mut();
    for row in 0..rows {
        for o in 0..d.cout {
            gb[o] += grad2[row * d.cout + o];
        }
    }

    let col = im2col(x, &d, stride);
    let mut grad_w = Tensor::zeros(weight.shape());
    E::gemm_tn(rows, d.cout, k, &grad2, &col, grad_w.data_mut());

    let mut grad_col = vec![E::zero(); rows * k];
    E::gemm_nn(rows, d.cout, k, &grad2, weight.data(), &mut grad_col);

    // Scatter-add columns back onto the input grid (col2im).
    let mut grad_x = Tensor::zeros(x.shape());
    let gx = grad_x.data_mut();
    let plane = d.h * d.w;
    for b in 0..d.batch {
        let gxb = &mut gx[b * d.cin * plane..(b + 1) * d.cin * plane];
        for i in 0..d.oh {
            for j in 0..d.ow {
                let row = ((b * d.oh + i) * d.ow + j) * k;
                let mut src = row;
                for c in 0..d.cin {
                    let cbase = c * plane + i * stride * d.w + j * stride;
                    for u in 0..d.kh {
                        let dst = cbase + u * d.w;
                        for v in 0..d.kw {
                            gxb[dst + v] += grad_col[src + v];
                        }
                        src += d.kw;
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_bias))
}

/// Fully connected layer: `x` (B,F) times `weight` (O,F) transposed, plus bias.
pub fn linear_forward<E: Scalar>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    if x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 {
        return config_err(format!(
            "linear: expected x (B,F), weight (O,F), bias (O); got {:?}, {:?}, {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        ));
    }
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let (o, wf) = (weight.shape()[0], weight.shape()[1]);
    if wf != f {
        return config_err(format!("linear: feature axis mismatch, x has {} features, weight expects {}", f, wf));
    }
    if bias.shape()[0] != o {
        return config_err(format!("linear: bias axis has {} entries, weight has {} outputs", bias.shape()[0], o));
    }
    let mut out = Tensor::zeros(&[b, o]);
    let od = out.data_mut();
    for row in 0..b {
        od[row * o..(row + 1) * o].copy_from_slice(bias.data());
    }
    E::gemm_nt(b, f, o, x.data(), weight.data(), od);
    Ok(out)
}

/// Gradients of [`linear_forward`] with respect to input, weight, and bias.
pub fn linear_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let o = weight.shape()[0];
    if grad_out.shape() != [b, o] {
        return config_err(format!(
            "linear backward: grad_out shape {:?} does not match output shape {:?}",
            grad_out.shape(),
            [b, o]
        ));
    }
    let mut grad_x = Tensor::zeros(&[b, f]);
    E::gemm_nn(b, o, f, grad_out.data(), weight.data(), grad_x.data_mut());
    let mut grad_w = Tensor::zeros(&[o, f]);
    E::gemm_tn(b, o, f, grad_out.data(), x.data(), grad_w.data_mut());
    let mut grad_bias = Tensor::zeros(&[o]);
    let gb = grad_bias.data_mut();
    for row in 0..b {
        for j in 0..o {
            gb[j] += grad_out.data()[row * o + j];
        }
    }
    Ok((grad_x, grad_w, grad_bias))
}

/// Elementwise max(0, x).
pub fn relu_forward<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| if v > E::zero() { v } else { E::zero() })
}

/// Pass gradient where the original input was strictly positive
/// (subgradient 0 at exactly 0).
pub fn relu_backward<E: Scalar>(x: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    if x.shape() != grad_out.shape() {
        return config_err(format!(
            "relu backward: input shape {:?} does not match grad shape {:?}",
            x.shape(),
            grad_out.shape()
        ));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Importance-weighted Huber loss, averaged over the batch.
///
/// Returns the scalar loss and d(loss)/d(pred). The quadratic zone covers
/// `|err| <= delta`; outside it the penalty is linear.
pub fn huber_loss<E: Scalar>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    weights: &Tensor<E>,
    delta: E,
) -> Result<(E, Tensor<E>)> {
    if pred.shape() != target.shape() || pred.shape() != weights.shape() || pred.rank() != 1 {
        return config_err(format!(
            "huber: pred {:?}, target {:?}, weights {:?} must be equal-length vectors",
            pred.shape(),
            target.shape(),
            weights.shape()
        ));
    }
    if delta <= E::zero() {
        return config_err(format!("huber: delta must be positive, got {}", delta));
    }
    if pred.is_empty() {
        return config_err("huber: empty batch".to_string());
    }
    let n = E::from_f64_lossy(pred.len() as f64);
    let half = E::from_f64_lossy(0.5);
    let mut loss = E::zero();
    let mut grad = Tensor::zeros(pred.shape());
    let gd = grad.data_mut();
    for i in 0..pred.len() {
        let e = pred.data()[i] - target.data()[i];
        let w = weights.data()[i];
        let (l, dl) = if e.abs() <= delta {
            (half * e * e, e)
        } else {
            (delta * (e.abs() - half * delta), delta * e.signum())
        };
        loss += w * l;
        gd[i] = w * dl / n;
    }
    Ok((loss / n, grad))
}
