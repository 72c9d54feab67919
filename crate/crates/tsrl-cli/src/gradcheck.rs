//! 64-bit finite-difference audit of every backward pass: the conv, linear,
//! relu, and Huber primitives, the temporal shift adjoint, and all four
//! network variants end to end. Seeds are fixed so repeat runs print
//! identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsrl_core::nn::{
    conv2d_backward, conv2d_forward, finite_diff_grad, huber_loss, linear_backward,
    linear_forward, max_rel_err, relu_backward, relu_forward,
};
use tsrl_core::qnet::{NetworkConfig, QNetwork, TrunkLayer, Variant};
use tsrl_core::shift::shift_forward;
use tsrl_core::tensor::Tensor;
use tsrl_core::Result;

/// Injectable shift adjoint so a corrupted implementation can be audited.
pub type ShiftBackwardFn = fn(&Tensor<f64>, usize) -> Result<Tensor<f64>>;

pub const TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub components: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed())
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.components.iter().filter(|c| !c.passed()).map(|c| c.name).collect()
    }
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv2d() -> Result<f64> {
    let mut worst = 0.0f64;
    for (batch, cin, cout, hw, k, stride, seed) in
        [(2, 3, 4, 6, 3, 1, 10u64), (1, 2, 3, 7, 3, 2, 11u64)]
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[batch, cin, hw, hw], -1.0, 1.0, &mut rng);
        let w = random_tensor(&[cout, cin, k, k], -0.5, 0.5, &mut rng);
        let b = random_tensor(&[cout], -0.5, 0.5, &mut rng);
        let out = conv2d_forward(&x, &w, &b, stride)?;
        let proj = random_tensor(out.shape(), -1.0, 1.0, &mut rng);

        let (gx, gw, gb) = conv2d_backward(&x, &w, stride, &proj)?;
        let fd_x = finite_diff_grad(
            &mut |t: &Tensor<f64>| dot(&conv2d_forward(t, &w, &b, stride).unwrap(), &proj),
            &x,
            FD_STEP,
        );
        let fd_w = finite_diff_grad(
            &mut |t: &Tensor<f64>| dot(&conv2d_forward(&x, t, &b, stride).unwrap(), &proj),
            &w,
            FD_STEP,
        );
        let fd_b = finite_diff_grad(
            &mut |t: &Tensor<f64>| dot(&conv2d_forward(&x, &w, t, stride).unwrap(), &proj),
            &b,
            FD_STEP,
        );
        worst = worst
            .max(max_rel_err(&gx, &fd_x, REL_ERR_FLOOR))
            .max(max_rel_err(&gw, &fd_w, REL_ERR_FLOOR))
            .max(max_rel_err(&gb, &fd_b, REL_ERR_FLOOR));
    }
    Ok(worst)
}

fn check_linear() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = random_tensor(&[3, 7], -1.0, 1.0, &mut rng);
    let w = random_tensor(&[4, 7], -0.5, 0.5, &mut rng);
    let b = random_tensor(&[4], -0.5, 0.5, &mut rng);
    let out = linear_forward(&x, &w, &b)?;
    let proj = random_tensor(out.shape(), -1.0, 1.0, &mut rng);

    let (gx, gw, gb) = linear_backward(&x, &w, &proj)?;
    let fd_x = finite_diff_grad(
        &mut |t: &Tensor<f64>| dot(&linear_forward(t, &w, &b).unwrap(), &proj),
        &x,
        FD_STEP,
    );
    let fd_w = finite_diff_grad(
        &mut |t: &Tensor<f64>| dot(&linear_forward(&x, t, &b).unwrap(), &proj),
        &w,
        FD_STEP,
    );
    let fd_b = finite_diff_grad(
        &mut |t: &Tensor<f64>| dot(&linear_forward(&x, &w, t).unwrap(), &proj),
        &b,
        FD_STEP,
    );
    Ok(max_rel_err(&gx, &fd_x, REL_ERR_FLOOR)
        .max(max_rel_err(&gw, &fd_w, REL_ERR_FLOOR))
        .max(max_rel_err(&gb, &fd_b, REL_ERR_FLOOR)))
}

fn check_relu() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    // Keep every element at least 0.2 away from the kink at zero.
    let data: Vec<f64> = (0..60)
        .map(|_| {
            let magnitude = rng.gen_range(0.2..1.2);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let x = Tensor::from_vec(&[4, 15], data)?;
    let proj = random_tensor(x.shape(), -1.0, 1.0, &mut rng);

    let analytic = relu_backward(&x, &proj)?;
    let fd = finite_diff_grad(
        &mut |t: &Tensor<f64>| dot(&relu_forward(t), &proj),
        &x,
        FD_STEP,
    );
    Ok(max_rel_err(&analytic, &fd, REL_ERR_FLOOR))
}

fn check_huber() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let delta = 1.0;
    let target = random_tensor(&[12], -1.0, 1.0, &mut rng);
    // Residuals alternate between the quadratic and linear regions, at least
    // 0.2 away from |residual| = delta.
    let residuals = [0.3, -0.5, 1.4, -1.7];
    let pred_data: Vec<f64> = target
        .data()
        .iter()
        .enumerate()
        .map(|(i, &t)| t + residuals[i % residuals.len()])
        .collect();
    let pred = Tensor::from_vec(&[12], pred_data)?;
    let weights = random_tensor(&[12], 0.1, 1.0, &mut rng);

    let (_, analytic) = huber_loss(&pred, &target, &weights, delta)?;
    let fd = finite_diff_grad(
        &mut |t: &Tensor<f64>| huber_loss(t, &target, &weights, delta).unwrap().0,
        &pred,
        FD_STEP,
    );
    Ok(max_rel_err(&analytic, &fd, REL_ERR_FLOOR))
}

fn check_shift(shift_backward_impl: ShiftBackwardFn) -> Result<f64> {
    let mut worst = 0.0f64;
    for (shape, divisor, seed) in [
        ([2usize, 3, 4, 3, 3], 2usize, 50u64),
        ([1, 4, 6, 2, 2], 3, 51),
        ([2, 2, 5, 2, 3], 1, 52),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&shape, -1.0, 1.0, &mut rng);
        let out = shift_forward(&x, divisor)?;
        let proj = random_tensor(out.shape(), -1.0, 1.0, &mut rng);

        let analytic = shift_backward_impl(&proj, divisor)?;
        let fd = finite_diff_grad(
            &mut |t: &Tensor<f64>| dot(&shift_forward(t, divisor).unwrap(), &proj),
            &x,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &fd, REL_ERR_FLOOR));
    }
    Ok(worst)
}

fn tiny_config(variant: Variant) -> NetworkConfig {
    NetworkConfig {
        variant,
        frames: 3,
        input_hw: (8, 8),
        actions: 2,
        trunk: vec![
            TrunkLayer { out_channels: 4, kernel: (3, 3), stride: 1 },
            TrunkLayer { out_channels: 4, kernel: (3, 3), stride: 1 },
            TrunkLayer { out_channels: 4, kernel: (3, 3), stride: 2 },
        ],
        fc_width: 8,
        shift_divisor: 2,
    }
}

fn check_network(variant: Variant) -> Result<f64> {
    let config = tiny_config(variant);
    let mut net = QNetwork::<f64>::new(config.clone(), 60)?;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let x = random_tensor(&[2, config.frames, 8, 8], 0.0, 1.0, &mut rng);
    let (q, cache) = net.forward_cached(&x)?;
    let proj = random_tensor(q.shape(), -1.0, 1.0, &mut rng);

    net.params.zero_grads();
    net.backward(cache, &proj)?;
    let analytic: Vec<Tensor<f64>> = net.params.iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    for idx in 0..net.params.len() {
        let original = net.params.value(idx).clone();
        let fd = finite_diff_grad(
            &mut |t: &Tensor<f64>| {
                net.params.value_mut(idx).data_mut().copy_from_slice(t.data());
                dot(&net.forward(&x).unwrap(), &proj)
            },
            &original,
            FD_STEP,
        );
        net.params.value_mut(idx).data_mut().copy_from_slice(original.data());
        worst = worst.max(max_rel_err(&analytic[idx], &fd, REL_ERR_FLOOR));
    }
    Ok(worst)
}

/// Run every component, auditing the supplied shift adjoint. The network
/// checks always use the library's own backward pass; the injectable adjoint
/// exists so tests can prove a corrupted shift implementation is caught.
pub fn run_suite(shift_backward_impl: ShiftBackwardFn) -> Result<GradcheckReport> {
    let mut components = Vec::new();
    components.push(ComponentResult { name: "conv2d", max_rel_err: check_conv2d()? });
    components.push(ComponentResult { name: "linear", max_rel_err: check_linear()? });
    components.push(ComponentResult { name: "relu", max_rel_err: check_relu()? });
    components.push(ComponentResult { name: "huber", max_rel_err: check_huber()? });
    components.push(ComponentResult {
        name: "temporal-shift",
        max_rel_err: check_shift(shift_backward_impl)?,
    });
    for variant in Variant::all() {
        let name = match variant {
            Variant::Tsrl => "qnet-tsrl",
            Variant::FrameStack => "qnet-framestack",
            Variant::Flare => "qnet-flare",
            Variant::SingleFrame => "qnet-singleframe",
        };
        components.push(ComponentResult { name, max_rel_err: check_network(variant)? });
    }
    Ok(GradcheckReport { components })
}

/// Run the full suite against the real shift adjoint and print one line per
/// component. Returns the report; the caller turns failure into an exit code.
pub fn cmd_gradcheck() -> Result<GradcheckReport> {
    let report = run_suite(tsrl_core::shift::shift_backward::<f64>)?;
    for component in &report.components {
        println!(
            "{:<18} max rel err {:>12.3e}  {}",
            component.name,
            component.max_rel_err,
            if component.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(report)
}
