//! Dense row-major tensors and the named parameter store.
//!
//! Everything in this crate computes on [`Tensor`], a flat `Vec` with an
//! explicit shape. Training runs in `f32`; gradient verification runs the
//! same generic code in `f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use num_traits::{Float, FromPrimitive, NumAssignOps};

use crate::error::{config_err, Result};

/// Element type for tensors. Implemented for `f32` and `f64`.
///
/// The three `gemm_*` methods accumulate a matrix product into `out`
/// (`out += op(a) * op(b)`). The `f32` implementation dispatches to the
/// optimized kernel behind `ndarray`; the `f64` implementation is a plain
/// sequential loop whose accumulation order matches a naive nested-loop
/// summation exactly, which is what the 64-bit verification mode relies on.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + Default + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    /// out(m,n) += a(m,k) * b(n,k)^T
    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]);

    /// out(m,n) += a(m,k) * b(k,n)
    fn gemm_nn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]);

    /// out(m,n) += a(rows,m)^T * b(rows,n)
    fn gemm_tn(rows: usize, m: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]);
}

fn view2<E: Scalar>(r: usize, c: usize, data: &[E]) -> ArrayView2<'_, E> {
    ArrayView2::from_shape((r, c), data).expect("gemm operand shape/length mismatch")
}

fn view2_mut<E: Scalar>(r: usize, c: usize, data: &mut [E]) -> ArrayViewMut2<'_, E> {
    ArrayViewMut2::from_shape((r, c), data).expect("gemm output shape/length mismatch")
}

impl Scalar for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        let bv = view2(n, k, b);
        general_mat_mul(1.0, &view2(m, k, a), &bv.t(), 1.0, &mut view2_mut(m, n, out));
    }

    fn gemm_nn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        general_mat_mul(1.0, &view2(m, k, a), &view2(k, n, b), 1.0, &mut view2_mut(m, n, out));
    }

    fn gemm_tn(rows: usize, m: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        let av = view2(rows, m, a);
        general_mat_mul(1.0, &av.t(), &view2(rows, n, b), 1.0, &mut view2_mut(m, n, out));
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = *o;
                for l in 0..k {
                    acc += arow[l] * brow[l];
                }
                *o = acc;
            }
        }
    }

    fn gemm_nn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &al) in arow.iter().enumerate() {
                let brow = &b[l * n..(l + 1) * n];
                for j in 0..n {
                    orow[j] += al * brow[j];
                }
            }
        }
    }

    fn gemm_tn(rows: usize, m: usize, n: usize, a: &[Self], b: &[Self], out: &mut [Self]) {
        for r in 0..rows {
            let arow = &a[r * m..(r + 1) * m];
            let brow = &b[r * n..(r + 1) * n];
            for (i, &ai) in arow.iter().enumerate() {
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += ai * brow[j];
                }
            }
        }
    }
}

/// Dense row-major tensor. Invariant: `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![E::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return config_err(format!(
                "tensor shape {:?} needs {} elements, got {}",
                shape,
                want,
                data.len()
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Same buffer under a new shape with equal element count; no data copy.
    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != self.data.len() {
            return config_err(format!(
                "cannot reshape {:?} ({} elements) into {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                want
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    /// Copying variant of [`Tensor::into_shape`].
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_shape(shape)
    }

    /// Element accessor for tests and oracles; not used on hot paths.
    pub fn at(&self, index: &[usize]) -> E {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {} out of bounds on axis {} (dim {})", ix, i, dim);
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn at_mut(&mut self, index: &[usize]) -> &mut E {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {} out of bounds on axis {} (dim {})", ix, i, dim);
            flat = flat * dim + ix;
        }
        &mut self.data[flat]
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| F::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> E {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(E::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// One named parameter with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

/// Ordered collection of uniquely named parameters.
///
/// Iteration order is registration order everywhere: initialization draws,
/// optimizer state, and checkpoint layout all rely on it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E> {
    params: Vec<Param<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return config_err(format!("duplicate parameter name '{}'", name));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param<E> {
        &self.params[index]
    }

    pub fn value(&self, index: usize) -> &Tensor<E> {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<E> {
        &mut self.params[index].value
    }

    pub fn grad(&self, index: usize) -> &Tensor<E> {
        &self.params[index].grad
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = E::zero();
            }
        }
    }

    pub fn accumulate_grad(&mut self, index: usize, delta: &Tensor<E>) {
        let grad = &mut self.params[index].grad;
        assert_eq!(grad.shape(), delta.shape(), "gradient shape mismatch");
        for (g, &d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    /// Total number of scalar elements across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy parameter values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<E>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return config_err(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return config_err(format!(
                    "parameter mismatch: '{}' {:?} vs '{}' {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                ));
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }
}
