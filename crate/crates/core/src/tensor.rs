//! Dense row-major `f64` arrays and the kernels the tape is built from.

use crate::error::{Error, Result};

/// A dense row-major array of `f64`.
///
/// Gradient bookkeeping (`requires_grad`, accumulated gradient) lives on the
/// [`Tape`](crate::tape::Tape) node that wraps a tensor, not on the tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Entry `(i, j)` of a 2-D tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Max-abs norm over all entries.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm (max absolute row sum) of a 2-D tensor.
    pub fn norm_inf(&self) -> f64 {
        let c = self.shape[1];
        self.data.chunks(c).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Transpose of a 2-D tensor, or of the last two axes of a 3-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::Shape(format!("transpose needs >= 2 axes, got {:?}", self.shape)));
        }
        let (r, c) = (self.shape[nd - 2], self.shape[nd - 1]);
        let batch = self.numel() / (r * c).max(1);
        let mut out = vec![0.0; self.numel()];
        for b in 0..batch {
            let src = &self.data[b * r * c..(b + 1) * r * c];
            let dst = &mut out[b * r * c..(b + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(nd - 2, nd - 1);
        Ok(Tensor { shape, data: out })
    }

    pub fn trace(&self) -> Result<f64> {
        let n = square_extent(self)?;
        Ok((0..n).map(|i| self.data[i * n + i]).sum())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let plan = MatmulPlan::new(self.shape(), other.shape())?;
        let mut out = vec![0.0; plan.out_shape.iter().product()];
        plan.run(&self.data, &other.data, &mut out);
        Tensor::new(plan.out_shape.clone(), out)
    }
}

pub(crate) fn square_extent(t: &Tensor) -> Result<usize> {
    match t.shape() {
        [r, c] if r == c => Ok(*r),
        s => Err(Error::Shape(format!("expected a square matrix, got {s:?}"))),
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` over strided row-major buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // op(A) is m x k; stored as A (m x k) or A^T where A is k x m.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape bookkeeping for matmul with broadcasting over one leading batch axis.
#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Number of batch slices in the output.
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || Error::Shape(format!("matmul {a:?} x {b:?}"));
        let (ab, m, ka) = match a {
            [m, k] => (None, *m, *k),
            [bt, m, k] => (Some(*bt), *m, *k),
            _ => return Err(err()),
        };
        let (bb, kb, n) = match b {
            [k, n] => (None, *k, *n),
            [bt, k, n] => (Some(*bt), *k, *n),
            _ => return Err(err()),
        };
        if ka != kb {
            return Err(err());
        }
        let plan = match (ab, bb) {
            (None, None) => MatmulPlan {
                m,
                k: ka,
                n,
                batch: 1,
                a_batched: false,
                b_batched: false,
                out_shape: vec![m, n],
            },
            // A batched, B shared: fold the batch into the rows.
            (Some(bt), None) => MatmulPlan {
                m: bt * m,
                k: ka,
                n,
                batch: 1,
                a_batched: false,
                b_batched: false,
                out_shape: vec![bt, m, n],
            },
            (None, Some(bt)) => MatmulPlan {
                m,
                k: ka,
                n,
                batch: bt,
                a_batched: false,
                b_batched: true,
                out_shape: vec![bt, m, n],
            },
            (Some(x), Some(y)) if x == y => MatmulPlan {
                m,
                k: ka,
                n,
                batch: x,
                a_batched: true,
                b_batched: true,
                out_shape: vec![x, m, n],
            },
            _ => return Err(err()),
        };
        Ok(plan)
    }

    pub fn run(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        for s in 0..self.batch {
            let av = if self.a_batched { &a[s * m * k..(s + 1) * m * k] } else { a };
            let bv = if self.b_batched { &b[s * k * n..(s + 1) * k * n] } else { b };
            gemm(m, k, n, av, false, bv, false, &mut out[s * m * n..(s + 1) * m * n], 0.0);
        }
    }

    /// Accumulates `dA += dC * B^T` into `ga`.
    pub fn grad_a(&self, gc: &[f64], b: &[f64], ga: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        for s in 0..self.batch {
            let bv = if self.b_batched { &b[s * k * n..(s + 1) * k * n] } else { b };
            let g = &gc[s * m * n..(s + 1) * m * n];
            let dst = if self.a_batched { &mut ga[s * m * k..(s + 1) * m * k] } else { &mut ga[..] };
            gemm(m, n, k, g, false, bv, true, dst, 1.0);
        }
    }

    /// Accumulates `dB += A^T * dC` into `gb`.
    pub fn grad_b(&self, gc: &[f64], a: &[f64], gb: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        for s in 0..self.batch {
            let av = if self.a_batched { &a[s * m * k..(s + 1) * m * k] } else { a };
            let g = &gc[s * m * n..(s + 1) * m * n];
            let dst = if self.b_batched { &mut gb[s * k * n..(s + 1) * k * n] } else { &mut gb[..] };
            gemm(k, m, n, av, true, g, false, dst, 1.0);
        }
    }
}
