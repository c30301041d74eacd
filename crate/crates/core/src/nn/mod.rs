//! A small CPU neural-network toolkit with hand-written backward passes.
//!
//! Every model keeps its parameters in one flat `Vec<f64>`; layers hold
//! offsets into it. Gradients are a flat vector of the same length, which
//! keeps the optimizer, checkpointing and fingerprinting trivial and makes
//! the training step a pure function of `(params, batch)`.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;

pub use layers::{Conv2d, Layer, Linear, ParamAllocator, Sequential};
pub use optim::AdamW;

/// Dense `N×C×H×W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// A batch of flat vectors, shaped `N×D×1×1`.
    pub fn from_rows(n: usize, d: usize, data: Vec<f64>) -> Self {
        Self::new([n, d, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stack equally-shaped samples into a batch.
    pub fn stack(samples: &[&[f64]], chw: [usize; 3]) -> Self {
        let mut data = Vec::with_capacity(samples.len() * chw.iter().product::<usize>());
        for s in samples {
            data.extend_from_slice(s);
        }
        Self::new([samples.len(), chw[0], chw[1], chw[2]], data)
    }
}

/// `C = A·B + beta·C`, all row-major, with optional transposes of A and B.
/// `A` is `m×k` after transposition, `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
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
