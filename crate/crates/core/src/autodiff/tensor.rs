use ndarray::Array2;
use rand::Rng;

use super::AutodiffError;

/// Dense row-major array of finite `f64` values with rank at most 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.len() > 2 || shape.iter().product::<usize>() != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} with {} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteValue { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    /// Skips validation; callers guarantee the length matches.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_array2(a: &Array2<f64>) -> Result<Self, AutodiffError> {
        let (r, c) = a.dim();
        Self::new(vec![r, c], a.iter().copied().collect())
    }

    pub fn to_array2(&self) -> Array2<f64> {
        let (r, c) = self.dims();
        Array2::from_shape_vec((r, c), self.data.clone()).expect("length matches shape")
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], data)
    }

    /// Uniform in `[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]`, shape `fan_in x fan_out`.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
        Self::from_parts(vec![fan_in, fan_out], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)`, treating scalars as `1 x 1` and vectors as one row.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => unreachable!("rank is at most 2"),
        }
    }

    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.dims().1;
        &self.data[i * c..(i + 1) * c]
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out += a · b` for `a: m x k`, `b: k x n`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m x n`, `b: k x n`; `out: m x k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ra = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let rb = &b[p * n..(p + 1) * n];
            out[i * k + p] += ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += aᵀ · b` for `a: m x k`, `b: m x n`; `out: k x n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let rb = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in out[p * n..(p + 1) * n].iter_mut().zip(rb) {
                *o += x * y;
            }
        }
    }
}
