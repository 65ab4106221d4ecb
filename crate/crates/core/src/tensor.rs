//! Dense row-major arrays of rank 1 to 3 and the few kernels the models need.
//!
//! Every array in the model family fits in three dimensions, so there is no
//! general N-d machinery here. Operations never mutate their inputs unless the
//! method name says so (`*_assign`, `add_outer`, ...).

use crate::error::{Error, Result};

/// Dense array of `f64` with up to three extents, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "tensor rank must be 1..=3, got {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Argument(format!(
                "tensor rank must be 1..=3, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("Tensor::from_vec", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Tensor::zeros(shape);
        for (i, x) in t.data.iter_mut().enumerate() {
            *x = f(i);
        }
        t
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn get3(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + l]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Slice `t[i, :, :]` of a rank-3 tensor as a rank-2 tensor.
    pub fn slice0(&self, i: usize) -> Tensor {
        let (p, q) = (self.shape[1], self.shape[2]);
        Tensor {
            shape: vec![p, q],
            data: self.data[i * p * q..(i + 1) * p * q].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("add", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("transpose", &self.shape, &[2]));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// `y = self · x` for a rank-2 tensor.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.shape[0]];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if self.rank() != 2 || self.shape[1] != x.len() || self.shape[0] != y.len() {
            return Err(Error::dim("matvec", &self.shape, &[x.len()]));
        }
        let c = self.shape[1];
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(c)) {
            *yi = dot(row, x);
        }
        Ok(())
    }

    /// `y += selfᵀ · x` for a rank-2 tensor.
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if self.rank() != 2 || self.shape[0] != x.len() || self.shape[1] != y.len() {
            return Err(Error::dim("matvec_t", &self.shape, &[x.len()]));
        }
        let c = self.shape[1];
        for (xi, row) in x.iter().zip(self.data.chunks_exact(c)) {
            if *xi != 0.0 {
                axpy(*xi, row, y);
            }
        }
        Ok(())
    }

    /// `self += alpha · a ⊗ b` for a rank-2 tensor of shape `(len a, len b)`.
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) -> Result<()> {
        if self.rank() != 2 || self.shape[0] != a.len() || self.shape[1] != b.len() {
            return Err(Error::dim("add_outer", &self.shape, &[a.len(), b.len()]));
        }
        let c = self.shape[1];
        for (ai, row) in a.iter().zip(self.data.chunks_exact_mut(c)) {
            if *ai != 0.0 {
                axpy(alpha * ai, b, row);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let (n, m, p) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[n, p]);
    // i-k-j order keeps the inner loop contiguous in both `b` and `out`.
    for i in 0..n {
        let out_row = &mut out.data[i * p..(i + 1) * p];
        for k in 0..m {
            let aik = a.data[i * m + k];
            if aik != 0.0 {
                axpy(aik, &b.data[k * p..(k + 1) * p], out_row);
            }
        }
    }
    Ok(out)
}

/// Contract `c` against the first extent of `t`: `out[p, r] = Σ_k c[k]·t[k, p, r]`.
pub fn mode1_product(c: &[f64], t: &Tensor) -> Result<Tensor> {
    if t.rank() != 3 || t.shape[0] != c.len() {
        return Err(Error::dim("mode1_product", &t.shape, &[c.len()]));
    }
    let (p, r) = (t.shape[1], t.shape[2]);
    let mut out = Tensor::zeros(&[p, r]);
    for (k, ck) in c.iter().enumerate() {
        if *ck != 0.0 {
            axpy(*ck, &t.data[k * p * r..(k + 1) * p * r], &mut out.data);
        }
    }
    Ok(out)
}

/// Contract `c` against the last extent of `t`: `out[r, q] = Σ_k t[r, q, k]·c[k]`.
pub fn mode3_product(t: &Tensor, c: &[f64]) -> Result<Tensor> {
    if t.rank() != 3 || t.shape[2] != c.len() {
        return Err(Error::dim("mode3_product", &t.shape, &[c.len()]));
    }
    let (r, q, k) = (t.shape[0], t.shape[1], t.shape[2]);
    let data = t.data.chunks_exact(k).map(|fiber| dot(fiber, c)).collect();
    Ok(Tensor {
        shape: vec![r, q],
        data,
    })
}

/// Central-difference gradient of a scalar function, one element at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(&x.shape);
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe);
        probe.data[i] = orig - eps;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::non_finite(
                format!("finite difference evaluation at element {i}"),
                None,
            ));
        }
        grad.data[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}
