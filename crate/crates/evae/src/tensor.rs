//! Dense double-precision tensors in row-major order.
//!
//! Shapes are kept generic but almost everything in practice is a matrix
//! `[batch, features]`, a vector, or a scalar. All math stays in `f64`.

use crate::error::{EvaeError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(EvaeError::Config(format!(
                "tensor shape {:?} expects {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    /// Scalar tensors hold exactly one value.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(EvaeError::Usage(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Interpret as a matrix: 2-d shapes directly, 1-d as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [n] => Ok((1, *n)),
            other => Err(EvaeError::Usage(format!(
                "expected matrix tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2().expect("row() on non-matrix tensor");
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(EvaeError::Numeric(format!(
                "non-finite value in {context} (shape {:?})",
                self.shape
            )))
        }
    }
}

/// True when the AVX2+FMA kernels are usable on this machine. Detected once;
/// results are bit-reproducible for a given build and host (the fused-
/// multiply-add path associates sums differently than the portable one).
#[cfg(target_arch = "x86_64")]
fn use_fma() -> bool {
    static FLAG: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    *FLAG.get_or_init(|| {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    })
}

#[cfg(not(target_arch = "x86_64"))]
fn use_fma() -> bool {
    false
}

/// `out = a @ b` for row-major `a: [m, k]`, `b: [k, n]`.
///
/// The loop order streams rows of `b` against a fixed `a[i, p]`, which keeps
/// every inner access contiguous and vectorizable.
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        unsafe { matmul_accum_fma(a, b, out, m, k, n) };
        return;
    }
    matmul_accum_portable(a, b, out, m, k, n);
}

fn matmul_accum_portable(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out[i, :] += sum_p a[i, p] * b[p, :]` with the p-loop unrolled four wide
/// so the compiler fuses the updates into FMA chains.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_accum_fma(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                out_row[j] = a0.mul_add(
                    b0[j],
                    a1.mul_add(b1[j], a2.mul_add(b2[j], a3.mul_add(b3[j], out_row[j]))),
                );
            }
            p += 4;
        }
        while p < k {
            let av = a_row[p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] = av.mul_add(b_row[j], out_row[j]);
            }
            p += 1;
        }
    }
}

/// `out += a @ b^T` for `a: [m, k]`, `b: [n, k]` (i.e. contracting columns
/// of both). Used for the input gradient of an affine layer.
pub fn matmul_bt_accum(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        unsafe { matmul_bt_accum_fma(a, b, out, m, k, n) };
        return;
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// Row-dot kernel with four independent accumulators per dot product.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_bt_accum_fma(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0, 0.0, 0.0);
            let mut p = 0;
            while p + 4 <= k {
                s0 = a_row[p].mul_add(b_row[p], s0);
                s1 = a_row[p + 1].mul_add(b_row[p + 1], s1);
                s2 = a_row[p + 2].mul_add(b_row[p + 2], s2);
                s3 = a_row[p + 3].mul_add(b_row[p + 3], s3);
                p += 4;
            }
            let mut acc = (s0 + s1) + (s2 + s3);
            while p < k {
                acc = a_row[p].mul_add(b_row[p], acc);
                p += 1;
            }
            *o += acc;
        }
    }
}

/// `out += a^T @ b` for `a: [m, k]`, `b: [m, n]`, producing `[k, n]`.
/// Used for the weight gradient of an affine layer.
pub fn matmul_at_accum(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        unsafe { matmul_at_accum_fma(a, b, out, m, k, n) };
        return;
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ip * b_ij;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_at_accum_fma(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row.iter()) {
                *o = a_ip.mul_add(b_ij, *o);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(EvaeError::Config(_))
        ));
    }

    #[test]
    fn matmul_known_product() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_naive() {
        let mut rng = crate::rng::Rng::seeded(9);
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|_| rng.uniform() - 0.5).collect();
        let bt: Vec<f64> = (0..n * k).map(|_| rng.uniform() - 0.5).collect();
        // a @ bt^T via kernel
        let mut out = vec![0.0; m * n];
        matmul_bt_accum(&a, &bt, &mut out, m, k, n);
        // naive
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * bt[j * k + p];
                }
                assert!((out[i * n + j] - acc).abs() < 1e-12);
            }
        }

        let b: Vec<f64> = (0..m * n).map(|_| rng.uniform() - 0.5).collect();
        let mut out2 = vec![0.0; k * n];
        matmul_at_accum(&a, &b, &mut out2, m, k, n);
        for p in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += a[i * k + p] * b[i * n + j];
                }
                assert!((out2[p * n + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut t = Tensor::zeros(vec![2, 2]);
        assert!(t.check_finite("test").is_ok());
        t.values_mut()[3] = f64::NAN;
        assert!(matches!(t.check_finite("test"), Err(EvaeError::Numeric(_))));
    }
}
