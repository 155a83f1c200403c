//! Dense row-major tensors and the scalar abstraction shared by every layer.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{ensure, Error, Result};

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (gradient checks and tests).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c <- alpha * a * b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// Callers must guarantee that every index reachable through the given
    /// strides is in bounds for the respective slice.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix product `c (+)= op(a) * op(b)` where `op` optionally
/// transposes. `a` is stored as `m x k` (or `k x m` when `a_t`), `b` as
/// `k x n` (or `n x k` when `b_t`), `c` as `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k, "matmul: lhs too short");
    assert!(b.len() >= k * n, "matmul: rhs too short");
    assert!(c.len() >= m * n, "matmul: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; the strides address exactly the
    // m*k, k*n and m*n row-major (or transposed) element ranges.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        ensure!(
            shape.iter().all(|&d| d > 0),
            Error::shape("tensor", format!("extents must be positive, got {shape:?}"))
        );
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len())
            )
        );
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "extents must be positive: {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("from_fn shape")
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        ensure!(
            n == self.data.len() && shape.iter().all(|&d| d > 0),
            Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape)
            )
        );
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// NaN/Inf anywhere is an error state.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numerical(format!(
                "{context}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    /// Center crop of a `[C, H, W]` image to `[C, side, side]`.
    pub fn center_crop(&self, side: usize) -> Result<Self> {
        let (c, h, w) = self.chw("center_crop")?;
        ensure!(
            side <= h && side <= w,
            Error::shape("center_crop", format!("cannot crop {h}x{w} to {side}x{side}"))
        );
        let (oy, ox) = ((h - side) / 2, (w - side) / 2);
        let mut out = Vec::with_capacity(c * side * side);
        for ch in 0..c {
            for y in 0..side {
                let row = (ch * h + oy + y) * w + ox;
                out.extend_from_slice(&self.data[row..row + side]);
            }
        }
        Tensor::new(&[c, side, side], out)
    }

    /// Writes `patch` back into a copy of `self` at the offset `center_crop`
    /// would have taken it from.
    pub fn embed_center(&self, patch: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = self.chw("embed_center")?;
        let (pc, ph, pw) = patch.chw("embed_center")?;
        ensure!(
            pc == c && ph <= h && pw <= w,
            Error::shape(
                "embed_center",
                format!("patch {:?} does not fit in {:?}", patch.shape, self.shape)
            )
        );
        let (oy, ox) = ((h - ph) / 2, (w - pw) / 2);
        let mut out = self.clone();
        for ch in 0..c {
            for y in 0..ph {
                let dst = (ch * h + oy + y) * w + ox;
                let src = (ch * ph + y) * pw;
                out.data[dst..dst + pw].copy_from_slice(&patch.data[src..src + pw]);
            }
        }
        Ok(out)
    }

    pub(crate) fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                op,
                format!("expected [C, H, W], got {:?}", self.shape),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        matmul(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        matmul(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn center_crop_50_to_32_takes_rows_9_to_40() {
        let img = Tensor::<f64>::from_fn(&[1, 50, 50], |i| i as f64);
        let crop = img.center_crop(32).unwrap();
        assert_eq!(crop.shape(), &[1, 32, 32]);
        assert_eq!(crop.data()[0], (9 * 50 + 9) as f64);
        assert_eq!(crop.data()[32 * 32 - 1], (40 * 50 + 40) as f64);
    }

    #[test]
    fn embed_center_inverts_crop() {
        let img = Tensor::<f64>::from_fn(&[3, 11, 10], |i| (i * 7 % 13) as f64);
        let crop = img.center_crop(6).unwrap();
        assert_eq!(img.embed_center(&crop).unwrap(), img);
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let t = Tensor::vector(vec![1.0, f64::NAN]);
        let err = t.ensure_finite("probe").unwrap_err();
        assert!(err.to_string().contains("flat index 1"));
    }
}
