//! Stride-1 2-D convolution lowered to a single GEMM through im2col.

use crate::error::{ensure, Error, Result};
use crate::tensor::{matmul, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Symmetric zero padding on every side. The classifier stack uses 0
    /// (valid convolution); the autoencoder decoder uses `kernel - 1`.
    pub padding: usize,
}

/// Lowered input kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    pub fn valid(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding: 0,
        }
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        ensure!(
            ph >= self.kernel && pw >= self.kernel,
            Error::shape(
                "conv2d",
                format!(
                    "input {h}x{w} (padding {}) smaller than kernel {}",
                    self.padding, self.kernel
                )
            )
        );
        Ok((ph - self.kernel + 1, pw - self.kernel + 1))
    }

    fn check_params<T: Real>(&self, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<()> {
        ensure!(
            kernel.shape() == self.kernel_shape(),
            Error::shape(
                "conv2d",
                format!(
                    "kernel is {:?}, layer expects {:?}",
                    kernel.shape(),
                    self.kernel_shape()
                )
            )
        );
        ensure!(
            bias.shape() == [self.out_channels],
            Error::shape(
                "conv2d",
                format!("bias is {:?}, expected [{}]", bias.shape(), self.out_channels)
            )
        );
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<(Tensor<T>, ConvCache<T>)> {
        self.check_params(kernel, bias)?;
        let (c, h, w) = input.chw("conv2d")?;
        ensure!(
            c == self.in_channels,
            Error::shape(
                "conv2d",
                format!("input has {c} channels, kernel expects {}", self.in_channels)
            )
        );
        let (oh, ow) = self.output_hw(h, w)?;
        let cols = self.im2col(input.data(), h, w, oh, ow);
        let rows = c * self.kernel * self.kernel;
        let plane = oh * ow;
        let mut out = Vec::with_capacity(self.out_channels * plane);
        for &b in bias.data() {
            out.extend(std::iter::repeat(b).take(plane));
        }
        matmul(
            self.out_channels,
            rows,
            plane,
            kernel.data(),
            false,
            &cols,
            false,
            &mut out,
            true,
        );
        let out = Tensor::new(&[self.out_channels, oh, ow], out)?;
        Ok((
            out,
            ConvCache {
                cols,
                in_h: h,
                in_w: w,
                out_h: oh,
                out_w: ow,
            },
        ))
    }

    /// Accumulates kernel and bias gradients; returns the input gradient
    /// when `want_input_grad` is set.
    pub fn backward<T: Real>(
        &self,
        cache: &ConvCache<T>,
        kernel: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_kernel: &mut Tensor<T>,
        grad_bias: &mut Tensor<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let plane = cache.out_h * cache.out_w;
        ensure!(
            grad_out.shape() == [self.out_channels, cache.out_h, cache.out_w],
            Error::shape(
                "conv2d backward",
                format!("upstream gradient {:?}", grad_out.shape())
            )
        );
        let rows = self.in_channels * self.kernel * self.kernel;
        let g = grad_out.data();
        // Each kernel entry is a dot product of two contiguous rows of
        // length `plane`.
        let gk = grad_kernel.data_mut();
        let mut f0 = 0;
        while f0 + 4 <= self.out_channels {
            let gs = [0, 1, 2, 3].map(|j| &g[(f0 + j) * plane..(f0 + j + 1) * plane]);
            for (r, col_row) in cache.cols.chunks_exact(plane).enumerate() {
                let d = dot4(gs, col_row);
                for j in 0..4 {
                    gk[(f0 + j) * rows + r] += d[j];
                }
            }
            f0 += 4;
        }
        for f in f0..self.out_channels {
            let g_row = &g[f * plane..(f + 1) * plane];
            for (r, col_row) in cache.cols.chunks_exact(plane).enumerate() {
                gk[f * rows + r] += dot(g_row, col_row);
            }
        }
        for (f, gb) in grad_bias.data_mut().iter_mut().enumerate() {
            *gb += g[f * plane..(f + 1) * plane].iter().copied().sum::<T>();
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); rows * plane];
        matmul(
            rows,
            self.out_channels,
            plane,
            kernel.data(),
            true,
            g,
            false,
            &mut dcols,
            false,
        );
        let dx = self.col2im(&dcols, cache);
        Ok(Some(Tensor::new(
            &[self.in_channels, cache.in_h, cache.in_w],
            dx,
        )?))
    }

    fn im2col<T: Real>(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = self.padding as isize;
        let mut cols = vec![T::zero(); self.in_channels * k * k * oh * ow];
        for c in 0..self.in_channels {
            for dy in 0..k {
                for dx in 0..k {
                    let row = (c * k + dy) * k + dx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let sy = y as isize + dy as isize - p;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &x[(c * h + sy as usize) * w..][..w];
                        let out_row = &mut dst[y * ow..(y + 1) * ow];
                        if p == 0 {
                            out_row.copy_from_slice(&src_row[dx..dx + ow]);
                        } else {
                            for (xo, v) in out_row.iter_mut().enumerate() {
                                let sx = xo as isize + dx as isize - p;
                                if sx >= 0 && sx < w as isize {
                                    *v = src_row[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: &[T], cache: &ConvCache<T>) -> Vec<T> {
        let (h, w, oh, ow) = (cache.in_h, cache.in_w, cache.out_h, cache.out_w);
        let k = self.kernel;
        let p = self.padding as isize;
        let mut dx = vec![T::zero(); self.in_channels * h * w];
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &dcols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let sy = y as isize + ky as isize - p;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dx[(c * h + sy as usize) * w..][..w];
                        let grad_row = &src[y * ow..(y + 1) * ow];
                        if p == 0 {
                            for (d, &g) in dst_row[kx..kx + ow].iter_mut().zip(grad_row) {
                                *d += g;
                            }
                            continue;
                        }
                        for (xo, &g) in grad_row.iter().enumerate() {
                            let sx = xo as isize + kx as isize - p;
                            if sx >= 0 && sx < w as isize {
                                dst_row[sx as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Four dot products sharing the right-hand row; each equals `dot`.
fn dot4<T: Real>(a: [&[T]; 4], b: &[T]) -> [T; 4] {
    let mut acc = [[T::zero(); 8]; 4];
    let n = b.len() / 8 * 8;
    for i in (0..n).step_by(8) {
        let y = &b[i..i + 8];
        for (j, row) in a.iter().enumerate() {
            let x = &row[i..i + 8];
            for l in 0..8 {
                acc[j][l] += x[l] * y[l];
            }
        }
    }
    let mut out = [T::zero(); 4];
    for j in 0..4 {
        let mut tail = T::zero();
        for i in n..b.len() {
            tail += a[j][i] * b[i];
        }
        let c = &acc[j];
        out[j] = ((c[0] + c[1]) + (c[2] + c[3])) + ((c[4] + c[5]) + (c[6] + c[7])) + tail;
    }
    out
}

/// Dot product with eight independent partial sums, combined in a fixed
/// order.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Valid stride-1 convolution: `out[f,y,x] = bias[f] + sum kernel[f,c,dy,dx] * input[c,y+dy,x+dx]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [f, c, k, k2] = match kernel.shape() {
        &[f, c, k, k2] => [f, c, k, k2],
        other => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be [F, C, k, k], got {other:?}"),
            ))
        }
    };
    ensure!(
        k == k2,
        Error::shape("conv2d", format!("non-square kernel {k}x{k2}"))
    );
    Ok(Conv2d::valid(c, f, k).forward(input, kernel, bias)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation, independent of im2col.
    fn naive(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (c, h, w) = input.chw("t").unwrap();
        let [f, _, k, _] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
        let (oh, ow) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
        let at = |ch: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                input.data()[(ch * h + y as usize) * w + x as usize]
            }
        };
        Tensor::from_fn(&[f, oh, ow], |i| {
            let (fi, rest) = (i / (oh * ow), i % (oh * ow));
            let (y, x) = (rest / ow, rest % ow);
            let mut s = bias.data()[fi];
            for ch in 0..c {
                for dy in 0..k {
                    for dx in 0..k {
                        s += kernel.data()[((fi * c + ch) * k + dy) * k + dx]
                            * at(ch, (y + dy) as isize - pad as isize, (x + dx) as isize - pad as isize);
                    }
                }
            }
            s
        })
    }

    fn pseudo(shape: &[usize], salt: u64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| (((i as u64 * 2654435761 + salt) % 1000) as f64) / 500.0 - 1.0)
    }

    #[test]
    fn first_layer_shape() {
        let conv = Conv2d::valid(3, 80, 3);
        let x = Tensor::<f32>::zeros(&[3, 32, 32]);
        let (y, _) = conv
            .forward(&x, &Tensor::zeros(&[80, 3, 3, 3]), &Tensor::zeros(&[80]))
            .unwrap();
        assert_eq!(y.shape(), &[80, 30, 30]);
    }

    #[test]
    fn delta_kernel_crops_input() {
        let x = pseudo(&[1, 5, 6], 3);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4]);
        for yy in 0..3 {
            for xx in 0..4 {
                assert_eq!(y.data()[yy * 4 + xx], x.data()[(yy + 1) * 6 + xx + 1]);
            }
        }
    }

    #[test]
    fn all_ones_sums_to_nine() {
        let y = conv2d_forward(
            &Tensor::filled(&[1, 3, 3], 1.0),
            &Tensor::filled(&[1, 1, 3, 3], 1.0),
            &Tensor::zeros(&[1]),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn matches_direct_summation_with_and_without_padding() {
        for pad in [0, 1, 2] {
            let conv = Conv2d { in_channels: 2, out_channels: 3, kernel: 3, padding: pad };
            let x = pseudo(&[2, 6, 5], 1);
            let k = pseudo(&[3, 2, 3, 3], 2);
            let b = pseudo(&[3], 4);
            let (y, _) = conv.forward(&x, &k, &b).unwrap();
            assert!(y.max_abs_diff(&naive(&x, &k, &b, pad)) < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_names_dims() {
        let err = conv2d_forward(
            &Tensor::<f64>::zeros(&[2, 4, 4]),
            &Tensor::zeros(&[1, 3, 3, 3]),
            &Tensor::zeros(&[1]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
    }

    #[test]
    fn input_smaller_than_kernel_is_rejected() {
        assert!(Conv2d::valid(1, 1, 3).output_hw(2, 5).is_err());
    }
}
