use crate::error::{ensure, Error, Result};
use crate::tensor::{Real, Tensor};

/// Winning input offset for each output cell of a 2x2/stride-2 max pool.
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    input_shape: [usize; 3],
}

/// 2x2 max pooling with stride 2. An odd trailing row/column is dropped.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (c, h, w) = input.chw("maxpool2")?;
    ensure!(
        h >= 2 && w >= 2,
        Error::shape("maxpool2", format!("input {h}x{w} is smaller than 2x2"))
    );
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xo;
                let mut best = base;
                for off in [base + 1, base + w, base + w + 1] {
                    if x[off] > x[best] {
                        best = off;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[c, oh, ow], out)?,
        PoolCache {
            argmax,
            input_shape: [c, h, w],
        },
    ))
}

pub fn maxpool2_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(
        grad_out.len() == cache.argmax.len(),
        Error::shape(
            "maxpool2 backward",
            format!("upstream gradient {:?}", grad_out.shape())
        )
    );
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
        d[src] += g;
    }
    Ok(dx)
}

/// Nearest-neighbour 2x upsampling to an explicit target extent. Output
/// cell `(y, x)` copies input cell `(min(y/2, h-1), min(x/2, w-1))`, so a
/// row or column dropped by an odd-sized pool is restored by replicating
/// the edge.
pub fn upsample2<T: Real>(input: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw("upsample2")?;
    ensure!(
        target_h / 2 == h && target_w / 2 == w,
        Error::shape(
            "upsample2",
            format!("{h}x{w} is not the 2x2 pool of {target_h}x{target_w}")
        )
    );
    let x = input.data();
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        for y in 0..target_h {
            let sy = (y / 2).min(h - 1);
            for xo in 0..target_w {
                out.push(x[(ch * h + sy) * w + (xo / 2).min(w - 1)]);
            }
        }
    }
    Tensor::new(&[c, target_h, target_w], out)
}

pub fn upsample2_backward<T: Real>(grad_out: &Tensor<T>, input_h: usize, input_w: usize) -> Result<Tensor<T>> {
    let (c, th, tw) = grad_out.chw("upsample2 backward")?;
    let mut dx = Tensor::zeros(&[c, input_h, input_w]);
    let g = grad_out.data();
    let d = dx.data_mut();
    for ch in 0..c {
        for y in 0..th {
            let sy = (y / 2).min(input_h - 1);
            for xo in 0..tw {
                d[(ch * input_h + sy) * input_w + (xo / 2).min(input_w - 1)] += g[(ch * th + y) * tw + xo];
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_semantics_drop_odd_edges() {
        let x = Tensor::<f32>::zeros(&[140, 7, 7]);
        assert_eq!(maxpool2(&x).unwrap().0.shape(), &[140, 3, 3]);
        let x = Tensor::<f32>::zeros(&[120, 26, 26]);
        assert_eq!(maxpool2(&x).unwrap().0.shape(), &[120, 13, 13]);
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let (y, _) = maxpool2(&Tensor::<f64>::filled(&[2, 6, 6], 0.25)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn window_argmax_routes_gradient() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2_backward(&cache, &Tensor::new(&[1, 1, 1], vec![0.7]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 0.7]);
    }

    #[test]
    fn ties_go_to_first_in_row_major_order() {
        // Enumerate every 2x2 window over {0, 1} and check the routing target.
        for bits in 0u32..16 {
            let vals: Vec<f64> = (0..4).map(|i| ((bits >> i) & 1) as f64).collect();
            let x = Tensor::new(&[1, 2, 2], vals.clone()).unwrap();
            let (y, cache) = maxpool2(&x).unwrap();
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            let first = vals.iter().position(|&v| v == max).unwrap();
            assert_eq!(y.data()[0], max);
            let dx = maxpool2_backward(&cache, &Tensor::new(&[1, 1, 1], vec![1.0]).unwrap()).unwrap();
            let mut expected = vec![0.0; 4];
            expected[first] = 1.0;
            assert_eq!(dx.data(), &expected[..]);
        }
    }

    #[test]
    fn upsample_restores_pooled_extent() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let up = upsample2(&x, 7, 7).unwrap();
        assert_eq!(up.shape(), &[1, 7, 7]);
        // last row and column replicate the edge
        assert_eq!(up.data()[6 * 7 + 6], 8.0);
        assert_eq!(up.data()[5 * 7 + 6], 8.0);
        assert!(upsample2(&x, 6, 6).is_ok());
        assert!(upsample2(&x, 8, 8).is_err());
    }
}
