//! Central finite-difference gradient checking.

/// Largest and norm-wise relative error between an analytic gradient and
/// central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, 1e-6)`.
    pub max_rel_err: f64,
    /// `‖a − n‖ / ‖n‖`.
    pub norm_rel_err: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol && self.norm_rel_err <= tol
    }
}

/// Differentiate `f` numerically at `x` with step `h` and compare with
/// `analytic`.
pub fn check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> GradReport {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max((a - numeric).abs() / denom);
        diff2 += (a - numeric).powi(2);
        norm2 += numeric * numeric;
    }
    GradReport {
        max_rel_err: max_rel,
        norm_rel_err: if norm2 > 0.0 {
            (diff2 / norm2).sqrt()
        } else {
            diff2.sqrt()
        },
        checked: x.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;

    fn input(shape: [usize; 4], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape,
            (0..n).map(|i| ((i as f64 + seed as f64) * 0.618).sin()).collect(),
        )
    }

    /// Loss = Σ w ⊙ layer(x) for a fixed pseudo-random `w`.
    fn check_layer(layer: &Layer, params: Vec<f64>, x: Tensor) {
        let out_len = layer.forward(&params, &x).data().len();
        let w: Vec<f64> = (0..out_len).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let loss =
            |p: &[f64], x: &Tensor| -> f64 { layer.forward(p, x).data().iter().zip(&w).map(|(a, b)| a * b).sum() };
        let y = layer.forward(&params, &x);
        let dy = Tensor::new(y.shape(), w.clone());
        let mut g = vec![0.0; params.len()];
        let dx = layer.backward(&params, &x, &y, &dy, &mut g);

        if !params.is_empty() {
            let r = check(|p| loss(p, &x), &params, &g, 1e-5);
            assert!(r.passes(TOL), "{layer:?} params: {r:?}");
        }
        let shape = x.shape();
        let r = check(
            |xs| loss(&params, &Tensor::new(shape, xs.to_vec())),
            x.data(),
            dx.data(),
            1e-5,
        );
        assert!(r.passes(TOL), "{layer:?} input: {r:?}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut alloc = ParamAllocator::new();
        let conv = Conv2d::new(&mut alloc, 2, 3, 3, &mut rng);
        let mut p = alloc.finish();
        for (i, v) in p.iter_mut().enumerate().skip(54) {
            *v = 0.1 * i as f64;
        }
        check_layer(&Layer::Conv(conv), p, input([2, 2, 5, 4], 3));
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut alloc = ParamAllocator::new();
        let lin = Linear::new(&mut alloc, 6, 4, &mut rng);
        check_layer(&Layer::Linear(lin), alloc.finish(), input([3, 6, 1, 1], 1));
    }

    #[test]
    fn parameter_free_layers() {
        for layer in [
            Layer::Silu,
            Layer::Sigmoid,
            Layer::AvgPool2,
            Layer::Upsample2,
            Layer::GlobalAvgPool,
            Layer::Flatten,
        ] {
            check_layer(&layer, Vec::new(), input([2, 3, 4, 6], 5));
        }
        // odd spatial size exercises the dropped border of the pool
        check_layer(&Layer::AvgPool2, Vec::new(), input([1, 2, 5, 3], 2));
    }
}
