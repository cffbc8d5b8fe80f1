//! Trainable classifier head: one convolutional layer feeding two linear
//! layers, with rectifier activations, inverted dropout between the linear
//! layers, and a single sigmoid output.
//!
//! Parameters and all internal arithmetic are f64 so analytic gradients can
//! be validated against central finite differences tightly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to probabilities inside the cross-entropy so log never
/// sees 0 or 1.
pub const PROB_CLAMP: f64 = 1e-7;

/// Head dimensions and dropout rate.
#[derive(Clone, Copy, Debug)]
pub struct HeadConfig {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            conv_filters: 64,
            conv_kernel: 3,
            conv_stride: 2,
            hidden: 256,
            dropout: 0.5,
        }
    }
}

/// Names of the parameter tensors, in checkpoint order.
pub const PARAM_NAMES: [&str; 6] = ["conv_w", "conv_b", "lin1_w", "lin1_b", "lin2_w", "lin2_b"];

#[derive(Clone, Debug)]
pub struct ClassifierHead {
    cfg: HeadConfig,
    in_shape: (usize, usize, usize),
    conv_out: (usize, usize),
    /// `F x C x k x k`
    conv_w: Vec<f64>,
    conv_b: Vec<f64>,
    /// `hidden x flat`
    lin1_w: Vec<f64>,
    lin1_b: Vec<f64>,
    /// `1 x hidden`
    lin2_w: Vec<f64>,
    lin2_b: Vec<f64>,
}

/// Per-parameter gradients, mirroring [`ClassifierHead`] layout.
#[derive(Clone, Debug)]
pub struct HeadGradients {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub lin1_w: Vec<f64>,
    pub lin1_b: Vec<f64>,
    pub lin2_w: Vec<f64>,
    pub lin2_b: Vec<f64>,
}

impl HeadGradients {
    pub fn zeros_like(head: &ClassifierHead) -> Self {
        Self {
            conv_w: vec![0.0; head.conv_w.len()],
            conv_b: vec![0.0; head.conv_b.len()],
            lin1_w: vec![0.0; head.lin1_w.len()],
            lin1_b: vec![0.0; head.lin1_b.len()],
            lin2_w: vec![0.0; head.lin2_w.len()],
            lin2_b: vec![0.0; head.lin2_b.len()],
        }
    }

    pub fn add(&mut self, other: &HeadGradients) {
        for (a, b) in self.iter_mut().into_iter().zip(other.iter()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.iter_mut() {
            for x in a.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> [&[f64]; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.lin1_w,
            &self.lin1_b,
            &self.lin2_w,
            &self.lin2_b,
        ]
    }

    pub fn iter_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.lin1_w,
            &mut self.lin1_b,
            &mut self.lin2_w,
            &mut self.lin2_b,
        ]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over a batch, probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`. Targets must be 0 or 1.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: targets.len(),
        });
    }
    let mut sum = 0.0;
    for (&p, &t) in probs.iter().zip(targets) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(sum / probs.len() as f64)
}

struct ForwardCache {
    conv_pre: Vec<f64>,
    x1: Vec<f64>,
    z1: Vec<f64>,
    h_dropped: Vec<f64>,
    mask: Vec<f64>,
    logit: f64,
}

impl ClassifierHead {
    /// Initialize with seeded Gaussian weights sized to the incoming feature
    /// map shape `(C', H', W')`.
    pub fn init(cfg: HeadConfig, in_shape: (usize, usize, usize), seed: u64) -> Result<Self> {
        let (c, h, w) = in_shape;
        if cfg.conv_kernel == 0 || cfg.conv_stride == 0 || cfg.conv_filters == 0 || cfg.hidden == 0
        {
            return Err(Error::InvalidConfig("head dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                cfg.dropout
            )));
        }
        if h < cfg.conv_kernel || w < cfg.conv_kernel {
            return Err(Error::ShapeUnsupported(format!(
                "feature map {h}x{w} smaller than head kernel {}",
                cfg.conv_kernel
            )));
        }
        let out_h = (h - cfg.conv_kernel) / cfg.conv_stride + 1;
        let out_w = (w - cfg.conv_kernel) / cfg.conv_stride + 1;
        let flat = cfg.conv_filters * out_h * out_w;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, sd: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, sd).unwrap();
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let conv_fan = (c * cfg.conv_kernel * cfg.conv_kernel) as f64;
        let conv_w = draw(
            cfg.conv_filters * c * cfg.conv_kernel * cfg.conv_kernel,
            (2.0 / conv_fan).sqrt(),
        );
        let conv_b = draw(cfg.conv_filters, 0.05);
        let lin1_w = draw(cfg.hidden * flat, (2.0 / flat as f64).sqrt());
        let lin1_b = draw(cfg.hidden, 0.05);
        let lin2_w = draw(cfg.hidden, (1.0 / cfg.hidden as f64).sqrt());
        let lin2_b = draw(1, 0.05);

        Ok(Self {
            cfg,
            in_shape,
            conv_out: (out_h, out_w),
            conv_w,
            conv_b,
            lin1_w,
            lin1_b,
            lin2_w,
            lin2_b,
        })
    }

    pub fn config(&self) -> HeadConfig {
        self.cfg
    }

    pub fn in_shape(&self) -> (usize, usize, usize) {
        self.in_shape
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> [&Vec<f64>; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.lin1_w,
            &self.lin1_b,
            &self.lin2_w,
            &self.lin2_b,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.lin1_w,
            &mut self.lin1_b,
            &mut self.lin2_w,
            &mut self.lin2_b,
        ]
    }

    pub fn param_shapes(&self) -> [Vec<usize>; 6] {
        let (c, _, _) = self.in_shape;
        let k = self.cfg.conv_kernel;
        let flat = self.flat_dim();
        [
            vec![self.cfg.conv_filters, c, k, k],
            vec![self.cfg.conv_filters],
            vec![self.cfg.hidden, flat],
            vec![self.cfg.hidden],
            vec![1, self.cfg.hidden],
            vec![1],
        ]
    }

    fn flat_dim(&self) -> usize {
        self.cfg.conv_filters * self.conv_out.0 * self.conv_out.1
    }

    fn check_input(&self, fm: &Tensor) -> Result<()> {
        let (c, h, w) = self.in_shape;
        if fm.shape() != [c, h, w] {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", [c, h, w]),
                actual: format!("{:?}", fm.shape()),
            });
        }
        Ok(())
    }

    fn dropout_mask<R: Rng>(&self, train_mode: bool, rng: &mut R) -> Vec<f64> {
        if !train_mode || self.cfg.dropout == 0.0 {
            return vec![1.0; self.cfg.hidden];
        }
        let keep = 1.0 - self.cfg.dropout;
        (0..self.cfg.hidden)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn forward_full(&self, fm: &Tensor, mask: Vec<f64>) -> ForwardCache {
        let (c, h, w) = self.in_shape;
        let k = self.cfg.conv_kernel;
        let s = self.cfg.conv_stride;
        let (out_h, out_w) = self.conv_out;
        let input = fm.data();

        let mut conv_pre = vec![0.0f64; self.flat_dim()];
        for f in 0..self.cfg.conv_filters {
            let out_base = f * out_h * out_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = self.conv_b[f];
                    for ch in 0..c {
                        let w_base = ((f * c + ch) * k) * k;
                        let in_base = ch * h * w;
                        for ky in 0..k {
                            let row = in_base + (oy * s + ky) * w + ox * s;
                            let wrow = w_base + ky * k;
                            for kx in 0..k {
                                acc += f64::from(input[row + kx]) * self.conv_w[wrow + kx];
                            }
                        }
                    }
                    conv_pre[out_base + oy * out_w + ox] = acc;
                }
            }
        }

        let x1: Vec<f64> = conv_pre.iter().map(|&v| v.max(0.0)).collect();
        let flat = self.flat_dim();
        let mut z1 = vec![0.0f64; self.cfg.hidden];
        for (j, z) in z1.iter_mut().enumerate() {
            let wrow = &self.lin1_w[j * flat..(j + 1) * flat];
            let mut acc = self.lin1_b[j];
            for (wv, xv) in wrow.iter().zip(&x1) {
                acc += wv * xv;
            }
            *z = acc;
        }
        let h_dropped: Vec<f64> = z1
            .iter()
            .zip(&mask)
            .map(|(&z, &m)| z.max(0.0) * m)
            .collect();
        let mut logit = self.lin2_b[0];
        for (wv, hv) in self.lin2_w.iter().zip(&h_dropped) {
            logit += wv * hv;
        }
        ForwardCache {
            conv_pre,
            x1,
            z1,
            h_dropped,
            mask,
            logit,
        }
    }

    /// Logit for a feature map. Dropout is applied only in train mode
    /// (inverted scaling, so inference needs no rescale).
    pub fn forward_logit<R: Rng>(
        &self,
        fm: &Tensor,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_input(fm)?;
        let mask = self.dropout_mask(train_mode, rng);
        Ok(self.forward_full(fm, mask).logit)
    }

    /// Probability of the positive class, in `(0, 1)`.
    pub fn forward<R: Rng>(&self, fm: &Tensor, train_mode: bool, rng: &mut R) -> Result<f64> {
        Ok(sigmoid(self.forward_logit(fm, train_mode, rng)?))
    }

    /// Single-sample cross-entropy loss and its gradient with respect to
    /// every head parameter.
    pub fn backward<R: Rng>(
        &self,
        fm: &Tensor,
        target: f64,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<(f64, HeadGradients)> {
        self.check_input(fm)?;
        let mask = self.dropout_mask(train_mode, rng);
        let cache = self.forward_full(fm, mask);
        let p = sigmoid(cache.logit);
        let loss = bce_loss(&[p], &[target])?;

        let mut g = HeadGradients::zeros_like(self);
        let dz = p - target; // d(bce)/d(logit) through the sigmoid

        for j in 0..self.cfg.hidden {
            g.lin2_w[j] = dz * cache.h_dropped[j];
        }
        g.lin2_b[0] = dz;

        let flat = self.flat_dim();
        let mut dx1 = vec![0.0f64; flat];
        for j in 0..self.cfg.hidden {
            let dh = dz * self.lin2_w[j] * cache.mask[j];
            let dz1 = if cache.z1[j] > 0.0 { dh } else { 0.0 };
            if dz1 == 0.0 {
                continue;
            }
            g.lin1_b[j] = dz1;
            let wrow = &self.lin1_w[j * flat..(j + 1) * flat];
            let grow = &mut g.lin1_w[j * flat..(j + 1) * flat];
            for i in 0..flat {
                grow[i] = dz1 * cache.x1[i];
                dx1[i] += dz1 * wrow[i];
            }
        }

        let (c, h, w) = self.in_shape;
        let k = self.cfg.conv_kernel;
        let s = self.cfg.conv_stride;
        let (out_h, out_w) = self.conv_out;
        let input = fm.data();
        for f in 0..self.cfg.conv_filters {
            let out_base = f * out_h * out_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let idx = out_base + oy * out_w + ox;
                    let upstream = if cache.conv_pre[idx] > 0.0 {
                        dx1[idx]
                    } else {
                        0.0
                    };
                    if upstream == 0.0 {
                        continue;
                    }
                    g.conv_b[f] += upstream;
                    for ch in 0..c {
                        let w_base = ((f * c + ch) * k) * k;
                        let in_base = ch * h * w;
                        for ky in 0..k {
                            let row = in_base + (oy * s + ky) * w + ox * s;
                            let grow = w_base + ky * k;
                            for kx in 0..k {
                                g.conv_w[grow + kx] += upstream * f64::from(input[row + kx]);
                            }
                        }
                    }
                }
            }
        }

        Ok((loss, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_head(seed: u64) -> (ClassifierHead, Tensor) {
        let cfg = HeadConfig {
            conv_filters: 3,
            conv_kernel: 3,
            conv_stride: 1,
            hidden: 4,
            dropout: 0.0,
        };
        let head = ClassifierHead::init(cfg, (2, 5, 5), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let data = (0..50).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let fm = Tensor::new(vec![2, 5, 5], data).unwrap();
        (head, fm)
    }

    #[test]
    fn zeroed_head_outputs_half() {
        let (mut head, fm) = tiny_head(1);
        for p in head.params_mut() {
            p.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(head.forward(&fm, false, &mut rng).unwrap(), 0.5);
    }

    #[test]
    fn inference_is_deterministic() {
        let (head, fm) = tiny_head(2);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(999);
        let a = head.forward(&fm, false, &mut r1).unwrap();
        let b = head.forward(&fm, false, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_path_head_matches_sigmoid() {
        let cfg = HeadConfig {
            conv_filters: 1,
            conv_kernel: 1,
            conv_stride: 1,
            hidden: 1,
            dropout: 0.0,
        };
        let mut head = ClassifierHead::init(cfg, (1, 1, 1), 0).unwrap();
        let [cw, cb, l1w, l1b, l2w, l2b] = head.params_mut();
        cw[0] = 1.0;
        cb[0] = 0.0;
        l1w[0] = 1.0;
        l1b[0] = 0.0;
        l2w[0] = 1.0;
        l2b[0] = 0.0;
        let fm = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = head.forward(&fm, false, &mut rng).unwrap();
        assert!((p - 0.880797).abs() < 1e-6, "{p}");
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - 0.693147).abs() < 1e-6);
        assert!((bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - 0.164252).abs() < 1e-6);
        let perfect = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(perfect < 1e-6 && perfect >= 0.0);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn zero_input_blocks_conv_weight_gradient() {
        let (head, _) = tiny_head(3);
        let fm = Tensor::zeros(vec![2, 5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = head.backward(&fm, 1.0, false, &mut rng).unwrap();
        assert!(g.conv_w.iter().all(|&x| x == 0.0));
        let bias_norm: f64 = g.conv_b.iter().chain(&g.lin1_b).chain(&g.lin2_b).map(|x| x.abs()).sum();
        assert!(bias_norm > 0.0);
        // the output bias always receives the full error signal
        assert!(g.lin2_b[0].abs() > 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (head, fm) = tiny_head(4);
        let target = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, analytic) = head.backward(&fm, target, false, &mut rng).unwrap();
        let delta = 1e-4;
        let mut worst = 0.0f64;
        for slot in 0..6 {
            for i in 0..head.params()[slot].len() {
                let mut plus = head.clone();
                plus.params_mut()[slot][i] += delta;
                let mut minus = head.clone();
                minus.params_mut()[slot][i] -= delta;
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let lp = bce_loss(&[plus.forward(&fm, false, &mut r).unwrap()], &[target]).unwrap();
                let lm = bce_loss(&[minus.forward(&fm, false, &mut r).unwrap()], &[target]).unwrap();
                let fd = (lp - lm) / (2.0 * delta);
                let a = analytic.iter()[slot][i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn dropout_expectation_matches_inference_logit() {
        let cfg = HeadConfig {
            conv_filters: 2,
            conv_kernel: 2,
            conv_stride: 1,
            hidden: 8,
            dropout: 0.5,
        };
        let head = ClassifierHead::init(cfg, (1, 4, 4), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let data = (0..16).map(|_| rng.random_range(0.0..1.0f32)).collect();
        let fm = Tensor::new(vec![1, 4, 4], data).unwrap();

        let reference = head.forward_logit(&fm, false, &mut rng).unwrap();
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| head.forward_logit(&fm, true, &mut rng).unwrap())
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - reference).abs() <= 3.0 * se.max(1e-12),
            "mean {mean}, reference {reference}, se {se}"
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (head, _) = tiny_head(5);
        let wrong = Tensor::zeros(vec![2, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            head.forward(&wrong, false, &mut rng),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
