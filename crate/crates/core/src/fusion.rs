//! Slice-sequence fusion transforms applied before feature extraction:
//! average image, dynamic image via approximate rank pooling, and
//! space-to-channel triplet encoding.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::volume::Volume;

/// Closed form of the rank-pooling coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankVariant {
    /// `alpha_t = 2t - T - 1`
    Linear,
    /// `alpha_t = 2(T - t + 1) - (T + 1)(H_T - H_{t-1})` with harmonic numbers `H_k`.
    Harmonic,
}

impl fmt::Display for RankVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankVariant::Linear => "linear",
            RankVariant::Harmonic => "harmonic",
        })
    }
}

impl FromStr for RankVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(RankVariant::Linear),
            "harmonic" => Ok(RankVariant::Harmonic),
            other => Err(Error::InvalidConfig(format!("unknown rank variant `{other}`"))),
        }
    }
}

/// Rank-pooling coefficients for a sequence of length `depth`.
/// Both variants sum to zero (up to floating tolerance).
pub fn rank_pool_coefficients(depth: usize, variant: RankVariant) -> Result<Vec<f64>> {
    if depth < 1 {
        return Err(Error::InvalidDepth);
    }
    let t_f = depth as f64;
    match variant {
        RankVariant::Linear => Ok((1..=depth)
            .map(|t| 2.0 * t as f64 - t_f - 1.0)
            .collect()),
        RankVariant::Harmonic => {
            // harmonics[k] = H_k, prefix sums of 1/i
            let mut harmonics = vec![0.0f64; depth + 1];
            for i in 1..=depth {
                harmonics[i] = harmonics[i - 1] + 1.0 / i as f64;
            }
            Ok((1..=depth)
                .map(|t| {
                    2.0 * (t_f - t as f64 + 1.0) - (t_f + 1.0) * (harmonics[depth] - harmonics[t - 1])
                })
                .collect())
        }
    }
}

/// Coefficient-weighted sum of the slices, before any re-normalization.
///
/// For the linear variant the antisymmetry `alpha_{T+1-t} = -alpha_t` is
/// exploited by accumulating paired differences, which makes slice reversal
/// negate the output exactly in floating point.
pub fn dynamic_image_raw(v: &Volume, variant: RankVariant) -> Tensor {
    let depth = v.depth();
    let (h, w) = (v.height(), v.width());
    let coeffs = rank_pool_coefficients(depth, variant).expect("depth >= 1");
    // rows are independent; per-pixel accumulation order is fixed, so the
    // parallel and sequential paths agree bit for bit
    let rows = crate::par::map_indexed(h, |y| {
        let mut acc = vec![0.0f64; w];
        match variant {
            RankVariant::Linear => {
                for t in 0..depth / 2 {
                    let alpha = coeffs[t];
                    let lo = &v.slice(t)[y * w..(y + 1) * w];
                    let hi = &v.slice(depth - 1 - t)[y * w..(y + 1) * w];
                    for i in 0..w {
                        acc[i] += alpha * (f64::from(lo[i]) - f64::from(hi[i]));
                    }
                }
                // middle coefficient of an odd-length sequence is exactly zero
            }
            RankVariant::Harmonic => {
                for (t, &alpha) in coeffs.iter().enumerate() {
                    let s = &v.slice(t)[y * w..(y + 1) * w];
                    for i in 0..w {
                        acc[i] += alpha * f64::from(s[i]);
                    }
                }
            }
        }
        acc
    });
    let data = rows
        .into_iter()
        .flatten()
        .map(|x| x as f32)
        .collect();
    Tensor::new(vec![h, w], data).expect("finite weighted sum")
}

/// Dynamic image: weighted slice sum re-normalized onto `[0, 1]`.
///
/// A single-slice volume returns that slice unchanged (the coefficient
/// formulas would zero it out), and a degenerate constant weighted sum maps
/// to the all-zero image rather than an error.
pub fn dynamic_image(v: &Volume, variant: RankVariant) -> Tensor {
    if v.depth() == 1 {
        return v.slice_image(0);
    }
    let raw = dynamic_image_raw(v, variant);
    match tensor::normalize(&raw) {
        Ok(t) => t,
        Err(_) => Tensor::zeros(vec![v.height(), v.width()]),
    }
}

/// Element-wise mean over the slice axis, accumulated in ascending slice order.
pub fn average_image(v: &Volume) -> Tensor {
    let n = v.height() * v.width();
    let mut acc = vec![0.0f64; n];
    for t in 0..v.depth() {
        let s = v.slice(t);
        for i in 0..n {
            acc[i] += f64::from(s[i]);
        }
    }
    let inv = 1.0 / v.depth() as f64;
    let data = acc.into_iter().map(|x| (x * inv) as f32).collect();
    Tensor::new(vec![v.height(), v.width()], data).expect("finite mean")
}

/// Three depth-separated slices packed as channels, centered on one slice.
#[derive(Clone, Debug)]
pub struct TripletImage {
    /// `3 x H x W`, channel order `(V_{i-j}, V_i, V_{i+j})`.
    pub channels: Tensor,
    /// Zero-based center slice index `i`.
    pub center_index: usize,
}

/// Space-to-channel encoding: one triplet per center slice, with out-of-range
/// neighbor indices clamped to the valid slice range (edge replication).
pub fn space_to_channel(v: &Volume, j: usize) -> Vec<TripletImage> {
    let depth = v.depth();
    let clamp = |i: isize| -> usize { i.clamp(0, depth as isize - 1) as usize };
    (0..depth)
        .map(|center| {
            let lo = clamp(center as isize - j as isize);
            let hi = clamp(center as isize + j as isize);
            let mut data = Vec::with_capacity(3 * v.height() * v.width());
            for t in [lo, center, hi] {
                data.extend_from_slice(v.slice(t));
            }
            TripletImage {
                channels: Tensor::new(vec![3, v.height(), v.width()], data)
                    .expect("triplet data is valid"),
                center_index: center,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Label, View};

    fn volume_from(slices: Vec<Vec<f32>>, h: usize, w: usize) -> Volume {
        let depth = slices.len();
        let data: Vec<f32> = slices.into_iter().flatten().collect();
        Volume::new(
            "t",
            Tensor::new(vec![depth, h, w], data).unwrap(),
            View::Cc,
            Label::Negative,
        )
        .unwrap()
    }

    fn seeded_volume(depth: usize, h: usize, w: usize, seed: u64) -> Volume {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..depth * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Volume::new(
            "r",
            Tensor::new(vec![depth, h, w], data).unwrap(),
            View::Cc,
            Label::Negative,
        )
        .unwrap()
    }

    #[test]
    fn linear_coefficients_examples() {
        assert_eq!(
            rank_pool_coefficients(2, RankVariant::Linear).unwrap(),
            vec![-1.0, 1.0]
        );
        assert_eq!(rank_pool_coefficients(1, RankVariant::Linear).unwrap(), vec![0.0]);
    }

    #[test]
    fn harmonic_coefficients_examples() {
        let c = rank_pool_coefficients(3, RankVariant::Harmonic).unwrap();
        let expected = [-4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
        let single = rank_pool_coefficients(1, RankVariant::Harmonic).unwrap();
        assert!(single[0].abs() < 1e-12);
    }

    #[test]
    fn coefficients_sum_to_zero() {
        for depth in 1..=64 {
            for variant in [RankVariant::Linear, RankVariant::Harmonic] {
                let sum: f64 = rank_pool_coefficients(depth, variant).unwrap().iter().sum();
                assert!(sum.abs() < 1e-9, "depth {depth} {variant}: sum {sum}");
            }
        }
    }

    #[test]
    fn zero_depth_is_rejected() {
        assert!(matches!(
            rank_pool_coefficients(0, RankVariant::Linear),
            Err(Error::InvalidDepth)
        ));
    }

    #[test]
    fn constant_volume_has_zero_raw_energy() {
        let v = volume_from(vec![vec![0.7; 4]; 5], 2, 2);
        for variant in [RankVariant::Linear, RankVariant::Harmonic] {
            let raw = dynamic_image_raw(&v, variant);
            let peak = raw.data().iter().fold(0.0f32, |m, &x| m.max(x.abs()));
            assert!(peak < 1e-6, "{variant}: {peak}");
            // renormalization of the degenerate image yields zeros, not an error
            let img = dynamic_image(&v, variant);
            assert!(img.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn two_slice_linear_dynamic_is_normalized_difference() {
        let v = volume_from(vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.1, 0.9, 0.4]], 2, 2);
        let raw = dynamic_image_raw(&v, RankVariant::Linear);
        let expected_raw: Vec<f32> = v
            .slice(1)
            .iter()
            .zip(v.slice(0))
            .map(|(b, a)| b - a)
            .collect();
        for (x, e) in raw.data().iter().zip(&expected_raw) {
            assert!((x - e).abs() < 1e-7);
        }
        let img = dynamic_image(&v, RankVariant::Linear);
        let norm = tensor::normalize(&Tensor::new(vec![2, 2], expected_raw).unwrap()).unwrap();
        assert_eq!(img.data(), norm.data());
    }

    #[test]
    fn raw_dynamic_matches_bruteforce_sum() {
        let v = seeded_volume(4, 5, 3, 9);
        for variant in [RankVariant::Linear, RankVariant::Harmonic] {
            let raw = dynamic_image_raw(&v, variant);
            let coeffs = rank_pool_coefficients(4, variant).unwrap();
            let n = v.height() * v.width();
            for i in 0..n {
                let mut expected = 0.0f64;
                for t in 0..4 {
                    expected += coeffs[t] * f64::from(v.slice(t)[i]);
                }
                assert!(
                    (f64::from(raw.data()[i]) - expected).abs() < 1e-6,
                    "{variant} pixel {i}"
                );
            }
        }
    }

    #[test]
    fn single_slice_dynamic_returns_slice() {
        let v = volume_from(vec![vec![0.0, 0.25, 0.5, 1.0]], 2, 2);
        let img = dynamic_image(&v, RankVariant::Harmonic);
        assert_eq!(img.data(), v.slice(0));
    }

    #[test]
    fn linear_reversal_negates_raw_exactly() {
        for depth in [2usize, 5, 8] {
            let v = seeded_volume(depth, 4, 4, depth as u64);
            let reversed: Vec<Vec<f32>> = (0..depth).rev().map(|t| v.slice(t).to_vec()).collect();
            let rv = volume_from(reversed, 4, 4);
            let fwd = dynamic_image_raw(&v, RankVariant::Linear);
            let bwd = dynamic_image_raw(&rv, RankVariant::Linear);
            for (a, b) in fwd.data().iter().zip(bwd.data()) {
                assert_eq!(*a, -b, "depth {depth}");
            }
        }
    }

    #[test]
    fn raw_dynamic_is_homogeneous() {
        let v = seeded_volume(6, 4, 4, 21);
        let scaled_slices: Vec<Vec<f32>> = (0..6)
            .map(|t| v.slice(t).iter().map(|x| x * 0.25).collect())
            .collect();
        let sv = volume_from(scaled_slices, 4, 4);
        for variant in [RankVariant::Linear, RankVariant::Harmonic] {
            let base = dynamic_image_raw(&v, variant);
            let scaled = dynamic_image_raw(&sv, variant);
            for (a, b) in base.data().iter().zip(scaled.data()) {
                assert!((0.25 * a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn average_image_examples() {
        let v = volume_from(vec![vec![0.0; 4], vec![1.0; 4]], 2, 2);
        assert!(average_image(&v).data().iter().all(|&x| x == 0.5));

        let single = volume_from(vec![vec![0.1, 0.9, 0.4, 0.2]], 2, 2);
        assert_eq!(average_image(&single).data(), single.slice(0));

        let v = seeded_volume(3, 4, 4, 3);
        let avg = average_image(&v);
        for i in 0..16 {
            let expected =
                (f64::from(v.slice(0)[i]) + f64::from(v.slice(1)[i]) + f64::from(v.slice(2)[i]))
                    / 3.0;
            assert!((f64::from(avg.data()[i]) - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn average_is_slice_order_invariant() {
        let v = seeded_volume(5, 3, 3, 17);
        let shuffled: Vec<Vec<f32>> = [3usize, 0, 4, 1, 2]
            .iter()
            .map(|&t| v.slice(t).to_vec())
            .collect();
        let sv = volume_from(shuffled, 3, 3);
        let a = average_image(&v);
        let b = average_image(&sv);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn space_to_channel_j_zero_replicates_center() {
        let v = seeded_volume(4, 3, 3, 5);
        let triplets = space_to_channel(&v, 0);
        assert_eq!(triplets.len(), 4);
        for (i, t) in triplets.iter().enumerate() {
            assert_eq!(t.center_index, i);
            let n = 9;
            let d = t.channels.data();
            assert_eq!(&d[..n], &d[n..2 * n]);
            assert_eq!(&d[n..2 * n], &d[2 * n..]);
            assert_eq!(&d[..n], v.slice(i));
        }
    }

    #[test]
    fn space_to_channel_clamps_at_boundaries() {
        let v = seeded_volume(4, 2, 2, 6);
        let triplets = space_to_channel(&v, 1);
        let first = &triplets[0];
        let n = 4;
        assert_eq!(&first.channels.data()[..n], v.slice(0));
        assert_eq!(&first.channels.data()[n..2 * n], v.slice(0));
        assert_eq!(&first.channels.data()[2 * n..], v.slice(1));

        let v5 = seeded_volume(5, 2, 2, 7);
        let t = &space_to_channel(&v5, 2)[2];
        assert_eq!(&t.channels.data()[..n], v5.slice(0));
        assert_eq!(&t.channels.data()[n..2 * n], v5.slice(2));
        assert_eq!(&t.channels.data()[2 * n..], v5.slice(4));
    }
}
