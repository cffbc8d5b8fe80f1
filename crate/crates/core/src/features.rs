//! Pluggable 2D feature extraction and depth-wise feature pooling.
//!
//! Extractors map one image to a `C' x H' x W'` feature map. The built-in
//! [`ToyExtractor`] is a frozen random conv + rectifier + max-pool chain whose
//! presets reproduce the output-shape arithmetic of well-known ImageNet
//! backbones; [`ExternalFeatures`] instead reads precomputed per-index maps
//! from disk (layout `<dir>/<volume_id>/<index:04>.ten`), so features from
//! real pretrained networks can be dropped in.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Deterministic image-to-feature-map transform.
///
/// Implementations must be pure: the same input always yields the same
/// output, and outputs of same-shape inputs share a shape.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// `(C', H', W')` produced for an `H x W` input.
    fn output_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)>;

    /// Extract features from a grayscale (`H x W` or `1 x H x W`) or 3-channel
    /// (`3 x H x W`) image. Grayscale input is treated as replicated to three
    /// channels.
    fn extract(&self, image: &Tensor) -> Result<Tensor>;
}

/// Parameters of the frozen random convolutional extractor.
#[derive(Clone, Copy, Debug)]
pub struct ToyExtractorConfig {
    pub n_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub seed: u64,
}

/// Frozen random conv stack: `conv(k, stride, 3 in-channels, zero bias)` ->
/// rectifier -> non-overlapping `p x p` max pool. Weights are drawn once from
/// a seeded Gaussian and never trained.
///
/// Output spatial size uses floor arithmetic:
/// `conv = (in - kernel) / stride + 1`, then `out = conv / pool`.
pub struct ToyExtractor {
    name: String,
    cfg: ToyExtractorConfig,
    /// `n_filters x 3 x kernel x kernel`, row-major.
    weights: Vec<f32>,
}

impl ToyExtractor {
    pub fn new(name: impl Into<String>, cfg: ToyExtractorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fan_in = (3 * cfg.kernel * cfg.kernel) as f64;
        let dist = Normal::new(0.0, 1.0 / fan_in.sqrt()).unwrap();
        let weights = (0..cfg.n_filters * 3 * cfg.kernel * cfg.kernel)
            .map(|_| dist.sample(&mut rng) as f32)
            .collect();
        Self {
            name: name.into(),
            cfg,
            weights,
        }
    }

    /// Named shape presets. The three `*-like` presets map `1024 x 1024`
    /// inputs to the feature-map shapes of the networks they mimic; `small`
    /// is sized for fast experiments on `128 x 128` slices.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let cfg = match name {
            "small" => ToyExtractorConfig {
                n_filters: 8,
                kernel: 5,
                stride: 2,
                pool: 2,
                seed,
            },
            // 1024 -> conv 254 -> pool 31, 256 channels
            "alexnet-like" => ToyExtractorConfig {
                n_filters: 256,
                kernel: 11,
                stride: 4,
                pool: 8,
                seed,
            },
            // 1024 -> conv 64 -> pool 4, 2048 channels
            "resnet-like" => ToyExtractorConfig {
                n_filters: 2048,
                kernel: 16,
                stride: 16,
                pool: 16,
                seed,
            },
            // 1024 -> conv 128 -> pool 32, 2048 channels
            "xception-like" => ToyExtractorConfig {
                n_filters: 2048,
                kernel: 8,
                stride: 8,
                pool: 4,
                seed,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown extractor preset `{other}`"
                )))
            }
        };
        Ok(Self::new(name, cfg))
    }

    pub fn config(&self) -> ToyExtractorConfig {
        self.cfg
    }

    fn spatial(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let k = self.cfg.kernel;
        let s = self.cfg.stride;
        let p = self.cfg.pool;
        if height < k || width < k {
            return Err(Error::ShapeUnsupported(format!(
                "input {height}x{width} smaller than kernel {k}"
            )));
        }
        let conv_h = (height - k) / s + 1;
        let conv_w = (width - k) / s + 1;
        let out_h = conv_h / p;
        let out_w = conv_w / p;
        if out_h == 0 || out_w == 0 {
            return Err(Error::ShapeUnsupported(format!(
                "input {height}x{width} collapses to zero after conv/pool chain"
            )));
        }
        Ok((conv_h, conv_w, out_h, out_w))
    }
}

impl FeatureExtractor for ToyExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let (_, _, out_h, out_w) = self.spatial(height, width)?;
        Ok((self.cfg.n_filters, out_h, out_w))
    }

    fn extract(&self, image: &Tensor) -> Result<Tensor> {
        let (channels, height, width) = match image.shape() {
            [h, w] => (1, *h, *w),
            [c @ (1 | 3), h, w] => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    expected: "HxW, 1xHxW or 3xHxW image".into(),
                    actual: format!("{other:?}"),
                })
            }
        };
        let (conv_h, conv_w, out_h, out_w) = self.spatial(height, width)?;
        let k = self.cfg.kernel;
        let stride = self.cfg.stride;
        let pool = self.cfg.pool;
        let pixels = image.data();
        // channel fetch clamps so 1-channel input behaves as replicated RGB
        let plane = |c: usize| -> &[f32] {
            let c = c.min(channels - 1);
            &pixels[c * height * width..(c + 1) * height * width]
        };

        let blocks = par::map_indexed(self.cfg.n_filters, |f| {
            let mut conv = vec![0.0f32; conv_h * conv_w];
            // accumulate one kernel tap at a time across the whole output row;
            // per-pixel accumulation order stays (c, ky, kx)
            for c in 0..3 {
                let img = plane(c);
                let w_base = (f * 3 + c) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let weight = self.weights[w_base + ky * k + kx];
                        for oy in 0..conv_h {
                            let row = &img[(oy * stride + ky) * width + kx..];
                            let dst = &mut conv[oy * conv_w..(oy + 1) * conv_w];
                            if stride == 1 {
                                for (d, &x) in dst.iter_mut().zip(&row[..conv_w]) {
                                    *d += weight * x;
                                }
                            } else {
                                for (d, chunk) in dst.iter_mut().zip(row.chunks(stride)) {
                                    *d += weight * chunk[0];
                                }
                            }
                        }
                    }
                }
            }
            let mut out = vec![0.0f32; out_h * out_w];
            for py in 0..out_h {
                for px in 0..out_w {
                    let mut m = 0.0f32; // rectified, so the floor is zero
                    for dy in 0..pool {
                        for dx in 0..pool {
                            let v = conv[(py * pool + dy) * conv_w + px * pool + dx];
                            m = m.max(v);
                        }
                    }
                    out[py * out_w + px] = m;
                }
            }
            out
        });

        let mut data = Vec::with_capacity(self.cfg.n_filters * out_h * out_w);
        for b in blocks {
            data.extend_from_slice(&b);
        }
        Tensor::new(vec![self.cfg.n_filters, out_h, out_w], data)
    }
}

/// Per-input feature maps for one volume, shape `T x C' x H' x W'`.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    maps: Tensor,
    source_volume_id: String,
}

impl FeatureStack {
    pub fn from_maps(maps: Vec<Tensor>, source_volume_id: impl Into<String>) -> Result<Self> {
        let first = maps.first().ok_or(Error::InvalidDepth)?;
        if first.rank() != 3 {
            return Err(Error::ShapeMismatch {
                expected: "rank-3 feature maps".into(),
                actual: format!("rank {}", first.rank()),
            });
        }
        let shape = first.shape().to_vec();
        let mut data = Vec::with_capacity(maps.len() * first.len());
        for m in &maps {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{shape:?}"),
                    actual: format!("{:?}", m.shape()),
                });
            }
            data.extend_from_slice(m.data());
        }
        let full = Tensor::new(
            vec![maps.len(), shape[0], shape[1], shape[2]],
            data,
        )?;
        Ok(Self {
            maps: full,
            source_volume_id: source_volume_id.into(),
        })
    }

    pub fn source_volume_id(&self) -> &str {
        &self.source_volume_id
    }

    pub fn depth(&self) -> usize {
        self.maps.shape()[0]
    }

    /// `(C', H', W')` of each per-input map.
    pub fn map_shape(&self) -> (usize, usize, usize) {
        let s = self.maps.shape();
        (s[1], s[2], s[3])
    }

    pub fn map(&self, t: usize) -> &[f32] {
        let n = self.maps.len() / self.depth();
        &self.maps.data()[t * n..(t + 1) * n]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.maps
    }
}

/// Extract features for every input (all the same shape), preserving order.
pub fn extract_stack(
    extractor: &dyn FeatureExtractor,
    inputs: &[Tensor],
    source_volume_id: &str,
) -> Result<FeatureStack> {
    let first = inputs.first().ok_or(Error::InvalidDepth)?;
    for i in inputs {
        if i.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", first.shape()),
                actual: format!("{:?}", i.shape()),
            });
        }
    }
    let maps = par::try_map_indexed(inputs.len(), |i| extractor.extract(&inputs[i]))?;
    FeatureStack::from_maps(maps, source_volume_id)
}

/// Element-wise reduction applied across the slice axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMethod {
    Min,
    Avg,
    Max,
}

impl fmt::Display for PoolMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMethod::Min => "min",
            PoolMethod::Avg => "avg",
            PoolMethod::Max => "max",
        })
    }
}

impl FromStr for PoolMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(PoolMethod::Min),
            "avg" | "average" => Ok(PoolMethod::Avg),
            "max" => Ok(PoolMethod::Max),
            other => Err(Error::InvalidConfig(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Reduce a stack across its slice axis only; the output shape `C' x H' x W'`
/// is independent of the stack depth. Accumulation order is ascending slice
/// index, so results do not depend on scheduling.
pub fn pool_depth(stack: &FeatureStack, method: PoolMethod) -> Tensor {
    let (c, h, w) = stack.map_shape();
    let plane = h * w;
    let depth = stack.depth();
    let blocks = par::map_indexed(c, |ch| {
        let mut out = vec![0.0f32; plane];
        match method {
            PoolMethod::Min | PoolMethod::Max => {
                out.copy_from_slice(&stack.map(0)[ch * plane..(ch + 1) * plane]);
                for t in 1..depth {
                    let src = &stack.map(t)[ch * plane..(ch + 1) * plane];
                    for (o, &v) in out.iter_mut().zip(src) {
                        *o = if method == PoolMethod::Min {
                            o.min(v)
                        } else {
                            o.max(v)
                        };
                    }
                }
            }
            PoolMethod::Avg => {
                let mut acc = vec![0.0f64; plane];
                for t in 0..depth {
                    let src = &stack.map(t)[ch * plane..(ch + 1) * plane];
                    for (a, &v) in acc.iter_mut().zip(src) {
                        *a += f64::from(v);
                    }
                }
                let inv = 1.0 / depth as f64;
                for (o, a) in out.iter_mut().zip(acc) {
                    *o = (a * inv) as f32;
                }
            }
        }
        out
    });
    let mut data = Vec::with_capacity(c * plane);
    for b in blocks {
        data.extend_from_slice(&b);
    }
    Tensor::new(vec![c, h, w], data).expect("pooled data is valid")
}

/// Precomputed feature maps on disk, keyed by volume id and input index.
pub struct ExternalFeatures {
    dir: PathBuf,
}

impl ExternalFeatures {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn map_path(&self, volume_id: &str, index: usize) -> PathBuf {
        self.dir.join(volume_id).join(format!("{index:04}.ten"))
    }

    /// Write one stack as `<dir>/<volume_id>/<index:04>.ten` files.
    pub fn write_stack(&self, volume_id: &str, maps: &[Tensor]) -> Result<()> {
        let vol_dir = self.dir.join(volume_id);
        std::fs::create_dir_all(&vol_dir)?;
        for (i, m) in maps.iter().enumerate() {
            write_tensor(m, &self.map_path(volume_id, i))?;
        }
        Ok(())
    }

    /// Load the full stack for a volume; depth is the number of index files
    /// present, which must be contiguous from 0.
    pub fn load_stack(&self, volume_id: &str) -> Result<FeatureStack> {
        let vol_dir = self.dir.join(volume_id);
        let mut count = 0;
        while self.map_path(volume_id, count).is_file() {
            count += 1;
        }
        if count == 0 {
            return Err(Error::Manifest(format!(
                "no feature maps for `{volume_id}` under {}",
                vol_dir.display()
            )));
        }
        let maps = par::try_map_indexed(count, |i| read_tensor(&self.map_path(volume_id, i)))?;
        FeatureStack::from_maps(maps, volume_id)
    }
}
