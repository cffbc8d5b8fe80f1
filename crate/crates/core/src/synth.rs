//! Seeded synthetic slice-stack generator.
//!
//! Volumes are a smooth background (base level, gentle gradient, a few broad
//! low-amplitude bumps), a small per-slice intensity wobble, and pixel
//! Gaussian noise, clamped to `[0, 1]`. Positive volumes additionally carry
//! one bright plateau blob of the configured contrast on exactly
//! `lesion.span` consecutive slices.
//!
//! Generation is deterministic: volume `i` draws from a ChaCha stream derived
//! from `(seed, i)`, so output is independent of thread scheduling.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{write_tensor, Tensor};
use crate::volume::{DatasetManifest, Label, ManifestEntry, Split, View, Volume};

/// Lesion shape parameters: pixel radius range, additive intensity contrast,
/// and the number of consecutive slices the blob spans.
#[derive(Clone, Debug)]
pub struct LesionSpec {
    pub radius_range: (f64, f64),
    pub contrast: f64,
    pub span: usize,
}

/// Full synthetic dataset specification.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_negative: usize,
    pub n_positive: usize,
    /// Inclusive `[T_min, T_max]` slice-count range.
    pub depth_range: (usize, usize),
    /// `(H, W)` of every slice.
    pub slice_size: (usize, usize),
    pub lesion: LesionSpec,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_negative: 300,
            n_positive: 100,
            depth_range: (8, 16),
            slice_size: (128, 128),
            lesion: LesionSpec {
                radius_range: (4.0, 10.0),
                contrast: 0.5,
                span: 3,
            },
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidSpec(msg));
        let (t_min, t_max) = self.depth_range;
        let (h, w) = self.slice_size;
        let (r_min, r_max) = self.lesion.radius_range;
        if self.n_negative + self.n_positive == 0 {
            return err("no volumes requested".into());
        }
        if t_min < 1 || t_min > t_max {
            return err(format!("empty depth range [{t_min}, {t_max}]"));
        }
        if self.lesion.span < 1 || self.lesion.span > t_min {
            return err(format!(
                "lesion span {} must satisfy 1 <= span <= T_min ({t_min})",
                self.lesion.span
            ));
        }
        if !(self.lesion.contrast > 0.0) {
            return err(format!("contrast {} must be > 0", self.lesion.contrast));
        }
        if !(r_min > 0.0 && r_min <= r_max) {
            return err(format!("empty radius range [{r_min}, {r_max}]"));
        }
        if h < 2 || w < 2 {
            return err(format!("slice size {h}x{w} too small"));
        }
        if 2.0 * r_max + 2.0 >= h.min(w) as f64 {
            return err(format!(
                "max radius {r_max} does not fit in {h}x{w} slices"
            ));
        }
        if self.noise_sigma < 0.0 {
            return err(format!("negative noise sigma {}", self.noise_sigma));
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.n_negative + self.n_positive
    }

    fn label_of(&self, index: usize) -> Label {
        if index < self.n_negative {
            Label::Negative
        } else {
            Label::Malignant
        }
    }

    fn id_of(&self, index: usize) -> String {
        if index < self.n_negative {
            format!("neg_{index:04}")
        } else {
            format!("pos_{:04}", index - self.n_negative)
        }
    }
}

/// Placement of the blob inside a positive volume.
#[derive(Clone, Debug)]
pub struct LesionPlacement {
    pub center: (f64, f64),
    pub radius: f64,
    /// First slice of the lesion window; the blob covers `first_slice..first_slice + span`.
    pub first_slice: usize,
}

#[derive(Clone, Debug)]
struct Bump {
    amplitude: f64,
    center: (f64, f64),
    sigma: f64,
}

/// Everything about a volume that is decided before pixel noise is drawn.
#[derive(Clone, Debug)]
pub struct VolumeBlueprint {
    pub depth: usize,
    pub label: Label,
    pub lesion: Option<LesionPlacement>,
    base: f64,
    gradient: (f64, f64),
    bumps: Vec<Bump>,
    slice_offsets: Vec<f64>,
}

fn stream_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_blueprint(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> VolumeBlueprint {
    let (t_min, t_max) = spec.depth_range;
    let (h, w) = spec.slice_size;
    let depth = rng.random_range(t_min..=t_max);
    let base = rng.random_range(0.28..0.36);
    let gradient = (
        rng.random_range(-0.10..0.10),
        rng.random_range(-0.10..0.10),
    );
    let n_bumps = rng.random_range(2..=3usize);
    let min_dim = h.min(w) as f64;
    let bumps = (0..n_bumps)
        .map(|_| Bump {
            amplitude: rng.random_range(-0.08..0.08),
            center: (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
            ),
            sigma: rng.random_range(0.09..0.25) * min_dim,
        })
        .collect();
    let slice_offsets = (0..depth).map(|_| rng.random_range(-0.01..0.01)).collect();
    let label = spec.label_of(index);
    let lesion = if label.is_positive() {
        let (r_min, r_max) = spec.lesion.radius_range;
        let radius = rng.random_range(r_min..=r_max);
        let margin = radius + 1.0;
        let center = (
            rng.random_range(margin..h as f64 - margin),
            rng.random_range(margin..w as f64 - margin),
        );
        let first_slice = rng.random_range(0..=depth - spec.lesion.span);
        Some(LesionPlacement {
            center,
            radius,
            first_slice,
        })
    } else {
        None
    };
    VolumeBlueprint {
        depth,
        label,
        lesion,
        base,
        gradient,
        bumps,
        slice_offsets,
    }
}

/// Scalar draws for volume `index` (depth, background layout, lesion
/// placement) without materializing pixels.
pub fn volume_blueprint(spec: &SynthSpec, index: usize) -> VolumeBlueprint {
    let mut rng = stream_rng(spec.seed, index);
    draw_blueprint(spec, index, &mut rng)
}

fn background_field(spec: &SynthSpec, bp: &VolumeBlueprint) -> Vec<f64> {
    let (h, w) = spec.slice_size;
    let mut field = vec![0.0f64; h * w];
    for y in 0..h {
        let yn = y as f64 / (h - 1) as f64 - 0.5;
        for x in 0..w {
            let xn = x as f64 / (w - 1) as f64 - 0.5;
            let mut v = bp.base + bp.gradient.0 * yn + bp.gradient.1 * xn;
            for b in &bp.bumps {
                let dy = y as f64 - b.center.0;
                let dx = x as f64 - b.center.1;
                let d2 = dy * dy + dx * dx;
                v += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            }
            field[y * w + x] = v;
        }
    }
    field
}

/// Plateau blob: full contrast out to 0.75 r, linear falloff to zero at r.
fn lesion_field(spec: &SynthSpec, placement: &LesionPlacement) -> Vec<f64> {
    let (h, w) = spec.slice_size;
    let mut field = vec![0.0f64; h * w];
    let r = placement.radius;
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - placement.center.0;
            let dx = x as f64 - placement.center.1;
            let d = (dy * dy + dx * dx).sqrt();
            if d < r {
                let edge = ((r - d) / (0.25 * r)).min(1.0);
                field[y * w + x] = spec.lesion.contrast * edge;
            }
        }
    }
    field
}

/// Generate volume `index` of the spec. Deterministic in `(spec, index)`.
pub fn generate_volume(spec: &SynthSpec, index: usize) -> Volume {
    let mut rng = stream_rng(spec.seed, index);
    let bp = draw_blueprint(spec, index, &mut rng);
    let (h, w) = spec.slice_size;
    let background = background_field(spec, &bp);
    let lesion = bp.lesion.as_ref().map(|p| lesion_field(spec, p));
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();

    let mut data = Vec::with_capacity(bp.depth * h * w);
    for t in 0..bp.depth {
        let in_window = bp.lesion.as_ref().is_some_and(|p| {
            t >= p.first_slice && t < p.first_slice + spec.lesion.span
        });
        let offset = bp.slice_offsets[t];
        for i in 0..h * w {
            let mut v = background[i] + offset;
            if in_window {
                v += lesion.as_ref().unwrap()[i];
            }
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let slices = Tensor::new(vec![bp.depth, h, w], data).expect("generated data is valid");
    let view = if index % 2 == 0 { View::Cc } else { View::Mlo };
    Volume::new(spec.id_of(index), slices, view, bp.label).expect("generated volume is valid")
}

/// Generate all volumes in memory, in index order.
pub fn generate_volumes(spec: &SynthSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    Ok(par::map_indexed(spec.n_total(), |i| generate_volume(spec, i)))
}

/// Stratified 80/20 split: within each class the first 80% of indices go to
/// the train split.
fn split_of(index_in_class: usize, class_total: usize) -> Split {
    if index_in_class < class_total * 4 / 5 {
        Split::Train
    } else {
        Split::Test
    }
}

/// Generate the dataset under `dir`: volumes as `volumes/<id>.ten` plus a
/// `manifest.csv`. Returns the written manifest.
pub fn generate_to_dir(spec: &SynthSpec, dir: &Path) -> Result<DatasetManifest> {
    let volumes = generate_volumes(spec)?;
    let vol_dir = dir.join("volumes");
    std::fs::create_dir_all(&vol_dir)?;
    let mut entries = Vec::with_capacity(volumes.len());
    for (i, v) in volumes.iter().enumerate() {
        let rel = format!("volumes/{}.ten", v.id());
        write_tensor(v.slices(), &dir.join(&rel))?;
        let (in_class, class_total) = if i < spec.n_negative {
            (i, spec.n_negative)
        } else {
            (i - spec.n_negative, spec.n_positive)
        };
        entries.push(ManifestEntry {
            path: rel,
            label: v.label(),
            view: v.view(),
            split: split_of(in_class, class_total),
        });
    }
    let manifest = DatasetManifest::new(entries, dir)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
