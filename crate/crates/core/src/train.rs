//! End-to-end training: fusion-strategy image preparation, feature-map
//! computation, balanced mini-batch gradient descent with Adam, per-epoch
//! held-out auROC tracking, and checkpoint serialization.
//!
//! Everything is deterministic in the config seed: sampler, augmentation
//! draws, dropout masks, and parameter init all derive from it, and batch
//! gradients are reduced over a fixed chunk structure so results do not
//! depend on thread scheduling.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamHyper, AdamState};
use crate::augment::{augment, Augmentation};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{
    extract_stack, pool_depth, ExternalFeatures, FeatureExtractor, PoolMethod,
};
use crate::fusion::{average_image, dynamic_image, space_to_channel, RankVariant};
use crate::head::{ClassifierHead, HeadConfig, HeadGradients, PARAM_NAMES};
use crate::par;
use crate::tensor::{read_tensor_from, write_tensor_to, Tensor};
use crate::volume::{DatasetManifest, Label, ManifestEntry, Split, Volume};

/// Where in the pipeline the slice sequence is fused.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    /// Extract per-slice features, pool across the slice axis.
    Late,
    /// Collapse slices to their mean image before extraction.
    EarlyAverage,
    /// Collapse slices to a dynamic image before extraction.
    EarlyDynamic,
    /// Per-center triplet channels, extracted then pooled.
    SpaceToChannel,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Late => "late",
            StrategyKind::EarlyAverage => "early-average",
            StrategyKind::EarlyDynamic => "early-dynamic",
            StrategyKind::SpaceToChannel => "space-to-channel",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "late" => Ok(StrategyKind::Late),
            "early-average" => Ok(StrategyKind::EarlyAverage),
            "early-dynamic" => Ok(StrategyKind::EarlyDynamic),
            "space-to-channel" => Ok(StrategyKind::SpaceToChannel),
            other => Err(Error::InvalidConfig(format!(
                "unknown fusion strategy `{other}`"
            ))),
        }
    }
}

/// Full fusion selection. `pooling` applies to the late and space-to-channel
/// paths, `variant` to the dynamic image, `j` to the triplet spacing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionStrategy {
    pub kind: StrategyKind,
    pub pooling: PoolMethod,
    pub variant: RankVariant,
    pub j: usize,
}

impl FusionStrategy {
    pub fn late(pooling: PoolMethod) -> Self {
        Self {
            kind: StrategyKind::Late,
            pooling,
            variant: RankVariant::Harmonic,
            j: 0,
        }
    }

    pub fn early_average() -> Self {
        Self {
            kind: StrategyKind::EarlyAverage,
            ..Self::late(PoolMethod::Max)
        }
    }

    pub fn early_dynamic(variant: RankVariant) -> Self {
        Self {
            kind: StrategyKind::EarlyDynamic,
            variant,
            ..Self::late(PoolMethod::Max)
        }
    }

    pub fn space_to_channel(j: usize, pooling: PoolMethod) -> Self {
        Self {
            kind: StrategyKind::SpaceToChannel,
            pooling,
            variant: RankVariant::Harmonic,
            j,
        }
    }

    /// Compact human-readable tag, e.g. `late+max` or `s2c-j1+max`.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Late => format!("late+{}", self.pooling),
            StrategyKind::EarlyAverage => "early-average".into(),
            StrategyKind::EarlyDynamic => format!("early-dynamic({})", self.variant),
            StrategyKind::SpaceToChannel => format!("s2c-j{}+{}", self.j, self.pooling),
        }
    }
}

/// Supplier of feature maps: a real image extractor or precomputed maps.
pub enum FeatureSource<'a> {
    Extractor(&'a dyn FeatureExtractor),
    External(&'a ExternalFeatures),
}

/// The images a strategy feeds to the extractor for one volume: `T` slices
/// (late), a single fused image (early), or `T` triplets (space-to-channel).
pub fn strategy_images(v: &Volume, strategy: &FusionStrategy) -> Vec<Tensor> {
    match strategy.kind {
        StrategyKind::Late => (0..v.depth()).map(|t| v.slice_image(t)).collect(),
        StrategyKind::EarlyAverage => vec![average_image(v)],
        StrategyKind::EarlyDynamic => vec![dynamic_image(v, strategy.variant)],
        StrategyKind::SpaceToChannel => space_to_channel(v, strategy.j)
            .into_iter()
            .map(|t| t.channels)
            .collect(),
    }
}

/// Compute the head input for one volume under a fusion strategy, optionally
/// applying one augmentation to the whole stack first. Precomputed external
/// features cannot be augmented.
pub fn volume_feature_map(
    source: &FeatureSource,
    v: &Volume,
    strategy: &FusionStrategy,
    augmentation: Option<Augmentation>,
) -> Result<Tensor> {
    match source {
        FeatureSource::Extractor(e) => {
            let augmented;
            let v = match augmentation {
                Some(a) if a != Augmentation::IDENTITY => {
                    let slices = augment(v.slices(), a)?;
                    augmented = Volume::new(v.id(), slices, v.view(), v.label())?;
                    &augmented
                }
                _ => v,
            };
            let images = strategy_images(v, strategy);
            match strategy.kind {
                StrategyKind::Late | StrategyKind::SpaceToChannel => {
                    let stack = extract_stack(*e, &images, v.id())?;
                    Ok(pool_depth(&stack, strategy.pooling))
                }
                StrategyKind::EarlyAverage | StrategyKind::EarlyDynamic => e.extract(&images[0]),
            }
        }
        FeatureSource::External(x) => {
            if augmentation.is_some_and(|a| a != Augmentation::IDENTITY) {
                return Err(Error::InvalidConfig(
                    "precomputed external features cannot be augmented".into(),
                ));
            }
            let stack = x.load_stack(v.id())?;
            Ok(pool_depth(&stack, strategy.pooling))
        }
    }
}

/// Training hyperparameters and pipeline selection.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Must be even; each batch is half negatives, half positives.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Draw one of the eight flip/rotation transforms per sample per batch.
    pub augment: bool,
    pub strategy: FusionStrategy,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-4,
            dropout: 0.5,
            weight_decay: 1e-4,
            epochs: 20,
            seed: 42,
            augment: true,
            strategy: FusionStrategy::late(PoolMethod::Max),
            head: HeadConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the held-out split cannot be scored (missing class).
    pub val_auroc: f64,
}

pub struct TrainOutcome {
    /// Head with the best held-out auROC (final head if none was scorable).
    pub head: ClassifierHead,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Transforms applicable to a stack geometry: all eight for square slices,
/// otherwise only the four that preserve the spatial shape.
fn allowed_transforms(square: bool) -> Vec<Augmentation> {
    Augmentation::all()
        .into_iter()
        .filter(|a| square || matches!(a.rotation.degrees(), 0 | 180))
        .collect()
}

/// Mean loss and mean gradients over a batch. Per-sample work runs in
/// parallel over a fixed four-chunk partition and is reduced in chunk order,
/// so the result is independent of scheduling.
pub fn batch_gradients<F>(
    head: &ClassifierHead,
    n: usize,
    feature_map_of: F,
    targets: &[f64],
    sample_seeds: &[u64],
    train_mode: bool,
) -> Result<(f64, HeadGradients)>
where
    F: Fn(usize) -> Result<Tensor> + Sync,
{
    if targets.len() != n || sample_seeds.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: targets.len(),
        });
    }
    const CHUNKS: usize = 4;
    let chunk_len = n.div_ceil(CHUNKS).max(1);
    let n_chunks = n.div_ceil(chunk_len);
    let partials = par::try_map_indexed(n_chunks, |chunk| {
        let mut grads = HeadGradients::zeros_like(head);
        let mut loss = 0.0;
        for k in chunk * chunk_len..((chunk + 1) * chunk_len).min(n) {
            let fm = feature_map_of(k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seeds[k]);
            let (l, g) = head.backward(&fm, targets[k], train_mode, &mut rng)?;
            loss += l;
            grads.add(&g);
        }
        Ok::<_, Error>((loss, grads))
    })?;
    let mut total = HeadGradients::zeros_like(head);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        total.add(g);
    }
    total.scale(1.0 / n as f64);
    Ok((loss / n as f64, total))
}

/// Entries participating in the binary task (benign rows are excluded).
fn binary_entries(manifest: &DatasetManifest, split: Split) -> Vec<ManifestEntry> {
    manifest
        .split_entries(split)
        .into_iter()
        .filter(|e| e.label != Label::Benign)
        .cloned()
        .collect()
}

fn load_volumes(manifest: &DatasetManifest, entries: &[ManifestEntry]) -> Result<Vec<Volume>> {
    par::try_map_indexed(entries.len(), |i| manifest.load_volume(&entries[i]))
}

/// Score precomputed feature maps with an inference-mode head.
fn score_feature_maps(head: &ClassifierHead, feature_maps: &[Tensor]) -> Result<Vec<f64>> {
    par::try_map_indexed(feature_maps.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        head.forward(&feature_maps[i], false, &mut rng)
    })
}

/// Score every binary entry of a manifest split. Returns
/// `(scores, positive flags, entry paths)` in manifest order.
pub fn score_manifest(
    head: &ClassifierHead,
    source: &FeatureSource,
    strategy: &FusionStrategy,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<(Vec<f64>, Vec<bool>, Vec<String>)> {
    let entries: Vec<ManifestEntry> = match split {
        Some(s) => binary_entries(manifest, s),
        None => manifest
            .entries()
            .iter()
            .filter(|e| e.label != Label::Benign)
            .cloned()
            .collect(),
    };
    let scores = par::try_map_indexed(entries.len(), |i| {
        let v = manifest.load_volume(&entries[i])?;
        let fm = volume_feature_map(source, &v, strategy, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        head.forward(&fm, false, &mut rng)
    })?;
    let labels = entries.iter().map(|e| e.label.is_positive()).collect();
    let paths = entries.iter().map(|e| e.path.clone()).collect();
    Ok((scores, labels, paths))
}

/// Train a classifier head over the manifest's train split, tracking auROC
/// on the test split after every epoch and returning the best head.
pub fn train(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    source: &FeatureSource,
) -> Result<TrainOutcome> {
    if cfg.augment && matches!(source, FeatureSource::External(_)) {
        return Err(Error::InvalidConfig(
            "augmented training requires an image extractor, not external features".into(),
        ));
    }
    let train_entries = binary_entries(manifest, Split::Train);
    let val_entries = binary_entries(manifest, Split::Test);
    if train_entries.is_empty() {
        return Err(Error::MissingClass("train split is empty".into()));
    }
    let train_labels: Vec<bool> = train_entries.iter().map(|e| e.label.is_positive()).collect();
    let targets: Vec<f64> = train_labels.iter().map(|&b| f64::from(u8::from(b))).collect();

    let train_volumes = load_volumes(manifest, &train_entries)?;
    let square = train_volumes[0].height() == train_volumes[0].width();

    // Every feature map a batch can request is precomputed once: one map per
    // volume without augmentation, one per (volume, transform) pair with it.
    // The per-batch transform draw stays random; only the extraction work is
    // memoized, so results match the on-the-fly computation exactly.
    let transforms = if cfg.augment {
        allowed_transforms(square)
    } else {
        vec![Augmentation::IDENTITY]
    };
    let n_train = train_volumes.len();
    let flat_maps: Vec<Tensor> = par::try_map_indexed(n_train * transforms.len(), |idx| {
        let (i, t) = (idx / transforms.len(), idx % transforms.len());
        volume_feature_map(source, &train_volumes[i], &cfg.strategy, Some(transforms[t]))
    })?;
    let train_maps: Vec<&[Tensor]> = flat_maps.chunks(transforms.len()).collect();
    drop(train_volumes);

    let val_volumes = load_volumes(manifest, &val_entries)?;
    let val_maps: Vec<Tensor> = par::try_map_indexed(val_volumes.len(), |i| {
        volume_feature_map(source, &val_volumes[i], &cfg.strategy, None)
    })?;
    let val_labels: Vec<bool> = val_entries.iter().map(|e| e.label.is_positive()).collect();
    drop(val_volumes);

    let probe = &train_maps[0][0];
    let in_shape = (probe.shape()[0], probe.shape()[1], probe.shape()[2]);
    let head_cfg = HeadConfig {
        dropout: cfg.dropout,
        ..cfg.head
    };
    let mut head = ClassifierHead::init(head_cfg, in_shape, mix_seed(&[cfg.seed, 0]))?;
    let sizes: Vec<usize> = head.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(
        AdamHyper {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamHyper::default()
        },
        &sizes,
    );

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ClassifierHead)> = None;

    for epoch in 0..cfg.epochs {
        let batches = crate::sampler::balanced_batches(
            &train_labels,
            cfg.batch_size,
            mix_seed(&[cfg.seed, 1, epoch as u64]),
        )?;
        let mut epoch_loss = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let step = (epoch * batches.len() + b) as u64;
            let batch_targets: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let sample_seeds: Vec<u64> = (0..batch.len())
                .map(|k| mix_seed(&[cfg.seed, 3, step, k as u64]))
                .collect();
            let fm_of = |k: usize| -> Result<Tensor> {
                let i = batch[k];
                let t = if transforms.len() == 1 {
                    0
                } else {
                    use rand::Rng;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2, step, k as u64]));
                    rng.random_range(0..transforms.len())
                };
                Ok(train_maps[i][t].clone())
            };
            let (loss, grads) = batch_gradients(
                &head,
                batch.len(),
                fm_of,
                &batch_targets,
                &sample_seeds,
                true,
            )?;
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "loss diverged at epoch {epoch}, batch {b}"
                )));
            }
            epoch_loss += loss;
            let mut params = head.params_mut();
            let mut param_slices: Vec<&mut [f64]> =
                params.iter_mut().map(|p| p.as_mut_slice()).collect();
            let grad_arrays = grads.iter();
            adam.step(&mut param_slices, &grad_arrays)?;
        }
        let train_loss = epoch_loss / batches.len() as f64;

        let val_scores = score_feature_maps(&head, &val_maps)?;
        let val_auroc = match eval::auroc(&val_scores, &val_labels) {
            Ok(a) => a,
            Err(_) => f64::NAN,
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_auroc,
        });
        if val_auroc.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val_auroc > *b) {
            best = Some((val_auroc, epoch, head.clone()));
        }
    }

    let (head, best_epoch) = match best {
        Some((_, e, h)) => (h, Some(e)),
        None => (head, None),
    };
    Ok(TrainOutcome {
        head,
        history,
        best_epoch,
    })
}

/// Write per-epoch stats as CSV `epoch,train_loss,val_auroc`.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_auroc\n");
    for s in history {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.train_loss, s.val_auroc));
    }
    std::fs::write(path, out)?;
    Ok(())
}

const CHECKPOINT_KEYS: [&str; 8] = [
    "head.conv_filters",
    "head.conv_kernel",
    "head.conv_stride",
    "head.dropout",
    "head.hidden",
    "head.in_c",
    "head.in_h",
    "head.in_w",
];

/// Save the head plus a config snapshot: a length-prefixed UTF-8 key-value
/// header followed by the six parameter tensors as named `.ten` records.
pub fn save_checkpoint(
    head: &ClassifierHead,
    config: &[(String, String)],
    path: &Path,
) -> Result<()> {
    let cfg = head.config();
    let (c, h, w) = head.in_shape();
    let mut header = String::new();
    for (k, v) in config {
        if CHECKPOINT_KEYS.contains(&k.as_str()) {
            continue;
        }
        header.push_str(&format!("{k} = {v}\n"));
    }
    let internal = [
        ("head.conv_filters", cfg.conv_filters.to_string()),
        ("head.conv_kernel", cfg.conv_kernel.to_string()),
        ("head.conv_stride", cfg.conv_stride.to_string()),
        ("head.dropout", cfg.dropout.to_string()),
        ("head.hidden", cfg.hidden.to_string()),
        ("head.in_c", c.to_string()),
        ("head.in_h", h.to_string()),
        ("head.in_w", w.to_string()),
    ];
    for (k, v) in internal {
        header.push_str(&format!("{k} = {v}\n"));
    }

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header_bytes = header.as_bytes();
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(header_bytes)?;
    let shapes = head.param_shapes();
    for (slot, name) in PARAM_NAMES.iter().enumerate() {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        out.write_all(name_bytes)?;
        let data: Vec<f32> = head.params()[slot].iter().map(|&x| x as f32).collect();
        let t = Tensor::new(shapes[slot].clone(), data)?;
        write_tensor_to(&t, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn header_value<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("missing header key `{key}`")))
}

fn parse_header<T: FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
    header_value(pairs, key)?
        .parse::<T>()
        .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
}

/// Load a checkpoint: the reconstructed head plus the config snapshot.
pub fn load_checkpoint(path: &Path) -> Result<(ClassifierHead, Vec<(String, String)>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut pairs = Vec::new();
    for line in header.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }

    let head_cfg = HeadConfig {
        conv_filters: parse_header(&pairs, "head.conv_filters")?,
        conv_kernel: parse_header(&pairs, "head.conv_kernel")?,
        conv_stride: parse_header(&pairs, "head.conv_stride")?,
        hidden: parse_header(&pairs, "head.hidden")?,
        dropout: parse_header(&pairs, "head.dropout")?,
    };
    let in_shape = (
        parse_header(&pairs, "head.in_c")?,
        parse_header(&pairs, "head.in_h")?,
        parse_header(&pairs, "head.in_w")?,
    );
    let mut head = ClassifierHead::init(head_cfg, in_shape, 0)?;
    let shapes = head.param_shapes();
    for (slot, name) in PARAM_NAMES.iter().enumerate() {
        let mut len_bytes = [0u8; 2];
        r.read_exact(&mut len_bytes)
            .map_err(|_| Error::Checkpoint(format!("missing record for `{name}`")))?;
        let name_len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
        if name_bytes != name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(&name_bytes)
            )));
        }
        let t = read_tensor_from(&mut r)?;
        if t.shape() != shapes[slot] {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                shapes[slot]
            )));
        }
        let params = head.params_mut();
        for (d, &s) in params[slot].iter_mut().zip(t.data()) {
            *d = f64::from(s);
        }
    }
    Ok((head, pairs))
}
