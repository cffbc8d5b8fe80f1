//! ROC-curve construction, auROC, and ablation tables.
//!
//! auROC is the Mann-Whitney statistic `P(score_pos > score_neg) + P(tie)/2`.
//! The threshold sweep accumulates the trapezoid area in count space
//! (`sum of d_fp * (tp_before + tp_after)`, halved once at the end), so the
//! result is bit-identical to the all-pairs oracle.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{self, FeatureSource, FusionStrategy, TrainConfig};
use crate::volume::{DatasetManifest, Split};

/// One ROC point; the threshold is the lowest score still classified
/// positive (`+inf` for the mandatory `(0, 0)` start point).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

/// Indices sorted by score descending; ties keep index order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Area under the ROC curve via a descending threshold sweep; tied scores
/// share one threshold step and earn half credit.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let order = descending_order(scores);
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut twice_area = 0u64; // sum of d_fp * (tp_before + tp_after)
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut d_tp, mut d_fp) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                d_tp += 1;
            } else {
                d_fp += 1;
            }
            j += 1;
        }
        twice_area += d_fp * (tp + (tp + d_tp));
        tp += d_tp;
        fp += d_fp;
        i = j;
    }
    debug_assert_eq!((tp, fp), (pos as u64, neg as u64));
    Ok(twice_area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// ROC curve: the `(0, 0)` start plus one point per distinct threshold,
/// ending at `(1, 1)`. The trapezoid area equals [`auroc`] within 1e-9.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_scores(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let order = descending_order(scores);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        i = j;
    }
    Ok(points)
}

/// Trapezoid area under a ROC polyline.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Scores, labels, curve, area, and the configuration that produced them.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub roc: Vec<RocPoint>,
    pub auroc: f64,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(
        scores: Vec<f64>,
        labels: Vec<bool>,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        let roc = roc_curve(&scores, &labels)?;
        let auroc = auroc(&scores, &labels)?;
        Ok(Self {
            scores,
            labels,
            roc,
            auroc,
            config,
        })
    }

    /// CSV rows `threshold,fpr,tpr`.
    pub fn write_roc_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// One grid cell: fusion strategy plus extractor preset.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub strategy: FusionStrategy,
    pub preset: String,
}

/// One output row, mirroring the familiar comparison-table columns.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub approach: String,
    pub architecture: String,
    pub fusion_method: String,
    pub pooling_method: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Mean test auROC over the seed set.
    pub auroc: f64,
}

/// Train and evaluate every cell with the shared seed set; each row reports
/// the mean test-split auROC over the seeds.
pub fn ablate(
    base: &TrainConfig,
    manifest: &DatasetManifest,
    cells: &[AblationCell],
    seeds: &[u64],
    extractor_seed: u64,
) -> Result<Vec<AblationRow>> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("empty ablation grid or seed set".into()));
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let extractor = crate::features::ToyExtractor::preset(&cell.preset, extractor_seed)?;
        let source = FeatureSource::Extractor(&extractor);
        let mut sum = 0.0;
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                strategy: cell.strategy,
                ..base.clone()
            };
            let outcome = train::train(&cfg, manifest, &source)?;
            let (scores, labels, _) = train::score_manifest(
                &outcome.head,
                &source,
                &cell.strategy,
                manifest,
                Some(Split::Test),
            )?;
            sum += auroc(&scores, &labels)?;
        }
        rows.push(AblationRow {
            approach: cell.strategy.label(),
            architecture: cell.preset.clone(),
            fusion_method: cell.strategy.kind.to_string(),
            pooling_method: cell.strategy.pooling.to_string(),
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            dropout: base.dropout,
            auroc: sum / seeds.len() as f64,
        });
    }
    Ok(rows)
}

/// CSV with the comparison-table column names.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut out = String::from(
        "approach,architecture,fusion_method,pooling_method,batch_size,learning_rate,dropout,auroc\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6}\n",
            r.approach,
            r.architecture,
            r.fusion_method,
            r.pooling_method,
            r.batch_size,
            r.learning_rate,
            r.dropout,
            r.auroc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// All-pairs Mann-Whitney reference: concordant pairs plus half credit for
/// ties. Quadratic; used by tests as the independent oracle.
pub fn pairwise_auroc_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut num = 0.0f64;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    Ok(num / (pos as f64 * neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_case() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn perfect_separation_and_pure_ties() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_labels_are_rejected() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateLabels)
        ));
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[false, false]),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn single_pair_curve() {
        let points = roc_curve(&[0.9, 0.1], &[true, false]).unwrap();
        let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    fn random_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..120);
        // quantized scores inject plenty of ties
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..20)) / 20.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        labels[0] = true;
        labels[1] = false;
        (scores, labels)
    }

    #[test]
    fn sweep_matches_pairwise_oracle_exactly() {
        for seed in 0..50 {
            let (scores, labels) = random_instance(seed);
            let fast = auroc(&scores, &labels).unwrap();
            let slow = pairwise_auroc_oracle(&scores, &labels).unwrap();
            assert_eq!(fast.to_bits(), slow.to_bits(), "seed {seed}");
        }
    }

    #[test]
    fn curve_area_matches_auroc_and_is_monotone() {
        for seed in 100..120 {
            let (scores, labels) = random_instance(seed);
            let points = roc_curve(&scores, &labels).unwrap();
            assert_eq!(points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
            assert_eq!(points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
            for w in points.windows(2) {
                assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let area = roc_area(&points);
            let reference = auroc(&scores, &labels).unwrap();
            assert!((area - reference).abs() < 1e-9);
        }
    }

    #[test]
    fn label_complement_reflects_area() {
        for seed in 200..215 {
            let (scores, labels) = random_instance(seed);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&scores, &flipped).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_transform_invariance() {
        for seed in 300..310 {
            let (scores, labels) = random_instance(seed);
            let squashed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).ln()).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&squashed, &labels).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn report_rejects_mismatched_lengths() {
        assert!(EvalReport::new(vec![0.1], vec![true, false], vec![]).is_err());
    }
}
