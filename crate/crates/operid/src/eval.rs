//! Open-set evaluation: per-probe rank and best-genuine score, DIR and
//! FAR, ROC at fixed rank, CMC at fixed FAR, and camera/trial aggregation
//! with the mean, standard deviation, and mu-minus-sigma fused measure.
//!
//! Rank ties are resolved in the probe's favor: only gallery images of a
//! different identity scoring strictly above the best genuine score
//! increase the rank, and same-identity images never do.

use crate::data::RecordKey;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricModel};
use crate::protocol::GalleryProbes;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Feature lookup used during evaluation; implemented by in-memory maps
/// and by the access-logging test harness.
pub trait FeatureSource {
    fn feature(&self, key: &RecordKey) -> Option<DVector<f64>>;
}

impl FeatureSource for std::collections::HashMap<RecordKey, DVector<f64>> {
    fn feature(&self, key: &RecordKey) -> Option<DVector<f64>> {
        self.get(key).cloned()
    }
}

/// Evidence for one genuine probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenuineOutcome {
    pub probe: RecordKey,
    /// s(g*, p): the best score over same-identity gallery images.
    pub best_genuine_score: f64,
    /// 1 + number of different-identity gallery images scoring strictly higher.
    pub rank: usize,
    pub max_gallery_score: f64,
}

/// Everything DIR/FAR needs for one (trial, gallery camera).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub trial_index: usize,
    pub gallery_camera: u32,
    pub genuine: Vec<GenuineOutcome>,
    pub impostor_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub far_level: f64,
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
    pub mu_minus_sigma: f64,
}

/// Scores every probe of one gallery camera against its gallery.
pub fn evaluate_partition(
    model: &MetricModel,
    partition: &GalleryProbes,
    trial_index: usize,
    gallery_camera: u32,
    features: &dyn FeatureSource,
) -> Result<EvalOutcome> {
    if partition.gallery.is_empty() {
        return Err(Error::EmptyGallery(gallery_camera));
    }
    let mut gallery_vecs = Vec::with_capacity(partition.gallery.len());
    for key in &partition.gallery {
        let v = features
            .feature(key)
            .ok_or(Error::MissingFeatures(*key))?;
        gallery_vecs.push((key.person_id, v));
    }
    let mut genuine = Vec::with_capacity(partition.genuine.len());
    for key in &partition.genuine {
        let p = features
            .feature(key)
            .ok_or(Error::MissingFeatures(*key))?;
        let mut best_genuine = f64::NEG_INFINITY;
        let mut max_score = f64::NEG_INFINITY;
        let mut scores = Vec::with_capacity(gallery_vecs.len());
        for (person, g) in &gallery_vecs {
            let s = metrics::score(model, g, &p)?;
            scores.push((*person, s));
            if *person == key.person_id && s > best_genuine {
                best_genuine = s;
            }
            if s > max_score {
                max_score = s;
            }
        }
        let rank = 1 + scores
            .iter()
            .filter(|(person, s)| *person != key.person_id && *s > best_genuine)
            .count();
        genuine.push(GenuineOutcome {
            probe: *key,
            best_genuine_score: best_genuine,
            rank,
            max_gallery_score: max_score,
        });
    }
    let mut impostor_max = Vec::with_capacity(partition.impostor.len());
    for key in &partition.impostor {
        let p = features
            .feature(key)
            .ok_or(Error::MissingFeatures(*key))?;
        let mut max_score = f64::NEG_INFINITY;
        for (_, g) in &gallery_vecs {
            let s = metrics::score(model, g, &p)?;
            if s > max_score {
                max_score = s;
            }
        }
        impostor_max.push(max_score);
    }
    Ok(EvalOutcome {
        trial_index,
        gallery_camera,
        genuine,
        impostor_max,
    })
}

/// DIR(tau, k): fraction of genuine probes ranked within k whose best
/// genuine score clears the threshold.
pub fn dir(outcome: &EvalOutcome, tau: f64, k: usize) -> Result<f64> {
    if outcome.genuine.is_empty() {
        return Err(Error::EmptyGenuineProbeSet);
    }
    let accepted = outcome
        .genuine
        .iter()
        .filter(|g| g.rank <= k && g.best_genuine_score >= tau)
        .count();
    Ok(accepted as f64 / outcome.genuine.len() as f64)
}

/// FAR(tau): fraction of impostor probes whose max gallery score clears
/// the threshold.
pub fn far(outcome: &EvalOutcome, tau: f64) -> Result<f64> {
    if outcome.impostor_max.is_empty() {
        return Err(Error::EmptyImpostorProbeSet);
    }
    let accepted = outcome.impostor_max.iter().filter(|&&s| s >= tau).count();
    Ok(accepted as f64 / outcome.impostor_max.len() as f64)
}

/// ROC at fixed rank: tau sweeps the distinct impostor max scores plus
/// +/- infinity sentinels; points come out in increasing FAR order.
pub fn roc_curve(outcome: &EvalOutcome, k: usize) -> Result<Vec<(f64, f64)>> {
    let mut taus: Vec<f64> = outcome.impostor_max.clone();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    taus.dedup();
    let mut points = Vec::with_capacity(taus.len() + 2);
    points.push((far(outcome, f64::INFINITY)?, dir(outcome, f64::INFINITY, k)?));
    for &tau in taus.iter().rev() {
        points.push((far(outcome, tau)?, dir(outcome, tau, k)?));
    }
    points.push((
        far(outcome, f64::NEG_INFINITY)?,
        dir(outcome, f64::NEG_INFINITY, k)?,
    ));
    Ok(points)
}

/// The operating threshold for a FAR level: the smallest impostor max
/// score whose FAR does not exceed the level. At level 1 the threshold is
/// -infinity (every probe accepted, the closed-set case); if no score
/// qualifies the threshold is +infinity.
pub fn threshold_at_far(outcome: &EvalOutcome, far_level: f64) -> Result<f64> {
    if outcome.impostor_max.is_empty() {
        return Err(Error::EmptyImpostorProbeSet);
    }
    if far_level >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut sorted = outcome.impostor_max.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    for (i, &s) in sorted.iter().enumerate() {
        // FAR(s) counts scores >= s; step past duplicates so equal values
        // share the same FAR
        if i > 0 && s == sorted[i - 1] {
            continue;
        }
        let below = sorted.iter().take_while(|&&x| x < s).count();
        let f = (n - below) as f64 / n as f64;
        if f <= far_level {
            return Ok(s);
        }
    }
    Ok(f64::INFINITY)
}

/// CMC at a FAR level: DIR at the operating threshold for ranks 1..=max_rank.
pub fn cmc_at_far(outcome: &EvalOutcome, far_level: f64, max_rank: usize) -> Result<Vec<f64>> {
    let tau = threshold_at_far(outcome, far_level)?;
    (1..=max_rank).map(|k| dir(outcome, tau, k)).collect()
}

/// Per (far level, rank): cameras are averaged within each trial, then the
/// mean and sample standard deviation (n-1 divisor; zero for a single
/// trial) are taken across trials. Thresholds come from each camera's own
/// impostor set. Cameras with an empty probe set are skipped.
pub fn aggregate(
    outcomes: &[EvalOutcome],
    grid: &[(f64, usize)],
) -> Result<Vec<AggregateStats>> {
    if outcomes.is_empty() {
        return Err(Error::NoOutcomes);
    }
    let mut by_trial: BTreeMap<usize, Vec<&EvalOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_trial.entry(o.trial_index).or_default().push(o);
    }
    let mut stats = Vec::with_capacity(grid.len());
    for &(far_level, rank) in grid {
        let mut trial_values = Vec::with_capacity(by_trial.len());
        for outcomes in by_trial.values() {
            let mut camera_values = Vec::new();
            for o in outcomes.iter() {
                if o.genuine.is_empty() || o.impostor_max.is_empty() {
                    continue;
                }
                let tau = threshold_at_far(o, far_level)?;
                camera_values.push(dir(o, tau, rank)?);
            }
            if camera_values.is_empty() {
                continue;
            }
            trial_values
                .push(camera_values.iter().sum::<f64>() / camera_values.len() as f64);
        }
        if trial_values.is_empty() {
            return Err(Error::NoOutcomes);
        }
        let n = trial_values.len() as f64;
        let mean = trial_values.iter().sum::<f64>() / n;
        let std = if trial_values.len() < 2 {
            0.0
        } else {
            (trial_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        stats.push(AggregateStats {
            far_level,
            rank,
            mean,
            std,
            mu_minus_sigma: mean - std,
        });
    }
    Ok(stats)
}
