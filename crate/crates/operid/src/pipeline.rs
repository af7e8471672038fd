//! End-to-end orchestration: per-trial split, PCA fit, metric training,
//! evaluation over all gallery cameras, aggregation, and results/model IO.
//!
//! Training for a trial only ever fetches features of selected
//! training-session records through the [`FeatureSource`]; test-session
//! features are touched exclusively during evaluation. Trials run in
//! parallel but merge in trial order, so outputs are identical at any
//! worker count.

use crate::data::{Dataset, RecordKey, Session};
use crate::error::{Error, Result};
use crate::eval::{self, AggregateStats, EvalOutcome, FeatureSource};
use crate::metrics::{self, MetricKind, MetricModel, PairSet};
use crate::protocol::{self, ProtocolConfig, TrialPartition};
use crate::reduce::{self, PcaModel};
use crate::seed;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub metric: MetricKind,
    pub lambda: f64,
    pub epsilon: f64,
    pub pca_dim: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    pub negative_ratio: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            metric: MetricKind::Euclidean,
            lambda: metrics::DEFAULT_LAMBDA,
            epsilon: metrics::DEFAULT_EPSILON,
            pca_dim: 100,
            n_trials: 10,
            master_seed: 0,
            negative_ratio: 5,
        }
    }
}

impl RunConfig {
    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            n_trials: self.n_trials,
            master_seed: self.master_seed,
            negative_ratio: self.negative_ratio,
            ..ProtocolConfig::default()
        }
    }
}

/// The operating points reported in the summary.
pub const REPORT_GRID: [(f64, usize); 6] = [
    (0.01, 1),
    (0.01, 10),
    (0.10, 1),
    (0.10, 10),
    (1.0, 1),
    (1.0, 10),
];

pub fn feature_map(dataset: &Dataset) -> Result<HashMap<RecordKey, DVector<f64>>> {
    let features = dataset.features.as_ref().ok_or(Error::EmptyDataset)?;
    let mut map = HashMap::with_capacity(dataset.records.len());
    for (i, r) in dataset.records.iter().enumerate() {
        map.insert(r.key(), DVector::from_vec(features.row_f64(i)));
    }
    Ok(map)
}

/// One trial's trained state.
pub struct TrainedTrial {
    pub partition: TrialPartition,
    pub pca: PcaModel,
    pub metric: MetricModel,
    pub trial_seed: u64,
    pub selection_digest: u64,
}

/// Splits, fits PCA, and trains the metric for one trial. Only selected
/// training-session features are read.
pub fn train_trial(
    dataset: &Dataset,
    source: &dyn FeatureSource,
    trial_index: usize,
    config: &RunConfig,
) -> Result<TrainedTrial> {
    let protocol_config = config.protocol();
    let partition = protocol::build_partition(dataset, trial_index, &protocol_config)?;

    let selected: Vec<RecordKey> = dataset
        .session_records(Session::Training)
        .filter(|r| {
            partition
                .train_selection
                .contains(&(r.person_id, r.camera_id))
        })
        .map(|r| r.key())
        .collect();
    if selected.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let mut train_features = HashMap::with_capacity(selected.len());
    let mut samples = Vec::with_capacity(selected.len());
    for key in &selected {
        let v = source.feature(key).ok_or(Error::MissingFeatures(*key))?;
        samples.push(v.iter().copied().collect::<Vec<f64>>());
        train_features.insert(*key, v);
    }

    let d_in = samples[0].len();
    let out_dim = config.pca_dim.min(samples.len() - 1).min(d_in);
    let pca = reduce::fit_pca(&samples, out_dim)?;
    let mut reduced: HashMap<RecordKey, DVector<f64>> = HashMap::with_capacity(selected.len());
    for key in &selected {
        let v = &train_features[key];
        reduced.insert(*key, pca.project(v.as_slice())?);
    }

    let trial_seed = seed::derive(config.master_seed, &[trial_index as u64]);
    let metric = match config.metric {
        MetricKind::Euclidean => metrics::train_euclidean(out_dim),
        MetricKind::Mahalanobis | MetricKind::Kissme => {
            let key_pairs = protocol::generate_training_pairs(
                dataset,
                &partition.train_selection,
                trial_seed,
                config.negative_ratio,
            )?;
            let resolve = |pairs: &[(RecordKey, RecordKey)]| {
                pairs
                    .iter()
                    .map(|(a, b)| (reduced[a].clone(), reduced[b].clone()))
                    .collect::<Vec<_>>()
            };
            let pair_set = PairSet {
                positives: resolve(&key_pairs.positives),
                negatives: resolve(&key_pairs.negatives),
            };
            if config.metric == MetricKind::Mahalanobis {
                metrics::train_mahal(&pair_set, config.epsilon)?
            } else {
                metrics::train_kissme(&pair_set, config.epsilon)?
            }
        }
        MetricKind::Rrda => {
            let labeled: Vec<(u32, DVector<f64>)> = selected
                .iter()
                .map(|k| (k.person_id, reduced[k].clone()))
                .collect();
            metrics::train_rrda(&labeled, config.lambda)?
        }
    };

    let selection_digest = seed::digest_sorted(
        &selected.iter().map(|k| k.as_u64()).collect::<Vec<u64>>(),
    );
    Ok(TrainedTrial {
        partition,
        pca,
        metric,
        trial_seed,
        selection_digest,
    })
}

struct ProjectedSource<'a> {
    pca: &'a PcaModel,
    source: &'a dyn FeatureSource,
}

impl FeatureSource for ProjectedSource<'_> {
    fn feature(&self, key: &RecordKey) -> Option<DVector<f64>> {
        let raw = self.source.feature(key)?;
        self.pca.project(raw.as_slice()).ok()
    }
}

/// Evaluates every gallery camera of a trained trial.
pub fn evaluate_trial(
    trained: &TrainedTrial,
    source: &dyn FeatureSource,
) -> Result<Vec<EvalOutcome>> {
    let projected = ProjectedSource {
        pca: &trained.pca,
        source,
    };
    let mut outcomes = Vec::with_capacity(trained.partition.galleries.len());
    for (&camera, gp) in &trained.partition.galleries {
        outcomes.push(eval::evaluate_partition(
            &trained.metric,
            gp,
            trained.partition.trial_index,
            camera,
            &projected,
        )?);
    }
    Ok(outcomes)
}

pub struct RunOutput {
    pub trials: Vec<TrainedTrial>,
    pub outcomes: Vec<EvalOutcome>,
    pub summary: Vec<AggregateStats>,
}

impl RunOutput {
    pub fn partitions(&self) -> Vec<&TrialPartition> {
        self.trials.iter().map(|t| &t.partition).collect()
    }
}

/// Runs all trials. Trials execute in parallel on the current rayon pool;
/// results merge in trial order.
pub fn run(dataset: &Dataset, config: &RunConfig) -> Result<RunOutput> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = feature_map(dataset)?;
    let results: Vec<Result<(TrainedTrial, Vec<EvalOutcome>)>> = (0..config.n_trials)
        .into_par_iter()
        .map(|t| {
            let trained = train_trial(dataset, &features, t, config)?;
            let outcomes = evaluate_trial(&trained, &features)?;
            Ok((trained, outcomes))
        })
        .collect();
    let mut trials = Vec::with_capacity(config.n_trials);
    let mut outcomes = Vec::new();
    for result in results {
        let (trained, trial_outcomes) = result?;
        trials.push(trained);
        outcomes.extend(trial_outcomes);
    }
    let summary = eval::aggregate(&outcomes, &REPORT_GRID)?;
    Ok(RunOutput {
        trials,
        outcomes,
        summary,
    })
}

// ---------------------------------------------------------------------
// results directory
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    metric: &'a str,
    master_seed: u64,
    n_trials: usize,
    pca_dim: usize,
    entries: &'a [AggregateStats],
}

fn format_far(far: f64) -> String {
    format!("{:.2}", far)
}

/// Writes summary.json, curve CSVs, outcomes.json, and partitions.json.
pub fn write_results(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = SummaryFile {
        metric: config.metric.as_str(),
        master_seed: config.master_seed,
        n_trials: config.n_trials,
        pca_dim: config.pca_dim,
        entries: &output.summary,
    };
    let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary).map_err(io_err)?;
    f.write_all(b"\n")?;
    f.flush()?;

    // ROC: aggregated DIR over a fixed FAR grid, one file per rank
    for &rank in &[1usize, 10] {
        let mut f = BufWriter::new(File::create(dir.join(format!("roc_rank{rank}.csv")))?);
        writeln!(f, "far,dir")?;
        for i in 1..=100 {
            let far_level = i as f64 / 100.0;
            let stats = eval::aggregate(&output.outcomes, &[(far_level, rank)])?;
            writeln!(f, "{},{}", format_far(far_level), stats[0].mean)?;
        }
        f.flush()?;
    }
    // CMC: aggregated DIR over ranks, one file per FAR level
    for &far_level in &[0.01f64, 0.10, 1.0] {
        let name = format!("cmc_far{}.csv", format_far(far_level));
        let mut f = BufWriter::new(File::create(dir.join(name))?);
        writeln!(f, "rank,dir")?;
        for rank in 1..=20usize {
            let stats = eval::aggregate(&output.outcomes, &[(far_level, rank)])?;
            writeln!(f, "{},{}", rank, stats[0].mean)?;
        }
        f.flush()?;
    }

    let mut f = BufWriter::new(File::create(dir.join("outcomes.json"))?);
    serde_json::to_writer(&mut f, &output.outcomes).map_err(io_err)?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(dir.join("partitions.json"))?);
    serde_json::to_writer_pretty(&mut f, &output.partitions()).map_err(io_err)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

pub fn read_outcomes(dir: &Path) -> Result<Vec<EvalOutcome>> {
    let path = dir.join("outcomes.json");
    let file = File::open(&path).map_err(|_| Error::MissingResults(dir.display().to_string()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|_| Error::MissingResults(dir.display().to_string()))
}

pub fn read_partitions(dir: &Path) -> Result<Vec<TrialPartition>> {
    let path = dir.join("partitions.json");
    let file = File::open(&path).map_err(|_| Error::MissingResults(dir.display().to_string()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|_| Error::MissingResults(dir.display().to_string()))
}

/// Renders the operating-point table: one row per (FAR, rank) with
/// mean / std / mu-minus-sigma in percent.
pub fn render_report(stats: &[AggregateStats]) -> String {
    let mut out = String::new();
    out.push_str("far,rank,mean_pct,std_pct,mu_minus_sigma_pct\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2}\n",
            format_far(s.far_level),
            s.rank,
            100.0 * s.mean,
            100.0 * s.std,
            100.0 * s.mu_minus_sigma
        ));
    }
    out
}

// ---------------------------------------------------------------------
// model file: versioned binary container with PCA + metric + provenance
// ---------------------------------------------------------------------

const MODEL_MAGIC: [u8; 4] = *b"OPRM";
const MODEL_VERSION: u32 = 1;

fn write_f64s(out: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_matrix(out: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    out.write_all(&(m.nrows() as u32).to_le_bytes())?;
    out.write_all(&(m.ncols() as u32).to_le_bytes())?;
    write_f64s(out, m.iter().copied())
}

fn read_u32(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf).map_err(|_| Error::TruncatedFile)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf).map_err(|_| Error::TruncatedFile)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(reader: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    reader.read_exact(&mut buf).map_err(|_| Error::TruncatedFile)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_matrix(reader: &mut impl Read) -> Result<DMatrix<f64>> {
    let rows = read_u32(reader)? as usize;
    let cols = read_u32(reader)? as usize;
    let data = read_f64s(reader, rows * cols)?;
    Ok(DMatrix::from_iterator(rows, cols, data))
}

pub fn save_model(path: &Path, trained: &TrainedTrial) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MODEL_MAGIC)?;
    out.write_all(&MODEL_VERSION.to_le_bytes())?;
    out.write_all(&trained.trial_seed.to_le_bytes())?;
    out.write_all(&trained.selection_digest.to_le_bytes())?;
    // PCA
    out.write_all(&(trained.pca.mean.len() as u32).to_le_bytes())?;
    write_f64s(&mut out, trained.pca.mean.iter().copied())?;
    write_matrix(&mut out, &trained.pca.basis)?;
    out.write_all(&(trained.pca.eigenvalues.len() as u32).to_le_bytes())?;
    write_f64s(&mut out, trained.pca.eigenvalues.iter().copied())?;
    // metric
    match &trained.metric {
        MetricModel::Euclidean { dim } => {
            out.write_all(&[0u8])?;
            out.write_all(&(*dim as u32).to_le_bytes())?;
        }
        MetricModel::Mahalanobis { m } => {
            out.write_all(&[1u8])?;
            write_matrix(&mut out, m)?;
        }
        MetricModel::Kissme { m } => {
            out.write_all(&[2u8])?;
            write_matrix(&mut out, m)?;
        }
        MetricModel::Rrda { w, center, lambda } => {
            out.write_all(&[3u8])?;
            out.write_all(&lambda.to_le_bytes())?;
            write_matrix(&mut out, w)?;
            out.write_all(&(center.len() as u32).to_le_bytes())?;
            write_f64s(&mut out, center.iter().copied())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(PcaModel, MetricModel, u64, u64)> {
    let file = File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| Error::TruncatedFile)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut reader)?;
    if version != MODEL_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let trial_seed = read_u64(&mut reader)?;
    let digest = read_u64(&mut reader)?;
    let mean_len = read_u32(&mut reader)? as usize;
    let mean = DVector::from_vec(read_f64s(&mut reader, mean_len)?);
    let basis = read_matrix(&mut reader)?;
    let ev_len = read_u32(&mut reader)? as usize;
    let eigenvalues = read_f64s(&mut reader, ev_len)?;
    let pca = PcaModel {
        mean,
        basis,
        eigenvalues,
    };
    let mut kind = [0u8; 1];
    reader.read_exact(&mut kind).map_err(|_| Error::TruncatedFile)?;
    let metric = match kind[0] {
        0 => MetricModel::Euclidean {
            dim: read_u32(&mut reader)? as usize,
        },
        1 => MetricModel::Mahalanobis {
            m: read_matrix(&mut reader)?,
        },
        2 => MetricModel::Kissme {
            m: read_matrix(&mut reader)?,
        },
        3 => {
            let lambda = f64::from_bits(read_u64(&mut reader)?);
            let w = read_matrix(&mut reader)?;
            let center_len = read_u32(&mut reader)? as usize;
            let center = DVector::from_vec(read_f64s(&mut reader, center_len)?);
            MetricModel::Rrda { w, center, lambda }
        }
        _ => return Err(Error::TruncatedFile),
    };
    Ok((pca, metric, trial_seed, digest))
}

// ---------------------------------------------------------------------
// hyperparameter selection on the training session only
// ---------------------------------------------------------------------

/// Selects the RRDA ridge parameter by decade grid search: for each trial,
/// train on the selected training half and validate on the remaining
/// training-session records, scoring mean DIR at FAR=10%, rank 1 across
/// validation gallery cameras. Never reads the test session. Ties prefer
/// the smaller lambda.
pub fn tune_lambda(dataset: &Dataset, config: &RunConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    let features = feature_map(dataset)?;
    let grid: Vec<f64> = (-3..=3).map(|e| 10f64.powi(e)).collect();
    let mut scored = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let mut trial_scores = Vec::new();
        for trial in 0..config.n_trials {
            let candidate = RunConfig {
                metric: MetricKind::Rrda,
                lambda,
                ..config.clone()
            };
            let trained = train_trial(dataset, &features, trial, &candidate)?;
            // validation pool: training-session records outside the selection
            let validation: Vec<RecordKey> = dataset
                .session_records(Session::Training)
                .filter(|r| {
                    !trained
                        .partition
                        .train_selection
                        .contains(&(r.person_id, r.camera_id))
                })
                .map(|r| r.key())
                .collect();
            if validation.is_empty() {
                continue;
            }
            let projected = ProjectedSource {
                pca: &trained.pca,
                source: &features,
            };
            let cameras: std::collections::BTreeSet<u32> =
                validation.iter().map(|k| k.camera_id).collect();
            let mut camera_scores = Vec::new();
            for &camera in &cameras {
                let gallery: Vec<RecordKey> = validation
                    .iter()
                    .copied()
                    .filter(|k| k.camera_id == camera)
                    .collect();
                let gallery_persons: std::collections::BTreeSet<u32> =
                    gallery.iter().map(|k| k.person_id).collect();
                let mut genuine = Vec::new();
                let mut impostor = Vec::new();
                for k in validation.iter().filter(|k| k.camera_id != camera) {
                    if gallery_persons.contains(&k.person_id) {
                        genuine.push(*k);
                    } else {
                        impostor.push(*k);
                    }
                }
                if gallery.is_empty() || genuine.is_empty() || impostor.is_empty() {
                    continue;
                }
                let gp = crate::protocol::GalleryProbes {
                    gallery,
                    genuine,
                    impostor,
                };
                let outcome =
                    eval::evaluate_partition(&trained.metric, &gp, trial, camera, &projected)?;
                let tau = eval::threshold_at_far(&outcome, 0.10)?;
                camera_scores.push(eval::dir(&outcome, tau, 1)?);
            }
            if !camera_scores.is_empty() {
                trial_scores
                    .push(camera_scores.iter().sum::<f64>() / camera_scores.len() as f64);
            }
        }
        let mean = if trial_scores.is_empty() {
            0.0
        } else {
            trial_scores.iter().sum::<f64>() / trial_scores.len() as f64
        };
        scored.push((lambda, mean));
    }
    let best = scored
        .iter()
        .fold(scored[0], |acc, &(l, s)| if s > acc.1 { (l, s) } else { acc });
    Ok((best.0, scored))
}
