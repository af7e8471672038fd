//! Seeded synthetic data and brute-force evaluation oracles.
//!
//! The generators stand in for the released dataset at desk scale:
//! identities are latent vectors, cameras apply a linear distortion plus a
//! fixed offset, and the rendered variant draws each identity as a
//! two-band colored figure. The oracle recomputes g*, rank, DIR, and FAR
//! by exhaustive enumeration, with no shared code with the eval module.

use crate::data::{Dataset, FeatureTable, ImageRecord, RecordKey, Session};
use crate::error::{Error, Result};
use crate::eval::{EvalOutcome, GenuineOutcome};
use crate::features::PixelImage;
use crate::protocol::GalleryProbes;
use crate::seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub n_cameras: usize,
    pub images_per_identity_per_camera: usize,
    pub latent_dim: usize,
    /// Strength of the per-camera random linear mixing added to identity.
    pub distortion_strength: f64,
    /// Norm of the per-camera additive offset.
    pub offset_magnitude: f64,
    pub noise_sigma: f64,
    /// Chance an identity appears in a given camera (at least two cameras
    /// are always forced so cross-camera pairs exist).
    pub presence_probability: f64,
    pub seed: u64,
}

/// Noise multiplier applied to the upper half of the latent dimensions
/// (see [`generate_features`]). Together with the default constants below
/// this defines the distortion-on benchmark.
pub const NUISANCE_FACTOR: f64 = 12.0;

impl Default for SynthConfig {
    fn default() -> Self {
        // distortion-on benchmark constants: the nuisance dimensions carry
        // noise large enough to dominate plain Euclidean distances, so the
        // identity baseline is demonstrably suboptimal while metric
        // learners can recover by downweighting those dimensions
        SynthConfig {
            n_identities: 80,
            n_cameras: 4,
            images_per_identity_per_camera: 3,
            latent_dim: 24,
            distortion_strength: 0.25,
            offset_magnitude: 2.0,
            noise_sigma: 0.2,
            presence_probability: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_identities < 4 {
            return Err(Error::DegenerateConfig(
                "need at least 4 identities (2 per session)".into(),
            ));
        }
        if self.n_cameras < 1
            || self.images_per_identity_per_camera < 1
            || self.latent_dim < 1
        {
            return Err(Error::DegenerateConfig("all counts must be >= 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::DegenerateConfig("noise_sigma must be >= 0".into()));
        }
        if !(self.presence_probability > 0.0 && self.presence_probability <= 1.0) {
            return Err(Error::DegenerateConfig(
                "presence_probability must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn normal_vector(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

// derivation domains for per-entity seeds
const DOM_LATENT: u64 = 1;
const DOM_CAMERA: u64 = 2;
const DOM_PRESENCE: u64 = 3;
const DOM_IMAGE: u64 = 4;
const DOM_APPEARANCE: u64 = 5;

struct CameraModel {
    map: DMatrix<f64>,
    offset: DVector<f64>,
}

fn camera_model(config: &SynthConfig, camera: u32) -> CameraModel {
    let d = config.latent_dim;
    let mut rng = seed::rng(seed::derive(config.seed, &[DOM_CAMERA, camera as u64]));
    let mut map = DMatrix::identity(d, d);
    if config.distortion_strength > 0.0 {
        let scale = config.distortion_strength / (d as f64).sqrt();
        for i in 0..d {
            for j in 0..d {
                let g: f64 = StandardNormal.sample(&mut rng);
                map[(i, j)] += scale * g;
            }
        }
    }
    let mut offset = DVector::zeros(d);
    if config.offset_magnitude > 0.0 {
        let g = normal_vector(&mut rng, d);
        offset = g.clone() * (config.offset_magnitude / g.norm());
    }
    CameraModel { map, offset }
}

/// Which cameras an identity appears in; at least the first two cameras
/// of the shuffled candidate order are always kept.
fn presence(config: &SynthConfig, person: u32) -> Vec<u32> {
    let mut rng = seed::rng(seed::derive(config.seed, &[DOM_PRESENCE, person as u64]));
    let mut cameras: Vec<u32> = (1..=config.n_cameras as u32)
        .filter(|_| rng.gen::<f64>() < config.presence_probability)
        .collect();
    if cameras.len() < 2.min(config.n_cameras) {
        cameras = (1..=config.n_cameras.min(2) as u32).collect();
    }
    cameras
}

/// First half of the identities form the training session, the rest the
/// test session; the two identity sets are disjoint.
fn session_of(config: &SynthConfig, person: u32) -> Session {
    if (person as usize) <= config.n_identities / 2 {
        Session::Training
    } else {
        Session::Test
    }
}

/// Generates a dataset with latent-space feature vectors: an image of
/// identity i in camera c is A_c * mu_i + b_c + noise, where the noise in
/// the upper half of the dimensions is scaled by [`NUISANCE_FACTOR`]
/// (anisotropic nuisance variation that a learned metric can suppress).
pub fn generate_features(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let cameras: Vec<CameraModel> = (1..=config.n_cameras as u32)
        .map(|c| camera_model(config, c))
        .collect();
    let mut records = Vec::new();
    let mut features = FeatureTable::new(config.latent_dim);
    for person in 1..=config.n_identities as u32 {
        let mut rng = seed::rng(seed::derive(config.seed, &[DOM_LATENT, person as u64]));
        let latent = normal_vector(&mut rng, config.latent_dim);
        let session = session_of(config, person);
        for camera in presence(config, person) {
            let model = &cameras[(camera - 1) as usize];
            let base = &model.map * &latent + &model.offset;
            for frame in 0..config.images_per_identity_per_camera as u32 {
                let mut img_rng = seed::rng(seed::derive(
                    config.seed,
                    &[DOM_IMAGE, person as u64, camera as u64, frame as u64],
                ));
                let mut noise = normal_vector(&mut img_rng, config.latent_dim)
                    * config.noise_sigma;
                for j in config.latent_dim / 2..config.latent_dim {
                    noise[j] *= NUISANCE_FACTOR;
                }
                let v = &base + noise;
                let row: Vec<f32> = v.iter().map(|&x| x as f32).collect();
                features.push(&row)?;
                records.push(ImageRecord {
                    person_id: person,
                    camera_id: camera,
                    session,
                    frame,
                    path: PathBuf::new(),
                });
            }
        }
    }
    Dataset::with_features(records, features)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Renders one 48x128 figure: noisy gray background, torso band in the
/// identity's first hue, legs band in the second, with per-render jitter.
fn render(
    torso_hue: f64,
    legs_hue: f64,
    rng: &mut impl Rng,
    camera_brightness: f64,
) -> PixelImage {
    let (w, h) = (48usize, 128usize);
    let mut pixels = Vec::with_capacity(w * h);
    let hue_jitter: f64 = rng.gen_range(-5.0..5.0);
    let torso = hsv_to_rgb(torso_hue + hue_jitter, 0.85, 0.75 * camera_brightness);
    let legs = hsv_to_rgb(legs_hue + hue_jitter, 0.85, 0.65 * camera_brightness);
    for y in 0..h {
        for x in 0..w {
            let body = (8..40).contains(&x);
            let base = if body && (20..64).contains(&y) {
                torso
            } else if body && (64..118).contains(&y) {
                legs
            } else {
                let g = 0.45 * camera_brightness;
                [g, g, g]
            };
            let mut px = [0.0; 3];
            for c in 0..3 {
                let noise: f64 = rng.gen_range(-0.03..0.03);
                px[c] = (base[c] + noise).clamp(0.0, 1.0);
            }
            pixels.push(px);
        }
    }
    PixelImage::new(w, h, pixels).expect("render stays in range")
}

/// Generates records plus rendered pixel images, with the same session
/// and presence structure as [`generate_features`].
pub fn generate_images(config: &SynthConfig) -> Result<Vec<(ImageRecord, PixelImage)>> {
    config.validate()?;
    let mut out = Vec::new();
    for person in 1..=config.n_identities as u32 {
        let mut rng = seed::rng(seed::derive(config.seed, &[DOM_APPEARANCE, person as u64]));
        let torso_hue: f64 = rng.gen_range(0.0..360.0);
        let legs_hue: f64 = rng.gen_range(0.0..360.0);
        let session = session_of(config, person);
        for camera in presence(config, person) {
            // mild per-camera photometric distortion
            let mut cam_rng = seed::rng(seed::derive(config.seed, &[DOM_CAMERA, camera as u64]));
            let brightness: f64 = cam_rng.gen_range(0.85..1.15);
            for frame in 0..config.images_per_identity_per_camera as u32 {
                let mut img_rng = seed::rng(seed::derive(
                    config.seed,
                    &[DOM_IMAGE, person as u64, camera as u64, frame as u64],
                ));
                let image = render(torso_hue, legs_hue, &mut img_rng, brightness);
                out.push((
                    ImageRecord {
                        person_id: person,
                        camera_id: camera,
                        session,
                        frame,
                        path: PathBuf::new(),
                    },
                    image,
                ));
            }
        }
    }
    Ok(out)
}

/// Explicit gallery-by-probe score evidence for the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub gallery_ids: Vec<u32>,
    /// Genuine probes: record key plus its scores against every gallery image.
    pub genuine: Vec<(RecordKey, Vec<f64>)>,
    /// Impostor probes' scores against every gallery image.
    pub impostor: Vec<Vec<f64>>,
}

/// Recomputes g*, rank, and max scores by exhaustive enumeration.
pub fn oracle_evaluate(table: &ScoreTable, trial_index: usize, gallery_camera: u32) -> EvalOutcome {
    let mut genuine = Vec::with_capacity(table.genuine.len());
    for (key, scores) in &table.genuine {
        let mut best_genuine = f64::NEG_INFINITY;
        for (j, &s) in scores.iter().enumerate() {
            if table.gallery_ids[j] == key.person_id && s > best_genuine {
                best_genuine = s;
            }
        }
        let mut rank = 1;
        for (j, &s) in scores.iter().enumerate() {
            if table.gallery_ids[j] != key.person_id && s > best_genuine {
                rank += 1;
            }
        }
        let mut max_score = f64::NEG_INFINITY;
        for &s in scores {
            if s > max_score {
                max_score = s;
            }
        }
        genuine.push(GenuineOutcome {
            probe: *key,
            best_genuine_score: best_genuine,
            rank,
            max_gallery_score: max_score,
        });
    }
    let mut impostor_max = Vec::with_capacity(table.impostor.len());
    for scores in &table.impostor {
        let mut max_score = f64::NEG_INFINITY;
        for &s in scores {
            if s > max_score {
                max_score = s;
            }
        }
        impostor_max.push(max_score);
    }
    EvalOutcome {
        trial_index,
        gallery_camera,
        genuine,
        impostor_max,
    }
}

/// DIR by definition: count genuine probes with rank <= k and best
/// genuine score >= tau, divided by |P_G|.
pub fn oracle_dir(table: &ScoreTable, tau: f64, k: usize) -> f64 {
    let outcome = oracle_evaluate(table, 0, 0);
    let mut count = 0;
    for g in &outcome.genuine {
        if g.rank <= k && g.best_genuine_score >= tau {
            count += 1;
        }
    }
    count as f64 / outcome.genuine.len() as f64
}

/// FAR by definition: count impostor probes whose max score >= tau.
pub fn oracle_far(table: &ScoreTable, tau: f64) -> f64 {
    let mut count = 0;
    for scores in &table.impostor {
        let mut accepted = false;
        for &s in scores {
            if s >= tau {
                accepted = true;
            }
        }
        if accepted {
            count += 1;
        }
    }
    count as f64 / table.impostor.len() as f64
}

/// ROC sweep mirroring the production definition but built from the
/// definitional counters above.
pub fn oracle_roc(table: &ScoreTable, k: usize) -> Vec<(f64, f64)> {
    let outcome = oracle_evaluate(table, 0, 0);
    let mut taus = outcome.impostor_max.clone();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    taus.dedup();
    let mut points = vec![(
        oracle_far(table, f64::INFINITY),
        oracle_dir(table, f64::INFINITY, k),
    )];
    for &tau in taus.iter().rev() {
        points.push((oracle_far(table, tau), oracle_dir(table, tau, k)));
    }
    points.push((
        oracle_far(table, f64::NEG_INFINITY),
        oracle_dir(table, f64::NEG_INFINITY, k),
    ));
    points
}

/// CMC at a FAR level via the definitional threshold inversion.
pub fn oracle_cmc(table: &ScoreTable, far_level: f64, max_rank: usize) -> Vec<f64> {
    let tau = if far_level >= 1.0 {
        f64::NEG_INFINITY
    } else {
        let outcome = oracle_evaluate(table, 0, 0);
        let mut sorted = outcome.impostor_max.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut found = f64::INFINITY;
        for &s in &sorted {
            if oracle_far(table, s) <= far_level {
                found = s;
                break;
            }
        }
        found
    };
    (1..=max_rank).map(|k| oracle_dir(table, tau, k)).collect()
}

/// Closed-set CMC as a cumulative rank histogram, the independent route
/// for the FAR=100% equivalence check.
pub fn oracle_closed_set_cmc(table: &ScoreTable, max_rank: usize) -> Vec<f64> {
    let outcome = oracle_evaluate(table, 0, 0);
    let mut histogram = vec![0usize; max_rank + 1];
    for g in &outcome.genuine {
        if g.rank <= max_rank {
            histogram[g.rank] += 1;
        }
    }
    let mut cmc = Vec::with_capacity(max_rank);
    let mut cumulative = 0;
    for k in 1..=max_rank {
        cumulative += histogram[k];
        cmc.push(cumulative as f64 / outcome.genuine.len() as f64);
    }
    cmc
}

/// One random desk-scale instance: a gallery/probe partition over at most
/// 6 identities, 3 cameras, and 3 images per cell, with coarsely quantized
/// 1-D features so score ties actually occur. The score table is computed
/// by direct arithmetic, independent of the metrics module.
pub struct RandomInstance {
    pub gallery_camera: u32,
    pub partition: GalleryProbes,
    pub features: HashMap<RecordKey, DVector<f64>>,
    pub table: ScoreTable,
}

pub fn random_instance(instance_seed: u64) -> RandomInstance {
    for attempt in 0..u64::MAX {
        let mut rng = seed::rng(seed::derive(instance_seed, &[attempt]));
        let n_identities = rng.gen_range(2..=6usize);
        let n_cameras = rng.gen_range(2..=3u32);
        let mut records = Vec::new();
        for person in 1..=n_identities as u32 {
            for camera in 1..=n_cameras {
                let images = rng.gen_range(0..=3u32);
                for frame in 0..images {
                    records.push(RecordKey {
                        person_id: person,
                        camera_id: camera,
                        session: Session::Test,
                        frame,
                    });
                }
            }
        }
        let gallery_camera = 1u32;
        let gallery: Vec<RecordKey> = records
            .iter()
            .copied()
            .filter(|k| k.camera_id == gallery_camera)
            .collect();
        if gallery.is_empty() {
            continue;
        }
        let gallery_persons: std::collections::BTreeSet<u32> =
            gallery.iter().map(|k| k.person_id).collect();
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for k in records.iter().filter(|k| k.camera_id != gallery_camera) {
            if gallery_persons.contains(&k.person_id) {
                genuine.push(*k);
            } else {
                impostor.push(*k);
            }
        }
        if genuine.is_empty() || impostor.is_empty() {
            continue;
        }
        let mut features = HashMap::new();
        for k in &records {
            // small integer grid in 1-D, so exact ties are common
            let v = rng.gen_range(0..6) as f64;
            features.insert(*k, DVector::from_row_slice(&[v]));
        }
        let score_of = |a: &RecordKey, b: &RecordKey| {
            let d = features[a][0] - features[b][0];
            -(d * d)
        };
        let table = ScoreTable {
            gallery_ids: gallery.iter().map(|k| k.person_id).collect(),
            genuine: genuine
                .iter()
                .map(|p| (*p, gallery.iter().map(|g| score_of(g, p)).collect()))
                .collect(),
            impostor: impostor
                .iter()
                .map(|p| gallery.iter().map(|g| score_of(g, p)).collect())
                .collect(),
        };
        return RandomInstance {
            gallery_camera,
            partition: GalleryProbes {
                gallery,
                genuine,
                impostor,
            },
            features,
            table,
        };
    }
    unreachable!("random instance generation always terminates")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_undistorted_features_collapse_per_identity() {
        let config = SynthConfig {
            n_identities: 6,
            n_cameras: 3,
            images_per_identity_per_camera: 2,
            latent_dim: 8,
            distortion_strength: 0.0,
            offset_magnitude: 0.0,
            noise_sigma: 0.0,
            presence_probability: 1.0,
            seed: 3,
        };
        let ds = generate_features(&config).unwrap();
        let features = ds.features.as_ref().unwrap();
        let mut by_person: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, r) in ds.records.iter().enumerate() {
            by_person.entry(r.person_id).or_default().push(i);
        }
        for rows in by_person.values() {
            let first = features.row(rows[0]);
            for &i in rows {
                assert_eq!(features.row(i), first);
            }
        }
        // presence 1.0: every identity in every camera
        for person in 1..=6u32 {
            for camera in 1..=3u32 {
                assert!(ds
                    .records
                    .iter()
                    .any(|r| r.person_id == person && r.camera_id == camera));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig {
            n_identities: 8,
            seed: 42,
            ..SynthConfig::default()
        };
        assert_eq!(generate_features(&config).unwrap(), generate_features(&config).unwrap());
        let a = generate_images(&config).unwrap();
        let b = generate_images(&config).unwrap();
        assert_eq!(a.len(), b.len());
        for ((ra, ia), (rb, ib)) in a.iter().zip(&b) {
            assert_eq!(ra, rb);
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn sessions_have_disjoint_identities() {
        let ds = generate_features(&SynthConfig::default()).unwrap();
        let train: std::collections::BTreeSet<u32> = ds
            .session_records(Session::Training)
            .map(|r| r.person_id)
            .collect();
        let test: std::collections::BTreeSet<u32> = ds
            .session_records(Session::Test)
            .map(|r| r.person_id)
            .collect();
        assert!(train.is_disjoint(&test));
        assert!(!train.is_empty() && !test.is_empty());
    }

    #[test]
    fn rendered_images_are_target_size_and_identity_separable() {
        use crate::features::{extract_descriptor, FeatureConfig};
        let config = SynthConfig {
            n_identities: 4,
            n_cameras: 2,
            images_per_identity_per_camera: 2,
            presence_probability: 1.0,
            seed: 9,
            ..SynthConfig::default()
        };
        let images = generate_images(&config).unwrap();
        let fc = FeatureConfig::default();
        let mut descriptors: HashMap<RecordKey, Vec<f64>> = HashMap::new();
        for (r, img) in &images {
            assert_eq!((img.width, img.height), (48, 128));
            descriptors.insert(r.key(), extract_descriptor(img, &fc).unwrap());
        }
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let keys: Vec<RecordKey> = descriptors.keys().copied().collect();
        let mut same = Vec::new();
        let mut cross = Vec::new();
        for i in 0..keys.len() {
            for j in (i + 1)..keys.len() {
                let d = dist(&descriptors[&keys[i]], &descriptors[&keys[j]]);
                if keys[i].person_id == keys[j].person_id {
                    same.push(d);
                } else {
                    cross.push(d);
                    assert!(d > 0.0);
                }
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(median(&mut same) < median(&mut cross));
    }

    #[test]
    fn degenerate_configs_rejected() {
        let bad = SynthConfig {
            n_identities: 2,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_features(&bad),
            Err(Error::DegenerateConfig(_))
        ));
        let bad = SynthConfig {
            presence_probability: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_images(&bad), Err(Error::DegenerateConfig(_))));
    }

    #[test]
    fn oracle_hand_cases() {
        let key = |p: u32| RecordKey {
            person_id: p,
            camera_id: 2,
            session: Session::Test,
            frame: 0,
        };
        // gallery ids [1, 2, 1], probe of id 1 with scores [0.9, 0.8, 0.7]
        let table = ScoreTable {
            gallery_ids: vec![1, 2, 1],
            genuine: vec![(key(1), vec![0.9, 0.8, 0.7])],
            impostor: vec![vec![0.3, 0.6, 0.1]],
        };
        let out = oracle_evaluate(&table, 0, 1);
        assert_eq!(out.genuine[0].rank, 1);
        assert_eq!(out.genuine[0].best_genuine_score, 0.9);
        assert_eq!(out.impostor_max, vec![0.6]);

        // all scores equal: rank 1 under the strict-tie rule
        let table = ScoreTable {
            gallery_ids: vec![1, 2, 3],
            genuine: vec![(key(1), vec![0.5, 0.5, 0.5])],
            impostor: vec![vec![0.5, 0.5, 0.5]],
        };
        assert_eq!(oracle_evaluate(&table, 0, 1).genuine[0].rank, 1);

        // single gallery image
        let table = ScoreTable {
            gallery_ids: vec![1],
            genuine: vec![(key(1), vec![-3.0])],
            impostor: vec![vec![0.0]],
        };
        assert_eq!(oracle_evaluate(&table, 0, 1).genuine[0].rank, 1);
    }

    #[test]
    fn random_instances_are_valid_and_deterministic() {
        for s in 0..20 {
            let inst = random_instance(s);
            assert!(!inst.partition.gallery.is_empty());
            assert!(!inst.partition.genuine.is_empty());
            assert!(!inst.partition.impostor.is_empty());
            assert_eq!(inst.table.genuine.len(), inst.partition.genuine.len());
            assert_eq!(inst.table.impostor.len(), inst.partition.impostor.len());
            let again = random_instance(s);
            assert_eq!(inst.table, again.table);
        }
    }
}
