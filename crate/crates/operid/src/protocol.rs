//! Seeded multi-trial protocol: per-camera training selection, test
//! selection with cross-camera closure, and gallery/probe construction
//! per gallery camera.
//!
//! Everything here is a pure function of (dataset, master seed, trial
//! index); all ten partitions are reproducible bit-exactly.

use crate::data::{Dataset, RecordKey, Session};
use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    pub n_trials: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    /// Negative pairs sampled per positive pair.
    pub negative_ratio: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            n_trials: 10,
            master_seed: 0,
            train_fraction: 0.5,
            test_fraction: 0.5,
            negative_ratio: 5,
        }
    }
}

fn quota(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).ceil() as usize
}

/// Gallery and probe record keys for one gallery camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryProbes {
    pub gallery: Vec<RecordKey>,
    pub genuine: Vec<RecordKey>,
    pub impostor: Vec<RecordKey>,
}

/// One trial's training selection and per-camera test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPartition {
    pub trial_index: usize,
    /// Selected (person, camera) cells of the training session.
    pub train_selection: BTreeSet<(u32, u32)>,
    pub test_persons: BTreeSet<u32>,
    /// Keyed by gallery camera; cameras with an empty gallery are absent.
    pub galleries: BTreeMap<u32, GalleryProbes>,
}

/// Unordered record-key pairs for metric training.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPairSet {
    pub positives: Vec<(RecordKey, RecordKey)>,
    pub negatives: Vec<(RecordKey, RecordKey)>,
}

fn persons_per_camera(dataset: &Dataset, session: Session) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut map: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for r in dataset.session_records(session) {
        map.entry(r.camera_id).or_default().insert(r.person_id);
    }
    map
}

/// Selects ceil(n_c * fraction) persons independently per training camera.
/// A person may be selected in one camera and not another.
pub fn split_training(
    dataset: &Dataset,
    trial_index: usize,
    config: &ProtocolConfig,
) -> Result<BTreeSet<(u32, u32)>> {
    let by_camera = persons_per_camera(dataset, Session::Training);
    if by_camera.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let mut selection = BTreeSet::new();
    for (&camera, persons) in &by_camera {
        let mut ordered: Vec<u32> = persons.iter().copied().collect();
        let mut rng = seed::rng(seed::derive(
            config.master_seed,
            &[seed::TAG_TRAIN, trial_index as u64, camera as u64],
        ));
        ordered.shuffle(&mut rng);
        for &p in ordered.iter().take(quota(ordered.len(), config.train_fraction)) {
            selection.insert((p, camera));
        }
    }
    Ok(selection)
}

/// Selects test persons camera by camera (ascending camera id) with
/// cross-camera closure: once a person is drawn anywhere, that person is
/// selected in every camera, and counts toward later cameras' quotas.
pub fn split_test(
    dataset: &Dataset,
    trial_index: usize,
    config: &ProtocolConfig,
) -> Result<BTreeSet<u32>> {
    let by_camera = persons_per_camera(dataset, Session::Test);
    if by_camera.is_empty() {
        return Err(Error::NoTestData);
    }
    let mut selected = BTreeSet::new();
    for (&camera, persons) in &by_camera {
        let target = quota(persons.len(), config.test_fraction);
        let already = persons.iter().filter(|p| selected.contains(*p)).count();
        if already >= target {
            continue;
        }
        let mut remaining: Vec<u32> = persons
            .iter()
            .copied()
            .filter(|p| !selected.contains(p))
            .collect();
        let mut rng = seed::rng(seed::derive(
            config.master_seed,
            &[seed::TAG_TEST, trial_index as u64, camera as u64],
        ));
        remaining.shuffle(&mut rng);
        for &p in remaining.iter().take(target - already) {
            selected.insert(p);
        }
    }
    Ok(selected)
}

/// Builds (G_c, P_G_c, P_N_c) for one gallery camera from the selected
/// test persons. Probe sets draw from every other camera: genuine probes
/// are persons present in the gallery, impostors are selected persons
/// absent from it.
pub fn build_gallery_probes(
    dataset: &Dataset,
    test_persons: &BTreeSet<u32>,
    gallery_camera: u32,
) -> Result<GalleryProbes> {
    let mut gallery = Vec::new();
    let mut gallery_persons = BTreeSet::new();
    for r in dataset.session_records(Session::Test) {
        if r.camera_id == gallery_camera && test_persons.contains(&r.person_id) {
            gallery.push(r.key());
            gallery_persons.insert(r.person_id);
        }
    }
    if gallery.is_empty() {
        return Err(Error::EmptyGallery(gallery_camera));
    }
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for r in dataset.session_records(Session::Test) {
        if r.camera_id == gallery_camera || !test_persons.contains(&r.person_id) {
            continue;
        }
        if gallery_persons.contains(&r.person_id) {
            genuine.push(r.key());
        } else {
            impostor.push(r.key());
        }
    }
    Ok(GalleryProbes {
        gallery,
        genuine,
        impostor,
    })
}

/// Assembles a full trial: training selection, test selection, and the
/// gallery/probe split for every test camera with a non-empty gallery.
pub fn build_partition(
    dataset: &Dataset,
    trial_index: usize,
    config: &ProtocolConfig,
) -> Result<TrialPartition> {
    let train_selection = split_training(dataset, trial_index, config)?;
    let test_persons = split_test(dataset, trial_index, config)?;
    let cameras: BTreeSet<u32> = dataset
        .session_records(Session::Test)
        .map(|r| r.camera_id)
        .collect();
    let mut galleries = BTreeMap::new();
    for camera in cameras {
        match build_gallery_probes(dataset, &test_persons, camera) {
            Ok(gp) => {
                galleries.insert(camera, gp);
            }
            Err(Error::EmptyGallery(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(TrialPartition {
        trial_index,
        train_selection,
        test_persons,
        galleries,
    })
}

/// All same-person pairs (within- and between-camera) among the selected
/// training records, plus a seeded sample of different-person pairs at
/// `negative_ratio` times the positive count (capped by availability).
pub fn generate_training_pairs(
    dataset: &Dataset,
    train_selection: &BTreeSet<(u32, u32)>,
    pair_seed: u64,
    negative_ratio: usize,
) -> Result<KeyPairSet> {
    let selected: Vec<&crate::data::ImageRecord> = dataset
        .session_records(Session::Training)
        .filter(|r| train_selection.contains(&(r.person_id, r.camera_id)))
        .collect();
    let n = selected.len();
    let mut positives = Vec::new();
    let mut negative_count: u64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if selected[i].person_id == selected[j].person_id {
                positives.push((selected[i].key(), selected[j].key()));
            } else {
                negative_count += 1;
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let target = (positives.len() as u64 * negative_ratio as u64).min(negative_count) as usize;
    let mut negatives = Vec::with_capacity(target);
    let mut rng = seed::rng(seed::derive(pair_seed, &[seed::TAG_PAIRS]));
    if target as u64 == negative_count {
        for i in 0..n {
            for j in (i + 1)..n {
                if selected[i].person_id != selected[j].person_id {
                    negatives.push((selected[i].key(), selected[j].key()));
                }
            }
        }
    } else {
        let mut taken = HashSet::with_capacity(target);
        while negatives.len() < target {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j || selected[i].person_id == selected[j].person_id {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if taken.insert(key) {
                negatives.push((selected[key.0].key(), selected[key.1].key()));
            }
        }
    }
    Ok(KeyPairSet {
        positives,
        negatives,
    })
}
