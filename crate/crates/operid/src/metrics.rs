//! Similarity scorers: Euclidean baseline, Mahalanobis from positive
//! pairs, KISSME, and ridge-regression discriminant analysis (RRDA) with
//! cosine scoring.
//!
//! All scorers return "higher is more similar" (distances are negated) so
//! the DIR/FAR evaluation applies uniformly. One global model per trial;
//! nothing in a model is camera-pair specific.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Training pairs in the reduced feature space.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    /// Same-person pairs.
    pub positives: Vec<(DVector<f64>, DVector<f64>)>,
    /// Different-person pairs.
    pub negatives: Vec<(DVector<f64>, DVector<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Euclidean,
    Mahalanobis,
    Kissme,
    Rrda,
}

impl MetricKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean" => Some(MetricKind::Euclidean),
            "mahal" => Some(MetricKind::Mahalanobis),
            "kissme" => Some(MetricKind::Kissme),
            "rrda" => Some(MetricKind::Rrda),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Mahalanobis => "mahal",
            MetricKind::Kissme => "kissme",
            MetricKind::Rrda => "rrda",
        }
    }
}

/// A trained scorer. Immutable, safe for concurrent scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricModel {
    Euclidean {
        dim: usize,
    },
    Mahalanobis {
        m: DMatrix<f64>,
    },
    Kissme {
        m: DMatrix<f64>,
    },
    Rrda {
        w: DMatrix<f64>,
        center: DVector<f64>,
        lambda: f64,
    },
}

impl MetricModel {
    pub fn kind(&self) -> MetricKind {
        match self {
            MetricModel::Euclidean { .. } => MetricKind::Euclidean,
            MetricModel::Mahalanobis { .. } => MetricKind::Mahalanobis,
            MetricModel::Kissme { .. } => MetricKind::Kissme,
            MetricModel::Rrda { .. } => MetricKind::Rrda,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricModel::Euclidean { dim } => *dim,
            MetricModel::Mahalanobis { m } | MetricModel::Kissme { m } => m.nrows(),
            MetricModel::Rrda { w, .. } => w.nrows(),
        }
    }
}

/// Mean outer product of pair differences: (1/|pairs|) sum (x-y)(x-y)'.
fn diff_covariance(pairs: &[(DVector<f64>, DVector<f64>)]) -> DMatrix<f64> {
    let d = pairs[0].0.len();
    let mut sigma = DMatrix::zeros(d, d);
    for (x, y) in pairs {
        let diff = x - y;
        sigma.syger(1.0 / pairs.len() as f64, &diff, &diff, 1.0);
    }
    // syger fills the lower triangle; mirror it
    for i in 0..d {
        for j in (i + 1)..d {
            sigma[(i, j)] = sigma[(j, i)];
        }
    }
    sigma
}

/// Inverts sigma + eps*(tr(sigma)/d)*I.
fn ridge_inverse(sigma: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let ridge = epsilon * sigma.trace() / d as f64;
    let mut stabilized = sigma.clone();
    for i in 0..d {
        stabilized[(i, i)] += ridge;
    }
    if let Some(chol) = stabilized.clone().cholesky() {
        return Ok(chol.inverse());
    }
    stabilized.try_inverse().ok_or(Error::SingularCovariance)
}

/// Projects a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues to zero.
fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda > 0.0 {
            let v = eig.eigenvectors.column(k);
            out.syger(lambda, &v, &v, 1.0);
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            out[(i, j)] = out[(j, i)];
        }
    }
    out
}

pub fn train_euclidean(dim: usize) -> MetricModel {
    MetricModel::Euclidean { dim }
}

/// Mahalanobis metric from positive pairs: M = inv(Sigma_S + ridge).
pub fn train_mahal(pairs: &PairSet, epsilon: f64) -> Result<MetricModel> {
    if pairs.positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    let sigma_s = diff_covariance(&pairs.positives);
    let m = ridge_inverse(&sigma_s, epsilon)?;
    Ok(MetricModel::Mahalanobis { m: symmetrize(m) })
}

/// KISSME: M = PSD projection of inv(Sigma_S) - inv(Sigma_D).
pub fn train_kissme(pairs: &PairSet, epsilon: f64) -> Result<MetricModel> {
    if pairs.positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    if pairs.negatives.is_empty() {
        return Err(Error::NoNegativePairs);
    }
    let sigma_s = diff_covariance(&pairs.positives);
    let sigma_d = diff_covariance(&pairs.negatives);
    let m0 = ridge_inverse(&sigma_s, epsilon)? - ridge_inverse(&sigma_d, epsilon)?;
    Ok(MetricModel::Kissme {
        m: psd_projection(&m0),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// RRDA: ridge regression of one-hot class labels on centered samples,
/// scored by cosine similarity in the learned subspace.
pub fn train_rrda(samples: &[(u32, DVector<f64>)], lambda: f64) -> Result<MetricModel> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda);
    }
    let mut classes: Vec<u32> = samples.iter().map(|(c, _)| *c).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let n = samples.len();
    let d = samples[0].1.len();
    let c = classes.len();

    let mut center = DVector::zeros(d);
    for (_, v) in samples {
        center += v;
    }
    center /= n as f64;

    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, c);
    for (i, (class, v)) in samples.iter().enumerate() {
        for j in 0..d {
            x[(i, j)] = v[j] - center[j];
        }
        let ci = classes.binary_search(class).unwrap();
        y[(i, ci)] = 1.0;
    }

    let mut gram = x.transpose() * &x;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    let xty = x.transpose() * y;
    let chol = gram.cholesky().ok_or(Error::SingularCovariance)?;
    let w = chol.solve(&xty);
    Ok(MetricModel::Rrda { w, center, lambda })
}

fn quadratic_form(m: &DMatrix<f64>, diff: &DVector<f64>) -> f64 {
    diff.dot(&(m * diff))
}

/// Scores a pair; higher means more similar; symmetric in x and y.
pub fn score(model: &MetricModel, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if x.len() != d { x.len() } else { y.len() },
        });
    }
    Ok(match model {
        MetricModel::Euclidean { .. } => {
            let diff = x - y;
            -diff.norm_squared()
        }
        MetricModel::Mahalanobis { m } | MetricModel::Kissme { m } => {
            let diff = x - y;
            -quadratic_form(m, &diff)
        }
        MetricModel::Rrda { w, center, .. } => {
            let px = w.transpose() * (x - center);
            let py = w.transpose() * (y - center);
            let nx = px.norm();
            let ny = py.norm();
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                px.dot(&py) / (nx * ny)
            }
        }
    })
}

/// Bulk scoring: entry (i, j) = score(gallery[j], probe[i]). Equals the
/// pointwise calls bit-exactly.
pub fn score_matrix(
    model: &MetricModel,
    gallery: &[DVector<f64>],
    probes: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(probes.len(), gallery.len());
    for (i, p) in probes.iter().enumerate() {
        for (j, g) in gallery.iter().enumerate() {
            out[(i, j)] = score(model, g, p)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(s: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(s)
    }

    fn pair_set_from_diffs(pos: &[[f64; 2]], neg: &[[f64; 2]]) -> PairSet {
        let zero = v(&[0.0, 0.0]);
        PairSet {
            positives: pos.iter().map(|d| (v(d), zero.clone())).collect(),
            negatives: neg.iter().map(|d| (v(d), zero.clone())).collect(),
        }
    }

    #[test]
    fn euclidean_hand_cases() {
        let model = train_euclidean(2);
        let x = v(&[0.0, 0.0]);
        let y = v(&[3.0, 4.0]);
        assert_eq!(score(&model, &x, &x).unwrap(), 0.0);
        assert_eq!(score(&model, &x, &y).unwrap(), -25.0);
        // strictly decreasing along a ray
        let mut last = f64::INFINITY;
        for t in 1..5 {
            let yt = &y * t as f64;
            let s = score(&model, &x, &yt).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn mahal_hand_example() {
        // positive differences with Sigma_S = diag(0.5, 2)
        let pairs = pair_set_from_diffs(
            &[[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]],
            &[],
        );
        let model = train_mahal(&pairs, 1e-12).unwrap();
        let MetricModel::Mahalanobis { m } = &model else {
            panic!()
        };
        assert!((m[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((m[(1, 1)] - 0.5).abs() < 1e-8);
        assert!(m[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn mahal_isotropic_matches_euclidean_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // isotropic positive differences
        let mut pos = Vec::new();
        for _ in 0..500 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            pos.push([a, b]);
            pos.push([b, -a]); // rotate to symmetrize
        }
        let pairs = pair_set_from_diffs(&pos, &[]);
        let model = train_mahal(&pairs, 1e-6).unwrap();
        let euclid = train_euclidean(2);
        let probe = v(&[0.3, -0.4]);
        let gallery: Vec<DVector<f64>> = (0..10)
            .map(|_| v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let argsort = |m: &MetricModel| {
            let mut idx: Vec<usize> = (0..gallery.len()).collect();
            idx.sort_by(|&a, &b| {
                score(m, &gallery[b], &probe)
                    .unwrap()
                    .partial_cmp(&score(m, &gallery[a], &probe).unwrap())
                    .unwrap()
            });
            idx
        };
        assert_eq!(argsort(&model), argsort(&euclid));
    }

    #[test]
    fn mahal_huge_ridge_matches_euclidean_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)])
            .collect();
        let pairs = pair_set_from_diffs(&pos, &[]);
        let model = train_mahal(&pairs, 1e9).unwrap();
        let euclid = train_euclidean(2);
        let probe = v(&[0.1, 0.2]);
        let gallery: Vec<DVector<f64>> = (0..8)
            .map(|_| v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]))
            .collect();
        let order = |m: &MetricModel| {
            let mut idx: Vec<usize> = (0..gallery.len()).collect();
            idx.sort_by(|&a, &b| {
                score(m, &gallery[b], &probe)
                    .unwrap()
                    .partial_cmp(&score(m, &gallery[a], &probe).unwrap())
                    .unwrap()
            });
            idx
        };
        assert_eq!(order(&model), order(&euclid));
    }

    #[test]
    fn kissme_hand_example() {
        // Sigma_S = diag(1, 2): diffs (±1,0),(0,±2) scaled; mean outer of
        // {(sqrt2,0),(-sqrt2,0),(0,2),(0,-2)} = diag(1,2)
        let r2 = 2.0f64.sqrt();
        let pos = [[r2, 0.0], [-r2, 0.0], [0.0, 2.0], [0.0, -2.0]];
        // Sigma_D = diag(2, 1)
        let neg = [[2.0, 0.0], [-2.0, 0.0], [0.0, r2], [0.0, -r2]];
        let pairs = pair_set_from_diffs(&pos, &neg);
        let model = train_kissme(&pairs, 1e-12).unwrap();
        let MetricModel::Kissme { m } = &model else {
            panic!()
        };
        assert!((m[(0, 0)] - 0.5).abs() < 1e-8, "{}", m[(0, 0)]);
        assert!(m[(1, 1)].abs() < 1e-8);
        assert!(m[(0, 1)].abs() < 1e-8);
        // scoring with M = diag(0.5, 0) on diff (2, 5)
        let s = score(&model, &v(&[2.0, 5.0]), &v(&[0.0, 0.0])).unwrap();
        assert!((s - (-2.0)).abs() < 1e-8);
    }

    #[test]
    fn kissme_identical_statistics_give_zero() {
        let diffs = [[1.0, 0.5], [-1.0, -0.5], [0.3, 1.0], [-0.3, -1.0]];
        let pairs = pair_set_from_diffs(&diffs, &diffs);
        let model = train_kissme(&pairs, 1e-9).unwrap();
        let s = score(&model, &v(&[3.0, -2.0]), &v(&[1.0, 1.0])).unwrap();
        assert!(s.abs() < 1e-9);
    }

    #[test]
    fn kissme_finds_discriminative_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        // positives differ only along (0,1) (noise axis); negatives spread
        // along (1,0) (identity axis)
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for _ in 0..2000 {
            let e: f64 = rng.gen_range(-1.0..1.0);
            pos.push([0.05 * rng.gen_range(-1.0..1.0f64), e]);
            neg.push([rng.gen_range(-2.0..2.0f64), e]);
        }
        let pairs = pair_set_from_diffs(&pos, &neg);
        let model = train_kissme(&pairs, 1e-6).unwrap();
        let MetricModel::Kissme { m } = &model else {
            panic!()
        };
        let eig = m.clone().symmetric_eigen();
        let top = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let vtop = eig.eigenvectors.column(top);
        // top eigenvector within 5 degrees of the discriminative axis (1,0)
        let cos = vtop[0].abs();
        assert!(cos > (5.0f64.to_radians()).cos(), "cos = {cos}");
    }

    #[test]
    fn kissme_m_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos: Vec<[f64; 2]> = (0..100)
            .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-2.0..2.0)])
            .collect();
        let neg: Vec<[f64; 2]> = (0..100)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5)])
            .collect();
        let pairs = pair_set_from_diffs(&pos, &neg);
        let model = train_kissme(&pairs, 1e-6).unwrap();
        let MetricModel::Kissme { m } = &model else {
            panic!()
        };
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10));
        // hence scores are <= 0 with equality at x = y
        let x = v(&[0.7, -0.3]);
        assert_eq!(score(&model, &x, &x).unwrap(), 0.0);
        assert!(score(&model, &x, &v(&[1.0, 1.0])).unwrap() <= 0.0);
    }

    #[test]
    fn rrda_normal_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<(u32, DVector<f64>)> = (0..30)
            .map(|i| {
                (
                    (i % 3) as u32,
                    v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
                )
            })
            .collect();
        let lambda = 0.5;
        let model = train_rrda(&samples, lambda).unwrap();
        let MetricModel::Rrda { w, center, .. } = &model else {
            panic!()
        };
        let n = samples.len();
        let mut x = DMatrix::zeros(n, 3);
        let mut y = DMatrix::zeros(n, 3);
        for (i, (class, s)) in samples.iter().enumerate() {
            for j in 0..3 {
                x[(i, j)] = s[j] - center[j];
            }
            y[(i, *class as usize)] = 1.0;
        }
        let mut gram = x.transpose() * &x;
        for i in 0..3 {
            gram[(i, i)] += lambda;
        }
        let xty = x.transpose() * &y;
        let residual = (&gram * w - &xty).norm();
        assert!(residual <= 1e-8 * xty.norm());
    }

    #[test]
    fn rrda_separates_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        for i in 0..20 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            samples.push((
                (i % 2) as u32,
                v(&[
                    sign + 0.01 * rng.gen_range(-1.0..1.0),
                    0.01 * rng.gen_range(-1.0..1.0),
                ]),
            ));
        }
        let model = train_rrda(&samples, 1.0).unwrap();
        let same = score(&model, &samples[0].1, &samples[2].1).unwrap();
        let cross = score(&model, &samples[0].1, &samples[1].1).unwrap();
        assert!(same > cross, "{same} vs {cross}");
        // self-similarity is 1 for non-degenerate projections
        let s = score(&model, &samples[0].1, &samples[0].1).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rrda_input_validation() {
        let samples = vec![(1u32, v(&[1.0])), (1u32, v(&[2.0]))];
        assert!(matches!(train_rrda(&samples, 1.0), Err(Error::SingleClass)));
        let samples = vec![(1u32, v(&[1.0])), (2u32, v(&[2.0]))];
        assert!(matches!(
            train_rrda(&samples, 0.0),
            Err(Error::NonPositiveLambda)
        ));
    }

    #[test]
    fn pair_requirements() {
        let empty = PairSet::default();
        assert!(matches!(train_mahal(&empty, 1e-6), Err(Error::NoPositivePairs)));
        assert!(matches!(train_kissme(&empty, 1e-6), Err(Error::NoPositivePairs)));
        let only_pos = pair_set_from_diffs(&[[1.0, 0.0]], &[]);
        assert!(matches!(
            train_kissme(&only_pos, 1e-6),
            Err(Error::NoNegativePairs)
        ));
    }

    #[test]
    fn scores_are_symmetric_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pos: Vec<[f64; 2]> = (0..40)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let neg: Vec<[f64; 2]> = (0..40)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let pairs = pair_set_from_diffs(&pos, &neg);
        let models = vec![
            train_euclidean(2),
            train_mahal(&pairs, 1e-6).unwrap(),
            train_kissme(&pairs, 1e-6).unwrap(),
        ];
        for model in &models {
            for _ in 0..20 {
                let x = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let y = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let t = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                let sxy = score(model, &x, &y).unwrap();
                let syx = score(model, &y, &x).unwrap();
                assert_eq!(sxy, syx);
                let st = score(model, &(&x + &t), &(&y + &t)).unwrap();
                assert!((sxy - st).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn score_matrix_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = train_euclidean(3);
        let gallery: Vec<DVector<f64>> = (0..5)
            .map(|_| v(&[rng.gen(), rng.gen(), rng.gen()]))
            .collect();
        let probes: Vec<DVector<f64>> = (0..7)
            .map(|_| v(&[rng.gen(), rng.gen(), rng.gen()]))
            .collect();
        let m = score_matrix(&model, &gallery, &probes).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (7, 5));
        for i in 0..7 {
            for j in 0..5 {
                assert_eq!(m[(i, j)], score(&model, &gallery[j], &probes[i]).unwrap());
            }
        }
        let empty = score_matrix(&model, &gallery, &[]).unwrap();
        assert_eq!((empty.nrows(), empty.ncols()), (0, 5));
    }
}
