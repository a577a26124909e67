//! Network potential: exact k-NN regression of citations on standardized
//! distance profiles, k selection by cross-validation and the three-way
//! model comparison.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citation_stats::{
    coefficient_of_determination, fit_exponential_model, linear_fit_r2, GlobalCitationModel,
};
use crate::corpus::AuthorId;
use crate::distances::{CitingDistanceProfile, DistanceProfile, N_BINS};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 1000;
pub const DEFAULT_FOLDS: usize = 10;

const ZERO_STD: f64 = 1e-12;

/// Column-standardized profile rows, sorted by author id.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedProfileMatrix {
    authors: Vec<AuthorId>,
    rows: Vec<[f64; N_BINS]>,
    mean: [f64; N_BINS],
    std: [f64; N_BINS],
}

impl StandardizedProfileMatrix {
    /// Z-scores each column with the sample standard deviation; columns
    /// without variance become zero.
    pub fn from_vectors(mut input: Vec<(AuthorId, [f64; N_BINS])>) -> Result<Self> {
        if input.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "standardization needs at least 2 authors, got {}",
                input.len()
            )));
        }
        input.sort_by_key(|(a, _)| *a);
        if input.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput(
                "duplicate author in profile set".into(),
            ));
        }
        let n = input.len() as f64;
        let mut mean = [0.0; N_BINS];
        let mut std = [0.0; N_BINS];
        for x in 0..N_BINS {
            mean[x] = input.iter().map(|(_, r)| r[x]).sum::<f64>() / n;
            let ss: f64 = input.iter().map(|(_, r)| (r[x] - mean[x]).powi(2)).sum();
            std[x] = (ss / (n - 1.0)).sqrt();
        }
        let (authors, rows) = input
            .into_iter()
            .map(|(a, r)| {
                let z = std::array::from_fn(|x| {
                    if std[x] < ZERO_STD {
                        0.0
                    } else {
                        (r[x] - mean[x]) / std[x]
                    }
                });
                (a, z)
            })
            .unzip();
        Ok(Self {
            authors,
            rows,
            mean,
            std,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn authors(&self) -> &[AuthorId] {
        &self.authors
    }

    pub fn author(&self, row: usize) -> AuthorId {
        self.authors[row]
    }

    pub fn row(&self, row: usize) -> &[f64; N_BINS] {
        &self.rows[row]
    }

    pub fn row_of(&self, a: AuthorId) -> Option<usize> {
        self.authors.binary_search(&a).ok()
    }

    pub fn column_mean(&self) -> &[f64; N_BINS] {
        &self.mean
    }

    pub fn column_std(&self) -> &[f64; N_BINS] {
        &self.std
    }
}

pub fn standardize_profiles(profiles: &[DistanceProfile]) -> Result<StandardizedProfileMatrix> {
    StandardizedProfileMatrix::from_vectors(profiles.iter().map(|p| (p.author, p.bins())).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub author: AuthorId,
    pub row: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub focal: AuthorId,
    pub requested_k: usize,
    /// Ascending by distance, ties by author id.
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn effective_k(&self) -> usize {
        self.neighbors.len()
    }

    /// Fewer neighbors than requested were available.
    pub fn is_clamped(&self) -> bool {
        self.neighbors.len() < self.requested_k
    }
}

pub fn squared_distance(a: &[f64; N_BINS], b: &[f64; N_BINS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` candidate rows closest to `query`, ascending, ties by author id.
pub fn nearest_rows(
    m: &StandardizedProfileMatrix,
    query: &[f64; N_BINS],
    k: usize,
    candidates: impl Iterator<Item = usize>,
) -> Vec<Neighbor> {
    let mut scored: Vec<(f64, usize)> = candidates
        .map(|r| (squared_distance(query, &m.rows[r]), r))
        .collect();
    let key = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0)
            .then(m.authors[a.1].cmp(&m.authors[b.1]))
    };
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, key);
        scored.truncate(k);
    }
    scored.sort_unstable_by(key);
    scored
        .into_iter()
        .map(|(d2, r)| Neighbor {
            author: m.authors[r],
            row: r,
            distance: d2.sqrt(),
        })
        .collect()
}

/// Exact k nearest neighbors of `focal`, which is never its own neighbor.
pub fn knn_query(m: &StandardizedProfileMatrix, focal: usize, k: usize) -> NeighborSet {
    let neighbors = nearest_rows(
        m,
        &m.rows[focal],
        k,
        (0..m.n_rows()).filter(|&r| r != focal),
    );
    NeighborSet {
        focal: m.authors[focal],
        requested_k: k,
        neighbors,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialResult {
    pub author: AuthorId,
    pub year: i32,
    pub n_neighbors_used: usize,
    pub potential: f64,
}

/// Mean citations of the neighbors; `citations` is indexed by matrix row.
pub fn network_potential(
    ns: &NeighborSet,
    citations: &[f64],
    year: i32,
) -> Result<PotentialResult> {
    if ns.neighbors.is_empty() {
        return Err(Error::InvalidInput(format!(
            "empty neighbor set for author {}",
            ns.focal.0
        )));
    }
    let sum: f64 = ns.neighbors.iter().map(|n| citations[n.row]).sum();
    Ok(PotentialResult {
        author: ns.focal,
        year,
        n_neighbors_used: ns.neighbors.len(),
        potential: sum / ns.neighbors.len() as f64,
    })
}

/// Everything the k-NN regression produced for one population of authors.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    pub year: i32,
    pub k: usize,
    pub matrix: StandardizedProfileMatrix,
    /// Row-aligned citations in the year.
    pub citations: Vec<f64>,
    pub neighbor_sets: Vec<NeighborSet>,
    pub results: Vec<PotentialResult>,
}

impl PotentialModel {
    pub fn row_of(&self, a: AuthorId) -> Option<usize> {
        self.matrix.row_of(a)
    }

    pub fn potentials(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.potential).collect()
    }
}

/// Fits the potential of every author in `profiles`; `citations[i]`
/// belongs to `profiles[i]`.
pub fn fit_potential_model(
    year: i32,
    profiles: &[DistanceProfile],
    citations: &[f64],
    k: usize,
) -> Result<PotentialModel> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if profiles.len() != citations.len() {
        return Err(Error::InvalidInput(
            "profiles and citations differ in length".into(),
        ));
    }
    let matrix = standardize_profiles(profiles)?;
    let mut row_cites = vec![0.0; matrix.n_rows()];
    for (p, &c) in profiles.iter().zip(citations) {
        row_cites[matrix.row_of(p.author).expect("author was standardized")] = c;
    }
    let neighbor_sets: Vec<NeighborSet> = (0..matrix.n_rows())
        .into_par_iter()
        .map(|r| knn_query(&matrix, r, k))
        .collect();
    let results = neighbor_sets
        .iter()
        .map(|ns| network_potential(ns, &row_cites, year))
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialModel {
        year,
        k,
        matrix,
        citations: row_cites,
        neighbor_sets,
        results,
    })
}

/// Seeded, balanced fold label for each of `n` items.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn training_sizes(fold: &[usize], folds: usize) -> Vec<usize> {
    let mut size = vec![fold.len(); folds];
    for &f in fold {
        size[f] -= 1;
    }
    size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub k: usize,
    pub r2: Option<f64>,
    pub note: Option<String>,
}

/// Out-of-fold R² of the k-NN predictor for every k in `k_grid`.
pub fn cross_validate_k(
    m: &StandardizedProfileMatrix,
    citations: &[f64],
    k_grid: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<CvPoint>> {
    let n = m.n_rows();
    if folds < 2 || n < folds {
        return Err(Error::InvalidInput(format!(
            "cross-validation needs >= {folds} authors and >= 2 folds, got {n}"
        )));
    }
    if citations.len() != n {
        return Err(Error::InvalidInput(
            "citations not aligned with matrix".into(),
        ));
    }
    let fold = fold_assignment(n, folds, seed);
    let min_train = training_sizes(&fold, folds).into_iter().min().unwrap_or(0);
    let usable: Vec<usize> = k_grid
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k < min_train)
        .collect();
    let k_max = usable.iter().copied().max().unwrap_or(0);

    // per row: prefix sums of the k_max nearest training citations
    let prefix: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let nb = nearest_rows(m, &m.rows[r], k_max, (0..n).filter(|&c| fold[c] != fold[r]));
            let mut acc = Vec::with_capacity(nb.len() + 1);
            acc.push(0.0);
            for x in nb {
                acc.push(acc.last().unwrap() + citations[x.row]);
            }
            acc
        })
        .collect();

    Ok(k_grid
        .iter()
        .map(|&k| {
            if !usable.contains(&k) {
                log::warn!("k = {k} skipped: training folds have {min_train} authors");
                return CvPoint {
                    k,
                    r2: None,
                    note: Some(format!(
                        "k must be >= 1 and below the training size {min_train}"
                    )),
                };
            }
            let pred: Vec<f64> = prefix.iter().map(|p| p[k] / k as f64).collect();
            CvPoint {
                k,
                r2: Some(coefficient_of_determination(&pred, citations)),
                note: None,
            }
        })
        .collect())
}

/// R² of the three predictors under one shared fold structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub r2_mean_distance: f64,
    pub r2_global: f64,
    pub r2_knn: f64,
    pub k: usize,
    pub folds: usize,
}

/// Out-of-fold predictions of the mean-distance exponential fit, the
/// pooled P(c|d) table and k-NN, each scored by the R² of a linear
/// regression of actual on predicted citations.
pub fn compare_models(
    profiles: &[DistanceProfile],
    citing: &[CitingDistanceProfile],
    citations: &[f64],
    k: usize,
    folds: usize,
    seed: u64,
) -> Result<ModelComparison> {
    let n = profiles.len();
    if citing.len() != n || citations.len() != n {
        return Err(Error::InvalidInput("model inputs are not aligned".into()));
    }
    if folds < 2 || n < folds {
        return Err(Error::InvalidInput(format!(
            "model comparison needs >= {folds} authors, got {n}"
        )));
    }
    let matrix = standardize_profiles(profiles)?;
    let row: Vec<usize> = profiles
        .iter()
        .map(|p| matrix.row_of(p.author).expect("author was standardized"))
        .collect();
    let mut row_cites = vec![0.0; n];
    for (i, &r) in row.iter().enumerate() {
        row_cites[r] = citations[i];
    }
    let fold = fold_assignment(n, folds, seed);
    let mut row_fold = vec![0; n];
    for (i, &r) in row.iter().enumerate() {
        row_fold[r] = fold[i];
    }
    let min_train = training_sizes(&fold, folds).into_iter().min().unwrap_or(0);
    let k_eff = k.min(min_train);

    let mut pred_md = vec![0.0; n];
    let mut pred_global = vec![0.0; n];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let points: Vec<(f64, f64)> = train
            .iter()
            .map(|&i| (profiles[i].mean_distance(), citations[i]))
            .collect();
        let fit = fit_exponential_model(&points)?;
        let mut global = GlobalCitationModel::default();
        for &i in &train {
            global.add(&profiles[i], &citing[i]);
        }
        for i in (0..n).filter(|&i| fold[i] == f) {
            pred_md[i] = fit.predict_citations(profiles[i].mean_distance());
            pred_global[i] = global.predict(&profiles[i]);
        }
    }
    let pred_knn: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = row[i];
            let nb = nearest_rows(
                &matrix,
                matrix.row(r),
                k_eff,
                (0..n).filter(|&c| row_fold[c] != row_fold[r]),
            );
            nb.iter().map(|x| row_cites[x.row]).sum::<f64>() / nb.len() as f64
        })
        .collect();
    Ok(ModelComparison {
        r2_mean_distance: linear_fit_r2(&pred_md, citations),
        r2_global: linear_fit_r2(&pred_global, citations),
        r2_knn: linear_fit_r2(&pred_knn, citations),
        k: k_eff,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix_from(rows: &[[f64; N_BINS]]) -> StandardizedProfileMatrix {
        StandardizedProfileMatrix::from_vectors(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (AuthorId(i as u32), *r))
                .collect(),
        )
        .unwrap()
    }

    fn raw_matrix(rows: Vec<[f64; N_BINS]>) -> StandardizedProfileMatrix {
        // skip standardization so geometry is exactly what the test wrote
        StandardizedProfileMatrix {
            authors: (0..rows.len() as u32).map(AuthorId).collect(),
            rows,
            mean: [0.0; N_BINS],
            std: [1.0; N_BINS],
        }
    }

    fn on_line(xs: &[f64]) -> StandardizedProfileMatrix {
        raw_matrix(
            xs.iter()
                .map(|&x| {
                    let mut r = [0.0; N_BINS];
                    r[0] = x;
                    r
                })
                .collect(),
        )
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<[f64; N_BINS]> {
        // few levels produce many exact ties
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0..levels) as f64))
            .collect()
    }

    fn brute_force(m: &StandardizedProfileMatrix, focal: usize, k: usize) -> Vec<(AuthorId, f64)> {
        let mut all: Vec<(f64, AuthorId)> = Vec::new();
        for r in 0..m.n_rows() {
            if r == focal {
                continue;
            }
            let mut s = 0.0;
            for x in 0..N_BINS {
                let d = m.row(focal)[x] - m.row(r)[x];
                s += d * d;
            }
            all.push((s, m.author(r)));
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(s, a)| (a, s.sqrt())).collect()
    }

    #[test]
    fn mirrored_profiles_standardize_to_negatives() {
        let a = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = matrix_from(&[a, b]);
        for x in 0..N_BINS {
            assert!((m.row(0)[x] + m.row(1)[x]).abs() < 1e-12);
        }
        // column 1 is constant, so zeroed
        assert_eq!(m.row(0)[1], 0.0);
        assert_eq!(m.row(1)[1], 0.0);
        assert!(StandardizedProfileMatrix::from_vectors(vec![(AuthorId(0), a)]).is_err());
    }

    #[test]
    fn standardized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut rows: Vec<[f64; N_BINS]> = (0..50)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect();
        for r in &mut rows {
            r[7] = 0.25;
        }
        let m = matrix_from(&rows);
        for x in 0..N_BINS {
            let col: Vec<f64> = (0..50).map(|r| m.row(r)[x]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0;
            assert!(mean.abs() < 1e-9);
            if x == 7 {
                assert!(col.iter().all(|&v| v == 0.0));
            } else {
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn line_neighbors() {
        let m = on_line(&[0.0, 1.0, 3.0]);
        let ns = knn_query(&m, 1, 1);
        assert_eq!(ns.neighbors[0].author, AuthorId(0));
        assert_eq!(ns.neighbors[0].distance, 1.0);
        let ns = knn_query(&m, 1, 10);
        assert_eq!(ns.effective_k(), 2);
        assert!(ns.is_clamped());
    }

    #[test]
    fn duplicate_of_focal_comes_first() {
        let m = on_line(&[5.0, 1.0, 4.0, 1.0]);
        let ns = knn_query(&m, 3, 2);
        assert_eq!(ns.neighbors[0].author, AuthorId(1));
        assert_eq!(ns.neighbors[0].distance, 0.0);
        assert!(ns.neighbors.iter().all(|n| n.author != AuthorId(3)));
    }

    #[test]
    fn knn_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for levels in [3, 1000] {
            let m = raw_matrix(random_rows(&mut rng, 500, levels));
            for focal in (0..500).step_by(37) {
                let got: Vec<(AuthorId, f64)> = knn_query(&m, focal, 25)
                    .neighbors
                    .iter()
                    .map(|n| (n.author, n.distance))
                    .collect();
                assert_eq!(got, brute_force(&m, focal, 25));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn knn_oracle_property(seed in any::<u64>(), n in 2usize..120, k in 1usize..30, levels in 2u32..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = raw_matrix(random_rows(&mut rng, n, levels));
            let focal = rng.random_range(0..n);
            let ns = knn_query(&m, focal, k);
            let got: Vec<(AuthorId, f64)> = ns.neighbors.iter().map(|x| (x.author, x.distance)).collect();
            prop_assert_eq!(got, brute_force(&m, focal, k));
            prop_assert_eq!(ns.effective_k(), k.min(n - 1));
            prop_assert!(ns.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        }

        #[test]
        fn potential_shifts_with_constant(cites in prop::collection::vec(0.0f64..100.0, 8), c in 0.0f64..50.0) {
            let m = on_line(&[0.0, 1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0]);
            let shifted: Vec<f64> = cites.iter().map(|v| v + c).collect();
            for focal in 0..8 {
                let ns = knn_query(&m, focal, 3);
                let a = network_potential(&ns, &cites, 0).unwrap().potential;
                let b = network_potential(&ns, &shifted, 0).unwrap().potential;
                prop_assert!((b - a - c).abs() < 1e-9);
                let mut rev = ns.clone();
                rev.neighbors.reverse();
                let r = network_potential(&rev, &cites, 0).unwrap().potential;
                prop_assert!((r - a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn potential_means() {
        let m = on_line(&[0.0, 1.0, 2.0]);
        let ns = knn_query(&m, 1, 2);
        assert_eq!(
            network_potential(&ns, &[7.0, 0.0, 7.0], 0)
                .unwrap()
                .potential,
            7.0
        );
        assert_eq!(
            network_potential(&ns, &[0.0, 99.0, 10.0], 0)
                .unwrap()
                .potential,
            5.0
        );
        let empty = NeighborSet {
            focal: AuthorId(0),
            requested_k: 1,
            neighbors: vec![],
        };
        assert!(network_potential(&empty, &[1.0], 0).is_err());
    }

    #[test]
    fn folds_are_seeded_and_balanced() {
        let a = fold_assignment(103, 10, 4);
        assert_eq!(a, fold_assignment(103, 10, 4));
        assert_ne!(a, fold_assignment(103, 10, 5));
        let mut sizes = [0; 10];
        for f in a {
            sizes[f] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 10 || s == 11));
    }

    #[test]
    fn cv_constant_citations_explain_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = raw_matrix(random_rows(&mut rng, 60, 1000));
        let cv = cross_validate_k(&m, &[3.0; 60], &[1, 5, 20], 10, 0).unwrap();
        assert!(cv.iter().all(|p| p.r2 == Some(0.0)));
        let cv = cross_validate_k(&m, &[3.0; 60], &[54, 60], 10, 0).unwrap();
        assert!(cv.iter().all(|p| p.r2.is_none() && p.note.is_some()));
        assert!(cross_validate_k(&m, &[3.0; 60], &[1], 61, 0).is_err());
    }

    #[test]
    fn cv_recovers_functional_relationship() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let rows: Vec<[f64; N_BINS]> = (0..n)
            .map(|_| {
                let mut r = [0.0; N_BINS];
                r[0] = rng.random::<f64>();
                r[1] = rng.random::<f64>();
                r
            })
            .collect();
        let cites: Vec<f64> = rows
            .iter()
            .map(|r| 10.0 * r[0] + 5.0 * r[1] * r[1])
            .collect();
        let m = raw_matrix(rows);
        let cv = cross_validate_k(&m, &cites, &[1, 3, 300], 10, 7).unwrap();
        let r2: Vec<f64> = cv.iter().map(|p| p.r2.unwrap()).collect();
        assert!(r2[1] > 0.95, "{r2:?}");
        assert!(r2[2] < r2[1], "{r2:?}");
    }

    fn synthetic_bundle(
        seed: u64,
        n: usize,
        q: [f64; N_BINS],
    ) -> (Vec<DistanceProfile>, Vec<CitingDistanceProfile>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dps = Vec::new();
        let mut cps = Vec::new();
        let mut cites = Vec::new();
        for i in 0..n {
            let mut counts = [0u64; N_BINS];
            let center = rng.random_range(1.0..6.0f64);
            for _ in 0..200 {
                let x = (center + rng.random_range(-2.0..2.0f64))
                    .round()
                    .clamp(0.0, 9.0) as usize;
                counts[x] += 1;
            }
            let mut cited = [0u64; N_BINS];
            for x in 0..N_BINS {
                cited[x] = (0..counts[x])
                    .filter(|_| rng.random::<f64>() < q[x])
                    .count() as u64;
            }
            let sum_half: u64 = (0..N_BINS).map(|x| counts[x] * 2 * x as u64).sum();
            let sum_citing: u64 = (0..N_BINS).map(|x| cited[x] * 2 * x as u64).sum();
            let a = AuthorId(i as u32);
            dps.push(DistanceProfile {
                author: a,
                year: 0,
                counts,
                n_papers: 200,
                sum_half_steps: sum_half,
            });
            let nc = cited.iter().sum();
            cps.push(CitingDistanceProfile {
                author: a,
                year: 0,
                counts: cited,
                n_citing: nc,
                sum_half_steps: sum_citing,
            });
            cites.push(nc as f64);
        }
        (dps, cps, cites)
    }

    #[test]
    fn distance_only_law_makes_pooling_lossless() {
        let q = [0.9, 0.3, 0.1, 0.05, 0.02, 0.01, 0.0, 0.0, 0.0, 0.0];
        let (dps, cps, cites) = synthetic_bundle(3, 600, q);
        let cmp = compare_models(&dps, &cps, &cites, 15, 10, 1).unwrap();
        assert!(cmp.r2_global > 0.5, "{cmp:?}");
        assert!((cmp.r2_global - cmp.r2_knn).abs() < 0.1, "{cmp:?}");
        assert!(cmp.r2_mean_distance <= cmp.r2_global + 0.02, "{cmp:?}");
    }

    #[test]
    fn shuffled_citations_carry_no_signal() {
        let q = [0.9, 0.3, 0.1, 0.05, 0.02, 0.01, 0.0, 0.0, 0.0, 0.0];
        let (dps, mut cps, mut cites) = synthetic_bundle(4, 600, q);
        let mut order: Vec<usize> = (0..cites.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let shuffled_c: Vec<f64> = order.iter().map(|&i| cites[i]).collect();
        let shuffled_p: Vec<CitingDistanceProfile> = order
            .iter()
            .zip(&dps)
            .map(|(&i, d)| CitingDistanceProfile {
                author: d.author,
                ..cps[i].clone()
            })
            .collect();
        cites = shuffled_c;
        cps = shuffled_p;
        let cmp = compare_models(&dps, &cps, &cites, 50, 10, 1).unwrap();
        assert!(cmp.r2_mean_distance < 0.05, "{cmp:?}");
        assert!(cmp.r2_global < 0.05, "{cmp:?}");
        assert!(cmp.r2_knn < 0.05, "{cmp:?}");
    }

    #[test]
    fn fitted_model_aligns_rows() {
        let (dps, _, cites) = synthetic_bundle(5, 40, [0.5; N_BINS]);
        let mut rev = dps.clone();
        rev.reverse();
        let rev_c: Vec<f64> = cites.iter().rev().copied().collect();
        let a = fit_potential_model(0, &dps, &cites, 5).unwrap();
        let b = fit_potential_model(0, &rev, &rev_c, 5).unwrap();
        assert_eq!(a.potentials(), b.potentials());
        let r = a.row_of(dps[7].author).unwrap();
        assert_eq!(a.citations[r], cites[7]);
    }
}
