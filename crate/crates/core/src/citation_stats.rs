//! Statistics over distance profiles: citation probability by distance,
//! KS dispersion between authors, closeness-vs-citations curves and the two
//! simple citation models (mean-distance exponential fit and pooled
//! probability by distance).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{CitingDistanceProfile, DistanceProfile, N_BINS};
use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-9;

/// P_i(c=1 | d=x) per bin, `None` where the author has no paper at x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCitationCurve {
    pub values: [Option<f64>; N_BINS],
    /// P_i(c=1)
    pub base_rate: f64,
}

impl ConditionalCitationCurve {
    /// The curve rescaled to sum to one over its defined bins, undefined
    /// bins set to zero. `None` when every defined value is zero.
    pub fn normalized(&self) -> Option<[f64; N_BINS]> {
        let total: f64 = self.values.iter().flatten().sum();
        if total <= 0.0 {
            return None;
        }
        let mut out = [0.0; N_BINS];
        for (o, v) in out.iter_mut().zip(&self.values) {
            *o = v.unwrap_or(0.0) / total;
        }
        Some(out)
    }

    /// P_i(d | c=1) recovered by multiplying back with P_i(d).
    pub fn invert(&self, dp: &DistanceProfile) -> [f64; N_BINS] {
        let p = dp.bins();
        let mut out = [0.0; N_BINS];
        if self.base_rate > 0.0 {
            for x in 0..N_BINS {
                out[x] = self.values[x].unwrap_or(0.0) * p[x] / self.base_rate;
            }
        }
        out
    }
}

/// Bayes inversion from raw counts: n_citing_at(x) / n_papers_at(x).
pub fn conditional_citation_prob(
    dp: &DistanceProfile,
    cp: &CitingDistanceProfile,
) -> Result<ConditionalCitationCurve> {
    if dp.n_papers == 0 {
        return Err(Error::Degenerate(
            "author has no papers at a defined distance".into(),
        ));
    }
    let mut values = [None; N_BINS];
    for x in 0..N_BINS {
        if dp.counts[x] > 0 {
            values[x] = Some(cp.counts[x] as f64 / dp.counts[x] as f64);
        }
    }
    Ok(ConditionalCitationCurve {
        values,
        base_rate: cp.n_citing as f64 / dp.n_papers as f64,
    })
}

fn check_normalized(d: &[f64; N_BINS]) -> Result<()> {
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || d.iter().any(|&v| v < -NORMALIZATION_TOL) {
        return Err(Error::InvalidInput(format!(
            "distribution sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// KS statistic between two distributions over the 10 distance bins.
pub fn ks_statistic(a: &[f64; N_BINS], b: &[f64; N_BINS]) -> Result<f64> {
    check_normalized(a)?;
    check_normalized(b)?;
    let (mut ca, mut cb, mut best) = (0.0, 0.0, 0.0f64);
    for x in 0..N_BINS {
        ca += a[x];
        cb += b[x];
        best = best.max((ca - cb).abs());
    }
    Ok(best.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSample {
    pub values: Vec<f64>,
    pub mean: f64,
}

/// KS values for `n_pairs` random unordered pairs. Pairs are drawn up
/// front from the seed, so results do not depend on thread scheduling.
pub fn pairwise_ks_sample(dists: &[[f64; N_BINS]], n_pairs: usize, seed: u64) -> Result<KsSample> {
    if dists.len() < 2 {
        return Err(Error::InvalidInput(
            "pairwise KS needs at least two distributions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dists.len();
    let pairs: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| ks_statistic(&dists[i], &dists[j]))
        .collect::<Result<Vec<f64>>>()?;
    let mean = mean(&values);
    Ok(KsSample { values, mean })
}

/// Per-bin mean with an inner quantile band across many curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn curve_band(curves: &[[f64; N_BINS]], lower_q: f64, upper_q: f64) -> Vec<BandPoint> {
    (0..N_BINS)
        .map(|x| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[x]).collect();
            col.sort_by(f64::total_cmp);
            BandPoint {
                mean: mean(&col),
                lower: quantile_sorted(&col, lower_q),
                upper: quantile_sorted(&col, upper_q),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosenessBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_citations: f64,
    pub count: usize,
}

/// Mean citations per mean-distance bin of width `bin_width`. Empty bins
/// are not reported.
pub fn closeness_curve(points: &[(f64, f64)], bin_width: f64) -> Result<Vec<ClosenessBin>> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput("bin width must be positive".into()));
    }
    let mut bins: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
    for &(d, c) in points {
        let e = bins
            .entry((d / bin_width).floor() as i64)
            .or_insert((0.0, 0));
        e.0 += c;
        e.1 += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(i, (sum, count))| ClosenessBin {
            lower: i as f64 * bin_width,
            upper: (i + 1) as f64 * bin_width,
            mean_citations: sum / count as f64,
            count,
        })
        .collect())
}

/// `log10(c) = p1 * exp(-p2 * (d - d_min)) + p3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFitParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub d_min: f64,
    /// Sum of squared residuals in log10 space.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Flat fit: no usable decay (p1 or p2 collapsed to zero).
    pub degenerate: bool,
}

impl ExpFitParams {
    pub fn predict_log10(&self, d: f64) -> f64 {
        self.p1 * (-self.p2 * (d - self.d_min)).exp() + self.p3
    }

    pub fn predict_citations(&self, d: f64) -> f64 {
        10f64.powf(self.predict_log10(d))
    }
}

const FIT_MAX_ITER: usize = 500;
const FIT_STEP_TOL: f64 = 1e-8;

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Levenberg-Marquardt fit of log10(citations) against mean distance.
pub fn fit_exponential_model(points: &[(f64, f64)]) -> Result<ExpFitParams> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, c)| c > 0.0)
        .map(|&(d, c)| (d, c.log10()))
        .collect();
    if data.len() < 3 {
        return Err(Error::InvalidInput(
            "exponential fit needs at least 3 points with citations > 0".into(),
        ));
    }
    let d_min = data.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let y_min = data.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = data.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let sse = |t: &[f64; 3]| -> f64 {
        data.iter()
            .map(|&(d, y)| {
                let r = y - (t[0] * (-t[1] * (d - d_min)).exp() + t[2]);
                r * r
            })
            .sum()
    };

    let mut theta = [y_max - y_min, 1.0, y_min];
    let mut cost = sse(&theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(d, y) in &data {
            let e = (-theta[1] * (d - d_min)).exp();
            let j = [e, -theta[0] * (d - d_min) * e, 1.0];
            let r = y - (theta[0] * e + theta[2]);
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut step = None;
        while lambda < 1e16 {
            let mut damped = jtj;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * (jtj[a][a] + 1e-12);
            }
            if let Some(delta) = solve3(damped, jtr) {
                let mut cand = [
                    theta[0] + delta[0],
                    theta[1] + delta[1],
                    theta[2] + delta[2],
                ];
                cand[1] = cand[1].max(0.0);
                let c = sse(&cand);
                if c <= cost {
                    let moved = (0..3)
                        .map(|a| (cand[a] - theta[a]).abs())
                        .fold(0.0, f64::max);
                    step = Some((cand, c, moved));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        match step {
            Some((cand, c, moved)) => {
                theta = cand;
                cost = c;
                if moved < FIT_STEP_TOL {
                    converged = true;
                    break;
                }
            }
            // no damping level improves the cost: at a minimum
            None => {
                converged = true;
                break;
            }
        }
    }
    let degenerate = theta[0].abs() < 1e-9 || theta[1] < 1e-9;
    if !converged {
        log::warn!("exponential fit did not converge in {FIT_MAX_ITER} iterations");
    }
    Ok(ExpFitParams {
        p1: theta[0],
        p2: theta[1],
        p3: theta[2],
        d_min,
        residual: cost,
        iterations,
        converged,
        degenerate,
    })
}

/// Probability that a paper at distance x cites an author, pooled over
/// authors by counting papers and citing papers at each distance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalCitationModel {
    pub papers_at: [u64; N_BINS],
    pub citing_at: [u64; N_BINS],
}

impl GlobalCitationModel {
    pub fn add(&mut self, dp: &DistanceProfile, cp: &CitingDistanceProfile) {
        for x in 0..N_BINS {
            self.papers_at[x] += dp.counts[x];
            self.citing_at[x] += cp.counts[x];
        }
    }

    pub fn probability(&self, x: usize) -> Option<f64> {
        (self.papers_at[x] > 0).then(|| self.citing_at[x] as f64 / self.papers_at[x] as f64)
    }

    pub fn table(&self) -> [Option<f64>; N_BINS] {
        std::array::from_fn(|x| self.probability(x))
    }

    /// Expected number of citing papers: sum over x of P(c|x) times the
    /// author's paper count at x.
    pub fn predict(&self, dp: &DistanceProfile) -> f64 {
        (0..N_BINS)
            .map(|x| self.probability(x).unwrap_or(0.0) * dp.counts[x] as f64)
            .sum()
    }
}

pub fn global_citation_model(
    profiles: &[DistanceProfile],
    citing: &[CitingDistanceProfile],
) -> Result<GlobalCitationModel> {
    if profiles.is_empty() || profiles.len() != citing.len() {
        return Err(Error::InvalidInput(
            "global model needs aligned, non-empty profile sets".into(),
        ));
    }
    let mut m = GlobalCitationModel::default();
    for (dp, cp) in profiles.iter().zip(citing) {
        m.add(dp, cp);
    }
    Ok(m)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    mean(&xs.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput(
            "pearson needs two equal-length samples of size >= 2".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// R² of an ordinary least-squares line of `actual` on `predicted`; zero
/// when either side has no variance.
pub fn linear_fit_r2(predicted: &[f64], actual: &[f64]) -> f64 {
    match pearson(predicted, actual) {
        Ok(r) => r * r,
        Err(_) => 0.0,
    }
}

/// 1 - SS_res / SS_tot; zero when `actual` has no variance.
pub fn coefficient_of_determination(predicted: &[f64], actual: &[f64]) -> f64 {
    let m = mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - m) * (a - m)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    1.0 - ss_res / ss_tot
}
