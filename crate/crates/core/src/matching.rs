//! Matched comparison of authors whose potential (or citations) increased
//! against similar authors whose did not.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::citation_stats::average_ranks;
use crate::corpus::AuthorId;
use crate::error::{Error, Result};

pub const N_COVARIATES: usize = 6;
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = [
    "network_potential",
    "citations_in_year",
    "career_age",
    "papers_todate",
    "collaborators_todate",
    "citations_todate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentVar {
    Potential,
    Citations,
}

impl TreatmentVar {
    pub fn name(self) -> &'static str {
        match self {
            TreatmentVar::Potential => "potential",
            TreatmentVar::Citations => "citations",
        }
    }
}

/// What is known about one author in one year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    /// Absent when the author was not eligible for a potential that year.
    pub potential: Option<f64>,
    pub citations_in_year: f64,
    pub career_age: f64,
    pub papers_todate: f64,
    pub collaborators_todate: f64,
    pub citations_todate: f64,
}

pub type Timeline = BTreeMap<(AuthorId, i32), TimelineEntry>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub author: AuthorId,
    pub year: i32,
    pub treatment_delta: f64,
    /// Measured in the year before the change.
    pub covariates: [f64; N_COVARIATES],
    /// Change of the outcome variable from `year` to `year + 1`.
    pub outcome_next: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohorts {
    pub treated: Vec<CohortMember>,
    pub controls: Vec<CohortMember>,
    /// Authors present in `year` lacking one of the other needed years.
    pub excluded: usize,
}

impl Cohorts {
    pub fn extend(&mut self, other: Cohorts) {
        self.treated.extend(other.treated);
        self.controls.extend(other.controls);
        self.excluded += other.excluded;
    }
}

fn value(e: &TimelineEntry, var: TreatmentVar) -> Option<f64> {
    match var {
        TreatmentVar::Potential => e.potential,
        TreatmentVar::Citations => Some(e.citations_in_year),
    }
}

/// Splits authors by the change of `treatment_var` from `year - 1` to
/// `year`; the outcome is the other variable's change to `year + 1`.
pub fn build_cohorts(timeline: &Timeline, treatment_var: TreatmentVar, year: i32) -> Cohorts {
    let outcome_var = match treatment_var {
        TreatmentVar::Potential => TreatmentVar::Citations,
        TreatmentVar::Citations => TreatmentVar::Potential,
    };
    let mut out = Cohorts::default();
    for (&(author, y), now) in timeline {
        if y != year {
            continue;
        }
        let member = (|| {
            let before = timeline.get(&(author, year - 1))?;
            let after = timeline.get(&(author, year + 1))?;
            let delta = value(now, treatment_var)? - value(before, treatment_var)?;
            let outcome = value(after, outcome_var)? - value(now, outcome_var)?;
            let covariates = [
                before.potential?,
                before.citations_in_year,
                before.career_age,
                before.papers_todate,
                before.collaborators_todate,
                before.citations_todate,
            ];
            covariates
                .iter()
                .all(|c| c.is_finite())
                .then_some(CohortMember {
                    author,
                    year,
                    treatment_delta: delta,
                    covariates,
                    outcome_next: outcome,
                })
        })();
        match member {
            Some(m) if m.treatment_delta > 0.0 => out.treated.push(m),
            Some(m) => out.controls.push(m),
            None => out.excluded += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the treated list.
    pub treated: usize,
    /// Index into the control list.
    pub control: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairSet {
    pub pairs: Vec<MatchedPair>,
    pub balance_before: [f64; N_COVARIATES],
    pub balance_after: [f64; N_COVARIATES],
    pub unmatched_treated: usize,
}

fn column(members: &[&CohortMember], c: usize) -> Vec<f64> {
    members.iter().map(|m| m.covariates[c]).collect()
}

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// |mean_T - mean_C| / sqrt((var_T + var_C) / 2) per covariate.
pub fn standardized_mean_differences(
    treated: &[&CohortMember],
    controls: &[&CohortMember],
) -> [f64; N_COVARIATES] {
    std::array::from_fn(|c| {
        if treated.is_empty() || controls.is_empty() {
            return f64::NAN;
        }
        let (mt, vt) = sample_moments(&column(treated, c));
        let (mc, vc) = sample_moments(&column(controls, c));
        let pooled = ((vt + vc) / 2.0).sqrt();
        let diff = (mt - mc).abs();
        if pooled > 0.0 {
            diff / pooled
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    })
}

fn member_key(m: &CohortMember) -> (AuthorId, i32) {
    (m.author, m.year)
}

/// Greedy nearest-neighbor matching without replacement on covariates
/// standardized over treated and controls together.
pub fn match_controls(
    treated: &[CohortMember],
    controls: &[CohortMember],
) -> Result<MatchedPairSet> {
    if controls.is_empty() {
        return Err(Error::InvalidInput("no controls to match against".into()));
    }
    let all: Vec<&CohortMember> = treated.iter().chain(controls).collect();
    let mut shift = [0.0; N_COVARIATES];
    let mut scale = [1.0; N_COVARIATES];
    for c in 0..N_COVARIATES {
        let (m, v) = sample_moments(&column(&all, c));
        shift[c] = m;
        scale[c] = if v > 0.0 { v.sqrt() } else { 0.0 };
    }
    let z = |m: &CohortMember| -> [f64; N_COVARIATES] {
        std::array::from_fn(|c| {
            if scale[c] > 0.0 {
                (m.covariates[c] - shift[c]) / scale[c]
            } else {
                0.0
            }
        })
    };
    let zt: Vec<[f64; N_COVARIATES]> = treated.par_iter().map(z).collect();
    let zc: Vec<[f64; N_COVARIATES]> = controls.par_iter().map(z).collect();

    let mut order: Vec<usize> = (0..treated.len()).collect();
    order.sort_by(|&a, &b| {
        let (ta, tb) = (&treated[a], &treated[b]);
        tb.treatment_delta
            .abs()
            .total_cmp(&ta.treatment_delta.abs())
            .then(member_key(ta).cmp(&member_key(tb)))
    });
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::new();
    for t in order {
        let mut best: Option<(f64, usize)> = None;
        for (c, zc) in zc.iter().enumerate() {
            if used[c] {
                continue;
            }
            let d2: f64 = zt[t].iter().zip(zc).map(|(a, b)| (a - b) * (a - b)).sum();
            let better = match best {
                None => true,
                Some((bd, bc)) => {
                    d2 < bd || (d2 == bd && member_key(&controls[c]) < member_key(&controls[bc]))
                }
            };
            if better {
                best = Some((d2, c));
            }
        }
        let Some((d2, c)) = best else { break };
        used[c] = true;
        pairs.push(MatchedPair {
            treated: t,
            control: c,
            distance: d2.sqrt(),
        });
    }
    let all_t: Vec<&CohortMember> = treated.iter().collect();
    let all_c: Vec<&CohortMember> = controls.iter().collect();
    let mt: Vec<&CohortMember> = pairs.iter().map(|p| &treated[p.treated]).collect();
    let mc: Vec<&CohortMember> = pairs.iter().map(|p| &controls[p.control]).collect();
    Ok(MatchedPairSet {
        balance_before: standardized_mean_differences(&all_t, &all_c),
        balance_after: standardized_mean_differences(&mt, &mc),
        unmatched_treated: treated.len() - pairs.len(),
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectBin {
    pub lower: f64,
    pub upper: f64,
    pub n_pairs: usize,
    /// Mean outcome change of the treated.
    pub raw: f64,
    /// `raw` minus the mean outcome change of their matched controls.
    pub adjusted: f64,
}

/// Pairs grouped by treatment magnitude into geometric bins of ratio
/// `base`, starting at the smallest treated delta. Empty bins are omitted.
pub fn effect_by_bin(
    set: &MatchedPairSet,
    treated: &[CohortMember],
    controls: &[CohortMember],
    n_bins: usize,
    base: f64,
) -> Result<Vec<EffectBin>> {
    if set.pairs.is_empty() {
        return Err(Error::InvalidInput("no matched pairs".into()));
    }
    if n_bins == 0 || !(base > 1.0) {
        return Err(Error::Config(
            "effect bins need n_bins >= 1 and base > 1".into(),
        ));
    }
    let mags: Vec<f64> = set
        .pairs
        .iter()
        .map(|p| treated[p.treated].treatment_delta.abs())
        .collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lo > 0.0) {
        return Err(Error::InvalidInput(
            "treated deltas must be positive".into(),
        ));
    }
    let mut acc: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for (p, &mag) in set.pairs.iter().zip(&mags) {
        let mut b = 0;
        while b + 1 < n_bins && lo * base.powi(b as i32 + 1) <= mag {
            b += 1;
        }
        let e = acc.entry(b).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += treated[p.treated].outcome_next;
        e.2 += controls[p.control].outcome_next;
    }
    Ok(acc
        .into_iter()
        .map(|(b, (n, t, c))| {
            let raw = t / n as f64;
            EffectBin {
                lower: lo * base.powi(b as i32),
                upper: if b + 1 == n_bins {
                    f64::INFINITY
                } else {
                    lo * base.powi(b as i32 + 1)
                },
                n_pairs: n,
                raw,
                adjusted: raw - c / n as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-)
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_used: usize,
    pub n_zero: usize,
    pub z: f64,
    pub p_value: f64,
    /// Every difference was zero.
    pub degenerate: bool,
    /// Fewer than 6 non-zero differences: the normal approximation is poor.
    pub small_sample: bool,
}

/// Two-sided signed-rank test, zeros dropped, average ranks for ties and a
/// tie-corrected normal approximation.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let n_zero = differences.len() - nonzero.len();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            w: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_used: 0,
            n_zero,
            z: 0.0,
            p_value: 1.0,
            degenerate: true,
            small_sample: true,
        };
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let w_minus = nf * (nf + 1.0) / 2.0 - w_plus;
    let w = w_plus.min(w_minus);

    let mut ties: BTreeMap<u64, f64> = BTreeMap::new();
    for a in &abs {
        *ties.entry(a.to_bits()).or_default() += 1.0;
    }
    let tie_term: f64 = ties.values().map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = if var > 0.0 {
        (w - mean) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    let p_value = (2.0 * normal.cdf(-z.abs())).min(1.0);
    WilcoxonResult {
        w,
        w_plus,
        w_minus,
        n_used: n,
        n_zero,
        z,
        p_value,
        degenerate: false,
        small_sample: n < 6,
    }
}
