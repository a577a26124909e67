//! Percentile ranks of potential (`s_pos`) and of realized citations within
//! the comparison group (`s_pers`).

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AuthorId;
use crate::distances::DistanceProfile;
use crate::error::{Error, Result};
use crate::potential::{fit_potential_model, PotentialModel};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Global,
    Field(String),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Global => write!(f, "global"),
            Variant::Field(label) => write!(f, "field:{label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SIndexScore {
    pub author: AuthorId,
    pub year: i32,
    pub variant: Variant,
    pub potential: f64,
    pub s_pos: f64,
    pub s_pers: f64,
    pub effective_k: usize,
    /// The population was too small for the requested k.
    pub k_clamped: bool,
}

/// 100 * (#below + #equal / 2) / n.
pub fn percentile_rank(sample: &[f64], v: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidInput(
            "percentile rank of an empty sample".into(),
        ));
    }
    let below = sample.iter().filter(|&&s| s < v).count();
    let equal = sample.iter().filter(|&&s| s == v).count();
    Ok(100.0 * (below as f64 + 0.5 * equal as f64) / sample.len() as f64)
}

/// Same as [`percentile_rank`] on an ascending sample.
pub fn percentile_rank_sorted(sorted: &[f64], v: f64) -> f64 {
    let below = sorted.partition_point(|&s| s < v);
    let upto = sorted.partition_point(|&s| s <= v);
    100.0 * (below as f64 + 0.5 * (upto - below) as f64) / sorted.len() as f64
}

fn score_row(
    model: &PotentialModel,
    row: usize,
    sorted_potentials: &[f64],
    variant: &Variant,
) -> SIndexScore {
    let ns = &model.neighbor_sets[row];
    let reference: Vec<f64> = ns
        .neighbors
        .iter()
        .map(|n| model.citations[n.row])
        .collect();
    let potential = model.results[row].potential;
    SIndexScore {
        author: model.matrix.author(row),
        year: model.year,
        variant: variant.clone(),
        potential,
        s_pos: percentile_rank_sorted(sorted_potentials, potential),
        s_pers: percentile_rank(&reference, model.citations[row])
            .expect("neighbor set is non-empty"),
        effective_k: ns.effective_k(),
        k_clamped: ns.is_clamped(),
    }
}

fn sorted_potentials(model: &PotentialModel) -> Vec<f64> {
    let mut p = model.potentials();
    p.sort_by(f64::total_cmp);
    p
}

/// Score of one author of a fitted population.
pub fn compute_sindex(
    model: &PotentialModel,
    author: AuthorId,
    variant: &Variant,
) -> Result<SIndexScore> {
    let row = model.row_of(author).ok_or_else(|| {
        Error::InvalidInput(format!(
            "author {} has no neighbor set in {}",
            author.0, model.year
        ))
    })?;
    Ok(score_row(model, row, &sorted_potentials(model), variant))
}

/// Scores of every author of a fitted population, sorted by author id.
pub fn score_population(model: &PotentialModel, variant: &Variant) -> Vec<SIndexScore> {
    let sorted = sorted_potentials(model);
    (0..model.matrix.n_rows())
        .into_par_iter()
        .map(|r| score_row(model, r, &sorted, variant))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct FieldScoring {
    /// Sorted by author id.
    pub scores: Vec<SIndexScore>,
    /// Authors without a field label.
    pub unlabeled: Vec<AuthorId>,
    /// Fields with a single author, which cannot be ranked.
    pub skipped_fields: Vec<(String, AuthorId)>,
}

impl FieldScoring {
    pub fn score_of(&self, author: AuthorId) -> Result<&SIndexScore> {
        if self.unlabeled.binary_search(&author).is_ok() {
            return Err(Error::NoField(author.0.to_string()));
        }
        self.scores
            .binary_search_by_key(&author, |s| s.author)
            .map(|i| &self.scores[i])
            .map_err(|_| Error::InvalidInput(format!("author {} was not scored", author.0)))
    }
}

/// The global pipeline run separately inside each field: neighbors,
/// standardization and the `s_pos` population are all restricted to it.
pub fn compute_sindex_field(
    year: i32,
    profiles: &[DistanceProfile],
    citations: &[f64],
    fields: &[Option<String>],
    k: usize,
) -> Result<FieldScoring> {
    if profiles.len() != citations.len() || profiles.len() != fields.len() {
        return Err(Error::InvalidInput("field inputs are not aligned".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut out = FieldScoring::default();
    for (i, f) in fields.iter().enumerate() {
        match f {
            Some(label) => groups.entry(label.as_str()).or_default().push(i),
            None => out.unlabeled.push(profiles[i].author),
        }
    }
    for (label, members) in groups {
        if members.len() < 2 {
            out.skipped_fields
                .push((label.to_string(), profiles[members[0]].author));
            continue;
        }
        let dps: Vec<DistanceProfile> = members.iter().map(|&i| profiles[i].clone()).collect();
        let cs: Vec<f64> = members.iter().map(|&i| citations[i]).collect();
        let model = fit_potential_model(year, &dps, &cs, k)?;
        if model
            .neighbor_sets
            .first()
            .is_some_and(|ns| ns.is_clamped())
        {
            log::info!(
                "field {label}: {} authors, effective k {}",
                members.len(),
                members.len() - 1
            );
        }
        out.scores
            .extend(score_population(&model, &Variant::Field(label.to_string())));
    }
    out.scores.sort_by_key(|s| s.author);
    out.unlabeled.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KStability {
    pub k_from: usize,
    pub k_to: usize,
    /// Mean over authors of |s_pers(k_from) - s_pers(k_to)|.
    pub mean_abs_diff: f64,
}

/// Ranking stability between consecutive values of an ascending k grid.
/// Diagnostic only; k is chosen by cross-validation.
pub fn k_stability(
    year: i32,
    profiles: &[DistanceProfile],
    citations: &[f64],
    k_grid: &[usize],
) -> Result<Vec<KStability>> {
    let mut ks: Vec<usize> = k_grid.iter().copied().filter(|&k| k >= 1).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut prev: Option<(usize, Vec<f64>)> = None;
    let mut out = Vec::new();
    for k in ks {
        let model = fit_potential_model(year, profiles, citations, k)?;
        let s: Vec<f64> = score_population(&model, &Variant::Global)
            .iter()
            .map(|x| x.s_pers)
            .collect();
        if let Some((k_from, p)) = &prev {
            let mad = p.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.len() as f64;
            out.push(KStability {
                k_from: *k_from,
                k_to: k,
                mean_abs_diff: mad,
            });
        }
        prev = Some((k, s));
    }
    Ok(out)
}
