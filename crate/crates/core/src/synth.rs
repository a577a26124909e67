//! Synthetic corpora with a planted citation-distance law.
//!
//! Authors sit on a ring; fields are arcs of it. Every author debuts with
//! a few solo papers and afterwards leads team papers whose co-authors are
//! repeat collaborators, ring neighbours or uniform picks. Once a year's
//! papers exist, the year's networks and blended distances are measured
//! with the same code as the pipeline, and each paper cites each network
//! author with probability `law[bin]`. A successful draw links the paper to
//! `m` distinct solo papers of that author, where `m` grows with the
//! author's field scale and with the share of their profile inside
//! `visibility_bins`. Only solo papers are cited, so the citing-paper count
//! at each distance follows the law exactly.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorId, Corpus, CorpusBuilder, PaperRecord};
use crate::distances::{bin_distance, ProfileScratch, YearDistances, DEFAULT_CAP, N_BINS};
use crate::error::{Error, Result};
use crate::graph::{year_giant, YearNetwork};

pub const DEFAULT_LAW: [f64; N_BINS] = [
    0.9, 0.1, 0.03, 0.01, 0.005, 0.003, 0.002, 0.001, 0.001, 0.001,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub label: String,
    /// Relative arc length on the ring.
    pub share: f64,
    /// Multiplier on the links per successful citation draw (>= 1).
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub first_year: i32,
    pub n_years: usize,
    /// Fraction of authors debuting in the first year; the rest debut
    /// uniformly over the following years.
    pub initial_fraction: f64,
    pub debut_papers: usize,
    /// Expected team papers led per publishing author and year.
    pub paper_rate: f64,
    /// Log-normal spread of per-author productivity.
    pub productivity_sigma: f64,
    /// Weight of team sizes 1, 2, ...
    pub team_size_weights: Vec<f64>,
    pub repeat_prob: f64,
    /// Probability a new collaborator is a ring neighbour instead of a
    /// uniform pick.
    pub locality: f64,
    pub ring_width: f64,
    /// Yearly probability that an author stops leading papers.
    pub retire_prob: f64,
    pub law: Vec<f64>,
    pub visibility_gain: f64,
    /// Inclusive bin range whose profile share raises link multiplicity.
    pub visibility_bins: [usize; 2],
    /// Empty means unlabeled papers with scale 1.
    pub fields: Vec<FieldSpec>,
    /// Maximum links per citing paper; unlimited when absent.
    pub reference_budget: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_authors: 5000,
            first_year: 1991,
            n_years: 20,
            initial_fraction: 0.4,
            debut_papers: 12,
            paper_rate: 0.5,
            productivity_sigma: 1.8,
            team_size_weights: vec![0.15, 0.3, 0.3, 0.15, 0.1],
            repeat_prob: 0.5,
            locality: 0.995,
            ring_width: 0.003,
            retire_prob: 0.03,
            law: DEFAULT_LAW.to_vec(),
            visibility_gain: 10.0,
            visibility_bins: [1, 3],
            fields: Vec::new(),
            reference_budget: None,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// Two fields of equal size whose citation scales differ threefold.
    pub fn two_field() -> Self {
        Self {
            fields: vec![
                FieldSpec {
                    label: "alpha".into(),
                    share: 0.5,
                    scale: 1.0,
                },
                FieldSpec {
                    label: "beta".into(),
                    share: 0.5,
                    scale: 3.0,
                },
            ],
            visibility_gain: 3.0,
            ..Self::default()
        }
    }

    fn max_scale(&self) -> f64 {
        self.fields.iter().map(|f| f.scale).fold(1.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_authors == 0 || self.n_years == 0 {
            return bad("need at least one author and one year".into());
        }
        if self.law.len() != N_BINS || self.law.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad(format!("law needs {N_BINS} probabilities in [0, 1]"));
        }
        for (name, p) in [
            ("initial_fraction", self.initial_fraction),
            ("repeat_prob", self.repeat_prob),
            ("locality", self.locality),
            ("retire_prob", self.retire_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.team_size_weights.is_empty()
            || self.team_size_weights.iter().any(|w| *w < 0.0)
            || self.team_size_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("team size weights must be non-negative with a positive sum".into());
        }
        if self.team_size_weights.len() > self.n_authors {
            return bad(format!(
                "team size {} exceeds the population of {}",
                self.team_size_weights.len(),
                self.n_authors
            ));
        }
        if self.paper_rate < 0.0 || self.productivity_sigma < 0.0 || self.ring_width <= 0.0 {
            return bad("rates and widths must be non-negative".into());
        }
        if self.visibility_gain < 0.0
            || self.visibility_bins[0] > self.visibility_bins[1]
            || self.visibility_bins[1] >= N_BINS
        {
            return bad("visibility bins must be an ordered range of bins".into());
        }
        if self.fields.iter().any(|f| f.scale < 1.0 || f.share <= 0.0) {
            return bad("field scales must be >= 1 and shares positive".into());
        }
        let most_links = (self.max_scale() * (1.0 + self.visibility_gain)).ceil() as usize;
        if self.debut_papers < most_links.max(1) {
            return bad(format!(
                "debut_papers must be >= {most_links} so every link has a distinct target"
            ));
        }
        if self.reference_budget == Some(0) {
            return bad("reference budget must be positive".into());
        }
        Ok(())
    }
}

pub fn planted_law(cfg: &SynthConfig) -> [f64; N_BINS] {
    std::array::from_fn(|x| cfg.law.get(x).copied().unwrap_or(0.0))
}

const STRUCTURE: u64 = 0x5354_5255;
const CITE_DRAW: u64 = 0x4349_5445;
const CITE_COUNT: u64 = 0x4d55_4c54;
const BUDGET: u64 = 0x4255_4447;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one (purpose, year, item) triple.
fn substream(seed: u64, tag: u64, year: i32, item: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed ^ tag) ^ year as u64) ^ item))
}

fn author_name(i: usize) -> String {
    format!("a{i:05}")
}

struct Population {
    ring: Vec<f64>,
    field: Vec<Option<usize>>,
    productivity: Vec<f64>,
    debut: Vec<i32>,
}

fn setup(cfg: &SynthConfig) -> Population {
    let mut rng = substream(cfg.seed, STRUCTURE, i32::MIN, 0);
    let n = cfg.n_authors;
    let ring: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let total_share: f64 = cfg.fields.iter().map(|f| f.share).sum();
    let field = ring
        .iter()
        .map(|&pos| {
            let mut acc = 0.0;
            for (i, f) in cfg.fields.iter().enumerate() {
                acc += f.share / total_share;
                if pos < acc {
                    return Some(i);
                }
            }
            cfg.fields.len().checked_sub(1)
        })
        .collect();
    let ln = LogNormal::new(
        -cfg.productivity_sigma.powi(2) / 2.0,
        cfg.productivity_sigma,
    )
    .expect("sigma validated");
    let productivity = (0..n).map(|_| ln.sample(&mut rng)).collect();
    let span = cfg.n_years.saturating_sub(2).max(1) as i32;
    let debut = (0..n)
        .map(|_| {
            if rng.random::<f64>() < cfg.initial_fraction {
                cfg.first_year
            } else {
                cfg.first_year + 1 + rng.random_range(0..span)
            }
        })
        .collect();
    Population {
        ring,
        field,
        productivity,
        debut,
    }
}

struct State {
    records: Vec<PaperRecord>,
    /// Solo papers of each author as (year, id).
    solo: Vec<Vec<(i32, String)>>,
    collaborators: Vec<Vec<usize>>,
    retired: Vec<bool>,
    links: Vec<(String, String)>,
}

fn pick_size(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i + 1;
        }
        u -= w;
    }
    weights.len()
}

fn generate_team_papers(cfg: &SynthConfig, pop: &Population, st: &mut State, year: i32) {
    let mut publishing: Vec<usize> = (0..cfg.n_authors)
        .filter(|&a| pop.debut[a] < year && !st.retired[a])
        .collect();
    if publishing.is_empty() {
        return;
    }
    publishing.sort_by(|&a, &b| pop.ring[a].total_cmp(&pop.ring[b]).then(a.cmp(&b)));
    let positions: Vec<f64> = publishing.iter().map(|&a| pop.ring[a]).collect();
    let offset = Normal::new(0.0, cfg.ring_width).expect("width validated");

    let mut leads = publishing.clone();
    leads.sort_unstable();
    for lead in leads {
        let mut rng = substream(cfg.seed, STRUCTURE, year, lead as u64);
        let rate = cfg.paper_rate * pop.productivity[lead];
        let n_papers = if rate > 0.0 {
            Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize
        } else {
            0
        };
        for k in 0..n_papers {
            let size = pick_size(&cfg.team_size_weights, &mut rng).min(publishing.len());
            let mut team = vec![lead];
            let mut attempts = 0;
            while team.len() < size && attempts < 50 * size {
                attempts += 1;
                let prior = &st.collaborators[lead];
                let cand = if !prior.is_empty() && rng.random::<f64>() < cfg.repeat_prob {
                    prior[rng.random_range(0..prior.len())]
                } else if rng.random::<f64>() < cfg.locality {
                    let target = (pop.ring[lead] + offset.sample(&mut rng)).rem_euclid(1.0);
                    let i = positions.partition_point(|&p| p < target) % publishing.len();
                    publishing[i]
                } else {
                    publishing[rng.random_range(0..publishing.len())]
                };
                if !team.contains(&cand) && !st.retired[cand] && pop.debut[cand] < year {
                    team.push(cand);
                }
            }
            let id = format!("t{year}-{lead:05}-{k}");
            if team.len() == 1 {
                st.solo[lead].push((year, id.clone()));
            }
            for &a in &team {
                for &b in &team {
                    if a != b && !st.collaborators[a].contains(&b) {
                        st.collaborators[a].push(b);
                    }
                }
            }
            st.records.push(PaperRecord {
                id,
                year,
                authors: team.iter().map(|&a| author_name(a)).collect(),
                field: pop.field[lead].map(|f| cfg.fields[f].label.clone()),
            });
        }
    }
    for a in publishing {
        if substream(cfg.seed, STRUCTURE ^ 1, year, a as u64).random::<f64>() < cfg.retire_prob {
            st.retired[a] = true;
        }
    }
}

fn add_debuts(cfg: &SynthConfig, pop: &Population, st: &mut State, year: i32) {
    for a in (0..cfg.n_authors).filter(|&a| pop.debut[a] == year) {
        for k in 0..cfg.debut_papers {
            let id = format!("d{a:05}-{k}");
            st.solo[a].push((year, id.clone()));
            st.records.push(PaperRecord {
                id,
                year,
                authors: vec![author_name(a)],
                field: pop.field[a].map(|f| cfg.fields[f].label.clone()),
            });
        }
    }
}

fn build(records: &[PaperRecord], links: &[(String, String)]) -> Corpus {
    let mut b = CorpusBuilder::new();
    for r in records {
        b.add_paper(r.clone()).expect("generated records are valid");
    }
    for (c, d) in links {
        b.add_citation(c.clone(), d.clone());
    }
    b.finish()
}

/// Citation links drawn for the papers of `year`.
fn draw_citations(
    cfg: &SynthConfig,
    pop: &Population,
    st: &State,
    corpus: &Corpus,
    prev: Option<&YearNetwork>,
    curr: &YearNetwork,
    year: i32,
) -> Vec<(String, String)> {
    let ctx = YearDistances::new(corpus, prev, curr, year, DEFAULT_CAP);
    let law = planted_law(cfg);
    let [lo, hi] = cfg.visibility_bins;
    let per_author: Vec<Vec<(String, String)>> = (0..curr.n_nodes())
        .into_par_iter()
        .map_init(ProfileScratch::default, |scratch, node| {
            let author: AuthorId = curr.author(node);
            let name = corpus.author_name(author);
            let gi: usize = name[1..].parse().expect("generated author name");
            let dists = ctx
                .blended_distances(author, scratch)
                .expect("node is in the network");
            let bins: Vec<Option<usize>> = dists
                .iter()
                .map(|d| d.map(|h| bin_distance(h, DEFAULT_CAP)))
                .collect();
            let defined = bins.iter().flatten().count();
            let in_band = bins
                .iter()
                .flatten()
                .filter(|&&b| b >= lo && b <= hi)
                .count();
            let share = if defined > 0 {
                in_band as f64 / defined as f64
            } else {
                0.0
            };
            let scale = pop.field[gi].map_or(1.0, |f| cfg.fields[f].scale);
            let expected = scale * (1.0 + cfg.visibility_gain * share);
            let targets: Vec<&str> = st.solo[gi]
                .iter()
                .filter(|(y, _)| *y < year)
                .map(|(_, id)| id.as_str())
                .collect();

            let mut draw = substream(cfg.seed, CITE_DRAW, year, gi as u64);
            let mut count = substream(cfg.seed, CITE_COUNT, year, gi as u64);
            let mut out = Vec::new();
            for (j, b) in bins.iter().enumerate() {
                let Some(b) = b else { continue };
                if draw.random::<f64>() >= law[*b] || targets.is_empty() {
                    continue;
                }
                let m = (expected.floor() as usize
                    + usize::from(count.random::<f64>() < expected.fract()))
                .clamp(1, targets.len());
                let citing = corpus.paper_id(ctx.papers()[j]);
                for t in index::sample(&mut count, targets.len(), m) {
                    out.push((citing.to_string(), targets[t].to_string()));
                }
            }
            out
        })
        .collect();
    let mut links: Vec<(String, String)> = per_author.into_iter().flatten().collect();
    if let Some(budget) = cfg.reference_budget {
        links.sort();
        let mut kept = Vec::with_capacity(links.len());
        for group in links.chunk_by(|a, b| a.0 == b.0) {
            if group.len() <= budget {
                kept.extend_from_slice(group);
            } else {
                let key = corpus.paper_idx(&group[0].0).map_or(0, |p| p.0 as u64);
                let mut g = group.to_vec();
                g.shuffle(&mut substream(cfg.seed, BUDGET, year, key));
                g.truncate(budget);
                g.sort();
                kept.extend(g);
            }
        }
        links = kept;
    }
    links
}

/// Generates a corpus; the same config always yields the same corpus.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let pop = setup(cfg);
    let mut st = State {
        records: Vec::new(),
        solo: vec![Vec::new(); cfg.n_authors],
        collaborators: vec![Vec::new(); cfg.n_authors],
        retired: vec![false; cfg.n_authors],
        links: Vec::new(),
    };
    let mut prev: Option<YearNetwork> = None;
    for t in 0..cfg.n_years {
        let year = cfg.first_year + t as i32;
        add_debuts(cfg, &pop, &mut st, year);
        generate_team_papers(cfg, &pop, &mut st, year);
        let corpus = build(&st.records, &[]);
        let curr = year_giant(&corpus, year);
        let links = draw_citations(cfg, &pop, &st, &corpus, prev.as_ref(), &curr, year);
        log::debug!(
            "synth {year}: {} papers, giant {} authors, {} links",
            corpus.papers_in_year(year).len(),
            curr.n_nodes(),
            links.len()
        );
        st.links.extend(links);
        prev = Some(curr);
    }
    Ok(build(&st.records, &st.links))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::YearDistances;

    fn small() -> SynthConfig {
        SynthConfig {
            n_authors: 300,
            n_years: 8,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_corpus(&SynthConfig {
            seed: 12,
            ..small()
        })
        .unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.report().dropped(), 0);
    }

    #[test]
    fn zero_law_means_no_links() {
        let cfg = SynthConfig {
            law: vec![0.0; N_BINS],
            ..small()
        };
        let c = generate_corpus(&cfg).unwrap();
        assert_eq!(c.n_links(), 0);
        assert!(c.n_papers() > 0);
    }

    #[test]
    fn saturated_law_links_every_pair() {
        let cfg = SynthConfig {
            n_authors: 3,
            n_years: 6,
            team_size_weights: vec![0.0, 0.5, 0.5],
            law: vec![1.0; N_BINS],
            initial_fraction: 1.0,
            ..SynthConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mut checked = 0;
        let mut prev = None;
        for year in cfg.first_year..cfg.first_year + cfg.n_years as i32 {
            let curr = year_giant(&c, year);
            let ctx = YearDistances::new(&c, prev.as_ref(), &curr, year, DEFAULT_CAP);
            for &p in ctx.papers() {
                for &a in curr.nodes() {
                    let cites_a = c.papers_of(a).iter().any(|&q| c.cited_by(q).contains(&p));
                    assert!(
                        cites_a,
                        "paper {} misses author {}",
                        c.paper_id(p),
                        c.author_name(a)
                    );
                    checked += 1;
                }
            }
            prev = Some(curr);
        }
        assert!(checked > 0);
    }

    #[test]
    fn halving_the_law_halves_links() {
        let full = generate_corpus(&small()).unwrap();
        let half_law: Vec<f64> = DEFAULT_LAW.iter().map(|q| q / 2.0).collect();
        let half = generate_corpus(&SynthConfig {
            law: half_law,
            ..small()
        })
        .unwrap();
        assert_eq!(full.n_papers(), half.n_papers());
        let ratio = half.n_links() as f64 / full.n_links() as f64;
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn budget_caps_references() {
        let cfg = SynthConfig {
            reference_budget: Some(2),
            ..small()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mut per_citing = std::collections::BTreeMap::new();
        for &(citing, _) in c.links() {
            *per_citing.entry(citing).or_insert(0) += 1;
        }
        assert!(per_citing.values().all(|&n| n <= 2));
    }

    #[test]
    fn planted_law_is_the_config_law() {
        let cfg = small();
        assert_eq!(planted_law(&cfg).to_vec(), cfg.law);
        assert_eq!(planted_law(&SynthConfig::default()), DEFAULT_LAW);
    }

    #[test]
    fn infeasible_configs_error() {
        let too_big = SynthConfig {
            n_authors: 2,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_corpus(&too_big), Err(Error::Config(_))));
        let bad_law = SynthConfig {
            law: vec![1.5; N_BINS],
            ..small()
        };
        assert!(generate_corpus(&bad_law).is_err());
        let few_targets = SynthConfig {
            debut_papers: 1,
            ..small()
        };
        assert!(generate_corpus(&few_targets).is_err());
    }

    #[test]
    fn fields_follow_ring_arcs() {
        let cfg = SynthConfig {
            n_authors: 400,
            n_years: 4,
            ..SynthConfig::two_field()
        };
        let c = generate_corpus(&cfg).unwrap();
        assert!(c.has_field_labels());
        let labels: std::collections::BTreeSet<&str> = c
            .authors()
            .filter_map(|a| c.author_field(a, 1994))
            .collect();
        assert_eq!(labels, ["alpha", "beta"].into());
    }
}
