//! Staged pipeline over an output directory.
//!
//! Each stage reads the artifacts of the stages it depends on and writes
//! CSV tables whose first line records the corpus hash, the config hash and
//! the seed. A stage refuses to run on missing or stale inputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyses::{
    career_trajectories, field_impact, team_size_impact, trajectory_curves, DEFAULT_CLASS_EDGES,
    DEFAULT_WINDOW,
};
use crate::citation_stats::{
    closeness_curve, conditional_citation_prob, curve_band, fit_exponential_model,
    pairwise_ks_sample, GlobalCitationModel,
};
use crate::corpus::{load_corpus, AuthorId, Corpus, CorpusFormat};
use crate::distances::{
    aggregate_mean_distances, CitingDistanceProfile, DistanceProfile, YearDistances, DEFAULT_CAP,
    N_BINS,
};
use crate::error::{Error, Result};
use crate::graph::{year_giant, YearNetwork};
use crate::matching::{
    build_cohorts, effect_by_bin, match_controls, wilcoxon_signed_rank, Cohorts, Timeline,
    TimelineEntry, TreatmentVar, COVARIATE_NAMES,
};
use crate::potential::{
    compare_models, cross_validate_k, fit_potential_model, standardize_profiles,
};
use crate::sindex::{compute_sindex_field, k_stability, score_population, SIndexScore, Variant};
use crate::synth::{generate_corpus, planted_law, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    Global,
    Field,
    /// Global always, field when the corpus carries labels.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMeasure {
    Citations,
    SPos,
    SPers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding papers.jsonl and citations.jsonl; `<out>/corpus`
    /// when absent.
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub k: usize,
    pub cap: usize,
    /// Citations in the year needed to enter the k-NN population.
    pub min_citations: u64,
    pub variant: VariantChoice,
    pub seed: u64,
    /// Year used for cross-validation, model comparison and the closeness
    /// curve; the last year with enough eligible authors when absent.
    pub evaluation_year: Option<i32>,
    pub folds: usize,
    pub k_grid: Vec<usize>,
    /// k of the model comparison; the best cross-validated k when absent.
    pub compare_k: Option<usize>,
    pub ks_pairs: usize,
    pub ks_min_citing: u64,
    pub band: [f64; 2],
    pub closeness_width: f64,
    pub effect_bins: usize,
    pub effect_base: f64,
    pub team_window: i32,
    /// Defaults to the last year whose citation window is complete.
    pub team_pub_year: Option<i32>,
    pub class_edges: Vec<f64>,
    pub field_min_authors: usize,
    pub trajectory_measure: TrajectoryMeasure,
    pub trajectory_length: usize,
    pub trajectory_clusters: usize,
    pub trajectory_max_iter: usize,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: PathBuf::from("out"),
            first_year: None,
            last_year: None,
            k: 1000,
            cap: DEFAULT_CAP,
            min_citations: 1,
            variant: VariantChoice::Both,
            seed: 1,
            evaluation_year: None,
            folds: 10,
            k_grid: vec![10, 25, 50, 100, 250, 500, 1000],
            compare_k: None,
            ks_pairs: 10_000,
            ks_min_citing: 20,
            band: [0.025, 0.975],
            closeness_width: 0.25,
            effect_bins: 6,
            effect_base: 2.0,
            team_window: DEFAULT_WINDOW,
            team_pub_year: None,
            class_edges: DEFAULT_CLASS_EDGES.to_vec(),
            field_min_authors: 2,
            trajectory_measure: TrajectoryMeasure::SPers,
            trajectory_length: 5,
            trajectory_clusters: 10,
            trajectory_max_iter: 100,
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.cap == 0 || self.cap > DEFAULT_CAP {
            return bad("cap must lie in 1..=9");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return bad("k_grid needs positive entries");
        }
        if !(0.0..=1.0).contains(&self.band[0]) || !(self.band[0]..=1.0).contains(&self.band[1]) {
            return bad("band must be ordered quantiles in [0, 1]");
        }
        if !(self.closeness_width > 0.0) {
            return bad("closeness_width must be positive");
        }
        if let (Some(a), Some(b)) = (self.first_year, self.last_year) {
            if a > b {
                return bad("first_year is after last_year");
            }
        }
        self.synth.validate()
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out.join("corpus"))
    }

    /// Hash of every setting except the two paths, so relocating a run does
    /// not change its artifacts.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.corpus = None;
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Graph,
    Distances,
    Stats,
    Potential,
    Sindex,
    Match,
    Apps,
    Synth,
    All,
}

impl Stage {
    pub const ANALYSIS: [Stage; 8] = [
        Stage::Ingest,
        Stage::Graph,
        Stage::Distances,
        Stage::Stats,
        Stage::Potential,
        Stage::Sindex,
        Stage::Match,
        Stage::Apps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Distances => "distances",
            Stage::Stats => "stats",
            Stage::Potential => "potential",
            Stage::Sindex => "sindex",
            Stage::Match => "match",
            Stage::Apps => "apps",
            Stage::Synth => "synth",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ANALYSIS
            .into_iter()
            .chain([Stage::Synth, Stage::All])
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

pub const INGEST_CSV: &str = "ingest.csv";
pub const GRAPH_CSV: &str = "graph.csv";
pub const NETWORK_DIR: &str = "networks";
pub const PROFILES_CSV: &str = "profiles.csv";
pub const POTENTIALS_CSV: &str = "potentials.csv";
pub const SINDEX_CSV: &str = "sindex.csv";

/// Runs one stage (or all analysis stages) and returns the files written.
pub fn run(stage: Stage, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    if stage == Stage::Synth {
        return run_synth(cfg);
    }
    let corpus = load_corpus(&cfg.corpus_dir(), CorpusFormat::Jsonl)?;
    let ctx = Ctx::new(cfg, &corpus)?;
    let stages: Vec<Stage> = if stage == Stage::All {
        Stage::ANALYSIS.to_vec()
    } else {
        vec![stage]
    };
    let mut written = Vec::new();
    for st in stages {
        log::info!("stage {}", st.name());
        written.extend(match st {
            Stage::Ingest => ctx.ingest()?,
            Stage::Graph => ctx.graph()?,
            Stage::Distances => ctx.distances()?,
            Stage::Stats => ctx.stats()?,
            Stage::Potential => ctx.potential()?,
            Stage::Sindex => ctx.sindex()?,
            Stage::Match => ctx.matching()?,
            Stage::Apps => ctx.apps()?,
            Stage::Synth | Stage::All => unreachable!(),
        });
    }
    Ok(written)
}

fn run_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = generate_corpus(&cfg.synth)?;
    let dir = cfg.corpus_dir();
    corpus.write_jsonl(&dir)?;
    let ctx = Ctx::new(cfg, &corpus)?;
    let law = planted_law(&cfg.synth);
    let rows = (0..N_BINS).map(|x| vec![x.to_string(), law[x].to_string()]);
    let path = ctx.write("synth_law.csv", &["bin", "q"], rows)?;
    Ok(vec![
        dir.join("papers.jsonl"),
        dir.join("citations.jsonl"),
        path,
    ])
}

/// First line of every artifact.
fn provenance_line(corpus_hash: &str, config_hash: &str, seed: u64) -> String {
    format!("# corpus_hash={corpus_hash} config_hash={config_hash} seed={seed}\n")
}

fn fmt_opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A parsed artifact: header plus string rows.
struct Table {
    path: PathBuf,
    cols: BTreeMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.cols
            .get(name)
            .copied()
            .ok_or_else(|| Error::artifact(&self.path, format!("no column `{name}`")))
    }

    fn get<T: FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = self.rows[row].get(col).unwrap_or("");
        s.parse().map_err(|_| {
            Error::artifact(&self.path, format!("row {}: cannot parse `{s}`", row + 1))
        })
    }
}

/// One author-year of the distances stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub dp: DistanceProfile,
    pub cp: CitingDistanceProfile,
    pub citations: f64,
}

pub type YearProfiles = BTreeMap<i32, Vec<ProfileRow>>;

/// Profiles of every giant-component author of `year`, by author id.
pub fn year_profiles(
    corpus: &Corpus,
    prev: Option<&YearNetwork>,
    curr: &YearNetwork,
    year: i32,
    cap: usize,
) -> Vec<ProfileRow> {
    let ctx = YearDistances::new(corpus, prev, curr, year, cap);
    let mut rows: Vec<ProfileRow> = ctx
        .all_profiles()
        .into_iter()
        .map(|(dp, cp)| ProfileRow {
            citations: corpus.citations_received(dp.author, year) as f64,
            dp,
            cp,
        })
        .collect();
    rows.sort_by_key(|r| r.dp.author);
    rows
}

/// [`year_profiles`] for each year, building the networks on the way.
pub fn compute_profiles(
    corpus: &Corpus,
    years: impl IntoIterator<Item = i32>,
    cap: usize,
) -> YearProfiles {
    let mut out = BTreeMap::new();
    let mut prev: Option<(i32, YearNetwork)> = None;
    for y in years {
        let before = match prev.take() {
            Some((py, net)) if py == y - 1 => net,
            _ => year_giant(corpus, y - 1),
        };
        let curr = year_giant(corpus, y);
        out.insert(y, year_profiles(corpus, Some(&before), &curr, y, cap));
        prev = Some((y, curr));
    }
    out
}

/// Rows entering the k-NN population.
pub fn eligible_rows(rows: &[ProfileRow], min_citations: u64) -> Vec<&ProfileRow> {
    rows.iter()
        .filter(|r| r.citations >= min_citations as f64 && r.dp.n_papers > 0)
        .collect()
}

/// Timeline of every profiled author-year; `potentials` holds the
/// eligible ones.
pub fn build_timeline(
    corpus: &Corpus,
    profiles: &YearProfiles,
    potentials: &BTreeMap<(AuthorId, i32), f64>,
) -> Result<Timeline> {
    let keys: Vec<(AuthorId, i32, f64)> = profiles
        .iter()
        .flat_map(|(&y, rows)| rows.iter().map(move |r| (r.dp.author, y, r.citations)))
        .collect();
    let entries: Vec<((AuthorId, i32), TimelineEntry)> = keys
        .par_iter()
        .map(|&(a, y, c)| {
            let s = corpus.career_stats(a, y)?;
            Ok((
                (a, y),
                TimelineEntry {
                    potential: potentials.get(&(a, y)).copied(),
                    citations_in_year: c,
                    career_age: s.career_age as f64,
                    papers_todate: s.papers_todate as f64,
                    collaborators_todate: s.collaborators_todate as f64,
                    citations_todate: s.citations_todate as f64,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(entries.into_iter().collect())
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    corpus: &'a Corpus,
    corpus_hash: String,
    config_hash: String,
    years: Vec<i32>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig, corpus: &'a Corpus) -> Result<Self> {
        let years = match corpus.year_range() {
            Some((lo, hi)) => {
                let lo = cfg.first_year.map_or(lo, |y| y.max(lo));
                let hi = cfg.last_year.map_or(hi, |y| y.min(hi));
                (lo..=hi).collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            cfg,
            corpus,
            corpus_hash: corpus.content_hash(),
            config_hash: cfg.config_hash(),
            years,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn write<R, S>(&self, name: &str, header: &[&str], rows: R) -> Result<PathBuf>
    where
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        let path = self.path(name);
        let mut out =
            provenance_line(&self.corpus_hash, &self.config_hash, self.cfg.seed).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let csv_err = |e: csv::Error| Error::artifact(&path, e);
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.write_record(r.iter().map(|s| s.as_ref()))
                    .map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        log::debug!("wrote {}", path.display());
        Ok(path)
    }

    /// Reads an upstream artifact, which must exist and belong to this
    /// corpus.
    fn read(&self, stage: &'static str, name: &str) -> Result<Table> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage, path });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
        let hash = first
            .strip_prefix("# ")
            .and_then(|h| h.split(' ').find_map(|kv| kv.strip_prefix("corpus_hash=")))
            .ok_or_else(|| Error::artifact(&path, "missing provenance line"))?;
        if hash != self.corpus_hash {
            return Err(Error::artifact(
                &path,
                format!("built from another corpus ({hash}); run stage `{stage}` again"),
            ));
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let cols = r
            .headers()
            .map_err(|e| Error::artifact(&path, e))?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_string(), i))
            .collect();
        let rows = r
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::artifact(&path, e))?;
        Ok(Table { path, cols, rows })
    }

    fn author(&self, t: &Table, row: usize, col: usize) -> Result<AuthorId> {
        let name = t.rows[row].get(col).unwrap_or("");
        self.corpus
            .author_id(name)
            .ok_or_else(|| Error::artifact(&t.path, format!("unknown author `{name}`")))
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let r = self.corpus.report();
        let (lo, hi) = self.corpus.year_range().unzip();
        let rows = [
            ("papers", self.corpus.n_papers().to_string()),
            ("authors", self.corpus.n_authors().to_string()),
            ("links", self.corpus.n_links().to_string()),
            ("dangling_links", r.dangling.to_string()),
            ("time_travel_links", r.time_travel.to_string()),
            ("duplicate_links", r.duplicate.to_string()),
            ("self_links", r.self_links.to_string()),
            ("first_year", fmt_opt(lo)),
            ("last_year", fmt_opt(hi)),
            ("field_labels", self.corpus.has_field_labels().to_string()),
        ]
        .map(|(k, v)| vec![k.to_string(), v]);
        Ok(vec![self.write(INGEST_CSV, &["key", "value"], rows)?])
    }

    fn network_path(&self, year: i32) -> PathBuf {
        self.cfg.out.join(NETWORK_DIR).join(format!("{year}.bin"))
    }

    fn graph(&self) -> Result<Vec<PathBuf>> {
        self.read("ingest", INGEST_CSV)?;
        let dir = self.cfg.out.join(NETWORK_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        // One extra year in front so the first year can blend.
        let years: Vec<i32> = self
            .years
            .first()
            .map(|&y| y - 1)
            .into_iter()
            .chain(self.years.clone())
            .collect();
        let nets: Vec<(i32, usize, YearNetwork)> = years
            .par_iter()
            .map(|&y| {
                (
                    y,
                    self.corpus.active_authors(y).len(),
                    year_giant(self.corpus, y),
                )
            })
            .collect();
        let mut written = Vec::new();
        let mut rows = Vec::new();
        for (y, active, net) in &nets {
            let path = self.network_path(*y);
            let mut buf = Vec::new();
            net.write_binary(&mut buf)
                .map_err(|e| Error::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            let frac = if *active > 0 {
                Some(net.n_nodes() as f64 / *active as f64)
            } else {
                None
            };
            rows.push(vec![
                y.to_string(),
                active.to_string(),
                net.n_nodes().to_string(),
                net.n_edges().to_string(),
                fmt_opt(frac),
            ]);
        }
        written.push(self.write(
            GRAPH_CSV,
            &[
                "year",
                "active_authors",
                "giant_nodes",
                "giant_edges",
                "giant_fraction",
            ],
            rows,
        )?);
        Ok(written)
    }

    fn load_network(&self, year: i32) -> Result<YearNetwork> {
        let path = self.network_path(year);
        let bytes = fs::read(&path).map_err(|_| Error::MissingArtifact {
            stage: "graph",
            path: path.clone(),
        })?;
        let net = YearNetwork::read_binary(&mut bytes.as_slice())
            .map_err(|e| Error::artifact(&path, e))?;
        if net.year() != year {
            return Err(Error::artifact(&path, format!("holds year {}", net.year())));
        }
        Ok(net)
    }

    fn distances(&self) -> Result<Vec<PathBuf>> {
        self.read("graph", GRAPH_CSV)?;
        let mut header = vec!["year".to_string(), "author".into(), "citations".into()];
        header.extend(["n_papers".into(), "sum_half_steps".into()]);
        header.extend((0..N_BINS).map(|x| format!("d{x}")));
        header.extend(["n_citing".into(), "citing_sum_half_steps".into()]);
        header.extend((0..N_BINS).map(|x| format!("c{x}")));
        let mut rows = Vec::new();
        let mut prev = match self.years.first() {
            Some(&y) => Some(self.load_network(y - 1)?),
            None => None,
        };
        for &y in &self.years {
            let curr = self.load_network(y)?;
            for ProfileRow { dp, cp, citations } in
                year_profiles(self.corpus, prev.as_ref(), &curr, y, self.cfg.cap)
            {
                let mut r = vec![
                    y.to_string(),
                    self.corpus.author_name(dp.author).to_string(),
                    citations.to_string(),
                    dp.n_papers.to_string(),
                    dp.sum_half_steps.to_string(),
                ];
                r.extend(dp.counts.iter().map(|c| c.to_string()));
                r.extend([cp.n_citing.to_string(), cp.sum_half_steps.to_string()]);
                r.extend(cp.counts.iter().map(|c| c.to_string()));
                rows.push(r);
            }
            prev = Some(curr);
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        Ok(vec![self.write(PROFILES_CSV, &header, rows)?])
    }

    fn load_profiles(&self) -> Result<BTreeMap<i32, Vec<ProfileRow>>> {
        let t = self.read("distances", PROFILES_CSV)?;
        let (cy, ca, cc) = (t.col("year")?, t.col("author")?, t.col("citations")?);
        let (cn, cs) = (t.col("n_papers")?, t.col("sum_half_steps")?);
        let (ccn, ccs) = (t.col("n_citing")?, t.col("citing_sum_half_steps")?);
        let cd: Vec<usize> = (0..N_BINS)
            .map(|x| t.col(&format!("d{x}")))
            .collect::<Result<_>>()?;
        let ccb: Vec<usize> = (0..N_BINS)
            .map(|x| t.col(&format!("c{x}")))
            .collect::<Result<_>>()?;
        let mut out: BTreeMap<i32, Vec<ProfileRow>> = BTreeMap::new();
        for i in 0..t.rows.len() {
            let year: i32 = t.get(i, cy)?;
            let author = self.author(&t, i, ca)?;
            let mut counts = [0u64; N_BINS];
            let mut citing = [0u64; N_BINS];
            for x in 0..N_BINS {
                counts[x] = t.get(i, cd[x])?;
                citing[x] = t.get(i, ccb[x])?;
            }
            out.entry(year).or_default().push(ProfileRow {
                dp: DistanceProfile {
                    author,
                    year,
                    counts,
                    n_papers: t.get(i, cn)?,
                    sum_half_steps: t.get(i, cs)?,
                },
                cp: CitingDistanceProfile {
                    author,
                    year,
                    counts: citing,
                    n_citing: t.get(i, ccn)?,
                    sum_half_steps: t.get(i, ccs)?,
                },
                citations: t.get(i, cc)?,
            });
        }
        Ok(out)
    }

    fn eligible<'p>(&self, rows: &'p [ProfileRow]) -> Vec<&'p ProfileRow> {
        eligible_rows(rows, self.cfg.min_citations)
    }

    fn evaluation_year(&self, profiles: &BTreeMap<i32, Vec<ProfileRow>>) -> Option<i32> {
        if let Some(y) = self.cfg.evaluation_year {
            return Some(y);
        }
        profiles
            .iter()
            .rev()
            .find(|(_, rows)| self.eligible(rows).len() >= self.cfg.folds)
            .or_else(|| {
                profiles
                    .iter()
                    .rev()
                    .find(|(_, rows)| self.eligible(rows).len() >= 2)
            })
            .map(|(&y, _)| y)
    }

    fn stats(&self) -> Result<Vec<PathBuf>> {
        let profiles = self.load_profiles()?;
        let mut written = Vec::new();

        let rows = profiles.iter().map(|(y, rows)| {
            let dps: Vec<DistanceProfile> = rows.iter().map(|r| r.dp.clone()).collect();
            let cps: Vec<CitingDistanceProfile> = rows.iter().map(|r| r.cp.clone()).collect();
            let (citing, all) = aggregate_mean_distances(&dps, &cps);
            vec![y.to_string(), citing.to_string(), all.to_string()]
        });
        written.push(self.write(
            "aggregate_distances.csv",
            &["year", "mean_citing_distance", "mean_distance"],
            rows.collect::<Vec<_>>(),
        )?);

        let mut global = GlobalCitationModel::default();
        for r in profiles.values().flatten() {
            global.add(&r.dp, &r.cp);
        }
        let rows = (0..N_BINS).map(|x| {
            vec![
                x.to_string(),
                global.papers_at[x].to_string(),
                global.citing_at[x].to_string(),
                fmt_opt(global.probability(x)),
            ]
        });
        written.push(self.write(
            "global_model.csv",
            &["bin", "papers", "citing", "probability"],
            rows,
        )?);

        // Per-author curves of the well-cited cohort.
        let mut conditional = Vec::new();
        let mut citing = Vec::new();
        for r in profiles.values().flatten() {
            if r.cp.n_citing < self.cfg.ks_min_citing.max(1)
                || r.citations < self.cfg.min_citations as f64
            {
                continue;
            }
            if let Some(curve) = conditional_citation_prob(&r.dp, &r.cp)
                .ok()
                .and_then(|c| c.normalized())
            {
                conditional.push(curve);
                citing.push(r.cp.bins());
            }
        }
        let mut ks_rows = Vec::new();
        let mut band_rows = Vec::new();
        for (name, curves, salt) in [
            ("conditional_prob", &conditional, 0),
            ("citing_profile", &citing, 1),
        ] {
            let ks = if curves.len() >= 2 {
                Some(pairwise_ks_sample(
                    curves,
                    self.cfg.ks_pairs,
                    self.cfg.seed ^ salt,
                )?)
            } else {
                None
            };
            ks_rows.push(vec![
                name.to_string(),
                curves.len().to_string(),
                fmt_opt(ks.as_ref().map(|k| k.values.len())),
                fmt_opt(ks.as_ref().map(|k| k.mean)),
            ]);
            if !curves.is_empty() {
                for (x, b) in curve_band(curves, self.cfg.band[0], self.cfg.band[1])
                    .iter()
                    .enumerate()
                {
                    band_rows.push(vec![
                        name.to_string(),
                        x.to_string(),
                        b.mean.to_string(),
                        b.lower.to_string(),
                        b.upper.to_string(),
                    ]);
                }
            }
        }
        written.push(self.write(
            "ks.csv",
            &["measure", "n_curves", "n_pairs", "mean_ks"],
            ks_rows,
        )?);
        written.push(self.write(
            "curve_band.csv",
            &["measure", "bin", "mean", "lower", "upper"],
            band_rows,
        )?);

        let points: Vec<(f64, f64)> = self
            .evaluation_year(&profiles)
            .and_then(|y| profiles.get(&y))
            .map(|rows| {
                self.eligible(rows)
                    .iter()
                    .map(|r| (r.dp.mean_distance(), r.citations))
                    .collect()
            })
            .unwrap_or_default();
        let bins = if points.is_empty() {
            Vec::new()
        } else {
            closeness_curve(&points, self.cfg.closeness_width)?
        };
        let rows = bins.iter().map(|b| {
            vec![
                b.lower.to_string(),
                b.upper.to_string(),
                b.mean_citations.to_string(),
                b.count.to_string(),
            ]
        });
        written.push(self.write(
            "closeness.csv",
            &["lower", "upper", "mean_citations", "count"],
            rows,
        )?);

        let fit = fit_exponential_model(&points);
        if let Err(e) = &fit {
            log::warn!("exponential fit skipped: {e}");
        }
        let rows = fit.ok().map(|f| {
            vec![
                f.p1.to_string(),
                f.p2.to_string(),
                f.p3.to_string(),
                f.d_min.to_string(),
                f.residual.to_string(),
                f.iterations.to_string(),
                f.converged.to_string(),
                f.degenerate.to_string(),
            ]
        });
        written.push(self.write(
            "exp_fit.csv",
            &[
                "p1",
                "p2",
                "p3",
                "d_min",
                "residual",
                "iterations",
                "converged",
                "degenerate",
            ],
            rows,
        )?);
        Ok(written)
    }

    fn potential(&self) -> Result<Vec<PathBuf>> {
        let profiles = self.load_profiles()?;
        let mut written = Vec::new();
        let mut rows = Vec::new();
        for (&y, all) in &profiles {
            let elig = self.eligible(all);
            if elig.len() < 2 {
                log::info!("{y}: {} eligible authors, no potential", elig.len());
                continue;
            }
            let dps: Vec<DistanceProfile> = elig.iter().map(|r| r.dp.clone()).collect();
            let cs: Vec<f64> = elig.iter().map(|r| r.citations).collect();
            let model = fit_potential_model(y, &dps, &cs, self.cfg.k)?;
            for (row, res) in model.results.iter().enumerate() {
                rows.push(vec![
                    y.to_string(),
                    self.corpus.author_name(res.author).to_string(),
                    model.citations[row].to_string(),
                    res.potential.to_string(),
                    res.n_neighbors_used.to_string(),
                ]);
            }
        }
        written.push(self.write(
            POTENTIALS_CSV,
            &["year", "author", "citations", "potential", "n_neighbors"],
            rows,
        )?);

        let mut cv_rows = Vec::new();
        let mut cmp_rows = Vec::new();
        let mut stab_rows = Vec::new();
        let eval = self.evaluation_year(&profiles);
        let elig = eval
            .and_then(|y| profiles.get(&y))
            .map(|r| self.eligible(r))
            .unwrap_or_default();
        if elig.len() >= self.cfg.folds {
            let y = eval.expect("year with eligible authors");
            let dps: Vec<DistanceProfile> = elig.iter().map(|r| r.dp.clone()).collect();
            let cps: Vec<CitingDistanceProfile> = elig.iter().map(|r| r.cp.clone()).collect();
            let cs: Vec<f64> = elig.iter().map(|r| r.citations).collect();
            let m = standardize_profiles(&dps)?;
            let by_author: BTreeMap<AuthorId, f64> = dps
                .iter()
                .map(|d| d.author)
                .zip(cs.iter().copied())
                .collect();
            let row_cites: Vec<f64> = m.authors().iter().map(|a| by_author[a]).collect();
            let cv = cross_validate_k(
                &m,
                &row_cites,
                &self.cfg.k_grid,
                self.cfg.folds,
                self.cfg.seed,
            )?;
            for p in &cv {
                cv_rows.push(vec![
                    y.to_string(),
                    p.k.to_string(),
                    fmt_opt(p.r2),
                    p.note.clone().unwrap_or_default(),
                ]);
            }
            for s in k_stability(y, &dps, &cs, &self.cfg.k_grid)? {
                stab_rows.push(vec![
                    y.to_string(),
                    s.k_from.to_string(),
                    s.k_to.to_string(),
                    s.mean_abs_diff.to_string(),
                ]);
            }
            let k = self.cfg.compare_k.or_else(|| best_k(&cv));
            match k {
                Some(k) => {
                    let c = compare_models(&dps, &cps, &cs, k, self.cfg.folds, self.cfg.seed)?;
                    cmp_rows.push(vec![
                        y.to_string(),
                        c.k.to_string(),
                        c.folds.to_string(),
                        c.r2_mean_distance.to_string(),
                        c.r2_global.to_string(),
                        c.r2_knn.to_string(),
                    ]);
                }
                None => log::warn!("{y}: no k of the grid could be cross-validated"),
            }
        } else {
            log::info!(
                "fewer than {} eligible authors, cross-validation skipped",
                self.cfg.folds
            );
        }
        written.push(self.write("cv_k.csv", &["year", "k", "r2", "note"], cv_rows)?);
        written.push(self.write(
            "k_stability.csv",
            &["year", "k_from", "k_to", "mean_abs_diff_s_pers"],
            stab_rows,
        )?);
        written.push(self.write(
            "model_comparison.csv",
            &[
                "year",
                "k",
                "folds",
                "r2_mean_distance",
                "r2_global",
                "r2_knn",
            ],
            cmp_rows,
        )?);
        Ok(written)
    }

    fn load_potentials(&self) -> Result<BTreeMap<(AuthorId, i32), f64>> {
        let t = self.read("potential", POTENTIALS_CSV)?;
        let (cy, ca, cp) = (t.col("year")?, t.col("author")?, t.col("potential")?);
        let mut out = BTreeMap::new();
        for i in 0..t.rows.len() {
            out.insert((self.author(&t, i, ca)?, t.get(i, cy)?), t.get(i, cp)?);
        }
        Ok(out)
    }

    fn sindex(&self) -> Result<Vec<PathBuf>> {
        self.read("potential", POTENTIALS_CSV)?;
        let profiles = self.load_profiles()?;
        let labels = self.corpus.has_field_labels();
        let want_field = match self.cfg.variant {
            VariantChoice::Global => false,
            VariantChoice::Field if !labels => {
                return Err(Error::NoField("the corpus has no field labels".into()));
            }
            VariantChoice::Field => true,
            VariantChoice::Both => labels,
        };
        let mut scores: Vec<SIndexScore> = Vec::new();
        for (&y, all) in &profiles {
            let elig = self.eligible(all);
            if elig.len() < 2 {
                continue;
            }
            let dps: Vec<DistanceProfile> = elig.iter().map(|r| r.dp.clone()).collect();
            let cs: Vec<f64> = elig.iter().map(|r| r.citations).collect();
            if self.cfg.variant != VariantChoice::Field {
                let model = fit_potential_model(y, &dps, &cs, self.cfg.k)?;
                scores.extend(score_population(&model, &Variant::Global));
            }
            if want_field {
                let fields: Vec<Option<String>> = dps
                    .iter()
                    .map(|d| self.corpus.author_field(d.author, y).map(str::to_string))
                    .collect();
                let f = compute_sindex_field(y, &dps, &cs, &fields, self.cfg.k)?;
                if !f.unlabeled.is_empty() || !f.skipped_fields.is_empty() {
                    log::info!(
                        "{y}: {} unlabeled authors, {} single-author fields left unscored",
                        f.unlabeled.len(),
                        f.skipped_fields.len()
                    );
                }
                scores.extend(f.scores);
            }
        }
        let rows = scores.iter().map(|s| {
            vec![
                s.year.to_string(),
                self.corpus.author_name(s.author).to_string(),
                s.variant.to_string(),
                s.potential.to_string(),
                s.s_pos.to_string(),
                s.s_pers.to_string(),
                s.effective_k.to_string(),
                s.k_clamped.to_string(),
            ]
        });
        Ok(vec![self.write(
            SINDEX_CSV,
            &[
                "year",
                "author",
                "variant",
                "potential",
                "s_pos",
                "s_pers",
                "effective_k",
                "k_clamped",
            ],
            rows,
        )?])
    }

    fn load_scores(&self) -> Result<Vec<SIndexScore>> {
        let t = self.read("sindex", SINDEX_CSV)?;
        let c: Vec<usize> = [
            "year",
            "author",
            "variant",
            "potential",
            "s_pos",
            "s_pers",
            "effective_k",
            "k_clamped",
        ]
        .iter()
        .map(|n| t.col(n))
        .collect::<Result<_>>()?;
        (0..t.rows.len())
            .map(|i| {
                let v = t.rows[i].get(c[2]).unwrap_or("");
                let variant = match v.strip_prefix("field:") {
                    Some(label) => Variant::Field(label.to_string()),
                    None if v == "global" => Variant::Global,
                    None => return Err(Error::artifact(&t.path, format!("unknown variant `{v}`"))),
                };
                Ok(SIndexScore {
                    year: t.get(i, c[0])?,
                    author: self.author(&t, i, c[1])?,
                    variant,
                    potential: t.get(i, c[3])?,
                    s_pos: t.get(i, c[4])?,
                    s_pers: t.get(i, c[5])?,
                    effective_k: t.get(i, c[6])?,
                    k_clamped: t.get(i, c[7])?,
                })
            })
            .collect()
    }

    fn timeline(&self) -> Result<Timeline> {
        build_timeline(
            self.corpus,
            &self.load_profiles()?,
            &self.load_potentials()?,
        )
    }

    fn matching(&self) -> Result<Vec<PathBuf>> {
        let timeline = self.timeline()?;
        let mut balance = Vec::new();
        let mut effects = Vec::new();
        let mut summary = Vec::new();
        let mut pair_rows = Vec::new();
        for var in [TreatmentVar::Potential, TreatmentVar::Citations] {
            let mut cohorts = Cohorts::default();
            for &y in &self.years {
                cohorts.extend(build_cohorts(&timeline, var, y));
            }
            let name = var.name();
            let base = vec![
                name.to_string(),
                cohorts.treated.len().to_string(),
                cohorts.controls.len().to_string(),
                cohorts.excluded.to_string(),
            ];
            if cohorts.treated.is_empty() || cohorts.controls.is_empty() {
                log::info!("{name}: empty cohort, nothing to match");
                summary.push(
                    base.into_iter()
                        .chain(std::iter::repeat_n(String::new(), 11))
                        .collect(),
                );
                continue;
            }
            let set = match_controls(&cohorts.treated, &cohorts.controls)?;
            for (c, cov) in COVARIATE_NAMES.iter().enumerate() {
                balance.push(vec![
                    name.to_string(),
                    cov.to_string(),
                    set.balance_before[c].to_string(),
                    set.balance_after[c].to_string(),
                ]);
            }
            if !set.pairs.is_empty() {
                for b in effect_by_bin(
                    &set,
                    &cohorts.treated,
                    &cohorts.controls,
                    self.cfg.effect_bins,
                    self.cfg.effect_base,
                )? {
                    effects.push(vec![
                        name.to_string(),
                        b.lower.to_string(),
                        b.upper.to_string(),
                        b.n_pairs.to_string(),
                        b.raw.to_string(),
                        b.adjusted.to_string(),
                    ]);
                }
            }
            let diffs: Vec<f64> = set
                .pairs
                .iter()
                .map(|p| {
                    cohorts.treated[p.treated].outcome_next
                        - cohorts.controls[p.control].outcome_next
                })
                .collect();
            let w = wilcoxon_signed_rank(&diffs);
            summary.push(
                base.into_iter()
                    .chain([
                        set.pairs.len().to_string(),
                        set.unmatched_treated.to_string(),
                        w.w.to_string(),
                        w.w_plus.to_string(),
                        w.w_minus.to_string(),
                        w.n_used.to_string(),
                        w.n_zero.to_string(),
                        w.z.to_string(),
                        w.p_value.to_string(),
                        w.degenerate.to_string(),
                        w.small_sample.to_string(),
                    ])
                    .collect(),
            );
            for p in &set.pairs {
                let (t, c) = (&cohorts.treated[p.treated], &cohorts.controls[p.control]);
                pair_rows.push(vec![
                    name.to_string(),
                    self.corpus.author_name(t.author).to_string(),
                    t.year.to_string(),
                    self.corpus.author_name(c.author).to_string(),
                    c.year.to_string(),
                    p.distance.to_string(),
                    t.treatment_delta.to_string(),
                    t.outcome_next.to_string(),
                    c.outcome_next.to_string(),
                ]);
            }
        }
        Ok(vec![
            self.write(
                "match_balance.csv",
                &["treatment", "covariate", "smd_before", "smd_after"],
                balance,
            )?,
            self.write(
                "match_effects.csv",
                &["treatment", "lower", "upper", "n_pairs", "raw", "adjusted"],
                effects,
            )?,
            self.write(
                "match_summary.csv",
                &[
                    "treatment",
                    "n_treated",
                    "n_controls",
                    "n_excluded",
                    "n_pairs",
                    "unmatched_treated",
                    "wilcoxon_w",
                    "w_plus",
                    "w_minus",
                    "n_used",
                    "n_zero",
                    "z",
                    "p_value",
                    "degenerate",
                    "small_sample",
                ],
                summary,
            )?,
            self.write(
                "match_pairs.csv",
                &[
                    "treatment",
                    "treated_author",
                    "treated_year",
                    "control_author",
                    "control_year",
                    "distance",
                    "treatment_delta",
                    "treated_outcome",
                    "control_outcome",
                ],
                pair_rows,
            )?,
        ])
    }

    fn apps(&self) -> Result<Vec<PathBuf>> {
        let scores = self.load_scores()?;
        let global: Vec<SIndexScore> = scores
            .iter()
            .filter(|s| s.variant == Variant::Global)
            .cloned()
            .collect();
        let field: Vec<SIndexScore> = scores
            .iter()
            .filter(|s| s.variant != Variant::Global)
            .cloned()
            .collect();
        let mut meta = Vec::new();
        let mut written = Vec::new();

        let last = self.years.last().copied();
        let pub_year = self
            .cfg
            .team_pub_year
            .or_else(|| last.map(|y| (y - self.cfg.team_window + 1).max(self.years[0])));
        let mut team_rows = Vec::new();
        let mut slope_rows = Vec::new();
        if let Some(py) = pub_year {
            let s_pos: BTreeMap<AuthorId, f64> = global
                .iter()
                .filter(|s| s.year == py)
                .map(|s| (s.author, s.s_pos))
                .collect();
            let t = team_size_impact(
                self.corpus,
                &s_pos,
                py,
                self.cfg.team_window,
                &self.cfg.class_edges,
            )?;
            for r in &t.rows {
                team_rows.push(vec![
                    r.class.to_string(),
                    r.lower.to_string(),
                    r.upper.to_string(),
                    r.team_size.to_string(),
                    r.mean_citations.to_string(),
                    r.n_papers.to_string(),
                ]);
            }
            for s in &t.slopes {
                slope_rows.push(vec![
                    s.class.to_string(),
                    s.slope.to_string(),
                    s.ci_low.to_string(),
                    s.ci_high.to_string(),
                    s.n_papers.to_string(),
                ]);
            }
            meta.push(vec!["team_pub_year".to_string(), py.to_string()]);
            meta.push(vec![
                "team_excluded_papers".to_string(),
                t.excluded_papers.to_string(),
            ]);
        }
        written.push(self.write(
            "team_size.csv",
            &[
                "class",
                "lower",
                "upper",
                "team_size",
                "mean_citations",
                "n_papers",
            ],
            team_rows,
        )?);
        written.push(self.write(
            "team_slopes.csv",
            &["class", "slope", "ci_low", "ci_high", "n_papers"],
            slope_rows,
        )?);

        let mut field_rows = Vec::new();
        let mut summary_rows = Vec::new();
        let field_year = field.iter().map(|s| s.year).max();
        if let Some(fy) = field_year {
            match field_impact(self.corpus, &global, &field, fy, self.cfg.field_min_authors) {
                Ok(t) => {
                    for r in &t.rows {
                        field_rows.push(vec![
                            r.field.clone(),
                            r.n_authors.to_string(),
                            r.mean_citations.to_string(),
                            r.mean_s_pos_global.to_string(),
                            r.mean_s_pers_global.to_string(),
                            r.mean_s_pos_field.to_string(),
                            r.mean_s_pers_field.to_string(),
                        ]);
                    }
                    for s in &t.summary {
                        summary_rows.push(vec![
                            s.column.clone(),
                            s.mean.to_string(),
                            s.std.to_string(),
                            s.cv.to_string(),
                        ]);
                    }
                    meta.push(vec!["field_year".to_string(), fy.to_string()]);
                }
                Err(e) => log::warn!("field table skipped: {e}"),
            }
        }
        written.push(self.write(
            "fields.csv",
            &[
                "field",
                "n_authors",
                "mean_citations",
                "mean_s_pos_global",
                "mean_s_pers_global",
                "mean_s_pos_field",
                "mean_s_pers_field",
            ],
            field_rows,
        )?);
        written.push(self.write(
            "field_summary.csv",
            &["column", "mean", "std", "cv"],
            summary_rows,
        )?);

        let values: BTreeMap<(AuthorId, i32), f64> = global
            .iter()
            .map(|s| {
                let v = match self.cfg.trajectory_measure {
                    TrajectoryMeasure::Citations => {
                        self.corpus.citations_received(s.author, s.year) as f64
                    }
                    TrajectoryMeasure::SPos => s.s_pos,
                    TrajectoryMeasure::SPers => s.s_pers,
                };
                ((s.author, s.year), v)
            })
            .collect();
        let len = self.cfg.trajectory_length;
        let mut assign_rows = Vec::new();
        let mut centroid_rows = Vec::new();
        if let Some(last) = last.filter(|_| len > 0) {
            let start = last - len as i32 + 1;
            let curves = trajectory_curves(&values, start, len);
            match career_trajectories(
                &curves,
                self.cfg.trajectory_clusters,
                self.cfg.trajectory_max_iter,
                self.cfg.seed,
            ) {
                Ok(c) => {
                    for (a, cl) in c.assignments.iter() {
                        assign_rows.push(vec![
                            self.corpus.author_name(*a).to_string(),
                            cl.to_string(),
                        ]);
                    }
                    for (i, centroid) in c.centroids.iter().enumerate() {
                        let mut r = vec![
                            i.to_string(),
                            c.sizes[i].to_string(),
                            c.empty_clusters.contains(&i).to_string(),
                        ];
                        r.extend(centroid.iter().map(|v| v.to_string()));
                        centroid_rows.push(r);
                    }
                    meta.push(vec!["trajectory_start".to_string(), start.to_string()]);
                    meta.push(vec![
                        "trajectory_objective".to_string(),
                        fmt_opt(c.objective.last()),
                    ]);
                    meta.push(vec![
                        "trajectory_converged".to_string(),
                        c.converged.to_string(),
                    ]);
                }
                Err(e) => log::warn!("trajectory clustering skipped: {e}"),
            }
        }
        written.push(self.write(
            "trajectory_assignments.csv",
            &["author", "cluster"],
            assign_rows,
        )?);
        let mut header = vec!["cluster".to_string(), "size".into(), "empty".into()];
        header.extend((0..len).map(|t| format!("t{t}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        written.push(self.write("trajectory_centroids.csv", &header, centroid_rows)?);
        written.push(self.write("apps_summary.csv", &["key", "value"], meta)?);
        Ok(written)
    }
}

/// Highest cross-validated R², smallest k on ties.
pub fn best_k(cv: &[crate::potential::CvPoint]) -> Option<usize> {
    cv.iter()
        .filter_map(|p| p.r2.map(|r| (p.k, r)))
        .fold(None, |best: Option<(usize, f64)>, (k, r)| match best {
            Some((bk, br)) if br > r || (br == r && bk < k) => Some((bk, br)),
            _ => Some((k, r)),
        })
        .map(|(k, _)| k)
}
