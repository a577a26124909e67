//! Application tables: team size against the best-positioned author, field
//! means before and after normalization, and clustering of career curves.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{AuthorId, Corpus};
use crate::error::{Error, Result};
use crate::sindex::SIndexScore;

pub const DEFAULT_CLASS_EDGES: [f64; 5] = [0.0, 50.0, 80.0, 95.0, 100.0];
pub const DEFAULT_WINDOW: i32 = 2;

/// Index of the class holding `v`; the last class is closed on the right.
pub fn class_of(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len().checked_sub(1)?;
    (0..n).find(|&c| v >= edges[c] && (v < edges[c + 1] || (c + 1 == n && v <= edges[c + 1])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamRow {
    pub class: usize,
    pub lower: f64,
    pub upper: f64,
    pub team_size: usize,
    pub mean_citations: f64,
    pub n_papers: usize,
}

/// Least-squares slope of citations on team size within one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSlope {
    pub class: usize,
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_papers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSizeTable {
    pub pub_year: i32,
    pub window: i32,
    pub rows: Vec<TeamRow>,
    pub slopes: Vec<ClassSlope>,
    /// Papers of the year without any scored author.
    pub excluded_papers: usize,
}

/// OLS slope with a 95% t interval; `None` below 3 points or without
/// spread in x.
pub fn slope_with_ci(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).ok()?.inverse_cdf(0.975);
    Some((slope, slope - t * se, slope + t * se))
}

/// Citations received by `p` from papers published in
/// `[year(p), year(p) + window - 1]`.
pub fn windowed_citations(corpus: &Corpus, p: crate::corpus::PaperIdx, window: i32) -> usize {
    let y = corpus.paper_year(p);
    corpus
        .cited_by(p)
        .iter()
        .filter(|&&c| {
            let cy = corpus.paper_year(c);
            cy >= y && cy < y + window
        })
        .count()
}

pub fn team_size_impact(
    corpus: &Corpus,
    s_pos: &BTreeMap<AuthorId, f64>,
    pub_year: i32,
    window: i32,
    class_edges: &[f64],
) -> Result<TeamSizeTable> {
    if class_edges.len() < 2 || class_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "class edges must be increasing with >= 2 entries".into(),
        ));
    }
    if window < 1 {
        return Err(Error::Config("citation window must be >= 1 year".into()));
    }
    let mut groups: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    let mut per_class: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut excluded = 0;
    for &p in corpus.papers_in_year(pub_year) {
        let best = corpus
            .paper_authors(p)
            .iter()
            .filter_map(|a| s_pos.get(a).copied())
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        let Some(class) = best.and_then(|b| class_of(class_edges, b)) else {
            excluded += 1;
            continue;
        };
        let size = corpus.paper_authors(p).len();
        let cites = windowed_citations(corpus, p, window) as f64;
        let g = groups.entry((class, size)).or_insert((0.0, 0));
        g.0 += cites;
        g.1 += 1;
        per_class
            .entry(class)
            .or_default()
            .push((size as f64, cites));
    }
    let rows = groups
        .into_iter()
        .map(|((class, team_size), (sum, n))| TeamRow {
            class,
            lower: class_edges[class],
            upper: class_edges[class + 1],
            team_size,
            mean_citations: sum / n as f64,
            n_papers: n,
        })
        .collect();
    let slopes = per_class
        .into_iter()
        .filter_map(|(class, pts)| {
            slope_with_ci(&pts).map(|(slope, ci_low, ci_high)| ClassSlope {
                class,
                slope,
                ci_low,
                ci_high,
                n_papers: pts.len(),
            })
        })
        .collect();
    Ok(TeamSizeTable {
        pub_year,
        window,
        rows,
        slopes,
        excluded_papers: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub field: String,
    pub n_authors: usize,
    pub mean_citations: f64,
    pub mean_s_pos_global: f64,
    pub mean_s_pers_global: f64,
    pub mean_s_pos_field: f64,
    pub mean_s_pers_field: f64,
}

/// Mean, population standard deviation and their ratio across fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTable {
    pub year: i32,
    pub rows: Vec<FieldRow>,
    pub summary: Vec<FieldSummary>,
}

pub const FIELD_COLUMNS: [&str; 5] = [
    "citations",
    "s_pos_global",
    "s_pers_global",
    "s_pos_field",
    "s_pers_field",
];

fn row_values(r: &FieldRow) -> [f64; 5] {
    [
        r.mean_citations,
        r.mean_s_pos_global,
        r.mean_s_pers_global,
        r.mean_s_pos_field,
        r.mean_s_pers_field,
    ]
}

pub fn summarize_fields(rows: &[FieldRow]) -> Vec<FieldSummary> {
    FIELD_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let vals: Vec<f64> = rows.iter().map(|r| row_values(r)[c]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            FieldSummary {
                column: name.to_string(),
                mean,
                std,
                cv: if mean != 0.0 { std / mean } else { f64::NAN },
            }
        })
        .collect()
}

/// Per-field means over authors holding both a global and a field score.
pub fn field_impact(
    corpus: &Corpus,
    scores_global: &[SIndexScore],
    scores_field: &[SIndexScore],
    year: i32,
    min_authors: usize,
) -> Result<FieldTable> {
    let field_by_author: BTreeMap<AuthorId, &SIndexScore> = scores_field
        .iter()
        .filter(|s| s.year == year)
        .map(|s| (s.author, s))
        .collect();
    let mut acc: BTreeMap<&str, (usize, [f64; 5])> = BTreeMap::new();
    for g in scores_global.iter().filter(|s| s.year == year) {
        let (Some(label), Some(f)) = (
            corpus.author_field(g.author, year),
            field_by_author.get(&g.author),
        ) else {
            continue;
        };
        let e = acc.entry(label).or_insert((0, [0.0; 5]));
        e.0 += 1;
        let v = [
            corpus.citations_received(g.author, year) as f64,
            g.s_pos,
            g.s_pers,
            f.s_pos,
            f.s_pers,
        ];
        for (s, x) in e.1.iter_mut().zip(v) {
            *s += x;
        }
    }
    let rows: Vec<FieldRow> = acc
        .into_iter()
        .filter(|(_, (n, _))| *n >= min_authors.max(1))
        .map(|(field, (n, s))| {
            let m = s.map(|x| x / n as f64);
            FieldRow {
                field: field.to_string(),
                n_authors: n,
                mean_citations: m[0],
                mean_s_pos_global: m[1],
                mean_s_pers_global: m[2],
                mean_s_pos_field: m[3],
                mean_s_pers_field: m[4],
            }
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::NoField(format!(
            "no field with >= {min_authors} labeled, scored authors in {year}"
        )));
    }
    Ok(FieldTable {
        year,
        summary: summarize_fields(&rows),
        rows,
    })
}

/// Authors with a value in every year of `[start_year, start_year + length)`.
pub fn trajectory_curves(
    values: &BTreeMap<(AuthorId, i32), f64>,
    start_year: i32,
    length: usize,
) -> BTreeMap<AuthorId, Vec<f64>> {
    let mut out = BTreeMap::new();
    let authors: std::collections::BTreeSet<AuthorId> = values.keys().map(|k| k.0).collect();
    for a in authors {
        let curve: Option<Vec<f64>> = (0..length as i32)
            .map(|t| values.get(&(a, start_year + t)).copied())
            .collect();
        if let Some(c) = curve {
            out.insert(a, c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Sorted by author id.
    pub assignments: Vec<(AuthorId, usize)>,
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub empty_clusters: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq(m, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding.
pub fn career_trajectories(
    curves: &BTreeMap<AuthorId, Vec<f64>>,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterResult> {
    if k == 0 || curves.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} curves cannot form {k} clusters",
            curves.len()
        )));
    }
    let authors: Vec<AuthorId> = curves.keys().copied().collect();
    let data: Vec<&Vec<f64>> = curves.values().collect();
    let len = data[0].len();
    if data.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidInput("curves differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![data[rng.random_range(0..data.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = data.iter().map(|x| nearest(&centroids, x).1).collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(&mut rng),
            // every point coincides with a centroid
            Err(_) => rng.random_range(0..data.len()),
        };
        centroids.push(data[next].clone());
    }

    let mut assign = vec![usize::MAX; data.len()];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let step: Vec<(usize, f64)> = data.par_iter().map(|x| nearest(&centroids, x)).collect();
        objective.push(step.iter().map(|s| s.1).sum());
        let new_assign: Vec<usize> = step.iter().map(|s| s.0).collect();
        if new_assign == assign {
            converged = true;
            break;
        }
        assign = new_assign;
        let mut sums = vec![vec![0.0; len]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in data.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut sizes = vec![0; k];
    for &c in &assign {
        sizes[c] += 1;
    }
    Ok(ClusterResult {
        assignments: authors.into_iter().zip(assign).collect(),
        empty_clusters: (0..k).filter(|&c| sizes[c] == 0).collect(),
        centroids,
        sizes,
        objective,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::paper;
    use crate::corpus::CorpusBuilder;
    use crate::sindex::Variant;

    fn toy() -> Corpus {
        let mut b = CorpusBuilder::new();
        for rec in [
            paper("p1", 2000, &["A"]),
            paper("p2", 2000, &["A", "B"]),
            paper("p3", 2000, &["B", "C", "D"]),
            paper("p4", 2000, &["C"]),
            paper("p5", 2000, &["D", "E"]),
            paper("p6", 2000, &["E"]),
            paper("q1", 2000, &["X"]),
            paper("q2", 2001, &["X"]),
            paper("q3", 2002, &["X"]),
        ] {
            b.add_paper(rec).unwrap();
        }
        for (c, d) in [
            ("q1", "p1"),
            ("q2", "p1"),
            ("q3", "p1"),
            ("q2", "p2"),
            ("q1", "p3"),
            ("q2", "p3"),
            ("q2", "p4"),
            ("q2", "p6"),
        ] {
            b.add_citation(c, d);
        }
        b.finish()
    }

    #[test]
    fn class_edges() {
        let e = DEFAULT_CLASS_EDGES;
        assert_eq!(class_of(&e, 0.0), Some(0));
        assert_eq!(class_of(&e, 49.99), Some(0));
        assert_eq!(class_of(&e, 95.0), Some(3));
        assert_eq!(class_of(&e, 100.0), Some(3));
        assert_eq!(class_of(&e, 100.5), None);
    }

    #[test]
    fn team_table_by_hand() {
        let c = toy();
        let s: BTreeMap<AuthorId, f64> = [("A", 97.0), ("B", 60.0), ("C", 10.0), ("D", 90.0)]
            .iter()
            .map(|(n, v)| (c.author_id(n).unwrap(), *v))
            .collect();
        let t = team_size_impact(&c, &s, 2000, 2, &DEFAULT_CLASS_EDGES).unwrap();
        // p1 (A): size 1, class 3, cites q1,q2 (q3 outside window) = 2
        // p2 (A,B): size 2, class 3, 1
        // p3 (B,C,D): max 90 -> class 2, size 3, 2
        // p4 (C): class 0, size 1, 1
        // p5 (D,E): class 2, size 2, 0
        // p6 (E), q1 (X): unscored
        let got: Vec<(usize, usize, f64, usize)> = t
            .rows
            .iter()
            .map(|r| (r.class, r.team_size, r.mean_citations, r.n_papers))
            .collect();
        assert_eq!(
            got,
            vec![
                (0, 1, 1.0, 1),
                (2, 2, 0.0, 1),
                (2, 3, 2.0, 1),
                (3, 1, 2.0, 1),
                (3, 2, 1.0, 1)
            ]
        );
        assert_eq!(t.excluded_papers, 2);
        // weighted row means equal the plain mean over included papers
        let total: f64 = t
            .rows
            .iter()
            .map(|r| r.mean_citations * r.n_papers as f64)
            .sum();
        let n: usize = t.rows.iter().map(|r| r.n_papers).sum();
        assert_eq!(total / n as f64, 6.0 / 5.0);
    }

    #[test]
    fn solo_paper_class() {
        let c = toy();
        let s: BTreeMap<AuthorId, f64> = [(c.author_id("C").unwrap(), 55.0)].into();
        let t = team_size_impact(&c, &s, 2000, 2, &DEFAULT_CLASS_EDGES).unwrap();
        assert_eq!(t.rows[0].class, 1);
        assert_eq!(
            t.rows.iter().find(|r| r.team_size == 1).unwrap().n_papers,
            1
        );
    }

    #[test]
    fn slope_interval() {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        let (s, lo, hi) = slope_with_ci(&pts).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && (hi - lo).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = (0..40)
            .map(|i| ((i % 4) as f64, ((i * 7) % 5) as f64))
            .collect();
        let (_, lo, hi) = slope_with_ci(&flat).unwrap();
        assert!(lo < 0.0 && hi > 0.0);
        assert!(slope_with_ci(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    fn score(a: AuthorId, s_pos: f64, s_pers: f64, v: Variant) -> SIndexScore {
        SIndexScore {
            author: a,
            year: 2000,
            variant: v,
            potential: 0.0,
            s_pos,
            s_pers,
            effective_k: 1,
            k_clamped: false,
        }
    }

    #[test]
    fn field_table_recomputes() {
        let mut b = CorpusBuilder::new();
        let mut rec = |id: &str, a: &str, f: &str| {
            let mut r = paper(id, 2000, &[a]);
            r.field = Some(f.into());
            b.add_paper(r).unwrap();
        };
        rec("a", "A", "bio");
        rec("b", "B", "bio");
        rec("c", "C", "phys");
        rec("d", "D", "phys");
        b.add_paper(paper("z", 2000, &["Z"])).unwrap();
        b.add_citation("z", "a");
        b.add_citation("z", "c");
        b.add_citation("z", "d");
        let c = b.finish();
        let ids: Vec<AuthorId> = ["A", "B", "C", "D"]
            .iter()
            .map(|n| c.author_id(n).unwrap())
            .collect();
        let g: Vec<SIndexScore> = ids
            .iter()
            .enumerate()
            .map(|(i, &a)| score(a, 10.0 * i as f64, 50.0, Variant::Global))
            .collect();
        let f: Vec<SIndexScore> = ids
            .iter()
            .map(|&a| score(a, 50.0, 40.0, Variant::Field("x".into())))
            .collect();
        let t = field_impact(&c, &g, &f, 2000, 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].mean_s_pos_global, 5.0);
        assert_eq!(t.rows[1].mean_s_pos_global, 25.0);
        let s_pos = &t.summary[1];
        assert_eq!((s_pos.mean, s_pos.std, s_pos.cv), (15.0, 10.0, 10.0 / 15.0));
        assert_eq!(t.rows[1].mean_citations, 1.0);
        assert_eq!((t.summary[0].mean, t.summary[0].std), (0.75, 0.25));
        assert_eq!(t.summary, summarize_fields(&t.rows));
        assert_eq!(t.summary[4].std, 0.0);
        assert!(field_impact(&c, &g, &f, 2000, 3).is_err());
    }

    fn family_curves() -> BTreeMap<AuthorId, Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..40)
            .map(|i| {
                let base = if i % 2 == 0 { 10.0 } else { 80.0 };
                let curve = (0..6)
                    .map(|t| base + t as f64 + rng.random::<f64>())
                    .collect();
                (AuthorId(i), curve)
            })
            .collect()
    }

    #[test]
    fn kmeans_recovers_families() {
        let curves = family_curves();
        let r = career_trajectories(&curves, 2, 100, 5).unwrap();
        let first = r.assignments[0].1;
        for (a, c) in &r.assignments {
            assert_eq!(*c == first, a.0 % 2 == 0);
        }
        assert!(r.converged);
        assert!(r.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert_eq!(r, career_trajectories(&curves, 2, 100, 5).unwrap());
    }

    #[test]
    fn kmeans_identical_curves() {
        let curves: BTreeMap<AuthorId, Vec<f64>> = (0..12)
            .map(|i| (AuthorId(i), vec![1.0, 2.0, 3.0]))
            .collect();
        let r = career_trajectories(&curves, 3, 100, 0).unwrap();
        assert_eq!(r.sizes.iter().filter(|&&s| s > 0).count(), 1);
        assert_eq!(r.empty_clusters.len(), 2);
        assert!(career_trajectories(&curves, 13, 100, 0).is_err());
    }

    #[test]
    fn kmeans_objective_never_rises() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let curves: BTreeMap<AuthorId, Vec<f64>> = (0..200)
            .map(|i| {
                (
                    AuthorId(i),
                    (0..5).map(|_| rng.random::<f64>() * 10.0).collect(),
                )
            })
            .collect();
        let r = career_trajectories(&curves, 10, 100, 3).unwrap();
        assert!(
            r.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9),
            "{:?}",
            r.objective
        );
        assert_eq!(r.sizes.iter().sum::<usize>(), 200);
    }

    #[test]
    fn curves_need_every_year() {
        let mut v = BTreeMap::new();
        for t in 0..3 {
            v.insert((AuthorId(0), 2000 + t), t as f64);
        }
        v.insert((AuthorId(1), 2000), 1.0);
        v.insert((AuthorId(1), 2002), 1.0);
        let c = trajectory_curves(&v, 2000, 3);
        assert_eq!(c.len(), 1);
        assert_eq!(c[&AuthorId(0)], vec![0.0, 1.0, 2.0]);
    }
}
