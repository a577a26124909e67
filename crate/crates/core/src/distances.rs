//! Geodesic author→paper distances and the per author-year distance
//! profiles built from them.
//!
//! The distance from an author to a paper is the shortest path to the
//! closest of its authors. Per-source BFS results are folded straight into
//! histograms; no all-pairs matrix is ever held.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorId, Corpus, PaperIdx};
use crate::error::{Error, Result};
use crate::graph::YearNetwork;

/// Number of distance bins in a profile (distances 0..=9).
pub const N_BINS: usize = 10;
/// Largest bin; longer distances are pooled into it.
pub const DEFAULT_CAP: usize = N_BINS - 1;

const UNREACHED: u32 = u32::MAX;

/// A distance counted in half steps, so averages of two integer distances
/// stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfSteps(pub u32);

impl HalfSteps {
    pub fn whole(d: u32) -> Self {
        HalfSteps(2 * d)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

/// Single-source shortest path lengths over one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    source: usize,
    dist: Vec<u32>,
}

impl DistanceMap {
    pub fn source(&self) -> usize {
        self.source
    }

    /// `None` when `node` is unreachable from the source.
    pub fn get(&self, node: usize) -> Option<u32> {
        match self.dist[node] {
            UNREACHED => None,
            d => Some(d),
        }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

/// Reusable BFS buffers.
#[derive(Debug, Default)]
pub struct BfsScratch {
    dist: Vec<u32>,
    queue: VecDeque<u32>,
}

impl BfsScratch {
    fn run(&mut self, net: &YearNetwork, source: usize) -> &[u32] {
        self.dist.clear();
        self.dist.resize(net.n_nodes(), UNREACHED);
        self.queue.clear();
        self.dist[source] = 0;
        self.queue.push_back(source as u32);
        while let Some(u) = self.queue.pop_front() {
            let next = self.dist[u as usize] + 1;
            for &v in net.neighbors(u as usize) {
                if self.dist[v as usize] == UNREACHED {
                    self.dist[v as usize] = next;
                    self.queue.push_back(v);
                }
            }
        }
        &self.dist
    }
}

pub fn bfs_distances(net: &YearNetwork, source: usize) -> Result<DistanceMap> {
    if source >= net.n_nodes() {
        return Err(Error::NodeAbsent(source));
    }
    let mut scratch = BfsScratch::default();
    scratch.run(net, source);
    Ok(DistanceMap {
        source,
        dist: scratch.dist,
    })
}

/// Minimum distance from the map's source to any author of the paper that
/// is a node of `net`. `None` when no author is reachable.
pub fn paper_distance(dm: &DistanceMap, net: &YearNetwork, authors: &[AuthorId]) -> Option<u32> {
    authors
        .iter()
        .filter_map(|&a| net.node_of(a))
        .filter_map(|n| dm.get(n))
        .min()
}

/// Mean of the previous- and current-snapshot distances; the current
/// distance alone when the previous one is undefined.
pub fn blended_distance(prev: Option<u32>, curr: u32) -> HalfSteps {
    match prev {
        Some(p) => HalfSteps(p + curr),
        None => HalfSteps::whole(curr),
    }
}

/// Round half up, then cap.
pub fn bin_distance(d: HalfSteps, cap: usize) -> usize {
    (((d.0 + 1) / 2) as usize).min(cap)
}

/// Distribution of an author's blended distances to all papers of a year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub author: AuthorId,
    pub year: i32,
    pub counts: [u64; N_BINS],
    pub n_papers: u64,
    /// Sum of unbinned blended distances, in half steps.
    pub sum_half_steps: u64,
}

/// Distribution of blended distances to the papers of a year that cite the
/// author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitingDistanceProfile {
    pub author: AuthorId,
    pub year: i32,
    pub counts: [u64; N_BINS],
    pub n_citing: u64,
    pub sum_half_steps: u64,
}

fn normalized(counts: &[u64; N_BINS], n: u64) -> [f64; N_BINS] {
    let mut out = [0.0; N_BINS];
    if n > 0 {
        for (o, &c) in out.iter_mut().zip(counts) {
            *o = c as f64 / n as f64;
        }
    }
    out
}

fn mean_half(sum: u64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum as f64 / (2 * n) as f64
    }
}

impl DistanceProfile {
    /// P(d = x) for x in 0..10; all zeros when no paper has a distance.
    pub fn bins(&self) -> [f64; N_BINS] {
        normalized(&self.counts, self.n_papers)
    }

    pub fn mean_distance(&self) -> f64 {
        mean_half(self.sum_half_steps, self.n_papers)
    }
}

impl CitingDistanceProfile {
    pub fn bins(&self) -> [f64; N_BINS] {
        normalized(&self.counts, self.n_citing)
    }

    pub fn mean_distance(&self) -> f64 {
        mean_half(self.sum_half_steps, self.n_citing)
    }
}

/// Precomputed view of one year: its papers and their author nodes in the
/// previous and current snapshots.
pub struct YearDistances<'a> {
    corpus: &'a Corpus,
    prev: Option<&'a YearNetwork>,
    curr: &'a YearNetwork,
    year: i32,
    cap: usize,
    papers: Vec<PaperIdx>,
    curr_members: Members,
    prev_members: Members,
}

#[derive(Default)]
struct Members {
    offsets: Vec<usize>,
    nodes: Vec<u32>,
}

impl Members {
    fn build(papers: &[PaperIdx], corpus: &Corpus, net: Option<&YearNetwork>) -> Self {
        let mut m = Members {
            offsets: vec![0],
            nodes: Vec::new(),
        };
        for &p in papers {
            if let Some(net) = net {
                m.nodes.extend(
                    corpus
                        .paper_authors(p)
                        .iter()
                        .filter_map(|&a| net.node_of(a))
                        .map(|n| n as u32),
                );
            }
            m.offsets.push(m.nodes.len());
        }
        m
    }

    fn min_dist(&self, i: usize, dist: &[u32]) -> Option<u32> {
        self.nodes[self.offsets[i]..self.offsets[i + 1]]
            .iter()
            .map(|&n| dist[n as usize])
            .filter(|&d| d != UNREACHED)
            .min()
    }
}

/// Scratch space for one worker.
#[derive(Default)]
pub struct ProfileScratch {
    curr: BfsScratch,
    prev: BfsScratch,
    citing: Vec<PaperIdx>,
}

impl<'a> YearDistances<'a> {
    /// `curr` is the snapshot of `year`, `prev` the snapshot of `year - 1`.
    pub fn new(
        corpus: &'a Corpus,
        prev: Option<&'a YearNetwork>,
        curr: &'a YearNetwork,
        year: i32,
        cap: usize,
    ) -> Self {
        let papers: Vec<PaperIdx> = corpus
            .papers_in_year(year)
            .iter()
            .copied()
            .filter(|&p| corpus.paper_authors(p).iter().any(|&a| curr.contains(a)))
            .collect();
        let curr_members = Members::build(&papers, corpus, Some(curr));
        let prev_members = Members::build(&papers, corpus, prev);
        Self {
            corpus,
            prev,
            curr,
            year,
            cap: cap.min(DEFAULT_CAP),
            papers,
            curr_members,
            prev_members,
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn network(&self) -> &YearNetwork {
        self.curr
    }

    /// Papers of the year with at least one author in the current snapshot.
    pub fn papers(&self) -> &[PaperIdx] {
        &self.papers
    }

    /// Blended distance from `author` to every paper in [`Self::papers`].
    pub fn blended_distances(
        &self,
        author: AuthorId,
        scratch: &mut ProfileScratch,
    ) -> Result<Vec<Option<HalfSteps>>> {
        let node = self
            .curr
            .node_of(author)
            .ok_or_else(|| Error::AuthorAbsent {
                author: self.corpus.author_name(author).to_string(),
                year: self.year,
            })?;
        let curr = scratch.curr.run(self.curr, node);
        let prev = match self
            .prev
            .and_then(|net| net.node_of(author).map(|n| (net, n)))
        {
            Some((net, n)) => Some(scratch.prev.run(net, n)),
            None => None,
        };
        Ok((0..self.papers.len())
            .map(|i| {
                let dc = self.curr_members.min_dist(i, curr)?;
                let dp = prev.and_then(|dist| self.prev_members.min_dist(i, dist));
                Some(blended_distance(dp, dc))
            })
            .collect())
    }

    /// Sorted year papers citing at least one paper of `author`.
    fn citing_papers(&self, author: AuthorId, out: &mut Vec<PaperIdx>) {
        out.clear();
        for &p in self.corpus.papers_of(author) {
            if self.corpus.paper_year(p) > self.year {
                break;
            }
            out.extend(
                self.corpus
                    .cited_by(p)
                    .iter()
                    .copied()
                    .filter(|&c| self.corpus.paper_year(c) == self.year),
            );
        }
        out.sort_unstable();
        out.dedup();
    }

    pub fn profiles(
        &self,
        author: AuthorId,
        scratch: &mut ProfileScratch,
    ) -> Result<(DistanceProfile, CitingDistanceProfile)> {
        let dists = self.blended_distances(author, scratch)?;
        let mut citing = std::mem::take(&mut scratch.citing);
        self.citing_papers(author, &mut citing);
        let mut dp = DistanceProfile {
            author,
            year: self.year,
            counts: [0; N_BINS],
            n_papers: 0,
            sum_half_steps: 0,
        };
        let mut cp = CitingDistanceProfile {
            author,
            year: self.year,
            counts: [0; N_BINS],
            n_citing: 0,
            sum_half_steps: 0,
        };
        for (i, d) in dists.iter().enumerate() {
            let Some(d) = *d else { continue };
            let bin = bin_distance(d, self.cap);
            dp.counts[bin] += 1;
            dp.n_papers += 1;
            dp.sum_half_steps += d.0 as u64;
            if citing.binary_search(&self.papers[i]).is_ok() {
                cp.counts[bin] += 1;
                cp.n_citing += 1;
                cp.sum_half_steps += d.0 as u64;
            }
        }
        scratch.citing = citing;
        Ok((dp, cp))
    }

    /// Profiles of every node of the current snapshot, in node order.
    pub fn all_profiles(&self) -> Vec<(DistanceProfile, CitingDistanceProfile)> {
        (0..self.curr.n_nodes())
            .into_par_iter()
            .map_init(ProfileScratch::default, |scratch, node| {
                self.profiles(self.curr.author(node), scratch)
                    .expect("network nodes are present")
            })
            .collect()
    }
}

pub fn distance_profile(
    corpus: &Corpus,
    net_prev: Option<&YearNetwork>,
    net_curr: &YearNetwork,
    author: AuthorId,
    year: i32,
) -> Result<DistanceProfile> {
    let ctx = YearDistances::new(corpus, net_prev, net_curr, year, DEFAULT_CAP);
    Ok(ctx.profiles(author, &mut ProfileScratch::default())?.0)
}

pub fn citing_distance_profile(
    corpus: &Corpus,
    net_prev: Option<&YearNetwork>,
    net_curr: &YearNetwork,
    author: AuthorId,
    year: i32,
) -> Result<CitingDistanceProfile> {
    let ctx = YearDistances::new(corpus, net_prev, net_curr, year, DEFAULT_CAP);
    Ok(ctx.profiles(author, &mut ProfileScratch::default())?.1)
}

/// Citation-weighted mean distance of citing papers and pair-weighted mean
/// distance to all papers, pooled over authors.
pub fn aggregate_mean_distances(
    profiles: &[DistanceProfile],
    citing: &[CitingDistanceProfile],
) -> (f64, f64) {
    let (sc, nc) = citing.iter().fold((0u64, 0u64), |(s, n), c| {
        (s + c.sum_half_steps, n + c.n_citing)
    });
    let (sa, na) = profiles.iter().fold((0u64, 0u64), |(s, n), p| {
        (s + p.sum_half_steps, n + p.n_papers)
    });
    (mean_half(sc, nc), mean_half(sa, na))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{fixture_f1, paper};
    use crate::corpus::CorpusBuilder;
    use crate::graph::{build_network, giant_component};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: u32) -> Vec<AuthorId> {
        (0..n).map(AuthorId).collect()
    }

    fn floyd_warshall(net: &YearNetwork) -> Vec<Vec<u32>> {
        let n = net.n_nodes();
        let inf = u32::MAX / 2;
        let mut d = vec![vec![inf; n]; n];
        for (u, row) in d.iter_mut().enumerate() {
            row[u] = 0;
            for &v in net.neighbors(u) {
                row[v as usize] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn f1_bfs_from_a() {
        let c = fixture_f1();
        let net = giant_component(&build_network(&c, 2001));
        let a = net.node_of(c.author_id("A").unwrap()).unwrap();
        let dm = bfs_distances(&net, a).unwrap();
        let by_name = |n: &str| dm.get(net.node_of(c.author_id(n).unwrap()).unwrap());
        assert_eq!(by_name("A"), Some(0));
        assert_eq!(by_name("B"), Some(1));
        assert_eq!(by_name("C"), Some(2));

        // p4 = {C, D}; D is not a node
        let p4 = c.paper_idx("p4").unwrap();
        assert_eq!(paper_distance(&dm, &net, c.paper_authors(p4)), Some(2));
        let p3 = c.paper_idx("p3").unwrap();
        assert_eq!(paper_distance(&dm, &net, c.paper_authors(p3)), Some(0));
        assert_eq!(paper_distance(&dm, &net, &[AuthorId(99)]), None);
    }

    #[test]
    fn bfs_edge_cases() {
        let net = YearNetwork::from_edges(2000, ids(1), &[]);
        let dm = bfs_distances(&net, 0).unwrap();
        assert_eq!(dm.get(0), Some(0));
        assert!(matches!(bfs_distances(&net, 3), Err(Error::NodeAbsent(3))));
    }

    #[test]
    fn bfs_matches_floyd_warshall_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.random_range(1..60u32);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(0.08) {
                        edges.push((u, v));
                    }
                }
            }
            let net = YearNetwork::from_edges(2000, ids(n), &edges);
            let fw = floyd_warshall(&net);
            for s in 0..n as usize {
                let dm = bfs_distances(&net, s).unwrap();
                for t in 0..n as usize {
                    let want = (fw[s][t] < u32::MAX / 2).then_some(fw[s][t]);
                    assert_eq!(dm.get(t), want);
                }
            }
        }
    }

    #[test]
    fn blending_and_binning() {
        assert_eq!(blended_distance(Some(2), 3).value(), 2.5);
        assert_eq!(blended_distance(None, 4).value(), 4.0);
        assert_eq!(blended_distance(Some(5), 5).value(), 5.0);
        assert_eq!(bin_distance(HalfSteps(5), DEFAULT_CAP), 3);
        assert_eq!(bin_distance(HalfSteps(0), DEFAULT_CAP), 0);
        assert_eq!(bin_distance(HalfSteps::whole(14), DEFAULT_CAP), 9);
        assert_eq!(bin_distance(HalfSteps(3), DEFAULT_CAP), 2);
        assert_eq!(bin_distance(HalfSteps(1), DEFAULT_CAP), 1);
    }

    #[test]
    fn f1_citing_profile() {
        let c = fixture_f1();
        let prev = giant_component(&build_network(&c, 2000));
        let curr = giant_component(&build_network(&c, 2001));
        let a = c.author_id("A").unwrap();
        let cp = citing_distance_profile(&c, Some(&prev), &curr, a, 2001).unwrap();
        assert_eq!(cp.n_citing, 2);
        let bins = cp.bins();
        assert_eq!(bins[0], 0.5);
        assert_eq!(bins[2], 0.5);
        assert_eq!(bins.iter().sum::<f64>(), 1.0);

        let dp = distance_profile(&c, Some(&prev), &curr, a, 2001).unwrap();
        assert_eq!(dp.n_papers, 2);
        assert_eq!(dp.mean_distance(), 1.0);
        let d = c.author_id("D").unwrap();
        assert!(matches!(
            distance_profile(&c, Some(&prev), &curr, d, 2001),
            Err(Error::AuthorAbsent { .. })
        ));
    }

    /// Path X-Y-Z built in 2000, with one 2002 paper at each node; the 2001
    /// and 2002 snapshots are identical.
    fn path_corpus() -> Corpus {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("e1", 2000, &["X", "Y"])).unwrap();
        b.add_paper(paper("e2", 2000, &["Y", "Z"])).unwrap();
        b.add_paper(paper("x", 2002, &["X"])).unwrap();
        b.add_paper(paper("y1", 2002, &["Y"])).unwrap();
        b.add_paper(paper("y2", 2002, &["Y"])).unwrap();
        b.add_paper(paper("z", 2002, &["Z"])).unwrap();
        b.add_paper(paper("far", 2002, &["Nobody"])).unwrap();
        b.finish()
    }

    #[test]
    fn profile_on_a_path() {
        let c = path_corpus();
        let prev = giant_component(&build_network(&c, 2001));
        let curr = giant_component(&build_network(&c, 2002));
        let x = c.author_id("X").unwrap();
        let dp = distance_profile(&c, Some(&prev), &curr, x, 2002).unwrap();
        // "far" has no author in the network and is excluded
        assert_eq!(dp.n_papers, 4);
        assert_eq!(&dp.counts[..3], &[1, 2, 1]);
        assert_eq!(dp.mean_distance(), (0.0 + 1.0 + 1.0 + 2.0) / 4.0);
        assert!((dp.bins().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solo_paper_only_profile() {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("e1", 2000, &["X", "Y"])).unwrap();
        b.add_paper(paper("s", 2001, &["X"])).unwrap();
        let c = b.finish();
        let curr = giant_component(&build_network(&c, 2001));
        let x = c.author_id("X").unwrap();
        let dp = distance_profile(&c, None, &curr, x, 2001).unwrap();
        assert_eq!(dp.bins()[0], 1.0);
        assert_eq!(dp.mean_distance(), 0.0);
        let cp = citing_distance_profile(&c, None, &curr, x, 2001).unwrap();
        assert_eq!(cp.n_citing, 0);
        assert_eq!(cp.bins(), [0.0; N_BINS]);
    }

    #[test]
    fn mean_distance_on_line_graph_matches_exhaustive_average() {
        // line of 12 authors, one paper per author in 2010
        let n = 12;
        let names: Vec<String> = (0..n).map(|i| format!("L{i:02}")).collect();
        let mut b = CorpusBuilder::new();
        for i in 0..n - 1 {
            b.add_paper(paper(&format!("e{i}"), 2005, &[&names[i], &names[i + 1]]))
                .unwrap();
        }
        for (i, name) in names.iter().enumerate() {
            b.add_paper(paper(&format!("q{i}"), 2010, &[name])).unwrap();
        }
        let c = b.finish();
        let prev = giant_component(&build_network(&c, 2009));
        let curr = giant_component(&build_network(&c, 2010));
        let ctx = YearDistances::new(&c, Some(&prev), &curr, 2010, DEFAULT_CAP);
        for (dp, _) in ctx.all_profiles() {
            let i = names
                .iter()
                .position(|s| s == c.author_name(dp.author))
                .unwrap() as f64;
            let brute: f64 = (0..n).map(|j| (i - j as f64).abs()).sum::<f64>() / n as f64;
            assert!((dp.mean_distance() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_distance_is_bounded_by_each_present_author() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 80u32;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(0.05) {
                    edges.push((u, v));
                }
            }
        }
        let net = YearNetwork::from_edges(2000, ids(n), &edges);
        for _ in 0..200 {
            let s = rng.random_range(0..n) as usize;
            let dm = bfs_distances(&net, s).unwrap();
            let k = rng.random_range(1..5);
            let authors: Vec<AuthorId> = (0..k)
                .map(|_| AuthorId(rng.random_range(0..n + 10)))
                .collect();
            let d = paper_distance(&dm, &net, &authors);
            for a in &authors {
                if let Some(da) = net.node_of(*a).and_then(|x| dm.get(x)) {
                    assert!(d.unwrap() <= da);
                }
            }
        }
    }
}
