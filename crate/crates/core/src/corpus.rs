//! Bibliographic corpus: papers, citation links and the author/paper indexes
//! every later stage reads from.
//!
//! A corpus is loaded from a directory holding two JSON-lines streams:
//! `papers.jsonl` (`{"id","year","authors":[..],"field":..}`) and
//! `citations.jsonl` (`{"citing","cited"}`). Noisy citation links are dropped
//! and counted in a [`ValidationReport`] instead of failing the load.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAPERS_FILE: &str = "papers.jsonl";
pub const CITATIONS_FILE: &str = "citations.jsonl";

/// Width of the trailing activity window, in years.
pub const ACTIVITY_WINDOW: i32 = 5;
/// Minimum number of career publications for an author to be considered.
pub const MIN_CAREER_PAPERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuthorId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PaperIdx(pub u32);

impl AuthorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl PaperIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One line of `papers.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub year: i32,
    pub authors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// One line of `citations.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationRecord {
    pub citing: String,
    pub cited: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Counters describing what the loader accepted and what it dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub papers: usize,
    pub links: usize,
    /// Links with an endpoint that is not a known paper.
    pub dangling: usize,
    /// Links whose citing paper is older than the cited paper.
    pub time_travel: usize,
    pub duplicate: usize,
    pub self_links: usize,
}

impl ValidationReport {
    pub fn dropped(&self) -> usize {
        self.dangling + self.time_travel + self.duplicate + self.self_links
    }
}

/// Per author-year career covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorYearStats {
    pub author: AuthorId,
    pub year: i32,
    pub citations_in_year: u64,
    pub career_age: u32,
    pub papers_todate: u64,
    pub collaborators_todate: u64,
    pub citations_todate: u64,
}

/// Incremental corpus construction. Citation endpoints are resolved in
/// [`CorpusBuilder::finish`], so links may be added before their papers.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    paper_ids: Vec<String>,
    paper_index: HashMap<String, PaperIdx>,
    years: Vec<i32>,
    authors_of: Vec<Vec<AuthorId>>,
    fields: Vec<Option<String>>,
    author_names: Vec<String>,
    author_index: HashMap<String, AuthorId>,
    year_range: Option<(i32, i32)>,
    raw_links: Vec<(String, String)>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Restrict accepted papers to `[first, last]`.
    pub fn with_year_range(mut self, first: i32, last: i32) -> Self {
        self.year_range = Some((first, last));
        self
    }

    pub fn add_paper(&mut self, rec: PaperRecord) -> std::result::Result<PaperIdx, String> {
        if rec.authors.is_empty() {
            return Err(format!("paper {} has no authors", rec.id));
        }
        if let Some((lo, hi)) = self.year_range {
            if rec.year < lo || rec.year > hi {
                return Err(format!(
                    "paper {} has year {} outside [{lo}, {hi}]",
                    rec.id, rec.year
                ));
            }
        }
        if self.paper_index.contains_key(&rec.id) {
            return Err(format!("duplicate paper id {}", rec.id));
        }
        let mut seen = HashSet::with_capacity(rec.authors.len());
        for a in &rec.authors {
            if !seen.insert(a.as_str()) {
                return Err(format!("paper {} lists author {a} twice", rec.id));
            }
        }
        let authors = rec
            .authors
            .iter()
            .map(|name| match self.author_index.get(name) {
                Some(&id) => id,
                None => {
                    let id = AuthorId(self.author_names.len() as u32);
                    self.author_names.push(name.clone());
                    self.author_index.insert(name.clone(), id);
                    id
                }
            })
            .collect();
        let idx = PaperIdx(self.paper_ids.len() as u32);
        self.paper_index.insert(rec.id.clone(), idx);
        self.paper_ids.push(rec.id);
        self.years.push(rec.year);
        self.authors_of.push(authors);
        self.fields.push(rec.field);
        Ok(idx)
    }

    pub fn add_citation(&mut self, citing: impl Into<String>, cited: impl Into<String>) {
        self.raw_links.push((citing.into(), cited.into()));
    }

    pub fn finish(self) -> Corpus {
        let mut report = ValidationReport {
            papers: self.paper_ids.len(),
            ..Default::default()
        };
        let mut links = Vec::with_capacity(self.raw_links.len());
        for (citing, cited) in &self.raw_links {
            let (Some(&c), Some(&d)) = (self.paper_index.get(citing), self.paper_index.get(cited))
            else {
                report.dangling += 1;
                continue;
            };
            if c == d {
                report.self_links += 1;
            } else if self.years[c.index()] < self.years[d.index()] {
                report.time_travel += 1;
            } else {
                links.push((c, d));
            }
        }
        links.sort_unstable();
        let before = links.len();
        links.dedup();
        report.duplicate = before - links.len();
        report.links = links.len();

        let n_papers = self.paper_ids.len();
        let mut papers_of = vec![Vec::new(); self.author_names.len()];
        let mut by_year: BTreeMap<i32, Vec<PaperIdx>> = BTreeMap::new();
        for (p, authors) in self.authors_of.iter().enumerate() {
            let idx = PaperIdx(p as u32);
            for a in authors {
                papers_of[a.index()].push(idx);
            }
            by_year.entry(self.years[p]).or_default().push(idx);
        }
        let years = &self.years;
        for list in &mut papers_of {
            list.sort_by_key(|p| (years[p.index()], *p));
        }
        let mut cited_by = vec![Vec::new(); n_papers];
        for &(c, d) in &links {
            cited_by[d.index()].push(c);
        }
        for list in &mut cited_by {
            list.sort_by_key(|p| (years[p.index()], *p));
        }

        Corpus {
            paper_ids: self.paper_ids,
            paper_index: self.paper_index,
            years: self.years,
            authors_of: self.authors_of,
            fields: self.fields,
            author_names: self.author_names,
            author_index: self.author_index,
            papers_of,
            by_year,
            links,
            cited_by,
            report,
        }
    }
}

/// Immutable, indexed bibliographic corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    paper_ids: Vec<String>,
    paper_index: HashMap<String, PaperIdx>,
    years: Vec<i32>,
    authors_of: Vec<Vec<AuthorId>>,
    fields: Vec<Option<String>>,
    author_names: Vec<String>,
    author_index: HashMap<String, AuthorId>,
    papers_of: Vec<Vec<PaperIdx>>,
    by_year: BTreeMap<i32, Vec<PaperIdx>>,
    links: Vec<(PaperIdx, PaperIdx)>,
    cited_by: Vec<Vec<PaperIdx>>,
    report: ValidationReport,
}

fn read_lines(path: &Path, mut each: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        each(i + 1, &line)?;
    }
    Ok(())
}

/// Load a corpus directory. `citations.jsonl` may be absent.
pub fn load_corpus(dir: &Path, format: CorpusFormat) -> Result<Corpus> {
    load_corpus_with(dir, format, CorpusBuilder::new())
}

pub fn load_corpus_with(
    dir: &Path,
    format: CorpusFormat,
    builder: CorpusBuilder,
) -> Result<Corpus> {
    let CorpusFormat::Jsonl = format;
    let mut builder = builder;
    let papers = dir.join(PAPERS_FILE);
    read_lines(&papers, |line_no, line| {
        let parse_err = |message: String| Error::Parse {
            path: papers.clone(),
            line: line_no,
            message,
        };
        let rec: PaperRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        builder.add_paper(rec).map_err(parse_err)?;
        Ok(())
    })?;
    let citations = dir.join(CITATIONS_FILE);
    if citations.exists() {
        read_lines(&citations, |line_no, line| {
            let rec: CitationRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: citations.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
            builder.add_citation(rec.citing, rec.cited);
            Ok(())
        })?;
    }
    let corpus = builder.finish();
    log::info!(
        "loaded {} papers, {} links ({} dropped) from {}",
        corpus.n_papers(),
        corpus.n_links(),
        corpus.report.dropped(),
        dir.display()
    );
    Ok(corpus)
}

impl Corpus {
    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn n_papers(&self) -> usize {
        self.paper_ids.len()
    }

    pub fn n_authors(&self) -> usize {
        self.author_names.len()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn authors(&self) -> impl Iterator<Item = AuthorId> + '_ {
        (0..self.author_names.len() as u32).map(AuthorId)
    }

    pub fn author_id(&self, name: &str) -> Option<AuthorId> {
        self.author_index.get(name).copied()
    }

    pub fn author_name(&self, a: AuthorId) -> &str {
        &self.author_names[a.index()]
    }

    pub fn paper_idx(&self, id: &str) -> Option<PaperIdx> {
        self.paper_index.get(id).copied()
    }

    pub fn paper_id(&self, p: PaperIdx) -> &str {
        &self.paper_ids[p.index()]
    }

    pub fn paper_year(&self, p: PaperIdx) -> i32 {
        self.years[p.index()]
    }

    pub fn paper_authors(&self, p: PaperIdx) -> &[AuthorId] {
        &self.authors_of[p.index()]
    }

    pub fn paper_field(&self, p: PaperIdx) -> Option<&str> {
        self.fields[p.index()].as_deref()
    }

    pub fn paper_record(&self, p: PaperIdx) -> PaperRecord {
        PaperRecord {
            id: self.paper_ids[p.index()].clone(),
            year: self.years[p.index()],
            authors: self.authors_of[p.index()]
                .iter()
                .map(|&a| self.author_names[a.index()].clone())
                .collect(),
            field: self.fields[p.index()].clone(),
        }
    }

    /// Papers of an author ordered by (year, index).
    pub fn papers_of(&self, a: AuthorId) -> &[PaperIdx] {
        &self.papers_of[a.index()]
    }

    pub fn papers_in_year(&self, year: i32) -> &[PaperIdx] {
        self.by_year.get(&year).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Papers citing `p`, ordered by (year, index).
    pub fn cited_by(&self, p: PaperIdx) -> &[PaperIdx] {
        &self.cited_by[p.index()]
    }

    pub fn links(&self) -> &[(PaperIdx, PaperIdx)] {
        &self.links
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        Some((
            *self.by_year.keys().next()?,
            *self.by_year.keys().next_back()?,
        ))
    }

    pub fn has_field_labels(&self) -> bool {
        self.fields.iter().any(Option::is_some)
    }

    fn papers_upto(&self, a: AuthorId, year: i32) -> &[PaperIdx] {
        let list = &self.papers_of[a.index()];
        let n = list.partition_point(|p| self.years[p.index()] <= year);
        &list[..n]
    }

    fn links_in_year(&self, cited: PaperIdx, year: i32) -> usize {
        let list = &self.cited_by[cited.index()];
        let lo = list.partition_point(|p| self.years[p.index()] < year);
        let hi = list.partition_point(|p| self.years[p.index()] <= year);
        hi - lo
    }

    /// Whether `a` published in `[year-5, year-1]` and has at least two
    /// papers published no later than `year`.
    pub fn is_active(&self, a: AuthorId, year: i32) -> bool {
        let upto = self.papers_upto(a, year);
        if upto.len() < MIN_CAREER_PAPERS {
            return false;
        }
        upto.iter().any(|p| {
            let y = self.years[p.index()];
            y >= year - ACTIVITY_WINDOW && y < year
        })
    }

    /// Active authors of `year`, sorted by id.
    pub fn active_authors(&self, year: i32) -> Vec<AuthorId> {
        self.authors()
            .filter(|&a| self.is_active(a, year))
            .collect()
    }

    /// Citation links from papers published in `year` to papers of `a`.
    pub fn citations_received(&self, a: AuthorId, year: i32) -> u64 {
        self.papers_upto(a, year)
            .iter()
            .map(|&p| self.links_in_year(p, year) as u64)
            .sum()
    }

    /// Number of citation links whose citing paper was published in `year`.
    pub fn citation_links_in_year(&self, year: i32) -> usize {
        self.links
            .iter()
            .filter(|(c, _)| self.years[c.index()] == year)
            .count()
    }

    /// Cumulative covariates of `a` using only papers and links up to `year`.
    pub fn career_stats(&self, a: AuthorId, year: i32) -> Result<AuthorYearStats> {
        let upto = self.papers_upto(a, year);
        let Some(first) = upto.first() else {
            return Err(Error::NoCareer {
                author: self.author_name(a).to_string(),
                year,
            });
        };
        let first_year = self.years[first.index()];
        let mut collaborators: BTreeSet<AuthorId> = BTreeSet::new();
        let mut citations_todate = 0u64;
        for &p in upto {
            collaborators.extend(self.authors_of[p.index()].iter().filter(|&&b| b != a));
            let cites = &self.cited_by[p.index()];
            citations_todate += cites.partition_point(|c| self.years[c.index()] <= year) as u64;
        }
        Ok(AuthorYearStats {
            author: a,
            year,
            citations_in_year: self.citations_received(a, year),
            career_age: (year - first_year) as u32,
            papers_todate: upto.len() as u64,
            collaborators_todate: collaborators.len() as u64,
            citations_todate,
        })
    }

    /// Most frequent field label over the papers of `a` published up to
    /// `year`; ties go to the lexicographically smallest label.
    pub fn author_field(&self, a: AuthorId, year: i32) -> Option<&str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &p in self.papers_upto(a, year) {
            if let Some(f) = self.fields[p.index()].as_deref() {
                *counts.entry(f).or_default() += 1;
            }
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, c)| c == best).map(|(f, _)| f)
    }

    /// Canonical JSON-lines serialization: papers in index order, links
    /// sorted by (citing, cited).
    pub fn to_jsonl(&self) -> (Vec<u8>, Vec<u8>) {
        let mut papers = Vec::new();
        for p in 0..self.n_papers() {
            let rec = self.paper_record(PaperIdx(p as u32));
            serde_json::to_writer(&mut papers, &rec).expect("paper record serializes");
            papers.push(b'\n');
        }
        let mut cites = Vec::new();
        for &(c, d) in &self.links {
            let rec = CitationRecord {
                citing: self.paper_ids[c.index()].clone(),
                cited: self.paper_ids[d.index()].clone(),
            };
            serde_json::to_writer(&mut cites, &rec).expect("citation record serializes");
            cites.push(b'\n');
        }
        (papers, cites)
    }

    pub fn write_jsonl(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (papers, cites) = self.to_jsonl();
        for (name, bytes) in [(PAPERS_FILE, papers), (CITATIONS_FILE, cites)] {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization.
    pub fn content_hash(&self) -> String {
        let (papers, cites) = self.to_jsonl();
        let mut h = Sha256::new();
        h.update(&papers);
        h.update(b"\0");
        h.update(&cites);
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn paper(id: &str, year: i32, authors: &[&str]) -> PaperRecord {
        PaperRecord {
            id: id.into(),
            year,
            authors: authors.iter().map(|s| s.to_string()).collect(),
            field: None,
        }
    }

    /// p1(2000; A,B), p2(2000; B,C), p3(2001; A), p4(2001; C,D);
    /// p3→p1, p4→p2, p4→p1.
    pub(crate) fn fixture_f1() -> Corpus {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("p1", 2000, &["A", "B"])).unwrap();
        b.add_paper(paper("p2", 2000, &["B", "C"])).unwrap();
        b.add_paper(paper("p3", 2001, &["A"])).unwrap();
        b.add_paper(paper("p4", 2001, &["C", "D"])).unwrap();
        b.add_citation("p3", "p1");
        b.add_citation("p4", "p2");
        b.add_citation("p4", "p1");
        b.finish()
    }

    fn id(c: &Corpus, name: &str) -> AuthorId {
        c.author_id(name).unwrap()
    }

    #[test]
    fn f1_loads_cleanly() {
        let c = fixture_f1();
        assert_eq!(c.n_papers(), 4);
        assert_eq!(c.n_links(), 3);
        assert_eq!(c.report().dropped(), 0);
    }

    #[test]
    fn time_travel_and_dangling_links_are_counted() {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("p1", 2000, &["A"])).unwrap();
        b.add_paper(paper("p3", 2001, &["A"])).unwrap();
        b.add_citation("p1", "p3");
        b.add_citation("p3", "nope");
        b.add_citation("p3", "p1");
        b.add_citation("p3", "p1");
        b.add_citation("p3", "p3");
        let c = b.finish();
        let r = c.report();
        assert_eq!(r.time_travel, 1);
        assert_eq!(r.dangling, 1);
        assert_eq!(r.duplicate, 1);
        assert_eq!(r.self_links, 1);
        assert_eq!(r.links, 1);
    }

    #[test]
    fn malformed_records_are_rejected() {
        let mut b = CorpusBuilder::new();
        assert!(b.add_paper(paper("x", 2000, &[])).is_err());
        assert!(b.add_paper(paper("y", 2000, &["A", "A"])).is_err());
        b.add_paper(paper("z", 2000, &["A"])).unwrap();
        assert!(b.add_paper(paper("z", 2001, &["B"])).is_err());
        let mut b = CorpusBuilder::new().with_year_range(2000, 2005);
        assert!(b.add_paper(paper("w", 1999, &["A"])).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(PAPERS_FILE),
            "{\"id\":\"p1\",\"year\":2000,\"authors\":[\"A\"]}\n{\"id\":\"p2\",\"year\":\n",
        )
        .unwrap();
        match load_corpus(dir.path(), CorpusFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(PAPERS_FILE), "").unwrap();
        let c = load_corpus(dir.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.n_papers(), 0);
        assert_eq!(c.report(), &ValidationReport::default());
        assert_eq!(c.year_range(), None);
    }

    #[test]
    fn f1_active_authors() {
        let c = fixture_f1();
        let active = c.active_authors(2001);
        let expected: Vec<_> = ["A", "B", "C"].iter().map(|n| id(&c, n)).collect();
        assert_eq!(active, expected);
    }

    #[test]
    fn activity_rules() {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("s", 2000, &["Solo"])).unwrap();
        b.add_paper(paper("o1", 1990, &["Old"])).unwrap();
        b.add_paper(paper("o2", 1994, &["Old"])).unwrap();
        let c = b.finish();
        assert!(!c.is_active(id(&c, "Solo"), 2001));
        // last paper in 1994: inside the window for 1999, outside for 2000
        assert!(c.is_active(id(&c, "Old"), 1999));
        assert!(!c.is_active(id(&c, "Old"), 2000));
    }

    #[test]
    fn f1_citations_received() {
        let c = fixture_f1();
        assert_eq!(c.citations_received(id(&c, "A"), 2001), 2);
        assert_eq!(c.citations_received(id(&c, "D"), 2001), 0);
        assert_eq!(c.citations_received(id(&c, "A"), 2000), 0);
        assert_eq!(c.citation_links_in_year(2001), 3);
    }

    #[test]
    fn f1_career_stats() {
        let c = fixture_f1();
        let s = c.career_stats(id(&c, "A"), 2001).unwrap();
        assert_eq!(s.citations_in_year, 2);
        assert_eq!(s.career_age, 1);
        assert_eq!(s.papers_todate, 2);
        assert_eq!(s.collaborators_todate, 1);
        // p3→p1 and p4→p1 are the only links into A's papers
        assert_eq!(s.citations_todate, 2);
        let first = c.career_stats(id(&c, "D"), 2001).unwrap();
        assert_eq!(first.career_age, 0);
        assert!(matches!(
            c.career_stats(id(&c, "D"), 2000),
            Err(Error::NoCareer { .. })
        ));
    }

    #[test]
    fn solo_author_has_no_collaborators() {
        let mut b = CorpusBuilder::new();
        b.add_paper(paper("s1", 2000, &["S"])).unwrap();
        b.add_paper(paper("s2", 2001, &["S"])).unwrap();
        let c = b.finish();
        let s = c.career_stats(id(&c, "S"), 2001).unwrap();
        assert_eq!(s.collaborators_todate, 0);
    }

    #[test]
    fn author_field_majority_with_ties() {
        let mut b = CorpusBuilder::new();
        let mut p = paper("a", 2000, &["X"]);
        p.field = Some("physics".into());
        b.add_paper(p).unwrap();
        let mut p = paper("b", 2001, &["X"]);
        p.field = Some("math".into());
        b.add_paper(p).unwrap();
        let c = b.finish();
        let x = id(&c, "X");
        assert_eq!(c.author_field(x, 2000), Some("physics"));
        assert_eq!(c.author_field(x, 2001), Some("math"));
    }

    #[test]
    fn reserialization_is_idempotent() {
        let c = fixture_f1();
        let dir = tempfile::tempdir().unwrap();
        c.write_jsonl(dir.path()).unwrap();
        let c2 = load_corpus(dir.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.to_jsonl(), c2.to_jsonl());
        assert_eq!(c.content_hash(), c2.content_hash());
    }
}
