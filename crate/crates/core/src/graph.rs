//! Yearly unweighted co-authorship networks in CSR form.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::corpus::{AuthorId, Corpus};
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 8] = b"SIDXNET\0";
const CACHE_VERSION: u32 = 1;
const ABSENT: u32 = u32::MAX;

/// Co-authorship network of one year over re-indexed author nodes.
///
/// Node `i` stands for `nodes[i]`; node order follows author id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YearNetwork {
    year: i32,
    nodes: Vec<AuthorId>,
    /// author index -> node, `ABSENT` when the author is not a node
    lookup: Vec<u32>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

fn build_lookup(nodes: &[AuthorId]) -> Vec<u32> {
    let span = nodes.last().map_or(0, |a| a.index() + 1);
    let mut lookup = vec![ABSENT; span];
    for (i, a) in nodes.iter().enumerate() {
        lookup[a.index()] = i as u32;
    }
    lookup
}

impl YearNetwork {
    /// Builds a network from undirected node-index pairs. Self-loops and
    /// repeated pairs are discarded. `nodes` must be strictly increasing.
    pub fn from_edges(year: i32, nodes: Vec<AuthorId>, edges: &[(u32, u32)]) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        let n = nodes.len();
        let mut pairs: Vec<(u32, u32)> = edges
            .iter()
            .filter(|(u, v)| u != v)
            .flat_map(|&(u, v)| [(u, v), (v, u)])
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = pairs.into_iter().map(|(_, v)| v).collect();
        Self {
            year,
            lookup: build_lookup(&nodes),
            nodes,
            offsets,
            neighbors,
        }
    }

    pub fn empty(year: i32) -> Self {
        Self::from_edges(year, Vec::new(), &[])
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[AuthorId] {
        &self.nodes
    }

    pub fn author(&self, node: usize) -> AuthorId {
        self.nodes[node]
    }

    pub fn node_of(&self, a: AuthorId) -> Option<usize> {
        match self.lookup.get(a.index()) {
            Some(&n) if n != ABSENT => Some(n as usize),
            _ => None,
        }
    }

    pub fn contains(&self, a: AuthorId) -> bool {
        self.node_of(a).is_some()
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Component label per node, labels numbered in order of their smallest
    /// node.
    pub fn component_labels(&self) -> (Vec<u32>, Vec<usize>) {
        let n = self.n_nodes();
        let mut label = vec![ABSENT; n];
        let mut sizes = Vec::new();
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != ABSENT {
                continue;
            }
            let c = sizes.len() as u32;
            label[start] = c;
            stack.push(start as u32);
            let mut size = 0;
            while let Some(u) = stack.pop() {
                size += 1;
                for &v in self.neighbors(u as usize) {
                    if label[v as usize] == ABSENT {
                        label[v as usize] = c;
                        stack.push(v);
                    }
                }
            }
            sizes.push(size);
        }
        (label, sizes)
    }

    /// Subnetwork induced by the nodes for which `keep` holds.
    pub fn induced(&self, keep: impl Fn(usize) -> bool) -> YearNetwork {
        let mut remap = vec![ABSENT; self.n_nodes()];
        let mut nodes = Vec::new();
        for i in 0..self.n_nodes() {
            if keep(i) {
                remap[i] = nodes.len() as u32;
                nodes.push(self.nodes[i]);
            }
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for i in 0..self.n_nodes() {
            if remap[i] == ABSENT {
                continue;
            }
            // remap is monotone, so neighbor lists stay sorted
            neighbors.extend(
                self.neighbors(i)
                    .iter()
                    .map(|&v| remap[v as usize])
                    .filter(|&v| v != ABSENT),
            );
            offsets.push(neighbors.len());
        }
        YearNetwork {
            year: self.year,
            lookup: build_lookup(&nodes),
            nodes,
            offsets,
            neighbors,
        }
    }

    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_u32::<LittleEndian>(CACHE_VERSION)?;
        w.write_i32::<LittleEndian>(self.year)?;
        w.write_u64::<LittleEndian>(self.nodes.len() as u64)?;
        w.write_u64::<LittleEndian>(self.neighbors.len() as u64)?;
        for a in &self.nodes {
            w.write_u32::<LittleEndian>(a.0)?;
        }
        for &o in &self.offsets {
            w.write_u64::<LittleEndian>(o as u64)?;
        }
        for &v in &self.neighbors {
            w.write_u32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("network cache: {m}"));
        let io = |e: std::io::Error| Error::InvalidInput(format!("network cache: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let year = r.read_i32::<LittleEndian>().map_err(io)?;
        let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let m = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(AuthorId(r.read_u32::<LittleEndian>().map_err(io)?));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            offsets.push(r.read_u64::<LittleEndian>().map_err(io)? as usize);
        }
        let mut neighbors = Vec::with_capacity(m);
        for _ in 0..m {
            neighbors.push(r.read_u32::<LittleEndian>().map_err(io)?);
        }
        if offsets.last() != Some(&m) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("inconsistent layout"));
        }
        Ok(YearNetwork {
            year,
            lookup: build_lookup(&nodes),
            nodes,
            offsets,
            neighbors,
        })
    }

    /// Edge list with corpus author names, one undirected edge per row.
    pub fn write_edge_list_csv(&self, corpus: &Corpus, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
        out.write_record(["source", "target"]).map_err(csv_err)?;
        for u in 0..self.n_nodes() {
            for &v in self.neighbors(u) {
                if (u as u32) < v {
                    out.write_record([
                        corpus.author_name(self.nodes[u]),
                        corpus.author_name(self.nodes[v as usize]),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        out.flush()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }
}

/// Network over the active authors of `year`, with an edge for every pair of
/// active authors who co-authored a paper published strictly before `year`.
pub fn build_network(corpus: &Corpus, year: i32) -> YearNetwork {
    let nodes = corpus.active_authors(year);
    let lookup = build_lookup(&nodes);
    let node = |a: AuthorId| match lookup.get(a.index()) {
        Some(&n) if n != ABSENT => Some(n),
        _ => None,
    };
    let mut edges = Vec::new();
    let mut members = Vec::new();
    if let Some((first, _)) = corpus.year_range() {
        for y in first..year {
            for &p in corpus.papers_in_year(y) {
                members.clear();
                members.extend(corpus.paper_authors(p).iter().filter_map(|&a| node(a)));
                for (i, &u) in members.iter().enumerate() {
                    for &v in &members[i + 1..] {
                        edges.push((u.min(v), u.max(v)));
                    }
                }
            }
        }
    }
    YearNetwork::from_edges(year, nodes, &edges)
}

/// Largest connected component; among equally large components the one
/// holding the smallest node id wins.
pub fn giant_component(net: &YearNetwork) -> YearNetwork {
    if net.is_empty() {
        return net.clone();
    }
    let (label, sizes) = net.component_labels();
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i as u32)
        .expect("non-empty network has a component");
    net.induced(|i| label[i] == best)
}

/// `giant_component(build_network(corpus, year))`.
pub fn year_giant(corpus: &Corpus, year: i32) -> YearNetwork {
    giant_component(&build_network(corpus, year))
}
