//! Follower networks: synthetic directed scale-free generation, SNAP-style
//! edge-list loading and ego-network extraction.
//!
//! Edge convention: an edge `u -> v` means `v` follows `u`, so everything `u`
//! posts is delivered to `v`. A user's follower count is therefore its
//! out-degree.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Directed follower network with per-user cost and logistic midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    out_edges: Vec<Vec<usize>>,
    followers: Vec<usize>,
    costs: Vec<f64>,
    midpoints: Vec<f64>,
}

impl SocialGraph {
    /// Builds a graph from raw directed edges, dropping self-loops and
    /// duplicates. Adjacency lists are kept sorted.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut seen = HashSet::new();
        let mut out_edges = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n {
                return Err(Error::UserOutOfRange { user: u, n });
            }
            if v >= n {
                return Err(Error::UserOutOfRange { user: v, n });
            }
            if u != v && seen.insert((u, v)) {
                out_edges[u].push(v);
            }
        }
        for list in &mut out_edges {
            list.sort_unstable();
        }
        Ok(Self::from_adjacency(out_edges))
    }

    fn from_adjacency(out_edges: Vec<Vec<usize>>) -> Self {
        let followers: Vec<usize> = out_edges.iter().map(Vec::len).collect();
        let max = followers.iter().copied().max().unwrap_or(0);
        let (costs, midpoints) = if max == 0 {
            (vec![1.0; followers.len()], vec![1.0; followers.len()])
        } else {
            let max = max as f64;
            (
                followers.iter().map(|&e| (e as f64 / max) * 9.0 + 1.0).collect(),
                followers.iter().map(|&e| (e as f64 / max) * 2.0 + 1.0).collect(),
            )
        };
        Self {
            out_edges,
            followers,
            costs,
            midpoints,
        }
    }

    pub fn n(&self) -> usize {
        self.out_edges.len()
    }

    pub fn edge_count(&self) -> usize {
        self.followers.iter().sum()
    }

    /// Users that receive everything `user` posts.
    pub fn followers_of(&self, user: usize) -> &[usize] {
        &self.out_edges[user]
    }

    /// Follower count per user (the `e` vector).
    pub fn follower_counts(&self) -> &[usize] {
        &self.followers
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn min_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_edges
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    /// Writes the graph as a whitespace-separated edge list.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# directed follower edges: src dst (dst follows src)");
        for (u, v) in self.edges() {
            let _ = writeln!(out, "{u} {v}");
        }
        fs::write(path, out)?;
        Ok(())
    }
}

/// Parameters of the directed scale-free growth process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFreeParams {
    pub n: usize,
    /// Probability of adding a new follower of an existing user.
    pub alpha: f64,
    /// Probability of adding a follow edge between existing users.
    pub beta: f64,
    /// Probability of adding a new user followed by an existing user.
    pub gamma: f64,
    pub delta_in: f64,
    pub delta_out: f64,
}

impl ScaleFreeParams {
    pub fn new(n: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            n,
            alpha,
            beta,
            gamma,
            delta_in: 0.2,
            delta_out: 0.0,
        }
    }

    /// Keeps `gamma = 3 alpha` while setting the density parameter `beta`.
    pub fn with_density(n: usize, beta: f64) -> Self {
        let alpha = (1.0 - beta) / 4.0;
        Self::new(n, alpha, beta, 3.0 * alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        for (name, p) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p} is not a probability")));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "alpha + beta + gamma = {sum}, expected 1"
            )));
        }
        if self.delta_in < 0.0 || self.delta_out < 0.0 {
            return Err(Error::InvalidParameter("delta_in/delta_out must be >= 0".into()));
        }
        Ok(())
    }

    /// Asymptotic power-law exponent of the follower-count distribution.
    pub fn follower_exponent(&self) -> f64 {
        1.0 + (1.0 + self.delta_in * (self.alpha + self.gamma)) / (self.alpha + self.beta)
    }
}

fn choose_node<R: Rng>(rng: &mut R, candidates: &[usize], node_count: usize, delta: f64) -> usize {
    if delta > 0.0 {
        let bias = node_count as f64 * delta;
        let p_delta = bias / (bias + candidates.len() as f64);
        if rng.gen::<f64>() < p_delta {
            return rng.gen_range(0..node_count);
        }
    }
    candidates[rng.gen_range(0..candidates.len())]
}

/// Raw output of the Bollobás–Borgs–Chayes–Riordan growth process: pairs
/// `(a, b)` meaning "a follows b", self-loops and repeats included. Starts
/// from a directed cycle on `min(n, 3)` users.
pub fn grow_scale_free(params: &ScaleFreeParams, seed: u64) -> Result<Vec<(usize, usize)>> {
    params.validate()?;
    let n = params.n;
    let mut rng = stream_rng(seed, stream::NETWORK);

    let initial = n.min(3);
    let mut follows: Vec<(usize, usize)> = Vec::new();
    if initial >= 2 {
        for i in 0..initial {
            follows.push((i, (i + 1) % initial));
        }
    }
    // Endpoint multisets for preferential choice.
    let mut sources: Vec<usize> = follows.iter().map(|e| e.0).collect();
    let mut targets: Vec<usize> = follows.iter().map(|e| e.1).collect();
    let mut nodes = initial;

    while nodes < n {
        let r: f64 = rng.gen();
        let (a, b) = if r < params.alpha {
            let a = nodes;
            nodes += 1;
            (a, choose_node(&mut rng, &targets, nodes, params.delta_in))
        } else if r < params.alpha + params.beta {
            let a = choose_node(&mut rng, &sources, nodes, params.delta_out);
            (a, choose_node(&mut rng, &targets, nodes, params.delta_in))
        } else {
            let a = choose_node(&mut rng, &sources, nodes, params.delta_out);
            let b = nodes;
            nodes += 1;
            (a, b)
        };
        follows.push((a, b));
        sources.push(a);
        targets.push(b);
    }
    Ok(follows)
}

/// Directed scale-free network; self-loops and repeated edges of the growth
/// process are discarded.
pub fn generate_scale_free(params: &ScaleFreeParams, seed: u64) -> Result<SocialGraph> {
    let follows = grow_scale_free(params, seed)?;
    // "a follows b" delivers b's posts to a.
    SocialGraph::from_edges(params.n, follows.into_iter().map(|(a, b)| (b, a)))
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(u64, u64)>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = || Error::MalformedLine {
            path: path.to_path_buf(),
            line: idx + 1,
            text: raw.to_string(),
        };
        let mut fields = line.split_whitespace();
        let src = fields.next().and_then(|f| f.parse::<u64>().ok()).ok_or_else(malformed)?;
        let dst = fields.next().and_then(|f| f.parse::<u64>().ok()).ok_or_else(malformed)?;
        if fields.next().is_some() {
            return Err(malformed());
        }
        edges.push((src, dst));
    }
    Ok(edges)
}

/// Loads a SNAP-style edge list. Ids are compacted to `0..n` in ascending
/// order of the original ids.
pub fn load_edge_list(path: &Path, undirected: bool) -> Result<SocialGraph> {
    let text = fs::read_to_string(path)?;
    let edges = parse_edges(path, &text)?;
    if edges.is_empty() {
        return Err(Error::EmptyEdgeList(path.to_path_buf()));
    }
    let ids: BTreeSet<u64> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut directed = Vec::with_capacity(edges.len() * if undirected { 2 } else { 1 });
    for (a, b) in edges {
        let (u, v) = (index[&a], index[&b]);
        directed.push((u, v));
        if undirected {
            directed.push((v, u));
        }
    }
    SocialGraph::from_edges(ids.len(), directed)
}

/// Metadata written next to a graph dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMeta {
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn meta_path(edge_path: &Path) -> std::path::PathBuf {
    let mut p = edge_path.as_os_str().to_owned();
    p.push(".meta");
    p.into()
}

/// Writes `path` (edge list) and `path.meta` (key=value lines).
pub fn write_graph_dump(graph: &SocialGraph, meta: &GraphMeta, path: &Path) -> Result<()> {
    graph.write_edge_list(path)?;
    let text = format!(
        "n={}\nseed={}\nalpha={}\nbeta={}\ngamma={}\n",
        meta.n, meta.seed, meta.alpha, meta.beta, meta.gamma
    );
    fs::write(meta_path(path), text)?;
    Ok(())
}

/// Reads a dump produced by [`write_graph_dump`]; ids are kept as-is so
/// isolated users survive the round trip.
pub fn read_graph_dump(path: &Path) -> Result<(SocialGraph, GraphMeta)> {
    let meta_text = fs::read_to_string(meta_path(path))?;
    let mut kv = BTreeMap::new();
    for line in meta_text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("bad meta line {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::InvalidParameter(format!("meta key {k} missing")))
    };
    let parse_err = |k: &str| Error::InvalidParameter(format!("meta key {k} unparsable"));
    let meta = GraphMeta {
        n: get("n")?.parse().map_err(|_| parse_err("n"))?,
        seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
        alpha: get("alpha")?.parse().map_err(|_| parse_err("alpha"))?,
        beta: get("beta")?.parse().map_err(|_| parse_err("beta"))?,
        gamma: get("gamma")?.parse().map_err(|_| parse_err("gamma"))?,
    };
    let text = fs::read_to_string(path)?;
    let edges = parse_edges(path, &text)?;
    let graph = SocialGraph::from_edges(
        meta.n,
        edges.into_iter().map(|(a, b)| (a as usize, b as usize)),
    )?;
    Ok((graph, meta))
}

/// Induced subgraph on users within `radius` undirected hops of `center`.
/// Users keep their relative order; costs and midpoints are recomputed.
pub fn ego_subgraph(graph: &SocialGraph, center: usize, radius: usize) -> Result<SocialGraph> {
    let n = graph.n();
    if center >= n {
        return Err(Error::UserOutOfRange { user: center, n });
    }
    let mut undirected = vec![Vec::new(); n];
    for (u, v) in graph.edges() {
        undirected[u].push(v);
        undirected[v].push(u);
    }
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == radius {
            continue;
        }
        for &v in &undirected[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&u| dist[u] != usize::MAX).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &u) in kept.iter().enumerate() {
        index[u] = i;
    }
    let edges = graph
        .edges()
        .filter(|&(u, v)| index[u] != usize::MAX && index[v] != usize::MAX)
        .map(|(u, v)| (index[u], index[v]));
    SocialGraph::from_edges(kept.len(), edges)
}
