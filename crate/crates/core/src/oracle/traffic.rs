//! Route choice on a road network whose travel times depend on the state.
//!
//! Actions are s-t paths. Payoff of a path is `(H - time) / H`, so the best
//! response to a belief is a shortest path under expected edge times.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionId, BrOracle, Counter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficEdge {
    pub from: usize,
    pub to: usize,
    /// Travel time in each state.
    pub times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrafficOracle {
    vertices: Vec<String>,
    edges: Vec<TrafficEdge>,
    out: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
    horizon: f64,
    n_states: usize,
    queries: Counter,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl TrafficOracle {
    /// `horizon` defaults to the longest possible path time: the longest path
    /// in each state when the graph is acyclic, otherwise the sum over edges
    /// of the slowest time.
    pub fn new(
        vertices: Vec<String>,
        edges: Vec<TrafficEdge>,
        source: usize,
        sink: usize,
        horizon: Option<f64>,
    ) -> Result<Self> {
        let n_states = edges.first().map_or(0, |e| e.times.len());
        if n_states == 0 {
            return Err(Error::invalid("traffic graph has no edges"));
        }
        if source >= vertices.len() || sink >= vertices.len() || source == sink {
            return Err(Error::invalid("source and sink must be distinct vertices"));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.times.len() != n_states {
                return Err(Error::invalid(format!("edge {i} has {} times, expected {n_states}", e.times.len())));
            }
            if e.times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                return Err(Error::invalid(format!("edge {i} needs positive finite times")));
            }
            if e.from >= vertices.len() || e.to >= vertices.len() {
                return Err(Error::invalid(format!("edge {i} references a missing vertex")));
            }
        }
        let mut out = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            out[e.from].push(i);
        }
        let bound = longest_path_bound(vertices.len(), &edges, &out, source, n_states);
        let horizon = horizon.unwrap_or(bound);
        if !(horizon >= bound - 1e-12) {
            return Err(Error::invalid(format!("horizon {horizon} is below the path-time bound {bound}")));
        }
        let oracle =
            TrafficOracle { vertices, edges, out, source, sink, horizon, n_states, queries: Counter::default() };
        if oracle.distances_to_sink(&vec![1.0 / n_states as f64; n_states])[source].is_infinite() {
            return Err(Error::NoPath);
        }
        Ok(oracle)
    }

    /// Parse the edge-list format:
    ///
    /// ```text
    /// # comment
    /// source s
    /// sink t
    /// horizon 10
    /// s a 1 3
    /// a t 2 2
    /// ```
    ///
    /// Every other line is an edge `from to time_0 time_1 ...`. Edge ids are
    /// the order of appearance.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut vertex = |name: &str| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            })
        };
        let (mut source, mut sink, mut horizon) = (None, None, None);
        let mut edges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::invalid(format!("graph line {}: cannot parse `{line}`", ln + 1));
            match tok[0] {
                "source" if tok.len() == 2 => source = Some(vertex(tok[1])),
                "sink" if tok.len() == 2 => sink = Some(vertex(tok[1])),
                "horizon" if tok.len() == 2 => horizon = Some(tok[1].parse::<f64>().map_err(|_| bad())?),
                _ if tok.len() >= 3 => {
                    let times = tok[2..].iter().map(|t| t.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
                    let times = times.map_err(|_| bad())?;
                    let from = vertex(tok[0]);
                    let to = vertex(tok[1]);
                    edges.push(TrafficEdge { from, to, times });
                }
                _ => return Err(bad()),
            }
        }
        let source = source.ok_or_else(|| Error::invalid("graph has no `source` line"))?;
        let sink = sink.ok_or_else(|| Error::invalid("graph has no `sink` line"))?;
        TrafficOracle::new(names, edges, source, sink, horizon)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "source {}", self.vertices[self.source]);
        let _ = writeln!(s, "sink {}", self.vertices[self.sink]);
        let _ = writeln!(s, "horizon {:?}", self.horizon);
        for e in &self.edges {
            let _ = write!(s, "{} {}", self.vertices[e.from], self.vertices[e.to]);
            for t in &e.times {
                let _ = write!(s, " {t:?}");
            }
            s.push('\n');
        }
        s
    }

    /// Random layered network: `layers` rows of `width` vertices between the
    /// source and the sink, every vertex linked to every vertex of the next
    /// layer. Integer times in `1..=9`.
    pub fn random_layered(layers: usize, width: usize, n_states: usize, seed: u64) -> Result<Self> {
        if layers == 0 || width == 0 || n_states == 0 {
            return Err(Error::invalid("layers, width and states must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = vec!["s".to_string()];
        for l in 0..layers {
            for k in 0..width {
                names.push(format!("v{l}_{k}"));
            }
        }
        names.push("t".to_string());
        let sink = names.len() - 1;
        let id = |l: usize, k: usize| 1 + l * width + k;
        let mut times = || (0..n_states).map(|_| rng.gen_range(1..=9) as f64).collect::<Vec<_>>();
        let mut edges = Vec::new();
        for k in 0..width {
            edges.push(TrafficEdge { from: 0, to: id(0, k), times: times() });
        }
        for l in 0..layers - 1 {
            for a in 0..width {
                for b in 0..width {
                    edges.push(TrafficEdge { from: id(l, a), to: id(l + 1, b), times: times() });
                }
            }
        }
        for k in 0..width {
            edges.push(TrafficEdge { from: id(layers - 1, k), to: sink, times: times() });
        }
        TrafficOracle::new(names, edges, 0, sink, None)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn edges(&self) -> &[TrafficEdge] {
        &self.edges
    }

    fn expected(&self, edge: usize, belief: &[f64]) -> f64 {
        self.edges[edge].times.iter().zip(belief).map(|(t, b)| t * b).sum()
    }

    /// Shortest expected time from every vertex to the sink.
    fn distances_to_sink(&self, belief: &[f64]) -> Vec<f64> {
        let n = self.vertices.len();
        let mut incoming = vec![Vec::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            incoming[e.to].push(i);
        }
        let mut dist = vec![f64::INFINITY; n];
        dist[self.sink] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, self.sink));
        while let Some(Item(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &e in &incoming[v] {
                let u = self.edges[e].from;
                let nd = d + self.expected(e, belief);
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push(Item(nd, u));
                }
            }
        }
        dist
    }

    pub fn path_time(&self, path: &[usize], state: usize) -> f64 {
        path.iter().map(|&e| self.edges[e].times[state]).sum()
    }

    /// Every simple s-t path, up to `limit` of them.
    pub fn enumerate_paths(&self, limit: usize) -> Result<Vec<Vec<usize>>> {
        let mut paths = Vec::new();
        let mut stack = Vec::new();
        let mut on_path = vec![false; self.vertices.len()];
        on_path[self.source] = true;
        self.dfs(self.source, &mut stack, &mut on_path, &mut paths, limit)?;
        Ok(paths)
    }

    fn dfs(
        &self,
        v: usize,
        stack: &mut Vec<usize>,
        on_path: &mut [bool],
        paths: &mut Vec<Vec<usize>>,
        limit: usize,
    ) -> Result<()> {
        if v == self.sink {
            if paths.len() == limit {
                return Err(Error::TooLarge(format!("more than {limit} s-t paths")));
            }
            paths.push(stack.clone());
            return Ok(());
        }
        for &e in &self.out[v] {
            let w = self.edges[e].to;
            if on_path[w] {
                continue;
            }
            on_path[w] = true;
            stack.push(e);
            self.dfs(w, stack, on_path, paths, limit)?;
            stack.pop();
            on_path[w] = false;
        }
        Ok(())
    }
}

/// Upper bound on the time of any simple path from `source`.
fn longest_path_bound(n: usize, edges: &[TrafficEdge], out: &[Vec<usize>], source: usize, n_states: usize) -> f64 {
    // Topological order by DFS; a back edge means a cycle.
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    let mut acyclic = true;
    let mut stack = vec![(source, 0usize)];
    state[source] = 1;
    while let Some((v, k)) = stack.pop() {
        if k < out[v].len() {
            stack.push((v, k + 1));
            let w = edges[out[v][k]].to;
            match state[w] {
                0 => {
                    state[w] = 1;
                    stack.push((w, 0));
                }
                1 => acyclic = false,
                _ => {}
            }
        } else {
            state[v] = 2;
            order.push(v);
        }
    }
    if !acyclic {
        return edges.iter().map(|e| e.times.iter().cloned().fold(0.0, f64::max)).sum();
    }
    order.reverse();
    let mut worst = 0.0f64;
    for w in 0..n_states {
        let mut longest = vec![f64::NEG_INFINITY; n];
        longest[source] = 0.0;
        for &v in &order {
            if longest[v] == f64::NEG_INFINITY {
                continue;
            }
            for &e in &out[v] {
                let to = edges[e].to;
                longest[to] = longest[to].max(longest[v] + edges[e].times[w]);
            }
        }
        worst = longest.iter().cloned().fold(worst, f64::max);
    }
    worst
}

impl BrOracle for TrafficOracle {
    fn num_states(&self) -> usize {
        self.n_states
    }

    fn respond(&self, belief: &[f64]) -> (ActionId, f64) {
        self.queries.bump();
        let dist = self.distances_to_sink(belief);
        // Walk the shortest-path DAG taking the lowest edge id that stays on
        // a shortest path; this yields the lexicographically first path.
        let mut path = Vec::new();
        let mut v = self.source;
        while v != self.sink {
            let tol = 1e-12 * (1.0 + dist[v].abs());
            let next = self.out[v]
                .iter()
                .copied()
                .filter(|&e| dist[self.edges[e].to].is_finite())
                .find(|&e| (self.expected(e, belief) + dist[self.edges[e].to] - dist[v]).abs() <= tol)
                .expect("a shortest-path edge leaves every vertex that reaches the sink");
            path.push(next);
            v = self.edges[next].to;
        }
        let time: f64 = path.iter().map(|&e| self.expected(e, belief)).sum();
        (ActionId::Path(path), (self.horizon - time) / self.horizon)
    }

    fn utility_of(&self, action: &ActionId, state: usize) -> f64 {
        match action {
            ActionId::Path(p) => (self.horizon - self.path_time(p, state)) / self.horizon,
            other => panic!("traffic oracle was handed a foreign action {other:?}"),
        }
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}
