//! Directed communication graphs and time-varying graph sequences.
//!
//! An edge `(i, j)` means agent `i` sends to agent `j`. Every node is
//! implicitly its own in- and out-neighbor; self-loops are never stored
//! and never take part in path computations.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDigraph")]
pub struct Digraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    out_adj: Vec<Vec<usize>>,
    #[serde(skip)]
    in_adj: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawDigraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawDigraph> for Digraph {
    type Error = Error;

    fn try_from(raw: RawDigraph) -> Result<Self> {
        Digraph::new(raw.n, raw.edges)
    }
}

impl Digraph {
    /// Builds a graph from an edge list. Rejects out-of-range nodes,
    /// explicit self-loops and duplicate edges.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(invalid(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(invalid(format!(
                    "explicit self-loop ({i},{i}); self-loops are implicit"
                )));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("duplicate edge ({},{})", w[0].0, w[0].1)));
        }
        Ok(Self::from_sorted(n, edges))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for &(i, j) in &edges {
            out_adj[i].push(j);
            in_adj[j].push(i);
        }
        for list in &mut in_adj {
            list.sort_unstable();
        }
        Self {
            n,
            edges,
            out_adj,
            in_adj,
        }
    }

    /// Directed ring `i -> i+1 (mod n)`.
    pub fn ring(n: usize) -> Self {
        let edges = if n < 2 {
            Vec::new()
        } else {
            let mut e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            e.sort_unstable();
            e.dedup();
            e
        };
        Self::from_sorted(n, edges)
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::from_sorted(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }

    /// Nodes `j` with `i -> j`, excluding `i` itself.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_adj[i]
    }

    /// Nodes `j` with `j -> i`, excluding `i` itself.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_adj[i]
    }

    /// Returns a copy with one extra edge; a no-op if it is already present.
    pub fn with_edge(&self, i: usize, j: usize) -> Result<Self> {
        if self.has_edge(i, j) {
            return Ok(self.clone());
        }
        let mut edges = self.edges.clone();
        edges.push((i, j));
        Self::new(self.n, edges)
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(invalid("permutation length differs from node count"));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(invalid("not a permutation"));
            }
        }
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }

    /// BFS hop counts from `source`; `None` marks unreachable nodes.
    pub fn bfs_from(&self, source: usize) -> Vec<Option<usize>> {
        bfs(&self.out_adj, source)
    }

    /// All-pairs shortest directed path lengths, `dist[j][l]` from `j` to `l`.
    pub fn distances(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.n).map(|s| self.bfs_from(s)).collect()
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap_or(0) + 1;
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// True iff every node reaches every other node.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    if g.n <= 1 {
        return true;
    }
    bfs(&g.out_adj, 0).iter().all(Option::is_some) && bfs(&g.in_adj, 0).iter().all(Option::is_some)
}

fn checked_distances(g: &Digraph) -> Result<Vec<Vec<usize>>> {
    if g.n < 2 {
        return Err(invalid("graph functionals need at least two nodes"));
    }
    g.distances()
        .into_iter()
        .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InfeasibleGraph("graph is not strongly connected".into()))
}

/// Longest shortest directed path over ordered pairs of distinct nodes.
pub fn diameter(g: &Digraph) -> Result<usize> {
    let dist = checked_distances(g)?;
    Ok(dist.iter().flatten().copied().max().unwrap_or(0))
}

/// Maximal edge-utility: the largest number of ordered pairs `(j, l)` that
/// admit a shortest path through a single edge `(u, v)`, i.e. with
/// `dist(j,u) + 1 + dist(v,l) == dist(j,l)`.
///
/// Shortest-path coverings choose one path per ordered pair independently,
/// so the maximum over coverings of one edge's load is exactly this count.
pub fn max_edge_utility(g: &Digraph) -> Result<usize> {
    let dist = checked_distances(g)?;
    let n = g.n;
    let utility = g
        .edges
        .iter()
        .map(|&(u, v)| {
            let mut count = 0;
            for j in 0..n {
                for l in 0..n {
                    if j != l && dist[j][u] + 1 + dist[v][l] == dist[j][l] {
                        count += 1;
                    }
                }
            }
            count
        })
        .max()
        .unwrap_or(0);
    Ok(utility)
}

/// The two graph functionals feeding the contraction constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n: usize,
    pub diameter: usize,
    pub max_edge_utility: usize,
}

impl GraphStats {
    pub fn of(g: &Digraph) -> Result<Self> {
        Ok(Self {
            n: g.n,
            diameter: diameter(g)?,
            max_edge_utility: max_edge_utility(g)?,
        })
    }

    /// `D(G) * K(G)` as used in the contraction constants.
    pub fn product(&self) -> f64 {
        (self.diameter * self.max_edge_utility) as f64
    }
}

/// One strongly connected graph per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct DigraphSequence {
    n: usize,
    seed: u64,
    graphs: Vec<Digraph>,
}

#[derive(Deserialize)]
struct RawSequence {
    n: usize,
    #[serde(default)]
    seed: u64,
    graphs: Vec<Digraph>,
}

impl TryFrom<RawSequence> for DigraphSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        Self::new(raw.n, raw.seed, raw.graphs)
    }
}

impl DigraphSequence {
    pub fn new(n: usize, seed: u64, graphs: Vec<Digraph>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("node count must be positive"));
        }
        for (k, g) in graphs.iter().enumerate() {
            if g.n != n {
                return Err(invalid(format!("graph {k} has {} nodes, expected {n}", g.n)));
            }
            if !is_strongly_connected(g) {
                return Err(Error::InfeasibleGraph(format!("graph {k} is not strongly connected")));
            }
        }
        Ok(Self { n, seed, graphs })
    }

    /// The same graph repeated `horizon` times.
    pub fn constant(g: Digraph, horizon: usize) -> Result<Self> {
        Self::new(g.n, 0, vec![g; horizon])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Digraph] {
        &self.graphs
    }

    pub fn get(&self, k: usize) -> Option<&Digraph> {
        self.graphs.get(k)
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let graphs = self
            .graphs
            .iter()
            .map(|g| g.permuted(perm))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n, self.seed, graphs)
    }
}

/// Ring `i -> i+1 (mod n)` plus every other ordered pair independently with
/// probability `extra_edge_prob`, once per iteration. Identical arguments
/// reproduce the identical sequence.
pub fn generate_sequence(
    n: usize,
    horizon: usize,
    extra_edge_prob: f64,
    seed: u64,
) -> Result<DigraphSequence> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if !(0.0..=1.0).contains(&extra_edge_prob) {
        return Err(invalid(format!(
            "extra_edge_prob must lie in [0,1], got {extra_edge_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = Digraph::ring(n);
    let graphs = (0..horizon)
        .map(|_| {
            let mut edges = Vec::with_capacity(n * 2);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    if ring.has_edge(i, j) || rng.random_bool(extra_edge_prob) {
                        edges.push((i, j));
                    }
                }
            }
            Digraph::from_sorted(n, edges)
        })
        .collect();
    Ok(DigraphSequence { n, seed, graphs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_gives_the_ring() {
        let seq = generate_sequence(3, 2, 0.0, 7).unwrap();
        assert_eq!(seq.len(), 2);
        for g in seq.graphs() {
            assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 0)]);
        }
    }

    #[test]
    fn single_node_sequence_is_edgeless() {
        let seq = generate_sequence(1, 5, 0.5, 1).unwrap();
        assert_eq!(seq.len(), 5);
        assert!(seq.graphs().iter().all(|g| g.edge_count() == 0));
        assert!(seq.graphs().iter().all(is_strongly_connected));
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        assert!(matches!(generate_sequence(0, 3, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_sequence(3, 0, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(generate_sequence(3, 1, 1.5, 0).is_err());
    }

    #[test]
    fn generator_is_reproducible() {
        let a = generate_sequence(6, 20, 0.4, 99).unwrap();
        let b = generate_sequence(6, 20, 0.4, 99).unwrap();
        let c = generate_sequence(6, 20, 0.4, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn strong_connectivity_basics() {
        assert!(is_strongly_connected(&Digraph::ring(3)));
        assert!(!is_strongly_connected(&Digraph::new(2, [(0, 1)]).unwrap()));
    }

    #[test]
    fn ring_and_complete_functionals() {
        let ring3 = Digraph::ring(3);
        assert_eq!(diameter(&ring3).unwrap(), 2);
        assert_eq!(max_edge_utility(&ring3).unwrap(), 3);
        assert_eq!(diameter(&Digraph::complete(4)).unwrap(), 1);
        assert_eq!(max_edge_utility(&Digraph::complete(3)).unwrap(), 1);
        for n in 2..9 {
            assert_eq!(diameter(&Digraph::ring(n)).unwrap(), n - 1);
        }
    }

    #[test]
    fn functionals_reject_degenerate_graphs() {
        assert!(matches!(diameter(&Digraph::ring(1)), Err(Error::InvalidArgument(_))));
        let broken = Digraph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert!(matches!(diameter(&broken), Err(Error::InfeasibleGraph(_))));
        assert!(matches!(max_edge_utility(&broken), Err(Error::InfeasibleGraph(_))));
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert!(Digraph::new(2, [(0, 0)]).is_err());
        assert!(Digraph::new(2, [(0, 2)]).is_err());
        assert!(Digraph::new(2, [(0, 1), (0, 1)]).is_err());
        let g = Digraph::new(3, [(2, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.in_neighbors(0), &[2]);
        assert_eq!(g.out_neighbors(0), &[1]);
    }

    #[test]
    fn json_shape() {
        let g = Digraph::ring(3);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"n":3,"edges":[[0,1],[1,2],[2,0]]}"#);
        let back: Digraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Digraph>(r#"{"n":2,"edges":[[0,0]]}"#).is_err());

        let seq = generate_sequence(3, 2, 0.0, 5).unwrap();
        let s = serde_json::to_string(&seq).unwrap();
        assert!(s.starts_with(r#"{"n":3,"seed":5,"graphs":["#));
        let back: DigraphSequence = serde_json::from_str(&s).unwrap();
        assert_eq!(back, seq);
        let bad = r#"{"n":2,"seed":0,"graphs":[{"n":2,"edges":[[0,1]]}]}"#;
        assert!(serde_json::from_str::<DigraphSequence>(bad).is_err());
    }
}
