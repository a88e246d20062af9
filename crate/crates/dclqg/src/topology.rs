//! Directed communication-graph machinery: reachability sets with the
//! anchor-first ordering convention, block partitions and selector
//! matrices, the structured sparsity pattern, cycle condensation, and
//! multitree detection.
//!
//! Node indices are 1-based in the public API. An edge (j, i) means
//! information flows from node j to node i; each agent always has
//! immediate access to its own measurements, so self-loops are rejected.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A directed graph on nodes 1..=N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    n: usize,
    /// Outgoing adjacency, 0-based internally, each list sorted.
    adj: Vec<Vec<usize>>,
}

/// An ordered set of node indices: the anchor node first, the remaining
/// members strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    members: Vec<usize>,
}

/// Block sizes (n_1..n_N or the m, p analogues), all positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
}

/// Entry class of the structured pattern: unconstrained on the diagonal,
/// delay-carrying where an ancestor path exists, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternEntry {
    Local,
    Delayed,
    Zero,
}

/// The (i, j) pattern of admissible controller blocks for a graph and
/// processing delay.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub tau: f64,
    /// entries[(i−1, j−1)] constrains the block u_i ← y_j.
    pub entries: DMatrix<PatternEntry>,
}

impl DiGraph {
    /// Build a graph from an edge list of ordered pairs (from, to).
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(from, to) in edges {
            if from == 0 || from > n || to == 0 || to > n {
                return Err(Error::Structure(format!(
                    "edge ({from}, {to}) out of range for {n} nodes"
                )));
            }
            if from == to {
                return Err(Error::Structure(format!(
                    "self-loop at node {from}: self-access is implicit"
                )));
            }
            let list = &mut adj[from - 1];
            if !list.contains(&(to - 1)) {
                list.push(to - 1);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self { n, adj })
    }

    /// The graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: vec![Vec::new(); n],
        }
    }

    /// The fully connected graph (every ordered pair of distinct nodes).
    pub fn complete(n: usize) -> Self {
        let adj = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self { n, adj }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Edge list as 1-based (from, to) pairs, lexicographically sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                out.push((i + 1, j + 1));
            }
        }
        out
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n {
            Err(Error::Structure(format!(
                "node {i} out of range for {} nodes",
                self.n
            )))
        } else {
            Ok(())
        }
    }

    /// 0-based reachability closure from `start` (0-based), excluding the
    /// start unless it lies on a cycle through itself.
    fn reach_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack: Vec<usize> = self.adj[start].clone();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.adj[v].iter().copied());
            }
        }
        seen
    }

    /// Descendants of node i including i itself: i̲, anchor first.
    pub fn descendants(&self, i: usize) -> Result<IndexSet> {
        self.check_node(i)?;
        let seen = self.reach_from(i - 1);
        let rest = (1..=self.n).filter(|&j| j != i && seen[j - 1]);
        Ok(IndexSet {
            members: std::iter::once(i).chain(rest).collect(),
        })
    }

    /// Ancestors of node i including i itself: ī, anchor first.
    pub fn ancestors(&self, i: usize) -> Result<IndexSet> {
        self.check_node(i)?;
        let rest = (1..=self.n).filter(|&j| {
            j != i && self.reach_from(j - 1)[i - 1]
        });
        Ok(IndexSet {
            members: std::iter::once(i).chain(rest).collect(),
        })
    }

    /// Nodes reachable from i, excluding i: ascending order.
    pub fn strict_descendants(&self, i: usize) -> Result<Vec<usize>> {
        Ok(self.descendants(i)?.members[1..].to_vec())
    }

    /// Nodes that reach i, excluding i: ascending order.
    pub fn strict_ancestors(&self, i: usize) -> Result<Vec<usize>> {
        Ok(self.ancestors(i)?.members[1..].to_vec())
    }

    /// True when the graph has no directed cycles.
    pub fn is_acyclic(&self) -> bool {
        // A node on a cycle reaches itself.
        (0..self.n).all(|v| !self.reach_from(v)[v])
    }

    /// The admissible-block pattern for this graph and delay.
    pub fn sparsity_pattern(&self, tau: f64) -> SparsityPattern {
        let entries = DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j {
                PatternEntry::Local
            } else if self.reach_from(j)[i] {
                PatternEntry::Delayed
            } else {
                PatternEntry::Zero
            }
        });
        SparsityPattern { tau, entries }
    }

    /// Collapse every strongly connected component to a single node.
    ///
    /// Returns the acyclic quotient graph and the component membership
    /// lists (1-based node ids, ascending within each component);
    /// components are numbered by their smallest member.
    pub fn condense_cycles(&self) -> (DiGraph, Vec<Vec<usize>>) {
        let mut pg = petgraph::graph::DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..self.n).map(|_| pg.add_node(())).collect();
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                pg.add_edge(nodes[i], nodes[j], ());
            }
        }
        let mut comps: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&pg)
            .into_iter()
            .map(|comp| {
                let mut members: Vec<usize> = comp.iter().map(|ix| ix.index() + 1).collect();
                members.sort_unstable();
                members
            })
            .collect();
        comps.sort_by_key(|c| c[0]);
        let mut owner = vec![0usize; self.n];
        for (ci, comp) in comps.iter().enumerate() {
            for &m in comp {
                owner[m - 1] = ci;
            }
        }
        let mut quotient_edges = Vec::new();
        for (i, list) in self.adj.iter().enumerate() {
            for &j in list {
                let (a, b) = (owner[i], owner[j]);
                if a != b {
                    quotient_edges.push((a + 1, b + 1));
                }
            }
        }
        let quotient = DiGraph::new(comps.len(), &quotient_edges)
            .expect("quotient edges are in range by construction");
        (quotient, comps)
    }

    /// True when the acyclic graph has at most one directed path between
    /// every ordered pair of nodes.
    pub fn is_multitree(&self) -> Result<bool> {
        if !self.is_acyclic() {
            return Err(Error::Structure("is_multitree requires an acyclic graph".into()));
        }
        // Saturating path-count DP in reverse topological order.
        let order = self.topological_order();
        let mut counts = vec![vec![0u32; self.n]; self.n];
        for &u in order.iter().rev() {
            counts[u][u] = 1;
            for &w in &self.adj[u] {
                for v in 0..self.n {
                    let c = counts[w][v];
                    counts[u][v] = counts[u][v].saturating_add(c).min(2);
                }
            }
        }
        for u in 0..self.n {
            for v in 0..self.n {
                if u != v && counts[u][v] > 1 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// A topological order of the nodes (0-based); callers must ensure
    /// acyclicity first.
    fn topological_order(&self) -> Vec<usize> {
        let mut indeg = vec![0usize; self.n];
        for list in &self.adj {
            for &j in list {
                indeg[j] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..self.n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &j in &self.adj[v] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push(j);
                }
            }
        }
        order
    }
}

impl IndexSet {
    /// Construct from an anchor-first list, validating the convention.
    pub fn new(members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Structure("IndexSet must be nonempty".into()));
        }
        for w in members[1..].windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Structure(
                    "IndexSet tail must be strictly ascending".into(),
                ));
            }
        }
        if members[1..].contains(&members[0]) {
            return Err(Error::Structure("IndexSet anchor repeated in tail".into()));
        }
        Ok(Self { members })
    }

    pub fn anchor(&self) -> usize {
        self.members[0]
    }

    /// Members in the conventional order (anchor first).
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.contains(&j)
    }

    /// Position of node j within the ordered member list.
    pub fn position(&self, j: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == j)
    }
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Structure("block sizes must be positive".into()));
        }
        Ok(Self { sizes })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Size of block i (1-based).
    pub fn size(&self, i: usize) -> usize {
        self.sizes[i - 1]
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Flat offset of block i (1-based) in the concatenated vector.
    pub fn offset(&self, i: usize) -> usize {
        self.sizes[..i - 1].iter().sum()
    }

    /// Total size of the blocks in an index set.
    pub fn total_of(&self, set: &IndexSet) -> usize {
        set.members().iter().map(|&j| self.size(j)).sum()
    }

    /// Flat indices of the set's blocks, in set order.
    pub fn flat_indices(&self, set: &IndexSet) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_of(set));
        for &j in set.members() {
            let off = self.offset(j);
            out.extend(off..off + self.size(j));
        }
        out
    }
}

/// The selector E: the block columns of the identity listed in set order,
/// so that EᵀXE extracts the set-indexed principal submatrix and
/// EᵀE = I.
pub fn selector(partition: &BlockPartition, set: &IndexSet) -> Result<DMatrix<f64>> {
    for &j in set.members() {
        if j == 0 || j > partition.len() {
            return Err(Error::Structure(format!(
                "IndexSet member {j} out of range for partition of {} blocks",
                partition.len()
            )));
        }
    }
    let total = partition.total();
    let cols = partition.flat_indices(set);
    let mut e = DMatrix::zeros(total, cols.len());
    for (local, &global) in cols.iter().enumerate() {
        e[(global, local)] = 1.0;
    }
    Ok(e)
}

impl SparsityPattern {
    /// Entry for the block u_i ← y_j (1-based).
    pub fn entry(&self, i: usize, j: usize) -> PatternEntry {
        self.entries[(i - 1, j - 1)]
    }
}
