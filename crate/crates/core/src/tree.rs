//! Spanning trees and forests over a model's edge set.

use crate::error::{Error, Result};
use crate::model::{seeded_rng, uniform, PairwiseModel, SeededRng};

/// Disjoint-set forest with path halving and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// An acyclic subset of a model's edges (by edge index), spanning all nodes.
/// Possibly disconnected; the empty set is the fully factorized forest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subtree {
    edges: Vec<usize>,
}

impl Subtree {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates range and acyclicity against `model`.
    pub fn new(model: &PairwiseModel, mut edges: Vec<usize>) -> Result<Self> {
        edges.sort_unstable();
        edges.dedup();
        let mut uf = UnionFind::new(model.node_count());
        for &e in &edges {
            if e >= model.edge_count() {
                return Err(Error::InvalidModel(format!("edge index {e} out of range")));
            }
            let (i, j) = model.edge(e);
            if !uf.union(i, j) {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) closes a cycle")));
            }
        }
        Ok(Self { edges })
    }

    /// Builds from node pairs.
    pub fn from_pairs(model: &PairwiseModel, pairs: &[(usize, usize)]) -> Result<Self> {
        let idx = pairs
            .iter()
            .map(|&(a, b)| {
                model
                    .edge_index(a, b)
                    .ok_or_else(|| Error::InvalidModel(format!("({a}, {b}) is not a model edge")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, idx)
    }

    /// The whole edge set of an acyclic model.
    pub fn all_edges(model: &PairwiseModel) -> Result<Self> {
        Self::new(model, (0..model.edge_count()).collect())
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, e: usize) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    pub fn is_spanning_tree(&self, model: &PairwiseModel) -> bool {
        self.edges.len() + 1 == model.node_count()
    }

    /// `"i-j;i-j;..."` in edge order.
    pub fn label(&self, model: &PairwiseModel) -> String {
        self.edges
            .iter()
            .map(|&e| {
                let (i, j) = model.edge(e);
                format!("{i}-{j}")
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// True iff adding any single model edge to `tree` leaves it acyclic.
pub fn is_v_acyclic(model: &PairwiseModel, tree: &Subtree) -> bool {
    first_cycle_closing_edge(model, tree).is_none()
}

pub(crate) fn first_cycle_closing_edge(model: &PairwiseModel, tree: &Subtree) -> Option<usize> {
    let mut uf = UnionFind::new(model.node_count());
    for &e in tree.edges() {
        let (i, j) = model.edge(e);
        uf.union(i, j);
    }
    (0..model.edge_count())
        .filter(|&e| !tree.contains(e))
        .find(|&e| {
            let (i, j) = model.edge(e);
            uf.find(i) == uf.find(j)
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningForest {
    pub tree: Subtree,
    /// False when the graph is disconnected and `tree` is only a forest.
    pub spanning: bool,
}

/// Kruskal on descending weight; equal weights prefer the lexicographically
/// smaller edge.
pub fn max_weight_spanning_tree(model: &PairwiseModel, weights: &[f64]) -> SpanningForest {
    assert_eq!(weights.len(), model.edge_count(), "one weight per edge");
    let mut order: Vec<usize> = (0..model.edge_count()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut uf = UnionFind::new(model.node_count());
    let mut edges = Vec::with_capacity(model.node_count().saturating_sub(1));
    for e in order {
        let (i, j) = model.edge(e);
        if uf.union(i, j) {
            edges.push(e);
        }
    }
    edges.sort_unstable();
    let spanning = edges.len() + 1 == model.node_count() || model.node_count() == 0;
    SpanningForest {
        tree: Subtree { edges },
        spanning,
    }
}

fn spanning_or_err(forest: SpanningForest) -> Result<Subtree> {
    if forest.spanning {
        Ok(forest.tree)
    } else {
        Err(Error::Disconnected)
    }
}

/// Max-weight spanning tree under i.i.d. U(0, 1) edge weights drawn in edge order.
pub fn random_spanning_tree_with(model: &PairwiseModel, rng: &mut SeededRng) -> Result<Subtree> {
    let w: Vec<f64> = (0..model.edge_count()).map(|_| uniform(rng, 0.0, 1.0)).collect();
    spanning_or_err(max_weight_spanning_tree(model, &w))
}

pub fn random_spanning_tree(model: &PairwiseModel, seed: u64) -> Result<Subtree> {
    random_spanning_tree_with(model, &mut seeded_rng(seed))
}

/// Draws spanning trees until every edge is covered. After the first draw,
/// still-uncovered edges get weight 2 so each draw covers at least one new
/// edge; at most `|E|` trees are returned.
pub fn cover_with_spanning_trees_with(model: &PairwiseModel, rng: &mut SeededRng) -> Result<Vec<Subtree>> {
    let m = model.edge_count();
    let mut covered = vec![false; m];
    let mut trees = Vec::new();
    loop {
        let w: Vec<f64> = (0..m)
            .map(|e| {
                let u = uniform(rng, 0.0, 1.0);
                if trees.is_empty() || covered[e] {
                    u
                } else {
                    2.0
                }
            })
            .collect();
        let tree = spanning_or_err(max_weight_spanning_tree(model, &w))?;
        tree.edges().iter().for_each(|&e| covered[e] = true);
        trees.push(tree);
        if covered.iter().all(|&c| c) {
            return Ok(trees);
        }
    }
}

pub fn cover_with_spanning_trees(model: &PairwiseModel, seed: u64) -> Result<Vec<Subtree>> {
    cover_with_spanning_trees_with(model, &mut seeded_rng(seed))
}

/// Every spanning tree, by brute force over `(n-1)`-subsets of edges in
/// lexicographic subset order. Only for small graphs.
pub fn enumerate_spanning_trees(model: &PairwiseModel) -> Vec<Subtree> {
    let n = model.node_count();
    let m = model.edge_count();
    assert!(m <= 24, "enumeration is exponential in the edge count");
    let k = n.saturating_sub(1);
    let mut out = Vec::new();
    let mut pick: Vec<usize> = (0..k).collect();
    if k > m {
        return out;
    }
    loop {
        let mut uf = UnionFind::new(n);
        if pick.iter().all(|&e| {
            let (i, j) = model.edge(e);
            uf.union(i, j)
        }) {
            out.push(Subtree { edges: pick.clone() });
        }
        // next combination
        let mut idx = k;
        loop {
            if idx == 0 {
                return out;
            }
            idx -= 1;
            if pick[idx] < m - k + idx {
                pick[idx] += 1;
                for t in idx + 1..k {
                    pick[t] = pick[t - 1] + 1;
                }
                break;
            }
        }
    }
}
