//! Discrete pairwise MRFs in overcomplete log-potential form, plus the
//! seeded model generators used by the experiments.
//!
//! Potentials are stored as natural-log tables: `unary[i][s] = θᵢ(s)` and
//! `pairwise[e][s * m_j + t] = θᵢⱼ(s, t)` for edge `e = (i, j)`, `i < j`.
//! Edges are kept in lexicographic order, so an edge index doubles as its
//! tie-break rank.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded generator used everywhere a model or tree is drawn at random.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on the half-open interval `[lo, hi)`; degenerate when `lo == hi`.
pub fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Log-potential tables laid out like a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPotentials {
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<f64>>,
}

impl LogPotentials {
    /// All-zero tables matching `model`'s shape.
    pub fn zeros_like(model: &PairwiseModel) -> Self {
        Self {
            unary: model.cards.iter().map(|&m| vec![0.0; m]).collect(),
            pairwise: model
                .edges
                .iter()
                .map(|&(i, j)| vec![0.0; model.cards[i] * model.cards[j]])
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.unary
            .iter()
            .chain(self.pairwise.iter())
            .flatten()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Entry-wise `self + scale * other`.
    pub fn add_scaled(&mut self, other: &LogPotentials, scale: f64) {
        for (a, b) in self.unary.iter_mut().zip(&other.unary) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.pairwise.iter_mut().zip(&other.pairwise) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scaled(&self, scale: f64) -> LogPotentials {
        let map = |t: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            t.iter()
                .map(|row| row.iter().map(|x| x * scale).collect())
                .collect()
        };
        LogPotentials {
            unary: map(&self.unary),
            pairwise: map(&self.pairwise),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseModel {
    cards: Vec<usize>,
    edges: Vec<(usize, usize)>,
    params: LogPotentials,
    /// Per node: `(edge index, neighbor)` pairs in edge order.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl PairwiseModel {
    /// Builds and validates a model. Edges given as `(j, i)` with `j > i` are
    /// flipped (their tables transposed), and the edge list is sorted.
    pub fn new(
        cards: Vec<usize>,
        edges: Vec<(usize, usize)>,
        unary: Vec<Vec<f64>>,
        pairwise: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = cards.len();
        if let Some(i) = cards.iter().position(|&m| m < 2) {
            return Err(Error::InvalidModel(format!(
                "node {i} has cardinality {} (< 2)",
                cards[i]
            )));
        }
        if unary.len() != n {
            return Err(Error::InvalidModel(format!(
                "{} unary tables for {n} nodes",
                unary.len()
            )));
        }
        if pairwise.len() != edges.len() {
            return Err(Error::InvalidModel(format!(
                "{} pairwise tables for {} edges",
                pairwise.len(),
                edges.len()
            )));
        }
        for (i, t) in unary.iter().enumerate() {
            if t.len() != cards[i] {
                return Err(Error::InvalidModel(format!(
                    "unary table of node {i} has length {}, expected {}",
                    t.len(),
                    cards[i]
                )));
            }
        }

        let mut oriented: Vec<((usize, usize), Vec<f64>)> = Vec::with_capacity(edges.len());
        for (&(a, b), table) in edges.iter().zip(pairwise) {
            if a >= n || b >= n {
                return Err(Error::InvalidModel(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidModel(format!("self-loop on node {a}")));
            }
            if table.len() != cards[a] * cards[b] {
                return Err(Error::InvalidModel(format!(
                    "table of edge ({a}, {b}) has length {}, expected {}",
                    table.len(),
                    cards[a] * cards[b]
                )));
            }
            if a < b {
                oriented.push(((a, b), table));
            } else {
                let (ma, mb) = (cards[a], cards[b]);
                let mut t = vec![0.0; ma * mb];
                for s in 0..ma {
                    for r in 0..mb {
                        t[r * ma + s] = table[s * mb + r];
                    }
                }
                oriented.push(((b, a), t));
            }
        }
        oriented.sort_by_key(|(e, _)| *e);
        for w in oriented.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidModel(format!(
                    "duplicate edge ({}, {})",
                    w[0].0 .0, w[0].0 .1
                )));
            }
        }
        let (edges, pairwise): (Vec<_>, Vec<_>) = oriented.into_iter().unzip();
        let params = LogPotentials { unary, pairwise };
        if params
            .unary
            .iter()
            .chain(params.pairwise.iter())
            .flatten()
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidModel("non-finite log-potential".into()));
        }

        let mut adjacency = vec![Vec::new(); n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push((e, j));
            adjacency[j].push((e, i));
        }
        Ok(Self {
            cards,
            edges,
            params,
            adjacency,
        })
    }

    /// Same graph, new parameters. Panics if `params` has the wrong shape.
    pub fn with_params(&self, params: LogPotentials) -> Self {
        assert_eq!(params.unary.len(), self.cards.len());
        assert_eq!(params.pairwise.len(), self.edges.len());
        Self {
            params,
            ..self.clone()
        }
    }

    pub fn node_count(&self) -> usize {
        self.cards.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self, i: usize) -> usize {
        self.cards[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Index of edge `{a, b}` if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).ok()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn params(&self) -> &LogPotentials {
        &self.params
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.params.unary[i]
    }

    pub fn pairwise(&self, e: usize) -> &[f64] {
        &self.params.pairwise[e]
    }

    /// Number of joint configurations, as a float to avoid overflow.
    pub fn state_space_size(&self) -> f64 {
        self.cards.iter().map(|&m| m as f64).product()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(_, k) in &self.adjacency[i] {
                if !seen[k] {
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Log of the unnormalized probability of configuration `x`.
    pub fn score(&self, x: &[usize]) -> f64 {
        let mut s: f64 = x.iter().enumerate().map(|(i, &xi)| self.params.unary[i][xi]).sum();
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            s += self.params.pairwise[e][x[i] * self.cards[j] + x[j]];
        }
        s
    }

    /// Field-by-field comparison with an absolute tolerance on the tables.
    pub fn approx_eq(&self, other: &PairwiseModel, tol: f64) -> bool {
        let close = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol)
                })
        };
        self.cards == other.cards
            && self.edges == other.edges
            && close(&self.params.unary, &other.params.unary)
            && close(&self.params.pairwise, &other.params.pairwise)
    }
}

/// The three-node example with ψᵢ = [1, 1], ψ₀₁ = [[1, .8], [.8, 1]] and
/// ψ₀₂ = ψ₁₂ = [[1, .5], [.5, 1]].
pub fn triangle_example() -> PairwiseModel {
    let table = |off: f64| vec![0.0, off.ln(), off.ln(), 0.0];
    PairwiseModel::new(
        vec![2; 3],
        vec![(0, 1), (0, 2), (1, 2)],
        vec![vec![0.0; 2]; 3],
        vec![table(0.8), table(0.5), table(0.5)],
    )
    .expect("triangle example is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    IsingGrid,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Attractive,
    Mixed,
}

impl std::str::FromStr for Coupling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "attractive" => Ok(Coupling::Attractive),
            "mixed" => Ok(Coupling::Mixed),
            other => Err(format!("unknown coupling mode {other:?}")),
        }
    }
}

impl std::fmt::Display for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Coupling::Attractive => "attractive",
            Coupling::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelFamilySpec {
    pub family: ModelFamily,
    pub rows: usize,
    pub cols: usize,
    pub coupling: Coupling,
    pub strength: f64,
    pub seed: u64,
}

impl ModelFamilySpec {
    pub fn ising_grid(rows: usize, cols: usize, coupling: Coupling, strength: f64, seed: u64) -> Self {
        Self {
            family: ModelFamily::IsingGrid,
            rows,
            cols,
            coupling,
            strength,
            seed,
        }
    }
}

/// Ising model on an arbitrary binary graph: states {0, 1} stand for {−1, +1}.
/// Field θᵢ is drawn U(−0.05, 0.05) per node in index order, then coupling θᵢⱼ
/// per edge in lexicographic order from U(0, c) or U(−c, c).
pub fn random_ising(
    node_count: usize,
    edges: Vec<(usize, usize)>,
    coupling: Coupling,
    strength: f64,
    seed: u64,
) -> Result<PairwiseModel> {
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::InvalidModel(format!("coupling strength {strength} must be >= 0")));
    }
    let mut edges = edges;
    for e in edges.iter_mut() {
        if e.0 > e.1 {
            *e = (e.1, e.0);
        }
    }
    edges.sort_unstable();
    let mut rng = seeded_rng(seed);
    let fields: Vec<f64> = (0..node_count).map(|_| uniform(&mut rng, -0.05, 0.05)).collect();
    let couplings: Vec<f64> = edges
        .iter()
        .map(|_| match coupling {
            Coupling::Attractive => uniform(&mut rng, 0.0, strength),
            Coupling::Mixed => uniform(&mut rng, -strength, strength),
        })
        .collect();
    ising_model(node_count, edges, &fields, &couplings)
}

/// Ising tables for given fields and couplings under the {0 ↦ −1, 1 ↦ +1} encoding.
pub fn ising_model(
    node_count: usize,
    edges: Vec<(usize, usize)>,
    fields: &[f64],
    couplings: &[f64],
) -> Result<PairwiseModel> {
    let unary = fields.iter().map(|&h| vec![-h, h]).collect();
    let pairwise = couplings.iter().map(|&j| vec![j, -j, -j, j]).collect();
    PairwiseModel::new(vec![2; node_count], edges, unary, pairwise)
}

/// Edge list of a `rows × cols` lattice with node `r * cols + c`.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    edges.sort_unstable();
    edges
}

pub fn gen_ising_grid(spec: &ModelFamilySpec) -> Result<PairwiseModel> {
    if spec.family != ModelFamily::IsingGrid {
        return Err(Error::InvalidModel("model family is not ising-grid".into()));
    }
    if spec.rows * spec.cols == 0 {
        return Err(Error::InvalidModel("grid must have at least one node".into()));
    }
    random_ising(
        spec.rows * spec.cols,
        grid_edges(spec.rows, spec.cols),
        spec.coupling,
        spec.strength,
        spec.seed,
    )
}

/// Generates any supported family; the triangle family draws Ising
/// parameters on a 3-cycle.
pub fn generate(spec: &ModelFamilySpec) -> Result<PairwiseModel> {
    match spec.family {
        ModelFamily::IsingGrid => gen_ising_grid(spec),
        ModelFamily::Triangle => random_ising(
            3,
            vec![(0, 1), (0, 2), (1, 2)],
            spec.coupling,
            spec.strength,
            spec.seed,
        ),
    }
}

/// Random labelled tree on `n` nodes (node `k > 0` attaches to a uniformly
/// drawn earlier node) with Ising parameters.
pub fn random_tree_ising(n: usize, coupling: Coupling, strength: f64, seed: u64) -> Result<PairwiseModel> {
    let mut rng = seeded_rng(seed ^ 0x7472_6565);
    let edges = (1..n).map(|k| (rng.gen_range(0..k), k)).collect();
    random_ising(n, edges, coupling, strength, seed)
}
