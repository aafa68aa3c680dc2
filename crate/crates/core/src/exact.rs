//! Exact inference used as ground truth: exhaustive enumeration, two-pass
//! elimination on forests, and row-by-row elimination on binary grids.

use crate::error::{Error, Result};
use crate::math::{entropy, log_normalize, log_sum_exp, softmax, LogSumExpAcc};
use crate::model::{grid_edges, LogPotentials, PairwiseModel};
use crate::tree::{Subtree, UnionFind};

pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// Node and edge distributions. `pairwise[e]` is row-major over the edge's
/// `(i, j)` states and may be absent (e.g. off-tree edges).
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Option<Vec<f64>>>,
}

impl MarginalSet {
    pub fn pair(&self, model: &PairwiseModel, e: usize) -> Result<&[f64]> {
        self.pairwise[e].as_deref().ok_or_else(|| {
            let (i, j) = model.edge(e);
            Error::MissingPairwise(i, j)
        })
    }

    /// Largest violation of `Σₜ τᵢⱼ(s, t) = τᵢ(s)` and `Σₛ τᵢⱼ(s, t) = τⱼ(t)`
    /// over the present pairwise tables.
    pub fn consistency_residual(&self, model: &PairwiseModel) -> f64 {
        let mut worst = 0.0f64;
        for (e, table) in self.pairwise.iter().enumerate() {
            let Some(t) = table else { continue };
            let (i, j) = model.edge(e);
            let (mi, mj) = (model.card(i), model.card(j));
            for s in 0..mi {
                let row: f64 = (0..mj).map(|u| t[s * mj + u]).sum();
                worst = worst.max((row - self.unary[i][s]).abs());
            }
            for u in 0..mj {
                let col: f64 = (0..mi).map(|s| t[s * mj + u]).sum();
                worst = worst.max((col - self.unary[j][u]).abs());
            }
        }
        worst
    }

    /// Mutual information of every edge that has a pairwise table.
    pub fn mutual_informations(&self, model: &PairwiseModel) -> Vec<Option<f64>> {
        (0..model.edge_count())
            .map(|e| {
                let (i, j) = model.edge(e);
                self.pairwise[e]
                    .as_deref()
                    .map(|t| mutual_information(t, &self.unary[i], &self.unary[j]))
            })
            .collect()
    }
}

fn check_cap(model: &PairwiseModel, cap: u64) -> Result<()> {
    let states = model.state_space_size();
    if states > cap as f64 {
        return Err(Error::StateSpaceTooLarge { states, cap });
    }
    Ok(())
}

/// Visits every configuration in mixed-radix order (node 0 fastest).
fn for_each_config(cards: &[usize], mut f: impl FnMut(&[usize])) {
    let n = cards.len();
    let mut x = vec![0usize; n];
    loop {
        f(&x);
        let mut k = 0;
        loop {
            if k == n {
                return;
            }
            x[k] += 1;
            if x[k] < cards[k] {
                break;
            }
            x[k] = 0;
            k += 1;
        }
    }
}

pub fn brute_force_log_partition(model: &PairwiseModel) -> Result<f64> {
    brute_force_log_partition_capped(model, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_log_partition_capped(model: &PairwiseModel, cap: u64) -> Result<f64> {
    check_cap(model, cap)?;
    let mut acc = LogSumExpAcc::default();
    for_each_config(model.cards(), |x| acc.push(model.score(x)));
    Ok(acc.value())
}

pub fn brute_force_marginals(model: &PairwiseModel) -> Result<MarginalSet> {
    brute_force_marginals_capped(model, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_marginals_capped(model: &PairwiseModel, cap: u64) -> Result<MarginalSet> {
    let log_z = brute_force_log_partition_capped(model, cap)?;
    let mut unary: Vec<Vec<f64>> = model.cards().iter().map(|&m| vec![0.0; m]).collect();
    let mut pairwise: Vec<Vec<f64>> = model
        .edges()
        .iter()
        .map(|&(i, j)| vec![0.0; model.card(i) * model.card(j)])
        .collect();
    for_each_config(model.cards(), |x| {
        let p = (model.score(x) - log_z).exp();
        for (i, &xi) in x.iter().enumerate() {
            unary[i][xi] += p;
        }
        for (e, &(i, j)) in model.edges().iter().enumerate() {
            pairwise[e][x[i] * model.card(j) + x[j]] += p;
        }
    });
    Ok(MarginalSet {
        unary,
        pairwise: pairwise.into_iter().map(Some).collect(),
    })
}

/// θ(x_a, x_b) for edge `e`, whichever way round `(a, b)` is stored.
#[inline]
pub(crate) fn pair_entry(model: &PairwiseModel, table: &[f64], e: usize, a: usize, xa: usize, xb: usize) -> f64 {
    let (i, j) = model.edge(e);
    if i == a {
        table[xa * model.card(j) + xb]
    } else {
        table[xb * model.card(j) + xa]
    }
}

/// Rooted traversal of a forest: components rooted at their lowest node.
struct RootedForest {
    /// BFS order over all nodes, component by component.
    order: Vec<usize>,
    /// `(parent, edge)` or `None` for roots.
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<(usize, usize)>>,
}

impl RootedForest {
    fn new(model: &PairwiseModel, tree: &Subtree) -> Self {
        let n = model.node_count();
        let mut adj = vec![Vec::new(); n];
        for &e in tree.edges() {
            let (i, j) = model.edge(e);
            adj[i].push((j, e));
            adj[j].push((i, e));
        }
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let start = order.len();
            order.push(root);
            let mut head = start;
            while head < order.len() {
                let u = order[head];
                head += 1;
                for &(v, e) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        parent[v] = Some((u, e));
                        children[u].push((v, e));
                        order.push(v);
                    }
                }
            }
        }
        Self {
            order,
            parent,
            children,
        }
    }
}

fn check_support(model: &PairwiseModel, tree: &Subtree, params: &LogPotentials) -> Result<()> {
    for e in 0..model.edge_count() {
        if !tree.contains(e) && params.pairwise[e].iter().any(|&x| x != 0.0) {
            let (i, j) = model.edge(e);
            return Err(Error::OffTreeSupport(i, j));
        }
    }
    Ok(())
}

/// Upward messages `up[c](x_parent)`, computed leaves first.
fn upward(model: &PairwiseModel, forest: &RootedForest, params: &LogPotentials) -> Vec<Vec<f64>> {
    let n = model.node_count();
    let mut up: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &c in forest.order.iter().rev() {
        let Some((p, e)) = forest.parent[c] else { continue };
        let mut local = params.unary[c].clone();
        for &(k, _) in &forest.children[c] {
            local.iter_mut().zip(&up[k]).for_each(|(a, b)| *a += b);
        }
        let mut buf = vec![0.0; model.card(c)];
        up[c] = (0..model.card(p))
            .map(|xp| {
                for (xc, b) in buf.iter_mut().enumerate() {
                    *b = local[xc] + pair_entry(model, &params.pairwise[e], e, c, xc, xp);
                }
                log_sum_exp(&buf)
            })
            .collect();
    }
    up
}

/// Exact Φ of the forest-structured parameters `params` over `tree`.
pub fn tree_log_partition(model: &PairwiseModel, tree: &Subtree, params: &LogPotentials) -> Result<f64> {
    check_support(model, tree, params)?;
    let forest = RootedForest::new(model, tree);
    let up = upward(model, &forest, params);
    let mut total = 0.0;
    for &r in forest.order.iter().filter(|&&r| forest.parent[r].is_none()) {
        let mut b = params.unary[r].clone();
        for &(k, _) in &forest.children[r] {
            b.iter_mut().zip(&up[k]).for_each(|(a, m)| *a += m);
        }
        total += log_sum_exp(&b);
    }
    Ok(total)
}

/// Exact node marginals and tree-edge marginals via an upward then a
/// downward pass. Off-tree edges get no pairwise table.
pub fn tree_marginals(model: &PairwiseModel, tree: &Subtree, params: &LogPotentials) -> Result<MarginalSet> {
    check_support(model, tree, params)?;
    let n = model.node_count();
    let forest = RootedForest::new(model, tree);
    let up = upward(model, &forest, params);

    // incoming[c] = θ_c + all upward messages from children
    let mut incoming: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut v = params.unary[c].clone();
            for &(k, _) in &forest.children[c] {
                v.iter_mut().zip(&up[k]).for_each(|(a, m)| *a += m);
            }
            v
        })
        .collect();
    let mut down: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut pairwise: Vec<Option<Vec<f64>>> = vec![None; model.edge_count()];
    for &c in &forest.order {
        let Some((p, e)) = forest.parent[c] else { continue };
        // parent's belief without c's contribution
        let cavity: Vec<f64> = (0..model.card(p))
            .map(|xp| incoming[p][xp] - up[c][xp] + down[p].get(xp).copied().unwrap_or(0.0))
            .collect();
        let (mi, mj) = (model.card(model.edge(e).0), model.card(model.edge(e).1));
        let mut joint = vec![0.0; mi * mj];
        for xp in 0..model.card(p) {
            for xc in 0..model.card(c) {
                let v = cavity[xp] + pair_entry(model, &params.pairwise[e], e, p, xp, xc) + incoming[c][xc];
                let idx = if model.edge(e).0 == p { xp * mj + xc } else { xc * mj + xp };
                joint[idx] = v;
            }
        }
        log_normalize(&mut joint);
        pairwise[e] = Some(joint.iter().map(|x| x.exp()).collect());
        let mut buf = vec![0.0; model.card(p)];
        down[c] = (0..model.card(c))
            .map(|xc| {
                for (xp, b) in buf.iter_mut().enumerate() {
                    *b = cavity[xp] + pair_entry(model, &params.pairwise[e], e, p, xp, xc);
                }
                log_sum_exp(&buf)
            })
            .collect();
    }
    for c in 0..n {
        if !down[c].is_empty() {
            let d = std::mem::take(&mut down[c]);
            incoming[c].iter_mut().zip(&d).for_each(|(a, m)| *a += m);
        }
    }
    Ok(MarginalSet {
        unary: incoming.iter().map(|b| softmax(b)).collect(),
        pairwise,
    })
}

pub fn entropy_unary(tau: &[f64]) -> f64 {
    entropy(tau)
}

/// `Σ τᵢⱼ log(τᵢⱼ / τᵢτⱼ)` with `0 log 0 = 0`; values in `[−1e-12, 0)` clamp to 0.
pub fn mutual_information(tau_ij: &[f64], tau_i: &[f64], tau_j: &[f64]) -> f64 {
    let mj = tau_j.len();
    let mut mi = 0.0;
    for (s, &pi) in tau_i.iter().enumerate() {
        for (t, &pj) in tau_j.iter().enumerate() {
            let p = tau_ij[s * mj + t];
            if p > 0.0 {
                mi += p * (p / (pi * pj)).ln();
            }
        }
    }
    if (-1e-12..0.0).contains(&mi) {
        0.0
    } else {
        mi
    }
}

/// `Σᵢ Hᵢ − Σ_{(i,j) ∈ tree} Iᵢⱼ`.
pub fn tree_entropy(model: &PairwiseModel, marginals: &MarginalSet, tree: &Subtree) -> Result<f64> {
    let mut h: f64 = marginals.unary.iter().map(|t| entropy(t)).sum();
    for &e in tree.edges() {
        let (i, j) = model.edge(e);
        let t = marginals.pair(model, e)?;
        h -= mutual_information(t, &marginals.unary[i], &marginals.unary[j]);
    }
    Ok(h)
}

/// `(rows, cols)` if the model's edge set is exactly a lattice with node
/// `r * cols + c`; the narrowest matching shape is reported.
pub fn grid_shape(model: &PairwiseModel) -> Option<(usize, usize)> {
    let n = model.node_count();
    (1..=n)
        .filter(|c| n % c == 0)
        .map(|c| (n / c, c))
        .filter(|&(r, c)| grid_edges(r, c) == model.edges())
        .min_by_key(|&(r, c)| r.min(c) * n + c)
}

pub const GRID_WIDTH_CAP: usize = 14;

/// Exact Φ of a binary grid model by eliminating one node at a time while
/// keeping a log-domain table over the current frontier row.
pub fn grid_log_partition(model: &PairwiseModel) -> Result<f64> {
    let (rows, cols) = grid_shape(model).ok_or_else(|| Error::NotGrid("edge set is not a lattice".into()))?;
    if model.cards().iter().any(|&m| m != 2) {
        return Err(Error::NotGrid("grid elimination needs binary nodes".into()));
    }
    // Sweep along the longer side with the frontier spanning the shorter one.
    let (len, width) = (rows.max(cols), rows.min(cols));
    if width > GRID_WIDTH_CAP {
        return Err(Error::NotGrid(format!("width {width} exceeds cap {GRID_WIDTH_CAP}")));
    }
    let node = |r: usize, c: usize| if cols <= rows { r * cols + c } else { c * cols + r };
    let unary = |i: usize, x: usize| model.unary(i)[x];
    let pair = |a: usize, xa: usize, b: usize, xb: usize| {
        let e = model.edge_index(a, b).expect("lattice edge");
        pair_entry(model, model.pairwise(e), e, a, xa, xb)
    };
    let bit = |f: usize, c: usize| (f >> c) & 1;

    let size = 1usize << width;
    let mut table: Vec<f64> = (0..size)
        .map(|f| {
            let mut s = 0.0;
            for c in 0..width {
                s += unary(node(0, c), bit(f, c));
                if c > 0 {
                    s += pair(node(0, c - 1), bit(f, c - 1), node(0, c), bit(f, c));
                }
            }
            s
        })
        .collect();
    let mut next = vec![0.0; size];
    for r in 1..len {
        for c in 0..width {
            let (u, upn) = (node(r, c), node(r - 1, c));
            for f in 0..size {
                let xu = bit(f, c);
                let mut local = unary(u, xu);
                if c > 0 {
                    local += pair(node(r, c - 1), bit(f, c - 1), u, xu);
                }
                let base = f & !(1 << c);
                let a = table[base] + pair(upn, 0, u, xu);
                let b = table[base | (1 << c)] + pair(upn, 1, u, xu);
                next[f] = local + log_sum_exp(&[a, b]);
            }
            std::mem::swap(&mut table, &mut next);
        }
    }
    Ok(log_sum_exp(&table))
}

pub fn is_forest(model: &PairwiseModel) -> bool {
    let mut uf = UnionFind::new(model.node_count());
    model.edges().iter().all(|&(i, j)| uf.union(i, j))
}

/// Exact Φ by the cheapest applicable route: forest elimination, grid
/// elimination, or enumeration under the default cap.
pub fn exact_log_partition(model: &PairwiseModel) -> Result<f64> {
    if is_forest(model) {
        let tree = Subtree::all_edges(model)?;
        return tree_log_partition(model, &tree, model.params());
    }
    if grid_shape(model).is_some() && model.cards().iter().all(|&m| m == 2) {
        if let Ok(v) = grid_log_partition(model) {
            return Ok(v);
        }
    }
    brute_force_log_partition(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ising_model, random_ising, triangle_example, Coupling};

    #[test]
    fn brute_force_examples() {
        let single = PairwiseModel::new(vec![2], vec![], vec![vec![0.0; 2]], vec![]).unwrap();
        assert!((brute_force_log_partition(&single).unwrap() - 2f64.ln()).abs() < 1e-15);
        let tri = brute_force_log_partition(&triangle_example()).unwrap();
        assert!((tri - 4.1f64.ln()).abs() < 1e-12);
        assert!((tri - 1.410987).abs() < 1e-6);
        let pair = PairwiseModel::new(vec![2, 2], vec![], vec![vec![0.0; 2]; 2], vec![]).unwrap();
        assert!((brute_force_log_partition(&pair).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cap_is_enforced() {
        let m = random_ising(21, vec![], Coupling::Mixed, 0.0, 0).unwrap();
        assert!(matches!(brute_force_log_partition(&m), Err(Error::StateSpaceTooLarge { .. })));
        assert!(brute_force_log_partition_capped(&m, 1 << 21).is_ok());
    }

    #[test]
    fn triangle_marginals() {
        let mg = brute_force_marginals(&triangle_example()).unwrap();
        for u in &mg.unary {
            assert!((u[0] - 0.5).abs() < 1e-14);
        }
        // Σ over x₃ of ψ-products per (x₁, x₂): (0,0) → 1·(1·1 + .5·.5) = 1.25,
        // (0,1) → .8·(1·.5 + .5·1) = .8; normalized by Z = 4.1
        let expect = [1.25 / 4.1, 0.8 / 4.1, 0.8 / 4.1, 1.25 / 4.1];
        for (a, b) in mg.pairwise[0].as_ref().unwrap().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn tree_examples() {
        let chain = ising_model(2, vec![(0, 1)], &[0.0, 0.0], &[0.0]).unwrap();
        let t = Subtree::all_edges(&chain).unwrap();
        assert!((tree_log_partition(&chain, &t, chain.params()).unwrap() - 4f64.ln()).abs() < 1e-15);
        let mg = tree_marginals(&chain, &t, chain.params()).unwrap();
        assert!(mg.pairwise[0].as_ref().unwrap().iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let forest = PairwiseModel::new(vec![2, 3], vec![], vec![vec![0.3, -1.0], vec![0.0, 2.0, 1.0]], vec![]).unwrap();
        let expect = log_sum_exp(&[0.3, -1.0]) + log_sum_exp(&[0.0, 2.0, 1.0]);
        let v = tree_log_partition(&forest, &Subtree::empty(), forest.params()).unwrap();
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn off_tree_support_is_rejected() {
        let m = triangle_example();
        let t = Subtree::new(&m, vec![0, 1]).unwrap();
        assert_eq!(tree_log_partition(&m, &t, m.params()), Err(Error::OffTreeSupport(1, 2)));
    }

    #[test]
    fn strong_star_edge_concentrates() {
        // star centred at 0; edge (0,1) has coupling 5
        let m = ising_model(4, vec![(0, 1), (0, 2), (0, 3)], &[0.0; 4], &[5.0, 0.1, -0.2]).unwrap();
        let t = Subtree::all_edges(&m).unwrap();
        let mg = tree_marginals(&m, &t, m.params()).unwrap();
        let p = mg.pairwise[0].as_ref().unwrap();
        assert!(p[1] + p[2] < 1e-4);
        let agree = 5f64.exp() / (5f64.exp() + (-5f64).exp());
        assert!((p[0] + p[3] - agree).abs() < 1e-12);
    }

    #[test]
    fn entropy_and_mi_examples() {
        assert!((entropy_unary(&[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
        let ti = [0.3, 0.7];
        let tj = [0.6, 0.4];
        let indep: Vec<f64> = ti.iter().flat_map(|a| tj.iter().map(move |b| a * b)).collect();
        assert_eq!(mutual_information(&indep, &ti, &tj), 0.0);
        let corr = [0.5, 0.0, 0.0, 0.5];
        assert!((mutual_information(&corr, &[0.5, 0.5], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);

        let m = ising_model(2, vec![(0, 1)], &[0.0; 2], &[0.0]).unwrap();
        let t = Subtree::all_edges(&m).unwrap();
        let mg = MarginalSet {
            unary: vec![vec![0.5, 0.5]; 2],
            pairwise: vec![Some(corr.to_vec())],
        };
        assert!((tree_entropy(&m, &mg, &t).unwrap() - 2f64.ln()).abs() < 1e-15);
        let chain = ising_model(5, (1..5).map(|k| (k - 1, k)).collect(), &[0.0; 5], &[0.0; 4]).unwrap();
        let tc = Subtree::all_edges(&chain).unwrap();
        let mg = tree_marginals(&chain, &tc, chain.params()).unwrap();
        assert!((tree_entropy(&chain, &mg, &tc).unwrap() - 5.0 * 2f64.ln()).abs() < 1e-12);
        let missing = MarginalSet {
            unary: mg.unary.clone(),
            pairwise: vec![None; 4],
        };
        assert_eq!(tree_entropy(&chain, &missing, &tc), Err(Error::MissingPairwise(0, 1)));
    }

    #[test]
    fn grid_shapes() {
        let g = random_ising(12, grid_edges(3, 4), Coupling::Mixed, 1.0, 1).unwrap();
        assert_eq!(grid_shape(&g), Some((3, 4)));
        assert_eq!(grid_shape(&triangle_example()), None);
        assert!(matches!(grid_log_partition(&triangle_example()), Err(Error::NotGrid(_))));
    }

    #[test]
    fn zero_coupling_grid_factorizes() {
        let m = random_ising(100, grid_edges(10, 10), Coupling::Mixed, 0.0, 9).unwrap();
        let expect: f64 = (0..100).map(|i| {
            let h = m.unary(i)[1];
            (h.exp() + (-h).exp()).ln()
        }).sum();
        assert!((grid_log_partition(&m).unwrap() - expect).abs() < 1e-10);
    }
}
