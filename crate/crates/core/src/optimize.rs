//! Weight and structure optimization for the tree-reweighted bounds.
//!
//! The lower bound uses the negative-domain parameterization: β follows a
//! log-gradient step on H⁺ − Σᵣ vᵣHᵣ⁻, v follows a conditional-gradient step
//! towards the maximum mutual-information spanning tree, and T⁺ is
//! periodically reselected by Chow-Liu. The upper bound runs conditional
//! gradient on positive weights with a backtracking step.

use crate::bound::{certify_bound, BoundResult, Direction};
use crate::ensemble::{NegativeEnsembleView, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::exact::{entropy_unary, MarginalSet};
use crate::model::{seeded_rng, PairwiseModel};
use crate::mp::{run_message_passing_from, EdgeAppearanceMap, Messages, MpOptions};
use crate::tree::{cover_with_spanning_trees_with, max_weight_spanning_tree, random_spanning_tree_with, Subtree};

/// Bound on |ε_β · gap · β| before exponentiation.
pub const BETA_EXPONENT_CLAMP: f64 = 50.0;
/// Range β is kept in between outer iterations.
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 1e6;
/// The upper-bound optimizer stops once an accepted step gains less.
pub const UPPER_STALL: f64 = 1e-7;
/// Floor for positive ensemble weights.
pub const WEIGHT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    pub beta_init: f64,
    pub step_beta: f64,
    pub step_v: f64,
    pub outer_iters: usize,
    pub inner: MpOptions,
    pub reselect_positive: bool,
    pub reselect_period: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            beta_init: 10.0,
            step_beta: 1.0,
            step_v: 0.05,
            outer_iters: 50,
            inner: MpOptions::default(),
            reselect_positive: true,
            reselect_period: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTraceRow {
    pub iter: usize,
    /// β for the lower bound; NaN for the upper bound.
    pub beta: f64,
    pub bound: f64,
    pub certified: bool,
    pub converged: bool,
    /// H⁺ − Σᵣ vᵣHᵣ⁻ for the lower bound, max − min member entropy for the upper.
    pub entropy_gap: f64,
    pub beta_clamped: bool,
    /// T⁺ for the lower bound, the newest tree for the upper.
    pub tree_edges: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerTrace {
    pub rows: Vec<OptimizerTraceRow>,
    /// Ensemble of the returned iterate.
    pub ensemble: Option<WeightedEnsemble>,
}

impl OptimizerTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,beta,bound,certified,entropy_gap,tree_edges\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.beta, r.bound, r.certified, r.entropy_gap, r.tree_edges
            ));
        }
        out
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.bound).collect()
    }
}

/// β · exp(ε_β · gap · β), with the exponent clamped. Returns whether the
/// clamp was hit.
pub fn update_beta_flagged(beta: f64, h_plus: f64, v: &[f64], h_minus: &[f64], eps_beta: f64) -> (f64, bool) {
    let gap = h_plus - v.iter().zip(h_minus).map(|(a, b)| a * b).sum::<f64>();
    let raw = eps_beta * gap * beta;
    let exponent = raw.clamp(-BETA_EXPONENT_CLAMP, BETA_EXPONENT_CLAMP);
    (beta * exponent.exp(), exponent != raw)
}

pub fn update_beta(beta: f64, h_plus: f64, v: &[f64], h_minus: &[f64], eps_beta: f64) -> f64 {
    update_beta_flagged(beta, h_plus, v, h_minus, eps_beta).0
}

fn mi_weights(model: &PairwiseModel, marginals: &MarginalSet) -> Vec<f64> {
    marginals.mutual_informations(model).into_iter().map(|m| m.unwrap_or(0.0)).collect()
}

fn spanning_tree_on(model: &PairwiseModel, weights: &[f64]) -> Result<Subtree> {
    let f = max_weight_spanning_tree(model, weights);
    if f.spanning {
        Ok(f.tree)
    } else {
        Err(Error::Disconnected)
    }
}

/// Maximum-ΣI spanning tree under the current marginals.
pub fn reselect_positive_tree(model: &PairwiseModel, marginals: &MarginalSet) -> Result<Subtree> {
    spanning_tree_on(model, &mi_weights(model, marginals))
}

/// Moves `pool` by `eps_v` towards the simplex vertex of the maximum-ΣI
/// spanning tree (the minimum-entropy tree), adding it when absent.
pub fn update_v(model: &PairwiseModel, pool: &[(Subtree, f64)], mutual_info: &[f64], eps_v: f64) -> Result<(Vec<(Subtree, f64)>, Subtree)> {
    let tree = spanning_tree_on(model, mutual_info)?;
    Ok((step_towards(pool, &tree, eps_v), tree))
}

fn step_towards(pool: &[(Subtree, f64)], tree: &Subtree, eps: f64) -> Vec<(Subtree, f64)> {
    if eps == 0.0 {
        return pool.to_vec();
    }
    let mut out: Vec<(Subtree, f64)> = pool.iter().map(|(t, v)| (t.clone(), (1.0 - eps) * v)).collect();
    match out.iter_mut().find(|(t, _)| t == tree) {
        Some(m) => m.1 += eps,
        None => out.push((tree.clone(), eps)),
    }
    out
}

/// `ΣHᵢ − Σ_{e∈T} Iₑ` from shared pseudomarginals.
fn tree_entropy_from(node_entropy: f64, mi: &[f64], tree: &Subtree) -> f64 {
    node_entropy - tree.edges().iter().map(|&e| mi[e]).sum::<f64>()
}

fn is_recoverable(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::InvalidEdgeAppearance { .. } | Error::ZeroMarginal(_))
}

fn better(a: &BoundResult, b: &BoundResult) -> bool {
    match a.direction {
        Direction::Lower => a.value > b.value,
        _ => a.value < b.value,
    }
}

fn uncertified(direction: Direction, iterations: usize) -> BoundResult {
    BoundResult {
        value: f64::NAN,
        direction,
        certified: false,
        residual_max: f64::INFINITY,
        converged: false,
        iterations,
        domain: None,
        trace: None,
    }
}

fn dedup_pool(trees: Vec<Subtree>) -> Vec<Subtree> {
    let mut out: Vec<Subtree> = Vec::new();
    for t in trees {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Lower bound by negative TRBP. Starts from a random T⁺, a covering set
/// of random spanning trees plus T⁺ with uniform v, and β = `beta_init`.
/// Messages are warm-started between outer iterations. Returns the best
/// certified iterate, or the last one if none certified.
pub fn optimize_lower_bound(model: &PairwiseModel, options: &OptimizerOptions) -> Result<(BoundResult, OptimizerTrace)> {
    let mut rng = seeded_rng(options.seed);
    let tplus = random_spanning_tree_with(model, &mut rng)?;
    let mut trees = vec![tplus.clone()];
    trees.extend(cover_with_spanning_trees_with(model, &mut rng)?);
    let trees = dedup_pool(trees);
    let n = trees.len() as f64;
    let pool: Vec<(Subtree, f64)> = trees.into_iter().map(|t| (t, 1.0 / n)).collect();
    let mut view = NegativeEnsembleView::new(tplus, options.beta_init, pool)?;
    optimize_lower_bound_from(model, options, &mut view)
}

/// As [`optimize_lower_bound`] from a given starting view; `view` holds the
/// final parameters on return.
pub fn optimize_lower_bound_from(
    model: &PairwiseModel,
    options: &OptimizerOptions,
    view: &mut NegativeEnsembleView,
) -> Result<(BoundResult, OptimizerTrace)> {
    let mut trace = OptimizerTrace::default();
    let mut best: Option<BoundResult> = None;
    let mut last: Option<BoundResult> = None;
    let mut messages: Option<Messages> = None;
    let mut marginals: Option<MarginalSet> = None;

    for iter in 0..options.outer_iters {
        let mu = EdgeAppearanceMap::from_values(&view.edge_appearance(model));
        let ensemble = view.to_ensemble();
        let run = run_message_passing_from(model, &mu, &options.inner, messages.as_ref(), None)
            .and_then(|state| certify_bound(model, &ensemble, &state).map(|r| (state, r)));
        let (result, gap, clamped) = match run {
            Ok((state, result)) => {
                let mi = mi_weights(model, &state.marginals);
                let hsum: f64 = state.marginals.unary.iter().map(|t| entropy_unary(t)).sum();
                let h_plus = tree_entropy_from(hsum, &mi, view.positive());
                let h_minus: Vec<f64> = view.negative().iter().map(|(t, _)| tree_entropy_from(hsum, &mi, t)).collect();
                let v = view.v();
                let gap = h_plus - v.iter().zip(&h_minus).map(|(a, b)| a * b).sum::<f64>();
                let (beta, clamped) = update_beta_flagged(view.beta(), h_plus, &v, &h_minus, options.step_beta);
                let beta = beta.clamp(BETA_MIN, BETA_MAX);
                let (pool, _) = update_v(model, view.negative(), &mi, options.step_v)?;
                *view = NegativeEnsembleView::new(view.positive().clone(), beta, normalized(pool))?;
                messages = Some(state.messages);
                marginals = Some(state.marginals);
                (result, gap, clamped)
            }
            Err(e) if is_recoverable(&e) => {
                messages = None;
                let mi = marginals.as_ref().map_or_else(|| vec![0.0; model.edge_count()], |m| mi_weights(model, m));
                let (pool, _) = update_v(model, view.negative(), &mi, options.step_v)?;
                *view = view.with_negative(normalized(pool))?;
                (uncertified(Direction::Lower, 0), f64::NAN, false)
            }
            Err(e) => return Err(e),
        };
        trace.rows.push(OptimizerTraceRow {
            iter,
            beta: ensemble_beta(&ensemble),
            bound: result.value,
            certified: result.certified,
            converged: result.converged,
            entropy_gap: gap,
            beta_clamped: clamped,
            tree_edges: view.positive().label(model),
        });
        if result.certified && best.as_ref().is_none_or(|b| better(&result, b)) {
            best = Some(result.clone());
            trace.ensemble = Some(ensemble.clone());
        }
        if best.is_none() {
            trace.ensemble = Some(ensemble);
        }
        last = Some(result);

        if options.reselect_positive && options.reselect_period > 0 && (iter + 1) % options.reselect_period == 0 {
            if let Some(tau) = &marginals {
                let tplus = reselect_positive_tree(model, tau)?;
                *view = view.with_positive(tplus);
            }
        }
    }
    let mut result = best.or(last).unwrap_or_else(|| uncertified(Direction::Lower, 0));
    result.trace = Some(trace.bounds());
    Ok((result, trace))
}

/// β as seen by the iterate that produced a row: w⁺ − 1 for the merged T⁺.
fn ensemble_beta(ensemble: &WeightedEnsemble) -> f64 {
    let pos: f64 = ensemble.weights().iter().filter(|w| **w > 0.0).sum();
    pos - 1.0
}

fn normalized(mut pool: Vec<(Subtree, f64)>) -> Vec<(Subtree, f64)> {
    let s: f64 = pool.iter().map(|m| m.1).sum();
    pool.iter_mut().for_each(|m| m.1 /= s);
    pool
}

/// Upper bound by TRBP with conditional gradient on the tree weights. Each
/// outer iteration proposes a step towards the maximum-ΣI spanning tree,
/// starting from twice the last accepted step, and halves it until the bound
/// does not increase; the iteration stops when no step is accepted or the
/// gain drops below [`UPPER_STALL`]. Weights are floored at [`WEIGHT_FLOOR`].
pub fn optimize_upper_bound(model: &PairwiseModel, options: &OptimizerOptions) -> Result<(BoundResult, OptimizerTrace)> {
    let mut rng = seeded_rng(options.seed);
    let trees = dedup_pool(cover_with_spanning_trees_with(model, &mut rng)?);
    let n = trees.len() as f64;
    let mut pool: Vec<(Subtree, f64)> = trees.into_iter().map(|t| (t, 1.0 / n)).collect();
    let mut trace = OptimizerTrace::default();

    let evaluate = |pool: &[(Subtree, f64)], init: Option<&Messages>| -> Result<(BoundResult, crate::mp::BeliefState)> {
        let ensemble = WeightedEnsemble::new(pool.to_vec())?;
        let mu = EdgeAppearanceMap::from_values(&ensemble.edge_appearance(model));
        let state = run_message_passing_from(model, &mu, &options.inner, init, None)?;
        let result = certify_bound(model, &ensemble, &state)?;
        Ok((result, state))
    };

    let (mut current, mut state) = evaluate(&pool, None)?;
    let mut newest = pool[0].0.label(model);
    let mut best = current.clone();
    trace.ensemble = Some(WeightedEnsemble::new(pool.clone())?);
    let mut last_step: f64 = 0.25;
    for iter in 0..options.outer_iters {
        let mi = mi_weights(model, &state.marginals);
        let hsum: f64 = state.marginals.unary.iter().map(|t| entropy_unary(t)).sum();
        let h: Vec<f64> = pool.iter().map(|(t, _)| tree_entropy_from(hsum, &mi, t)).collect();
        let gap = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - h.iter().cloned().fold(f64::INFINITY, f64::min);
        trace.rows.push(OptimizerTraceRow {
            iter,
            beta: f64::NAN,
            bound: current.value,
            certified: current.certified,
            converged: current.converged,
            entropy_gap: gap,
            beta_clamped: false,
            tree_edges: newest.clone(),
        });
        if iter + 1 == options.outer_iters {
            break;
        }
        let target = spanning_tree_on(model, &mi)?;
        let mut step = (2.0 * last_step).min(0.5);
        let mut accepted = None;
        for _ in 0..8 {
            let candidate = floor_weights(step_towards(&pool, &target, step));
            match evaluate(&candidate, Some(&state.messages)) {
                Ok((r, s)) if r.certified && r.value <= current.value => {
                    accepted = Some((candidate, r, s, step));
                    break;
                }
                Ok(_) => {}
                Err(e) if is_recoverable(&e) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((p, r, s, taken)) = accepted else { break };
        let improvement = current.value - r.value;
        last_step = taken;
        pool = p;
        current = r;
        state = s;
        newest = target.label(model);
        if current.certified && (!best.certified || better(&current, &best)) {
            best = current.clone();
            trace.ensemble = Some(WeightedEnsemble::new(pool.clone())?);
        }
        if improvement < UPPER_STALL {
            break;
        }
    }
    best.trace = Some(trace.bounds());
    Ok((best, trace))
}

fn floor_weights(pool: Vec<(Subtree, f64)>) -> Vec<(Subtree, f64)> {
    normalized(pool.into_iter().map(|(t, w)| (t, w.max(WEIGHT_FLOOR))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{brute_force_log_partition, brute_force_marginals};
    use crate::meanfield::naive_mean_field;
    use crate::model::{ising_model, random_tree_ising, triangle_example, Coupling};

    #[test]
    fn beta_update_rules() {
        assert_eq!(update_beta(3.0, 1.0, &[0.5, 0.5], &[1.0, 1.0], 1.0), 3.0);
        assert!((update_beta(1.0, 0.1, &[1.0], &[0.0], 1.0) - 0.1f64.exp()).abs() < 1e-12);
        let (b, clamped) = update_beta_flagged(2.0, 1e3, &[1.0], &[0.0], 1.0);
        assert!(clamped && (b - 2.0 * 50f64.exp()).abs() < 1e-6 * b);
    }

    #[test]
    fn update_v_rules() {
        let m = triangle_example();
        let t0 = Subtree::new(&m, vec![0, 1]).unwrap();
        let pool = vec![(t0.clone(), 1.0)];
        let (p, t) = update_v(&m, &pool, &[0.0; 3], 0.05).unwrap();
        assert_eq!(t, t0);
        assert_eq!(p, vec![(t0.clone(), 1.0)]);
        // I(0,1) > I(0,2) > I(1,2)
        let (p, t) = update_v(&m, &pool, &[0.3, 0.2, 0.1], 0.25).unwrap();
        assert_eq!(t.edges(), &[0, 1]);
        assert_eq!(p.len(), 1);
        let (p, t) = update_v(&m, &pool, &[0.1, 0.2, 0.3], 0.25).unwrap();
        assert_eq!(t.edges(), &[1, 2]);
        assert_eq!(p[0].1, 0.75);
        assert_eq!(p[1].1, 0.25);
        let (p, _) = update_v(&m, &pool, &[0.1, 0.2, 0.3], 0.0).unwrap();
        assert_eq!(p, pool);
    }

    #[test]
    fn chow_liu_recovers_chain() {
        let m = ising_model(4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], &[0.1, -0.2, 0.3, 0.0], &[0.9, 0.0, 0.0, -0.7, 0.0, 0.8]).unwrap();
        let tau = brute_force_marginals(&m).unwrap();
        let t = reselect_positive_tree(&m, &tau).unwrap();
        let chain: Vec<(usize, usize)> = t.edges().iter().map(|&e| m.edge(e)).collect();
        assert_eq!(chain, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn triangle_bounds_bracket_exact() {
        let m = triangle_example();
        let exact = brute_force_log_partition(&m).unwrap();
        let opts = OptimizerOptions::default();
        let (low, trace) = optimize_lower_bound(&m, &opts).unwrap();
        assert!(low.certified, "{:?}", trace.to_csv());
        assert!(low.value <= exact + 1e-7);
        let (mf, _) = naive_mean_field(&m, 11, 0).unwrap();
        assert!(low.value >= mf.value - 1e-9, "{} < {}", low.value, mf.value);
        let (up, trace) = optimize_upper_bound(&m, &opts).unwrap();
        assert!(up.certified && up.value >= exact - 1e-7);
        for w in trace.bounds().windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn exact_on_tree_models() {
        let m = random_tree_ising(8, Coupling::Mixed, 1.5, 9).unwrap();
        let exact = brute_force_log_partition(&m).unwrap();
        let opts = OptimizerOptions { outer_iters: 5, ..Default::default() };
        let (low, _) = optimize_lower_bound(&m, &opts).unwrap();
        assert!((low.value - exact).abs() < 1e-6, "{} vs {exact}", low.value);
        let (up, _) = optimize_upper_bound(&m, &opts).unwrap();
        assert!((up.value - exact).abs() < 1e-8);
    }

    #[test]
    fn deterministic_trace() {
        let m = triangle_example();
        let opts = OptimizerOptions { outer_iters: 12, seed: 4, ..Default::default() };
        let a = optimize_lower_bound(&m, &opts).unwrap().1.to_csv();
        let b = optimize_lower_bound(&m, &opts).unwrap().1.to_csv();
        assert_eq!(a, b);
    }
}
