//! Mean-field lower bounds.
//!
//! Naive mean field runs exact coordinate ascent on the fully factorized
//! free energy. Structured mean field reuses the message engine with μ = 1
//! on a v-acyclic skeleton and the mean-field sentinel on every other edge.

use crate::bound::{BoundResult, Direction};
use crate::error::{Error, Result};
use crate::exact::{entropy_unary, pair_entry, MarginalSet};
use crate::math::softmax;
use crate::model::{seeded_rng, uniform, PairwiseModel};
use crate::mp::{free_energy, run_message_passing, EdgeAppearance, EdgeAppearanceMap, MpOptions};
use crate::tree::{first_cycle_closing_edge, Subtree};

pub const MF_TOL: f64 = 1e-10;
pub const MF_MAX_SWEEPS: usize = 10_000;
/// Consistency slack for a structured fixed point to count as certified.
pub const STRUCTURED_CONSISTENCY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRun {
    pub marginals: Vec<Vec<f64>>,
    pub value: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Bound after each sweep, starting with the initial point.
    pub history: Vec<f64>,
}

/// `⟨τ, θ⟩ + Σᵢ Hᵢ` with `τᵢⱼ = τᵢ τⱼ`.
pub fn mean_field_value(model: &PairwiseModel, q: &[Vec<f64>]) -> f64 {
    let mut v = 0.0;
    for (i, qi) in q.iter().enumerate() {
        v += qi.iter().zip(model.unary(i)).map(|(p, t)| p * t).sum::<f64>() + entropy_unary(qi);
    }
    for (e, &(i, j)) in model.edges().iter().enumerate() {
        let mj = model.card(j);
        for (s, a) in q[i].iter().enumerate() {
            for (u, b) in q[j].iter().enumerate() {
                v += a * b * model.pairwise(e)[s * mj + u];
            }
        }
    }
    v
}

/// Product marginals of a factorized distribution.
pub fn product_marginals(model: &PairwiseModel, q: &[Vec<f64>]) -> MarginalSet {
    let pairwise = model
        .edges()
        .iter()
        .map(|&(i, j)| Some(q[i].iter().flat_map(|a| q[j].iter().map(move |b| a * b)).collect()))
        .collect();
    MarginalSet {
        unary: q.to_vec(),
        pairwise,
    }
}

/// Cyclic coordinate ascent from `init`:
/// `log τᵢ(s) ← θᵢ(s) + Σⱼ Σₜ τⱼ(t) θᵢⱼ(s, t)`, normalized.
pub fn mean_field_from(model: &PairwiseModel, init: Vec<Vec<f64>>) -> MeanFieldRun {
    let mut q = init;
    let mut history = vec![mean_field_value(model, &q)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MF_MAX_SWEEPS {
        let mut change = 0.0f64;
        for i in 0..model.node_count() {
            let mut field = model.unary(i).to_vec();
            for &(e, j) in model.neighbors(i) {
                let table = model.pairwise(e);
                for (s, f) in field.iter_mut().enumerate() {
                    *f += q[j].iter().enumerate().map(|(t, b)| b * pair_entry(model, table, e, i, s, t)).sum::<f64>();
                }
            }
            let new = softmax(&field);
            for (a, b) in new.iter().zip(&q[i]) {
                change = change.max((a - b).abs());
            }
            q[i] = new;
        }
        sweeps += 1;
        history.push(mean_field_value(model, &q));
        if change < MF_TOL {
            converged = true;
            break;
        }
    }
    let value = *history.last().expect("non-empty history");
    MeanFieldRun {
        marginals: q,
        value,
        sweeps,
        converged,
        history,
    }
}

pub fn uniform_marginals(model: &PairwiseModel) -> Vec<Vec<f64>> {
    model.cards().iter().map(|&k| vec![1.0 / k as f64; k]).collect()
}

/// Best of one uniform start and `restarts − 1` random starts. The value is
/// a lower bound at any point of the factorized family, so it is always
/// certified.
pub fn naive_mean_field(model: &PairwiseModel, restarts: usize, seed: u64) -> Result<(BoundResult, MarginalSet)> {
    let mut rng = seeded_rng(seed);
    let mut best: Option<MeanFieldRun> = None;
    for r in 0..restarts.max(1) {
        let init = if r == 0 {
            uniform_marginals(model)
        } else {
            model
                .cards()
                .iter()
                .map(|&k| {
                    let w: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.01, 1.0)).collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / z).collect()
                })
                .collect()
        };
        let run = mean_field_from(model, init);
        if best.as_ref().is_none_or(|b| run.value > b.value) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let result = BoundResult {
        value: run.value,
        direction: Direction::Lower,
        certified: run.value.is_finite(),
        residual_max: 0.0,
        converged: run.converged,
        iterations: run.sweeps,
        domain: None,
        trace: Some(run.history.clone()),
    };
    Ok((result, product_marginals(model, &run.marginals)))
}

/// μ = 1 on `skeleton`, mean field elsewhere.
pub fn structured_appearance(model: &PairwiseModel, skeleton: &Subtree) -> EdgeAppearanceMap {
    EdgeAppearanceMap::new(
        (0..model.edge_count())
            .map(|e| if skeleton.contains(e) { EdgeAppearance::Finite(1.0) } else { EdgeAppearance::MeanField })
            .collect(),
    )
}

/// Structured mean field over a v-acyclic skeleton. The bound is −F at the
/// fixed point; it is certified when messages converged and the
/// pseudomarginals are consistent, since they are then realized by a
/// distribution that is tree-structured on the skeleton.
pub fn structured_mean_field(model: &PairwiseModel, skeleton: &Subtree, options: &MpOptions) -> Result<(BoundResult, MarginalSet)> {
    if let Some(e) = first_cycle_closing_edge(model, skeleton) {
        let (i, j) = model.edge(e);
        return Err(Error::NotVAcyclic(i, j));
    }
    let mu = structured_appearance(model, skeleton);
    let state = run_message_passing(model, &mu, options)?;
    let value = free_energy(model, &mu, &state.marginals)?;
    let consistency = state.marginals.consistency_residual(model);
    let result = BoundResult {
        value,
        direction: Direction::Lower,
        certified: state.converged && consistency <= STRUCTURED_CONSISTENCY,
        residual_max: consistency,
        converged: state.converged,
        iterations: state.iterations,
        domain: None,
        trace: None,
    };
    Ok((result, state.marginals))
}
