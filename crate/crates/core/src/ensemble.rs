//! Weighted collections of subtrees and the weight-domain classification
//! that decides which inequality a bound relies on.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::model::PairwiseModel;
use crate::tree::Subtree;

/// Weights below this magnitude are treated as absent members.
pub const ABSENT_WEIGHT: f64 = 1e-12;

fn sum_tolerance(weights: impl Iterator<Item = f64>) -> f64 {
    1e-12 * weights.map(f64::abs).sum::<f64>().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    members: Vec<(Subtree, f64)>,
}

impl WeightedEnsemble {
    /// Requires weights summing to one (relative tolerance 1e-12).
    pub fn new(members: Vec<(Subtree, f64)>) -> Result<Self> {
        let sum: f64 = members.iter().map(|(_, w)| w).sum();
        if !sum.is_finite() || (sum - 1.0).abs() > sum_tolerance(members.iter().map(|m| m.1)) {
            return Err(Error::WeightSum(sum));
        }
        Ok(Self { members })
    }

    /// Equal weights over `trees`.
    pub fn uniform(trees: Vec<Subtree>) -> Result<Self> {
        let w = 1.0 / trees.len() as f64;
        Self::new(trees.into_iter().map(|t| (t, w)).collect())
    }

    pub fn members(&self) -> &[(Subtree, f64)] {
        &self.members
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.1).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// μᵢⱼ = Σ of weights over members containing edge (i, j).
    pub fn edge_appearance(&self, model: &PairwiseModel) -> Vec<f64> {
        edge_appearance(model, &self.members)
    }

    /// `"w : i-j i-j"` per member, then `"mu: i-j=value ..."`.
    pub fn dump(&self, model: &PairwiseModel) -> String {
        let mut out = String::new();
        for (t, w) in &self.members {
            let edges: Vec<String> = t
                .edges()
                .iter()
                .map(|&e| {
                    let (i, j) = model.edge(e);
                    format!("{i}-{j}")
                })
                .collect();
            writeln!(out, "{w} : {}", edges.join(" ")).unwrap();
        }
        let mu = self.edge_appearance(model);
        let pairs: Vec<String> = model
            .edges()
            .iter()
            .zip(&mu)
            .map(|((i, j), m)| format!("{i}-{j}={m}"))
            .collect();
        writeln!(out, "mu: {}", pairs.join(" ")).unwrap();
        out
    }
}

pub fn edge_appearance(model: &PairwiseModel, members: &[(Subtree, f64)]) -> Vec<f64> {
    let mut mu = vec![0.0; model.edge_count()];
    for (t, w) in members {
        for &e in t.edges() {
            mu[e] += w;
        }
    }
    mu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// All weights positive: Jensen gives an upper bound.
    Positive,
    /// Member `r` has weight > 1 and every other weight is negative:
    /// reverse Jensen gives a lower bound.
    Negative(usize),
    Mixed,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Positive => f.write_str("positive"),
            Domain::Negative(r) => write!(f, "negative({r})"),
            Domain::Mixed => f.write_str("mixed"),
        }
    }
}

pub fn classify_weights(weights: &[f64]) -> Domain {
    let present: Vec<(usize, f64)> = weights
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, w)| w.abs() >= ABSENT_WEIGHT)
        .collect();
    if present.is_empty() {
        return Domain::Mixed;
    }
    if present.iter().all(|&(_, w)| w > 0.0) {
        return Domain::Positive;
    }
    let big: Vec<usize> = present.iter().filter(|p| p.1 > 1.0).map(|p| p.0).collect();
    let negatives = present.iter().filter(|p| p.1 < 0.0).count();
    if big.len() == 1 && negatives + 1 == present.len() {
        Domain::Negative(big[0])
    } else {
        Domain::Mixed
    }
}

pub fn classify_ensemble(ensemble: &WeightedEnsemble) -> Domain {
    classify_weights(&ensemble.weights())
}

/// Negative-domain parameterization: positive tree T⁺ with weight β + 1 and
/// negative trees with weights −β·vᵣ, where v lies on the simplex. T⁺ may
/// itself be one of the negative trees.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeEnsembleView {
    positive: Subtree,
    beta: f64,
    negative: Vec<(Subtree, f64)>,
}

impl NegativeEnsembleView {
    pub fn new(positive: Subtree, beta: f64, negative: Vec<(Subtree, f64)>) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidModel(format!("beta must be positive, got {beta}")));
        }
        let sum: f64 = negative.iter().map(|m| m.1).sum();
        if (sum - 1.0).abs() > 1e-12 || negative.iter().any(|m| !(0.0..=1.0).contains(&m.1)) {
            return Err(Error::WeightSum(sum));
        }
        Ok(Self {
            positive,
            beta,
            negative,
        })
    }

    pub fn positive(&self) -> &Subtree {
        &self.positive
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn negative(&self) -> &[(Subtree, f64)] {
        &self.negative
    }

    pub fn v(&self) -> Vec<f64> {
        self.negative.iter().map(|m| m.1).collect()
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.positive.clone(), beta, self.negative.clone())
    }

    /// Replaces T⁺, adding it to the negative pool (with v = 0) if absent.
    pub fn with_positive(&self, positive: Subtree) -> Self {
        let mut negative = self.negative.clone();
        if !negative.iter().any(|(t, _)| *t == positive) {
            negative.push((positive.clone(), 0.0));
        }
        Self {
            positive,
            beta: self.beta,
            negative,
        }
    }

    pub fn with_negative(&self, negative: Vec<(Subtree, f64)>) -> Result<Self> {
        Self::new(self.positive.clone(), self.beta, negative)
    }

    /// Edge appearances written to avoid cancellation at large β:
    /// on T⁺ edges μ = 1 + β·Σ_{r∌e} vᵣ, elsewhere μ = −β·Σ_{r∋e} vᵣ.
    pub fn edge_appearance(&self, model: &PairwiseModel) -> Vec<f64> {
        (0..model.edge_count())
            .map(|e| {
                if self.positive.contains(e) {
                    let missing: f64 = self.negative.iter().filter(|(t, _)| !t.contains(e)).map(|m| m.1).sum();
                    1.0 + self.beta * missing
                } else {
                    let present: f64 = self.negative.iter().filter(|(t, _)| t.contains(e)).map(|m| m.1).sum();
                    -self.beta * present
                }
            })
            .collect()
    }

    /// The induced signed ensemble, T⁺ first. A negative copy of T⁺ is merged
    /// into its positive member; zero-weight negative trees are dropped.
    pub fn to_ensemble(&self) -> WeightedEnsemble {
        let own: f64 = self
            .negative
            .iter()
            .filter(|(t, _)| *t == self.positive)
            .map(|m| m.1)
            .sum();
        let mut members = vec![(self.positive.clone(), 1.0 + self.beta * (1.0 - own))];
        for (t, v) in &self.negative {
            if *t != self.positive && *v > 0.0 {
                members.push((t.clone(), -self.beta * v));
            }
        }
        WeightedEnsemble { members }
    }
}
