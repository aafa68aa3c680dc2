//! Reweighted message passing over arbitrary real edge appearances.
//!
//! One engine covers TRBP (0 < μ ≤ 1), negative TRBP (μ < 0 or μ > 1),
//! loopy BP (μ ≡ 1) and the mean-field limit μ → −∞ (the [`EdgeAppearance::MeanField`]
//! sentinel). Messages live in the log domain; message `2e` travels
//! `i → j` over `x_j` and message `2e + 1` travels `j → i` over `x_i` for
//! edge `e = (i, j)`. Updates:
//!
//! ```text
//! m_ij(x_j) ∝ [ Σ_{x_i} ψ_i ψ_ij^{1/μ} m_~i / m_ji^{1/μ} ]^μ        (finite μ)
//! log m_ij(x_j) = Σ_{x_i} b_i(x_i) θ_ij(x_i, x_j) + const             (mean field)
//! ```
//!
//! where `m_~i` is the product of all messages into `i` and `b_i ∝ ψ_i m_~i`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exact::{entropy_unary, mutual_information, pair_entry, MarginalSet};
use crate::math::{log_normalize, log_sum_exp, softmax};
use crate::model::{seeded_rng, PairwiseModel};

/// Finite edge appearances with smaller magnitude are rejected.
pub const MIN_ABS_APPEARANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeAppearance {
    Finite(f64),
    /// The limit μ → −∞.
    MeanField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAppearanceMap(Vec<EdgeAppearance>);

impl EdgeAppearanceMap {
    pub fn new(values: Vec<EdgeAppearance>) -> Self {
        Self(values)
    }

    pub fn from_values(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| EdgeAppearance::Finite(v)).collect())
    }

    pub fn uniform(model: &PairwiseModel, mu: f64) -> Self {
        Self(vec![EdgeAppearance::Finite(mu); model.edge_count()])
    }

    pub fn all_mean_field(model: &PairwiseModel) -> Self {
        Self(vec![EdgeAppearance::MeanField; model.edge_count()])
    }

    pub fn get(&self, e: usize) -> EdgeAppearance {
        self.0[e]
    }

    pub fn values(&self) -> &[EdgeAppearance] {
        &self.0
    }

    pub fn validate(&self, model: &PairwiseModel) -> Result<()> {
        if self.0.len() != model.edge_count() {
            return Err(Error::InvalidModel(format!(
                "{} edge appearances for {} edges",
                self.0.len(),
                model.edge_count()
            )));
        }
        for (e, mu) in self.0.iter().enumerate() {
            if let EdgeAppearance::Finite(v) = *mu {
                if !v.is_finite() || v.abs() < MIN_ABS_APPEARANCE {
                    let (i, j) = model.edge(e);
                    return Err(Error::InvalidEdgeAppearance { i, j, value: v });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpOptions {
    pub max_iters: usize,
    /// Convergence threshold on the largest log-message change per sweep.
    pub tol: f64,
    /// `new = (1 − λ)·update + λ·old` in the log domain.
    pub damping: f64,
    /// Random positive initial messages when set; uniform otherwise.
    pub seed: Option<u64>,
}

impl Default for MpOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-8,
            damping: 0.5,
            seed: None,
        }
    }
}

/// Log-domain messages indexed by directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Messages(pub Vec<Vec<f64>>);

impl Messages {
    pub fn uniform(model: &PairwiseModel) -> Self {
        let mut v = Vec::with_capacity(2 * model.edge_count());
        for &(i, j) in model.edges() {
            v.push(vec![-(model.card(j) as f64).ln(); model.card(j)]);
            v.push(vec![-(model.card(i) as f64).ln(); model.card(i)]);
        }
        Self(v)
    }

    pub fn random(model: &PairwiseModel, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut msgs = Self::uniform(model);
        for m in msgs.0.iter_mut() {
            for x in m.iter_mut() {
                *x = rng.gen_range(0.5..1.5f64).ln();
            }
            log_normalize(m);
        }
        msgs
    }

    /// Message into `dst` along edge `e`.
    pub fn incoming(&self, model: &PairwiseModel, e: usize, dst: usize) -> &[f64] {
        if model.edge(e).1 == dst {
            &self.0[2 * e]
        } else {
            &self.0[2 * e + 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub messages: Messages,
    pub marginals: MarginalSet,
    pub converged: bool,
    pub iterations: usize,
    pub final_delta: f64,
}

/// One row of the optional per-sweep trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpTraceRecord {
    pub iter: usize,
    pub delta: f64,
    /// −F at the current pseudomarginals (NaN if it could not be evaluated).
    pub energy: f64,
}

/// `θ_i + Σ_k log m_ki` for every node.
fn node_aggregates(model: &PairwiseModel, msgs: &Messages) -> Vec<Vec<f64>> {
    (0..model.node_count())
        .map(|i| {
            let mut a = model.unary(i).to_vec();
            for &(e, _) in model.neighbors(i) {
                a.iter_mut().zip(msgs.incoming(model, e, i)).for_each(|(x, m)| *x += m);
            }
            a
        })
        .collect()
}

/// New (unnormalized) log message from `src` to `dst` along `e`.
fn update_message(
    model: &PairwiseModel,
    e: usize,
    src: usize,
    dst: usize,
    mu: EdgeAppearance,
    agg_src: &[f64],
    reverse: &[f64],
) -> Vec<f64> {
    let table = model.pairwise(e);
    let ms = model.card(src);
    let md = model.card(dst);
    match mu {
        EdgeAppearance::MeanField => {
            let b = softmax(agg_src);
            (0..md)
                .map(|xd| (0..ms).map(|xs| b[xs] * pair_entry(model, table, e, src, xs, xd)).sum())
                .collect()
        }
        EdgeAppearance::Finite(mu) => {
            let inv = 1.0 / mu;
            let mut base = agg_src.to_vec();
            log_normalize(&mut base);
            let mut eps = vec![0.0; ms];
            (0..md)
                .map(|xd| {
                    let mut max_eps = 0.0f64;
                    for xs in 0..ms {
                        eps[xs] = (pair_entry(model, table, e, src, xs, xd) - reverse[xs]) * inv;
                        max_eps = max_eps.max(eps[xs].abs());
                    }
                    // log Σ b·exp(ε); the expm1/log1p form keeps precision when
                    // |μ| is large and every ε is tiny.
                    let s = if max_eps < 0.5 {
                        let acc: f64 = (0..ms).map(|xs| base[xs].exp() * eps[xs].exp_m1()).sum();
                        acc.ln_1p()
                    } else {
                        let terms: Vec<f64> = (0..ms).map(|xs| base[xs] + eps[xs]).collect();
                        log_sum_exp(&terms)
                    };
                    mu * s
                })
                .collect()
        }
    }
}

pub fn run_message_passing(model: &PairwiseModel, mu: &EdgeAppearanceMap, options: &MpOptions) -> Result<BeliefState> {
    run_message_passing_from(model, mu, options, None, None)
}

/// Synchronous damped sweeps over all directed edges in edge order,
/// starting from `init` when given. Each sweep is reported to `trace`.
pub fn run_message_passing_from(
    model: &PairwiseModel,
    mu: &EdgeAppearanceMap,
    options: &MpOptions,
    init: Option<&Messages>,
    mut trace: Option<&mut dyn FnMut(MpTraceRecord)>,
) -> Result<BeliefState> {
    mu.validate(model)?;
    if !(0.0..1.0).contains(&options.damping) {
        return Err(Error::InvalidModel(format!("damping {} outside [0, 1)", options.damping)));
    }
    let mut msgs = match (init, options.seed) {
        (Some(m), _) => m.clone(),
        (None, Some(seed)) => Messages::random(model, seed),
        (None, None) => Messages::uniform(model),
    };
    let lambda = options.damping;
    let mut converged = false;
    let mut iterations = 0;
    let mut delta = f64::INFINITY;

    while iterations < options.max_iters {
        let agg = node_aggregates(model, &msgs);
        let mut next = Vec::with_capacity(msgs.0.len());
        delta = 0.0;
        for (e, &(i, j)) in model.edges().iter().enumerate() {
            for (dir, (src, dst)) in [(i, j), (j, i)].into_iter().enumerate() {
                let reverse = &msgs.0[2 * e + 1 - dir];
                let old = &msgs.0[2 * e + dir];
                let mut m = update_message(model, e, src, dst, mu.get(e), &agg[src], reverse);
                log_normalize(&mut m);
                if lambda > 0.0 {
                    m.iter_mut().zip(old).for_each(|(x, o)| *x = (1.0 - lambda) * *x + lambda * o);
                    log_normalize(&mut m);
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        from: src,
                        to: dst,
                        iteration: iterations + 1,
                    });
                }
                for (x, o) in m.iter().zip(old) {
                    delta = delta.max((x - o).abs());
                }
                next.push(m);
            }
        }
        msgs = Messages(next);
        iterations += 1;
        if let Some(sink) = trace.as_deref_mut() {
            let energy = compute_pseudomarginals(model, mu, &msgs)
                .and_then(|tau| free_energy(model, mu, &tau))
                .unwrap_or(f64::NAN);
            sink(MpTraceRecord {
                iter: iterations,
                delta,
                energy,
            });
        }
        if delta < options.tol {
            converged = true;
            break;
        }
    }
    let marginals = compute_pseudomarginals(model, mu, &msgs)?;
    Ok(BeliefState {
        messages: msgs,
        marginals,
        converged,
        iterations,
        final_delta: delta,
    })
}

/// `τᵢ ∝ ψᵢ m_~i` and, per finite-μ edge,
/// `τᵢⱼ ∝ ψᵢ ψⱼ ψᵢⱼ^{1/μ} m_~i m_~j / (mᵢⱼ mⱼᵢ)^{1/μ}`; mean-field edges get `τᵢτⱼ`.
pub fn compute_pseudomarginals(model: &PairwiseModel, mu: &EdgeAppearanceMap, msgs: &Messages) -> Result<MarginalSet> {
    let agg = node_aggregates(model, msgs);
    let unary: Vec<Vec<f64>> = agg.iter().map(|a| softmax(a)).collect();
    let mut pairwise = Vec::with_capacity(model.edge_count());
    for (e, &(i, j)) in model.edges().iter().enumerate() {
        let (mi, mj) = (model.card(i), model.card(j));
        let table = match mu.get(e) {
            EdgeAppearance::MeanField => unary[i].iter().flat_map(|a| unary[j].iter().map(move |b| a * b)).collect(),
            EdgeAppearance::Finite(m) => {
                let inv = 1.0 / m;
                let (to_j, to_i) = (&msgs.0[2 * e], &msgs.0[2 * e + 1]);
                let mut t = vec![0.0; mi * mj];
                for s in 0..mi {
                    for u in 0..mj {
                        t[s * mj + u] = agg[i][s] + agg[j][u] + (model.pairwise(e)[s * mj + u] - to_j[u] - to_i[s]) * inv;
                    }
                }
                softmax(&t)
            }
        };
        pairwise.push(Some(table));
    }
    Ok(MarginalSet {
        unary,
        pairwise,
    })
}

/// `−F(τ, μ) = ⟨τ, θ⟩ + Σᵢ Hᵢ − Σᵢⱼ μᵢⱼ Iᵢⱼ`. Mean-field edges contribute
/// nothing and must carry (numerically) zero mutual information.
pub fn free_energy(model: &PairwiseModel, mu: &EdgeAppearanceMap, marginals: &MarginalSet) -> Result<f64> {
    let mut value = 0.0;
    for i in 0..model.node_count() {
        let tau = &marginals.unary[i];
        value += tau.iter().zip(model.unary(i)).map(|(p, t)| p * t).sum::<f64>();
        value += entropy_unary(tau);
    }
    for (e, &(i, j)) in model.edges().iter().enumerate() {
        let tau = marginals.pair(model, e)?;
        value += tau.iter().zip(model.pairwise(e)).map(|(p, t)| p * t).sum::<f64>();
        let mi = mutual_information(tau, &marginals.unary[i], &marginals.unary[j]);
        match mu.get(e) {
            EdgeAppearance::Finite(m) => value -= m * mi,
            EdgeAppearance::MeanField => {
                if mi > 1e-8 {
                    return Err(Error::MeanFieldCorrelation { i, j, mi });
                }
            }
        }
    }
    Ok(value)
}

/// `iter,delta,energy` CSV for a collected trace.
pub fn trace_csv(records: &[MpTraceRecord]) -> String {
    let mut out = String::from("iter,delta,energy\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.iter, r.delta, r.energy));
    }
    out
}
