//! Experiment drivers behind the `treebound` binary. Every function here
//! returns strings or records; the binary only handles I/O and exit codes.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use rayon::prelude::*;

use treebound::bound::{BoundResult, Direction};
use treebound::exact::{exact_log_partition, grid_shape, is_forest, DEFAULT_ENUMERATION_CAP};
use treebound::meanfield::{naive_mean_field, structured_mean_field};
use treebound::model::{gen_ising_grid, Coupling, ModelFamilySpec, PairwiseModel};
use treebound::mp::{free_energy, run_message_passing, EdgeAppearanceMap, MpOptions};
use treebound::optimize::{optimize_lower_bound, optimize_upper_bound, OptimizerOptions};
use treebound::tree::{enumerate_spanning_trees, is_v_acyclic, Subtree};

/// Tolerance for the error sign of certified rows.
pub const SIGN_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Trbp,
    Negtrbp,
    NaiveMf,
    StructuredMf,
    LoopyBp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Trbp, Method::Negtrbp, Method::NaiveMf, Method::StructuredMf, Method::LoopyBp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trbp => "trbp",
            Method::Negtrbp => "negtrbp",
            Method::NaiveMf => "naive-mf",
            Method::StructuredMf => "structured-mf",
            Method::LoopyBp => "loopy-bp",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mp: MpOptions,
    pub seed: u64,
    pub outer_iters: usize,
    /// Naive mean-field starts: one uniform plus `restarts − 1` random.
    pub restarts: usize,
    pub reselect_positive: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mp: MpOptions::default(),
            seed: 0,
            outer_iters: 50,
            restarts: 11,
            reselect_positive: true,
        }
    }
}

impl RunConfig {
    pub fn optimizer(&self) -> OptimizerOptions {
        OptimizerOptions {
            inner: self.mp.clone(),
            outer_iters: self.outer_iters,
            reselect_positive: self.reselect_positive,
            seed: self.seed,
            ..OptimizerOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub result: BoundResult,
    /// Final ensemble listing for the tree-reweighted methods.
    pub ensemble: Option<String>,
}

/// Skeleton for structured mean field: edges by decreasing coupling
/// magnitude, each kept when the skeleton stays v-acyclic.
pub fn greedy_skeleton(model: &PairwiseModel) -> Subtree {
    let strength = |e: usize| {
        let t = model.pairwise(e);
        t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let mut order: Vec<usize> = (0..model.edge_count()).collect();
    order.sort_by(|&a, &b| strength(b).total_cmp(&strength(a)).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for e in order {
        let mut next = chosen.clone();
        next.push(e);
        if let Ok(t) = Subtree::new(model, next.clone()) {
            if is_v_acyclic(model, &t) {
                chosen = next;
            }
        }
    }
    Subtree::new(model, chosen).expect("acyclic by construction")
}

pub fn run_method(model: &PairwiseModel, method: Method, cfg: &RunConfig) -> Result<MethodOutput> {
    let dump = |t: &treebound::optimize::OptimizerTrace| t.ensemble.as_ref().map(|e| e.dump(model));
    Ok(match method {
        Method::Trbp => {
            let (result, trace) = optimize_upper_bound(model, &cfg.optimizer())?;
            MethodOutput { ensemble: dump(&trace), result }
        }
        Method::Negtrbp => {
            let (result, trace) = optimize_lower_bound(model, &cfg.optimizer())?;
            MethodOutput { ensemble: dump(&trace), result }
        }
        Method::NaiveMf => MethodOutput {
            result: naive_mean_field(model, cfg.restarts, cfg.seed)?.0,
            ensemble: None,
        },
        Method::StructuredMf => MethodOutput {
            result: structured_mean_field(model, &greedy_skeleton(model), &cfg.mp)?.0,
            ensemble: None,
        },
        Method::LoopyBp => {
            let mu = EdgeAppearanceMap::uniform(model, 1.0);
            let state = run_message_passing(model, &mu, &cfg.mp)?;
            let value = free_energy(model, &mu, &state.marginals)?;
            MethodOutput {
                result: BoundResult {
                    value,
                    direction: Direction::None,
                    certified: false,
                    residual_max: state.marginals.consistency_residual(model),
                    converged: state.converged,
                    iterations: state.iterations,
                    domain: None,
                    trace: None,
                },
                ensemble: None,
            }
        }
    })
}

/// Exact Φ when some oracle handles the model at this size.
pub fn try_exact(model: &PairwiseModel) -> Option<f64> {
    let feasible = is_forest(model)
        || grid_shape(model).is_some()
        || model.state_space_size() <= DEFAULT_ENUMERATION_CAP as f64;
    feasible.then(|| exact_log_partition(model).ok()).flatten()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub model: String,
    pub method: Method,
    pub value: f64,
    pub direction: Direction,
    pub certified: bool,
    pub converged: bool,
    pub residual_max: f64,
    pub iterations: usize,
    pub exact: Option<f64>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn error(&self) -> Option<f64> {
        self.exact.map(|z| self.value - z)
    }

    /// Certified rows must err on the side their direction promises.
    pub fn sign_ok(&self) -> bool {
        match (self.certified, self.error()) {
            (true, Some(err)) => match self.direction {
                Direction::Lower => err <= SIGN_SLACK,
                Direction::Upper => err >= -SIGN_SLACK,
                Direction::None => true,
            },
            _ => true,
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "model={}\nmethod={}\nvalue={}\ndirection={}\ncertified={}\nconverged={}\nresidual_max={}\niterations={}\n",
            self.model, self.method, self.value, self.direction, self.certified, self.converged, self.residual_max, self.iterations
        );
        if let (Some(z), Some(err)) = (self.exact, self.error()) {
            let _ = write!(s, "exact={z}\nerror={err}\n");
        }
        let _ = writeln!(s, "wall_seconds={}", self.wall_seconds);
        s
    }
}

pub fn cmd_bound(model: &PairwiseModel, name: &str, method: Method, cfg: &RunConfig) -> Result<(RunRecord, Option<String>)> {
    let start = Instant::now();
    let out = run_method(model, method, cfg)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let r = out.result;
    Ok((
        RunRecord {
            model: name.to_string(),
            method,
            value: r.value,
            direction: r.direction,
            certified: r.certified,
            converged: r.converged,
            residual_max: r.residual_max,
            iterations: r.iterations,
            exact: try_exact(model),
            wall_seconds,
        },
        out.ensemble,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Config {
    pub coupling: Coupling,
    pub rows: usize,
    pub cols: usize,
    pub c_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub run: RunConfig,
}

impl Fig3Config {
    pub fn desk(coupling: Coupling, seed: u64) -> Self {
        Self {
            coupling,
            rows: 5,
            cols: 5,
            c_grid: (1..=8).map(|k| 0.25 * k as f64).collect(),
            trials: 20,
            seed,
            run: RunConfig::default(),
        }
    }
}

pub const FIG3_METHODS: [Method; 3] = [Method::Negtrbp, Method::NaiveMf, Method::Trbp];

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Row {
    pub c: f64,
    pub trial: usize,
    pub method: Method,
    pub bound: f64,
    pub exact: f64,
    pub certified: bool,
}

impl Fig3Row {
    pub fn error(&self) -> f64 {
        self.bound - self.exact
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Output {
    pub rows: Vec<Fig3Row>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Fig3Output {
    pub fn csv(&self) -> String {
        let mut s = String::from("c,trial,method,bound,exact,error,certified\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.c, r.trial, r.method, r.bound, r.exact, r.error(), r.certified);
        }
        s
    }

    /// Sorted |error| of one method at one c.
    pub fn abs_errors(&self, c: f64, method: Method) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.c == c && r.method == method)
            .map(|r| r.error().abs())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn median_abs_error(&self, c: f64, method: Method) -> f64 {
        quantile(&self.abs_errors(c, method), 0.5)
    }

    pub fn summary_csv(&self) -> String {
        let mut cs: Vec<f64> = self.rows.iter().map(|r| r.c).collect();
        cs.dedup();
        let mut s = String::from("c,method,trials,median_abs_error,q25_abs_error,q75_abs_error\n");
        for c in cs {
            for m in FIG3_METHODS {
                let e = self.abs_errors(c, m);
                let _ = writeln!(s, "{},{},{},{},{},{}", c, m, e.len(), quantile(&e, 0.5), quantile(&e, 0.25), quantile(&e, 0.75));
            }
        }
        s
    }
}

/// Random grids per (c, trial) with seed `seed ^ trial`, scored by every
/// method in [`FIG3_METHODS`]. Trials run in parallel; rows come back in
/// (c, trial, method) order.
pub fn cmd_fig3(cfg: &Fig3Config) -> Result<Fig3Output> {
    let jobs: Vec<(f64, usize)> = cfg.c_grid.iter().flat_map(|&c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let rows: Vec<Vec<Fig3Row>> = jobs
        .par_iter()
        .map(|&(c, trial)| -> Result<Vec<Fig3Row>> {
            let seed = cfg.seed ^ trial as u64;
            let model = gen_ising_grid(&ModelFamilySpec::ising_grid(cfg.rows, cfg.cols, cfg.coupling, c, seed))?;
            let exact = exact_log_partition(&model)?;
            let run = RunConfig { seed, ..cfg.run.clone() };
            FIG3_METHODS
                .iter()
                .map(|&method| {
                    let r = run_method(&model, method, &run)
                        .with_context(|| format!("{method} at c={c}, trial {trial}"))?
                        .result;
                    Ok(Fig3Row {
                        c,
                        trial,
                        method,
                        bound: r.value,
                        exact,
                        certified: r.certified,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(Fig3Output {
        rows: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptTrace {
    pub fixed: Vec<f64>,
    pub chowliu: Vec<f64>,
}

impl AdaptTrace {
    pub fn csv(&self) -> String {
        let mut s = String::from("iter,bound_fixed,bound_chowliu\n");
        for (i, (a, b)) in self.fixed.iter().zip(&self.chowliu).enumerate() {
            let _ = writeln!(s, "{i},{a},{b}");
        }
        s
    }
}

/// The negative-TRBP optimizer from one seed, with and without Chow-Liu
/// reselection of the positive tree.
pub fn cmd_adapt_trace(model: &PairwiseModel, cfg: &RunConfig) -> Result<AdaptTrace> {
    let base = cfg.optimizer();
    let fixed = optimize_lower_bound(model, &OptimizerOptions { reselect_positive: false, ..base.clone() })?.1;
    let chowliu = optimize_lower_bound(model, &OptimizerOptions { reselect_positive: true, ..base })?.1;
    Ok(AdaptTrace {
        fixed: fixed.bounds(),
        chowliu: chowliu.bounds(),
    })
}

/// Weights closer than this to 0 or 1 are skipped on the surface.
pub const SURFACE_EXCLUSION: f64 = 1e-3;
pub const SURFACE_MIN: f64 = -1.5;
pub const SURFACE_MAX: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub w: [f64; 3],
    pub converged: bool,
    pub psi: f64,
    pub exceeds_exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSurface {
    pub exact: f64,
    pub points: Vec<SurfacePoint>,
}

fn tidy(x: f64) -> f64 {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl WeightSurface {
    pub fn csv(&self) -> String {
        let mut s = String::from("w1,w2,w3,converged,psi,exceeds_exact\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{},{},{}", p.w[0], p.w[1], p.w[2], p.converged, p.psi, p.exceeds_exact);
        }
        s
    }
}

/// Sweeps (w₁, w₂) over [−1.5, 2.5]² with w₃ = 1 − w₁ − w₂ on a model with
/// exactly three spanning trees. Points with some wᵣ within
/// [`SURFACE_EXCLUSION`] of 0 (singular Ψ) or 1 (an edge appearance of 0)
/// are skipped.
pub fn cmd_weight_surface(model: &PairwiseModel, resolution: f64, mp: &MpOptions) -> Result<WeightSurface> {
    if !(resolution > 0.0) {
        bail!("resolution must be positive");
    }
    if model.edge_count() > 24 {
        bail!("weight surface needs a model with exactly three spanning trees");
    }
    let trees = enumerate_spanning_trees(model);
    if trees.len() != 3 {
        bail!("weight surface needs exactly three spanning trees, found {}", trees.len());
    }
    let exact = exact_log_partition(model)?;
    let steps = ((SURFACE_MAX - SURFACE_MIN) / resolution).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| tidy(SURFACE_MIN + k as f64 * resolution)).collect();
    let mut points = Vec::new();
    for &w1 in &grid {
        for &w2 in &grid {
            let w = [w1, w2, tidy(1.0 - w1 - w2)];
            if w.iter().any(|x| x.abs() < SURFACE_EXCLUSION || (1.0 - x).abs() < SURFACE_EXCLUSION) {
                continue;
            }
            let mu = treebound::ensemble::edge_appearance(model, &trees.iter().cloned().zip(w).collect::<Vec<_>>());
            let mu = EdgeAppearanceMap::from_values(&mu);
            let (converged, psi) = match run_message_passing(model, &mu, mp) {
                Ok(state) => (state.converged, free_energy(model, &mu, &state.marginals).unwrap_or(f64::NAN)),
                Err(_) => (false, f64::NAN),
            };
            points.push(SurfacePoint {
                w,
                converged,
                psi,
                exceeds_exact: psi > exact,
            });
        }
    }
    Ok(WeightSurface { exact, points })
}
