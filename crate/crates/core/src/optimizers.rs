//! Parameter update rules: plain SGD, Adam, and the Foxtsage population
//! search over SGD learning rates.
//!
//! Foxtsage keeps a population of candidate learning rates. Each iteration
//! trains one SGD epoch per candidate, keeps the candidate with the lowest
//! resulting training loss as `best_lr`, and then regenerates every
//! candidate around `best_lr`: with probability ½ it is scaled outward by
//! `(1 + g)` (exploration), otherwise divided by `(1 + g)` (exploitation),
//! where `g ~ N(0, σ²)`. Candidates are clipped to `[lr_min, lr_max]`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Gradient, ParamSet};
use crate::numerics::{clip, Rng};
use crate::training::{sgd_epoch, EpochLoss, ModelContext, TrainSet};

/// θ ← θ − η·∇θL
pub fn sgd_step(params: &mut ParamSet, grad: &Gradient, lr: f64) -> Result<()> {
    params.check_congruent(grad, "sgd_step")?;
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    for (p, g) in params.values_mut().iter_mut().zip(grad.values()) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// Biased moment estimates and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        }
    }
}

/// One Adam update:
///
/// ```text
/// m ← β1·m + (1−β1)·g
/// v ← β2·v + (1−β2)·g²
/// m̂ = m / (1−β1ᵗ),  v̂ = v / (1−β2ᵗ)
/// θ ← θ − η·m̂ / (√v̂ + ε)
/// ```
pub fn adam_step(
    params: &mut ParamSet,
    grad: &Gradient,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    params.check_congruent(grad, "adam_step")?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: (params.len(), 1),
            right: (state.m.len(), state.v.len()),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let iter = params
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for ((p, &g), (m, v)) in iter {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// How candidates start their evaluation epoch within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStart {
    /// Each candidate trains a copy of the iteration-start parameters.
    Snapshot,
    /// Candidates train one shared parameter set in index order.
    Sequential,
}

impl std::str::FromStr for CandidateStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snapshot" => Ok(CandidateStart::Snapshot),
            "sequential" => Ok(CandidateStart::Sequential),
            other => Err(Error::Config(format!("unknown candidate_start '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoxtsageConfig {
    pub population_size: usize,
    pub iterations: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// η_base of the decay schedule; also the plain-SGD baseline rate.
    pub lr_base: f64,
    /// α of the decay schedule.
    pub decay_alpha: f64,
    /// Standard deviation of the multiplicative perturbation g.
    pub gaussian_sigma: f64,
    /// Lower bound on |1 + g| in the exploitation division.
    pub denom_floor: f64,
    pub candidate_start: CandidateStart,
    /// Inject `lr_base / (1 + α·best_loss)` as candidate 0 after each update.
    pub apply_lr_decay: bool,
    pub batch_size: usize,
    /// Evaluate snapshot candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for FoxtsageConfig {
    fn default() -> Self {
        FoxtsageConfig {
            population_size: 10,
            iterations: 5,
            lr_min: 1e-4,
            lr_max: 0.1,
            lr_base: 0.01,
            decay_alpha: 1.0,
            gaussian_sigma: 1.0,
            denom_floor: 0.1,
            candidate_start: CandidateStart::Snapshot,
            apply_lr_decay: false,
            batch_size: 64,
            parallel: false,
        }
    }
}

impl FoxtsageConfig {
    /// 5 iterations, 10 candidates.
    pub fn setting1() -> Self {
        FoxtsageConfig::default()
    }

    /// 50 iterations, 30 candidates.
    pub fn setting2() -> Self {
        FoxtsageConfig {
            population_size: 30,
            iterations: 50,
            ..FoxtsageConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let problems = [
            (self.population_size >= 1, "population_size >= 1"),
            (self.iterations >= 1, "iterations >= 1"),
            (self.lr_min > 0.0 && self.lr_min < self.lr_max, "0 < lr_min < lr_max"),
            (self.lr_base > 0.0, "lr_base > 0"),
            (self.decay_alpha >= 0.0, "decay_alpha >= 0"),
            (self.gaussian_sigma >= 0.0, "gaussian_sigma >= 0"),
            (self.denom_floor > 0.0, "denom_floor > 0"),
            (self.batch_size >= 1, "batch_size >= 1"),
        ];
        match problems.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(Error::Config(format!("foxtsage config requires {what}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoxtsageState {
    pub population: Vec<f64>,
    pub best_lr: f64,
    pub best_loss: f64,
    /// Completed iterations.
    pub iteration: usize,
    pub best_params: Option<ParamSet>,
}

/// One candidate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// 1-based.
    pub iteration: usize,
    pub candidate_index: usize,
    pub lr: f64,
    #[serde(with = "crate::numerics::json_f64")]
    pub epoch_loss: f64,
    #[serde(with = "crate::numerics::json_f64")]
    pub epoch_loss_sum: f64,
    pub is_best: bool,
    pub failed: bool,
    pub wall_time_s: f64,
}

/// State after an iteration's evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    /// 1-based.
    pub iteration: usize,
    #[serde(with = "crate::numerics::json_f64")]
    pub best_loss: f64,
    pub best_lr: f64,
    pub failed_candidates: usize,
    /// Decayed rate injected for the next iteration, when enabled.
    pub decayed_lr: Option<f64>,
}

const POPULATION_STREAM: u64 = 0;

/// RNG stream used for the mini-batch order (and dropout masks) of one
/// candidate evaluation. `iteration` is 0-based.
pub fn candidate_rng(seed: u64, iteration: usize, index: usize) -> Rng {
    Rng::stream(seed, (1u64 << 63) | ((iteration as u64) << 32) | index as u64)
}

/// RNG stream driving population initialization and updates.
pub fn population_rng(seed: u64) -> Rng {
    Rng::stream(seed, POPULATION_STREAM)
}

pub fn foxtsage_init(cfg: &FoxtsageConfig, rng: &mut Rng) -> Result<FoxtsageState> {
    cfg.validate()?;
    let population = (0..cfg.population_size)
        .map(|_| rng.uniform(cfg.lr_min, cfg.lr_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(FoxtsageState {
        best_lr: population[0],
        population,
        best_loss: f64::INFINITY,
        iteration: 0,
        best_params: None,
    })
}

/// One training epoch at a given learning rate. Foxtsage only needs this
/// to score candidates, so any objective with an SGD-style epoch can be
/// searched.
pub trait EpochObjective: Sync {
    fn train_epoch(&self, params: &mut ParamSet, lr: f64, rng: &mut Rng) -> Result<EpochLoss>;
}

/// Mini-batch SGD epochs of a model over a training set.
pub struct SgdEpochs<'a> {
    pub ctx: &'a ModelContext,
    pub data: &'a TrainSet,
    pub batch_size: usize,
}

impl EpochObjective for SgdEpochs<'_> {
    fn train_epoch(&self, params: &mut ParamSet, lr: f64, rng: &mut Rng) -> Result<EpochLoss> {
        sgd_epoch(&self.ctx.spec, params, self.data, lr, self.batch_size, rng)
    }
}

struct Evaluation {
    params: ParamSet,
    loss: EpochLoss,
    failed: bool,
    wall_time_s: f64,
}

fn evaluate_one<O: EpochObjective + ?Sized>(
    objective: &O,
    start: &ParamSet,
    lr: f64,
    mut rng: Rng,
) -> Result<Evaluation> {
    let timer = Instant::now();
    let mut params = start.clone();
    let loss = objective.train_epoch(&mut params, lr, &mut rng)?;
    let failed = !loss.is_finite() || !params.is_finite();
    Ok(Evaluation {
        params,
        loss,
        failed,
        wall_time_s: timer.elapsed().as_secs_f64(),
    })
}

/// Trains one epoch per candidate and folds the results into the
/// best-so-far state in candidate order (first seen wins ties).
///
/// In snapshot mode every candidate starts from `ctx.params`, and the
/// iteration winner, if any, becomes `ctx.params` for the next iteration.
/// In sequential mode candidates update `ctx.params` in place one after
/// another; a failed candidate's update is rolled back.
pub fn foxtsage_evaluate_candidates(
    state: &mut FoxtsageState,
    cfg: &FoxtsageConfig,
    ctx: &mut ModelContext,
    data: &TrainSet,
    seed: u64,
) -> Result<Vec<CandidateRecord>> {
    let mut params = ctx.params.clone();
    let objective = SgdEpochs {
        ctx,
        data,
        batch_size: cfg.batch_size,
    };
    let records = evaluate_candidates_with(state, cfg, &objective, &mut params, seed);
    ctx.params = params;
    records
}

/// [`foxtsage_evaluate_candidates`] over any objective; `params` plays
/// the role of `ctx.params`.
pub fn evaluate_candidates_with<O: EpochObjective + ?Sized>(
    state: &mut FoxtsageState,
    cfg: &FoxtsageConfig,
    objective: &O,
    params: &mut ParamSet,
    seed: u64,
) -> Result<Vec<CandidateRecord>> {
    let it = state.iteration;
    let mut results = Vec::with_capacity(state.population.len());
    match cfg.candidate_start {
        CandidateStart::Snapshot => {
            let start = &*params;
            let run = |(idx, &lr): (usize, &f64)| {
                evaluate_one(objective, start, lr, candidate_rng(seed, it, idx))
            };
            let evals: Vec<Evaluation> = if cfg.parallel {
                state.population.par_iter().enumerate().map(run).collect::<Result<_>>()?
            } else {
                state.population.iter().enumerate().map(run).collect::<Result<_>>()?
            };
            results.extend(evals);
        }
        CandidateStart::Sequential => {
            for (idx, &lr) in state.population.iter().enumerate() {
                let eval = evaluate_one(objective, params, lr, candidate_rng(seed, it, idx))?;
                if !eval.failed {
                    *params = eval.params.clone();
                }
                results.push(eval);
            }
        }
    }
    let mut records = Vec::with_capacity(results.len());
    let mut improved = false;
    for (idx, (eval, &lr)) in results.into_iter().zip(&state.population).enumerate() {
        let is_best = !eval.failed && eval.loss.mean < state.best_loss;
        if is_best {
            state.best_loss = eval.loss.mean;
            state.best_lr = lr;
            state.best_params = Some(eval.params);
            improved = true;
        }
        records.push(CandidateRecord {
            iteration: it + 1,
            candidate_index: idx,
            lr,
            epoch_loss: eval.loss.mean,
            epoch_loss_sum: eval.loss.batch_sum,
            is_best,
            failed: eval.failed,
            wall_time_s: eval.wall_time_s,
        });
    }
    if cfg.candidate_start == CandidateStart::Snapshot && improved {
        if let Some(best) = &state.best_params {
            *params = best.clone();
        }
    }
    state.iteration += 1;
    if records.iter().all(|r| r.failed) {
        return Err(Error::AllCandidatesFailed {
            iteration: it + 1,
            trace: Vec::new(),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Explore,
    Exploit,
}

/// New candidate around `best_lr` from a coin value `r ∈ [0,1)` and a
/// perturbation `g`, before clipping.
pub fn perturb(best_lr: f64, r: f64, g: f64, denom_floor: f64) -> (f64, Move) {
    if r < 0.5 {
        (best_lr * (1.0 + g), Move::Explore)
    } else {
        (best_lr / (1.0 + g).abs().max(denom_floor), Move::Exploit)
    }
}

/// Regenerates every candidate around `best_lr`. Draws, per candidate and
/// in order: the coin `r`, then the Gaussian `g`.
pub fn foxtsage_update_population(
    state: &mut FoxtsageState,
    cfg: &FoxtsageConfig,
    rng: &mut Rng,
) -> Result<Vec<Move>> {
    let mut moves = Vec::with_capacity(state.population.len());
    for slot in state.population.iter_mut() {
        let r = rng.next_f64();
        let g = cfg.gaussian_sigma * rng.gaussian();
        let (lr, mv) = perturb(state.best_lr, r, g, cfg.denom_floor);
        *slot = clip(lr, cfg.lr_min, cfg.lr_max)?;
        moves.push(mv);
    }
    Ok(moves)
}

/// η = η_base / (1 + α·f_best)
pub fn lr_decay(lr_base: f64, alpha: f64, f_best: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::Domain(format!("decay alpha must be >= 0, got {alpha}")));
    }
    if !(f_best >= 0.0) {
        return Err(Error::Domain(format!("best fitness must be >= 0, got {f_best}")));
    }
    Ok(lr_base / (1.0 + alpha * f_best))
}

#[derive(Debug, Clone)]
pub struct FoxtsageOutcome {
    /// θ*: parameters that produced `best_loss`.
    pub params: ParamSet,
    /// η*
    pub best_lr: f64,
    pub best_loss: f64,
    pub trace: Vec<IterationSummary>,
    pub evaluations: Vec<CandidateRecord>,
}

/// Runs the whole search. Deterministic in `(cfg, seed, data, ctx.params)`,
/// whether or not candidates are evaluated in parallel.
pub fn foxtsage_run(
    cfg: &FoxtsageConfig,
    ctx: &mut ModelContext,
    data: &TrainSet,
    seed: u64,
) -> Result<FoxtsageOutcome> {
    let mut params = ctx.params.clone();
    let objective = SgdEpochs {
        ctx,
        data,
        batch_size: cfg.batch_size,
    };
    let outcome = foxtsage_search(cfg, &objective, &mut params, seed)?;
    ctx.params = params;
    Ok(outcome)
}

/// [`foxtsage_run`] over any objective. On success `params` holds the
/// best parameters found.
pub fn foxtsage_search<O: EpochObjective + ?Sized>(
    cfg: &FoxtsageConfig,
    objective: &O,
    params: &mut ParamSet,
    seed: u64,
) -> Result<FoxtsageOutcome> {
    cfg.validate()?;
    let mut pop_rng = population_rng(seed);
    let mut state = foxtsage_init(cfg, &mut pop_rng)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut evaluations = Vec::with_capacity(cfg.iterations * cfg.population_size);
    for _ in 0..cfg.iterations {
        let records = match evaluate_candidates_with(&mut state, cfg, objective, params, seed) {
            Ok(r) => r,
            Err(Error::AllCandidatesFailed { iteration, .. }) => {
                return Err(Error::AllCandidatesFailed { iteration, trace });
            }
            Err(e) => return Err(e),
        };
        let failed_candidates = records.iter().filter(|r| r.failed).count();
        evaluations.extend(records);

        foxtsage_update_population(&mut state, cfg, &mut pop_rng)?;
        let decayed_lr = if cfg.apply_lr_decay {
            let eta = lr_decay(cfg.lr_base, cfg.decay_alpha, state.best_loss)?;
            let eta = clip(eta, cfg.lr_min, cfg.lr_max)?;
            state.population[0] = eta;
            Some(eta)
        } else {
            None
        };
        trace.push(IterationSummary {
            iteration: state.iteration,
            best_loss: state.best_loss,
            best_lr: state.best_lr,
            failed_candidates,
            decayed_lr,
        });
    }
    let best = state
        .best_params
        .ok_or_else(|| Error::Degenerate("search finished without a successful candidate".into()))?;
    *params = best.clone();
    Ok(FoxtsageOutcome {
        params: best,
        best_lr: state.best_lr,
        best_loss: state.best_loss,
        trace,
        evaluations,
    })
}
