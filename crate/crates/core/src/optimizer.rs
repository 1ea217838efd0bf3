//! Projected gradient descent over `(h, a, b)`, full-batch or mini-batch.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{evaluate, objective_value, mean_sd, CriterionKind, CriterionParams, JointState, ObjectiveEval};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::TrajectoryRecord;
use crate::model::{error_rate, loss_batch, loss_values, LinearModel};

/// Identifier of the generator and shuffle used for mini-batch order.
pub const RNG_ALGORITHM: &str = "chacha8-rand_chacha-0.9/fisher-yates-rand-0.9";

/// Default lower bound on the scale after each step.
pub const DEFAULT_B_FLOOR: f64 = 1e-8;

/// Norm of `h` beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OptMode {
    Batch { iterations: usize },
    Stochastic { epochs: usize, batch_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub step_size: f64,
    pub mode: OptMode,
    pub seed: u64,
    /// Iterations (batch mode) or epochs (stochastic mode) between checkpoints.
    pub checkpoint_every: usize,
    pub b_floor: f64,
}

impl OptConfig {
    pub fn batch(step_size: f64, iterations: usize) -> Self {
        OptConfig {
            step_size,
            mode: OptMode::Batch { iterations },
            seed: 0,
            checkpoint_every: 100,
            b_floor: DEFAULT_B_FLOOR,
        }
    }

    pub fn stochastic(step_size: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        OptConfig {
            step_size,
            mode: OptMode::Stochastic { epochs, batch_size },
            seed,
            checkpoint_every: 1,
            b_floor: DEFAULT_B_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidParameter("checkpoint_every must be positive".into()));
        }
        if !(self.b_floor > 0.0) {
            return Err(Error::InvalidParameter("b_floor must be positive".into()));
        }
        if let OptMode::Stochastic { batch_size: 0, .. } = self.mode {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Which blocks of the state a criterion moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Active {
    pub h: bool,
    pub a: bool,
    pub b: bool,
}

impl Active {
    pub fn for_kind(kind: CriterionKind) -> Self {
        Active {
            h: true,
            a: kind.optimizes_a(),
            b: kind.optimizes_b(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: JointState,
    pub trajectory: Vec<TrajectoryRecord>,
    /// State at each checkpoint, keyed by checkpoint index.
    pub checkpoints: Vec<(usize, JointState)>,
    pub config: OptConfig,
    pub criterion: CriterionParams,
    pub rng_algorithm: &'static str,
    pub wall_time: Duration,
}

/// One shared-step update; the scale is projected onto `[b_floor, inf)`.
pub fn gd_step(state: &mut JointState, eval: &ObjectiveEval, active: Active, step: f64, b_floor: f64) {
    if active.h {
        for (w, g) in state.h.iter_mut().zip(eval.grad_h.iter()) {
            *w -= step * g;
        }
    }
    if active.a {
        state.a -= step * eval.grad_a;
    }
    if active.b {
        if let Some(gb) = eval.grad_b {
            state.b = (state.b - step * gb).max(b_floor);
        }
    }
}

/// Model layout implied by a dataset: one row for binary tasks, bias included.
pub fn model_for(dataset: &Dataset, h: &[f64]) -> Result<LinearModel> {
    let mut model = LinearModel::zeros(dataset.n_classes, dataset.dim(), true);
    if h.len() != model.n_params() {
        return Err(Error::DimensionMismatch {
            expected: model.n_params(),
            got: h.len(),
        });
    }
    model.flat_mut().copy_from_slice(h);
    Ok(model)
}

/// All-zero weights shaped for `dataset`.
pub fn zero_weights(dataset: &Dataset) -> Vec<f64> {
    vec![0.0; LinearModel::zeros(dataset.n_classes, dataset.dim(), true).n_params()]
}

/// Starting state at weights `h`, with `(a, b)` set from the training losses.
pub fn initial_state(dataset: &Dataset, h: Vec<f64>) -> Result<JointState> {
    let model = model_for(dataset, &h)?;
    let train = dataset.indices(Split::Train);
    let losses = loss_values(&model, dataset, &train)?;
    JointState::initialise(h, &losses)
}

/// Metrics for every split present in `dataset` at `state`.
pub fn checkpoint_metrics(
    checkpoint: usize,
    state: &JointState,
    dataset: &Dataset,
    params: &CriterionParams,
) -> Result<Vec<TrajectoryRecord>> {
    let model = model_for(dataset, &state.h)?;
    let norm = model.norm();
    let mut out = Vec::new();
    for split in dataset.present_splits() {
        let idx = dataset.indices(split);
        let losses = loss_values(&model, dataset, &idx)?;
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        out.push(TrajectoryRecord {
            checkpoint,
            split,
            mean_sd: mean_sd(&losses, 1.0)?,
            mean_loss,
            error_rate: error_rate(&model, dataset, &idx)?,
            model_norm: norm,
            objective: objective_value(&losses, state, params)?,
            a: params.kind.optimizes_a().then_some(state.a),
            b: params.kind.optimizes_b().then_some(state.b),
        });
    }
    Ok(out)
}

struct Runner<'a> {
    params: &'a CriterionParams,
    dataset: &'a Dataset,
    config: &'a OptConfig,
    active: Active,
    state: JointState,
    model: LinearModel,
    trajectory: Vec<TrajectoryRecord>,
    checkpoints: Vec<(usize, JointState)>,
}

impl<'a> Runner<'a> {
    fn new(params: &'a CriterionParams, init: JointState, dataset: &'a Dataset, config: &'a OptConfig) -> Result<Self> {
        config.validate()?;
        if dataset.indices(Split::Train).is_empty() {
            return Err(Error::Empty("train split"));
        }
        let model = model_for(dataset, &init.h)?;
        if !(init.b > 0.0) {
            return Err(Error::InvalidParameter("initial scale must be positive".into()));
        }
        Ok(Runner {
            params,
            dataset,
            config,
            active: Active::for_kind(params.kind),
            state: init,
            model,
            trajectory: Vec::new(),
            checkpoints: Vec::new(),
        })
    }

    fn step(&mut self, iteration: usize, indices: &[usize]) -> Result<()> {
        self.model.flat_mut().copy_from_slice(&self.state.h);
        let batch = loss_batch(&self.model, self.dataset, indices)?;
        let eval = evaluate(&batch, &self.state, self.params)?;
        if !eval.value.is_finite() {
            return Err(Error::Diverged {
                iteration,
                reason: format!("objective is {}", eval.value),
            });
        }
        gd_step(&mut self.state, &eval, self.active, self.config.step_size, self.config.b_floor);
        let norm = self.state.h_norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM || !self.state.a.is_finite() || !self.state.b.is_finite() {
            return Err(Error::Diverged {
                iteration,
                reason: format!("state left the finite region (|h| = {norm:e})"),
            });
        }
        Ok(())
    }

    fn checkpoint(&mut self, index: usize) -> Result<()> {
        let records = checkpoint_metrics(index, &self.state, self.dataset, self.params)?;
        if let Some(r) = records.iter().find(|r| !r.objective.is_finite() || !r.mean_sd.is_finite()) {
            return Err(Error::Diverged {
                iteration: index,
                reason: format!("non-finite metrics on {} split", r.split),
            });
        }
        self.trajectory.extend(records);
        self.checkpoints.push((index, self.state.clone()));
        Ok(())
    }

    fn finish(self, started: Instant) -> RunResult {
        RunResult {
            final_state: self.state,
            trajectory: self.trajectory,
            checkpoints: self.checkpoints,
            config: *self.config,
            criterion: *self.params,
            rng_algorithm: RNG_ALGORITHM,
            wall_time: started.elapsed(),
        }
    }
}

/// Full-gradient descent on the training split for `iterations` steps.
pub fn run_batch_gd(
    params: &CriterionParams,
    init: JointState,
    dataset: &Dataset,
    config: &OptConfig,
) -> Result<RunResult> {
    let started = Instant::now();
    let OptMode::Batch { iterations } = config.mode else {
        return Err(Error::InvalidParameter("run_batch_gd needs a batch-mode config".into()));
    };
    let mut runner = Runner::new(params, init, dataset, config)?;
    let train = dataset.indices(Split::Train);
    for it in 1..=iterations {
        runner.step(it, &train)?;
        if it % config.checkpoint_every == 0 || it == iterations {
            runner.checkpoint(it)?;
        }
    }
    Ok(runner.finish(started))
}

/// Seeded source of per-epoch permutations.
pub struct Shuffler {
    rng: ChaCha8Rng,
}

impl Shuffler {
    pub fn new(seed: u64) -> Self {
        Shuffler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh permutation of `base`.
    pub fn permutation(&mut self, base: &[usize]) -> Vec<usize> {
        let mut order = base.to_vec();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Mini-batch SGD: each epoch reshuffles the training rows and walks contiguous
/// batches, keeping the final partial batch. Rows inside a batch are summed in
/// ascending index order so results do not depend on the within-batch order.
pub fn run_minibatch_sgd(
    params: &CriterionParams,
    init: JointState,
    dataset: &Dataset,
    config: &OptConfig,
) -> Result<RunResult> {
    let started = Instant::now();
    let OptMode::Stochastic { epochs, batch_size } = config.mode else {
        return Err(Error::InvalidParameter("run_minibatch_sgd needs a stochastic-mode config".into()));
    };
    let mut runner = Runner::new(params, init, dataset, config)?;
    let train = dataset.indices(Split::Train);
    if batch_size > train.len() {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} exceeds training size {}",
            train.len()
        )));
    }
    let mut shuffler = Shuffler::new(config.seed);
    let mut iteration = 0;
    for epoch in 1..=epochs {
        let order = shuffler.permutation(&train);
        for chunk in order.chunks(batch_size) {
            iteration += 1;
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            runner.step(iteration, &batch)?;
        }
        if epoch % config.checkpoint_every == 0 || epoch == epochs {
            runner.checkpoint(epoch)?;
        }
    }
    Ok(runner.finish(started))
}

/// Dispatches on the config mode.
pub fn run(params: &CriterionParams, init: JointState, dataset: &Dataset, config: &OptConfig) -> Result<RunResult> {
    match config.mode {
        OptMode::Batch { .. } => run_batch_gd(params, init, dataset, config),
        OptMode::Stochastic { .. } => run_minibatch_sgd(params, init, dataset, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn eval(grad_h: Vec<f64>, grad_a: f64, grad_b: Option<f64>) -> ObjectiveEval {
        ObjectiveEval {
            value: 0.0,
            grad_h: grad_h.into(),
            grad_a,
            grad_b,
        }
    }

    #[test]
    fn step_projects_scale() {
        let mut s = JointState::new(vec![1.0, -1.0], 0.5, 0.1).unwrap();
        let active = Active::for_kind(CriterionKind::SunHuber);
        gd_step(&mut s, &eval(vec![1.0, 2.0], 1.0, Some(100.0)), active, 0.1, 1e-8);
        assert_eq!(s.h, vec![0.9, -1.2]);
        assert_eq!(s.a, 0.4);
        assert_eq!(s.b, 1e-8);
    }

    #[test]
    fn erm_leaves_threshold_and_scale() {
        let mut s = JointState::new(vec![0.0], 0.5, 0.1).unwrap();
        gd_step(&mut s, &eval(vec![1.0], 7.0, None), Active::for_kind(CriterionKind::Erm), 0.5, 1e-8);
        assert_eq!((s.h[0], s.a, s.b), (-0.5, 0.5, 0.1));
        let mut s = JointState::new(vec![0.0], 0.5, 0.1).unwrap();
        gd_step(&mut s, &eval(vec![1.0], 1.0, None), Active::for_kind(CriterionKind::Cvar { xi: 0.5 }), 0.5, 1e-8);
        assert_eq!((s.a, s.b), (0.0, 0.1));
    }

    #[test]
    fn config_validation() {
        assert!(OptConfig::batch(0.0, 10).validate().is_err());
        assert!(OptConfig::batch(f64::NAN, 10).validate().is_err());
        assert!(OptConfig::stochastic(0.1, 1, 0, 0).validate().is_err());
        let mut c = OptConfig::batch(0.1, 10);
        c.b_floor = 0.0;
        assert!(c.validate().is_err());
        assert!(OptConfig::batch(0.1, 10).validate().is_ok());
    }

    #[test]
    fn shuffler_is_seeded() {
        let base: Vec<usize> = (0..50).collect();
        let p = Shuffler::new(3).permutation(&base);
        assert_eq!(p, Shuffler::new(3).permutation(&base));
        assert_ne!(p, Shuffler::new(4).permutation(&base));
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, base);
    }

    #[test]
    fn zero_iterations_return_initial_state() {
        let ds = Dataset::new(array![[1.0], [-1.0]], vec![1, 0], 2, "toy").unwrap();
        let init = initial_state(&ds, vec![0.3, 0.0]).unwrap();
        let r = run(&CriterionParams::erm(), init.clone(), &ds, &OptConfig::batch(0.1, 0)).unwrap();
        assert_eq!(r.final_state, init);
        assert!(r.trajectory.is_empty());
    }

    #[test]
    fn huge_step_is_reported_as_divergence() {
        let ds = Dataset::new(array![[1e6], [-1e6]], vec![0, 1], 2, "toy").unwrap();
        let init = initial_state(&ds, vec![1.0, 0.0]).unwrap();
        let err = run(&CriterionParams::erm(), init, &ds, &OptConfig::batch(1e9, 5)).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }
}
