//! Markov transitions built from integrators, and the chain loop that drives them.
//!
//! * [`SgmcSolver`]: SGLD, pSGLD and SGHMC; every proposal is accepted.
//! * [`AmagoldSolver`]: reversible-leapfrog trajectories with one amortized MH test.
//! * [`SggmcSolver`]: OBABO trajectories with one amortized MH test.
//! * [`TemperingPair`]: two SGLD chains at different temperatures with periodic swaps.
//!
//! The MH solvers evaluate the exact potential only at trajectory endpoints. Each inner
//! step fetches a fresh mini-batch; a rejected round still consumes its batches.

use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::adaption::{OnlineCovState, RmsPropState, DEFAULT_RMSPROP_DECAY, DEFAULT_RMSPROP_REGULARIZER};
use crate::data::{BatchSpec, BatchStrategy, BatchStream, MiniBatch};
use crate::error::{Error, Result};
use crate::integrator::{kinetic_energy, langevin_step, obabo_trajectory, reversible_leapfrog_trajectory, sghmc_step};
use crate::io::SampleStore;
use crate::params::{Layout, ParameterVector};
use crate::potential::{Potential, PotentialEvaluator};
use crate::random::RandomKey;
use crate::scheduler::{DualAveragingState, PolynomialSchedule, ScheduleItem, Scheduler, StepSizeSchedule, Thinning};

/// Default reversible-leapfrog friction as a multiple of the step size.
pub const DEFAULT_BETA_PER_STEP: f64 = 0.05;
pub const DEFAULT_SWAP_INTERVAL: usize = 50;
pub const DEFAULT_CORRECTION_FACTOR: f64 = 1.0;
pub const DEFAULT_DECAY_EXPONENT: f64 = 0.33;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptanceStats {
    proposals: u64,
    accepts: u64,
    accept_prob_sum: f64,
    last_accept_prob: Option<f64>,
}

impl AcceptanceStats {
    pub fn record(&mut self, accept_prob: f64, accepted: bool) {
        debug_assert!((0.0..=1.0).contains(&accept_prob));
        self.proposals += 1;
        self.accepts += accepted as u64;
        self.accept_prob_sum += accept_prob;
        self.last_accept_prob = Some(accept_prob);
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    pub fn accepts(&self) -> u64 {
        self.accepts
    }

    pub fn last_accept_prob(&self) -> Option<f64> {
        self.last_accept_prob
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accepts as f64 / self.proposals as f64)
    }

    pub fn mean_accept_prob(&self) -> Option<f64> {
        (self.proposals > 0).then(|| self.accept_prob_sum / self.proposals as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Acceptance probability of this step's MH test, if there was one.
    pub accept_prob: Option<f64>,
    pub accepted: bool,
}

/// A Markov-chain transition kernel over a flat parameter vector.
pub trait Solver: Send {
    fn name(&self) -> &'static str;

    fn layout(&self) -> &Arc<Layout>;

    fn position(&self) -> &[f64];

    fn step(&mut self, item: &ScheduleItem) -> Result<StepReport>;

    /// Whether steps carry an MH acceptance probability usable for step-size feedback.
    fn is_metropolized(&self) -> bool {
        false
    }

    /// MH statistics, or swap statistics for tempering pairs.
    fn acceptance(&self) -> Option<&AcceptanceStats> {
        None
    }

    fn gradient_evaluations(&self) -> u64;

    fn parameters(&self) -> ParameterVector {
        ParameterVector::structure(Arc::clone(self.layout()), self.position().to_vec()).expect("layout matches")
    }
}

fn check_init(potential: &Potential, init: &ParameterVector) -> Result<()> {
    if **init.layout() != **potential.layout() {
        return Err(Error::Layout("initial sample does not match the model layout".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Dynamics {
    /// Langevin diffusion, optionally RMSProp-preconditioned (pSGLD).
    Langevin { rmsprop: Option<RmsPropState> },
    /// Leapfrog with friction `C` and gradient-noise estimate `B̂`.
    Sghmc {
        friction: f64,
        noise_estimate: f64,
        momentum: Vec<f64>,
    },
}

/// Accept-all SG-MCMC: SGLD, pSGLD or SGHMC.
#[derive(Debug, Clone)]
pub struct SgmcSolver {
    name: &'static str,
    evaluator: PotentialEvaluator,
    theta: Vec<f64>,
    dynamics: Dynamics,
    key: RandomKey,
    last_potential: Option<f64>,
}

impl SgmcSolver {
    pub fn new(
        name: &'static str,
        evaluator: PotentialEvaluator,
        init: &ParameterVector,
        dynamics: Dynamics,
        key: RandomKey,
    ) -> Result<Self> {
        check_init(evaluator.potential(), init)?;
        if let Dynamics::Sghmc { momentum, .. } = &dynamics {
            if momentum.len() != init.flatten().len() {
                return Err(Error::Shape("momentum length differs from the parameter length".into()));
            }
        }
        Ok(Self {
            name,
            evaluator,
            theta: init.flatten().to_vec(),
            dynamics,
            key,
            last_potential: None,
        })
    }

    pub fn sgld(evaluator: PotentialEvaluator, init: &ParameterVector, key: RandomKey) -> Result<Self> {
        Self::new("sgld", evaluator, init, Dynamics::Langevin { rmsprop: None }, key)
    }

    pub fn psgld(
        evaluator: PotentialEvaluator,
        init: &ParameterVector,
        rmsprop: RmsPropState,
        key: RandomKey,
    ) -> Result<Self> {
        Self::new(
            "psgld",
            evaluator,
            init,
            Dynamics::Langevin { rmsprop: Some(rmsprop) },
            key,
        )
    }

    pub fn sghmc(evaluator: PotentialEvaluator, init: &ParameterVector, friction: f64, key: RandomKey) -> Result<Self> {
        let momentum = vec![0.0; init.flatten().len()];
        Self::new(
            "sghmc",
            evaluator,
            init,
            Dynamics::Sghmc {
                friction,
                noise_estimate: 0.0,
                momentum,
            },
            key,
        )
    }

    /// Stochastic potential evaluated during the most recent step.
    pub fn last_potential(&self) -> Option<f64> {
        self.last_potential
    }

    pub fn evaluator_mut(&mut self) -> &mut PotentialEvaluator {
        &mut self.evaluator
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// One integrator step; the proposal is always accepted.
    pub fn update(&mut self, item: &ScheduleItem) -> Result<()> {
        let (u, g) = self.evaluator.evaluate(&self.theta)?;
        let key = self.key.fold_in(item.iteration as u64);
        match &mut self.dynamics {
            Dynamics::Langevin { rmsprop } => {
                let precond = rmsprop.as_mut().map(|r| r.step(&g)).transpose()?;
                self.theta = langevin_step(
                    &self.theta,
                    &g,
                    item.step_size,
                    item.temperature,
                    precond.as_deref(),
                    key,
                )?;
            }
            Dynamics::Sghmc {
                friction,
                noise_estimate,
                momentum,
            } => {
                let (theta, p) = sghmc_step(
                    &self.theta,
                    momentum,
                    &g,
                    item.step_size,
                    *friction,
                    *noise_estimate,
                    item.temperature,
                    key,
                )?;
                self.theta = theta;
                *momentum = p;
            }
        }
        self.last_potential = Some(u);
        Ok(())
    }
}

/// Free-function form of [`SgmcSolver::update`].
pub fn sgmc_update(state: &mut SgmcSolver, item: &ScheduleItem) -> Result<()> {
    state.update(item).map_err(|e| e.at_iteration(item.iteration))
}

impl Solver for SgmcSolver {
    fn name(&self) -> &'static str {
        self.name
    }

    fn layout(&self) -> &Arc<Layout> {
        self.evaluator.potential().layout()
    }

    fn position(&self) -> &[f64] {
        &self.theta
    }

    fn step(&mut self, item: &ScheduleItem) -> Result<StepReport> {
        sgmc_update(self, item)?;
        Ok(StepReport {
            accept_prob: None,
            accepted: true,
        })
    }

    fn gradient_evaluations(&self) -> u64 {
        self.evaluator.evaluations()
    }
}

/// Everything needed to audit one amortized-MH round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub start_position: Vec<f64>,
    pub start_momentum: Vec<f64>,
    pub start_potential: f64,
    pub end_position: Vec<f64>,
    pub end_momentum: Vec<f64>,
    pub end_potential: f64,
    pub work: f64,
    /// `(U_start − U_end + W) / τ`.
    pub log_accept_ratio: f64,
    pub accept_prob: f64,
    pub accepted: bool,
}

/// State shared by the two amortized-MH solvers.
#[derive(Debug, Clone)]
struct MetropolisCore {
    evaluator: PotentialEvaluator,
    theta: Vec<f64>,
    momentum: Vec<f64>,
    cached_potential: f64,
    key: RandomKey,
    stats: AcceptanceStats,
}

impl MetropolisCore {
    fn new(evaluator: PotentialEvaluator, init: &ParameterVector, key: RandomKey) -> Result<Self> {
        check_init(evaluator.potential(), init)?;
        let theta = init.flatten().to_vec();
        let cached_potential = evaluator.exact_value(&theta)?;
        if !cached_potential.is_finite() {
            return Err(Error::numeric("initial potential is not finite"));
        }
        Ok(Self {
            momentum: vec![0.0; theta.len()],
            evaluator,
            theta,
            cached_potential,
            key,
            stats: AcceptanceStats::default(),
        })
    }

    fn check_temperature(item: &ScheduleItem) -> Result<()> {
        if !(item.temperature > 0.0) {
            return Err(Error::Argument(format!(
                "Metropolis solvers need a positive temperature, got {}",
                item.temperature
            )));
        }
        Ok(())
    }

    fn resample_momentum(&self, key: RandomKey, temperature: f64) -> Result<Vec<f64>> {
        key.normal_vec(self.theta.len(), temperature.sqrt())
    }

    /// MH test on an integrated trajectory; on rejection θ is kept and p is flipped.
    fn finish(
        &mut self,
        p0: Vec<f64>,
        end_position: Vec<f64>,
        end_momentum: Vec<f64>,
        work: f64,
        temperature: f64,
        key: RandomKey,
    ) -> Result<RoundReport> {
        let end_potential = self.evaluator.exact_value(&end_position)?;
        let log_accept_ratio = (self.cached_potential - end_potential + work) / temperature;
        if log_accept_ratio.is_nan() || log_accept_ratio == f64::INFINITY {
            return Err(Error::numeric(format!("acceptance exponent is {log_accept_ratio}")));
        }
        let accept_prob = log_accept_ratio.min(0.0).exp();
        let accepted = key.uniform() < accept_prob;
        let report = RoundReport {
            start_position: self.theta.clone(),
            start_momentum: p0.clone(),
            start_potential: self.cached_potential,
            end_position: end_position.clone(),
            end_momentum: end_momentum.clone(),
            end_potential,
            work,
            log_accept_ratio,
            accept_prob,
            accepted,
        };
        if accepted {
            self.theta = end_position;
            self.momentum = end_momentum;
            self.cached_potential = end_potential;
        } else {
            self.momentum = p0.into_iter().map(|v| -v).collect();
        }
        self.stats.record(accept_prob, accepted);
        Ok(report)
    }
}

/// Reversible-leapfrog trajectories of `L` steps with an amortized MH correction.
#[derive(Debug, Clone)]
pub struct AmagoldSolver {
    core: MetropolisCore,
    leapfrog_steps: usize,
    beta: Option<f64>,
}

impl AmagoldSolver {
    /// `beta = None` uses `0.05 · ε` each round.
    pub fn new(
        evaluator: PotentialEvaluator,
        init: &ParameterVector,
        leapfrog_steps: usize,
        beta: Option<f64>,
        key: RandomKey,
    ) -> Result<Self> {
        if leapfrog_steps == 0 {
            return Err(Error::config("leapfrog_steps", "must be at least 1"));
        }
        if let Some(b) = beta {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config("beta", format!("must lie in [0, 1), got {b}")));
            }
        }
        Ok(Self {
            core: MetropolisCore::new(evaluator, init, key)?,
            leapfrog_steps,
            beta,
        })
    }

    pub fn cached_potential(&self) -> f64 {
        self.core.cached_potential
    }

    pub fn momentum(&self) -> &[f64] {
        &self.core.momentum
    }

    pub fn stats(&self) -> &AcceptanceStats {
        &self.core.stats
    }

    pub fn round(&mut self, item: &ScheduleItem) -> Result<RoundReport> {
        MetropolisCore::check_temperature(item)?;
        let key = self.core.key.fold_in(item.iteration as u64);
        let p0 = self.core.resample_momentum(key.fold_in(0), item.temperature)?;
        let beta = self.beta.unwrap_or(DEFAULT_BETA_PER_STEP * item.step_size);
        let evaluator = &mut self.core.evaluator;
        let traj = reversible_leapfrog_trajectory(
            &self.core.theta,
            &p0,
            self.leapfrog_steps,
            item.step_size,
            beta,
            |_, theta| Ok(evaluator.evaluate(theta)?.1),
            item.temperature,
            key.fold_in(1),
        )?;
        self.core.finish(
            p0,
            traj.position,
            traj.momentum,
            traj.work,
            item.temperature,
            key.fold_in(2),
        )
    }
}

pub fn amagold_round(state: &mut AmagoldSolver, item: &ScheduleItem) -> Result<RoundReport> {
    state.round(item).map_err(|e| e.at_iteration(item.iteration))
}

impl Solver for AmagoldSolver {
    fn name(&self) -> &'static str {
        "amagold"
    }

    fn layout(&self) -> &Arc<Layout> {
        self.core.evaluator.potential().layout()
    }

    fn position(&self) -> &[f64] {
        &self.core.theta
    }

    fn step(&mut self, item: &ScheduleItem) -> Result<StepReport> {
        let r = amagold_round(self, item)?;
        Ok(StepReport {
            accept_prob: Some(r.accept_prob),
            accepted: r.accepted,
        })
    }

    fn is_metropolized(&self) -> bool {
        true
    }

    fn acceptance(&self) -> Option<&AcceptanceStats> {
        Some(&self.core.stats)
    }

    fn gradient_evaluations(&self) -> u64 {
        self.core.evaluator.evaluations()
    }
}

/// OBABO trajectories of `m` steps with an amortized MH correction.
///
/// Momentum is fully resampled at the start of every round; the O steps inside the
/// trajectory add partial refreshes on top.
#[derive(Debug, Clone)]
pub struct SggmcSolver {
    core: MetropolisCore,
    steps: usize,
    friction: f64,
}

impl SggmcSolver {
    pub fn new(
        evaluator: PotentialEvaluator,
        init: &ParameterVector,
        steps: usize,
        friction: f64,
        key: RandomKey,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("obabo_steps", "must be at least 1"));
        }
        if !(friction >= 0.0) {
            return Err(Error::config(
                "ou_friction",
                format!("must be non-negative, got {friction}"),
            ));
        }
        Ok(Self {
            core: MetropolisCore::new(evaluator, init, key)?,
            steps,
            friction,
        })
    }

    pub fn cached_potential(&self) -> f64 {
        self.core.cached_potential
    }

    pub fn momentum(&self) -> &[f64] {
        &self.core.momentum
    }

    pub fn stats(&self) -> &AcceptanceStats {
        &self.core.stats
    }

    pub fn round(&mut self, item: &ScheduleItem) -> Result<RoundReport> {
        MetropolisCore::check_temperature(item)?;
        let key = self.core.key.fold_in(item.iteration as u64);
        let p0 = self.core.resample_momentum(key.fold_in(0), item.temperature)?;
        let evaluator = &mut self.core.evaluator;
        // both half kicks of a step share that step's batch
        let mut current: Option<(usize, Option<MiniBatch>)> = None;
        let traj = obabo_trajectory(
            &self.core.theta,
            &p0,
            self.steps,
            item.step_size,
            self.friction,
            |t, theta| {
                if current.as_ref().map(|(s, _)| *s) != Some(t) {
                    current = Some((t, evaluator.next_batch()?));
                }
                let batch = current.as_ref().and_then(|(_, b)| b.as_ref());
                Ok(evaluator.evaluate_on(theta, batch)?.1)
            },
            item.temperature,
            key.fold_in(1),
        )?;
        self.core.finish(
            p0,
            traj.position,
            traj.momentum,
            traj.work,
            item.temperature,
            key.fold_in(2),
        )
    }
}

pub fn sggmc_round(state: &mut SggmcSolver, item: &ScheduleItem) -> Result<RoundReport> {
    state.round(item).map_err(|e| e.at_iteration(item.iteration))
}

impl Solver for SggmcSolver {
    fn name(&self) -> &'static str {
        "sggmc"
    }

    fn layout(&self) -> &Arc<Layout> {
        self.core.evaluator.potential().layout()
    }

    fn position(&self) -> &[f64] {
        &self.core.theta
    }

    fn step(&mut self, item: &ScheduleItem) -> Result<StepReport> {
        let r = sggmc_round(self, item)?;
        Ok(StepReport {
            accept_prob: Some(r.accept_prob),
            accepted: r.accepted,
        })
    }

    fn is_metropolized(&self) -> bool {
        true
    }

    fn acceptance(&self) -> Option<&AcceptanceStats> {
        Some(&self.core.stats)
    }

    fn gradient_evaluations(&self) -> u64 {
        self.core.evaluator.evaluations()
    }
}

/// Swap exponent `S = d (Ũ_low − Ũ_high − d σ̂² / F)` with `d = 1/τ_low − 1/τ_high`.
pub fn swap_exponent(tau_low: f64, tau_high: f64, u_low: f64, u_high: f64, variance: f64, correction: f64) -> f64 {
    let d = 1.0 / tau_low - 1.0 / tau_high;
    d * (u_low - u_high - d * variance / correction)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapReport {
    pub exponent: f64,
    pub swap_prob: f64,
    pub swapped: bool,
}

/// Replica-exchange SGLD: a target chain at `τ = 1` and a hot chain at `τ_high`.
#[derive(Debug, Clone)]
pub struct TemperingPair {
    low: SgmcSolver,
    high: SgmcSolver,
    tau_high: f64,
    swap_interval: usize,
    correction: f64,
    variance: OnlineCovState,
    steps_since_swap: usize,
    key: RandomKey,
    swaps: AcceptanceStats,
}

impl TemperingPair {
    pub fn new(
        low: SgmcSolver,
        high: SgmcSolver,
        tau_high: f64,
        swap_interval: usize,
        correction: f64,
        key: RandomKey,
    ) -> Result<Self> {
        if !(tau_high > 1.0) || !tau_high.is_finite() {
            return Err(Error::config("tau_high", format!("must exceed 1, got {tau_high}")));
        }
        if swap_interval == 0 {
            return Err(Error::config("swap_interval", "must be at least 1"));
        }
        if !(correction > 0.0) {
            return Err(Error::config(
                "correction_factor",
                format!("must be positive, got {correction}"),
            ));
        }
        if **low.layout() != **high.layout() {
            return Err(Error::Layout("tempered chains use different layouts".into()));
        }
        Ok(Self {
            low,
            high,
            tau_high,
            swap_interval,
            correction,
            variance: OnlineCovState::new(1, true),
            steps_since_swap: 0,
            key,
            swaps: AcceptanceStats::default(),
        })
    }

    pub fn low(&self) -> &SgmcSolver {
        &self.low
    }

    pub fn high(&self) -> &SgmcSolver {
        &self.high
    }

    pub fn swap_stats(&self) -> &AcceptanceStats {
        &self.swaps
    }

    /// Current estimate of the stochastic-potential variance `σ̂²`.
    pub fn potential_variance(&self) -> f64 {
        self.variance.variance().unwrap_or(0.0)
    }

    /// Attempt an exchange using fresh stochastic potentials of both chains.
    pub fn attempt_swap(&mut self, low_temperature: f64, iteration: usize) -> Result<SwapReport> {
        let (u_low, _) = self.low.evaluator.evaluate(&self.low.theta)?;
        let (u_high, _) = self.high.evaluator.evaluate(&self.high.theta)?;
        let exponent = swap_exponent(
            low_temperature,
            self.tau_high,
            u_low,
            u_high,
            self.potential_variance(),
            self.correction,
        );
        if exponent.is_nan() {
            return Err(Error::numeric("swap exponent is NaN"));
        }
        let swap_prob = exponent.min(0.0).exp();
        let swapped = self.key.fold_in(iteration as u64).uniform() < swap_prob;
        if swapped {
            std::mem::swap(&mut self.low.theta, &mut self.high.theta);
            if let (Dynamics::Sghmc { momentum: a, .. }, Dynamics::Sghmc { momentum: b, .. }) =
                (&mut self.low.dynamics, &mut self.high.dynamics)
            {
                std::mem::swap(a, b);
            }
        }
        self.swaps.record(swap_prob, swapped);
        Ok(SwapReport {
            exponent,
            swap_prob,
            swapped,
        })
    }
}

/// Advance both chains once; every `swap_interval` steps, attempt an exchange.
pub fn resgld_swap(pair: &mut TemperingPair, low_temperature: f64, iteration: usize) -> Result<SwapReport> {
    pair.attempt_swap(low_temperature, iteration)
        .map_err(|e| e.at_iteration(iteration))
}

impl Solver for TemperingPair {
    fn name(&self) -> &'static str {
        "resgld"
    }

    fn layout(&self) -> &Arc<Layout> {
        self.low.layout()
    }

    fn position(&self) -> &[f64] {
        &self.low.theta
    }

    fn step(&mut self, item: &ScheduleItem) -> Result<StepReport> {
        sgmc_update(&mut self.low, item)?;
        let hot = ScheduleItem {
            temperature: self.tau_high,
            ..*item
        };
        sgmc_update(&mut self.high, &hot)?;
        if let Some(u) = self.low.last_potential {
            self.variance.update(&[u])?;
        }
        self.steps_since_swap += 1;
        if self.steps_since_swap >= self.swap_interval {
            self.steps_since_swap = 0;
            resgld_swap(self, item.temperature, item.iteration)?;
        }
        Ok(StepReport {
            accept_prob: None,
            accepted: true,
        })
    }

    fn acceptance(&self) -> Option<&AcceptanceStats> {
        Some(&self.swaps)
    }

    fn gradient_evaluations(&self) -> u64 {
        self.low.gradient_evaluations() + self.high.gradient_evaluations()
    }
}

/// Outcome of one chain. On failure, `error` is set and everything collected so far is kept.
#[derive(Debug)]
pub struct ChainResult {
    pub store: SampleStore,
    pub sample_count: usize,
    pub acceptance_rate: Option<f64>,
    pub mean_accept_prob: Option<f64>,
    pub rounds: usize,
    pub gradient_evaluations: u64,
    pub runtime: Duration,
    pub error: Option<Error>,
}

/// Drive a solver through `iterations` scheduled steps, routing kept samples to `store`.
pub fn run_mcmc(
    solver: &mut dyn Solver,
    scheduler: &mut Scheduler,
    mut store: SampleStore,
    iterations: usize,
) -> Result<ChainResult> {
    if iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    if iterations > scheduler.iterations() {
        return Err(Error::config(
            "iterations",
            format!("{iterations} exceeds the schedule length {}", scheduler.iterations()),
        ));
    }
    if **store.layout() != **solver.layout() {
        return Err(Error::Layout(
            "sample store layout differs from the solver layout".into(),
        ));
    }
    let adaptive = scheduler.is_adaptive();
    if adaptive && !solver.is_metropolized() {
        return Err(Error::config(
            "target_accept",
            "adaptive step sizes need a Metropolis solver",
        ));
    }
    let start = Instant::now();
    let mut feedback = None;
    let mut rounds = 0;
    let mut error = None;
    for _ in 0..iterations {
        let item = match scheduler.next(feedback) {
            Ok(item) => item,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        match solver.step(&item) {
            Ok(report) => {
                rounds += 1;
                feedback = if adaptive { report.accept_prob } else { None };
                if item.keep {
                    store.push_flat(solver.position(), item.iteration, item.step_size)?;
                }
            }
            Err(e) => {
                error = Some(e.at_iteration(item.iteration));
                break;
            }
        }
    }
    let stats = solver.acceptance();
    Ok(ChainResult {
        sample_count: store.sample_count(),
        acceptance_rate: stats.and_then(AcceptanceStats::acceptance_rate),
        mean_accept_prob: stats.and_then(AcceptanceStats::mean_accept_prob),
        store,
        rounds,
        gradient_evaluations: solver.gradient_evaluations(),
        runtime: start.elapsed(),
        error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Sgld,
    Psgld,
    Sghmc,
    Amagold,
    Sggmc,
    Resgld,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::Sgld,
        SamplerKind::Psgld,
        SamplerKind::Sghmc,
        SamplerKind::Amagold,
        SamplerKind::Sggmc,
        SamplerKind::Resgld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Sgld => "sgld",
            SamplerKind::Psgld => "psgld",
            SamplerKind::Sghmc => "sghmc",
            SamplerKind::Amagold => "amagold",
            SamplerKind::Sggmc => "sggmc",
            SamplerKind::Resgld => "resgld",
        }
    }

    pub fn is_metropolized(self) -> bool {
        matches!(self, SamplerKind::Amagold | SamplerKind::Sggmc)
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::config(
                "sampler",
                format!("unknown sampler `{s}`; expected one of sgld, psgld, sghmc, amagold, sggmc, resgld"),
            )
        })
    }
}

/// Hyperparameters for [`build_sampler`]; which fields are required depends on the sampler.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
/// Unknown keys are not rejected here so the struct can be flattened into larger configs.
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    /// Random-thinning sample count; absent keeps every post-burn-in iteration.
    pub selections: Option<usize>,

    /// Constant step size, or the initial step size of an adaptive schedule.
    pub step_size: Option<f64>,
    pub first_step_size: Option<f64>,
    pub last_step_size: Option<f64>,
    /// Polynomial decay exponent.
    pub gamma: Option<f64>,
    /// Dual-averaging target acceptance; Metropolis solvers only.
    pub target_accept: Option<f64>,
    pub temperature: Option<f64>,

    pub batch_size: Option<usize>,
    pub batch_strategy: Option<BatchStrategy>,
    pub cache_count: Option<usize>,
    /// Use full-data gradients instead of mini-batches.
    pub exact_gradients: Option<bool>,

    pub rms_prop: Option<bool>,
    pub rms_decay: Option<f64>,
    pub rms_regularizer: Option<f64>,

    /// SGHMC friction `C`.
    pub friction: Option<f64>,
    pub noise_estimate: Option<f64>,

    pub leapfrog_steps: Option<usize>,
    pub beta: Option<f64>,

    pub obabo_steps: Option<usize>,
    /// OBABO friction `γ`.
    pub ou_friction: Option<f64>,

    pub tau_high: Option<f64>,
    pub swap_interval: Option<usize>,
    pub correction_factor: Option<f64>,
}

fn require<T: Copy>(value: Option<T>, field: &str, sampler: SamplerKind) -> Result<T> {
    value.ok_or_else(|| Error::config(field, format!("required by {sampler}")))
}

impl SamplerConfig {
    fn step_size_schedule(&self, kind: SamplerKind, iterations: usize) -> Result<StepSizeSchedule> {
        if let Some(target) = self.target_accept {
            if !kind.is_metropolized() {
                return Err(Error::config(
                    "target_accept",
                    format!("{kind} accepts every proposal; adaptive step sizes need amagold or sggmc"),
                ));
            }
            let init = require(self.step_size, "step_size", kind)?;
            let state =
                DualAveragingState::new(init, target).map_err(|e| Error::config("target_accept", e.to_string()))?;
            let burn_in = self.burn_in.unwrap_or(0);
            let adapt_iterations = if burn_in > 0 { burn_in } else { iterations };
            return Ok(StepSizeSchedule::Adaptive {
                state,
                adapt_iterations,
            });
        }
        match (self.first_step_size, self.last_step_size, self.step_size) {
            (Some(first), Some(last), _) => {
                let gamma = self.gamma.unwrap_or(DEFAULT_DECAY_EXPONENT);
                PolynomialSchedule::first_last(first, last, gamma, iterations)
                    .map(StepSizeSchedule::Polynomial)
                    .map_err(|e| Error::config("first_step_size", e.to_string()))
            }
            (Some(_), None, _) => Err(Error::config("last_step_size", "required with first_step_size")),
            (None, Some(_), _) => Err(Error::config("first_step_size", "required with last_step_size")),
            (None, None, Some(eps)) if eps > 0.0 && eps.is_finite() => Ok(StepSizeSchedule::Constant(eps)),
            (None, None, Some(eps)) => Err(Error::config("step_size", format!("must be positive, got {eps}"))),
            (None, None, None) => Err(Error::config(
                "step_size",
                format!("{kind} needs step_size or first_step_size/last_step_size"),
            )),
        }
    }
}

/// A solver with its matching scheduler.
pub struct SamplerBundle {
    pub solver: Box<dyn Solver>,
    pub scheduler: Scheduler,
}

impl std::fmt::Debug for SamplerBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SamplerBundle")
            .field("solver", &self.solver.name())
            .field("scheduler", &self.scheduler)
            .finish()
    }
}

impl SamplerBundle {
    pub fn run(mut self, store: SampleStore) -> Result<ChainResult> {
        let iterations = self.scheduler.iterations();
        run_mcmc(self.solver.as_mut(), &mut self.scheduler, store, iterations)
    }
}

/// Assemble one of the named samplers from its building blocks.
///
/// `psgld` is `sgld` with RMSProp preconditioning; `sgld` with `rms_prop = true` is the same.
pub fn build_sampler(
    kind: SamplerKind,
    config: &SamplerConfig,
    potential: Potential,
    init: &ParameterVector,
    key: RandomKey,
) -> Result<SamplerBundle> {
    check_init(&potential, init)?;
    let iterations = require(config.iterations, "iterations", kind)?;
    if iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    let burn_in = config.burn_in.unwrap_or(0);
    if burn_in > iterations {
        return Err(Error::config(
            "burn_in",
            format!("{burn_in} exceeds iterations {iterations}"),
        ));
    }
    let temperature = config.temperature.unwrap_or(1.0);
    let step_size = config.step_size_schedule(kind, iterations)?;
    let dim = init.flatten().len();
    let n_rows = potential.dataset().len();

    let keys = key.split(6)?;
    let exact = config.exact_gradients.unwrap_or(false);
    let batch_size = match (exact, config.batch_size) {
        (true, _) => None,
        (false, Some(n)) if n >= 1 && n <= n_rows => Some(n),
        (false, Some(n)) => {
            return Err(Error::config(
                "batch_size",
                format!("must lie in 1..={n_rows}, got {n}"),
            ))
        }
        (false, None) => {
            return Err(Error::config(
                "batch_size",
                format!("required by {kind} unless exact_gradients is set"),
            ))
        }
    };
    let evaluator = |stream_key: RandomKey| -> Result<PotentialEvaluator> {
        match batch_size {
            None => Ok(PotentialEvaluator::exact(potential.clone())),
            Some(n) => {
                let spec = BatchSpec::new(n, config.batch_strategy.unwrap_or(BatchStrategy::Shuffle), stream_key)
                    .with_cache(config.cache_count.unwrap_or(1));
                let stream = BatchStream::new(Arc::clone(potential.dataset()), spec)?;
                PotentialEvaluator::stochastic(potential.clone(), stream)
            }
        }
    };

    let rmsprop = || -> Result<RmsPropState> {
        RmsPropState::new(
            dim,
            config.rms_decay.unwrap_or(DEFAULT_RMSPROP_DECAY),
            config.rms_regularizer.unwrap_or(DEFAULT_RMSPROP_REGULARIZER),
        )
        .map_err(|e| Error::config("rms_decay", e.to_string()))
    };

    let solver: Box<dyn Solver> = match kind {
        SamplerKind::Sgld | SamplerKind::Psgld => {
            let use_rms = kind == SamplerKind::Psgld || config.rms_prop.unwrap_or(false);
            let dynamics = Dynamics::Langevin {
                rmsprop: use_rms.then(rmsprop).transpose()?,
            };
            let name = if use_rms { "psgld" } else { "sgld" };
            Box::new(SgmcSolver::new(name, evaluator(keys[0])?, init, dynamics, keys[1])?)
        }
        SamplerKind::Sghmc => {
            let friction = require(config.friction, "friction", kind)?;
            let noise_estimate = config.noise_estimate.unwrap_or(0.0);
            if !(noise_estimate >= 0.0) || friction < noise_estimate {
                return Err(Error::config(
                    "friction",
                    format!("must be at least noise_estimate ({noise_estimate})"),
                ));
            }
            let dynamics = Dynamics::Sghmc {
                friction,
                noise_estimate,
                momentum: vec![0.0; dim],
            };
            Box::new(SgmcSolver::new("sghmc", evaluator(keys[0])?, init, dynamics, keys[1])?)
        }
        SamplerKind::Amagold => {
            let steps = require(config.leapfrog_steps, "leapfrog_steps", kind)?;
            Box::new(AmagoldSolver::new(
                evaluator(keys[0])?,
                init,
                steps,
                config.beta,
                keys[1],
            )?)
        }
        SamplerKind::Sggmc => {
            let steps = require(config.obabo_steps, "obabo_steps", kind)?;
            let friction = require(config.ou_friction, "ou_friction", kind)?;
            Box::new(SggmcSolver::new(evaluator(keys[0])?, init, steps, friction, keys[1])?)
        }
        SamplerKind::Resgld => {
            let tau_high = require(config.tau_high, "tau_high", kind)?;
            let use_rms = config.rms_prop.unwrap_or(false);
            let dynamics = || -> Result<Dynamics> {
                Ok(Dynamics::Langevin {
                    rmsprop: use_rms.then(rmsprop).transpose()?,
                })
            };
            let low = SgmcSolver::new("sgld", evaluator(keys[0])?, init, dynamics()?, keys[1])?;
            let high = SgmcSolver::new("sgld", evaluator(keys[3])?, init, dynamics()?, keys[4])?;
            Box::new(TemperingPair::new(
                low,
                high,
                tau_high,
                config.swap_interval.unwrap_or(DEFAULT_SWAP_INTERVAL),
                config.correction_factor.unwrap_or(DEFAULT_CORRECTION_FACTOR),
                keys[5],
            )?)
        }
    };

    let scheduler = match config.selections {
        Some(selections) => {
            Scheduler::with_random_thinning(iterations, step_size, temperature, burn_in, selections, keys[2])
                .map_err(|e| Error::config("selections", e.to_string()))?
        }
        None => Scheduler::new(iterations, step_size, temperature, burn_in, Thinning::KeepAll)
            .map_err(|e| Error::config("temperature", e.to_string()))?,
    };
    Ok(SamplerBundle { solver, scheduler })
}

/// Momentum-inclusive Hamiltonian for unit mass, handy for auditing [`RoundReport`]s.
pub fn hamiltonian(potential: f64, momentum: &[f64]) -> f64 {
    potential + kinetic_energy(momentum)
}
