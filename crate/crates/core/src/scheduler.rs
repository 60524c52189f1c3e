//! Per-iteration process parameters.
//!
//! A [`Scheduler`] bundles a step-size schedule (constant, polynomial or dual-averaging),
//! a constant temperature, an initial burn-in and a thinning plan, and emits one
//! [`ScheduleItem`] per iteration. Adaptive step sizes receive the previous iteration's
//! acceptance probability through [`Scheduler::next`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::random::RandomKey;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleItem {
    pub iteration: usize,
    pub step_size: f64,
    pub temperature: f64,
    pub burn_in: bool,
    pub keep: bool,
}

/// `ε_t = a (b + t)^(−γ)` with `ε_0 = first` and `ε_n = last`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolynomialSchedule {
    a: f64,
    b: f64,
    gamma: f64,
    first: f64,
    last: f64,
    iterations: usize,
}

impl PolynomialSchedule {
    pub fn first_last(first: f64, last: f64, gamma: f64, iterations: usize) -> Result<Self> {
        if !(last > 0.0) || !(first > last) || !first.is_finite() {
            return Err(Error::Argument(format!(
                "polynomial schedule needs first > last > 0, got first={first}, last={last}"
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Argument(format!(
                "decay exponent must lie in (0, 1], got {gamma}"
            )));
        }
        if iterations == 0 {
            return Err(Error::Argument(
                "polynomial schedule needs at least one iteration".into(),
            ));
        }
        let b = iterations as f64 / ((first / last).powf(1.0 / gamma) - 1.0);
        let a = first * b.powf(gamma);
        Ok(Self {
            a,
            b,
            gamma,
            first,
            last,
            iterations,
        })
    }

    pub fn at(&self, t: usize) -> f64 {
        // endpoints are pinned; the closed form is within a few ulps of them anyway
        if t == 0 {
            self.first
        } else if t == self.iterations {
            self.last
        } else {
            self.a * (self.b + t as f64).powf(-self.gamma)
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

pub fn polynomial_schedule(first: f64, last: f64, gamma: f64, iterations: usize) -> Result<PolynomialSchedule> {
    PolynomialSchedule::first_last(first, last, gamma, iterations)
}

pub const DEFAULT_DA_GAMMA: f64 = 0.05;
pub const DEFAULT_DA_T0: f64 = 10.0;
pub const DEFAULT_DA_KAPPA: f64 = 0.75;

/// Dual-averaging step-size adaptation towards a target acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualAveragingState {
    iteration: u64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAveragingState {
    /// Standard constants with `μ = log(10 ε_init)`.
    pub fn new(initial_step: f64, target: f64) -> Result<Self> {
        Self::with_constants(
            initial_step,
            target,
            (10.0 * initial_step).ln(),
            DEFAULT_DA_GAMMA,
            DEFAULT_DA_T0,
            DEFAULT_DA_KAPPA,
        )
    }

    pub fn with_constants(initial_step: f64, target: f64, mu: f64, gamma: f64, t0: f64, kappa: f64) -> Result<Self> {
        if !(initial_step > 0.0) || !initial_step.is_finite() {
            return Err(Error::Argument(format!(
                "initial step size must be positive, got {initial_step}"
            )));
        }
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::Argument(format!(
                "target acceptance must lie in (0, 1), got {target}"
            )));
        }
        if !(gamma > 0.0) || !(t0 >= 0.0) || !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::Argument("invalid dual-averaging constants".into()));
        }
        Ok(Self {
            iteration: 0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: initial_step.ln(),
            target,
            mu,
            gamma,
            t0,
            kappa,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged iterate `ε̄`, the value to freeze after adaptation.
    pub fn averaged_step_size(&self) -> f64 {
        self.log_step_bar.exp()
    }

    pub fn h_bar(&self) -> f64 {
        self.h_bar
    }

    pub fn update(&mut self, accept_prob: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&accept_prob) {
            return Err(Error::Argument(format!(
                "acceptance probability must lie in [0, 1], got {accept_prob}"
            )));
        }
        self.iteration += 1;
        let m = self.iteration as f64;
        let w = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_step = self.mu - m.sqrt() * self.h_bar / self.gamma;
        let eta = m.powf(-self.kappa);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
        Ok(())
    }
}

pub fn dual_averaging_step(mut state: DualAveragingState, accept_prob: f64) -> Result<DualAveragingState> {
    state.update(accept_prob)?;
    Ok(state)
}

/// `selections` distinct iterations in `burn_in..step_sizes.len()`, drawn without
/// replacement with probability proportional to the step size. Returned sorted.
pub fn random_thinning_plan(
    step_sizes: &[f64],
    burn_in: usize,
    selections: usize,
    key: RandomKey,
) -> Result<Vec<usize>> {
    let eligible = step_sizes.len().saturating_sub(burn_in);
    if selections > eligible {
        return Err(Error::Argument(format!(
            "cannot select {selections} samples from {eligible} post-burn-in iterations"
        )));
    }
    if step_sizes[burn_in.min(step_sizes.len())..].iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Argument("thinning weights must be positive".into()));
    }
    // Efraimidis–Spirakis: keep the largest u^(1/w), compared in log space as ln(u)/w
    let mut rng = key.rng();
    let mut keyed: Vec<(f64, usize)> = (burn_in..step_sizes.len())
        .map(|t| {
            let u: f64 = rng.random::<f64>();
            // u is in [0, 1); map 0 to the smallest positive value so ln stays finite
            (u.max(f64::MIN_POSITIVE).ln() / step_sizes[t], t)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut plan: Vec<usize> = keyed.into_iter().take(selections).map(|(_, t)| t).collect();
    plan.sort_unstable();
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSizeSchedule {
    Constant(f64),
    Polynomial(PolynomialSchedule),
    /// Adapts for the first `adapt_iterations` iterations, then freezes at `ε̄`.
    Adaptive {
        state: DualAveragingState,
        adapt_iterations: usize,
    },
}

impl StepSizeSchedule {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, StepSizeSchedule::Adaptive { .. })
    }

    /// Static value at `t`; adaptive schedules report their current iterate.
    pub fn static_value(&self, t: usize) -> f64 {
        match self {
            StepSizeSchedule::Constant(e) => *e,
            StepSizeSchedule::Polynomial(p) => p.at(t),
            StepSizeSchedule::Adaptive { state, .. } => state.step_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Thinning {
    /// Keep every post-burn-in iteration.
    KeepAll,
    /// Keep exactly the listed (sorted) iterations.
    Plan(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    iterations: usize,
    step_size: StepSizeSchedule,
    temperature: f64,
    burn_in: usize,
    thinning: Thinning,
    next_iteration: usize,
}

impl Scheduler {
    pub fn new(
        iterations: usize,
        step_size: StepSizeSchedule,
        temperature: f64,
        burn_in: usize,
        thinning: Thinning,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Argument("scheduler needs at least one iteration".into()));
        }
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::Argument(format!(
                "temperature must be non-negative, got {temperature}"
            )));
        }
        if let StepSizeSchedule::Constant(e) = step_size {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Argument(format!("step size must be positive, got {e}")));
            }
        }
        Ok(Self {
            iterations,
            step_size,
            temperature,
            burn_in,
            thinning,
            next_iteration: 0,
        })
    }

    /// Random thinning over a static step-size schedule; adaptive schedules use uniform weights.
    pub fn with_random_thinning(
        iterations: usize,
        step_size: StepSizeSchedule,
        temperature: f64,
        burn_in: usize,
        selections: usize,
        key: RandomKey,
    ) -> Result<Self> {
        let weights: Vec<f64> = if step_size.is_adaptive() {
            vec![1.0; iterations]
        } else {
            (0..iterations).map(|t| step_size.static_value(t)).collect()
        };
        let plan = random_thinning_plan(&weights, burn_in, selections, key)?;
        Self::new(iterations, step_size, temperature, burn_in, Thinning::Plan(plan))
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn is_adaptive(&self) -> bool {
        self.step_size.is_adaptive()
    }

    pub fn step_size_schedule(&self) -> &StepSizeSchedule {
        &self.step_size
    }

    pub fn thinning(&self) -> &Thinning {
        &self.thinning
    }

    /// Emit the item for the next iteration. `feedback` is the acceptance probability of
    /// the previous iteration and only affects adaptive schedules.
    pub fn next(&mut self, feedback: Option<f64>) -> Result<ScheduleItem> {
        let t = self.next_iteration;
        if t >= self.iterations {
            return Err(Error::ScheduleExhausted(self.iterations));
        }
        let step_size = match &mut self.step_size {
            StepSizeSchedule::Constant(e) => *e,
            StepSizeSchedule::Polynomial(p) => p.at(t),
            StepSizeSchedule::Adaptive {
                state,
                adapt_iterations,
            } => {
                if t <= *adapt_iterations {
                    if let Some(alpha) = feedback {
                        // feedback at t describes iteration t-1, which was still adapting
                        state.update(alpha)?;
                    }
                }
                if t < *adapt_iterations {
                    state.step_size()
                } else {
                    state.averaged_step_size()
                }
            }
        };
        let burn_in = t < self.burn_in;
        let keep = !burn_in
            && match &self.thinning {
                Thinning::KeepAll => true,
                Thinning::Plan(plan) => plan.binary_search(&t).is_ok(),
            };
        self.next_iteration += 1;
        Ok(ScheduleItem {
            iteration: t,
            step_size,
            temperature: self.temperature,
            burn_in,
            keep,
        })
    }
}

pub fn scheduler_next(mut scheduler: Scheduler, feedback: Option<f64>) -> Result<(ScheduleItem, Scheduler)> {
    let item = scheduler.next(feedback)?;
    Ok((item, scheduler))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form evaluated directly, independent of `PolynomialSchedule`.
    fn closed_form(first: f64, last: f64, gamma: f64, n: f64, t: f64) -> f64 {
        let ratio: f64 = first / last;
        let b = n / (ratio.powf(1.0 / gamma) - 1.0);
        first * (b / (b + t)).powf(gamma)
    }

    #[test]
    fn polynomial_endpoints_and_midpoint() {
        let s = polynomial_schedule(0.05, 0.001, 0.33, 10_000).unwrap();
        assert!((s.at(0) - 0.05).abs() < 1e-12);
        assert!((s.at(10_000) - 0.001).abs() < 1e-12);
        let mid = closed_form(0.05, 0.001, 0.33, 10_000.0, 5_000.0);
        assert!((s.at(5_000) - mid).abs() < 1e-15, "{} vs {mid}", s.at(5_000));
        // closed form itself lands on the endpoints
        assert!((closed_form(0.05, 0.001, 0.33, 10_000.0, 10_000.0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn polynomial_is_strictly_decreasing() {
        let s = polynomial_schedule(0.05, 0.001, 0.33, 10_000).unwrap();
        for t in 0..10_000 {
            assert!(s.at(t + 1) < s.at(t));
        }
    }

    #[test]
    fn polynomial_rejects_bad_order() {
        assert!(polynomial_schedule(0.001, 0.05, 0.33, 100).is_err());
        assert!(polynomial_schedule(0.05, 0.05, 0.33, 100).is_err());
        assert!(polynomial_schedule(0.05, 0.01, 1.5, 100).is_err());
    }

    #[test]
    fn dual_averaging_fixed_point() {
        let mut s = DualAveragingState::with_constants(0.1, 0.65, 0.1f64.ln(), 0.05, 10.0, 0.75).unwrap();
        for _ in 0..100 {
            s.update(0.65).unwrap();
            assert_eq!(s.h_bar(), 0.0);
            assert!((s.step_size() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn dual_averaging_shrinks_on_rejection() {
        let mut s = DualAveragingState::new(0.1, 0.65).unwrap();
        s.update(0.0).unwrap();
        let mut prev = s.step_size();
        for _ in 0..200 {
            s.update(0.0).unwrap();
            assert!(s.step_size() < prev);
            prev = s.step_size();
        }
        assert!(s.update(1.5).is_err());
    }

    #[test]
    fn dual_averaging_average_converges_on_iid_feedback() {
        // acceptance decreasing in ε with i.i.d. noise: α = exp(−ε) + U(−0.01, 0.01)
        let mut s = DualAveragingState::new(0.5, 0.65).unwrap();
        let mut rng = RandomKey::new(3).rng();
        let total = 20_000;
        let mut tail = Vec::new();
        for m in 0..total {
            let eps = s.step_size();
            let alpha = ((-eps).exp() + 0.02 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
            s.update(alpha).unwrap();
            if m >= total * 9 / 10 {
                tail.push(s.averaged_step_size());
            }
        }
        let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-3, "spread {spread}");
    }

    #[test]
    fn thinning_listing_configuration() {
        let s = polynomial_schedule(0.05, 0.001, 0.33, 10_000).unwrap();
        let eps: Vec<f64> = (0..10_000).map(|t| s.at(t)).collect();
        let plan = random_thinning_plan(&eps, 2000, 1000, RandomKey::new(1)).unwrap();
        assert_eq!(plan.len(), 1000);
        assert!(plan.iter().all(|&t| t >= 2000));
        assert!(plan.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn thinning_all_eligible_and_infeasible() {
        let eps = vec![1.0; 10];
        assert_eq!(
            random_thinning_plan(&eps, 4, 6, RandomKey::new(0)).unwrap(),
            (4..10).collect::<Vec<_>>()
        );
        assert!(random_thinning_plan(&eps, 4, 7, RandomKey::new(0)).is_err());
    }

    #[test]
    fn thinning_uniform_for_constant_weights() {
        let (n, burn_in, selections, plans) = (20, 5, 3, 10_000);
        let eps = vec![0.01; n];
        let mut counts = vec![0usize; n];
        let root = RandomKey::new(99);
        for p in 0..plans {
            for t in random_thinning_plan(&eps, burn_in, selections, root.fold_in(p)).unwrap() {
                counts[t] += 1;
            }
        }
        assert!(counts[..burn_in].iter().all(|&c| c == 0));
        let expected = (plans as f64 * selections as f64) / (n - burn_in) as f64;
        let chi2: f64 = counts[burn_in..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 14 dof, p = 0.01
        assert!(chi2 < 29.14, "chi-square {chi2}");
    }

    #[test]
    fn thinning_prefers_large_steps() {
        let mut eps = vec![1.0; 100];
        eps[..50].iter_mut().for_each(|e| *e = 4.0);
        let mut early = 0;
        for p in 0..500 {
            early += random_thinning_plan(&eps, 0, 10, RandomKey::new(7).fold_in(p))
                .unwrap()
                .iter()
                .filter(|&&t| t < 50)
                .count();
        }
        assert!(early as f64 / 5000.0 > 0.7);
    }

    #[test]
    fn burn_in_items_are_never_kept() {
        let mut s = Scheduler::new(
            10,
            StepSizeSchedule::Constant(0.1),
            1.0,
            4,
            Thinning::Plan((0..10).collect()),
        )
        .unwrap();
        for t in 0..10 {
            let item = s.next(None).unwrap();
            assert_eq!(item.burn_in, t < 4);
            assert_eq!(item.keep, t >= 4);
            assert_eq!(item.temperature, 1.0);
        }
        assert!(matches!(s.next(None), Err(Error::ScheduleExhausted(10))));
    }

    #[test]
    fn listing_sweep_keeps_exactly_the_plan() {
        let poly = polynomial_schedule(0.05, 0.001, 0.33, 10_000).unwrap();
        let mut s = Scheduler::with_random_thinning(
            10_000,
            StepSizeSchedule::Polynomial(poly),
            1.0,
            2000,
            1000,
            RandomKey::new(5),
        )
        .unwrap();
        let mut kept = 0;
        for _ in 0..10_000 {
            let item = s.next(None).unwrap();
            assert!(!(item.keep && item.burn_in));
            kept += item.keep as usize;
        }
        assert_eq!(kept, 1000);
    }

    #[test]
    fn static_schedule_replays_identically() {
        let poly = polynomial_schedule(0.01, 0.001, 0.5, 200).unwrap();
        let build = || {
            Scheduler::with_random_thinning(200, StepSizeSchedule::Polynomial(poly), 1.0, 20, 50, RandomKey::new(2))
                .unwrap()
        };
        let (mut a, mut b) = (build(), build());
        for _ in 0..200 {
            assert_eq!(a.next(None).unwrap(), b.next(None).unwrap());
        }
    }

    #[test]
    fn adaptive_schedule_freezes_after_adaptation() {
        let da = DualAveragingState::new(0.1, 0.65).unwrap();
        let mut s = Scheduler::new(
            50,
            StepSizeSchedule::Adaptive {
                state: da,
                adapt_iterations: 20,
            },
            1.0,
            20,
            Thinning::KeepAll,
        )
        .unwrap();
        let mut items = Vec::new();
        for _ in 0..50 {
            items.push(s.next(Some(0.2)).unwrap());
        }
        assert!(items[5].step_size < items[0].step_size);
        let frozen = items[20].step_size;
        assert!(items[20..].iter().all(|i| i.step_size == frozen));
    }
}
