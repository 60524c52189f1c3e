//! Process simulators on flat parameter vectors.
//!
//! All updates use unit mass. `temperature` scales the injected noise; `0.0` switches
//! the noise off entirely, which makes every integrator deterministic.
//!
//! The two trajectory integrators also return the accumulated work `W` that the
//! amortized Metropolis–Hastings solvers combine with exact endpoint potentials:
//! the acceptance exponent is `(U(θ_start) − U(θ_end) + W) / τ`.

use crate::error::{ensure_finite, Error, Result};
use crate::params::squared_norm;
use crate::random::RandomKey;

/// Position, momentum and accumulated work after a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorState {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub work: f64,
}

/// SGHMC friction `C` and the derived half-step friction `β = εC/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionParams {
    pub friction: f64,
    pub beta: f64,
}

impl FrictionParams {
    pub fn new(friction: f64, step_size: f64) -> Result<Self> {
        if !(friction >= 0.0) {
            return Err(Error::Argument(format!(
                "friction must be non-negative, got {friction}"
            )));
        }
        let beta = step_size * friction / 2.0;
        if beta >= 1.0 {
            return Err(Error::Argument(format!(
                "half-step friction β = εC/2 = {beta} must be below 1"
            )));
        }
        Ok(Self { friction, beta })
    }
}

fn check_step(step_size: f64, temperature: f64) -> Result<()> {
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::Argument(format!("step size must be positive, got {step_size}")));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::Argument(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    Ok(())
}

fn check_dims(what: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: {} vs {} entries", a.len(), b.len())));
    }
    Ok(())
}

/// Langevin diffusion step, `θ' = θ − (ε/2) P⊙g + √(ετ) √P⊙ξ`.
pub fn langevin_step(
    theta: &[f64],
    grad: &[f64],
    step_size: f64,
    temperature: f64,
    precond: Option<&[f64]>,
    key: RandomKey,
) -> Result<Vec<f64>> {
    check_step(step_size, temperature)?;
    check_dims("gradient", theta, grad)?;
    if let Some(p) = precond {
        check_dims("preconditioner", theta, p)?;
        if p.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Argument("preconditioner must be strictly positive".into()));
        }
    }
    let noise = key.normal_vec(theta.len(), (step_size * temperature).sqrt())?;
    let next: Vec<f64> = (0..theta.len())
        .map(|i| {
            let p = precond.map_or(1.0, |p| p[i]);
            theta[i] - 0.5 * step_size * p * grad[i] + p.sqrt() * noise[i]
        })
        .collect();
    ensure_finite(&next, "Langevin update")?;
    Ok(next)
}

/// SGHMC step: `p' = p − εg − εCp + ξ`, `ξ ~ N(0, 2(C − B̂)ετ)`, then `θ' = θ + εp'`.
#[allow(clippy::too_many_arguments)]
pub fn sghmc_step(
    theta: &[f64],
    momentum: &[f64],
    grad: &[f64],
    step_size: f64,
    friction: f64,
    noise_estimate: f64,
    temperature: f64,
    key: RandomKey,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(step_size, temperature)?;
    check_dims("momentum", theta, momentum)?;
    check_dims("gradient", theta, grad)?;
    if !(noise_estimate >= 0.0) || friction < noise_estimate {
        return Err(Error::Argument(format!(
            "friction {friction} must be at least the gradient-noise estimate {noise_estimate} >= 0"
        )));
    }
    let variance = 2.0 * (friction - noise_estimate) * step_size * temperature;
    let noise = key.normal_vec(theta.len(), variance.sqrt())?;
    let mut p_next = Vec::with_capacity(theta.len());
    let mut theta_next = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let p = momentum[i] - step_size * grad[i] - step_size * friction * momentum[i] + noise[i];
        p_next.push(p);
        theta_next.push(theta[i] + step_size * p);
    }
    ensure_finite(&theta_next, "SGHMC position")?;
    ensure_finite(&p_next, "SGHMC momentum")?;
    Ok((theta_next, p_next))
}

/// Time-reversible leapfrog with friction.
///
/// Starts with a half drift, then for `t = 1..=steps` evaluates `g_t` at the current
/// half-step position, updates `p_t = [(1−β) p_{t−1} − ε g_t + n_t] / (1+β)` with
/// `n_t ~ N(0, 4βτ)`, and drifts a full step (half a step after the last kick).
/// `grad_fn(t, θ)` receives the zero-based step index.
#[allow(clippy::too_many_arguments)]
pub fn reversible_leapfrog_trajectory(
    theta0: &[f64],
    p0: &[f64],
    steps: usize,
    step_size: f64,
    beta: f64,
    mut grad_fn: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    temperature: f64,
    key: RandomKey,
) -> Result<IntegratorState> {
    check_step(step_size, temperature)?;
    check_dims("momentum", theta0, p0)?;
    if steps == 0 {
        return Err(Error::Argument("trajectory needs at least one step".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Argument(format!("friction β must lie in [0, 1), got {beta}")));
    }
    let noise_scale = (4.0 * beta * temperature).sqrt();
    let mut theta: Vec<f64> = theta0.iter().zip(p0).map(|(t, p)| t + 0.5 * step_size * p).collect();
    let mut p = p0.to_vec();
    let mut work = 0.0;
    for t in 0..steps {
        let g = grad_fn(t, &theta)?;
        check_dims("gradient", &theta, &g)?;
        let noise = key.fold_in(t as u64).normal_vec(theta.len(), noise_scale)?;
        let p_prev = std::mem::take(&mut p);
        p = (0..theta.len())
            .map(|i| ((1.0 - beta) * p_prev[i] - step_size * g[i] + noise[i]) / (1.0 + beta))
            .collect();
        work += 0.5 * step_size * (0..theta.len()).map(|i| (p_prev[i] + p[i]) * g[i]).sum::<f64>();
        let drift = if t + 1 == steps { 0.5 * step_size } else { step_size };
        for (x, v) in theta.iter_mut().zip(&p) {
            *x += drift * v;
        }
        ensure_finite(&theta, "leapfrog position")?;
    }
    if !work.is_finite() {
        return Err(Error::numeric("non-finite leapfrog work"));
    }
    Ok(IntegratorState {
        position: theta,
        momentum: p,
        work,
    })
}

/// OU damping factor `a = exp(−γε/2)` for OBABO.
pub fn ou_factor(friction: f64, step_size: f64) -> f64 {
    (-friction * step_size / 2.0).exp()
}

/// OBABO splitting, `steps` times: O (`p ← a p + √((1−a²)τ) ξ`), half kick, drift,
/// half kick, O.
///
/// `grad_fn(t, θ)` is called twice per step with the same `t`, before and after the
/// drift. The work over each BAB core is `(ε/4)(p_before + p_after)·(g_first + g_second)`,
/// which equals the negative kinetic-energy change of that core; the O steps contribute
/// nothing because they leave the Gaussian momentum distribution invariant.
#[allow(clippy::too_many_arguments)]
pub fn obabo_trajectory(
    theta0: &[f64],
    p0: &[f64],
    steps: usize,
    step_size: f64,
    friction: f64,
    mut grad_fn: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    temperature: f64,
    key: RandomKey,
) -> Result<IntegratorState> {
    check_step(step_size, temperature)?;
    check_dims("momentum", theta0, p0)?;
    if steps == 0 {
        return Err(Error::Argument("trajectory needs at least one step".into()));
    }
    if !(friction >= 0.0) {
        return Err(Error::Argument(format!(
            "friction must be non-negative, got {friction}"
        )));
    }
    let a = ou_factor(friction, step_size);
    let ou_scale = ((1.0 - a * a) * temperature).sqrt();
    let d = theta0.len();
    let mut theta = theta0.to_vec();
    let mut p = p0.to_vec();
    let mut work = 0.0;
    let ou = |p: &mut [f64], key: RandomKey| -> Result<()> {
        let xi = key.normal_vec(d, ou_scale)?;
        for (v, x) in p.iter_mut().zip(xi) {
            *v = a * *v + x;
        }
        Ok(())
    };
    for t in 0..steps {
        let step_key = key.fold_in(t as u64);
        ou(&mut p, step_key.fold_in(0))?;
        let p_before = p.clone();
        let g1 = grad_fn(t, &theta)?;
        check_dims("gradient", &theta, &g1)?;
        for i in 0..d {
            p[i] -= 0.5 * step_size * g1[i];
            theta[i] += step_size * p[i];
        }
        let g2 = grad_fn(t, &theta)?;
        check_dims("gradient", &theta, &g2)?;
        for i in 0..d {
            p[i] -= 0.5 * step_size * g2[i];
        }
        work += 0.25 * step_size * (0..d).map(|i| (p_before[i] + p[i]) * (g1[i] + g2[i])).sum::<f64>();
        ou(&mut p, step_key.fold_in(1))?;
        ensure_finite(&theta, "OBABO position")?;
        ensure_finite(&p, "OBABO momentum")?;
    }
    if !work.is_finite() {
        return Err(Error::numeric("non-finite OBABO work"));
    }
    Ok(IntegratorState {
        position: theta,
        momentum: p,
        work,
    })
}

/// Kinetic energy for unit mass.
pub fn kinetic_energy(p: &[f64]) -> f64 {
    0.5 * squared_norm(p)
}
