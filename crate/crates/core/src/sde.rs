//! Euler–Maruyama integration of the lifted system
//!
//! ```text
//! dX   = sigma dB - sum_k a_k e_k'(X) U_k dt
//! dU_k = e_k(X) dt
//! ```
//!
//! The noise enters through the constant angle direction `(sigma, 0, ..., 0)`,
//! whose derivative vanishes, so the Stratonovich and Itô forms coincide and
//! plain Euler–Maruyama is consistent for every number of modes.

use std::f64::consts::TAU;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{CircleModel, ModelError, ProductMeasure, State};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ensemble member {index}: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<SimError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, t_final: f64, record_every: usize, seed: u64) -> Result<Self, SimError> {
        let cfg = Self { dt, t_final, record_every, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!("dt = {} must be > 0", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return Err(SimError::InvalidConfig(format!(
                "t_final = {} must be finite and >= dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(SimError::InvalidConfig("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// `ceil(t_final / dt)`, ignoring rounding noise in the quotient.
    pub fn n_steps(&self) -> usize {
        steps_for(self.t_final, self.dt)
    }
}

fn steps_for(t: f64, dt: f64) -> usize {
    let q = t / dt;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// Sampled path. `unwrapped_x` is the continuous lift of the angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub unwrapped_x: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &State, f64)> {
        let i = self.times.len().checked_sub(1)?;
        Some((self.times[i], &self.states[i], self.unwrapped_x[i]))
    }
}

/// One point of a running path, handed to observers without allocating.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint<'a> {
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub unwrapped_x: f64,
    pub u: &'a [f64],
}

impl PathPoint<'_> {
    pub fn to_state(&self) -> State {
        State { x: self.x, u: self.u.to_vec() }
    }
}

/// Noise vector field `(sigma, 0, ..., 0)` at `s`.
pub fn noise_field(model: &CircleModel, _s: &State) -> Vec<f64> {
    let mut g = vec![0.0; model.dim() + 1];
    g[0] = model.sigma();
    g
}

/// One Euler–Maruyama step driven by the standard normal `noise`.
pub fn em_step(model: &CircleModel, s: &State, dt: f64, noise: f64) -> Result<State, SimError> {
    model.check_state(s)?;
    if !s.is_finite() || !noise.is_finite() {
        return Err(SimError::NonFinite { step: 0 });
    }
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig(format!("dt = {dt} must be > 0")));
    }
    let mut stepper = Stepper::new(model);
    let mut x = s.x;
    let mut winding = 0;
    let mut u = s.u.clone();
    stepper.advance(&mut x, &mut winding, &mut u, dt, noise);
    Ok(State { x, u })
}

/// Scratch space for repeated steps of one model.
pub struct Stepper<'m> {
    model: &'m CircleModel,
    weights: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m CircleModel) -> Self {
        let n = model.dim();
        Self { model, weights: model.weights(), values: vec![0.0; n], derivs: vec![0.0; n] }
    }

    /// Advances `(x, u)` in place. `x` stays in `[0, 2pi)` and `winding`
    /// counts full turns, so the lift is `x + 2 pi winding`.
    #[inline]
    pub fn advance(&mut self, x: &mut f64, winding: &mut i64, u: &mut [f64], dt: f64, noise: f64) {
        self.model.eigen_eval_into(*x, &mut self.values, &mut self.derivs);
        let mut drift = 0.0;
        for k in 0..u.len() {
            drift -= self.weights[k] * self.derivs[k] * u[k];
        }
        for k in 0..u.len() {
            u[k] += self.values[k] * dt;
        }
        let raw = *x + drift * dt + self.model.sigma() * dt.sqrt() * noise;
        let turns = (raw / TAU).floor();
        let mut wrapped = raw - turns * TAU;
        let mut turns = turns as i64;
        if wrapped >= TAU {
            wrapped -= TAU;
            turns += 1;
        } else if wrapped < 0.0 {
            wrapped += TAU;
            turns -= 1;
        }
        *x = wrapped;
        *winding += turns;
    }
}

/// Runs one path and hands every step (including step 0) to `observe`.
pub fn simulate_with<F>(
    model: &CircleModel,
    s0: &State,
    cfg: &SimConfig,
    stream: &mut RngStream,
    mut observe: F,
) -> Result<(), SimError>
where
    F: FnMut(PathPoint<'_>),
{
    cfg.validate()?;
    model.check_state(s0)?;
    if !s0.is_finite() {
        return Err(SimError::NonFinite { step: 0 });
    }
    let n = cfg.n_steps();
    let mut stepper = Stepper::new(model);
    let mut x = crate::model::wrap_angle(s0.x);
    let base_turns = ((s0.x - x) / TAU).round() as i64;
    let mut winding = base_turns;
    let mut u = s0.u.clone();
    observe(PathPoint { step: 0, t: 0.0, x, unwrapped_x: x + TAU * winding as f64, u: &u });
    let sigma_zero = model.sigma() == 0.0;
    for step in 1..=n {
        let noise = if sigma_zero { 0.0 } else { stream.normal() };
        stepper.advance(&mut x, &mut winding, &mut u, cfg.dt, noise);
        if !x.is_finite() || u.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { step });
        }
        observe(PathPoint {
            step,
            t: step as f64 * cfg.dt,
            x,
            unwrapped_x: x + TAU * winding as f64,
            u: &u,
        });
    }
    Ok(())
}

/// Records every `record_every`-th step plus the final one.
pub fn simulate(
    model: &CircleModel,
    s0: &State,
    cfg: &SimConfig,
    stream: &mut RngStream,
) -> Result<Trajectory, SimError> {
    let n = cfg.n_steps();
    let cap = n / cfg.record_every + 2;
    let mut traj = Trajectory {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        unwrapped_x: Vec::with_capacity(cap),
    };
    simulate_with(model, s0, cfg, stream, |p| {
        if p.step % cfg.record_every == 0 || p.step == n {
            traj.times.push(p.t);
            traj.states.push(p.to_state());
            traj.unwrapped_x.push(p.unwrapped_x);
        }
    })?;
    Ok(traj)
}

#[derive(Debug, Clone)]
pub enum EnsembleInit {
    Fixed(State),
    Measure(ProductMeasure),
}

impl EnsembleInit {
    fn draw(&self, stream: &mut RngStream) -> State {
        match self {
            EnsembleInit::Fixed(s) => s.clone(),
            EnsembleInit::Measure(m) => m.sample(stream),
        }
    }
}

fn first_error<T>(results: Vec<Result<T, SimError>>) -> Result<Vec<T>, SimError> {
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => return Err(SimError::Member { index, source: Box::new(e) }),
        }
    }
    Ok(out)
}

/// Member `i` uses stream `(cfg.seed, i)`; the result does not depend on
/// how rayon schedules the members.
pub fn simulate_ensemble(
    model: &CircleModel,
    init: &EnsembleInit,
    count: usize,
    cfg: &SimConfig,
) -> Result<Vec<Trajectory>, SimError> {
    if count == 0 {
        return Err(SimError::InvalidConfig("ensemble count must be >= 1".into()));
    }
    cfg.validate()?;
    let results: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut stream = RngStream::new(cfg.seed, i as u64);
            let s0 = init.draw(&mut stream);
            simulate(model, &s0, cfg, &mut stream)
        })
        .collect();
    first_error(results)
}

/// Ensemble states at fixed times; `states[t][i]` is member `i` at `times[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub states: Vec<Vec<State>>,
    pub unwrapped_x: Vec<Vec<f64>>,
}

impl Snapshots {
    pub fn at(&self, t: f64) -> Option<&[State]> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-9).map(|i| self.states[i].as_slice())
    }
}

/// Runs `count` members to the last requested time and keeps only the
/// states at `times` (each rounded to the nearest step).
pub fn ensemble_snapshots(
    model: &CircleModel,
    init: &EnsembleInit,
    count: usize,
    cfg: &SimConfig,
    times: &[f64],
) -> Result<Snapshots, SimError> {
    if count == 0 {
        return Err(SimError::InvalidConfig("ensemble count must be >= 1".into()));
    }
    cfg.validate()?;
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= 0.0 && t <= cfg.t_final * (1.0 + 1e-12)) {
            return Err(SimError::InvalidConfig(format!("snapshot time {t} outside [0, t_final]")));
        }
        steps.push((t / cfg.dt).round() as usize);
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::InvalidConfig("snapshot times must be strictly increasing".into()));
    }
    let last = steps.last().copied().unwrap_or(0).max(1);
    let run_cfg = SimConfig { t_final: last as f64 * cfg.dt, ..cfg.clone() };
    let results: Vec<Result<Vec<(State, f64)>, SimError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut stream = RngStream::new(cfg.seed, i as u64);
            let s0 = init.draw(&mut stream);
            let mut out = Vec::with_capacity(steps.len());
            let mut next = 0;
            simulate_with(model, &s0, &run_cfg, &mut stream, |p| {
                while next < steps.len() && steps[next] == p.step {
                    out.push((p.to_state(), p.unwrapped_x));
                    next += 1;
                }
            })?;
            Ok(out)
        })
        .collect();
    let members = first_error(results)?;
    let mut states = vec![Vec::with_capacity(count); steps.len()];
    let mut unwrapped = vec![Vec::with_capacity(count); steps.len()];
    for member in members {
        for (k, (s, ux)) in member.into_iter().enumerate() {
            states[k].push(s);
            unwrapped[k].push(ux);
        }
    }
    Ok(Snapshots {
        times: steps.iter().map(|&s| s as f64 * cfg.dt).collect(),
        states,
        unwrapped_x: unwrapped,
    })
}
