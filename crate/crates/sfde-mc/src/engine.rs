//! Euler-Maruyama time stepping for dynamics whose coefficients read the
//! recent history of the path through a [`Segment`].
//!
//! The update is the explicit scheme
//!
//! ```text
//! x' = x + H(t, x, seg) * dt + G(t, x, seg) * dW
//! ```
//!
//! with coefficients evaluated at the left endpoint of each step (Ito
//! convention). The segment's node spacing must be an integer multiple of
//! the step size, so history nodes are committed exactly at node instants
//! and never interpolated in time: between node boundaries the head slot is
//! a live copy of the current value, and at a boundary the previous node
//! value is committed and the window rolls.
//!
//! A multiplicative log-space variant is available for strictly positive
//! scalar dynamics (see [`StepKind::LogEuler`]); it preserves positivity and
//! is exact for constant relative coefficients.

use std::sync::Arc;

use crate::error::Error;
use crate::rng::NoiseStream;
use crate::segment::{Segment, SegmentGrid};

pub type CoefficientFn = Arc<dyn Fn(f64, &[f64], &Segment, &mut [f64]) + Send + Sync>;

/// Which discrete update the stepper applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Additive Euler-Maruyama: `x' = x + H dt + G dW`.
    EulerAdditive,
    /// Scalar multiplicative step `x' = x * exp((h - g^2/2) dt + g dW)`,
    /// where the drift and diffusion closures return the *relative*
    /// coefficients. Requires `dim_x == dim_w == 1` and positive state.
    LogEuler,
}

/// Drift and diffusion of one model, plus its structural flags.
///
/// The closures must be pure with respect to engine-visible state and safe
/// to call concurrently; the engine never shares a path state between
/// workers.
#[derive(Clone)]
pub struct CoefficientModel {
    dim_x: usize,
    dim_w: usize,
    memory: f64,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    pub time_homogeneous: bool,
    /// Set when the coefficients ignore the segment argument entirely.
    pub memoryless: bool,
    step_kind: StepKind,
}

impl CoefficientModel {
    /// `drift` fills a `dim_x` buffer, `diffusion` a row-major
    /// `dim_x * dim_w` buffer.
    pub fn new(
        dim_x: usize,
        dim_w: usize,
        memory: f64,
        drift: CoefficientFn,
        diffusion: CoefficientFn,
    ) -> Self {
        Self {
            dim_x,
            dim_w,
            memory,
            drift,
            diffusion,
            time_homogeneous: false,
            memoryless: false,
            step_kind: StepKind::EulerAdditive,
        }
    }

    /// Scalar model (`d = n = 1`) from plain closures.
    pub fn scalar(
        memory: f64,
        drift: impl Fn(f64, f64, &Segment) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64, &Segment) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            memory,
            Arc::new(move |t, x, seg, out| out[0] = drift(t, x[0], seg)),
            Arc::new(move |t, x, seg, out| out[0] = diffusion(t, x[0], seg)),
        )
    }

    pub fn with_time_homogeneous(mut self, yes: bool) -> Self {
        self.time_homogeneous = yes;
        self
    }

    pub fn with_memoryless(mut self, yes: bool) -> Self {
        self.memoryless = yes;
        self
    }

    /// Switch to the multiplicative log-space step. Only scalar models.
    pub fn with_log_euler(mut self) -> Self {
        assert!(
            self.dim_x == 1 && self.dim_w == 1,
            "log-space stepping is defined for scalar models only"
        );
        self.step_kind = StepKind::LogEuler;
        self
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn memory(&self) -> f64 {
        self.memory
    }

    pub fn step_kind(&self) -> StepKind {
        self.step_kind
    }

    #[inline]
    pub fn eval_drift(&self, t: f64, x: &[f64], seg: &Segment, out: &mut [f64]) {
        (self.drift)(t, x, seg, out)
    }

    #[inline]
    pub fn eval_diffusion(&self, t: f64, x: &[f64], seg: &Segment, out: &mut [f64]) {
        (self.diffusion)(t, x, seg, out)
    }
}

/// Step size plus the number of substeps per memory node.
///
/// `substeps_per_node * dt == delta` holds exactly because `dt` is snapped
/// to `delta / k` at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScheme {
    dt: f64,
    substeps_per_node: usize,
}

impl StepScheme {
    /// Scheme for a memoryless grid (`r = 0`), where no alignment applies.
    pub fn uniform(dt: f64) -> Result<Self, Error> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("step size dt={dt} must be positive")));
        }
        Ok(Self { dt, substeps_per_node: 1 })
    }

    /// Scheme aligned with a segment grid: the node spacing must be an
    /// integer multiple of the requested step, and the stored step is
    /// snapped to `delta / k`.
    pub fn for_grid(grid: SegmentGrid, dt: f64) -> Result<Self, Error> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("step size dt={dt} must be positive")));
        }
        if grid.m() == 0 {
            return Self::uniform(dt);
        }
        let delta = grid.delta();
        let k = (delta / dt).round();
        if k < 1.0 || (delta - k * dt).abs() > 1e-9 * delta.max(dt) {
            return Err(Error::GridMisaligned { what: "node spacing", value: delta, step: dt });
        }
        let k = k as usize;
        Ok(Self { dt: delta / k as f64, substeps_per_node: k })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps_per_node(&self) -> usize {
        self.substeps_per_node
    }
}

/// Number of steps tiling `[t0, horizon]`; errors when the span is not a
/// whole number of steps.
pub fn steps_between(t0: f64, horizon: f64, dt: f64) -> Result<u64, Error> {
    if horizon < t0 {
        return Err(Error::invalid(format!("horizon {horizon} precedes start {t0}")));
    }
    let span = horizon - t0;
    let n = (span / dt).round();
    if (span - n * dt).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::GridMisaligned { what: "time span", value: span, step: dt });
    }
    Ok(n as u64)
}

/// Current time, current value, and the history window, with the head of the
/// window equal to the current value after every step.
#[derive(Debug, Clone)]
pub struct PathState {
    pub t: f64,
    pub x: Vec<f64>,
    pub seg: Segment,
    /// Value committed at the last node boundary (the head is a live copy of
    /// `x` in between, and is restored to this before a roll).
    committed_head: Vec<f64>,
    substep: usize,
}

impl PathState {
    pub fn committed_head(&self) -> &[f64] {
        &self.committed_head
    }
}

/// State at `(t0, eta)`: the current value is the head of the initial
/// segment.
pub fn init_state(model: &CoefficientModel, eta: &Segment, t0: f64) -> Result<PathState, Error> {
    let r = eta.grid().r();
    if (r - model.memory()).abs() > 1e-12 * (1.0 + model.memory().abs()) {
        return Err(Error::invalid(format!(
            "segment memory {r} does not match model memory {}",
            model.memory()
        )));
    }
    if eta.dim() != model.dim_x() {
        return Err(Error::DimensionMismatch {
            what: "initial segment dimension",
            expected: model.dim_x(),
            got: eta.dim(),
        });
    }
    let x = eta.head().to_vec();
    Ok(PathState { t: t0, x: x.clone(), seg: eta.clone(), committed_head: x, substep: 0 })
}

/// Reusable per-path buffers so the hot loop never allocates.
pub struct StepScratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    new_x: Vec<f64>,
}

impl StepScratch {
    pub fn for_model(model: &CoefficientModel) -> Self {
        Self {
            drift: vec![0.0; model.dim_x()],
            diffusion: vec![0.0; model.dim_x() * model.dim_w()],
            new_x: vec![0.0; model.dim_x()],
        }
    }
}

/// One explicit step with the increment `dw` (already scaled by sqrt(dt)).
/// The segment rolls only when the substep counter crosses a node boundary,
/// committing the state at that instant.
pub fn euler_step(
    state: &mut PathState,
    model: &CoefficientModel,
    scheme: &StepScheme,
    dw: &[f64],
) -> Result<(), Error> {
    let mut scratch = StepScratch::for_model(model);
    euler_step_with(state, model, scheme, dw, &mut scratch)
}

pub fn euler_step_with(
    state: &mut PathState,
    model: &CoefficientModel,
    scheme: &StepScheme,
    dw: &[f64],
    scratch: &mut StepScratch,
) -> Result<(), Error> {
    let d = model.dim_x();
    let n = model.dim_w();
    if dw.len() != n {
        return Err(Error::DimensionMismatch { what: "increment", expected: n, got: dw.len() });
    }
    if dw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "increment", t: state.t, state: state.x.clone() });
    }
    let dt = scheme.dt();

    model.eval_drift(state.t, &state.x, &state.seg, &mut scratch.drift);
    model.eval_diffusion(state.t, &state.x, &state.seg, &mut scratch.diffusion);
    if scratch.drift.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "drift", t: state.t, state: state.x.clone() });
    }
    if scratch.diffusion.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "diffusion", t: state.t, state: state.x.clone() });
    }

    match model.step_kind() {
        StepKind::EulerAdditive => {
            for i in 0..d {
                let mut xi = state.x[i] + scratch.drift[i] * dt;
                for j in 0..n {
                    xi += scratch.diffusion[i * n + j] * dw[j];
                }
                scratch.new_x[i] = xi;
            }
        }
        StepKind::LogEuler => {
            let h = scratch.drift[0];
            let g = scratch.diffusion[0];
            let next = state.x[0] * ((h - 0.5 * g * g) * dt + g * dw[0]).exp();
            if !(next > 0.0) {
                return Err(Error::NonFinite {
                    what: "multiplicative step lost positivity",
                    t: state.t,
                    state: state.x.clone(),
                });
            }
            scratch.new_x[0] = next;
        }
    }
    if scratch.new_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "state update", t: state.t, state: state.x.clone() });
    }

    state.x.copy_from_slice(&scratch.new_x);
    state.t += dt;

    if state.seg.grid().m() == 0 {
        // Degenerate window: the single node is always the current value.
        state.seg.set_head(&state.x);
        state.committed_head.copy_from_slice(&state.x);
    } else {
        state.substep += 1;
        if state.substep == scheme.substeps_per_node() {
            // Node boundary: put the committed value back under the live
            // head, then roll, so node m-1 holds the previous node-instant
            // state and the new head is the state at this instant.
            state.seg.set_head(&state.committed_head);
            state.seg.roll_unchecked(&state.x);
            state.committed_head.copy_from_slice(&state.x);
            state.substep = 0;
        } else {
            state.seg.set_head(&state.x);
        }
    }
    Ok(())
}

/// Whether an observer wants the path to keep going.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

/// Per-step accumulator fed by [`simulate_path`] in registration order.
pub trait PathObserver {
    fn start(&mut self, _state: &PathState) -> Result<(), Error> {
        Ok(())
    }

    fn after_step(&mut self, step: u64, state: &PathState) -> Result<StepControl, Error>;
}

/// Drive a path from `(t0, eta)` to the horizon, feeding every observer
/// after each step. Stops early if an observer requests it; the state at
/// that instant is returned.
pub fn simulate_path(
    model: &CoefficientModel,
    eta: &Segment,
    t0: f64,
    horizon: f64,
    scheme: &StepScheme,
    stream: &NoiseStream,
    observers: &mut [&mut dyn PathObserver],
) -> Result<PathState, Error> {
    let n_steps = steps_between(t0, horizon, scheme.dt())?;
    let mut state = init_state(model, eta, t0)?;
    for obs in observers.iter_mut() {
        obs.start(&state)?;
    }
    let mut scratch = StepScratch::for_model(model);
    let mut raw = vec![0.0; model.dim_w()];
    let mut dw = vec![0.0; model.dim_w()];
    let sqrt_dt = scheme.dt().sqrt();
    for step in 0..n_steps {
        stream.gaussian_increments(step, &mut raw);
        for (w, z) in dw.iter_mut().zip(raw.iter()) {
            *w = sqrt_dt * z;
        }
        euler_step_with(&mut state, model, scheme, &dw, &mut scratch)?;
        for obs in observers.iter_mut() {
            if obs.after_step(step, &state)? == StepControl::Stop {
                return Ok(state);
            }
        }
    }
    Ok(state)
}
