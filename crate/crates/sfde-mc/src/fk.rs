//! Weighted terminal-value Monte Carlo: expectations of a terminal
//! functional under an exponential killing/growth weight
//!
//! ```text
//! E[ f(X_T, X_T(0)) * exp(sign * integral_t^T c(s, X_s, X_s(0)) ds) ]
//! ```
//!
//! together with the forward (time-homogeneous) variant and a nested
//! tower-property consistency check. The rate integral is accumulated by
//! trapezoid along the path as an observer on [`simulate_path`], samples are
//! reduced in ascending path order with compensated summation, and streams
//! are keyed by path index — so a given configuration yields bit-identical
//! estimates at any worker count.

use std::sync::Arc;
use std::time::Instant;

use crate::engine::{
    simulate_path, CoefficientModel, PathObserver, PathState, StepControl, StepScheme,
};
use crate::error::Error;
use crate::exec::fold_paths;
use crate::rng::{derive_seed, NoiseStream};
use crate::segment::{QuasiTameFunctional, Segment};
use crate::stats::{CompensatedSum, MomentAccumulator};

/// Sign of the exponent in the path weight. The killing form `exp(-int c)`
/// and the growth form `exp(+int c)` both occur; making the sign explicit
/// avoids silent convention bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentSign {
    Plus,
    Minus,
}

impl ExponentSign {
    #[inline]
    pub fn factor(self) -> f64 {
        match self {
            ExponentSign::Plus => 1.0,
            ExponentSign::Minus => -1.0,
        }
    }
}

type RateFn = Arc<dyn Fn(f64, &[f64], &Segment) -> f64 + Send + Sync>;

/// Killing/growth rate with its declared sup-norm bound. Every sampled rate
/// is checked against the bound at runtime; exceeding it aborts the batch.
#[derive(Clone)]
pub struct KillingSpec {
    rate: RateFn,
    pub sign: ExponentSign,
    pub c_max: f64,
}

impl KillingSpec {
    pub fn new(
        sign: ExponentSign,
        c_max: f64,
        rate: impl Fn(f64, &[f64], &Segment) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { rate: Arc::new(rate), sign, c_max }
    }

    /// Zero rate: unit weight.
    pub fn none() -> Self {
        Self::new(ExponentSign::Minus, 0.0, |_, _, _| 0.0)
    }

    /// Constant rate.
    pub fn constant(sign: ExponentSign, kappa: f64) -> Self {
        Self::new(sign, kappa.abs(), move |_, _, _| kappa)
    }

    /// Deterministic time-dependent rate.
    pub fn time_dependent(
        sign: ExponentSign,
        c_max: f64,
        rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(sign, c_max, move |t, _, _| rate(t))
    }

    #[inline]
    pub fn sample(&self, t: f64, x: &[f64], seg: &Segment) -> Result<f64, Error> {
        let c = (self.rate)(t, x, seg);
        if !c.is_finite() {
            return Err(Error::NonFinite { what: "killing rate", t, state: x.to_vec() });
        }
        if c.abs() > self.c_max + 1e-12 * (1.0 + self.c_max) {
            return Err(Error::RateBoundExceeded { rate: c, bound: self.c_max, t });
        }
        Ok(c)
    }
}

type PayoffFn = Arc<dyn Fn(&Segment, &[f64]) -> f64 + Send + Sync>;

/// Terminal payoff `f(segment, endpoint)`.
#[derive(Clone)]
pub struct TerminalFunctional {
    f: PayoffFn,
}

impl TerminalFunctional {
    pub fn new(f: impl Fn(&Segment, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    /// Function of the endpoint alone.
    pub fn endpoint(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |_, x| f(x))
    }

    pub fn constant(v: f64) -> Self {
        Self::new(move |_, _| v)
    }

    /// Payoff given by a quasi-tame functional of the terminal segment.
    pub fn quasi_tame(qt: QuasiTameFunctional) -> Self {
        let qt = Arc::new(qt);
        Self::new(move |seg, _| qt.eval(seg).expect("quasi-tame payoff evaluation"))
    }

    #[inline]
    pub fn eval(&self, seg: &Segment, x: &[f64]) -> Result<f64, Error> {
        let v = (self.f)(seg, x);
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "terminal payoff", t: f64::NAN, state: x.to_vec() });
        }
        Ok(v)
    }
}

/// Monte Carlo batch configuration.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_paths: u64,
    pub seed: u64,
    pub scheme: StepScheme,
    pub antithetic: bool,
    /// Worker hint for the batch executor; 0 = library default.
    pub workers: usize,
}

impl McConfig {
    pub fn new(n_paths: u64, seed: u64, scheme: StepScheme) -> Self {
        Self { n_paths, seed, scheme, antithetic: false, workers: 0 }
    }

    pub fn with_antithetic(mut self, yes: bool) -> Self {
        self.antithetic = yes;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_paths < 2 {
            return Err(Error::invalid("n_paths must be >= 2 (the stderr needs a variance)"));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::invalid("antithetic sampling requires an even path count"));
        }
        Ok(())
    }

    /// Stream for one path index: under antithetic sampling, odd indices
    /// mirror the increments of the preceding even index.
    pub fn stream_for(&self, path: u64) -> NoiseStream {
        if self.antithetic {
            let base = path / 2;
            if path % 2 == 1 {
                NoiseStream::mirrored(self.seed, base)
            } else {
                NoiseStream::new(self.seed, base)
            }
        } else {
            NoiseStream::new(self.seed, path)
        }
    }
}

/// Mean, standard error and 95% interval of a Monte Carlo batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
    /// Wall-clock seconds; informational, never part of reproducible output.
    pub wall_secs: f64,
}

impl McEstimate {
    pub(crate) fn from_moments(m: &MomentAccumulator, wall_secs: f64) -> Self {
        let mean = m.mean();
        let stderr = m.stderr();
        Self {
            mean,
            stderr,
            ci_lo: mean - 1.96 * stderr,
            ci_hi: mean + 1.96 * stderr,
            n: m.count(),
            wall_secs,
        }
    }
}

/// Trapezoid accumulator for the rate integral along a path; an observer on
/// [`simulate_path`]. Compensated so constant rates integrate exactly.
pub(crate) struct RateObserver<'a> {
    kill: &'a KillingSpec,
    dt: f64,
    prev: f64,
    acc: CompensatedSum,
}

impl<'a> RateObserver<'a> {
    pub(crate) fn new(kill: &'a KillingSpec, dt: f64) -> Self {
        Self { kill, dt, prev: 0.0, acc: CompensatedSum::new() }
    }

    pub(crate) fn integral(&self) -> f64 {
        self.acc.total()
    }

    #[inline]
    pub(crate) fn observe_start(&mut self, state: &PathState) -> Result<(), Error> {
        self.prev = self.kill.sample(state.t, &state.x, &state.seg)?;
        Ok(())
    }

    #[inline]
    pub(crate) fn observe_step(&mut self, state: &PathState) -> Result<(), Error> {
        let c = self.kill.sample(state.t, &state.x, &state.seg)?;
        self.acc.add(0.5 * (self.prev + c) * self.dt);
        self.prev = c;
        Ok(())
    }
}

impl PathObserver for RateObserver<'_> {
    fn start(&mut self, state: &PathState) -> Result<(), Error> {
        self.observe_start(state)
    }

    fn after_step(&mut self, _step: u64, state: &PathState) -> Result<StepControl, Error> {
        self.observe_step(state)?;
        Ok(StepControl::Continue)
    }
}

/// One weighted path: final state plus the accumulated weight
/// `exp(sign * integral of c)`.
pub(crate) fn weighted_path(
    model: &CoefficientModel,
    eta: &Segment,
    t0: f64,
    horizon: f64,
    scheme: &StepScheme,
    stream: &NoiseStream,
    kill: &KillingSpec,
) -> Result<(PathState, f64), Error> {
    let mut rate = RateObserver::new(kill, scheme.dt());
    let end = simulate_path(model, eta, t0, horizon, scheme, stream, &mut [&mut rate])?;
    let integral = rate.integral();
    debug_assert!(
        integral.abs() <= kill.c_max * (horizon - t0) * (1.0 + 1e-9) + 1e-12,
        "rate integral escaped its bound"
    );
    Ok((end, (kill.sign.factor() * integral).exp()))
}

/// Estimate `u(t, eta, x) = E[f(X_T, X_T(0)) exp(sign int_t^T c ds)]` by
/// simulating `cfg.n_paths` weighted paths from `(t, eta)`.
pub fn fk_terminal(
    model: &CoefficientModel,
    f: &TerminalFunctional,
    kill: &KillingSpec,
    t: f64,
    eta: &Segment,
    horizon: f64,
    cfg: &McConfig,
) -> Result<McEstimate, Error> {
    cfg.validate()?;
    let started = Instant::now();
    let moments = fold_paths(
        cfg.n_paths,
        cfg.workers,
        MomentAccumulator::new,
        |acc, i| {
            let stream = cfg.stream_for(i);
            let (end, weight) = weighted_path(model, eta, t, horizon, &cfg.scheme, &stream, kill)?;
            let payoff = f.eval(&end.seg, &end.x)?;
            acc.push(payoff * weight);
            Ok(())
        },
        |acc, other| acc.merge(other),
    )?;
    Ok(McEstimate::from_moments(&moments, started.elapsed().as_secs_f64()))
}

/// Time-inhomogeneous variant: identical machinery with the rate sampled at
/// every step time. A rate that happens to be constant in time reproduces
/// [`fk_terminal`] bit for bit.
pub fn fk_terminal_time_dep(
    model: &CoefficientModel,
    f: &TerminalFunctional,
    kill: &KillingSpec,
    t: f64,
    eta: &Segment,
    horizon: f64,
    cfg: &McConfig,
) -> Result<McEstimate, Error> {
    fk_terminal(model, f, kill, t, eta, horizon, cfg)
}

/// Forward form for time-homogeneous coefficients:
/// `u(t, eta, x) = E_(0,eta,x)[f(X_t, X_t(0))]`.
pub fn fk_forward(
    model: &CoefficientModel,
    f: &TerminalFunctional,
    t: f64,
    eta: &Segment,
    cfg: &McConfig,
) -> Result<McEstimate, Error> {
    if !model.time_homogeneous {
        return Err(Error::invalid(
            "fk_forward needs a model flagged time-homogeneous",
        ));
    }
    fk_terminal(model, f, &KillingSpec::none(), 0.0, eta, t, cfg)
}

/// Result of the nested Markov-consistency check.
#[derive(Debug, Clone, Copy)]
pub struct TowerReport {
    /// Direct estimate over `[t, T]`.
    pub outer: McEstimate,
    /// Nested estimate: weight to `s`, then an inner batch from `(s, X_s)`.
    pub nested: McEstimate,
    pub residual: f64,
    pub pooled_stderr: f64,
}

/// Check `u(t) = E[u(s, X_s, X_s(0)) exp(sign int_t^s c)]` by nested Monte
/// Carlo: each outer path carries its own inner batch with sub-streams keyed
/// by `(seed, outer_path, inner_path)`. Parallelism is over outer paths
/// only. At `s = T` the inner batch collapses to the terminal payoff and the
/// residual vanishes exactly.
pub fn tower_check(
    model: &CoefficientModel,
    f: &TerminalFunctional,
    kill: &KillingSpec,
    t: f64,
    s: f64,
    horizon: f64,
    eta: &Segment,
    cfg_outer: &McConfig,
    cfg_inner: &McConfig,
) -> Result<TowerReport, Error> {
    if !(t <= s && s <= horizon) {
        return Err(Error::invalid(format!(
            "tower_check needs t <= s <= T (got t={t}, s={s}, T={horizon})"
        )));
    }
    cfg_outer.validate()?;
    cfg_inner.validate()?;

    let outer = fk_terminal(model, f, kill, t, eta, horizon, cfg_outer)?;

    let tower_seed = derive_seed(cfg_outer.seed, 0x746f_7765_72);
    let started = Instant::now();
    let moments = fold_paths(
        cfg_outer.n_paths,
        cfg_outer.workers,
        MomentAccumulator::new,
        |acc, j| {
            let stream = cfg_outer.stream_for(j);
            let (mid, weight) = weighted_path(model, eta, t, s, &cfg_outer.scheme, &stream, kill)?;
            // Inner batch from (s, X_s), sequential by design.
            let inner_seed = derive_seed(tower_seed, j);
            let inner_cfg = McConfig { seed: inner_seed, ..cfg_inner.clone() };
            let mut inner = MomentAccumulator::new();
            for i in 0..cfg_inner.n_paths {
                let istream = inner_cfg.stream_for(i);
                let (end, iw) =
                    weighted_path(model, &mid.seg, s, horizon, &cfg_inner.scheme, &istream, kill)?;
                let payoff = f.eval(&end.seg, &end.x)?;
                inner.push(payoff * iw);
            }
            acc.push(inner.mean() * weight);
            Ok(())
        },
        |acc, other| acc.merge(other),
    )?;
    let nested = McEstimate::from_moments(&moments, started.elapsed().as_secs_f64());

    let residual = outer.mean - nested.mean;
    let pooled_stderr = (outer.stderr * outer.stderr + nested.stderr * nested.stderr).sqrt();
    Ok(TowerReport { outer, nested, residual, pooled_stderr })
}
