//! Concrete coefficient models: the linear delay test family, the
//! hereditary market, and the run-and-tumble bacterium.

use std::sync::Arc;

use crate::boundary::{exit_distribution, DomainSpec, ExitCurve};
use crate::engine::CoefficientModel;
use crate::error::Error;
use crate::fk::{fk_terminal, ExponentSign, KillingSpec, McConfig, McEstimate, TerminalFunctional};
use crate::segment::{Segment, SegmentComponent, SegmentGrid, SegmentInit};

/// Scalar linear delay dynamics
/// `dX = (a X(t) + b X(t - r)) dt + sigma0 dW`.
///
/// The canonical test family: deterministic for `sigma0 = 0` (checkable
/// against interval-by-interval integration), Ornstein-Uhlenbeck for
/// `b = 0, a < 0`.
#[derive(Debug, Clone, Copy)]
pub struct LinearSddeParams {
    pub a: f64,
    pub b: f64,
    pub sigma0: f64,
    pub delay: f64,
}

impl LinearSddeParams {
    pub fn validate(&self) -> Result<(), Error> {
        if ![self.a, self.b, self.sigma0, self.delay].iter().all(|v| v.is_finite())
            || self.delay < 0.0
        {
            return Err(Error::invalid("linear delay parameters must be finite, delay >= 0"));
        }
        Ok(())
    }
}

pub fn build_linear_sdde(p: &LinearSddeParams) -> Result<CoefficientModel, Error> {
    p.validate()?;
    let LinearSddeParams { a, b, sigma0, delay } = *p;
    let drift = move |_t: f64, x: f64, seg: &Segment| {
        if delay > 0.0 {
            a * x + b * seg.value_at_scalar(-delay)
        } else {
            (a + b) * x
        }
    };
    Ok(CoefficientModel::scalar(delay, drift, move |_, _, _| sigma0)
        .with_time_homogeneous(true)
        .with_memoryless(b == 0.0 || delay == 0.0))
}

type RateCurve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type SegFunctional = Arc<dyn Fn(&Segment) -> f64 + Send + Sync>;

/// Hereditary market: relative price dynamics
/// `dS / S = f(S_t) dt + g(S_t) dW` with a deterministic short rate, an
/// initial price history, and a payoff at expiry.
#[derive(Clone)]
pub struct MarketModel {
    /// Deterministic short rate `r(t)`.
    pub rate: RateCurve,
    /// Declared bound on `|r|`, used by the discount weight check.
    pub rate_bound: f64,
    /// Relative volatility functional of the price history.
    pub vol: SegFunctional,
    /// Relative drift functional of the price history. `f = r` is the
    /// risk-neutral choice under which the discounted price is a martingale.
    pub drift: SegFunctional,
    /// Initial price segment, strictly positive.
    pub initial: Segment,
    /// Payoff at expiry; sees both the terminal segment and the endpoint.
    pub payoff: TerminalFunctional,
    pub expiry: f64,
}

impl MarketModel {
    /// Constant-coefficient market: the memoryless geometric case.
    pub fn constant_coefficients(
        mu: f64,
        sigma: f64,
        rate: f64,
        s0: f64,
        payoff: TerminalFunctional,
        expiry: f64,
    ) -> Result<Self, Error> {
        Ok(Self {
            rate: Arc::new(move |_| rate),
            rate_bound: rate.abs(),
            vol: Arc::new(move |_| sigma),
            drift: Arc::new(move |_| mu),
            initial: Segment::constant(SegmentGrid::zero(), &[s0])?,
            payoff,
            expiry,
        })
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.initial.dim() != 1 {
            return Err(Error::invalid("price history must be scalar"));
        }
        if self.initial.iter_nodes().any(|(_, v)| !(v[0] > 0.0)) {
            return Err(Error::invalid("initial price segment must be strictly positive"));
        }
        if !(self.expiry >= 0.0) {
            return Err(Error::invalid("expiry must be nonnegative"));
        }
        Ok(())
    }
}

/// Multiplicative model for the market: log-space stepping
/// `S' = S exp((f - g^2/2) dt + g dW)` with the functionals frozen at the
/// step start. Positive by construction and exact for constant
/// coefficients.
pub fn build_market(m: &MarketModel) -> Result<CoefficientModel, Error> {
    m.validate()?;
    let vol = Arc::clone(&m.vol);
    let drift = Arc::clone(&m.drift);
    let r = m.initial.grid().r();
    Ok(CoefficientModel::scalar(
        r,
        move |_t, _x, seg| drift(seg),
        move |_t, _x, seg| vol(seg),
    )
    .with_time_homogeneous(true)
    .with_memoryless(r == 0.0)
    .with_log_euler())
}

/// Discounted expected payoff at valuation time `t`:
/// the terminal representation with rate `r(s)`, decaying sign.
pub fn price_european(m: &MarketModel, t: f64, cfg: &McConfig) -> Result<McEstimate, Error> {
    if t > m.expiry {
        return Err(Error::invalid(format!(
            "valuation time {t} past expiry {}",
            m.expiry
        )));
    }
    let model = build_market(m)?;
    let rate = Arc::clone(&m.rate);
    let kill = KillingSpec::new(ExponentSign::Minus, m.rate_bound, move |s, _, _| rate(s));
    fk_terminal(&model, &m.payoff, &kill, t, &m.initial, m.expiry, cfg)
}

/// Vanilla payoff builders for the market model.
pub fn call_payoff(strike: f64) -> TerminalFunctional {
    TerminalFunctional::endpoint(move |x| (x[0] - strike).max(0.0))
}

pub fn put_payoff(strike: f64) -> TerminalFunctional {
    TerminalFunctional::endpoint(move |x| (strike - x[0]).max(0.0))
}

pub fn digital_payoff(strike: f64) -> TerminalFunctional {
    TerminalFunctional::endpoint(move |x| if x[0] > strike { 1.0 } else { 0.0 })
}

type InternalCoefficient =
    Arc<dyn Fn(f64, f64, SegmentComponent<'_>, SegmentComponent<'_>, &[f64]) -> f64 + Send + Sync>;
type SensingRhs = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
type AttractantField = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Run-and-tumble bacterium up to its first tumble.
///
/// The internal drive is a scalar diffusion whose drift and noise may read
/// the histories of both the sensing state and the drive itself; the tumble
/// fires when the drive hits the threshold. Between tumbles the swim
/// direction is constant, so the position is the deterministic ray
/// `x0 + t * speed * theta` and the attractant is sampled along it.
#[derive(Clone)]
pub struct EcoliModel {
    /// Drive drift `lambda(t, zeta, zeta_history, drive_history, theta)`.
    pub internal_drift: InternalCoefficient,
    /// Drive noise, same signature.
    pub internal_noise: InternalCoefficient,
    /// Explicit sensing dynamics `d zeta/dt = F(c_value, theta, zeta)`.
    /// (The implicit form with `d zeta/dt` inside `F` is read as this
    /// explicit right-hand side.)
    pub sensing_rhs: SensingRhs,
    /// Attractant concentration `c(x, t)`.
    pub attractant: AttractantField,
    pub speed: f64,
    /// Tumble threshold for the drive.
    pub threshold: f64,
    /// Initial histories. Only the drive and sensing histories influence the
    /// first run; direction and position enter through their current values.
    pub init_sensing: Segment,
    pub init_drive: Segment,
    pub init_direction: Segment,
    pub init_position: Segment,
}

impl EcoliModel {
    pub fn validate(&self) -> Result<(), Error> {
        if self.init_sensing.dim() != 1 || self.init_drive.dim() != 1 {
            return Err(Error::invalid("sensing and drive histories must be scalar"));
        }
        if self.init_sensing.grid() != self.init_drive.grid() {
            return Err(Error::invalid("sensing and drive histories must share a grid"));
        }
        if self.init_direction.dim() != self.init_position.dim() {
            return Err(Error::invalid("direction and position dimensions differ"));
        }
        if !(self.speed >= 0.0) {
            return Err(Error::invalid("speed must be nonnegative"));
        }
        Ok(())
    }

    /// Position along the first run: exactly linear in time.
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let x0 = self.init_position.head();
        let theta = self.init_direction.head();
        x0.iter().zip(theta).map(|(x, th)| x + t * self.speed * th).collect()
    }
}

/// Composite model over the stacked state `(zeta, drive)` plus the threshold
/// domain on the drive component and the stacked initial segment.
pub fn build_ecoli(e: &EcoliModel) -> Result<(CoefficientModel, DomainSpec, Segment), Error> {
    e.validate()?;
    let grid = e.init_drive.grid();
    let nodes: Vec<Vec<f64>> = (0..grid.nodes())
        .map(|j| vec![e.init_sensing.node(j)[0], e.init_drive.node(j)[0]])
        .collect();
    let stacked = Segment::new(grid, 2, SegmentInit::Table(&nodes))?;

    let theta: Vec<f64> = e.init_direction.head().to_vec();
    let x0: Vec<f64> = e.init_position.head().to_vec();
    let speed = e.speed;
    let attractant = Arc::clone(&e.attractant);
    let sensing = Arc::clone(&e.sensing_rhs);
    let drive_drift = Arc::clone(&e.internal_drift);
    let drive_noise = Arc::clone(&e.internal_noise);

    let theta_d = theta.clone();
    let drift = move |t: f64, x: &[f64], seg: &Segment, out: &mut [f64]| {
        let pos: Vec<f64> =
            x0.iter().zip(&theta_d).map(|(p, th)| p + t * speed * th).collect();
        let c_here = attractant(&pos, t);
        out[0] = sensing(c_here, &theta_d, x[0]);
        out[1] = drive_drift(t, x[0], seg.component(0), seg.component(1), &theta_d);
    };
    let theta_n = theta;
    let noise = move |t: f64, x: &[f64], seg: &Segment, out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = drive_noise(t, x[0], seg.component(0), seg.component(1), &theta_n);
    };

    let model = CoefficientModel::new(2, 1, grid.r(), Arc::new(drift), Arc::new(noise));
    let dom = DomainSpec::component_below(2, 1, e.threshold);
    Ok((model, dom, stacked))
}

/// Distribution of the first run length: the survival curve of the drive
/// below its threshold.
pub fn run_length_distribution(
    e: &EcoliModel,
    time_grid: &[f64],
    cfg: &McConfig,
) -> Result<ExitCurve, Error> {
    let (model, dom, init) = build_ecoli(e)?;
    exit_distribution(&model, &dom, &init, time_grid, cfg)
}

/// Drive-only bacterium with constant drift and noise and no sensing
/// coupling; the drifted-Brownian reference case for hitting-time checks.
pub fn ecoli_drifted_brownian(mu: f64, sigma: f64, threshold: f64, drive0: f64) -> EcoliModel {
    let point = SegmentGrid::zero();
    EcoliModel {
        internal_drift: Arc::new(move |_, _, _, _, _| mu),
        internal_noise: Arc::new(move |_, _, _, _, _| sigma),
        sensing_rhs: Arc::new(|_, _, _| 0.0),
        attractant: Arc::new(|_, _| 0.0),
        speed: 1.0,
        threshold,
        init_sensing: Segment::constant(point, &[0.0]).expect("scalar segment"),
        init_drive: Segment::constant(point, &[drive0]).expect("scalar segment"),
        init_direction: Segment::constant(point, &[1.0]).expect("scalar segment"),
        init_position: Segment::constant(point, &[0.0]).expect("scalar segment"),
    }
}
