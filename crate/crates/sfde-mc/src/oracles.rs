//! Independent closed-form and brute-force references.
//!
//! Everything here is pure, deterministic, and shares no numerics with the
//! path engine beyond the standard normal CDF. The Monte Carlo estimators
//! are validated against these, never the other way around.

use crate::error::Error;

/// A reference value, how it was obtained, and an analytic truncation or
/// step bound when one is available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub method: &'static str,
    pub error_bound: Option<f64>,
}

impl OracleResult {
    fn exact(value: f64, method: &'static str) -> Self {
        Self { value, method, error_bound: None }
    }
}

/// Standard normal CDF via Hart's double-precision rational approximation
/// (the Graeme West arrangement). Absolute error is at the 1e-15 level,
/// far inside the 1e-7 budget the comparisons need.
pub fn normal_cdf(x: f64) -> f64 {
    let xabs = x.abs();
    let c = if xabs > 37.0 {
        0.0
    } else {
        let e = (-xabs * xabs / 2.0).exp();
        if xabs < 7.071067811865475 {
            let mut num = 3.52624965998911e-2 * xabs + 0.700383064443688;
            num = num * xabs + 6.37396220353165;
            num = num * xabs + 33.912866078383;
            num = num * xabs + 112.079291497871;
            num = num * xabs + 221.213596169931;
            num = num * xabs + 220.206867912376;
            let mut den = 8.83883476483184e-2 * xabs + 1.75566716318264;
            den = den * xabs + 16.064177579207;
            den = den * xabs + 86.7807322029461;
            den = den * xabs + 296.564248779674;
            den = den * xabs + 637.333633378831;
            den = den * xabs + 793.826512519948;
            den = den * xabs + 440.413735824752;
            e * num / den
        } else {
            let mut build = xabs + 0.65;
            build = xabs + 4.0 / build;
            build = xabs + 3.0 / build;
            build = xabs + 2.0 / build;
            build = xabs + 1.0 / build;
            e / build / 2.506628274631
        }
    };
    if x > 0.0 {
        1.0 - c
    } else {
        c
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Black-Scholes European call on a lognormal underlying; the zero-memory
/// reduction target of the hereditary market model. Degenerate inputs
/// (zero volatility or strike) fall back to the deterministic limits.
pub fn bs_call(s0: f64, strike: f64, rate: f64, sigma: f64, expiry: f64) -> Result<OracleResult, Error> {
    if !(s0 > 0.0) || !(expiry >= 0.0) || sigma < 0.0 || strike < 0.0 {
        return Err(Error::invalid(format!(
            "bs_call needs s0 > 0, strike/sigma >= 0, expiry >= 0 (got s0={s0}, K={strike}, sigma={sigma}, T={expiry})"
        )));
    }
    let disc = (-rate * expiry).exp();
    if strike == 0.0 {
        return Ok(OracleResult::exact(s0, "bs-closed-form"));
    }
    let vol = sigma * expiry.sqrt();
    if vol == 0.0 {
        return Ok(OracleResult::exact((s0 - strike * disc).max(0.0), "bs-closed-form"));
    }
    let d1 = ((s0 / strike).ln() + (rate + 0.5 * sigma * sigma) * expiry) / vol;
    let d2 = d1 - vol;
    let value = s0 * normal_cdf(d1) - strike * disc * normal_cdf(d2);
    Ok(OracleResult { value, method: "bs-closed-form", error_bound: Some(1e-12 * s0) })
}

/// Probability that a standard Brownian motion started at the center of
/// `(-L, L)` has not left the interval by time `t`, via the eigenfunction
/// series
///
/// ```text
/// q(t) = (4/pi) sum_k (-1)^k / (2k+1) exp(-(2k+1)^2 pi^2 t / (8 L^2))
/// ```
///
/// truncated once the next term drops below 1e-13 (alternating series, so
/// the omitted tail is bounded by that term).
pub fn brownian_exit_survival(t: f64, half_width: f64) -> Result<OracleResult, Error> {
    if !(half_width > 0.0) || t < 0.0 || !t.is_finite() {
        return Err(Error::invalid(format!(
            "brownian_exit_survival needs t >= 0, L > 0 (got t={t}, L={half_width})"
        )));
    }
    if t == 0.0 {
        return Ok(OracleResult { value: 1.0, method: "exit-series", error_bound: Some(0.0) });
    }
    let a = std::f64::consts::PI.powi(2) * t / (8.0 * half_width * half_width);
    let mut sum = 0.0;
    let mut bound = 1e-13;
    let mut sign = 1.0;
    for k in 0..2_000_000u64 {
        let odd = (2 * k + 1) as f64;
        let term = (-odd * odd * a).exp() / odd;
        sum += sign * term;
        sign = -sign;
        let next_odd = (2 * k + 3) as f64;
        let next = (-next_odd * next_odd * a).exp() / next_odd;
        if next < 1e-13 {
            bound = next.max(1e-16);
            break;
        }
    }
    let value = (4.0 / std::f64::consts::PI) * sum;
    Ok(OracleResult {
        value: value.clamp(0.0, 1.0),
        method: "exit-series",
        error_bound: Some(bound),
    })
}

/// Mean exit time of standard Brownian motion from `(-L, L)` started at
/// `x0`: the classical `L^2 - x0^2`.
pub fn brownian_mean_exit_time(x0: f64, half_width: f64) -> Result<OracleResult, Error> {
    if !(half_width > 0.0) || x0.abs() > half_width {
        return Err(Error::invalid(format!(
            "brownian_mean_exit_time needs |x0| <= L (got x0={x0}, L={half_width})"
        )));
    }
    Ok(OracleResult::exact(half_width * half_width - x0 * x0, "poisson-closed-form"))
}

/// First-hitting-time CDF of the barrier by `mu t + sigma W(t)`, the
/// inverse-Gaussian law in its two-normal-CDF form.
pub fn inverse_gaussian_cdf(
    t: f64,
    mu_drift: f64,
    sigma: f64,
    barrier: f64,
) -> Result<OracleResult, Error> {
    if !(sigma > 0.0) || !(barrier > 0.0) {
        return Err(Error::invalid(format!(
            "inverse_gaussian_cdf needs sigma > 0 and barrier > 0 (got sigma={sigma}, b={barrier})"
        )));
    }
    if t <= 0.0 {
        return Ok(OracleResult::exact(0.0, "ig-closed-form"));
    }
    let sq = sigma * t.sqrt();
    let a = normal_cdf((mu_drift * t - barrier) / sq);
    // exp(2 mu b / sigma^2) can overflow while the matching Phi underflows;
    // combine in log space when the exponent is large.
    let log_scale = 2.0 * mu_drift * barrier / (sigma * sigma);
    let phi_arg = -(mu_drift * t + barrier) / sq;
    let tail = normal_cdf(phi_arg);
    let b = if tail == 0.0 {
        0.0
    } else {
        (log_scale + tail.ln()).exp()
    };
    Ok(OracleResult {
        value: (a + b).clamp(0.0, 1.0),
        method: "ig-closed-form",
        error_bound: Some(1e-12),
    })
}

/// Deterministic linear delay dynamics `x'(t) = a x(t) + b x(t - r)` with a
/// constant history, solved interval by interval.
///
/// - `b = 0`: plain exponential, exact.
/// - `a = 0`: the solution is polynomial on each delay interval and the
///   recursion is carried exactly on coefficients.
/// - otherwise: fourth-order Runge-Kutta with the delayed value read from
///   dense history via cubic interpolation; the reported bound is the
///   difference against a half-step rerun.
pub fn method_of_steps(
    a: f64,
    b: f64,
    delay: f64,
    eta0: f64,
    t_end: f64,
) -> Result<OracleResult, Error> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::invalid(format!("horizon {t_end} must be finite and >= 0")));
    }
    if t_end == 0.0 {
        return Ok(OracleResult::exact(eta0, "method-of-steps"));
    }
    if b == 0.0 {
        return Ok(OracleResult::exact(eta0 * (a * t_end).exp(), "method-of-steps"));
    }
    if !(delay > 0.0) {
        // No memory: x' = (a + b) x.
        return Ok(OracleResult::exact(eta0 * ((a + b) * t_end).exp(), "method-of-steps"));
    }
    if a == 0.0 {
        return Ok(OracleResult {
            value: steps_polynomial(b, delay, eta0, t_end),
            method: "method-of-steps",
            error_bound: Some(1e-13 * (1.0 + eta0.abs())),
        });
    }
    let coarse = steps_rk4(a, b, delay, eta0, t_end, 4096);
    let fine = steps_rk4(a, b, delay, eta0, t_end, 8192);
    Ok(OracleResult {
        value: fine,
        method: "method-of-steps-rk4",
        error_bound: Some((coarse - fine).abs().max(1e-13)),
    })
}

/// Exact polynomial recursion for `x' = b x(t - r)`, constant history:
/// on each delay interval the solution is a polynomial, and integrating the
/// previous interval's polynomial gives the next one.
fn steps_polynomial(b: f64, r: f64, eta0: f64, t_end: f64) -> f64 {
    // Coefficients of x on the current interval, in tau = t - (n-1) r.
    let mut coeffs = vec![eta0, b * eta0]; // interval [0, r]
    let n_intervals = (t_end / r).ceil().max(1.0) as usize;
    for _ in 1..n_intervals {
        let at_end = eval_poly(&coeffs, r);
        let mut next = Vec::with_capacity(coeffs.len() + 1);
        next.push(at_end);
        for (j, c) in coeffs.iter().enumerate() {
            next.push(b * c / (j as f64 + 1.0));
        }
        coeffs = next;
    }
    let tau = t_end - (n_intervals as f64 - 1.0) * r;
    eval_poly(&coeffs, tau)
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

fn steps_rk4(a: f64, b: f64, r: f64, eta0: f64, t_end: f64, nodes_per_delay: usize) -> f64 {
    let h = r / nodes_per_delay as f64;
    let m = nodes_per_delay;
    let n_full = (t_end / h).floor() as usize;
    // hist[i] is x at time -r + i h; the initial window is constant.
    let mut hist = Vec::with_capacity(m + n_full + 2);
    hist.resize(m + 1, eta0);

    let hist_at = |hist: &[f64], time: f64| -> f64 {
        let pos = (time + r) / h;
        if pos <= 0.0 {
            return hist[0];
        }
        let last = (hist.len() - 1) as f64;
        if pos >= last {
            return *hist.last().unwrap();
        }
        let j = pos.floor() as usize;
        let u = pos - j as f64;
        if j == 0 || j + 2 >= hist.len() {
            return hist[j] + u * (hist[j + 1] - hist[j]);
        }
        // 4-point Lagrange (cubic) on j-1..j+2.
        let (p0, p1, p2, p3) = (hist[j - 1], hist[j], hist[j + 1], hist[j + 2]);
        let c0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
        let c1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
        let c2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
        let c3 = (u + 1.0) * u * (u - 1.0) / 6.0;
        c0 * p0 + c1 * p1 + c2 * p2 + c3 * p3
    };

    let mut x = eta0;
    let mut t = 0.0;
    let mut rk_step = |x: f64, t: f64, h: f64, hist: &[f64]| -> f64 {
        let d0 = hist_at(hist, t - r);
        let dh = hist_at(hist, t + 0.5 * h - r);
        let d1 = hist_at(hist, t + h - r);
        let k1 = a * x + b * d0;
        let k2 = a * (x + 0.5 * h * k1) + b * dh;
        let k3 = a * (x + 0.5 * h * k2) + b * dh;
        let k4 = a * (x + h * k3) + b * d1;
        x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    for _ in 0..n_full {
        x = rk_step(x, t, h, &hist);
        t += h;
        hist.push(x);
    }
    let rem = t_end - t;
    if rem > 1e-14 * t_end.max(1.0) {
        x = rk_step(x, t, rem, &hist);
    }
    x
}

/// Stationary-approach variance of an Ornstein-Uhlenbeck process:
/// `sigma^2 (1 - exp(-2 theta T)) / (2 theta)`.
pub fn ou_variance(t_end: f64, theta_rate: f64, sigma: f64) -> Result<OracleResult, Error> {
    if !(theta_rate > 0.0) {
        return Err(Error::invalid(format!("ou_variance needs theta > 0 (got {theta_rate})")));
    }
    let value = sigma * sigma * (1.0 - (-2.0 * theta_rate * t_end).exp()) / (2.0 * theta_rate);
    Ok(OracleResult::exact(value, "ou-closed-form"))
}
