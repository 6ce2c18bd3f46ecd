//! Segment (memory) state: the sliding window of recent history that turns a
//! delay equation into a Markov system.
//!
//! A segment holds a discretized path on the lag interval `[-r, 0]`: `m + 1`
//! nodes spaced `delta = r / m` apart, node `0` at lag `-r` and node `m` at
//! lag `0` (the current value). Storage is a ring, so advancing the window by
//! one node (`roll`) is O(d) rather than O(m*d). Off-node lags are linearly
//! interpolated and all segment integrals use trapezoid quadrature, which is
//! exact on piecewise-linear data and therefore consistent with the
//! interpolation order.
//!
//! `r = 0` is allowed and degenerates to a single node: the memoryless case,
//! used by the zero-memory reduction checks.

use std::sync::Arc;

use crate::error::Error;

/// Uniform grid on the lag interval `[-r, 0]`.
///
/// `r` is snapped to `delta * m` at construction (with `delta = r / m`), so
/// the product is exact by definition and node arithmetic never drifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentGrid {
    r: f64,
    m: usize,
    delta: f64,
}

impl SegmentGrid {
    /// Grid with memory length `r` and `m` subintervals. `m = 0` is valid
    /// only for `r = 0` (and vice versa).
    pub fn new(r: f64, m: usize) -> Result<Self, Error> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!("memory length r={r} must be finite and >= 0")));
        }
        if (r == 0.0) != (m == 0) {
            return Err(Error::invalid(format!(
                "m = 0 iff r = 0 (got r={r}, m={m})"
            )));
        }
        if r == 0.0 {
            return Ok(Self { r: 0.0, m: 0, delta: 0.0 });
        }
        let delta = r / m as f64;
        // Snap r so that delta * m == r holds exactly.
        let r = delta * m as f64;
        Ok(Self { r, m, delta })
    }

    /// Degenerate no-memory grid.
    pub fn zero() -> Self {
        Self { r: 0.0, m: 0, delta: 0.0 }
    }

    /// Memory length (possibly snapped).
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Number of subintervals; the node count is `m + 1`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Node spacing; zero for the degenerate grid.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn nodes(&self) -> usize {
        self.m + 1
    }

    /// Lag of node `j` (node 0 is the oldest).
    pub fn lag_of(&self, j: usize) -> f64 {
        debug_assert!(j <= self.m);
        -self.r + self.delta * j as f64
    }
}

/// How to populate a fresh segment.
pub enum SegmentInit<'a> {
    /// Every node takes the same value.
    Constant(&'a [f64]),
    /// Linear ramp from the value at lag `-r` to the value at lag `0`.
    Linear { from: &'a [f64], to: &'a [f64] },
    /// Explicit node table, lag-ascending (`-r` first), `m + 1` rows of `d`.
    Table(&'a [Vec<f64>]),
    /// Sample a function of the lag at every node.
    Sampled(&'a dyn Fn(f64) -> Vec<f64>),
}

/// Discretized history window with ring storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    grid: SegmentGrid,
    dim: usize,
    /// `(m + 1) * dim` values; logical node `j` lives at physical slot
    /// `(start + j) mod (m + 1)`.
    data: Vec<f64>,
    start: usize,
}

impl Segment {
    /// Build a segment from an initial description. Shapes must match
    /// `(m + 1, dim)` and all values must be finite.
    pub fn new(grid: SegmentGrid, dim: usize, init: SegmentInit<'_>) -> Result<Self, Error> {
        if dim == 0 {
            return Err(Error::invalid("segment dimension must be >= 1"));
        }
        let nodes = grid.nodes();
        let mut data = vec![0.0; nodes * dim];
        match init {
            SegmentInit::Constant(v) => {
                check_dim("constant init", dim, v.len())?;
                for j in 0..nodes {
                    data[j * dim..(j + 1) * dim].copy_from_slice(v);
                }
            }
            SegmentInit::Linear { from, to } => {
                check_dim("linear init (from)", dim, from.len())?;
                check_dim("linear init (to)", dim, to.len())?;
                for j in 0..nodes {
                    let w = if grid.m == 0 { 1.0 } else { j as f64 / grid.m as f64 };
                    for k in 0..dim {
                        data[j * dim + k] = from[k] + w * (to[k] - from[k]);
                    }
                }
            }
            SegmentInit::Table(rows) => {
                if rows.len() != nodes {
                    return Err(Error::DimensionMismatch {
                        what: "node table rows",
                        expected: nodes,
                        got: rows.len(),
                    });
                }
                for (j, row) in rows.iter().enumerate() {
                    check_dim("node table row", dim, row.len())?;
                    data[j * dim..(j + 1) * dim].copy_from_slice(row);
                }
            }
            SegmentInit::Sampled(f) => {
                for j in 0..nodes {
                    let v = f(grid.lag_of(j));
                    check_dim("sampled init", dim, v.len())?;
                    data[j * dim..(j + 1) * dim].copy_from_slice(&v);
                }
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("segment init contains non-finite values"));
        }
        Ok(Self { grid, dim, data, start: 0 })
    }

    /// Constant segment shorthand.
    pub fn constant(grid: SegmentGrid, value: &[f64]) -> Result<Self, Error> {
        Self::new(grid, value.len(), SegmentInit::Constant(value))
    }

    pub fn grid(&self) -> SegmentGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn slot(&self, j: usize) -> usize {
        let cap = self.grid.nodes();
        let mut p = self.start + j;
        if p >= cap {
            p -= cap;
        }
        p
    }

    /// Value at logical node `j` (0 = lag `-r`, m = lag `0`).
    #[inline]
    pub fn node(&self, j: usize) -> &[f64] {
        let p = self.slot(j);
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    /// Current value (lag 0): the last pushed state.
    #[inline]
    pub fn head(&self) -> &[f64] {
        self.node(self.grid.m)
    }

    /// Advance the window by one node spacing, pushing `new_value` at lag 0
    /// and discarding the node at lag `-r`. O(dim).
    pub fn roll(&mut self, new_value: &[f64]) -> Result<(), Error> {
        check_dim("roll value", self.dim, new_value.len())?;
        if new_value.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("roll value contains non-finite entries"));
        }
        self.roll_unchecked(new_value);
        Ok(())
    }

    #[inline]
    pub(crate) fn roll_unchecked(&mut self, new_value: &[f64]) {
        let cap = self.grid.nodes();
        // The slot holding the oldest node becomes the new head.
        let oldest = self.start;
        self.data[oldest * self.dim..(oldest + 1) * self.dim].copy_from_slice(new_value);
        self.start += 1;
        if self.start >= cap {
            self.start = 0;
        }
    }

    /// Overwrite the head node in place (the live current-value slot used by
    /// the engine between node boundaries).
    #[inline]
    pub(crate) fn set_head(&mut self, value: &[f64]) {
        let p = self.slot(self.grid.m);
        self.data[p * self.dim..(p + 1) * self.dim].copy_from_slice(value);
    }

    /// Point evaluation at lag `s` in `[-r, 0]`: exact on nodes, linear
    /// interpolation between them.
    pub fn value_at(&self, s: f64, out: &mut [f64]) -> Result<(), Error> {
        check_dim("value_at output", self.dim, out.len())?;
        let r = self.grid.r;
        // Tolerate rounding at the interval ends.
        let tol = 1e-12 * (1.0 + r);
        if s < -r - tol || s > tol {
            return Err(Error::LagOutOfRange { lag: s, lo: -r, hi: 0.0 });
        }
        if self.grid.m == 0 {
            out.copy_from_slice(self.node(0));
            return Ok(());
        }
        let pos = ((s + r) / self.grid.delta).clamp(0.0, self.grid.m as f64);
        let j0 = (pos.floor() as usize).min(self.grid.m - 1);
        let w = pos - j0 as f64;
        let a = self.node(j0);
        let b = self.node(j0 + 1);
        for k in 0..self.dim {
            out[k] = a[k] + w * (b[k] - a[k]);
        }
        Ok(())
    }

    /// Scalar convenience for 1-dimensional segments; avoids an output buffer
    /// in hot coefficient closures.
    #[inline]
    pub fn value_at_scalar(&self, s: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        if self.grid.m == 0 {
            return self.node(0)[0];
        }
        let r = self.grid.r;
        let pos = ((s + r) / self.grid.delta).clamp(0.0, self.grid.m as f64);
        let j0 = (pos.floor() as usize).min(self.grid.m - 1);
        let w = pos - j0 as f64;
        self.node(j0)[0] + w * (self.node(j0 + 1)[0] - self.node(j0)[0])
    }

    /// Trapezoid approximation of the L2 norm of the segment over `[-r, 0]`.
    /// Zero for the degenerate single-node segment.
    pub fn l2_norm(&self) -> f64 {
        if self.grid.m == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for j in 0..=self.grid.m {
            let sq: f64 = self.node(j).iter().map(|v| v * v).sum();
            let w = if j == 0 || j == self.grid.m { 0.5 } else { 1.0 };
            acc += w * sq;
        }
        (acc * self.grid.delta).sqrt()
    }

    /// Segment of the frozen extension: hold `v` for positive times and read
    /// the window after `t` time units. `t` must be a multiple of the node
    /// spacing (anything goes when `r = 0`).
    pub fn extend_frozen(&self, v: &[f64], t: f64) -> Result<Segment, Error> {
        check_dim("extend_frozen value", self.dim, v.len())?;
        if t < 0.0 {
            return Err(Error::invalid(format!("extension duration t={t} is negative")));
        }
        let mut out = self.clone();
        if self.grid.m == 0 {
            if t > 0.0 {
                out.set_head(v);
            }
            return Ok(out);
        }
        let steps = (t / self.grid.delta).round();
        if (t - steps * self.grid.delta).abs() > 1e-9 * (1.0 + t) {
            return Err(Error::GridMisaligned {
                what: "extension duration",
                value: t,
                step: self.grid.delta,
            });
        }
        let steps = (steps as usize).min(self.grid.nodes());
        for _ in 0..steps {
            out.roll_unchecked(v);
        }
        // Extending past the window just keeps filling with v; a full window
        // of rolls already made it constant.
        Ok(out)
    }

    /// Iterate nodes oldest-first together with their lags.
    pub fn iter_nodes(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        (0..=self.grid.m).map(move |j| (self.grid.lag_of(j), self.node(j)))
    }

    /// Zero-copy view of one coordinate of a vector-valued segment.
    pub fn component(&self, index: usize) -> SegmentComponent<'_> {
        debug_assert!(index < self.dim);
        SegmentComponent { seg: self, index }
    }
}

/// One coordinate of a stacked segment, readable like a scalar segment.
#[derive(Clone, Copy)]
pub struct SegmentComponent<'a> {
    seg: &'a Segment,
    index: usize,
}

impl SegmentComponent<'_> {
    pub fn head(&self) -> f64 {
        self.seg.head()[self.index]
    }

    /// Linear interpolation at lag `s`, like `value_at` on the component.
    pub fn value_at(&self, s: f64) -> f64 {
        let grid = self.seg.grid();
        if grid.m() == 0 {
            return self.seg.node(0)[self.index];
        }
        let pos = ((s + grid.r()) / grid.delta()).clamp(0.0, grid.m() as f64);
        let j0 = (pos.floor() as usize).min(grid.m() - 1);
        let w = pos - j0 as f64;
        let a = self.seg.node(j0)[self.index];
        let b = self.seg.node(j0 + 1)[self.index];
        a + w * (b - a)
    }

    pub fn grid(&self) -> SegmentGrid {
        self.seg.grid()
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), Error> {
    if expected != got {
        Err(Error::DimensionMismatch { what, expected, got })
    } else {
        Ok(())
    }
}

/// Finite-difference estimate of the shift-operator action on a functional of
/// (segment, endpoint): freeze the endpoint, slide the window by `h`, and
/// difference. `h` must be a positive multiple of the node spacing.
pub fn shift_operator_fd<F>(phi: F, seg: &Segment, h: f64) -> Result<f64, Error>
where
    F: Fn(&Segment, &[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::invalid(format!("shift step h={h} must be positive")));
    }
    let head = seg.head().to_vec();
    let shifted = seg.extend_frozen(&head, h)?;
    Ok((phi(&shifted, &head) - phi(seg, &head)) / h)
}

type InnerMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type OuterMap = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// One weighted path integral of a quasi-tame functional: `integral of
/// f(eta(s)) g(s) ds` over `[-r, 0]`, computed by trapezoid on the grid.
pub struct QuasiTameTerm {
    inner: InnerMap,
    weight: WeightFn,
}

impl QuasiTameTerm {
    pub fn new(
        inner: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        weight: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { inner: Arc::new(inner), weight: Arc::new(weight) }
    }

    /// Identity map with unit weight: the plain segment integral.
    pub fn plain_integral() -> Self {
        Self::new(|x, out| out.copy_from_slice(x), |_| 1.0)
    }
}

/// Functional of the form `h((integrals)_j ; eta(0))`: an outer map applied
/// to finitely many weighted path integrals plus the endpoint. With no terms
/// (`k = 1`) it reduces to a function of the endpoint alone.
pub struct QuasiTameFunctional {
    dim: usize,
    terms: Vec<QuasiTameTerm>,
    outer: OuterMap,
}

impl QuasiTameFunctional {
    /// `outer` receives the flattened integrals (`terms.len() * dim` values,
    /// term-major) and the endpoint.
    pub fn new(
        dim: usize,
        terms: Vec<QuasiTameTerm>,
        outer: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { dim, terms, outer: Arc::new(outer) }
    }

    /// Endpoint-only functional (`k = 1`).
    pub fn endpoint(dim: usize, h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(dim, Vec::new(), move |_, x| h(x))
    }

    /// The number of integral terms plus one.
    pub fn order(&self) -> usize {
        self.terms.len() + 1
    }

    pub fn eval(&self, seg: &Segment) -> Result<f64, Error> {
        if seg.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "quasi-tame functional input",
                expected: self.dim,
                got: seg.dim(),
            });
        }
        let d = self.dim;
        let m = seg.grid().m();
        let delta = seg.grid().delta();
        let mut integrals = vec![0.0; self.terms.len() * d];
        let mut mapped = vec![0.0; d];
        for (ti, term) in self.terms.iter().enumerate() {
            let out = &mut integrals[ti * d..(ti + 1) * d];
            if m == 0 {
                continue; // zero-length interval
            }
            for j in 0..=m {
                let lag = seg.grid().lag_of(j);
                (term.inner)(seg.node(j), &mut mapped);
                let g = (term.weight)(lag);
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                for k in 0..d {
                    out[k] += w * g * mapped[k];
                }
            }
            for k in 0..d {
                out[k] *= delta;
            }
        }
        let value = (self.outer)(&integrals, seg.head());
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "quasi-tame functional",
                t: 0.0,
                state: seg.head().to_vec(),
            });
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar_seg(grid: SegmentGrid, vals: &[f64]) -> Segment {
        let rows: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
        Segment::new(grid, 1, SegmentInit::Table(&rows)).unwrap()
    }

    #[test]
    fn constant_fill() {
        let grid = SegmentGrid::new(1.0, 4).unwrap();
        let seg = Segment::constant(grid, &[2.0]).unwrap();
        for (_, v) in seg.iter_nodes() {
            assert_eq!(v, &[2.0]);
        }
        assert_eq!(seg.head(), &[2.0]);
    }

    #[test]
    fn linear_init_endpoints() {
        let grid = SegmentGrid::new(1.0, 2).unwrap();
        let seg = Segment::new(grid, 1, SegmentInit::Linear { from: &[0.0], to: &[1.0] }).unwrap();
        let vals: Vec<f64> = seg.iter_nodes().map(|(_, v)| v[0]).collect();
        assert_eq!(vals, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn zero_memory_single_node() {
        let seg = Segment::constant(SegmentGrid::zero(), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(seg.grid().nodes(), 1);
        assert_eq!(seg.head(), &[1.0, 2.0, 3.0]);
        let mut out = [0.0; 3];
        seg.value_at(0.0, &mut out).unwrap();
        assert_eq!(out, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn mismatched_init_rejected() {
        let grid = SegmentGrid::new(1.0, 2).unwrap();
        assert!(Segment::new(grid, 2, SegmentInit::Constant(&[1.0])).is_err());
        assert!(Segment::new(grid, 1, SegmentInit::Constant(&[f64::NAN])).is_err());
        assert!(SegmentGrid::new(1.0, 0).is_err());
        assert!(SegmentGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn roll_shifts_window() {
        let grid = SegmentGrid::new(2.0, 2).unwrap();
        let mut seg = scalar_seg(grid, &[1.0, 2.0, 3.0]);
        seg.roll(&[4.0]).unwrap();
        let vals: Vec<f64> = seg.iter_nodes().map(|(_, v)| v[0]).collect();
        assert_eq!(vals, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn roll_constant_is_fixed_point() {
        let grid = SegmentGrid::new(1.0, 3).unwrap();
        let mut seg = Segment::constant(grid, &[7.0]).unwrap();
        let before = seg.clone();
        seg.roll(&[7.0]).unwrap();
        assert_eq!(seg.iter_nodes().map(|(_, v)| v[0]).collect::<Vec<_>>(),
                   before.iter_nodes().map(|(_, v)| v[0]).collect::<Vec<_>>());
    }

    #[test]
    fn full_window_replacement() {
        let grid = SegmentGrid::new(1.0, 3).unwrap();
        let mut seg = Segment::constant(grid, &[-9.0]).unwrap();
        let pushed: Vec<f64> = (1..=4).map(|v| v as f64).collect();
        for &v in &pushed {
            seg.roll(&[v]).unwrap();
        }
        let vals: Vec<f64> = seg.iter_nodes().map(|(_, v)| v[0]).collect();
        assert_eq!(vals, pushed);
    }

    #[test]
    fn value_at_interpolates() {
        let grid = SegmentGrid::new(1.0, 1).unwrap();
        let seg = scalar_seg(grid, &[0.0, 1.0]);
        let mut out = [0.0];
        seg.value_at(-0.5, &mut out).unwrap();
        assert_relative_eq!(out[0], 0.5);
        seg.value_at(0.0, &mut out).unwrap();
        assert_eq!(out[0], 1.0);

        // Hand-derived: nodes (1, 4, 9) on [-2, 0], lag -1.5 sits midway
        // between nodes 0 and 1: (1 + 4) / 2 = 2.5.
        let grid = SegmentGrid::new(2.0, 2).unwrap();
        let seg = scalar_seg(grid, &[1.0, 4.0, 9.0]);
        seg.value_at(-1.5, &mut out).unwrap();
        assert_relative_eq!(out[0], 2.5);

        assert!(seg.value_at(-2.5, &mut out).is_err());
        assert!(seg.value_at(0.5, &mut out).is_err());
    }

    #[test]
    fn l2_norm_reference_values() {
        let grid = SegmentGrid::new(1.0, 8).unwrap();
        assert_relative_eq!(Segment::constant(grid, &[1.0]).unwrap().l2_norm(), 1.0);
        assert_eq!(Segment::constant(grid, &[0.0]).unwrap().l2_norm(), 0.0);

        // eta(s) = s on [-1, 0]: integral of s^2 is 1/3.
        let grid = SegmentGrid::new(1.0, 1000).unwrap();
        let f = |s: f64| vec![s];
        let seg = Segment::new(grid, 1, SegmentInit::Sampled(&f)).unwrap();
        assert_relative_eq!(seg.l2_norm(), (1.0f64 / 3.0).sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn quasi_tame_reductions() {
        let grid = SegmentGrid::new(1.0, 4).unwrap();
        let seg = Segment::constant(grid, &[3.0]).unwrap();

        // k = 1: endpoint only.
        let qt = QuasiTameFunctional::endpoint(1, |x| x[0]);
        assert_eq!(qt.eval(&seg).unwrap(), 3.0);

        // k = 2, identity and unit weight on a constant: integral = c * r.
        let qt = QuasiTameFunctional::new(1, vec![QuasiTameTerm::plain_integral()], |i, _| i[0]);
        assert_relative_eq!(qt.eval(&seg).unwrap(), 3.0);

        // eta(s) = s: trapezoid is exact on linears, integral = -1/2 exactly.
        let f = |s: f64| vec![s];
        let lin = Segment::new(SegmentGrid::new(1.0, 10).unwrap(), 1, SegmentInit::Sampled(&f)).unwrap();
        let qt = QuasiTameFunctional::new(1, vec![QuasiTameTerm::plain_integral()], |i, _| i[0]);
        assert_relative_eq!(qt.eval(&lin).unwrap(), -0.5, epsilon = 1e-14);
    }

    #[test]
    fn quasi_tame_refinement_invariance_on_linears() {
        // Affine integrand, affine weight: trapezoid exact at any resolution.
        for m in [2usize, 5, 40, 160] {
            let grid = SegmentGrid::new(1.0, m).unwrap();
            let f = |s: f64| vec![2.0 * s + 1.0];
            let seg = Segment::new(grid, 1, SegmentInit::Sampled(&f)).unwrap();
            let qt = QuasiTameFunctional::new(1, vec![QuasiTameTerm::plain_integral()], |i, _| i[0]);
            // integral of 2s + 1 over [-1, 0] = 0 exactly.
            assert_relative_eq!(qt.eval(&seg).unwrap(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn quasi_tame_dimension_mismatch() {
        let seg = Segment::constant(SegmentGrid::new(1.0, 2).unwrap(), &[1.0, 2.0]).unwrap();
        let qt = QuasiTameFunctional::endpoint(1, |x| x[0]);
        assert!(qt.eval(&seg).is_err());
    }

    #[test]
    fn extend_frozen_cases() {
        let grid = SegmentGrid::new(1.5, 3).unwrap();
        let seg = scalar_seg(grid, &[1.0, 2.0, 3.0, 4.0]);

        let same = seg.extend_frozen(&[9.0], 0.0).unwrap();
        assert_eq!(same.iter_nodes().map(|(_, v)| v[0]).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);

        let one = seg.extend_frozen(&[9.0], grid.delta()).unwrap();
        assert_eq!(one.iter_nodes().map(|(_, v)| v[0]).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0, 9.0]);

        let full = seg.extend_frozen(&[9.0], grid.r()).unwrap();
        assert!(full.iter_nodes().all(|(_, v)| v[0] == 9.0));

        assert!(seg.extend_frozen(&[9.0], -0.1).is_err());
        assert!(seg.extend_frozen(&[9.0], 0.3 * grid.delta()).is_err());
    }

    #[test]
    fn shift_fd_endpoint_functional_is_zero() {
        let grid = SegmentGrid::new(1.0, 5).unwrap();
        let f = |s: f64| vec![s * s];
        let seg = Segment::new(grid, 1, SegmentInit::Sampled(&f)).unwrap();
        for steps in 1..=5usize {
            let h = grid.delta() * steps as f64;
            let d = shift_operator_fd(|_, x| 10.0 * x[0] + 1.0, &seg, h).unwrap();
            assert_eq!(d, 0.0);
        }
        let d = shift_operator_fd(|_, _| 42.0, &seg, grid.delta()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn shift_fd_of_integral_converges() {
        // phi(eta) = integral of eta; for eta(s) = s the shift derivative is
        // eta(0) - eta(-r) = 1. One-node finite difference has error delta/2.
        for m in [10usize, 100, 1000] {
            let grid = SegmentGrid::new(1.0, m).unwrap();
            let f = |s: f64| vec![s];
            let seg = Segment::new(grid, 1, SegmentInit::Sampled(&f)).unwrap();
            let qt = QuasiTameFunctional::new(1, vec![QuasiTameTerm::plain_integral()], |i, _| i[0]);
            let d = shift_operator_fd(|s, _| qt.eval(s).unwrap(), &seg, grid.delta()).unwrap();
            assert!((d - 1.0).abs() <= grid.delta(), "m={m}: d={d}");
        }
    }

    proptest! {
        #[test]
        fn ring_coherence(values in proptest::collection::vec(-1e3f64..1e3, 1..40), m in 1usize..8) {
            let grid = SegmentGrid::new(1.0, m).unwrap();
            let mut seg = Segment::constant(grid, &[0.0]).unwrap();
            for (i, &v) in values.iter().enumerate() {
                seg.roll(&[v]).unwrap();
                // Head is always the last pushed value.
                prop_assert_eq!(seg.head()[0], v);
                // After at least m more pushes, the oldest node is the value
                // pushed m rolls ago.
                if i >= m {
                    prop_assert_eq!(seg.node(0)[0], values[i - m]);
                }
            }
        }

        #[test]
        fn window_forgets_initial_contents(m in 1usize..8, fill in -10f64..10.0) {
            let grid = SegmentGrid::new(2.0, m).unwrap();
            let mut a = Segment::constant(grid, &[fill]).unwrap();
            let mut b = Segment::constant(grid, &[-fill + 3.0]).unwrap();
            for i in 0..=m {
                let v = [i as f64];
                a.roll(&v).unwrap();
                b.roll(&v).unwrap();
            }
            let av: Vec<f64> = a.iter_nodes().map(|(_, v)| v[0]).collect();
            let bv: Vec<f64> = b.iter_nodes().map(|(_, v)| v[0]).collect();
            prop_assert_eq!(av, bv);
        }

        #[test]
        fn l2_norm_is_a_norm(
            xs in proptest::collection::vec(-100f64..100.0, 5),
            ys in proptest::collection::vec(-100f64..100.0, 5),
            scale in -10f64..10.0,
        ) {
            let grid = SegmentGrid::new(1.0, 4).unwrap();
            let sx = scalar_seg(grid, &xs);
            let sy = scalar_seg(grid, &ys);
            let sum_vals: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a + b).collect();
            let sxy = scalar_seg(grid, &sum_vals);
            // Triangle inequality on the discretized space.
            prop_assert!(sxy.l2_norm() <= sx.l2_norm() + sy.l2_norm() + 1e-9);
            // Absolute homogeneity.
            let scaled_vals: Vec<f64> = xs.iter().map(|a| scale * a).collect();
            let ss = scalar_seg(grid, &scaled_vals);
            prop_assert!((ss.l2_norm() - scale.abs() * sx.l2_norm()).abs() <= 1e-9 * (1.0 + sx.l2_norm()));
        }
    }
}
