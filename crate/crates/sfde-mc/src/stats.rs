//! Compensated accumulation for deterministic, order-stable reductions.

/// Neumaier-compensated sum. Addition order is fixed by the caller, so a
/// given sequence of `add` calls always yields the same bits; merging two
/// sums is itself two compensated adds and stays deterministic as long as
/// merges happen in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    /// Fold another sum in, preserving its compensation term.
    pub fn merge(&mut self, other: CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Running first and second moments with compensated sums; used by every
/// estimator so that path order alone determines the result.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
    count: u64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.sum.add(v);
        self.sum_sq.add(v * v);
        self.count += 1;
    }

    pub fn merge(&mut self, other: MomentAccumulator) {
        self.sum.merge(other.sum);
        self.sum_sq.merge(other.sum_sq);
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.sum.total() / self.count as f64
    }

    /// Unbiased sample variance, clamped at zero against cancellation noise.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.mean();
        let var = (self.sum_sq.total() - n * mean * mean) / (n - 1.0);
        var.max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}
