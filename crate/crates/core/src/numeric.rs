//! Log-space helpers and small deterministic reductions.

/// `log(exp(a) + exp(b))` without overflow; either side may be `-inf`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp over a slice. Returns `-inf` for an empty slice or all `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `y * ln(y)` with the continuous extension `h(0) = 0`.
#[inline]
pub fn xlogx(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        y * y.ln()
    }
}

/// Natural log of the gamma function for positive arguments.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Log of the real-valued binomial coefficient `C(n, k)` for `0 <= k <= n`.
pub fn ln_choose(n: f64, k: f64) -> f64 {
    let k = k.clamp(0.0, n);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Clamp every entry to at least `floor`, then rescale so the slice sums to `total`.
///
/// Entries that were clamped stay at `floor`; the remaining mass is spread
/// proportionally over the rest.
pub fn clamp_renormalize(xs: &mut [f64], floor: f64, total: f64) {
    let d = xs.len();
    if d == 0 {
        return;
    }
    for x in xs.iter_mut() {
        if !(*x >= floor) {
            *x = floor;
        }
    }
    // Entries at the floor are held fixed while the free ones are rescaled; a
    // rescale can push further entries under the floor, so iterate.
    let mut fixed = vec![false; d];
    for _ in 0..d {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_total = total - floor * n_fixed as f64;
        let free_sum: f64 = xs
            .iter()
            .zip(&fixed)
            .filter(|(_, &f)| !f)
            .map(|(x, _)| *x)
            .sum();
        if free_sum <= 0.0 || n_fixed == d {
            let v = total / d as f64;
            xs.iter_mut().for_each(|x| *x = v);
            return;
        }
        let scale = free_total / free_sum;
        let mut changed = false;
        for (x, f) in xs.iter_mut().zip(fixed.iter_mut()) {
            if *f {
                *x = floor;
                continue;
            }
            *x *= scale;
            if *x < floor {
                *x = floor;
                *f = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}
