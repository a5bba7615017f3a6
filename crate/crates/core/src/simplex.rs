//! Maximizers of weighted log objectives on a floored simplex.

/// Solves `max sum_i w_i ln x_i` subject to `sum_i x_i = total` and
/// `x_i >= floor`, writing the maximizer into `out`.
///
/// Entries with non-positive weight sit at the floor whenever some weight is
/// positive; the rest follow `x_i = max(floor, w_i / nu)`. With no positive
/// weight the objective is convex on the feasible set, so the maximizer is a
/// vertex: the remaining mass goes to the largest weight (zero weights share
/// it evenly).
pub fn weighted_log_argmax(w: &[f64], floor: f64, total: f64, out: &mut [f64]) {
    let d = w.len();
    assert_eq!(out.len(), d);
    if d == 0 {
        return;
    }
    if d == 1 {
        out[0] = total;
        return;
    }
    let spare = total - floor * d as f64;
    debug_assert!(spare > 0.0, "floor too large for the simplex");

    let n_pos = w.iter().filter(|&&x| x > 0.0).count();
    if n_pos == 0 {
        out.iter_mut().for_each(|x| *x = floor);
        let n_zero = w.iter().filter(|&&x| x == 0.0).count();
        if n_zero > 0 {
            let share = spare / n_zero as f64;
            for (o, &wi) in out.iter_mut().zip(w) {
                if wi == 0.0 {
                    *o += share;
                }
            }
        } else {
            let best = argmax(w);
            out[best] += spare;
        }
        return;
    }

    // Water-filling over the positive weights. Each round moves entries whose
    // unconstrained share falls below the floor into the fixed set; the
    // multiplier only grows, so this terminates after at most n_pos rounds.
    let mut fixed: Vec<bool> = w.iter().map(|&x| x <= 0.0).collect();
    loop {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_total = total - floor * n_fixed as f64;
        let free_w: f64 = w
            .iter()
            .zip(&fixed)
            .filter(|(_, &f)| !f)
            .map(|(x, _)| *x)
            .sum();
        let nu = free_w / free_total;
        let mut changed = false;
        for (i, f) in fixed.iter_mut().enumerate() {
            if !*f && w[i] / nu < floor {
                *f = true;
                changed = true;
            }
        }
        if !changed {
            for i in 0..d {
                out[i] = if fixed[i] { floor } else { w[i] / nu };
            }
            return;
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `sum_i w_i ln x_i`, skipping zero weights.
pub fn weighted_log(w: &[f64], x: &[f64]) -> f64 {
    w.iter()
        .zip(x)
        .filter(|(&wi, _)| wi != 0.0)
        .map(|(&wi, &xi)| wi * xi.ln())
        .sum()
}
