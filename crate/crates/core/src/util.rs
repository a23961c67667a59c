//! Small numeric helpers shared across modules.

/// Round half-up, tolerant of representation error just below a `.5`
/// boundary (e.g. `0.35 * 10.0`).
pub fn round_half_up(x: f64) -> f64 {
    let y = x + 0.5;
    let f = y.floor();
    if y - f > 1.0 - 1e-9 {
        f + 1.0
    } else {
        f
    }
}

/// Round a nonnegative real to a count using [`round_half_up`].
pub fn round_count(x: f64) -> usize {
    round_half_up(x.max(0.0)) as usize
}

/// Split `total` into integer parts proportional to `weights` using the
/// largest-remainder method; ties go to the lower index.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut out = vec![total / weights.len(); weights.len()];
        for slot in out.iter_mut().take(total % weights.len()) {
            *slot += 1;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Index of the maximum, ties to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
