//! Wipe-cycle detection from the wiping joint's velocity sign changes.

/// Midline of an oscillating channel: halfway between its extremes.
pub fn midline(q: &[f64]) -> f64 {
    let (lo, hi) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    0.5 * (lo + hi)
}

/// Ticks of the wiping joint's maxima.
///
/// A maximum is a `+ → −` velocity sign change above `mid + hysteresis`, and it only
/// counts once the angle has dipped below `mid − hysteresis` since the previous one.
/// Consecutive maxima bound one back-and-forth cycle.
pub fn peak_ticks(q: &[f64], dq: &[f64], mid: f64, hysteresis: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = q.len().min(dq.len());
    let mut armed = n > 0 && q[0] < mid - hysteresis;
    for k in 1..n {
        if q[k] < mid - hysteresis {
            armed = true;
        }
        if armed && dq[k - 1] > 0.0 && dq[k] <= 0.0 && q[k - 1] > mid + hysteresis {
            peaks.push(k - 1);
            armed = false;
        }
    }
    peaks
}

/// Peak ticks with the midline taken from the channel itself.
pub fn detect(q: &[f64], dq: &[f64], hysteresis: f64) -> Vec<usize> {
    peak_ticks(q, dq, midline(q), hysteresis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_clean_sinusoid() {
        let dt = 0.01;
        let q: Vec<f64> = (0..1000).map(|k| -(2.0 * std::f64::consts::PI * k as f64 * dt / 2.0).cos()).collect();
        let mut dq = vec![0.0];
        dq.extend(q.windows(2).map(|w| (w[1] - w[0]) / dt));
        let peaks = detect(&q, &dq, 0.2);
        // maxima at t = 1, 3, 5, 7, 9 s
        assert_eq!(peaks, vec![100, 300, 500, 700, 900]);
    }

    #[test]
    fn ignores_jitter_near_a_peak() {
        let q = [-1.0, 0.0, 1.0, 0.9, 0.95, 0.8, 0.0, -1.0, 0.0, 1.0, 0.5];
        let mut dq = vec![0.0];
        dq.extend(q.windows(2).map(|w| w[1] - w[0]));
        assert_eq!(detect(&q, &dq, 0.3), vec![2, 9]);
    }
}
