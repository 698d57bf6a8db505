//! Convergence analysis of mean-distance curves.
//!
//! Once the policies settle, mean distance per agent grows linearly in time.
//! A least-squares line through the tail of the curve gives the asymptotic
//! speed; extrapolating it backwards, the convergence threshold is the start
//! of the last stretch over which the data stays inside a residual band
//! around the line.

use crate::engine::MetricsSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub tail_fraction: f64,
    pub band_multiplier: f64,
    /// Band floor relative to the largest distance, guards exact-line data.
    pub abs_floor_rel: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            tail_fraction: 0.2,
            band_multiplier: 3.0,
            abs_floor_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    /// Asymptotic mean velocity, distance per tick.
    pub slope: f64,
    pub intercept: f64,
    pub tail_fraction: f64,
    /// RMS residual over the tail window.
    pub residual_scale: f64,
    /// Index of the first row in the tail window.
    pub tail_start: usize,
}

impl TailFit {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub threshold_tick: u64,
    pub terminal_speed: f64,
    pub converged: bool,
    /// Times the curve came back into the band after leaving it. More than
    /// one means the curve ran close to the tail line well before settling and
    /// the threshold is unreliable.
    pub re_entries: usize,
}

impl ConvergenceReport {
    pub fn suspect(&self) -> bool {
        self.re_entries > 1
    }
}

fn tail_len(n: usize, tail_fraction: f64) -> usize {
    (n as f64 * tail_fraction + 1e-9).floor() as usize
}

/// Ordinary least squares over the last `tail_fraction` of the points.
pub fn tail_fit_xy(ts: &[f64], ds: &[f64], tail_fraction: f64) -> Result<TailFit> {
    if ts.len() != ds.len() {
        return Err(Error::InvalidInput(
            "time and distance lengths differ".into(),
        ));
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tail fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let m = tail_len(ts.len(), tail_fraction);
    if m < 10 {
        return Err(Error::InvalidInput(format!(
            "tail window has {m} points, need at least 10 ({} rows at fraction {tail_fraction})",
            ts.len()
        )));
    }
    let start = ts.len() - m;
    let (xs, ys) = (&ts[start..], &ds[start..]);
    let mx = xs.iter().sum::<f64>() / m as f64;
    let my = ys.iter().sum::<f64>() / m as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidInput(
            "degenerate series: constant tick".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(TailFit {
        slope,
        intercept,
        tail_fraction,
        residual_scale: (rss / m as f64).sqrt(),
        tail_start: start,
    })
}

/// Tail fit of `(tick, mean_distance)`.
pub fn tail_fit(series: &MetricsSeries, tail_fraction: f64) -> Result<TailFit> {
    tail_fit_xy(&series.ticks(), &series.distances(), tail_fraction)
}

/// Threshold detection on raw points; see [`convergence_threshold`].
pub fn convergence_threshold_xy(
    ts: &[f64],
    ds: &[f64],
    fit: &TailFit,
    band_multiplier: f64,
    abs_floor_rel: f64,
) -> ConvergenceReport {
    let max_abs = ds.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let band = band_multiplier * fit.residual_scale.max(abs_floor_rel * max_abs);
    let inside: Vec<bool> = ts
        .iter()
        .zip(ds)
        .map(|(&t, &d)| (d - fit.at(t)).abs() <= band)
        .collect();

    let mut idx = inside.len();
    while idx > 0 && inside[idx - 1] {
        idx -= 1;
    }
    let re_entries = inside.windows(2).filter(|w| !w[0] && w[1]).count();
    let last_tick = ts.last().copied().unwrap_or(0.0) as u64;
    if idx == inside.len() {
        return ConvergenceReport {
            threshold_tick: last_tick,
            terminal_speed: fit.slope,
            converged: false,
            re_entries,
        };
    }
    ConvergenceReport {
        threshold_tick: ts[idx] as u64,
        terminal_speed: fit.slope,
        converged: idx < fit.tail_start,
        re_entries,
    }
}

/// Earliest tick from which every later point stays within
/// `band_multiplier · max(residual_scale, floor)` of the tail line.
/// Converged when that tick precedes the tail window.
pub fn convergence_threshold(
    series: &MetricsSeries,
    fit: &TailFit,
    band_multiplier: f64,
) -> ConvergenceReport {
    convergence_threshold_xy(
        &series.ticks(),
        &series.distances(),
        fit,
        band_multiplier,
        ConvergenceParams::default().abs_floor_rel,
    )
}

/// Tail fit and threshold in one go.
pub fn analyze_series(
    series: &MetricsSeries,
    params: &ConvergenceParams,
) -> Result<ConvergenceReport> {
    let ts = series.ticks();
    let ds = series.distances();
    let fit = tail_fit_xy(&ts, &ds, params.tail_fraction)?;
    Ok(convergence_threshold_xy(
        &ts,
        &ds,
        &fit,
        params.band_multiplier,
        params.abs_floor_rel,
    ))
}

/// Terminal speed with sharing over terminal speed without.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
pub fn sharing_ratio(sharing_speed: f64, independent_speed: f64) -> Result<f64> {
    if !(independent_speed > 0.0) {
        return Err(Error::InvalidInput(format!(
            "independent speed must be positive, got {independent_speed}"
        )));
    }
    Ok(sharing_speed / independent_speed)
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation of `ys` against `xs`. A constant `ys` has no
/// trend and scores 0.
pub fn trend_stat(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput("trend inputs differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "trend needs at least 3 points, got {}",
            xs.len()
        )));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Coefficient of variation of windowed velocities over the final `fraction`
/// of the rows.
pub fn velocity_cov(series: &MetricsSeries, fraction: f64) -> f64 {
    let n = series.rows.len();
    let m = tail_len(n, fraction).max(2).min(n);
    let v: Vec<f64> = series.rows[n - m..]
        .iter()
        .map(|r| r.mean_velocity)
        .collect();
    let (mean, sd) = mean_std(&v);
    sd / mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * step).collect()
    }

    /// Box–Muller normal draw.
    fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn exact_line_fits_exactly() {
        let ts = grid(200, 10.0);
        let ds: Vec<f64> = ts.iter().map(|t| 2.0 * t).collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.residual_scale < 1e-9);
        let rep = convergence_threshold_xy(&ts, &ds, &fit, 3.0, 1e-9);
        assert_eq!(rep.threshold_tick, 0);
        assert!(rep.converged);
        assert_eq!(rep.re_entries, 0);
    }

    #[test]
    fn noisy_slope_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ts = grid(1000, 1.0);
        let ds: Vec<f64> = ts.iter().map(|t| 2.0 * t + normal(&mut rng, 0.1)).collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let xs = &ts[fit.tail_start..];
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let se = 0.1 / sxx.sqrt();
        assert!(
            (fit.slope - 2.0).abs() < 3.0 * se,
            "{} vs se {se}",
            fit.slope
        );
    }

    #[test]
    fn slope_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = grid(120, 3.0);
        let ds: Vec<f64> = ts
            .iter()
            .map(|t| 0.7 * t + 5.0 + normal(&mut rng, 2.0))
            .collect();
        let fit = tail_fit_xy(&ts, &ds, 0.25).unwrap();
        // Raw-sum normal equations on the same window.
        let (xs, ys) = (&ts[90..], &ds[90..]);
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert_eq!(fit.tail_start, 90);
        assert!((fit.slope - slope).abs() < 1e-9);
        assert!((fit.intercept - intercept).abs() < 1e-6);
    }

    #[test]
    fn short_or_degenerate_series_rejected() {
        let ts = grid(40, 1.0);
        assert!(tail_fit_xy(&ts, &ts, 0.2).is_err());
        let flat = vec![5.0; 100];
        assert!(tail_fit_xy(&flat, &grid(100, 1.0), 0.2).is_err());
    }

    fn ramp_then_line(t: f64, knee: f64) -> f64 {
        if t <= knee {
            t * t / (2.0 * knee)
        } else {
            knee / 2.0 + (t - knee)
        }
    }

    #[test]
    fn piecewise_threshold_near_knee() {
        let ts = grid(2501, 10.0);
        let ds: Vec<f64> = ts.iter().map(|&t| ramp_then_line(t, 5000.0)).collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let rep = convergence_threshold_xy(&ts, &ds, &fit, 3.0, 1e-9);
        assert!(rep.converged);
        assert!(
            (4500..=5500).contains(&rep.threshold_tick),
            "{}",
            rep.threshold_tick
        );
        assert!((rep.terminal_speed - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pure_quadratic_never_converges() {
        // Residuals of t² about its tail line have RMS w²/(6√5) over a window
        // of width w, and the curve leaves a band of b·RMS at distance
        // x = w(√(b/(6√5) + 1/12) − 1/2) before the window: inside it for
        // b = 1, about 0.054·w outside it for b = 3.
        let ts = grid(1000, 1.0);
        let ds: Vec<f64> = ts.iter().map(|t| t * t).collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let tail_start_tick = ts[fit.tail_start];
        let w = ts[999] - tail_start_tick;

        let tight = convergence_threshold_xy(&ts, &ds, &fit, 1.0, 1e-9);
        assert!(!tight.converged);
        assert!(tight.threshold_tick as f64 >= tail_start_tick);

        let wide = convergence_threshold_xy(&ts, &ds, &fit, 3.0, 1e-9);
        let reach = w * ((3.0 / (6.0 * 5f64.sqrt()) + 1.0 / 12.0).sqrt() - 0.5);
        let lead = tail_start_tick - wide.threshold_tick as f64;
        assert!((lead - reach).abs() <= 2.0, "lead {lead} vs {reach}");
    }

    #[test]
    fn wider_band_never_later() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ts = grid(2000, 5.0);
        let ds: Vec<f64> = ts
            .iter()
            .map(|&t| ramp_then_line(t, 3000.0) + normal(&mut rng, 0.5))
            .collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let mut prev = u64::MAX;
        for k in [1.0, 2.0, 3.0, 5.0, 8.0, 20.0] {
            let rep = convergence_threshold_xy(&ts, &ds, &fit, k, 1e-9);
            assert!(rep.threshold_tick <= prev);
            prev = rep.threshold_tick;
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts = grid(1500, 4.0);
        let ds: Vec<f64> = ts
            .iter()
            .map(|&t| ramp_then_line(t, 2000.0) + normal(&mut rng, 0.3))
            .collect();
        let base_fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let base = convergence_threshold_xy(&ts, &ds, &base_fit, 3.0, 1e-9);

        let shifted: Vec<f64> = ds.iter().map(|d| d + 1234.5).collect();
        let fit = tail_fit_xy(&ts, &shifted, 0.2).unwrap();
        let rep = convergence_threshold_xy(&ts, &shifted, &fit, 3.0, 1e-9);
        assert!((fit.slope - base_fit.slope).abs() < 1e-9);
        assert_eq!(rep.threshold_tick, base.threshold_tick);

        // Time ×2 and distance ×3 scales the slope by 3/2 and the threshold by 2.
        let ts2: Vec<f64> = ts.iter().map(|t| 2.0 * t).collect();
        let ds3: Vec<f64> = ds.iter().map(|d| 3.0 * d).collect();
        let fit = tail_fit_xy(&ts2, &ds3, 0.2).unwrap();
        let rep = convergence_threshold_xy(&ts2, &ds3, &fit, 3.0, 1e-9);
        assert!((fit.slope - 1.5 * base_fit.slope).abs() < 1e-9);
        assert_eq!(rep.threshold_tick, 2 * base.threshold_tick);
    }

    #[test]
    fn parallel_early_stretch_is_flagged() {
        // Runs along the tail line, leaves it, and returns: two entries.
        let ts = grid(1000, 1.0);
        let ds: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let bump = if (200.0..400.0).contains(&t) || (500.0..600.0).contains(&t) {
                    50.0
                } else {
                    0.0
                };
                t + bump
            })
            .collect();
        let fit = tail_fit_xy(&ts, &ds, 0.2).unwrap();
        let rep = convergence_threshold_xy(&ts, &ds, &fit, 3.0, 1e-9);
        assert_eq!(rep.re_entries, 2);
        assert!(rep.suspect());
        assert_eq!(rep.threshold_tick, 600);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(sharing_ratio(1.0, 1.0).unwrap(), 1.0);
        assert!((sharing_ratio(1.1, 1.0).unwrap() - 1.1).abs() < 1e-15);
        assert!(sharing_ratio(1.0, 0.0).is_err());
        assert!(sharing_ratio(1.0, -2.0).is_err());
    }

    #[test]
    fn trend_examples() {
        let xs = [0.0, 0.25, 0.5, 1.0];
        assert_eq!(trend_stat(&xs, &[9.0, 7.0, 3.0, 1.0]).unwrap(), -1.0);
        assert_eq!(trend_stat(&xs, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert!(trend_stat(&xs[..2], &[1.0, 2.0]).is_err());
    }

    /// Average rank of each element over every ordering that sorts the list.
    fn brute_force_ranks(values: &[f64]) -> Vec<f64> {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = values.len();
        let mut sums = vec![0.0; n];
        let mut count = 0.0;
        for perm in permutations(n) {
            if perm.windows(2).all(|w| values[w[0]] <= values[w[1]]) {
                count += 1.0;
                for (rank, &i) in perm.iter().enumerate() {
                    sums[i] += rank as f64 + 1.0;
                }
            }
        }
        sums.iter().map(|s| s / count).collect()
    }

    #[test]
    fn spearman_with_tie_matches_brute_force() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [3.0, 1.0, 4.0, 1.5, 4.0, 9.0];
        let rx = brute_force_ranks(&xs);
        let ry = brute_force_ranks(&ys);
        assert_eq!(average_ranks(&ys), ry);
        let n = 6.0;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        let expected = cov / (vx * vy).sqrt();
        assert!((trend_stat(&xs, &ys).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }
}
