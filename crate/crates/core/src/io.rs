//! Metrics CSV reading and writing.
//!
//! Columns are `tick,mean_distance,mean_velocity,events,broadcasts,
//! assimilations,coordination`; the wide variant appends one `pi_s{S}_a{A}`
//! column per state-action pair holding the population-mean policy. Reals are
//! printed with nine significant digits.

use std::io::Write;
use std::path::Path;

use crate::engine::{MetricsRow, MetricsSeries};
use crate::error::{Error, Result};
use crate::rl::state_count;

pub const METRICS_COLUMNS: [&str; 7] = [
    "tick",
    "mean_distance",
    "mean_velocity",
    "events",
    "broadcasts",
    "assimilations",
    "coordination",
];

/// Format like C's `%.{sig}g`.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Nine significant digits, the precision of every CSV real.
pub fn fmt9(x: f64) -> String {
    fmt_sig(x, 9)
}

pub fn policy_column(s: usize, a: usize) -> String {
    format!("pi_s{s}_a{a}")
}

/// Header for a series; wide when its rows carry mean policies.
pub fn metrics_header(series: &MetricsSeries) -> Vec<String> {
    let mut cols: Vec<String> = METRICS_COLUMNS.iter().map(|c| c.to_string()).collect();
    if series.rows.first().is_some_and(|r| r.mean_policy.is_some()) {
        let n = series.n_sectors;
        for s in 0..state_count(n) {
            for a in 0..n {
                cols.push(policy_column(s, a));
            }
        }
    }
    cols
}

pub fn write_metrics<W: Write>(out: W, series: &MetricsSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header = metrics_header(series);
    let wide = header.len() > METRICS_COLUMNS.len();
    w.write_record(&header)?;
    for r in &series.rows {
        let mut rec = vec![
            r.tick.to_string(),
            fmt9(r.mean_distance),
            fmt9(r.mean_velocity),
            r.events.to_string(),
            r.broadcasts.to_string(),
            r.assimilations.to_string(),
            fmt9(r.coordination),
        ];
        if wide {
            let pol = r.mean_policy.as_deref().unwrap_or(&[]);
            if pol.len() != header.len() - METRICS_COLUMNS.len() {
                return Err(csv::Error::from(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("row at tick {} lacks mean-policy columns", r.tick),
                )));
            }
            rec.extend(pol.iter().map(|&p| fmt9(p)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, series: &MetricsSeries) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(std::io::BufWriter::new(file), series).map_err(|e| Error::csv(path, e))
}

fn bad(path: &Path, msg: String) -> Error {
    Error::InvalidInput(format!("{}: {msg}", path.display()))
}

/// Read a metrics CSV written by [`write_metrics_csv`] for `n_sectors`
/// sensors. Wide columns, when present, must cover every state-action pair.
pub fn read_metrics_csv(path: impl AsRef<Path>, n_sectors: usize) -> Result<MetricsSeries> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    for (i, col) in METRICS_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*col) {
            return Err(bad(path, format!("column {i} must be `{col}`")));
        }
    }
    let extra = header.len() - METRICS_COLUMNS.len();
    let wide_len = state_count(n_sectors) * n_sectors;
    if extra != 0 && extra != wide_len {
        return Err(bad(
            path,
            format!("expected 0 or {wide_len} policy columns, found {extra}"),
        ));
    }
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let real = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| {
                bad(
                    path,
                    format!(
                        "row {}: `{}` is not a real in column {}",
                        idx + 2,
                        field(i),
                        header.get(i).unwrap_or("?")
                    ),
                )
            })
        };
        let int = |i: usize| -> Result<u64> {
            field(i).parse().map_err(|_| {
                bad(
                    path,
                    format!(
                        "row {}: `{}` is not an integer in column {}",
                        idx + 2,
                        field(i),
                        header.get(i).unwrap_or("?")
                    ),
                )
            })
        };
        let mean_policy = if extra > 0 {
            Some((7..7 + extra).map(real).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        rows.push(MetricsRow {
            tick: int(0)?,
            mean_distance: real(1)?,
            mean_velocity: real(2)?,
            events: int(3)?,
            broadcasts: int(4)?,
            assimilations: int(5)?,
            coordination: real(6)?,
            mean_policy,
        });
    }
    Ok(MetricsSeries { n_sectors, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting_matches_printf() {
        // Reference strings from C printf("%.9g").
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (2.0 / 3.0, "0.666666667"),
            (999999999.5, "1e+09"),
            (1e300, "1e+300"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt9(x), want, "{x}");
        }
    }

    #[test]
    fn nine_digits_round_trip_within_relative_half_ulp() {
        for &x in &[
            std::f64::consts::PI,
            1.0 / 7.0,
            12345.678901234,
            6.02214076e23,
        ] {
            let back: f64 = fmt9(x).parse().unwrap();
            assert!(((back - x) / x).abs() <= 5e-9, "{x} -> {back}");
        }
    }

    fn series(wide: bool) -> MetricsSeries {
        let rows = (1..=3)
            .map(|i| MetricsRow {
                tick: i * 10,
                mean_distance: i as f64 / 3.0,
                mean_velocity: 1.0 / 30.0,
                events: i * 2,
                broadcasts: i,
                assimilations: 0,
                coordination: 0.75,
                mean_policy: wide.then(|| vec![0.25; 8]),
            })
            .collect();
        MetricsSeries { n_sectors: 2, rows }
    }

    #[test]
    fn narrow_and_wide_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for wide in [false, true] {
            let path = dir.path().join(format!("m{wide}.csv"));
            let s = series(wide);
            write_metrics_csv(&path, &s).unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            let first = text.lines().next().unwrap();
            if wide {
                assert!(first.ends_with("pi_s3_a0,pi_s3_a1"), "{first}");
            } else {
                assert_eq!(first, METRICS_COLUMNS.join(","));
            }
            let back = read_metrics_csv(&path, 2).unwrap();
            assert_eq!(back.rows.len(), 3);
            for (a, b) in s.rows.iter().zip(&back.rows) {
                assert_eq!(a.tick, b.tick);
                assert!((a.mean_distance - b.mean_distance).abs() < 1e-9);
                assert_eq!(a.mean_policy, b.mean_policy);
            }
        }
    }

    #[test]
    fn reader_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "tick,distance\n1,2\n").unwrap();
        assert!(read_metrics_csv(&path, 4).is_err());
    }
}
