//! Post-processing verbs: seed sweeps, oracle comparison and binned reports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::{map_with, Strategy};
use crate::harvest::{bin_report, CycleLog};
use crate::profile::ConstantProfile;
use crate::time::SimTime;
use crate::units::{Joules, Seconds, Volts, Watts};

use super::csvfmt::{fmt9, parse_f64, read, render};
use super::runner::{render_day, run_scenario, ENERGY_HEADER, HARVEST_LOG_HEADER, SAMPLES_HEADER};
use super::{Kind, Scenario};

pub const ERRORS_HEADER: [&str; 5] = ["quantity", "measured", "oracle", "abs_error", "rel_error"];
pub const SWEEP_HEADER: [&str; 7] = ["current_a", "seed", "measured_J", "oracle_J", "abs_error_J", "rel_error", "abs_dev_A"];
pub const SWEEP_ERRORS_HEADER: [&str; 7] =
    ["current_a", "runs", "median_rel_error", "p05_rel_error", "p95_rel_error", "max_rel_error", "mean_abs_dev_A"];

/// Parses a bin length such as `2h`, `90min` or a plain number of seconds.
pub fn parse_duration(s: &str) -> Result<SimTime> {
    if let Ok(secs) = s.trim().parse::<f64>() {
        if secs > 0.0 && secs.is_finite() {
            return Ok(SimTime::from_secs_f64(secs));
        }
    }
    let d = humantime::parse_duration(s.trim()).map_err(|e| Error::Validation(format!("bad duration `{s}`: {e}")))?;
    if d.is_zero() {
        return Err(Error::Validation(format!("bad duration `{s}`: must be positive")));
    }
    Ok(SimTime::from_ns(d.as_nanos() as u64))
}

fn rel_error(measured: f64, oracle: f64) -> f64 {
    let abs = (measured - oracle).abs();
    if abs == 0.0 {
        0.0
    } else if oracle == 0.0 {
        f64::INFINITY
    } else {
        abs / oracle.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub quantity: String,
    pub measured: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub current: f64,
    pub seed: u64,
    pub measured: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Absolute error expressed as a mean current over the measured span.
    pub abs_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGroup {
    pub current: f64,
    pub runs: usize,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
    pub max: f64,
    pub mean_abs_dev: f64,
}

/// Least-squares line through (current, mean absolute deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    Run(Vec<ErrorRow>),
    Sweep { groups: Vec<SweepGroup>, fit: Option<Fit> },
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn fit_line(points: &[(f64, f64)]) -> Option<Fit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(Fit { slope, intercept: my - slope * mx, r2 })
}

/// Runs `n` seeds (starting at the scenario's own) at every sweep current,
/// or at the scenario's load if none are listed. Rows come back ordered by
/// current, then seed, whatever the strategy.
pub fn sweep_runs(scn: &Scenario, n: u64, strategy: Strategy) -> Result<Vec<SweepRow>> {
    if !scn.oracle {
        return Err(Error::Validation(format!("{}: sweeps need the oracle enabled", scn.name)));
    }
    if n == 0 {
        return Err(Error::Validation("sweep needs at least one seed".into()));
    }
    let currents: Vec<Option<f64>> = if scn.kind == Kind::Static && !scn.sweep_currents.is_empty() {
        scn.sweep_currents.iter().map(|&i| Some(i)).collect()
    } else {
        vec![None]
    };
    let jobs: Vec<(Option<f64>, u64)> =
        currents.iter().flat_map(|&c| (0..n).map(move |k| (c, k))).collect();
    let results = map_with(strategy, jobs.len(), |j| {
        let (current, k) = jobs[j];
        let mut s = scn.with_seed(scn.seed.wrapping_add(k));
        if let (Some(i), Some(l)) = (current, s.load.as_mut()) {
            *l = ConstantProfile { current: i, voltage: l.voltage };
        }
        let out = run_scenario(&s)?;
        let q = out.measured.first().ok_or_else(|| Error::Missing("no measured quantity".into()))?;
        let m = q.value;
        let o = out.oracle(&q.quantity).ok_or_else(|| Error::Missing("no oracle data".into()))?;
        let span = out.summary("samples").unwrap_or(0.0) * s.monitor.sample_period().as_secs_f64();
        let v = s.load.map(|l| l.voltage).unwrap_or(s.node.supply.0);
        let abs = (m - o).abs();
        Ok(SweepRow {
            current: s.load.map(|l| l.current).unwrap_or(0.0),
            seed: s.seed,
            measured: m,
            oracle: o,
            abs_error: abs,
            rel_error: rel_error(m, o),
            abs_dev: if span > 0.0 { abs / (v * span) } else { 0.0 },
        })
    });
    results.into_iter().collect()
}

/// Percentiles per current and the linear fit of deviation against current.
pub fn summarize(rows: &[SweepRow]) -> (Vec<SweepGroup>, Option<Fit>) {
    let mut by: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.current.to_bits()).or_default().push(r);
    }
    let mut groups: Vec<SweepGroup> = by
        .values()
        .map(|g| {
            let mut rel: Vec<f64> = g.iter().map(|r| r.rel_error).collect();
            rel.sort_by(f64::total_cmp);
            SweepGroup {
                current: g[0].current,
                runs: g.len(),
                median: percentile(&rel, 0.5),
                p05: percentile(&rel, 0.05),
                p95: percentile(&rel, 0.95),
                max: *rel.last().expect("non-empty group"),
                mean_abs_dev: g.iter().map(|r| r.abs_dev).sum::<f64>() / g.len() as f64,
            }
        })
        .collect();
    groups.sort_by(|a, b| a.current.total_cmp(&b.current));
    let fit = fit_line(&groups.iter().map(|g| (g.current, g.mean_abs_dev)).collect::<Vec<_>>());
    (groups, fit)
}

/// Runs a seed sweep and writes `sweep.csv`, `sweep_errors.csv` and, with
/// two or more currents, `fit.csv` into `dir`.
pub fn sweep(scn: &Scenario, n: u64, dir: &Path) -> Result<(Vec<SweepGroup>, Option<Fit>)> {
    let rows = sweep_runs(scn, n, Strategy::default())?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scenario.scn"), &scn.source)?;
    let body = render(
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                fmt9(r.current),
                r.seed.to_string(),
                fmt9(r.measured),
                fmt9(r.oracle),
                fmt9(r.abs_error),
                fmt9(r.rel_error),
                fmt9(r.abs_dev),
            ]
        }),
    )?;
    std::fs::write(dir.join("sweep.csv"), body)?;
    match compare(dir)? {
        Comparison::Sweep { groups, fit } => Ok((groups, fit)),
        Comparison::Run(_) => unreachable!("sweep directory compares as a sweep"),
    }
}

fn read_quantities(path: &Path) -> Result<Vec<(String, f64)>> {
    read(path, &ENERGY_HEADER)?
        .iter()
        .map(|r| Ok((r.get(0).unwrap_or_default().to_string(), parse_f64(r, 1, path)?)))
        .collect()
}

/// Compares a run directory against its oracle and writes `errors.csv`, or
/// summarizes a sweep directory into `sweep_errors.csv` and `fit.csv`.
pub fn compare(dir: &Path) -> Result<Comparison> {
    let sweep_file = dir.join("sweep.csv");
    if sweep_file.exists() {
        let rows = read(&sweep_file, &SWEEP_HEADER)?
            .iter()
            .map(|r| {
                Ok(SweepRow {
                    current: parse_f64(r, 0, &sweep_file)?,
                    seed: parse_f64(r, 1, &sweep_file)? as u64,
                    measured: parse_f64(r, 2, &sweep_file)?,
                    oracle: parse_f64(r, 3, &sweep_file)?,
                    abs_error: parse_f64(r, 4, &sweep_file)?,
                    rel_error: parse_f64(r, 5, &sweep_file)?,
                    abs_dev: parse_f64(r, 6, &sweep_file)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (groups, fit) = summarize(&rows);
        let body = render(
            &SWEEP_ERRORS_HEADER,
            groups.iter().map(|g| {
                vec![
                    fmt9(g.current),
                    g.runs.to_string(),
                    fmt9(g.median),
                    fmt9(g.p05),
                    fmt9(g.p95),
                    fmt9(g.max),
                    fmt9(g.mean_abs_dev),
                ]
            }),
        )?;
        std::fs::write(dir.join("sweep_errors.csv"), body)?;
        if let Some(f) = fit {
            let rows = vec![
                vec!["slope".into(), fmt9(f.slope), "A/A".into()],
                vec!["intercept".into(), fmt9(f.intercept), "A".into()],
                vec!["r2".into(), fmt9(f.r2), "1".into()],
            ];
            std::fs::write(dir.join("fit.csv"), render(&ENERGY_HEADER, rows)?)?;
        }
        return Ok(Comparison::Sweep { groups, fit });
    }

    let measured_file = dir.join("measured.csv");
    let oracle_file = dir.join("oracle.csv");
    if !measured_file.exists() {
        return Err(Error::Missing(format!("{}: not a run directory", dir.display())));
    }
    if !oracle_file.exists() {
        return Err(Error::Missing(format!("{}: run has no oracle data", dir.display())));
    }
    let measured = read_quantities(&measured_file)?;
    let oracle: BTreeMap<String, f64> = read_quantities(&oracle_file)?.into_iter().collect();
    let mut rows = Vec::new();
    for (q, m) in measured {
        let o = *oracle.get(&q).ok_or_else(|| Error::Missing(format!("oracle has no value for `{q}`")))?;
        rows.push(ErrorRow { quantity: q, measured: m, oracle: o, abs_error: (m - o).abs(), rel_error: rel_error(m, o) });
    }
    let body = render(
        &ERRORS_HEADER,
        rows.iter().map(|r| {
            vec![r.quantity.clone(), fmt9(r.measured), fmt9(r.oracle), fmt9(r.abs_error), fmt9(r.rel_error)]
        }),
    )?;
    std::fs::write(dir.join("errors.csv"), body)?;
    Ok(Comparison::Run(rows))
}

fn summary_value(dir: &Path, quantity: &str) -> Result<f64> {
    read_quantities(&dir.join("summary.csv"))?
        .into_iter()
        .find(|(q, _)| q == quantity)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Missing(format!("{}: summary has no `{quantity}`", dir.display())))
}

/// Re-bins a run. Harvest runs get `day_report.csv` rebuilt from the cycle
/// log; other runs get `binned_samples.csv` from the sample series. Returns
/// the name of the file written.
pub fn report(dir: &Path, bin: SimTime) -> Result<String> {
    if bin.as_ns() == 0 {
        return Err(Error::Validation("bin length must be positive".into()));
    }
    let duration = SimTime::from_secs_f64(summary_value(dir, "duration_s")?);
    let log = dir.join("harvest_log.csv");
    if log.exists() {
        let v0 = Volts(summary_value(dir, "v_cap_initial_V")?);
        let cycles = read(&log, &HARVEST_LOG_HEADER)?
            .iter()
            .map(|r| {
                Ok(CycleLog {
                    t: SimTime::from_secs_f64(parse_f64(r, 0, &log)?),
                    traced: parse_f64(r, 1, &log)? != 0.0,
                    brownout: parse_f64(r, 2, &log)? != 0.0,
                    task_energy: Joules(parse_f64(r, 3, &log)?),
                    charging: Watts(parse_f64(r, 4, &log)?),
                    charging_true: Watts(parse_f64(r, 5, &log)?),
                    v_measured: Volts(parse_f64(r, 6, &log)?),
                    v_true: Volts(parse_f64(r, 7, &log)?),
                    interval: Seconds(parse_f64(r, 8, &log)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let day = bin_report(&cycles, duration, bin, v0)?;
        std::fs::write(dir.join("day_report.csv"), render_day(&day)?)?;
        return Ok("day_report.csv".into());
    }
    let samples = dir.join("samples.csv");
    if !samples.exists() {
        return Err(Error::Missing(format!("{}: no samples.csv or harvest_log.csv to bin", dir.display())));
    }
    let pts = read(&samples, &SAMPLES_HEADER)?
        .iter()
        .map(|r| Ok((parse_f64(r, 0, &samples)?, parse_f64(r, 3, &samples)?)))
        .collect::<Result<Vec<_>>>()?;
    let width = bin.as_secs_f64();
    let n = duration.as_ns().div_ceil(bin.as_ns()) as usize;
    let mut energy = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut prev = 0.0;
    for (t, p) in pts {
        let k = ((t / width).ceil() as usize).saturating_sub(1).min(n.saturating_sub(1));
        if n > 0 {
            energy[k] += p * (t - prev);
            count[k] += 1;
        }
        prev = t;
    }
    let total = duration.as_secs_f64();
    let rows = (0..n).map(|k| {
        let a = k as f64 * width;
        let b = ((k + 1) as f64 * width).min(total);
        vec![
            fmt9(a),
            fmt9(b),
            fmt9(energy[k]),
            fmt9(if b > a { energy[k] / (b - a) } else { 0.0 }),
            count[k].to_string(),
        ]
    });
    std::fs::write(
        dir.join("binned_samples.csv"),
        render(&["bin_start", "bin_end", "energy_J", "mean_power_W", "samples"], rows)?,
    )?;
    Ok("binned_samples.csv".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("2h").unwrap(), SimTime::from_ms(7_200_000));
        assert_eq!(parse_duration("90min").unwrap(), SimTime::from_ms(5_400_000));
        assert_eq!(parse_duration("0.5").unwrap(), SimTime::from_ms(500));
        assert!(parse_duration("0").is_err());
        assert!(parse_duration("soon").is_err());
    }

    #[test]
    fn percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.25), 2.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn line_fit() {
        let f = fit_line(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(fit_line(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn relative_error_edges() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!(rel_error(1.0, 0.0).is_infinite());
        assert!((rel_error(1.01, 1.0) - 0.01).abs() < 1e-12);
    }
}
