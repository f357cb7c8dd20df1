//! Splitting sampled energy among threads by their time on the CPU.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::sched::{Sample, ScheduleTrace};
use crate::time::SimTime;
use crate::units::{Joules, Seconds, Watts};

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadEnergy {
    pub id: String,
    pub priority: u32,
    pub energy: Joules,
    /// Energy over active time; zero if the thread never ran.
    pub mean_power: Watts,
    pub cpu_utilization: f64,
    pub context_switches: u64,
    pub active_time: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub energy: Joules,
    /// Energy over the span of the schedule.
    pub mean_power: Watts,
    pub cpu_utilization: f64,
    pub context_switches: u64,
    pub span: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub threads: Vec<ThreadEnergy>,
    pub unattributed: Joules,
    pub total: Totals,
}

impl EnergyReport {
    pub fn thread(&self, id: &str) -> Option<&ThreadEnergy> {
        self.threads.iter().find(|t| t.id == id)
    }
}

/// CPU share of a periodic job: `min(1, t_proc / interval)`.
pub fn cpu_utilization(sample_interval: Seconds, t_proc: Seconds) -> Result<f64> {
    if !(sample_interval.0 > 0.0) || !(t_proc.0 > 0.0) {
        return Err(invalid("sample interval and processing time must be positive"));
    }
    Ok((t_proc.0 / sample_interval.0).min(1.0))
}

fn ratio(a: SimTime, b: SimTime) -> f64 {
    if b.as_ns() == 0 {
        0.0
    } else {
        a.as_ns() as f64 / b.as_ns() as f64
    }
}

/// Divides each sample's window energy among the threads active in that
/// window, in proportion to their active time. Whatever is left (idle time)
/// goes to `unattributed`.
pub fn attribute(samples: &[Sample], trace: &ScheduleTrace) -> Result<EnergyReport> {
    let n = trace.threads.len();
    let mut energy = vec![0.0; n];
    let mut unattributed = 0.0;
    let mut total = 0.0;
    for s in samples {
        if s.window_start > s.t {
            return Err(invalid(format!("sample at {} has an inverted window", s.t)));
        }
        if s.window_start < trace.start || s.t > trace.end {
            return Err(invalid(format!(
                "sample window [{}, {}] lies outside the schedule span [{}, {}]",
                s.window_start, s.t, trace.start, trace.end
            )));
        }
        let e = s.energy().0;
        total += e;
        let w = s.window();
        if w.as_ns() == 0 {
            unattributed += e;
            continue;
        }
        let first = trace.entries.partition_point(|en| en.end <= s.window_start);
        let mut given = 0.0;
        for en in trace.entries[first..].iter().take_while(|en| en.start < s.t) {
            let a = en.start.max(s.window_start);
            let b = en.end.min(s.t);
            if b > a {
                let share = e * ratio(b - a, w);
                energy[en.thread] += share;
                given += share;
            }
        }
        unattributed += e - given;
    }
    let span = trace.end.saturating_sub(trace.start);
    let threads = trace
        .threads
        .iter()
        .enumerate()
        .map(|(i, info)| {
            let active = trace.active_time(i);
            ThreadEnergy {
                id: info.id.clone(),
                priority: info.priority,
                energy: Joules(energy[i]),
                mean_power: if active.as_ns() == 0 { Watts(0.0) } else { Joules(energy[i]) / active.seconds() },
                cpu_utilization: ratio(active, span),
                context_switches: trace.switches(i),
                active_time: active,
            }
        })
        .collect::<Vec<_>>();
    let busy: u64 = threads.iter().map(|t| t.active_time.as_ns()).sum();
    Ok(EnergyReport {
        total: Totals {
            energy: Joules(total),
            mean_power: if span.as_ns() == 0 { Watts(0.0) } else { Joules(total) / span.seconds() },
            cpu_utilization: ratio(SimTime(busy), span),
            context_switches: trace.context_switches,
            span,
        },
        threads,
        unattributed: Joules(unattributed),
    })
}

/// Plain-text per-thread table in the style of `ps`/`top`.
pub fn render_es(report: &EnergyReport) -> String {
    let mut out = String::new();
    let width = report.threads.iter().map(|t| t.id.len()).max().unwrap_or(0).max("(unattributed)".len());
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>14}  {:>14}",
        "thread", "priority", "switches", "cpu%", "energy J", "mean power W"
    );
    for t in &report.threads {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8.3}  {:>14.6e}  {:>14.6e}",
            t.id,
            t.priority,
            t.context_switches,
            100.0 * t.cpu_utilization,
            t.energy.0,
            t.mean_power.0
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>14.6e}  {:>14}",
        "(unattributed)", "-", "-", "-", report.unattributed.0, "-"
    );
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8.3}  {:>14.6e}  {:>14.6e}",
        "total",
        "-",
        report.total.context_switches,
        100.0 * report.total.cpu_utilization,
        report.total.energy.0,
        report.total.mean_power.0
    );
    out
}
