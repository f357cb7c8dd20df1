//! Executes a scenario and renders every output file in memory.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harvest::{bin_report, simulate, CycleLog, DayBin, EnergyLedger};
use crate::monitor::{RegisterId, ShuntMonitor};
use crate::oracle::{integrate_profile, OracleResult};
use crate::profile::{Owner, PiecewiseProfile};
use crate::sched::{self, attribute, render_es, EnergyReport, NodeRun, Sample, TraceRecord};
use crate::time::SimTime;
use crate::units::Joules;

use super::csvfmt::{fmt9, render};
use super::{Kind, Scenario};

pub const SAMPLES_HEADER: [&str; 5] = ["t_s", "V_V", "I_A", "P_W", "active_thread"];
pub const ENERGY_HEADER: [&str; 3] = ["quantity", "value", "unit"];
pub const HARVEST_LOG_HEADER: [&str; 9] = [
    "t_s",
    "traced",
    "brownout",
    "task_energy_J",
    "charging_W",
    "charging_true_W",
    "v_measured_V",
    "v_true_V",
    "interval_s",
];
pub const DAY_HEADER: [&str; 5] = ["bin_start", "bin_end", "p_use_W", "p_charge_W", "v_cap_end_V"];

/// One measured or oracle quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Measured {
    pub quantity: String,
    pub value: f64,
    pub unit: &'static str,
}

impl Measured {
    fn new(quantity: impl Into<String>, value: f64, unit: &'static str) -> Self {
        Measured { quantity: quantity.into(), value, unit }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    pub duration: SimTime,
    /// Quantities the node itself measured.
    pub measured: Vec<Measured>,
    /// The same quantities from the brute-force integral of ground truth.
    pub oracle: Option<Vec<Measured>>,
    pub ledger: EnergyLedger,
    pub summary: Vec<Measured>,
    pub samples: Vec<(Sample, String)>,
    pub report: Option<EnergyReport>,
    pub node: Option<NodeRun>,
    pub traces: Vec<TraceRecord>,
    pub cycles: Vec<CycleLog>,
    pub day: Vec<DayBin>,
}

impl RunOutcome {
    pub fn measured(&self, quantity: &str) -> Option<f64> {
        self.measured.iter().find(|m| m.quantity == quantity).map(|m| m.value)
    }

    pub fn oracle(&self, quantity: &str) -> Option<f64> {
        self.oracle.as_ref()?.iter().find(|m| m.quantity == quantity).map(|m| m.value)
    }

    pub fn summary(&self, quantity: &str) -> Option<f64> {
        self.summary.iter().find(|m| m.quantity == quantity).map(|m| m.value)
    }
}

/// Runs `scn` with its own seed.
pub fn run_scenario(scn: &Scenario) -> Result<RunOutcome> {
    match scn.kind {
        Kind::Static => run_static(scn),
        Kind::Node => run_node(scn),
        Kind::Harvest => run_harvest(scn),
    }
}

/// Runs `scn` and writes all outputs into `dir` (created if missing).
/// Returns the outcome and the names of the files written.
pub fn run_to_dir(scn: &Scenario, dir: &Path) -> Result<(RunOutcome, Vec<String>)> {
    let out = run_scenario(scn)?;
    let files = render_outputs(scn, &out)?;
    std::fs::create_dir_all(dir)?;
    for (name, body) in &files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok((out, files.into_iter().map(|(n, _)| n).collect()))
}

fn oracle_total(scn: &Scenario, profile: &PiecewiseProfile, n: usize, t0: SimTime, t1: SimTime) -> OracleResult {
    integrate_profile(profile, n, t0, t1, scn.oracle_step, Default::default())
}

/// Ledger for a supply-powered node: what the supply delivered (exact
/// profile integral plus overheads) against the brute-force integral of the
/// same load plus the overheads. Nothing is stored.
fn supply_ledger(exact: f64, brute: f64, monitor: Joules, bus: Joules, shunt_loss: Joules) -> EnergyLedger {
    let overhead = monitor + bus + shunt_loss;
    EnergyLedger {
        e_in: Joules(exact) + overhead,
        e_out: Joules(brute),
        e_overhead: overhead,
        monitor_supply: monitor,
        bus,
        shunt_loss,
        ..Default::default()
    }
}

fn ledger_rows(l: &EnergyLedger) -> Vec<Measured> {
    vec![
        Measured::new("ledger_e_in", l.e_in.0, "J"),
        Measured::new("ledger_e_out", l.e_out.0, "J"),
        Measured::new("ledger_e_overhead", l.e_overhead.0, "J"),
        Measured::new("ledger_e_unharvested", l.e_unharvested.0, "J"),
        Measured::new("ledger_delta_store", (l.store_end - l.store_start).0, "J"),
        Measured::new("ledger_relative_residual", l.relative_residual(), "1"),
        Measured::new("overhead_monitor_supply", l.monitor_supply.0, "J"),
        Measured::new("overhead_bus", l.bus.0, "J"),
        Measured::new("overhead_shunt_loss", l.shunt_loss.0, "J"),
    ]
}

fn deltas(measured: &[Measured], oracle: &Option<Vec<Measured>>) -> Vec<Measured> {
    let mut out = Vec::new();
    let Some(oracle) = oracle else { return out };
    for m in measured {
        if let Some(o) = oracle.iter().find(|o| o.quantity == m.quantity) {
            out.push(Measured::new(format!("delta_{}", m.quantity), m.value - o.value, m.unit));
        }
    }
    out
}

fn run_static(scn: &Scenario) -> Result<RunOutcome> {
    let load = scn.load.ok_or_else(|| Error::Validation("static scenario without a load".into()))?;
    let mut monitor = scn.make_monitor(scn.monitor, scn.seed)?;
    let mut profile = PiecewiseProfile::new();
    profile.extend_to(scn.duration, load.voltage, &[(Owner::Unattributed, load.current)]);
    let period = scn.monitor.sample_period();
    let mut samples = Vec::new();
    let mut t = period;
    while t <= scn.duration {
        monitor.advance(&load, t)?;
        let regs = monitor.registers();
        let v = monitor.bus_volts(regs.get(RegisterId::BusVoltage).expect("data register"));
        let i = monitor.current_amps(regs.get(RegisterId::Current).expect("data register"));
        samples.push((
            Sample { t, window_start: t - period, read_at: t, voltage: v, current: i, power: v * i },
            "load".to_string(),
        ));
        t = t + period;
    }
    monitor.advance(&load, scn.duration)?;
    let span_end = samples.last().map(|(s, _)| s.t).unwrap_or(SimTime::ZERO);
    let measured_total: f64 = samples.iter().map(|(s, _)| s.energy().0).sum();
    let measured = vec![Measured::new("total", measured_total, "J")];

    let shunt_loss = Joules(load.current * load.current * scn.r_shunt.0 * scn.duration.as_secs_f64());
    let exact = profile.energy(SimTime::ZERO, scn.duration);
    let (oracle, brute) = if scn.oracle {
        let head = oracle_total(scn, &profile, 0, SimTime::ZERO, span_end);
        let tail = oracle_total(scn, &profile, 0, span_end, scn.duration);
        (Some(vec![Measured::new("total", head.total.0, "J")]), head.total.0 + tail.total.0)
    } else {
        (None, exact)
    };
    let ledger = supply_ledger(exact, brute, monitor.supply_energy(), Joules(0.0), shunt_loss);

    let mut summary = vec![
        Measured::new("duration_s", scn.duration.as_secs_f64(), "s"),
        Measured::new("samples", samples.len() as f64, "1"),
        Measured::new("load_current", load.current, "A"),
        Measured::new("load_voltage", load.voltage, "V"),
        Measured::new("measured_total", measured_total, "J"),
        Measured::new("exact_total", profile.energy(SimTime::ZERO, span_end), "J"),
    ];
    summary.extend(deltas(&measured, &oracle));
    summary.extend(ledger_rows(&ledger));
    Ok(RunOutcome {
        name: scn.name.clone(),
        kind: scn.kind,
        seed: scn.seed,
        duration: scn.duration,
        measured,
        oracle,
        ledger,
        summary,
        samples,
        report: None,
        node: None,
        traces: Vec::new(),
        cycles: Vec::new(),
        day: Vec::new(),
    })
}

fn thread_quantity(id: &str) -> String {
    format!("thread:{id}")
}

fn run_node(scn: &Scenario) -> Result<RunOutcome> {
    let monitor: ShuntMonitor = scn.make_monitor(scn.monitor, scn.seed)?;
    let run = sched::run(&scn.threads, &scn.node, monitor, &scn.bus, scn.duration)?;
    let report = attribute(&run.samples, &run.trace)?;
    let n = run.trace.threads.len();
    let span_end = run.samples.last().map(|s| s.t).unwrap_or(SimTime::ZERO);

    let mut measured = vec![Measured::new("total", report.total.energy.0, "J")];
    for t in &report.threads {
        measured.push(Measured::new(thread_quantity(&t.id), t.energy.0, "J"));
    }
    measured.push(Measured::new("unattributed", report.unattributed.0, "J"));

    let exact = run.profile.energy(SimTime::ZERO, scn.duration);
    let (oracle, brute) = if scn.oracle {
        let head = oracle_total(scn, &run.profile, n, SimTime::ZERO, span_end);
        let tail = oracle_total(scn, &run.profile, n, span_end, scn.duration);
        let mut o = vec![Measured::new("total", head.total.0, "J")];
        for (t, e) in run.trace.threads.iter().zip(&head.threads) {
            o.push(Measured::new(thread_quantity(&t.id), e.0, "J"));
        }
        o.push(Measured::new("unattributed", head.unattributed.0, "J"));
        (Some(o), head.total.0 + tail.total.0)
    } else {
        (None, exact)
    };
    let ledger = supply_ledger(exact, brute, run.overhead.monitor_supply, run.overhead.bus, run.overhead.shunt_loss);

    let starvation = run.diagnostics.iter().filter(|d| matches!(d, sched::Diagnostic::Starvation { .. })).count();
    let missed = run.diagnostics.iter().filter(|d| matches!(d, sched::Diagnostic::MissedSample { .. })).count();
    let meas = &report.threads[run.measurement_thread];
    let mut summary = vec![
        Measured::new("duration_s", scn.duration.as_secs_f64(), "s"),
        Measured::new("samples", run.samples.len() as f64, "1"),
        Measured::new("context_switches", run.trace.context_switches as f64, "1"),
        Measured::new("measurement_cpu_utilization", meas.cpu_utilization, "1"),
        Measured::new("starvation_events", starvation as f64, "1"),
        Measured::new("missed_samples", missed as f64, "1"),
        Measured::new("measured_total", report.total.energy.0, "J"),
    ];
    for t in &report.threads {
        summary.push(Measured::new(format!("energy_{}", t.id), t.energy.0, "J"));
    }
    summary.push(Measured::new("energy_unattributed", report.unattributed.0, "J"));
    summary.extend(deltas(&measured, &oracle));
    summary.extend(ledger_rows(&ledger));

    let samples = run
        .samples
        .iter()
        .map(|s| {
            let who = run
                .trace
                .running_at(s.t.saturating_sub(SimTime::from_ns(1)))
                .map(|k| run.trace.threads[k].id.clone())
                .unwrap_or_else(|| "idle".into());
            (*s, who)
        })
        .collect();
    Ok(RunOutcome {
        name: scn.name.clone(),
        kind: scn.kind,
        seed: scn.seed,
        duration: scn.duration,
        measured,
        oracle,
        ledger,
        summary,
        samples,
        report: Some(report),
        traces: run.traces.clone(),
        node: Some(run),
        cycles: Vec::new(),
        day: Vec::new(),
    })
}

fn run_harvest(scn: &Scenario) -> Result<RunOutcome> {
    let cfg = scn.harvest.clone().ok_or_else(|| Error::Validation("harvest scenario without [harvest]".into()))?;
    let v_initial = cfg.cap.v_now;
    let monitor = scn.make_monitor(cfg.charge_monitor, scn.seed)?;
    let run = simulate(cfg, monitor, scn.bus.clone(), scn.duration, scn.oracle.then_some(scn.oracle_step))?;
    let bin = SimTime::from_secs_f64(scn.output.bin_s);
    let day = bin_report(&run.cycles, run.duration, bin, v_initial)?;

    let live = run.cycles.iter().filter(|c| !c.brownout);
    let task: f64 = live.clone().map(|c| c.task_energy.0).sum();
    let charging: f64 = live.map(|c| c.charging.0 * c.interval.0).sum();
    let measured = vec![Measured::new("task_energy", task, "J"), Measured::new("charging_energy", charging, "J")];
    let oracle = run.oracle.as_ref().map(|o| {
        vec![
            Measured::new("task_energy", o.threads[crate::harvest::node::TASK_OWNER].0, "J"),
            Measured::new("charging_energy", o.charging.map_or(0.0, |j| j.0), "J"),
        ]
    });
    let ledger = run.ledger;
    let mut summary = vec![
        Measured::new("duration_s", run.duration.as_secs_f64(), "s"),
        Measured::new("end_s", run.end.as_secs_f64(), "s"),
        Measured::new("cycles", run.cycles.len() as f64, "1"),
        Measured::new("brownouts", run.cycles.iter().filter(|c| c.brownout).count() as f64, "1"),
        Measured::new("traced_cycles", run.traces.len() as f64, "1"),
        Measured::new("v_cap_initial_V", v_initial.0, "V"),
        Measured::new("v_cap_end_V", run.cap.v_now.0, "V"),
        Measured::new("unserved", ledger.e_unserved.0, "J"),
    ];
    summary.extend(deltas(&measured, &oracle));
    summary.extend(ledger_rows(&ledger));
    let samples = run.samples.iter().map(|s| (*s, "task".to_string())).collect();
    Ok(RunOutcome {
        name: scn.name.clone(),
        kind: scn.kind,
        seed: scn.seed,
        duration: scn.duration,
        measured,
        oracle,
        ledger,
        summary,
        samples,
        report: None,
        node: None,
        traces: run.traces,
        cycles: run.cycles,
        day,
    })
}

fn secs(t: SimTime) -> String {
    fmt9(t.as_secs_f64())
}

fn quantity_rows(q: &[Measured]) -> Vec<Vec<String>> {
    q.iter().map(|m| vec![m.quantity.clone(), fmt9(m.value), m.unit.to_string()]).collect()
}

pub fn render_samples(samples: &[(Sample, String)]) -> Result<String> {
    render(
        &SAMPLES_HEADER,
        samples.iter().map(|(s, who)| {
            vec![secs(s.t), fmt9(s.voltage.0), fmt9(s.current.0), fmt9(s.power.0), who.clone()]
        }),
    )
}

pub fn render_day(day: &[DayBin]) -> Result<String> {
    render(
        &DAY_HEADER,
        day.iter().map(|b| {
            vec![fmt9(b.bin_start.0), fmt9(b.bin_end.0), fmt9(b.p_use.0), fmt9(b.p_charge.0), fmt9(b.v_cap_end.0)]
        }),
    )
}

fn trace_file(rec: &TraceRecord, k: usize) -> String {
    let safe: String =
        rec.label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("trace_{safe}_{k}.csv")
}

/// Every output file of a run as (file name, contents), in a fixed order.
pub fn render_outputs(scn: &Scenario, out: &RunOutcome) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        ("scenario.scn".to_string(), scn.source.clone()),
        ("summary.csv".to_string(), render(&ENERGY_HEADER, quantity_rows(&out.summary))?),
        ("measured.csv".to_string(), render(&ENERGY_HEADER, quantity_rows(&out.measured))?),
    ];
    if let Some(o) = &out.oracle {
        files.push(("oracle.csv".into(), render(&ENERGY_HEADER, quantity_rows(o))?));
    }
    if scn.output.samples {
        files.push(("samples.csv".into(), render_samples(&out.samples)?));
    }
    if let Some(r) = &out.report {
        files.push(("es_report.txt".into(), render_es(r)));
    }
    if let Some(run) = &out.node {
        let t = &run.trace;
        files.push((
            "schedule.csv".into(),
            render(
                &["thread", "start_s", "end_s"],
                t.entries.iter().map(|e| vec![t.threads[e.thread].id.clone(), secs(e.start), secs(e.end)]),
            )?,
        ));
        files.push((
            "diagnostics.csv".into(),
            render(
                &["kind", "t_s", "detected_s"],
                run.diagnostics.iter().map(|d| match d {
                    sched::Diagnostic::Starvation { alert_at, detected_at } => {
                        vec!["starvation".into(), secs(*alert_at), secs(*detected_at)]
                    }
                    sched::Diagnostic::MissedSample { t } => vec!["missed_sample".into(), secs(*t), String::new()],
                }),
            )?,
        ));
    }
    if !out.traces.is_empty() || out.kind != Kind::Static {
        let mut k_of = std::collections::BTreeMap::<&str, usize>::new();
        let mut index = Vec::new();
        for rec in &out.traces {
            let k = k_of.entry(rec.label.as_str()).or_insert(0);
            let file = trace_file(rec, *k);
            *k += 1;
            let gap: u64 = rec.gaps.iter().map(|(a, b)| (*b - *a).as_ns()).sum();
            index.push(vec![
                rec.label.clone(),
                secs(rec.start),
                secs(rec.end),
                fmt9(rec.aggregate.0),
                rec.samples.len().to_string(),
                fmt9(SimTime(gap).as_secs_f64()),
                if scn.output.traces && !rec.samples.is_empty() { file.clone() } else { String::new() },
            ]);
            if scn.output.traces && !rec.samples.is_empty() {
                let body = render(
                    &["t_s", "V_V", "I_A", "P_W"],
                    rec.samples.iter().map(|p| vec![secs(p.t), fmt9(p.voltage.0), fmt9(p.current.0), fmt9(p.power.0)]),
                )?;
                files.push((file, body));
            }
        }
        files.push((
            "traces.csv".into(),
            render(&["label", "start_s", "end_s", "energy_J", "samples", "gap_s", "file"], index)?,
        ));
    }
    if out.kind == Kind::Harvest {
        files.push((
            "harvest_log.csv".into(),
            render(
                &HARVEST_LOG_HEADER,
                out.cycles.iter().map(|c| {
                    vec![
                        secs(c.t),
                        u8::from(c.traced).to_string(),
                        u8::from(c.brownout).to_string(),
                        fmt9(c.task_energy.0),
                        fmt9(c.charging.0),
                        fmt9(c.charging_true.0),
                        fmt9(c.v_measured.0),
                        fmt9(c.v_true.0),
                        fmt9(c.interval.0),
                    ]
                }),
            )?,
        ));
        files.push(("day_report.csv".into(), render_day(&out.day)?));
    }
    Ok(files)
}
