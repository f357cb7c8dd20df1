//! Tickless priority scheduler model with a measurement thread.
//!
//! The loop always runs the most urgent ready thread (lowest priority value,
//! FIFO among equals) and jumps straight to the next event: a compute slice
//! ending, a blocked thread waking, or a monitor alert. Every stretch between
//! events is appended to the ground-truth load profile with the current split
//! by owner, which is what the monitor samples and the oracle integrates.

pub mod attribution;
pub mod random;
pub mod trace;

use std::collections::{HashSet, VecDeque};

pub use attribution::{attribute, cpu_utilization, render_es, EnergyReport, ThreadEnergy, Totals};
pub use random::{random_threads, RandomSpec};
pub use trace::{series_energy, TraceMode, TracePoint, TraceRecord, Tracer};

use crate::bus::BusLink;
use crate::error::{invalid, Result};
use crate::monitor::{ConversionEvent, RegisterId, ShuntMonitor};
use crate::profile::{Owner, PiecewiseProfile};
use crate::time::SimTime;
use crate::units::{Amps, Joules, Volts, Watts};

/// Name of the built-in measurement thread.
pub const MEASUREMENT_THREAD: &str = "measure";

/// One step of a scripted thread.
#[derive(Debug, Clone, PartialEq)]
pub enum Activity {
    /// Occupy the CPU; the node draws `current` while this slice runs.
    Compute { duration: SimTime, current: Amps },
    /// Block without drawing anything extra.
    Sleep { duration: SimTime },
    /// Block while a peripheral started by this thread draws `current`.
    Io { duration: SimTime, current: Amps },
    TraceStart(String),
    TraceStop(String),
}

impl Activity {
    fn duration(&self) -> SimTime {
        match self {
            Activity::Compute { duration, .. } | Activity::Sleep { duration } | Activity::Io { duration, .. } => {
                *duration
            }
            _ => SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadSpec {
    pub id: String,
    /// Lower is more urgent.
    pub priority: u32,
    pub script: Vec<Activity>,
    /// Restart the script when it ends instead of exiting.
    pub repeat: bool,
}

impl ThreadSpec {
    pub fn new(id: impl Into<String>, priority: u32, script: Vec<Activity>, repeat: bool) -> Self {
        ThreadSpec { id: id.into(), priority, script, repeat }
    }
}

/// How the measurement thread services monitor alerts.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSpec {
    pub priority: u32,
    /// CPU time per sample, from the first register read to unit conversion.
    pub t_proc: SimTime,
    /// Node current while the measurement thread runs.
    pub mcu_current: Amps,
    /// Registers read per sample, in order.
    pub reads: Vec<RegisterId>,
    /// Report starvation when an alert waits longer than this; defaults to one sample period.
    pub starvation_deadline: Option<SimTime>,
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        MeasurementSpec {
            priority: 0,
            t_proc: SimTime::from_us(160),
            mcu_current: Amps(12e-3),
            reads: vec![RegisterId::MaskEnable, RegisterId::BusVoltage, RegisterId::Current],
            starvation_deadline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub supply: Volts,
    /// Node current while no thread runs.
    pub idle_current: Amps,
    pub measurement: MeasurementSpec,
    pub trace_mode: TraceMode,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            supply: Volts(2.7),
            idle_current: Amps(30e-6 / 2.7),
            measurement: MeasurementSpec::default(),
            trace_mode: TraceMode::Series,
        }
    }
}

/// One sample as the measurement thread read it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Conversion completion.
    pub t: SimTime,
    /// Start of the conversion window this sample averages.
    pub window_start: SimTime,
    /// When the registers were read.
    pub read_at: SimTime,
    pub voltage: Volts,
    pub current: Amps,
    pub power: Watts,
}

impl Sample {
    pub fn window(&self) -> SimTime {
        self.t - self.window_start
    }

    pub fn energy(&self) -> Joules {
        self.power * self.window().seconds()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadInfo {
    pub id: String,
    pub priority: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub thread: usize,
    pub start: SimTime,
    pub end: SimTime,
}

/// Which thread held the CPU when. Gaps are idle time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub threads: Vec<ThreadInfo>,
    pub entries: Vec<ScheduleEntry>,
    pub context_switches: u64,
    pub start: SimTime,
    pub end: SimTime,
}

impl ScheduleTrace {
    pub fn thread_index(&self, id: &str) -> Option<usize> {
        self.threads.iter().position(|t| t.id == id)
    }

    pub fn active_time(&self, thread: usize) -> SimTime {
        SimTime(self.entries.iter().filter(|e| e.thread == thread).map(|e| (e.end - e.start).as_ns()).sum())
    }

    pub fn switches(&self, thread: usize) -> u64 {
        self.entries.iter().filter(|e| e.thread == thread).count() as u64
    }

    /// Thread on the CPU at `t`, if any.
    pub fn running_at(&self, t: SimTime) -> Option<usize> {
        let i = self.entries.partition_point(|e| e.end <= t);
        self.entries.get(i).filter(|e| e.start <= t).map(|e| e.thread)
    }

    fn push(&mut self, thread: usize, start: SimTime, end: SimTime) {
        if let Some(last) = self.entries.last_mut() {
            if last.thread == thread && last.end == start {
                last.end = end;
                return;
            }
        }
        self.entries.push(ScheduleEntry { thread, start, end });
        self.context_switches += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    /// The measurement thread did not start servicing an alert within the deadline.
    Starvation { alert_at: SimTime, detected_at: SimTime },
    /// A conversion was overwritten before it was read.
    MissedSample { t: SimTime },
}

/// Energy spent on measuring rather than on the application.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overhead {
    pub monitor_supply: Joules,
    pub bus: Joules,
    pub shunt_loss: Joules,
}

#[derive(Debug, Clone)]
pub struct NodeRun {
    pub trace: ScheduleTrace,
    pub samples: Vec<Sample>,
    pub profile: PiecewiseProfile,
    pub traces: Vec<TraceRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub overhead: Overhead,
    pub duration: SimTime,
    pub measurement_thread: usize,
    pub supply: Volts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Ready,
    Blocked { until: SimTime, io: Option<f64> },
    /// Measurement thread waiting for an alert.
    Waiting,
    Done,
}

struct Runner {
    state: State,
    pc: usize,
    remaining: u64,
    current: f64,
    seq: u64,
}

struct Loop<'a> {
    specs: &'a [ThreadSpec],
    node: &'a NodeConfig,
    runners: Vec<Runner>,
    meas: usize,
    seq: u64,
    tracer: Tracer,
    samples: Vec<Sample>,
    pending_alerts: VecDeque<SimTime>,
    job_started: bool,
    job_alert: Option<SimTime>,
    starvation_reported: bool,
    last_event: Option<ConversionEvent>,
    diagnostics: Vec<Diagnostic>,
    bus_energy: f64,
}

impl<'a> Loop<'a> {
    fn make_ready(&mut self, i: usize) {
        self.seq += 1;
        self.runners[i].state = State::Ready;
        self.runners[i].seq = self.seq;
    }

    fn select(&self) -> Option<usize> {
        self.runners
            .iter()
            .enumerate()
            .filter(|(_, r)| r.state == State::Ready)
            .min_by_key(|(i, r)| (self.priority(*i), r.seq, *i))
            .map(|(i, _)| i)
    }

    fn priority(&self, i: usize) -> u32 {
        if i == self.meas {
            self.node.measurement.priority
        } else {
            self.specs[i].priority
        }
    }

    /// Runs zero-time steps from `pc` until the thread computes, blocks or exits.
    fn step_script(&mut self, i: usize, now: SimTime) -> Result<()> {
        let spec = &self.specs[i];
        let mut wrapped = false;
        loop {
            let r = &mut self.runners[i];
            if r.pc >= spec.script.len() {
                if spec.repeat && !wrapped {
                    r.pc = 0;
                    wrapped = true;
                    continue;
                }
                r.state = State::Done;
                return Ok(());
            }
            match &spec.script[r.pc] {
                Activity::Compute { duration, current } => {
                    if duration.as_ns() == 0 {
                        r.pc += 1;
                        continue;
                    }
                    r.remaining = duration.as_ns();
                    r.current = current.0;
                    if r.state != State::Ready {
                        self.make_ready(i);
                    }
                    return Ok(());
                }
                Activity::Sleep { duration } => {
                    r.state = State::Blocked { until: now + *duration, io: None };
                    return Ok(());
                }
                Activity::Io { duration, current } => {
                    r.state = State::Blocked { until: now + *duration, io: Some(current.0) };
                    return Ok(());
                }
                Activity::TraceStart(label) => {
                    r.pc += 1;
                    self.tracer.trace_start(label, now)?;
                }
                Activity::TraceStop(label) => {
                    r.pc += 1;
                    self.tracer.trace_stop(label, now, &self.samples)?;
                }
            }
        }
    }

    fn start_job(&mut self, now: SimTime, monitor: &mut ShuntMonitor, bus: &BusLink) -> Result<()> {
        let alerts = self.pending_alerts.len();
        self.pending_alerts.clear();
        for _ in 1..alerts {
            if let Some(ev) = self.last_event {
                self.diagnostics.push(Diagnostic::MissedSample { t: ev.t });
            }
        }
        let mut voltage = None;
        let mut current = None;
        let mut power = None;
        let mut read_time = 0.0;
        for reg in &self.node.measurement.reads {
            let (raw, cost) = monitor.read_register(*reg, bus)?;
            self.bus_energy += cost.bus_energy.0;
            read_time += cost.time.0;
            match reg {
                RegisterId::BusVoltage => voltage = Some(monitor.bus_volts(raw)),
                RegisterId::Current => current = Some(monitor.current_amps(raw)),
                RegisterId::Power => power = Some(monitor.power_watts(raw)),
                _ => {}
            }
        }
        let busy = self.node.measurement.t_proc.as_ns().max((read_time * 1e9).round() as u64);
        let r = &mut self.runners[self.meas];
        r.remaining = busy.max(1);
        r.current = self.node.measurement.mcu_current.0;
        self.job_started = true;
        if let Some(ev) = self.last_event {
            let v = voltage.unwrap_or(Volts(f64::NAN));
            let i = current.unwrap_or(Amps(f64::NAN));
            let p = power.unwrap_or(v * i);
            self.samples.push(Sample { t: ev.t, window_start: ev.window_start, read_at: now, voltage: v, current: i, power: p });
        }
        Ok(())
    }
}

fn validate(threads: &[ThreadSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in threads {
        if t.id.is_empty() {
            return Err(invalid("thread id must not be empty"));
        }
        if t.id == MEASUREMENT_THREAD {
            return Err(invalid(format!("thread id `{MEASUREMENT_THREAD}` is reserved")));
        }
        if !seen.insert(t.id.as_str()) {
            return Err(invalid(format!("duplicate thread id `{}`", t.id)));
        }
        if t.repeat && t.script.iter().all(|a| a.duration().as_ns() == 0) {
            return Err(invalid(format!("repeating thread `{}` never advances time", t.id)));
        }
        for a in &t.script {
            if let Activity::Compute { current, .. } | Activity::Io { current, .. } = a {
                if !(current.0 >= 0.0) {
                    return Err(invalid(format!("thread `{}` has a negative current", t.id)));
                }
            }
        }
    }
    Ok(())
}

/// Runs the node for `duration`. The monitor is driven in whatever mode it was
/// configured with; with alerting enabled the measurement thread wakes on each
/// completed sample, reads the registers and burns `t_proc` of CPU.
pub fn run(
    threads: &[ThreadSpec],
    node: &NodeConfig,
    mut monitor: ShuntMonitor,
    bus: &BusLink,
    duration: SimTime,
) -> Result<NodeRun> {
    validate(threads)?;
    if !(node.supply.0 > 0.0) {
        return Err(invalid("node supply voltage must be positive"));
    }
    let n = threads.len();
    let meas = n;
    let period = monitor.config().sample_period();
    let deadline = node.measurement.starvation_deadline.unwrap_or(period);
    let mut lp = Loop {
        specs: threads,
        node,
        runners: (0..=n)
            .map(|_| Runner { state: State::Waiting, pc: 0, remaining: 0, current: 0.0, seq: 0 })
            .collect(),
        meas,
        seq: 0,
        tracer: Tracer::new(node.trace_mode, period),
        samples: Vec::new(),
        pending_alerts: VecDeque::new(),
        job_started: false,
        job_alert: None,
        starvation_reported: false,
        last_event: None,
        diagnostics: Vec::new(),
        bus_energy: 0.0,
    };
    let mut info: Vec<ThreadInfo> = threads.iter().map(|t| ThreadInfo { id: t.id.clone(), priority: t.priority }).collect();
    info.push(ThreadInfo { id: MEASUREMENT_THREAD.to_string(), priority: node.measurement.priority });
    let mut sched = ScheduleTrace { threads: info, entries: Vec::new(), context_switches: 0, start: SimTime::ZERO, end: duration };
    let mut profile = PiecewiseProfile::new();

    let mut now = SimTime::ZERO;
    for i in 0..n {
        lp.step_script(i, now)?;
    }
    let alerting = monitor.config().alert_enabled;

    while now < duration {
        let running = lp.select();
        if running == Some(meas) && !lp.job_started {
            lp.start_job(now, &mut monitor, bus)?;
        }
        let mut next = duration;
        if let Some(r) = running {
            next = next.min(now + SimTime(lp.runners[r].remaining));
        }
        for r in &lp.runners {
            if let State::Blocked { until, .. } = r.state {
                next = next.min(until);
            }
        }
        if let Some(t) = monitor.next_completion() {
            next = next.min(t.max(now));
        }
        if let Some(a) = lp.job_alert {
            if !lp.job_started && !lp.starvation_reported && a + deadline > now {
                next = next.min(a + deadline);
            }
        }

        let mut parts: Vec<(Owner, f64)> = Vec::with_capacity(4);
        match running {
            Some(r) => parts.push((Owner::Thread(r), lp.runners[r].current)),
            None => parts.push((Owner::Unattributed, node.idle_current.0)),
        }
        for (i, r) in lp.runners.iter().enumerate() {
            if let State::Blocked { io: Some(c), .. } = r.state {
                parts.push((Owner::Thread(i), c));
            }
        }
        profile.extend_to(next, node.supply.0, &parts);
        if let Some(r) = running {
            if next > now {
                sched.push(r, now, next);
            }
            lp.runners[r].remaining -= (next - now).as_ns();
        }
        now = next;

        // Slice completion.
        if let Some(r) = running {
            if lp.runners[r].remaining == 0 {
                if r == meas {
                    lp.job_started = false;
                    lp.job_alert = None;
                    lp.starvation_reported = false;
                    if let Some(&a) = lp.pending_alerts.front() {
                        lp.job_alert = Some(a);
                        lp.make_ready(meas);
                    } else {
                        lp.runners[meas].state = State::Waiting;
                    }
                } else {
                    lp.runners[r].pc += 1;
                    lp.step_script(r, now)?;
                }
            }
        }
        // Wake-ups, in thread order.
        for i in 0..lp.runners.len() {
            if let State::Blocked { until, .. } = lp.runners[i].state {
                if until <= now {
                    lp.runners[i].pc += 1;
                    lp.runners[i].state = State::Waiting;
                    lp.step_script(i, now)?;
                    if lp.runners[i].state == State::Waiting {
                        lp.make_ready(i);
                    }
                }
            }
        }
        // Monitor completion.
        if monitor.next_completion() == Some(now) {
            for ev in monitor.advance(&profile, now)? {
                lp.last_event = Some(ev);
                if alerting {
                    lp.pending_alerts.push_back(ev.t);
                    if lp.runners[meas].state == State::Waiting {
                        lp.job_alert = Some(ev.t);
                        lp.make_ready(meas);
                    }
                }
            }
        }
        if let Some(a) = lp.job_alert {
            if !lp.job_started && !lp.starvation_reported && now >= a + deadline {
                lp.diagnostics.push(Diagnostic::Starvation { alert_at: a, detected_at: now });
                lp.starvation_reported = true;
            }
        }
    }
    monitor.advance(&profile, duration)?;

    let shunt_loss = Joules(profile.current_squared(SimTime::ZERO, duration) * monitor.r_shunt().0);
    Ok(NodeRun {
        trace: sched,
        samples: lp.samples,
        traces: lp.tracer.into_records(),
        diagnostics: lp.diagnostics,
        overhead: Overhead { monitor_supply: monitor.supply_energy(), bus: Joules(lp.bus_energy), shunt_loss },
        profile,
        duration,
        measurement_thread: meas,
        supply: node.supply,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::{Mode, MonitorConfig, NoiseModel};
    use crate::units::Ohms;

    fn busy(id: &str, prio: u32, ma: f64) -> ThreadSpec {
        ThreadSpec::new(id, prio, vec![Activity::Compute { duration: SimTime::from_ms(10), current: Amps(ma * 1e-3) }], true)
    }

    fn monitor(cfg: MonitorConfig) -> ShuntMonitor {
        ShuntMonitor::new(cfg, Ohms(2.0), NoiseModel::none(), 1).unwrap()
    }

    #[test]
    fn idle_system_has_no_switches() {
        let cfg = MonitorConfig::default().with_mode(Mode::PowerDown);
        let r = run(&[], &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(100)).unwrap();
        assert_eq!(r.trace.context_switches, 0);
        assert!(r.trace.entries.is_empty());
        assert!(r.samples.is_empty());
    }

    #[test]
    fn measurement_thread_preempts_and_samples() {
        let cfg = MonitorConfig::new(140, 140, 1, Mode::Continuous, true).unwrap();
        let r = run(&[busy("app", 5, 5.0)], &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(10)).unwrap();
        // Alerts at 280 µs, 560 µs, ... up to 9.8 ms.
        assert_eq!(r.samples.len(), 35);
        let util = r.trace.active_time(r.measurement_thread).as_secs_f64() / 0.010;
        assert!((util - 35.0 * 160e-6 / 0.010).abs() < 1e-9, "{util}");
        assert!(r.diagnostics.is_empty());
        // Every measurement slice is bracketed by the app thread: two switches per sample.
        assert_eq!(r.trace.switches(r.measurement_thread), 35);
    }

    #[test]
    fn equal_priorities_run_fifo() {
        let a = ThreadSpec::new("a", 1, vec![Activity::Compute { duration: SimTime::from_ms(1), current: Amps(1e-3) }], false);
        let b = ThreadSpec::new("b", 1, vec![Activity::Compute { duration: SimTime::from_ms(1), current: Amps(1e-3) }], false);
        let cfg = MonitorConfig::default().with_mode(Mode::PowerDown);
        let r = run(&[a, b], &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(5)).unwrap();
        assert_eq!(r.trace.entries[0], ScheduleEntry { thread: 0, start: SimTime::ZERO, end: SimTime::from_ms(1) });
        assert_eq!(r.trace.entries[1].thread, 1);
        assert_eq!(r.trace.running_at(SimTime::from_ms(3)), None);
    }

    #[test]
    fn low_priority_measurement_starves() {
        let cfg = MonitorConfig::new(140, 140, 1, Mode::Continuous, true).unwrap();
        let mut node = NodeConfig::default();
        node.measurement.priority = 10;
        let hog = ThreadSpec::new(
            "hog",
            1,
            vec![
                Activity::Compute { duration: SimTime::from_ms(5), current: Amps(5e-3) },
                Activity::Sleep { duration: SimTime::from_ms(1) },
            ],
            true,
        );
        let r = run(&[hog], &node, monitor(cfg), &BusLink::default(), SimTime::from_ms(20)).unwrap();
        assert!(r.diagnostics.iter().any(|d| matches!(d, Diagnostic::Starvation { .. })));
        assert!(r.diagnostics.iter().any(|d| matches!(d, Diagnostic::MissedSample { .. })));
    }

    #[test]
    fn io_current_belongs_to_issuer() {
        let t = ThreadSpec::new(
            "radio",
            1,
            vec![
                Activity::Compute { duration: SimTime::from_us(100), current: Amps(2e-3) },
                Activity::Io { duration: SimTime::from_ms(1), current: Amps(20e-3) },
            ],
            false,
        );
        let cfg = MonitorConfig::default().with_mode(Mode::PowerDown);
        let node = NodeConfig::default();
        let r = run(&[t], &node, monitor(cfg), &BusLink::default(), SimTime::from_ms(2)).unwrap();
        let seg = r.profile.segment_at(SimTime::from_us(500)).unwrap();
        assert!(seg.parts.contains(&(Owner::Thread(0), 20e-3)));
        assert!(seg.parts.contains(&(Owner::Unattributed, node.idle_current.0)));
    }

    #[test]
    fn invalid_thread_sets_rejected() {
        let cfg = MonitorConfig::default();
        let dup = [busy("a", 1, 1.0), busy("a", 2, 1.0)];
        assert!(run(&dup, &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(1)).is_err());
        let reserved = [busy(MEASUREMENT_THREAD, 1, 1.0)];
        assert!(run(&reserved, &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(1)).is_err());
        let spin = [ThreadSpec::new("s", 1, vec![Activity::TraceStart("x".into())], true)];
        assert!(run(&spin, &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(1)).is_err());
    }

    #[test]
    fn unbalanced_trace_is_an_error() {
        let t = ThreadSpec::new("t", 1, vec![Activity::TraceStop("x".into())], false);
        let cfg = MonitorConfig::default();
        assert!(run(&[t], &NodeConfig::default(), monitor(cfg), &BusLink::default(), SimTime::from_ms(1)).is_err());
    }
}
