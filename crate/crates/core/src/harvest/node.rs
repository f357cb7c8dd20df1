//! Harvesting node firmware: run a task, measure charging with a triggered
//! conversion while asleep, adapt the interval, sleep.
//!
//! The shunt sits between the store and the rest of the system (charger and
//! node load). Positive shunt current drains the store; a net inflow from the
//! charger shows up as negative current, so measured charging power is
//! `-V * I`. The monitor itself is supplied from the store but not through
//! the shunt.

use crate::bus::BusLink;
use crate::error::{invalid, Error, Result};
use crate::harvest::{cap_step, DutyCycleParams, DutyCycleState, SolarProfile, SuperCap};
use crate::monitor::{Mode, MonitorConfig, RegisterId, ShuntMonitor};
use crate::oracle::{integrate_fn, integrate_profile, OracleResult};
use crate::exec::Strategy;
use crate::profile::{Owner, PiecewiseProfile};
use crate::sched::{Sample, TraceMode, TraceRecord, Tracer};
use crate::time::SimTime;
use crate::units::{Joules, Seconds, Volts, Watts};

/// Owner index of the application task in the load profile.
pub const TASK_OWNER: usize = 0;
/// Owner index of the post-measurement processing in the load profile.
pub const MEASURE_OWNER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPhase {
    pub duration: SimTime,
    pub power: Watts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestConfig {
    pub cap: SuperCap,
    pub solar: SolarProfile,
    /// Charger efficiency from panel to store.
    pub efficiency: f64,
    pub sleep_power: Watts,
    pub task: Vec<TaskPhase>,
    /// Trace every n-th task with the charger disabled; others run blind.
    pub trace_every: u32,
    pub duty: DutyCycleParams,
    pub charge_monitor: MonitorConfig,
    pub trace_monitor: MonitorConfig,
    /// Node power while reading and converting a sample.
    pub mcu_power: Watts,
    pub t_proc: SimTime,
    /// Longest constant-input step while the solar input varies.
    pub max_step: SimTime,
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        self.solar.validate()?;
        self.duty.validate()?;
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(invalid("charger efficiency must be in (0, 1]"));
        }
        if !(self.sleep_power.0 >= 0.0) || !(self.mcu_power.0 >= 0.0) {
            return Err(invalid("node powers must be non-negative"));
        }
        if self.task.iter().any(|p| !(p.power.0 >= 0.0)) {
            return Err(invalid("task phase powers must be non-negative"));
        }
        if self.task.iter().all(|p| p.duration.as_ns() == 0) {
            return Err(invalid("task must take some time"));
        }
        if self.trace_every == 0 {
            return Err(invalid("trace_every must be at least 1"));
        }
        if self.charge_monitor.mode != Mode::Triggered {
            return Err(invalid("charging measurement needs a triggered monitor configuration"));
        }
        if self.max_step.as_ns() == 0 {
            return Err(invalid("max_step must be positive"));
        }
        Ok(())
    }

    pub fn task_duration(&self) -> SimTime {
        SimTime(self.task.iter().map(|p| p.duration.as_ns()).sum())
    }
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            cap: SuperCap::default(),
            solar: SolarProfile::Sinusoid { sunrise: Seconds(6.0 * 3600.0), sunset: Seconds(20.0 * 3600.0), peak: Watts(0.08) },
            efficiency: 1.0,
            sleep_power: Watts(30e-6),
            task: dust_sensor_task(),
            trace_every: 10,
            duty: DutyCycleParams::default(),
            charge_monitor: MonitorConfig::new(8244, 8244, 1024, Mode::Triggered, true).expect("valid"),
            trace_monitor: MonitorConfig::new(588, 588, 4, Mode::Continuous, true).expect("valid"),
            mcu_power: Watts(12e-3 * 2.5),
            t_proc: SimTime::from_us(160),
            max_step: SimTime::from_ms(1000),
        }
    }
}

/// A dust-sensor read-out: wake-up spike, fan spin-up settling to a steady
/// level, measurement, radio burst, tail.
pub fn dust_sensor_task() -> Vec<TaskPhase> {
    let ph = |ms: u64, mw: f64| TaskPhase { duration: SimTime::from_ms(ms), power: Watts(mw * 1e-3) };
    vec![
        ph(50, 150.0),
        ph(100, 220.0),
        ph(100, 180.0),
        ph(100, 150.0),
        ph(200, 130.0),
        ph(6000, 120.0),
        ph(150, 200.0),
        ph(100, 40.0),
    ]
}

/// Energy bookkeeping of the store. `residual()` is zero up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyLedger {
    /// Delivered by the charger while enabled (before spilling at full).
    pub e_in: Joules,
    /// Delivered to the node load.
    pub e_out: Joules,
    /// Monitor supply, bus transactions and shunt dissipation.
    pub e_overhead: Joules,
    pub e_unharvested: Joules,
    /// Demand the empty store could not meet (already removed from `e_out`).
    pub e_unserved: Joules,
    pub store_start: Joules,
    pub store_end: Joules,
    pub monitor_supply: Joules,
    pub bus: Joules,
    pub shunt_loss: Joules,
}

impl EnergyLedger {
    pub fn residual(&self) -> f64 {
        (self.e_in.0 - self.e_out.0 - self.e_overhead.0 - self.e_unharvested.0) - (self.store_end.0 - self.store_start.0)
    }

    /// Residual relative to the largest flow in the balance.
    pub fn relative_residual(&self) -> f64 {
        let scale = [self.e_in.0, self.e_out.0, self.e_overhead.0, self.e_unharvested.0, self.store_start.0, self.store_end.0]
            .into_iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            0.0
        } else {
            self.residual().abs() / scale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargingMeasurement {
    pub power: Watts,
    pub bus_voltage: Volts,
    pub window_start: SimTime,
    pub window_end: SimTime,
    /// Mean of the true store inflow over the same window.
    pub true_power: Watts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleLog {
    pub t: SimTime,
    pub traced: bool,
    pub brownout: bool,
    /// Measured if traced, otherwise the current estimate.
    pub task_energy: Joules,
    pub charging: Watts,
    pub charging_true: Watts,
    pub v_measured: Volts,
    pub v_true: Volts,
    pub interval: Seconds,
}

pub struct HarvestNode {
    cfg: HarvestConfig,
    t: SimTime,
    cap: SuperCap,
    monitor: ShuntMonitor,
    bus: BusLink,
    charger_enabled: bool,
    disabled_since: Option<SimTime>,
    disabled: Vec<(SimTime, SimTime)>,
    shunt_profile: PiecewiseProfile,
    load_profile: PiecewiseProfile,
    ledger: EnergyLedger,
    pending_overhead: f64,
    duty: DutyCycleState,
    cycles: Vec<CycleLog>,
    traces: Vec<TraceRecord>,
    samples: Vec<Sample>,
    cycle_index: u64,
}

impl HarvestNode {
    pub fn new(cfg: HarvestConfig, monitor: ShuntMonitor, bus: BusLink) -> Result<Self> {
        cfg.validate()?;
        let mut monitor = monitor;
        monitor.configure(cfg.charge_monitor.with_mode(Mode::PowerDown));
        let duty = DutyCycleState::new(cfg.duty)?;
        let ledger = EnergyLedger { store_start: cfg.cap.energy(), store_end: cfg.cap.energy(), ..Default::default() };
        Ok(HarvestNode {
            cap: cfg.cap,
            cfg,
            t: SimTime::ZERO,
            monitor,
            bus,
            charger_enabled: true,
            disabled_since: None,
            disabled: Vec::new(),
            shunt_profile: PiecewiseProfile::new(),
            load_profile: PiecewiseProfile::new(),
            ledger,
            pending_overhead: 0.0,
            duty,
            cycles: Vec::new(),
            traces: Vec::new(),
            samples: Vec::new(),
            cycle_index: 0,
        })
    }

    pub fn now(&self) -> SimTime {
        self.t
    }

    pub fn cap(&self) -> &SuperCap {
        &self.cap
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn duty(&self) -> &DutyCycleState {
        &self.duty
    }

    pub fn monitor(&self) -> &ShuntMonitor {
        &self.monitor
    }

    pub fn set_charger(&mut self, enabled: bool) {
        if enabled == self.charger_enabled {
            return;
        }
        self.charger_enabled = enabled;
        if enabled {
            if let Some(s) = self.disabled_since.take() {
                self.disabled.push((s, self.t));
            }
        } else {
            self.disabled_since = Some(self.t);
        }
    }

    /// One constant-input stretch `[t, until)`. Splits where the store fills.
    fn substep(&mut self, until: SimTime, p_load: f64, owner: Owner) -> Result<()> {
        let dt_total = (until - self.t).as_secs_f64();
        let mid = SimTime(self.t.as_ns() + (until - self.t).as_ns() / 2);
        let p_in = if self.charger_enabled { self.cfg.efficiency * self.cfg.solar.power_at(mid).0 } else { 0.0 };
        let p_mon = self.monitor.supply_power().0;
        let p_extra = self.pending_overhead / dt_total;
        self.pending_overhead = 0.0;
        let r = self.monitor.r_shunt().0;
        let v = self.cap.v_now.0.max(1e-3);

        let i_drain = (p_load - p_in) / v;
        let p_shunt = i_drain * i_drain * r;
        let p_net = p_in - p_load - p_mon - p_extra - p_shunt;

        // Where the store tops out, the charger only covers demand from then on.
        let mut split = until;
        if p_net > 0.0 {
            let t_full = self.cap.headroom().0 / p_net;
            if t_full < dt_total {
                let ns = (t_full * 1e9).round() as u64;
                split = SimTime((self.t.as_ns() + ns).clamp(self.t.as_ns() + 1, until.as_ns()));
            }
        }
        let full_i = -(p_mon + p_extra) / v;
        let full_shunt = full_i * full_i * r;
        let pieces = [(self.t, split, i_drain, p_shunt), (split, until, full_i, full_shunt)];
        for (a, b, i, ps) in pieces {
            if b <= a {
                continue;
            }
            let dt = (b - a).as_secs_f64();
            let p_net = p_in - p_load - p_mon - p_extra - ps;
            let step = cap_step(&self.cap, Watts(p_net), Seconds(dt))?;
            self.shunt_profile.extend_to(b, v, &[(Owner::Unattributed, i)]);
            self.load_profile.extend_to(b, v, &[(owner, p_load / v)]);
            self.ledger.e_in.0 += p_in * dt;
            self.ledger.e_out.0 += p_load * dt - step.unserved.0;
            self.ledger.e_unserved.0 += step.unserved.0;
            self.ledger.e_overhead.0 += (p_mon + p_extra + ps) * dt;
            self.ledger.monitor_supply.0 += p_mon * dt;
            self.ledger.bus.0 += p_extra * dt;
            self.ledger.shunt_loss.0 += ps * dt;
            self.ledger.e_unharvested.0 += step.unharvested.0;
            self.cap = step.cap;
        }
        self.ledger.store_end = self.cap.energy();
        self.t = until;
        Ok(())
    }

    /// Runs a constant node load for `duration`, reading out every sample the
    /// monitor completes when `sample` is set.
    fn run_phase(&mut self, duration: SimTime, p_load: Watts, owner: Owner, sample: bool) -> Result<()> {
        let end = self.t + duration;
        while self.t < end {
            let mut next = end.min(self.t + self.cfg.max_step);
            if let Some(c) = self.monitor.next_completion() {
                if c > self.t {
                    next = next.min(c);
                }
            }
            self.substep(next, p_load.0, owner)?;
            for ev in self.monitor.advance(&self.shunt_profile, next)? {
                if sample {
                    let (v, i) = self.read_sample()?;
                    self.samples.push(Sample { t: ev.t, window_start: ev.window_start, read_at: self.t, voltage: v, current: i, power: v * i });
                }
            }
        }
        Ok(())
    }

    fn read_sample(&mut self) -> Result<(Volts, crate::units::Amps)> {
        let (_, c0) = self.monitor.read_register(RegisterId::MaskEnable, &self.bus)?;
        let (vb, c1) = self.monitor.read_register(RegisterId::BusVoltage, &self.bus)?;
        let (ic, c2) = self.monitor.read_register(RegisterId::Current, &self.bus)?;
        self.pending_overhead += c0.bus_energy.0 + c1.bus_energy.0 + c2.bus_energy.0;
        Ok((self.monitor.bus_volts(vb), self.monitor.current_amps(ic)))
    }

    /// Triggers one averaged conversion and sleeps until it completes; returns
    /// the measured charging power.
    pub fn measure_charging(&mut self) -> Result<ChargingMeasurement> {
        if self.monitor.in_flight() {
            return Err(Error::Busy { until_ns: self.monitor.next_completion().map_or(0, |t| t.as_ns()) });
        }
        self.monitor.configure(self.cfg.charge_monitor);
        let start = self.t;
        let done = self.monitor.trigger_single()?;
        self.run_phase(done - start, self.cfg.sleep_power, Owner::Unattributed, false)?;
        let (v, i) = self.read_sample()?;
        let true_power = -self.shunt_profile.energy(start, done) / (done - start).as_secs_f64();
        // Reading and converting the result.
        self.run_phase(self.cfg.t_proc, self.cfg.mcu_power, Owner::Thread(MEASURE_OWNER), false)?;
        self.monitor.set_mode(Mode::PowerDown);
        Ok(ChargingMeasurement { power: Watts(-(v * i).0), bus_voltage: v, window_start: start, window_end: done, true_power: Watts(true_power) })
    }

    /// Runs `phases` with the charger disabled and the monitor sampling
    /// continuously, and returns the traced record.
    pub fn isolated_consumption(&mut self, label: &str, phases: &[TaskPhase]) -> Result<TraceRecord> {
        self.set_charger(false);
        self.monitor.configure(self.cfg.trace_monitor.with_mode(Mode::Continuous));
        let mut tracer = Tracer::new(TraceMode::Series, self.cfg.trace_monitor.sample_period());
        let first = self.samples.len();
        tracer.trace_start(label, self.t)?;
        for p in phases {
            self.run_phase(p.duration, p.power, Owner::Thread(TASK_OWNER), true)?;
        }
        let rec = tracer.trace_stop(label, self.t, &self.samples[first..])?;
        self.monitor.set_mode(Mode::PowerDown);
        self.set_charger(true);
        Ok(rec)
    }

    /// Mean power from an isolated trace.
    pub fn isolated_power(rec: &TraceRecord) -> Watts {
        let d = (rec.end - rec.start).as_secs_f64();
        if d == 0.0 {
            Watts(0.0)
        } else {
            Watts(rec.aggregate.0 / d)
        }
    }

    pub fn sleep_until(&mut self, t: SimTime) -> Result<()> {
        if t > self.t {
            self.run_phase(t - self.t, self.cfg.sleep_power, Owner::Unattributed, false)?;
        }
        Ok(())
    }

    /// One firmware cycle.
    pub fn run_cycle(&mut self) -> Result<()> {
        let start = self.t;
        if self.cap.v_now < self.cap.v_min_operating {
            let interval = self.cfg.duty.interval_max;
            self.cycles.push(CycleLog {
                t: start,
                traced: false,
                brownout: true,
                task_energy: Joules(0.0),
                charging: Watts(0.0),
                charging_true: Watts(0.0),
                v_measured: Volts(0.0),
                v_true: self.cap.v_now,
                interval,
            });
            return self.sleep_until(start + SimTime::from_secs_f64(interval.0));
        }
        let traced = self.cycle_index % self.cfg.trace_every as u64 == 0;
        self.cycle_index += 1;
        let task = self.cfg.task.clone();
        let task_energy = if traced {
            let rec = self.isolated_consumption("task", &task)?;
            let e = rec.aggregate;
            if e.0 > 0.0 {
                self.duty.observe_task(e);
            }
            self.traces.push(rec);
            e
        } else {
            for p in &task {
                self.run_phase(p.duration, p.power, Owner::Thread(TASK_OWNER), false)?;
            }
            self.duty.task_energy_estimate.unwrap_or(Joules(0.0))
        };
        let m = self.measure_charging()?;
        self.duty.observe_charging(m.power);
        let interval = self.duty.interval;
        self.cycles.push(CycleLog {
            t: start,
            traced,
            brownout: false,
            task_energy,
            charging: m.power,
            charging_true: m.true_power,
            v_measured: m.bus_voltage,
            v_true: self.cap.v_now,
            interval,
        });
        self.sleep_until(start + SimTime::from_secs_f64(interval.0))
    }

    fn finish(mut self, duration: SimTime, oracle_step: Option<SimTime>) -> Result<HarvestRun> {
        if let Some(s) = self.disabled_since.take() {
            self.disabled.push((s, self.t));
        }
        let end = self.t;
        let oracle = oracle_step.map(|step| {
            let mut o = integrate_profile(&self.load_profile, 2, SimTime::ZERO, end, step, Strategy::default());
            let disabled = self.disabled.clone();
            let solar = self.cfg.solar.clone();
            let eta = self.cfg.efficiency;
            let on = move |t: SimTime| {
                let k = disabled.partition_point(|&(a, _)| a <= t);
                k == 0 || disabled[k - 1].1 <= t
            };
            o.charging = Some(Joules(integrate_fn(
                |t| if on(t) { eta * solar.power_at(t).0 } else { 0.0 },
                SimTime::ZERO,
                end,
                step,
                Strategy::default(),
            )));
            o
        });
        Ok(HarvestRun {
            duration,
            end,
            cycles: self.cycles,
            traces: self.traces,
            samples: self.samples,
            ledger: self.ledger,
            cap: self.cap,
            oracle,
            monitor_supply: self.monitor.supply_energy(),
            load_profile: self.load_profile,
            shunt_profile: self.shunt_profile,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HarvestRun {
    pub duration: SimTime,
    /// Where the last cycle actually ended (at or after `duration`).
    pub end: SimTime,
    pub cycles: Vec<CycleLog>,
    pub traces: Vec<TraceRecord>,
    pub samples: Vec<Sample>,
    pub ledger: EnergyLedger,
    pub cap: SuperCap,
    pub oracle: Option<OracleResult>,
    pub monitor_supply: Joules,
    pub load_profile: PiecewiseProfile,
    pub shunt_profile: PiecewiseProfile,
}

/// Runs firmware cycles until `duration` has passed. With `oracle_step` set,
/// the true load and charger input are integrated on that grid.
pub fn simulate(
    cfg: HarvestConfig,
    monitor: ShuntMonitor,
    bus: BusLink,
    duration: SimTime,
    oracle_step: Option<SimTime>,
) -> Result<HarvestRun> {
    let mut node = HarvestNode::new(cfg, monitor, bus)?;
    while node.now() < duration {
        node.run_cycle()?;
    }
    node.finish(duration, oracle_step)
}
