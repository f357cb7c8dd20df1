//! Scenario files, the deterministic runner and everything written to disk.
//!
//! A scenario is a TOML document with a `format_version` key. Parse errors
//! and validation failures both carry `file:line:col` and the offending field.

pub mod csvfmt;
pub mod runner;
pub mod schema;
pub mod tools;

pub use runner::{run_scenario, run_to_dir, Measured, RunOutcome};
pub use schema::{Kind, FORMAT_VERSION};
pub use tools::{compare, report, sweep};

use std::path::{Path, PathBuf};

use crate::bus::{BusConfig, BusLink, CalibrationTable, SpeedMode};
use crate::error::{Error, Result};
use crate::harvest::{dust_sensor_task, DutyCycleParams, HarvestConfig, SolarProfile, SuperCap, TaskPhase};
use crate::monitor::{Averaging, ConversionTime, Mode, MonitorConfig, MonitorPower, NoiseModel, RegisterId, ShuntMonitor};
use crate::profile::ConstantProfile;
use crate::sched::{random_threads, Activity, MeasurementSpec, NodeConfig, RandomSpec, ThreadSpec, TraceMode};
use crate::time::SimTime;
use crate::units::{Amps, Farads, Ohms, Seconds, Volts, Watts};

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    pub duration: SimTime,
    pub oracle: bool,
    pub oracle_step: SimTime,
    pub monitor: MonitorConfig,
    pub r_shunt: Ohms,
    pub noise: NoiseModel,
    pub monitor_power: MonitorPower,
    pub bus: BusLink,
    pub load: Option<ConstantProfile>,
    pub node: NodeConfig,
    pub threads: Vec<ThreadSpec>,
    pub harvest: Option<HarvestConfig>,
    pub sweep_currents: Vec<f64>,
    pub output: schema::Output,
    /// The file as read, copied next to the results.
    pub source: String,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("{}: cannot read scenario: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&src, &path.display().to_string(), &base)
    }

    /// Parses `src`; `origin` names the file in diagnostics and `base` resolves
    /// relative paths inside it.
    pub fn parse(src: &str, origin: &str, base: &Path) -> Result<Self> {
        let file: schema::File = toml::from_str(src).map_err(|e| {
            let (line, col) = e.span().map(|s| line_col(src, s.start)).unwrap_or((0, 0));
            Error::Validation(format!("{origin}:{line}:{col}: {}", e.message()))
        })?;
        let ctx = Ctx { src, origin };
        build(file, &ctx, base, src)
    }

    /// A fresh monitor for this scenario, seeded with `seed`.
    pub fn make_monitor(&self, config: MonitorConfig, seed: u64) -> Result<ShuntMonitor> {
        Ok(ShuntMonitor::new(config, self.r_shunt, self.noise, seed)?.with_power(self.monitor_power))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }
}

struct Ctx<'a> {
    src: &'a str,
    origin: &'a str,
}

impl Ctx<'_> {
    fn err(&self, field: &str, msg: impl std::fmt::Display) -> Error {
        let line = locate(self.src, field).unwrap_or(0);
        Error::Validation(format!("{}:{line}: {field}: {msg}", self.origin))
    }

    fn check<T>(&self, field: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::InvalidParameter(m) | Error::Validation(m) => self.err(field, m),
            other => self.err(field, other),
        })
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Best-effort line of a dotted field path such as `monitor.averaging` or
/// `thread[1].script`.
fn locate(src: &str, field: &str) -> Option<usize> {
    let lines: Vec<&str> = src.lines().collect();
    let mut pos = 0;
    let mut table = String::new();
    let mut found = None;
    for seg in field.split('.') {
        let (name, index) = match seg.find('[') {
            Some(i) => (&seg[..i], seg[i + 1..seg.len() - 1].parse::<usize>().ok()),
            None => (seg, None),
        };
        let full = if table.is_empty() { name.to_string() } else { format!("{table}.{name}") };
        if let Some(k) = index {
            let header = format!("[[{full}]]");
            let hit = lines.iter().enumerate().skip(pos).filter(|(_, l)| l.trim() == header).nth(k);
            if let Some((i, _)) = hit {
                pos = i + 1;
                found = Some(i + 1);
                table = full;
                continue;
            }
        }
        let header = format!("[{full}]");
        if let Some(i) = lines.iter().skip(pos).position(|l| l.trim() == header) {
            pos += i + 1;
            found = Some(pos);
            table = full;
            continue;
        }
        let key = lines.iter().enumerate().skip(pos).find(|(_, l)| {
            let t = l.trim_start();
            t.strip_prefix(name).is_some_and(|rest| rest.trim_start().starts_with('='))
        });
        match key {
            Some((i, _)) => {
                found = Some(i + 1);
                pos = i;
            }
            None => break,
        }
    }
    found
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "continuous" => Ok(Mode::Continuous),
        "triggered" => Ok(Mode::Triggered),
        "power_down" => Ok(Mode::PowerDown),
        other => Err(Error::Validation(format!("unknown mode `{other}` (continuous, triggered, power_down)"))),
    }
}

fn parse_register(s: &str) -> Result<RegisterId> {
    Ok(match s {
        "configuration" => RegisterId::Configuration,
        "shunt_voltage" => RegisterId::ShuntVoltage,
        "bus_voltage" => RegisterId::BusVoltage,
        "power" => RegisterId::Power,
        "current" => RegisterId::Current,
        "mask_enable" => RegisterId::MaskEnable,
        other => return Err(Error::Validation(format!("unknown register `{other}`"))),
    })
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("{what} must be positive, got {v}")))
    }
}

fn non_negative(v: f64, what: &str) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("{what} must be non-negative, got {v}")))
    }
}

fn build(f: schema::File, c: &Ctx, base: &Path, src: &str) -> Result<Scenario> {
    if f.format_version != FORMAT_VERSION {
        return Err(c.err(
            "format_version",
            format!("unsupported version {} (this build reads {FORMAT_VERSION})", f.format_version),
        ));
    }
    if f.name.is_empty() || f.name.contains(['/', '\\']) {
        return Err(c.err("name", "must be a non-empty file-name-safe string"));
    }
    let duration = SimTime::from_secs_f64(c.check("duration_s", non_negative(f.duration_s, "duration"))?);
    if f.oracle_step_us == 0 {
        return Err(c.err("oracle_step_us", "must be at least 1"));
    }

    let m = &f.monitor;
    let mode = c.check("monitor.mode", parse_mode(&m.mode))?;
    c.check("monitor.shunt_conv_us", ConversionTime::from_us(m.shunt_conv_us))?;
    c.check("monitor.bus_conv_us", ConversionTime::from_us(m.bus_conv_us))?;
    c.check("monitor.averaging", Averaging::new(m.averaging))?;
    let monitor = c.check("monitor", MonitorConfig::new(m.shunt_conv_us, m.bus_conv_us, m.averaging, mode, m.alert))?;
    let r_shunt = Ohms(c.check("monitor.r_shunt_ohms", positive(m.r_shunt_ohms, "shunt resistance"))?);
    let monitor_power = MonitorPower {
        active: Watts(c.check("monitor.active_power_w", non_negative(m.active_power_w, "active power"))?),
        sleep_current: Amps(c.check("monitor.sleep_current_a", non_negative(m.sleep_current_a, "sleep current"))?),
        supply: Volts(c.check("monitor.supply_v", positive(m.supply_v, "supply"))?),
    };
    let noise = c.check("noise", NoiseModel::new(Volts(f.noise.sigma_shunt_uv * 1e-6), f.noise.gain_error))?;

    let b = &f.bus;
    let speed: SpeedMode = c.check("bus.speed_mode", b.speed_mode.parse())?;
    let bus_cfg = c.check(
        "bus",
        BusConfig::new(speed, Ohms(b.pullup_ohms), Farads(b.c_bus_pf * 1e-12), Volts(b.v_dd)),
    )?;
    let table = match &b.calibration {
        None => CalibrationTable::default(),
        Some(p) => {
            let path = if Path::new(p).is_absolute() { PathBuf::from(p) } else { base.join(p) };
            c.check("bus.calibration", CalibrationTable::from_path(&path))?
        }
    };
    let bus = BusLink::new(bus_cfg, table);

    let mut load = None;
    let mut node = NodeConfig::default();
    let mut threads = Vec::new();
    let mut harvest = None;
    match f.kind {
        Kind::Static => {
            if mode != Mode::Continuous {
                return Err(c.err("monitor.mode", "static scenarios need continuous mode"));
            }
            let l = f.load.as_ref().ok_or_else(|| c.err("load", "static scenarios need a [load] table"))?;
            load = Some(ConstantProfile {
                current: c.check("load.current_a", non_negative(l.current_a, "load current"))?,
                voltage: c.check("load.voltage_v", positive(l.voltage_v, "load voltage"))?,
            });
            for (k, &i) in f.sweep.currents_a.iter().enumerate() {
                c.check(&format!("sweep.currents_a[{k}]"), non_negative(i, "sweep current"))?;
            }
        }
        Kind::Node => {
            if mode == Mode::Triggered {
                return Err(c.err("monitor.mode", "node scenarios need continuous or power_down mode"));
            }
            let n = f.node.clone().unwrap_or_default();
            let ms = &n.measurement;
            node = NodeConfig {
                supply: Volts(c.check("node.supply_v", positive(n.supply_v, "supply"))?),
                idle_current: Amps(c.check("node.idle_current_a", non_negative(n.idle_current_a, "idle current"))?),
                measurement: MeasurementSpec {
                    priority: ms.priority,
                    t_proc: SimTime::from_secs_f64(
                        c.check("node.measurement.t_proc_us", non_negative(ms.t_proc_us, "processing time"))? * 1e-6,
                    ),
                    mcu_current: Amps(c.check(
                        "node.measurement.mcu_current_a",
                        non_negative(ms.mcu_current_a, "mcu current"),
                    )?),
                    reads: ms
                        .reads
                        .iter()
                        .map(|r| c.check("node.measurement.reads", parse_register(r)))
                        .collect::<Result<_>>()?,
                    starvation_deadline: ms.starvation_deadline_us.map(SimTime::from_us),
                },
                trace_mode: match n.trace_mode.as_str() {
                    "series" => TraceMode::Series,
                    "aggregate" => TraceMode::Aggregate,
                    other => return Err(c.err("node.trace_mode", format!("unknown trace mode `{other}`"))),
                },
            };
            if node.measurement.reads.is_empty() {
                return Err(c.err("node.measurement.reads", "at least one register read is required"));
            }
            for (k, t) in f.threads.iter().enumerate() {
                threads.push(build_thread(t, &format!("thread[{k}]"), c)?);
            }
            if let Some(r) = &f.random_threads {
                let spec = RandomSpec {
                    count: r.count,
                    priority: r.priority,
                    slices: r.slices,
                    slice: (SimTime::from_us(r.slice_min_us), SimTime::from_us(r.slice_max_us)),
                    sleep: (SimTime::from_us(r.sleep_min_us), SimTime::from_us(r.sleep_max_us)),
                    current: (Amps(r.current_min_a), Amps(r.current_max_a)),
                };
                let generated = c.check("random_threads", random_threads(&spec, r.seed.unwrap_or(f.seed)))?;
                threads.extend(generated);
            }
        }
        Kind::Harvest => {
            let h = f.harvest.clone().unwrap_or_default();
            harvest = Some(build_harvest(&h, c)?);
        }
    }
    if f.output.bin_s.is_nan() || f.output.bin_s <= 0.0 {
        return Err(c.err("output.bin_s", "bin length must be positive"));
    }

    Ok(Scenario {
        name: f.name,
        kind: f.kind,
        seed: f.seed,
        duration,
        oracle: f.oracle,
        oracle_step: SimTime::from_us(f.oracle_step_us),
        monitor,
        r_shunt,
        noise,
        monitor_power,
        bus,
        load,
        node,
        threads,
        harvest,
        sweep_currents: f.sweep.currents_a,
        output: f.output,
        source: src.to_string(),
    })
}

fn build_thread(t: &schema::Thread, field: &str, c: &Ctx) -> Result<ThreadSpec> {
    let mut script = Vec::with_capacity(t.script.len());
    for (k, s) in t.script.iter().enumerate() {
        let at = format!("{field}.script");
        let set = [s.compute_us.is_some(), s.sleep_us.is_some(), s.io_us.is_some(), s.trace_start.is_some(), s.trace_stop.is_some()];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(c.err(&at, format!("step {k} must set exactly one of compute_us, sleep_us, io_us, trace_start, trace_stop")));
        }
        let current = |need: bool| -> Result<Amps> {
            match s.current_a {
                Some(i) => c.check(&at, non_negative(i, "step current")).map(Amps),
                None if need => Err(c.err(&at, format!("step {k} needs current_a"))),
                None => Ok(Amps(0.0)),
            }
        };
        let a = if let Some(us) = s.compute_us {
            Activity::Compute { duration: SimTime::from_us(us), current: current(true)? }
        } else if let Some(us) = s.io_us {
            Activity::Io { duration: SimTime::from_us(us), current: current(true)? }
        } else if let Some(us) = s.sleep_us {
            if s.current_a.is_some() {
                return Err(c.err(&at, format!("step {k}: sleep does not take a current")));
            }
            Activity::Sleep { duration: SimTime::from_us(us) }
        } else if let Some(l) = &s.trace_start {
            Activity::TraceStart(l.clone())
        } else {
            Activity::TraceStop(s.trace_stop.clone().unwrap_or_default())
        };
        script.push(a);
    }
    Ok(ThreadSpec::new(t.id.clone(), t.priority, script, t.repeat))
}

fn build_harvest(h: &schema::Harvest, c: &Ctx) -> Result<HarvestConfig> {
    let cap = c.check(
        "harvest",
        SuperCap::new(Farads(h.capacitance_f), Volts(h.v_initial_v), Volts(h.v_max_v), Volts(h.v_min_operating_v)),
    )?;
    let s = &h.solar;
    let solar = match s.kind.as_str() {
        "sinusoid" => SolarProfile::Sinusoid {
            sunrise: Seconds(s.sunrise_h * 3600.0),
            sunset: Seconds(s.sunset_h * 3600.0),
            peak: Watts(s.peak_w),
        },
        "constant" => SolarProfile::Constant(Watts(s.power_w)),
        "piecewise" => SolarProfile::Piecewise(s.points.iter().map(|p| (p[0] * 3600.0, p[1])).collect()),
        other => return Err(c.err("harvest.solar.kind", format!("unknown solar profile `{other}`"))),
    };
    c.check("harvest.solar", solar.validate())?;
    let sub = |m: &schema::SubMonitor, mode: Mode, field: &str| {
        c.check(&format!("{field}.shunt_conv_us"), ConversionTime::from_us(m.shunt_conv_us))?;
        c.check(&format!("{field}.bus_conv_us"), ConversionTime::from_us(m.bus_conv_us))?;
        c.check(&format!("{field}.averaging"), Averaging::new(m.averaging))?;
        c.check(field, MonitorConfig::new(m.shunt_conv_us, m.bus_conv_us, m.averaging, mode, true))
    };
    let task = if h.task.is_empty() {
        dust_sensor_task()
    } else {
        h.task.iter().map(|p| TaskPhase { duration: SimTime::from_ms(p.duration_ms), power: Watts(p.power_w) }).collect()
    };
    let cfg = HarvestConfig {
        cap,
        solar,
        efficiency: h.efficiency,
        sleep_power: Watts(h.sleep_power_w),
        task,
        trace_every: h.trace_every,
        duty: DutyCycleParams {
            interval_min: Seconds(h.duty.interval_min_s),
            interval_max: Seconds(h.duty.interval_max_s),
            headroom: h.duty.headroom,
            alpha: h.duty.alpha,
            epsilon: Watts(h.duty.epsilon_w),
        },
        charge_monitor: sub(&h.charge_monitor, Mode::Triggered, "harvest.charge_monitor")?,
        trace_monitor: sub(&h.trace_monitor, Mode::Continuous, "harvest.trace_monitor")?,
        mcu_power: Watts(h.mcu_power_w),
        t_proc: SimTime::from_secs_f64(c.check("harvest.t_proc_us", non_negative(h.t_proc_us, "processing time"))? * 1e-6),
        max_step: SimTime::from_ms(h.max_step_ms),
    };
    c.check("harvest", cfg.validate())?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
format_version = 1
name = "t"
kind = "static"
duration_s = 0.1

[monitor]
averaging = 16

[load]
current_a = 0.02
voltage_v = 2.7
"#;

    fn parse(s: &str) -> Result<Scenario> {
        Scenario::parse(s, "t.scn", Path::new("."))
    }

    #[test]
    fn minimal_static() {
        let s = parse(MIN).unwrap();
        assert_eq!(s.kind, Kind::Static);
        assert_eq!(s.duration, SimTime::from_ms(100));
        assert_eq!(s.monitor.sample_period(), SimTime::from_us(10_624));
    }

    #[test]
    fn bad_averaging_points_at_line() {
        let e = parse(&MIN.replace("averaging = 16", "averaging = 17")).unwrap_err();
        let Error::Validation(m) = e else { panic!() };
        assert!(m.starts_with("t.scn:8: monitor.averaging"), "{m}");
        assert!(m.contains("17"), "{m}");
    }

    #[test]
    fn unknown_key_has_line_and_column() {
        let e = parse(&MIN.replace("averaging = 16", "averagin = 16")).unwrap_err();
        let Error::Validation(m) = e else { panic!() };
        assert!(m.starts_with("t.scn:8:1:"), "{m}");
    }

    #[test]
    fn version_is_checked() {
        let e = parse(&MIN.replace("format_version = 1", "format_version = 2")).unwrap_err();
        assert!(matches!(e, Error::Validation(m) if m.contains("t.scn:2: format_version")));
    }

    #[test]
    fn bad_conversion_time() {
        let e = parse(&MIN.replace("averaging = 16", "shunt_conv_us = 333")).unwrap_err();
        assert!(matches!(e, Error::Validation(m) if m.contains("333")));
    }

    #[test]
    fn thread_steps_validated() {
        let src = r#"
format_version = 1
name = "n"
kind = "node"
duration_s = 1

[[thread]]
id = "a"
priority = 1
script = [{ compute_us = 10 }]
"#;
        let e = parse(src).unwrap_err();
        assert!(matches!(e, Error::Validation(m) if m.contains("t.scn:10: thread[0].script") && m.contains("current_a")));
    }

    #[test]
    fn locate_nested() {
        let src = "a = 1\n[x]\nb = 2\n[[t]]\nc = 1\n[[t]]\nc = 2\n";
        assert_eq!(locate(src, "x.b"), Some(3));
        assert_eq!(locate(src, "t[1].c"), Some(7));
        assert_eq!(locate(src, "a"), Some(1));
    }
}
