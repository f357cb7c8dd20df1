//! On-disk scenario format (TOML). Every table rejects unknown keys.

use serde::Deserialize;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// A fixed load in front of the monitor; every conversion is read out.
    Static,
    /// Scripted threads on the scheduler with a measurement thread.
    Node,
    /// Harvesting node firmware over a solar day.
    Harvest,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct File {
    pub format_version: u32,
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default = "one")]
    pub oracle_step_us: u64,
    #[serde(default)]
    pub monitor: Monitor,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub bus: Bus,
    pub load: Option<Load>,
    pub node: Option<Node>,
    #[serde(default, rename = "thread")]
    pub threads: Vec<Thread>,
    pub random_threads: Option<RandomThreads>,
    pub harvest: Option<Harvest>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: Output,
}

fn yes() -> bool {
    true
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Monitor {
    pub shunt_conv_us: u32,
    pub bus_conv_us: u32,
    pub averaging: u32,
    pub mode: String,
    pub alert: bool,
    pub r_shunt_ohms: f64,
    pub active_power_w: f64,
    pub sleep_current_a: f64,
    pub supply_v: f64,
}

impl Default for Monitor {
    fn default() -> Self {
        Monitor {
            shunt_conv_us: 332,
            bus_conv_us: 332,
            averaging: 16,
            mode: "continuous".into(),
            alert: true,
            r_shunt_ohms: 2.0,
            active_power_w: 1.1e-3,
            sleep_current_a: 2e-6,
            supply_v: 3.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Noise {
    pub sigma_shunt_uv: f64,
    pub gain_error: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise { sigma_shunt_uv: 12.0, gain_error: 5e-4 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bus {
    pub speed_mode: String,
    pub pullup_ohms: f64,
    pub c_bus_pf: f64,
    pub v_dd: f64,
    /// CSV with speed_mode, pullup_ohms, time_us, energy_nWs; relative to the scenario file.
    pub calibration: Option<String>,
}

impl Default for Bus {
    fn default() -> Self {
        Bus { speed_mode: "high".into(), pullup_ohms: 2200.0, c_bus_pf: 158.0, v_dd: 3.3, calibration: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub current_a: f64,
    pub voltage_v: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Node {
    pub supply_v: f64,
    pub idle_current_a: f64,
    pub trace_mode: String,
    pub measurement: Measurement,
}

impl Default for Node {
    fn default() -> Self {
        Node { supply_v: 2.7, idle_current_a: 30e-6 / 2.7, trace_mode: "series".into(), measurement: Measurement::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Measurement {
    pub priority: u32,
    pub t_proc_us: f64,
    pub mcu_current_a: f64,
    pub reads: Vec<String>,
    pub starvation_deadline_us: Option<u64>,
}

impl Default for Measurement {
    fn default() -> Self {
        Measurement {
            priority: 0,
            t_proc_us: 160.0,
            mcu_current_a: 12e-3,
            reads: vec!["mask_enable".into(), "bus_voltage".into(), "current".into()],
            starvation_deadline_us: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thread {
    pub id: String,
    pub priority: u32,
    #[serde(default)]
    pub repeat: bool,
    pub script: Vec<Step>,
}

/// One script step; exactly one of the duration keys or trace keys is set.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Step {
    pub compute_us: Option<u64>,
    pub sleep_us: Option<u64>,
    pub io_us: Option<u64>,
    pub current_a: Option<f64>,
    pub trace_start: Option<String>,
    pub trace_stop: Option<String>,
}

/// Generates `count` threads of random compute/sleep alternations.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomThreads {
    pub count: usize,
    pub seed: Option<u64>,
    pub priority: u32,
    pub slices: usize,
    pub slice_min_us: u64,
    pub slice_max_us: u64,
    pub sleep_min_us: u64,
    pub sleep_max_us: u64,
    pub current_min_a: f64,
    pub current_max_a: f64,
}

impl Default for RandomThreads {
    fn default() -> Self {
        RandomThreads {
            count: 3,
            seed: None,
            priority: 5,
            slices: 40,
            slice_min_us: 20_000,
            slice_max_us: 100_000,
            sleep_min_us: 5_000,
            sleep_max_us: 60_000,
            current_min_a: 9e-3,
            current_max_a: 15e-3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Harvest {
    pub capacitance_f: f64,
    pub v_initial_v: f64,
    pub v_max_v: f64,
    pub v_min_operating_v: f64,
    pub efficiency: f64,
    pub sleep_power_w: f64,
    pub trace_every: u32,
    pub mcu_power_w: f64,
    pub t_proc_us: f64,
    pub max_step_ms: u64,
    pub solar: Solar,
    pub duty: Duty,
    pub charge_monitor: SubMonitor,
    pub trace_monitor: SubMonitor,
    /// Empty means the built-in dust-sensor task.
    pub task: Vec<Phase>,
}

impl Default for Harvest {
    fn default() -> Self {
        Harvest {
            capacitance_f: 100.0,
            v_initial_v: 2.3,
            v_max_v: 2.7,
            v_min_operating_v: 1.8,
            efficiency: 1.0,
            sleep_power_w: 30e-6,
            trace_every: 10,
            mcu_power_w: 30e-3,
            t_proc_us: 160.0,
            max_step_ms: 1000,
            solar: Solar::default(),
            duty: Duty::default(),
            charge_monitor: SubMonitor { shunt_conv_us: 8244, bus_conv_us: 8244, averaging: 1024 },
            trace_monitor: SubMonitor { shunt_conv_us: 588, bus_conv_us: 588, averaging: 4 },
            task: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solar {
    /// `sinusoid`, `constant` or `piecewise`.
    pub kind: String,
    pub sunrise_h: f64,
    pub sunset_h: f64,
    pub peak_w: f64,
    pub power_w: f64,
    /// `[hour, watts]` pairs for `piecewise`.
    pub points: Vec<[f64; 2]>,
}

impl Default for Solar {
    fn default() -> Self {
        Solar { kind: "sinusoid".into(), sunrise_h: 6.0, sunset_h: 20.0, peak_w: 0.08, power_w: 0.0, points: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Duty {
    pub interval_min_s: f64,
    pub interval_max_s: f64,
    pub headroom: f64,
    pub alpha: f64,
    pub epsilon_w: f64,
}

impl Default for Duty {
    fn default() -> Self {
        Duty { interval_min_s: 10.0, interval_max_s: 300.0, headroom: 0.8, alpha: 0.2, epsilon_w: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubMonitor {
    pub shunt_conv_us: u32,
    pub bus_conv_us: u32,
    pub averaging: u32,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub duration_ms: u64,
    pub power_w: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    /// Static scenarios only: repeat the seed sweep at each of these load currents.
    pub currents_a: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub samples: bool,
    pub traces: bool,
    pub bin_s: f64,
}

impl Default for Output {
    fn default() -> Self {
        Output { samples: true, traces: true, bin_s: 7200.0 }
    }
}
