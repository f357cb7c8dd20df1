//! Behavioral model of an INA226-style shunt/bus monitor.
//!
//! Each sample is produced by `averaging` internal steps; a step converts the
//! shunt channel over its conversion window, then the bus channel over the
//! following window. The true load is averaged over each window, Gaussian noise
//! is added to every shunt step, the steps are averaged and the result is
//! quantized into the register file.

mod registers;

pub use registers::{
    RegisterFile, RegisterId, MASK_AFF, MASK_CNVR, MASK_CVRF, MASK_OVF,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bus::{BusLink, ReadCost};
use crate::error::{invalid, Error, Result};
use crate::profile::LoadProfile;
use crate::time::SimTime;
use crate::units::{
    current_lsb, dequantize, quantize, Amps, Joules, Ohms, QuantizerSpec, Unit, Volts, Watts,
    SHUNT_FULL_SCALE_CODES,
};
use registers::{signed_register, unsigned_register};

/// Per-channel conversion time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConversionTime(u32);

impl ConversionTime {
    pub const ALLOWED_US: [u32; 8] = [140, 204, 332, 588, 1100, 2116, 4156, 8244];

    pub fn from_us(us: u32) -> Result<Self> {
        if Self::ALLOWED_US.contains(&us) {
            Ok(ConversionTime(us))
        } else {
            Err(invalid(format!(
                "conversion time {us} µs is not supported; choose one of {:?} µs",
                Self::ALLOWED_US
            )))
        }
    }

    pub fn us(self) -> u32 {
        self.0
    }

    pub fn duration(self) -> SimTime {
        SimTime::from_us(self.0 as u64)
    }

    fn field(self) -> u16 {
        Self::ALLOWED_US.iter().position(|&u| u == self.0).expect("validated") as u16
    }
}

/// Number of internal steps averaged into one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Averaging(u32);

impl Averaging {
    pub const ALLOWED: [u32; 8] = [1, 4, 16, 64, 128, 256, 512, 1024];

    pub fn new(n: u32) -> Result<Self> {
        if Self::ALLOWED.contains(&n) {
            Ok(Averaging(n))
        } else {
            Err(invalid(format!(
                "averaging {n} is not supported; choose one of {:?}",
                Self::ALLOWED
            )))
        }
    }

    pub fn count(self) -> u32 {
        self.0
    }

    fn field(self) -> u16 {
        Self::ALLOWED.iter().position(|&u| u == self.0).expect("validated") as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    PowerDown,
    Triggered,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MonitorConfig {
    pub shunt_conv: ConversionTime,
    pub bus_conv: ConversionTime,
    pub averaging: Averaging,
    pub mode: Mode,
    pub alert_enabled: bool,
}

impl MonitorConfig {
    pub fn new(shunt_us: u32, bus_us: u32, averaging: u32, mode: Mode, alert_enabled: bool) -> Result<Self> {
        Ok(MonitorConfig {
            shunt_conv: ConversionTime::from_us(shunt_us)?,
            bus_conv: ConversionTime::from_us(bus_us)?,
            averaging: Averaging::new(averaging)?,
            mode,
            alert_enabled,
        })
    }

    /// Time from the start of a sample to its completion.
    pub fn sample_period(&self) -> SimTime {
        SimTime::from_us((self.shunt_conv.us() as u64 + self.bus_conv.us() as u64) * self.averaging.count() as u64)
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn register_value(&self) -> u16 {
        let mode = match self.mode {
            Mode::PowerDown => 0b000,
            Mode::Triggered => 0b011,
            Mode::Continuous => 0b111,
        };
        0x4000 | (self.averaging.field() << 9) | (self.bus_conv.field() << 6) | (self.shunt_conv.field() << 3) | mode
    }
}

impl Default for MonitorConfig {
    /// 332 µs on both channels, 16 averages, continuous with alerting.
    fn default() -> Self {
        MonitorConfig::new(332, 332, 16, Mode::Continuous, true).expect("valid default")
    }
}

/// Analog error model applied before quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of additive noise on each shunt conversion step.
    pub sigma_shunt: Volts,
    /// Relative gain error of the shunt channel.
    pub gain_error: f64,
}

impl NoiseModel {
    pub fn new(sigma_shunt: Volts, gain_error: f64) -> Result<Self> {
        if !(sigma_shunt.0 >= 0.0) {
            return Err(invalid(format!("noise sigma must be non-negative, got {sigma_shunt}")));
        }
        if !(gain_error.abs() < 0.01) {
            return Err(invalid(format!("gain error must be below 1 %, got {gain_error}")));
        }
        Ok(NoiseModel { sigma_shunt, gain_error })
    }

    pub fn none() -> Self {
        NoiseModel { sigma_shunt: Volts(0.0), gain_error: 0.0 }
    }
}

impl Default for NoiseModel {
    /// 12 µV per step (3 µV after 16 averages) and +0.05 % gain.
    fn default() -> Self {
        NoiseModel { sigma_shunt: Volts(12e-6), gain_error: 5e-4 }
    }
}

/// Supply draw of the monitor itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorPower {
    /// While a conversion is in progress.
    pub active: Watts,
    /// Quiescent current when not converting.
    pub sleep_current: Amps,
    pub supply: Volts,
}

impl Default for MonitorPower {
    fn default() -> Self {
        MonitorPower { active: Watts(1.1e-3), sleep_current: Amps(2e-6), supply: Volts(3.0) }
    }
}

impl MonitorPower {
    pub fn sleep(&self) -> Watts {
        self.sleep_current * self.supply
    }
}

/// One completed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionEvent {
    /// Completion time; the alert fires here when enabled.
    pub t: SimTime,
    /// Start of the first conversion window of this sample.
    pub window_start: SimTime,
    pub alert: bool,
    pub shunt_code: i32,
    pub bus_code: i32,
    pub current_code: i32,
    pub power_code: i32,
    pub saturated: bool,
}

/// Emulated monitor state. Single owner; driven by a simulation loop.
#[derive(Debug, Clone)]
pub struct ShuntMonitor {
    config: MonitorConfig,
    r_shunt: Ohms,
    current_q: QuantizerSpec,
    power_q: QuantizerSpec,
    shunt_q: QuantizerSpec,
    bus_q: QuantizerSpec,
    noise: NoiseModel,
    noise_seed: u64,
    rng: ChaCha8Rng,
    power: MonitorPower,
    regs: RegisterFile,
    conversion_ready: bool,
    alert_flag: bool,
    overflow: bool,
    now: SimTime,
    cycle_start: SimTime,
    in_flight: bool,
    active_ns: u64,
    sleep_ns: u64,
    conversions: u64,
}

impl ShuntMonitor {
    pub fn new(config: MonitorConfig, r_shunt: Ohms, noise: NoiseModel, noise_seed: u64) -> Result<Self> {
        let i_lsb = current_lsb(r_shunt)?;
        let mut m = ShuntMonitor {
            config,
            r_shunt,
            current_q: QuantizerSpec::new(i_lsb.0, Unit::Ampere, SHUNT_FULL_SCALE_CODES, true)?,
            power_q: QuantizerSpec::new(25.0 * i_lsb.0, Unit::Watt, u16::MAX as i32, false)?,
            shunt_q: QuantizerSpec::shunt_voltage(),
            bus_q: QuantizerSpec::bus_voltage(),
            noise,
            noise_seed,
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            power: MonitorPower::default(),
            regs: RegisterFile::default(),
            conversion_ready: false,
            alert_flag: false,
            overflow: false,
            now: SimTime::ZERO,
            cycle_start: SimTime::ZERO,
            in_flight: false,
            active_ns: 0,
            sleep_ns: 0,
            conversions: 0,
        };
        m.regs.configuration = config.register_value();
        Ok(m)
    }

    pub fn with_power(mut self, power: MonitorPower) -> Self {
        self.power = power;
        self
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn r_shunt(&self) -> Ohms {
        self.r_shunt
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    pub fn current_lsb(&self) -> Amps {
        Amps(self.current_q.lsb)
    }

    pub fn power_lsb(&self) -> Watts {
        Watts(self.power_q.lsb)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn registers(&self) -> &RegisterFile {
        &self.regs
    }

    pub fn conversion_ready(&self) -> bool {
        self.conversion_ready
    }

    pub fn conversions(&self) -> u64 {
        self.conversions
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    /// Rewrites the configuration at the current time. Any conversion in flight is
    /// abandoned; continuous mode starts a fresh sample immediately.
    pub fn configure(&mut self, config: MonitorConfig) {
        self.config = config;
        self.regs.configuration = config.register_value();
        self.in_flight = false;
        self.cycle_start = self.now;
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.configure(self.config.with_mode(mode));
    }

    /// Completion time of the sample in progress, if any.
    pub fn next_completion(&self) -> Option<SimTime> {
        match self.config.mode {
            Mode::Continuous => Some(self.cycle_start + self.config.sample_period()),
            Mode::Triggered if self.in_flight => Some(self.cycle_start + self.config.sample_period()),
            _ => None,
        }
    }

    /// Starts one sample at the current time and returns when it will complete.
    pub fn trigger_single(&mut self) -> Result<SimTime> {
        if self.config.mode != Mode::Triggered {
            return Err(Error::Mode(format!(
                "single-shot trigger requires triggered mode, monitor is {:?}",
                self.config.mode
            )));
        }
        if self.in_flight {
            return Err(Error::Busy {
                until_ns: (self.cycle_start + self.config.sample_period()).as_ns(),
            });
        }
        self.in_flight = true;
        self.cycle_start = self.now;
        Ok(self.now + self.config.sample_period())
    }

    /// Whether the monitor is drawing active supply current right now.
    pub fn is_active(&self) -> bool {
        match self.config.mode {
            Mode::Continuous => true,
            Mode::Triggered => self.in_flight,
            Mode::PowerDown => false,
        }
    }

    /// Instantaneous supply draw of the monitor.
    pub fn supply_power(&self) -> Watts {
        if self.is_active() {
            self.power.active
        } else {
            self.power.sleep()
        }
    }

    pub fn supply_current_now(&self) -> Amps {
        self.supply_power() / self.power.supply
    }

    pub fn active_time(&self) -> SimTime {
        SimTime(self.active_ns)
    }

    pub fn sleep_time(&self) -> SimTime {
        SimTime(self.sleep_ns)
    }

    /// Energy drawn by the monitor since construction.
    pub fn supply_energy(&self) -> Joules {
        self.power.active * self.active_time().seconds() + self.power.sleep() * self.sleep_time().seconds()
    }

    fn account(&mut self, from: SimTime, to: SimTime, active: bool) {
        let d = (to - from).as_ns();
        if active {
            self.active_ns += d;
        } else {
            self.sleep_ns += d;
        }
    }

    /// Moves the monitor clock to `until`, completing every sample that ends on or before it.
    pub fn advance(&mut self, load: &dyn LoadProfile, until: SimTime) -> Result<Vec<ConversionEvent>> {
        if until < self.now {
            return Err(Error::Contract(format!(
                "monitor time cannot move backwards ({} -> {})",
                self.now, until
            )));
        }
        let period = self.config.sample_period();
        let mut events = Vec::new();
        match self.config.mode {
            Mode::PowerDown => self.account(self.now, until, false),
            Mode::Continuous => {
                while self.cycle_start + period <= until {
                    let start = self.cycle_start;
                    events.push(self.complete(load, start));
                    self.cycle_start = start + period;
                }
                self.account(self.now, until, true);
            }
            Mode::Triggered => {
                if self.in_flight {
                    let done = self.cycle_start + period;
                    if done <= until {
                        let start = self.cycle_start;
                        events.push(self.complete(load, start));
                        self.in_flight = false;
                        self.account(self.now, done, true);
                        self.account(done, until, false);
                    } else {
                        self.account(self.now, until, true);
                    }
                } else {
                    self.account(self.now, until, false);
                }
            }
        }
        self.now = until;
        Ok(events)
    }

    fn complete(&mut self, load: &dyn LoadProfile, start: SimTime) -> ConversionEvent {
        let shunt = self.config.shunt_conv.duration();
        let bus = self.config.bus_conv.duration();
        let n = self.config.averaging.count();
        let normal = (self.noise.sigma_shunt.0 > 0.0)
            .then(|| Normal::new(0.0, self.noise.sigma_shunt.0).expect("finite sigma"));
        let gain = 1.0 + self.noise.gain_error;
        let mut shunt_sum = 0.0;
        let mut bus_sum = 0.0;
        let mut t = start;
        for _ in 0..n {
            let i = load.mean_current(t, t + shunt);
            let mut v = i * self.r_shunt.0 * gain;
            if let Some(dist) = &normal {
                v += dist.sample(&mut self.rng);
            }
            shunt_sum += v;
            bus_sum += load.mean_voltage(t + shunt, t + shunt + bus);
            t = t + shunt + bus;
        }
        let v_shunt = shunt_sum / n as f64;
        let v_bus = bus_sum / n as f64;

        let shunt_code = quantize(v_shunt, &self.shunt_q);
        let bus_code = quantize(v_bus, &self.bus_q);
        let current_code = quantize(v_shunt / self.r_shunt.0, &self.current_q);
        let (shunt_raw, c1) = signed_register(shunt_code.value);
        let (bus_raw, c2) = unsigned_register(bus_code.value, 0x7FFF);
        let (current_raw, c3) = signed_register(current_code.value);
        // The device multiplies its own register contents.
        let p = dequantize(bus_raw as i32, &self.bus_q) * dequantize(current_raw as i16 as i32, &self.current_q);
        let power_code = quantize(p.abs(), &self.power_q);
        let (power_raw, c4) = unsigned_register(power_code.value, u16::MAX);

        let saturated = shunt_code.saturated
            || bus_code.saturated
            || current_code.saturated
            || power_code.saturated
            || c1
            || c2
            || c3
            || c4;
        self.overflow |= saturated;
        self.regs.shunt_voltage = shunt_raw;
        self.regs.bus_voltage = bus_raw;
        self.regs.current = current_raw;
        self.regs.power = power_raw;
        self.conversion_ready = true;
        if self.config.alert_enabled {
            self.alert_flag = true;
        }
        self.conversions += 1;
        ConversionEvent {
            t,
            window_start: start,
            alert: self.config.alert_enabled,
            shunt_code: shunt_code.value,
            bus_code: bus_code.value,
            current_code: current_code.value,
            power_code: power_code.value,
            saturated,
        }
    }

    fn mask_enable(&self) -> u16 {
        let mut v = 0;
        if self.config.alert_enabled {
            v |= MASK_CNVR;
        }
        if self.alert_flag {
            v |= MASK_AFF;
        }
        if self.conversion_ready {
            v |= MASK_CVRF;
        }
        if self.overflow {
            v |= MASK_OVF;
        }
        v
    }

    /// Reads one register over `bus`. Reading mask/enable clears the ready and alert flags.
    pub fn read_register(&mut self, which: RegisterId, bus: &BusLink) -> Result<(u16, ReadCost)> {
        let cost = bus.read_cost(1)?;
        let value = match which {
            RegisterId::MaskEnable => {
                let v = self.mask_enable();
                self.conversion_ready = false;
                self.alert_flag = false;
                v
            }
            other => self.regs.get(other).expect("data register"),
        };
        Ok((value, cost))
    }

    /// Reads by raw address; unknown addresses are rejected.
    pub fn read_address(&mut self, addr: u8, bus: &BusLink) -> Result<(u16, ReadCost)> {
        self.read_register(RegisterId::from_address(addr)?, bus)
    }

    pub fn shunt_volts(&self, raw: u16) -> Volts {
        Volts(dequantize(raw as i16 as i32, &self.shunt_q))
    }

    pub fn bus_volts(&self, raw: u16) -> Volts {
        Volts(dequantize(raw as i32, &self.bus_q))
    }

    pub fn current_amps(&self, raw: u16) -> Amps {
        Amps(dequantize(raw as i16 as i32, &self.current_q))
    }

    pub fn power_watts(&self, raw: u16) -> Watts {
        Watts(dequantize(raw as i32, &self.power_q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{ConstantProfile, Owner, PiecewiseProfile};
    use proptest::prelude::*;

    fn load(i: f64) -> ConstantProfile {
        ConstantProfile { current: i, voltage: 2.7 }
    }

    fn monitor(cfg: MonitorConfig, noise: NoiseModel) -> ShuntMonitor {
        ShuntMonitor::new(cfg, Ohms(2.0), noise, 7).unwrap()
    }

    #[test]
    fn config_sets_are_enforced() {
        assert!(ConversionTime::from_us(333).is_err());
        assert!(Averaging::new(2).is_err());
        assert!(MonitorConfig::new(140, 8244, 1024, Mode::Continuous, false).is_ok());
        let e = MonitorConfig::new(100, 332, 16, Mode::Continuous, true).unwrap_err();
        assert!(e.to_string().contains("140"), "{e}");
    }

    #[test]
    fn one_event_per_period() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        let period = MonitorConfig::default().sample_period();
        assert_eq!(period, SimTime::from_ns(10_624_000));
        let ev = m.advance(&load(0.01), period).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].t, SimTime::from_us(10_624));
        assert!(ev[0].alert);
        let ev = m.advance(&load(0.01), period + period - SimTime(1)).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn power_down_produces_nothing() {
        let cfg = MonitorConfig::default().with_mode(Mode::PowerDown);
        let mut m = monitor(cfg, NoiseModel::default());
        assert!(m.advance(&load(0.02), SimTime::from_ms(1_000)).unwrap().is_empty());
        assert_eq!(*m.registers(), RegisterFile { configuration: m.registers().configuration, ..Default::default() });
        assert!(m.supply_current_now().0 <= 2e-6);
    }

    #[test]
    fn constant_20ma_reads_exactly() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        let ev = m.advance(&load(0.020), SimTime::from_ms(11)).unwrap();
        assert_eq!(ev[0].current_code, 16_000);
        let bus = BusLink::default();
        let (raw, _) = m.read_register(RegisterId::Current, &bus).unwrap();
        assert_eq!(raw, 16_000);
        assert_eq!(m.current_amps(raw), Amps(0.020));
        let (shunt, _) = m.read_register(RegisterId::ShuntVoltage, &bus).unwrap();
        assert!((raw as i32 - shunt as i32).abs() <= 1);
    }

    #[test]
    fn power_register_matches_product() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        m.advance(&load(0.020), SimTime::from_ms(11)).unwrap();
        let (raw, _) = m.read_register(RegisterId::Power, &BusLink::default()).unwrap();
        let p = m.power_watts(raw).0;
        assert!((p - 0.054).abs() <= m.power_lsb().0, "{p}");
        assert_eq!(m.power_lsb(), Watts(25.0 * 1.25e-6));
    }

    #[test]
    fn triggered_single_shot() {
        let cfg = MonitorConfig::new(1100, 1100, 64, Mode::Triggered, true).unwrap();
        let mut m = monitor(cfg, NoiseModel::none());
        let t0 = SimTime::from_ms(5);
        m.advance(&load(0.001), t0).unwrap();
        let done = m.trigger_single().unwrap();
        assert_eq!(done, t0 + SimTime::from_us(140_800));
        assert!(matches!(m.trigger_single(), Err(Error::Busy { .. })));
        let ev = m.advance(&load(0.001), done + SimTime::from_ms(500)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].t, done);
        assert!(!m.in_flight());
        assert!(m.trigger_single().is_ok());
    }

    #[test]
    fn trigger_requires_triggered_mode() {
        let mut m = monitor(MonitorConfig::default().with_mode(Mode::PowerDown), NoiseModel::none());
        assert!(matches!(m.trigger_single(), Err(Error::Mode(_))));
    }

    #[test]
    fn read_cost_and_latching() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::default());
        m.advance(&load(0.005), SimTime::from_ms(11)).unwrap();
        let bus = BusLink::default();
        let (a, cost) = m.read_register(RegisterId::Current, &bus).unwrap();
        let (b, _) = m.read_register(RegisterId::Current, &bus).unwrap();
        assert_eq!(a, b);
        assert!((cost.time.0 - 33e-6).abs() < 1e-15);
        assert!(matches!(m.read_address(0x05, &bus), Err(Error::UnknownRegister(0x05))));
    }

    #[test]
    fn mask_enable_read_clears_ready() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        m.advance(&load(0.005), SimTime::from_ms(11)).unwrap();
        assert!(m.conversion_ready());
        let bus = BusLink::default();
        let (v, _) = m.read_register(RegisterId::MaskEnable, &bus).unwrap();
        assert_ne!(v & MASK_CVRF, 0);
        assert_ne!(v & MASK_AFF, 0);
        assert!(!m.conversion_ready());
        let (v, _) = m.read_register(RegisterId::MaskEnable, &bus).unwrap();
        assert_eq!(v & (MASK_CVRF | MASK_AFF), 0);
    }

    #[test]
    fn time_cannot_go_backwards() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        m.advance(&load(0.0), SimTime::from_ms(5)).unwrap();
        assert!(matches!(m.advance(&load(0.0), SimTime::from_ms(4)), Err(Error::Contract(_))));
    }

    #[test]
    fn overflow_is_sticky() {
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        let p = SimTime::from_us(10_624);
        let ev = m.advance(&load(0.050), p).unwrap();
        assert!(ev[0].saturated);
        m.advance(&load(0.001), p + p).unwrap();
        let (v, _) = m.read_register(RegisterId::MaskEnable, &BusLink::default()).unwrap();
        assert_ne!(v & MASK_OVF, 0);
    }

    #[test]
    fn full_scale_current_saturates_register() {
        // 40.96 mA is code 32768, one past the largest 16-bit positive value.
        let mut m = monitor(MonitorConfig::default(), NoiseModel::none());
        let ev = m.advance(&load(0.04096), SimTime::from_ms(11)).unwrap();
        assert_eq!(ev[0].current_code, 32_768);
        assert_eq!(m.registers().current, 0x7FFF);
        assert!(ev[0].saturated);
    }

    #[test]
    fn alerts_reproducible() {
        let run = || {
            let mut m = monitor(MonitorConfig::new(140, 204, 4, Mode::Continuous, true).unwrap(), NoiseModel::default());
            m.advance(&load(0.003), SimTime::from_ms(50))
                .unwrap()
                .iter()
                .map(|e| (e.t, e.current_code))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        for w in a.windows(2) {
            assert_eq!(w[1].0 - w[0].0, SimTime::from_us(4 * 344));
        }
    }

    #[test]
    fn window_integration_follows_load_steps() {
        // First half of every shunt window at 10 mA, second half at 0.
        let cfg = MonitorConfig::new(140, 140, 1, Mode::Continuous, true).unwrap();
        let mut p = PiecewiseProfile::new();
        p.extend_to(SimTime::from_us(70), 3.0, &[(Owner::Unattributed, 0.010)]);
        p.extend_to(SimTime::from_us(280), 3.0, &[(Owner::Unattributed, 0.0)]);
        let mut m = monitor(cfg, NoiseModel::none());
        let ev = m.advance(&p, SimTime::from_us(280)).unwrap();
        assert_eq!(ev[0].current_code, 4_000);
    }

    #[test]
    fn supply_energy_splits_active_and_sleep() {
        let cfg = MonitorConfig::new(1100, 1100, 64, Mode::Triggered, true).unwrap();
        let mut m = monitor(cfg, NoiseModel::none());
        let done = m.trigger_single().unwrap();
        m.advance(&load(0.0), SimTime::from_ms(1_000)).unwrap();
        assert_eq!(m.active_time(), done);
        assert_eq!(m.sleep_time(), SimTime::from_ms(1_000) - done);
        let expect = 1.1e-3 * done.as_secs_f64() + 6e-6 * (1.0 - done.as_secs_f64());
        assert!((m.supply_energy().0 - expect).abs() < 1e-15);
    }

    #[test]
    fn averaging_reduces_noise_by_sqrt_n() {
        // Large sigma so quantization is negligible.
        let noise = NoiseModel::new(Volts(200e-6), 0.0).unwrap();
        let spread = |avg: u32| {
            let cfg = MonitorConfig::new(140, 140, avg, Mode::Continuous, false).unwrap();
            let mut m = ShuntMonitor::new(cfg, Ohms(2.0), noise, 99).unwrap();
            let n = 4000u64;
            let until = SimTime(cfg.sample_period().as_ns() * n);
            let codes: Vec<f64> = m
                .advance(&load(0.010), until)
                .unwrap()
                .iter()
                .map(|e| e.shunt_code as f64 * 2.5e-6)
                .collect();
            let mean = codes.iter().sum::<f64>() / codes.len() as f64;
            (codes.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (codes.len() - 1) as f64).sqrt()
        };
        let ratio = spread(1) / spread(16);
        assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn zero_noise_error_within_half_lsb(i in 1e-7f64..0.04095) {
            let mut m = monitor(MonitorConfig::new(140, 140, 1, Mode::Continuous, false).unwrap(), NoiseModel::none());
            m.advance(&load(i), SimTime::from_us(280)).unwrap();
            let (raw, _) = m.read_register(RegisterId::Current, &BusLink::default()).unwrap();
            let err = (m.current_amps(raw).0 - i).abs();
            prop_assert!(err <= 0.5 * 1.25e-6 * (1.0 + 1e-9), "i={i} err={err}");
        }
    }
}
