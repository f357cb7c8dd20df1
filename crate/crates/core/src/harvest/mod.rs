//! Energy harvesting: super capacitor store, solar input, duty-cycle control and
//! the node firmware loop that ties them to the shunt monitor.

pub mod node;
pub mod report;

pub use node::{
    dust_sensor_task, simulate, ChargingMeasurement, CycleLog, EnergyLedger, HarvestConfig, HarvestNode, HarvestRun, TaskPhase,
};
pub use report::{bin_report, DayBin, DEFAULT_BIN};

use crate::error::{invalid, Result};
use crate::sched::TraceRecord;
use crate::time::SimTime;
use crate::units::{Farads, Joules, Seconds, Volts, Watts};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperCap {
    pub capacitance: Farads,
    pub v_now: Volts,
    pub v_max: Volts,
    /// Below this the node browns out and skips its task.
    pub v_min_operating: Volts,
}

impl SuperCap {
    pub fn new(capacitance: Farads, v_now: Volts, v_max: Volts, v_min_operating: Volts) -> Result<Self> {
        if !(capacitance.0 > 0.0) || !capacitance.0.is_finite() {
            return Err(invalid("capacitance must be positive"));
        }
        if !(v_max.0 > 0.0) || !v_max.0.is_finite() {
            return Err(invalid("v_max must be positive"));
        }
        if !(0.0..=v_max.0).contains(&v_now.0) {
            return Err(invalid(format!("initial voltage {} outside [0, {}]", v_now, v_max)));
        }
        if !(0.0..=v_max.0).contains(&v_min_operating.0) {
            return Err(invalid(format!("v_min_operating {} outside [0, {}]", v_min_operating, v_max)));
        }
        Ok(SuperCap { capacitance, v_now, v_max, v_min_operating })
    }

    pub fn energy(&self) -> Joules {
        self.energy_at(self.v_now)
    }

    pub fn energy_at(&self, v: Volts) -> Joules {
        Joules(0.5 * self.capacitance.0 * v.0 * v.0)
    }

    pub fn headroom(&self) -> Joules {
        self.energy_at(self.v_max) - self.energy()
    }

    pub fn is_full(&self) -> bool {
        self.v_now.0 >= self.v_max.0
    }
}

impl Default for SuperCap {
    fn default() -> Self {
        SuperCap { capacitance: Farads(100.0), v_now: Volts(2.3), v_max: Volts(2.7), v_min_operating: Volts(1.8) }
    }
}

/// Result of moving the store forward by one constant-power step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapStep {
    pub cap: SuperCap,
    /// Offered energy that did not fit because the store was full.
    pub unharvested: Joules,
    /// Demanded energy the empty store could not supply.
    pub unserved: Joules,
}

/// Applies net power `p_net` (positive charges) for `dt`.
pub fn cap_step(cap: &SuperCap, p_net: Watts, dt: Seconds) -> Result<CapStep> {
    if !(dt.0 > 0.0) {
        return Err(invalid("cap_step needs dt > 0"));
    }
    let c = cap.capacitance.0;
    let e0 = cap.energy().0;
    let e_max = cap.energy_at(cap.v_max).0;
    let e1 = e0 + p_net.0 * dt.0;
    let mut next = *cap;
    let (mut unharvested, mut unserved) = (0.0, 0.0);
    let e = if e1 > e_max {
        unharvested = e1 - e_max.max(e0);
        e_max.max(e0)
    } else if e1 < 0.0 {
        unserved = -e1;
        0.0
    } else {
        e1
    };
    next.v_now = if e == e_max { cap.v_max } else { Volts((2.0 * e / c).sqrt().min(cap.v_max.0)) };
    Ok(CapStep { cap: next, unharvested: Joules(unharvested), unserved: Joules(unserved) })
}

/// Harvestable panel power as a function of time of day.
#[derive(Debug, Clone, PartialEq)]
pub enum SolarProfile {
    Constant(Watts),
    /// Half-sine between sunrise and sunset (seconds after midnight), repeating daily.
    Sinusoid { sunrise: Seconds, sunset: Seconds, peak: Watts },
    /// Linear interpolation between `(seconds after midnight, W)` points, held flat
    /// outside them, repeating daily.
    Piecewise(Vec<(f64, f64)>),
}

impl SolarProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            SolarProfile::Constant(p) if !(p.0 >= 0.0) => Err(invalid("solar power must be non-negative")),
            SolarProfile::Sinusoid { sunrise, sunset, peak } => {
                if !(peak.0 >= 0.0) {
                    return Err(invalid("solar peak must be non-negative"));
                }
                if !(0.0 <= sunrise.0 && sunrise.0 < sunset.0 && sunset.0 <= SECONDS_PER_DAY) {
                    return Err(invalid("need 0 <= sunrise < sunset <= 24 h"));
                }
                Ok(())
            }
            SolarProfile::Piecewise(points) => {
                if points.is_empty() {
                    return Err(invalid("piecewise solar profile needs at least one point"));
                }
                if points.iter().any(|&(_, p)| !(p >= 0.0)) {
                    return Err(invalid("solar power must be non-negative"));
                }
                if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(invalid("solar profile times must increase"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn power_at(&self, t: SimTime) -> Watts {
        let tod = t.as_secs_f64() % SECONDS_PER_DAY;
        match self {
            SolarProfile::Constant(p) => *p,
            SolarProfile::Sinusoid { sunrise, sunset, peak } => {
                if tod <= sunrise.0 || tod >= sunset.0 {
                    Watts(0.0)
                } else {
                    let x = (tod - sunrise.0) / (sunset.0 - sunrise.0);
                    Watts((peak.0 * (std::f64::consts::PI * x).sin()).max(0.0))
                }
            }
            SolarProfile::Piecewise(points) => {
                let k = points.partition_point(|&(s, _)| s <= tod);
                if k == 0 {
                    Watts(points[0].1)
                } else if k == points.len() {
                    Watts(points[k - 1].1)
                } else {
                    let (a, b) = (points[k - 1], points[k]);
                    Watts(a.1 + (tod - a.0) / (b.0 - a.0) * (b.1 - a.1))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycleParams {
    pub interval_min: Seconds,
    pub interval_max: Seconds,
    pub headroom: f64,
    /// EWMA weight of the newest observation.
    pub alpha: f64,
    /// Floor for the charging estimate in the interval formula.
    pub epsilon: Watts,
}

impl Default for DutyCycleParams {
    fn default() -> Self {
        DutyCycleParams {
            interval_min: Seconds(10.0),
            interval_max: Seconds(300.0),
            headroom: 0.8,
            alpha: 0.2,
            epsilon: Watts(1e-6),
        }
    }
}

impl DutyCycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_min.0 > 0.0 && self.interval_min.0 <= self.interval_max.0) {
            return Err(invalid("need 0 < interval_min <= interval_max"));
        }
        if !(self.headroom > 0.0 && self.headroom <= 1.0) {
            return Err(invalid("headroom must be in (0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha must be in (0, 1]"));
        }
        if !(self.epsilon.0 > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Controller state. The first observation of each quantity seeds its
/// estimate; later ones are blended in with weight `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyCycleState {
    pub params: DutyCycleParams,
    pub task_energy_estimate: Option<Joules>,
    pub harvest_power_estimate: Option<Watts>,
    pub interval: Seconds,
}

impl DutyCycleState {
    pub fn new(params: DutyCycleParams) -> Result<Self> {
        params.validate()?;
        Ok(DutyCycleState { params, task_energy_estimate: None, harvest_power_estimate: None, interval: params.interval_max })
    }

    pub fn observe_task(&mut self, energy: Joules) {
        let a = self.params.alpha;
        self.task_energy_estimate = Some(match self.task_energy_estimate {
            None => energy,
            Some(prev) => Joules(a * energy.0 + (1.0 - a) * prev.0),
        });
        self.recompute();
    }

    pub fn observe_charging(&mut self, power: Watts) {
        let a = self.params.alpha;
        self.harvest_power_estimate = Some(match self.harvest_power_estimate {
            None => power,
            Some(prev) => Watts(a * power.0 + (1.0 - a) * prev.0),
        });
        self.recompute();
    }

    fn recompute(&mut self) {
        let p = &self.params;
        self.interval = match self.task_energy_estimate {
            None => p.interval_max,
            Some(e) => {
                let charging = self.harvest_power_estimate.map_or(0.0, |w| w.0).max(p.epsilon.0);
                Seconds((e.0 / (p.headroom * charging)).clamp(p.interval_min.0, p.interval_max.0))
            }
        };
    }
}

/// Folds one traced task execution and one charging measurement into the controller.
pub fn adapt_interval(state: &DutyCycleState, traced: &TraceRecord, charging: Watts) -> Result<DutyCycleState> {
    if !(traced.aggregate.0 > 0.0) {
        return Err(invalid(format!("trace `{}` has no positive energy", traced.label)));
    }
    let mut next = *state;
    next.observe_task(traced.aggregate);
    next.observe_charging(charging);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cap(v: f64) -> SuperCap {
        SuperCap::new(Farads(100.0), Volts(v), Volts(2.7), Volts(1.8)).unwrap()
    }

    fn traced(e: f64) -> TraceRecord {
        TraceRecord {
            label: "task".into(),
            start: SimTime::ZERO,
            end: SimTime::from_ms(1),
            samples: vec![],
            aggregate: Joules(e),
            gaps: vec![],
        }
    }

    #[test]
    fn extract_twenty_joules() {
        let s = cap_step(&cap(2.0), Watts(-20.0), Seconds(1.0)).unwrap();
        assert!((s.cap.v_now.0 - 3.6f64.sqrt()).abs() < 1e-12);
        assert!((s.cap.v_now.0 - 1.897).abs() < 5e-4);
    }

    #[test]
    fn zero_power_keeps_voltage() {
        let s = cap_step(&cap(2.3), Watts(0.0), Seconds(10.0)).unwrap();
        assert_eq!(s.cap.v_now, Volts(2.3));
    }

    #[test]
    fn full_store_spills() {
        let s = cap_step(&cap(2.7), Watts(0.025), Seconds(4.0)).unwrap();
        assert_eq!(s.cap.v_now, Volts(2.7));
        assert!((s.unharvested.0 - 0.1).abs() < 1e-12);
        assert!(cap_step(&cap(2.7), Watts(1.0), Seconds(0.0)).is_err());
    }

    #[test]
    fn empty_store_reports_unserved() {
        let s = cap_step(&cap(0.1), Watts(-1.0), Seconds(1.0)).unwrap();
        assert_eq!(s.cap.v_now, Volts(0.0));
        assert!((s.unserved.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        let st = DutyCycleState::new(DutyCycleParams::default()).unwrap();
        let a = adapt_interval(&st, &traced(0.5), Watts(0.025)).unwrap();
        assert!((a.interval.0 - 25.0).abs() < 1e-12);
        let b = adapt_interval(&st, &traced(0.5), Watts(0.0)).unwrap();
        assert_eq!(b.interval, Seconds(300.0));
        let c = adapt_interval(&st, &traced(0.5), Watts(10.0)).unwrap();
        assert_eq!(c.interval, Seconds(10.0));
        assert!(adapt_interval(&st, &traced(0.0), Watts(1.0)).is_err());
    }

    #[test]
    fn ewma_blends() {
        let mut st = DutyCycleState::new(DutyCycleParams::default()).unwrap();
        st.observe_task(Joules(1.0));
        st.observe_task(Joules(2.0));
        assert!((st.task_energy_estimate.unwrap().0 - 1.2).abs() < 1e-12);
    }

    #[test]
    fn solar_shapes() {
        let s = SolarProfile::Sinusoid { sunrise: Seconds(6.0 * 3600.0), sunset: Seconds(20.0 * 3600.0), peak: Watts(0.1) };
        s.validate().unwrap();
        assert_eq!(s.power_at(SimTime::from_secs_f64(3.0 * 3600.0)), Watts(0.0));
        assert!((s.power_at(SimTime::from_secs_f64(13.0 * 3600.0)).0 - 0.1).abs() < 1e-12);
        assert!((s.power_at(SimTime::from_secs_f64(37.0 * 3600.0)).0 - 0.1).abs() < 1e-12);
        let p = SolarProfile::Piecewise(vec![(0.0, 0.0), (100.0, 1.0)]);
        assert!((p.power_at(SimTime::from_secs_f64(25.0)).0 - 0.25).abs() < 1e-12);
        assert!(SolarProfile::Piecewise(vec![(1.0, 0.0), (1.0, 1.0)]).validate().is_err());
        assert!(SolarProfile::Constant(Watts(-1.0)).validate().is_err());
    }

    proptest! {
        #[test]
        fn voltage_stays_in_range(v in 0.0f64..2.7, p in -5.0f64..5.0, dt in 1e-3f64..1e3) {
            let c = cap(v);
            let s = cap_step(&c, Watts(p), Seconds(dt)).unwrap();
            prop_assert!(s.cap.v_now.0 >= 0.0 && s.cap.v_now.0 <= 2.7);
            let lhs = p * dt - s.unharvested.0 + s.unserved.0;
            let rhs = s.cap.energy().0 - c.energy().0;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + c.energy().0 + (p * dt).abs()));
        }

        #[test]
        fn interval_is_monotone(e in 1e-3f64..10.0, p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, k in 1.0f64..3.0) {
            let st = DutyCycleState::new(DutyCycleParams::default()).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = adapt_interval(&st, &traced(e), Watts(lo)).unwrap();
            let b = adapt_interval(&st, &traced(e), Watts(hi)).unwrap();
            prop_assert!(b.interval.0 <= a.interval.0);
            let c = adapt_interval(&st, &traced(e * k), Watts(lo)).unwrap();
            prop_assert!(c.interval.0 >= a.interval.0);
        }
    }
}
