//! Binned day report: average used and charging power per time slot.

use crate::error::{invalid, Result};
use crate::harvest::CycleLog;
use crate::time::SimTime;
use crate::units::{Seconds, Volts, Watts};

/// Two-hour slots.
pub const DEFAULT_BIN: SimTime = SimTime::from_ms(2 * 3600 * 1000);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayBin {
    pub bin_start: Seconds,
    pub bin_end: Seconds,
    /// Task energy spent in the slot over its length; zero or negative.
    pub p_use: Watts,
    /// Interval-weighted mean of the charging measurements in the slot,
    /// floored at zero.
    pub p_charge: Watts,
    /// Last measured store voltage in the slot (carried over from the
    /// previous slot if none was taken).
    pub v_cap_end: Volts,
}

/// Bins cycle logs by cycle start into slots of `bin` covering `[0, duration)`.
pub fn bin_report(cycles: &[CycleLog], duration: SimTime, bin: SimTime, v_initial: Volts) -> Result<Vec<DayBin>> {
    if bin.as_ns() == 0 {
        return Err(invalid("bin length must be positive"));
    }
    let n = duration.as_ns().div_ceil(bin.as_ns()) as usize;
    let mut out = Vec::with_capacity(n);
    let mut v_last = v_initial;
    let mut k = 0;
    for b in 0..n {
        let start = SimTime(b as u64 * bin.as_ns());
        let end = SimTime((start.as_ns() + bin.as_ns()).min(duration.as_ns()));
        let mut used = 0.0;
        let mut weighted = 0.0;
        let mut weight = 0.0;
        while k < cycles.len() && cycles[k].t < end {
            let c = &cycles[k];
            if c.t >= start && !c.brownout {
                used += c.task_energy.0;
                weighted += c.charging.0 * c.interval.0;
                weight += c.interval.0;
                v_last = c.v_measured;
            }
            k += 1;
        }
        let len = (end - start).as_secs_f64();
        out.push(DayBin {
            bin_start: start.seconds(),
            bin_end: end.seconds(),
            p_use: Watts(if len > 0.0 { -used / len } else { 0.0 }),
            p_charge: Watts(if weight > 0.0 { (weighted / weight).max(0.0) } else { 0.0 }),
            v_cap_end: v_last,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Joules;

    fn cycle(t_s: f64, e: f64, p: f64, v: f64) -> CycleLog {
        CycleLog {
            t: SimTime::from_secs_f64(t_s),
            traced: false,
            brownout: false,
            task_energy: Joules(e),
            charging: Watts(p),
            charging_true: Watts(p),
            v_measured: Volts(v),
            v_true: Volts(v),
            interval: Seconds(10.0),
        }
    }

    #[test]
    fn bins_average_and_sign() {
        let cycles = [cycle(0.0, 1.0, 0.01, 2.5), cycle(50.0, 1.0, 0.03, 2.6), cycle(150.0, 2.0, -0.001, 2.55)];
        let r = bin_report(&cycles, SimTime::from_ms(200_000), SimTime::from_ms(100_000), Volts(2.4)).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0].p_use.0 + 0.02).abs() < 1e-12);
        assert!((r[0].p_charge.0 - 0.02).abs() < 1e-12);
        assert_eq!(r[0].v_cap_end, Volts(2.6));
        assert_eq!(r[1].p_charge, Watts(0.0));
        assert!(bin_report(&cycles, SimTime::from_ms(1), SimTime::ZERO, Volts(0.0)).is_err());
    }

    #[test]
    fn empty_duration_gives_no_bins() {
        assert!(bin_report(&[], SimTime::ZERO, DEFAULT_BIN, Volts(2.5)).unwrap().is_empty());
    }
}
