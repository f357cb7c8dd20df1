//! Ground-truth load signals seen at the shunt.

use crate::time::SimTime;

/// Integration step for window means of arbitrary profiles.
pub const TRAPEZOID_STEP: SimTime = SimTime::from_us(1);

/// Who a share of the drawn current belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    /// Index into the run's thread table.
    Thread(usize),
    /// Idle, sleep and anything no thread can be blamed for.
    Unattributed,
}

/// Current through and voltage behind the shunt as functions of simulated time.
///
/// Point values are right-continuous. Window means default to a composite
/// trapezoid over a 1 µs grid.
pub trait LoadProfile {
    fn current_at(&self, t: SimTime) -> f64;
    fn voltage_at(&self, t: SimTime) -> f64;

    fn mean_current(&self, t0: SimTime, t1: SimTime) -> f64 {
        trapezoid_mean(|t| self.current_at(t), t0, t1, TRAPEZOID_STEP)
    }

    fn mean_voltage(&self, t0: SimTime, t1: SimTime) -> f64 {
        trapezoid_mean(|t| self.voltage_at(t), t0, t1, TRAPEZOID_STEP)
    }
}

/// Mean of `f` over `[t0, t1]` by the composite trapezoid rule with the given step.
/// The final step is shortened to land on `t1`.
pub fn trapezoid_mean(f: impl Fn(SimTime) -> f64, t0: SimTime, t1: SimTime, step: SimTime) -> f64 {
    if t1 <= t0 {
        return f(t0);
    }
    trapezoid_integral(f, t0, t1, step) / (t1 - t0).as_secs_f64()
}

/// Integral of `f` over `[t0, t1]` in value·seconds.
pub fn trapezoid_integral(
    f: impl Fn(SimTime) -> f64,
    t0: SimTime,
    t1: SimTime,
    step: SimTime,
) -> f64 {
    if t1 <= t0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut t = t0;
    let mut prev = f(t);
    while t < t1 {
        let next = if t1.as_ns() - t.as_ns() > step.as_ns() { t + step } else { t1 };
        let v = f(next);
        acc += 0.5 * (prev + v) * (next - t).as_secs_f64();
        prev = v;
        t = next;
    }
    acc
}

/// A fixed resistor-style load: constant current at constant voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProfile {
    pub current: f64,
    pub voltage: f64,
}

impl LoadProfile for ConstantProfile {
    fn current_at(&self, _t: SimTime) -> f64 {
        self.current
    }

    fn voltage_at(&self, _t: SimTime) -> f64 {
        self.voltage
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: SimTime,
    pub voltage: f64,
    pub parts: Vec<(Owner, f64)>,
    total: f64,
}

impl Segment {
    pub fn current(&self) -> f64 {
        self.total
    }
}

/// Piecewise-constant profile built incrementally by a simulation loop.
///
/// Segment `i` covers `[start_i, start_{i+1})`; the last one ends at `end()`.
/// Queries past the end hold the last value.
#[derive(Debug, Clone, Default)]
pub struct PiecewiseProfile {
    segments: Vec<Segment>,
    end: SimTime,
}

impl PiecewiseProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Appends `[self.end(), until)` with the given voltage and per-owner currents.
    /// Adjacent identical segments are merged.
    pub fn extend_to(&mut self, until: SimTime, voltage: f64, parts: &[(Owner, f64)]) {
        if until <= self.end {
            return;
        }
        let total: f64 = parts.iter().map(|(_, i)| i).sum();
        let same = self
            .segments
            .last()
            .map(|s| s.voltage == voltage && s.parts.as_slice() == parts)
            .unwrap_or(false);
        if !same {
            self.segments.push(Segment {
                start: self.end,
                voltage,
                parts: parts.to_vec(),
                total,
            });
        }
        self.end = until;
    }

    fn index_at(&self, t: SimTime) -> Option<usize> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.start <= t);
        Some(idx.saturating_sub(1))
    }

    pub fn segment_at(&self, t: SimTime) -> Option<&Segment> {
        self.index_at(t).map(|i| &self.segments[i])
    }

    fn segment_end(&self, i: usize) -> SimTime {
        self.segments.get(i + 1).map(|s| s.start).unwrap_or(self.end)
    }

    /// Exact integral of `value(segment)` over `[t0, t1]`, in value·seconds.
    fn integrate(&self, t0: SimTime, t1: SimTime, value: impl Fn(&Segment) -> f64) -> f64 {
        let Some(mut i) = self.index_at(t0) else {
            return 0.0;
        };
        let mut acc = 0.0;
        let mut t = t0;
        while t < t1 {
            let seg = &self.segments[i];
            let seg_end = if i + 1 < self.segments.len() { self.segment_end(i) } else { t1 };
            let stop = seg_end.min(t1);
            if stop > t {
                acc += value(seg) * (stop - t).as_secs_f64();
                t = stop;
            }
            if i + 1 < self.segments.len() {
                i += 1;
            } else {
                break;
            }
        }
        acc
    }

    /// Exact charge over `[t0, t1]` (A·s).
    pub fn charge(&self, t0: SimTime, t1: SimTime) -> f64 {
        self.integrate(t0, t1, |s| s.total)
    }

    /// Exact energy over `[t0, t1]` (J).
    pub fn energy(&self, t0: SimTime, t1: SimTime) -> f64 {
        self.integrate(t0, t1, |s| s.total * s.voltage)
    }

    /// Exact ∫ i² dt over `[t0, t1]`, for shunt dissipation.
    pub fn current_squared(&self, t0: SimTime, t1: SimTime) -> f64 {
        self.integrate(t0, t1, |s| s.total * s.total)
    }
}

impl LoadProfile for PiecewiseProfile {
    fn current_at(&self, t: SimTime) -> f64 {
        self.segment_at(t).map(|s| s.total).unwrap_or(0.0)
    }

    fn voltage_at(&self, t: SimTime) -> f64 {
        self.segment_at(t).map(|s| s.voltage).unwrap_or(0.0)
    }

    // Piecewise-constant signals integrate exactly; this is the limit the
    // trapezoid rule converges to and avoids a per-µs walk over long runs.
    fn mean_current(&self, t0: SimTime, t1: SimTime) -> f64 {
        if t1 <= t0 {
            return self.current_at(t0);
        }
        self.charge(t0, t1) / (t1 - t0).as_secs_f64()
    }

    fn mean_voltage(&self, t0: SimTime, t1: SimTime) -> f64 {
        if t1 <= t0 {
            return self.voltage_at(t0);
        }
        self.integrate(t0, t1, |s| s.voltage) / (t1 - t0).as_secs_f64()
    }
}
