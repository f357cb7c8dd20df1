//! Explicit task tracing: bracket a section with `trace_start` / `trace_stop`
//! and get back either the sample series inside the window or its energy.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sched::Sample;
use crate::time::SimTime;
use crate::units::{Amps, Joules, Volts, Watts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// Keep every sample inside the window.
    #[default]
    Series,
    /// Keep only the integrated energy.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: SimTime,
    pub voltage: Volts,
    pub current: Amps,
    pub power: Watts,
}

impl From<&Sample> for TracePoint {
    fn from(s: &Sample) -> Self {
        TracePoint { t: s.t, voltage: s.voltage, current: s.current, power: s.power }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub label: String,
    pub start: SimTime,
    pub end: SimTime,
    /// Empty in aggregate mode.
    pub samples: Vec<TracePoint>,
    pub aggregate: Joules,
    /// Stretches with no samples (e.g. the measurement thread was blocked); not interpolated.
    pub gaps: Vec<(SimTime, SimTime)>,
}

/// Energy of a sample series over `[start, end]`.
///
/// Consecutive samples are joined by the trapezoid rule; the first and last
/// sample are held flat out to the window edges. Any stretch longer than
/// `max_spacing` without a sample counts as a gap: it is reported and
/// contributes nothing.
pub fn series_energy(
    start: SimTime,
    end: SimTime,
    points: &[TracePoint],
    max_spacing: SimTime,
) -> (Joules, Vec<(SimTime, SimTime)>) {
    let mut gaps = Vec::new();
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        if end > start {
            gaps.push((start, end));
        }
        return (Joules(0.0), gaps);
    };
    let mut e = 0.0;
    let mut span = |a: SimTime, b: SimTime, pa: f64, pb: f64, gaps: &mut Vec<_>| {
        if b <= a {
            return;
        }
        if b - a > max_spacing {
            gaps.push((a, b));
        } else {
            e += 0.5 * (pa + pb) * (b - a).as_secs_f64();
        }
    };
    span(start, first.t, first.power.0, first.power.0, &mut gaps);
    for w in points.windows(2) {
        span(w[0].t, w[1].t, w[0].power.0, w[1].power.0, &mut gaps);
    }
    span(last.t, end, last.power.0, last.power.0, &mut gaps);
    (Joules(e), gaps)
}

/// Open/close bookkeeping for labelled traces.
#[derive(Debug, Clone)]
pub struct Tracer {
    mode: TraceMode,
    max_spacing: SimTime,
    open: BTreeMap<String, SimTime>,
    records: Vec<TraceRecord>,
}

impl Tracer {
    /// `sample_period` is the nominal spacing of the sample stream; gaps are
    /// stretches longer than 1.5 periods.
    pub fn new(mode: TraceMode, sample_period: SimTime) -> Self {
        Tracer {
            mode,
            max_spacing: SimTime(sample_period.as_ns() + sample_period.as_ns() / 2),
            open: BTreeMap::new(),
            records: Vec::new(),
        }
    }

    pub fn mode(&self) -> TraceMode {
        self.mode
    }

    pub fn set_sample_period(&mut self, sample_period: SimTime) {
        self.max_spacing = SimTime(sample_period.as_ns() + sample_period.as_ns() / 2);
    }

    pub fn trace_start(&mut self, label: &str, t: SimTime) -> Result<()> {
        if self.open.contains_key(label) {
            return Err(Error::Contract(format!("trace `{label}` is already running")));
        }
        self.open.insert(label.to_string(), t);
        Ok(())
    }

    /// Closes `label` at `t`, using the samples completed inside the window.
    pub fn trace_stop(&mut self, label: &str, t: SimTime, samples: &[Sample]) -> Result<TraceRecord> {
        let start = self
            .open
            .remove(label)
            .ok_or_else(|| Error::Contract(format!("trace_stop(`{label}`) without trace_start")))?;
        if t < start {
            return Err(Error::Contract(format!("trace `{label}` stops before it starts")));
        }
        let lo = samples.partition_point(|s| s.t <= start);
        let hi = samples.partition_point(|s| s.t <= t);
        let points: Vec<TracePoint> = samples[lo..hi.max(lo)].iter().map(TracePoint::from).collect();
        let (aggregate, gaps) = if t == start {
            (Joules(0.0), Vec::new())
        } else {
            series_energy(start, t, &points, self.max_spacing)
        };
        let record = TraceRecord {
            label: label.to_string(),
            start,
            end: t,
            samples: match self.mode {
                TraceMode::Series => points,
                TraceMode::Aggregate => Vec::new(),
            },
            aggregate,
            gaps,
        };
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn open_labels(&self) -> impl Iterator<Item = &str> {
        self.open.keys().map(String::as_str)
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}
