//! Brute-force reference integration of the ground-truth signals.
//!
//! This deliberately avoids the exact segment arithmetic in `profile`: it only
//! looks up point values and walks a fixed grid with the trapezoid rule. At
//! each grid step the left end uses the value just after the grid point and
//! the right end the value just before, so piecewise-constant signals with
//! breakpoints on the grid integrate without discretisation error. A step
//! that straddles a breakpoint is split there, since sub-microsecond edges
//! (a 151.2 µs job, say) would otherwise bias every period the same way.
//!
//! The range is cut into fixed chunks that are integrated independently and
//! summed in chunk order, so parallel and sequential runs agree bit for bit.

use crate::exec::{map_with, Strategy};
use crate::profile::{Owner, PiecewiseProfile, Segment};
use crate::time::SimTime;
use crate::units::Joules;

/// Default grid step.
pub const ORACLE_STEP: SimTime = SimTime::from_us(1);

const CHUNK_STEPS: u64 = 1 << 16;

/// Exact reference quantities for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleResult {
    /// Indexed like the run's thread table.
    pub threads: Vec<Joules>,
    pub unattributed: Joules,
    pub total: Joules,
    /// ∫ i dt in coulombs.
    pub charge: f64,
    /// Energy delivered by the harvester, for harvesting runs.
    pub charging: Option<Joules>,
}

#[derive(Clone)]
struct Acc {
    owners: Vec<f64>,
    charge: f64,
}

impl Acc {
    fn new(n: usize) -> Self {
        Acc { owners: vec![0.0; n + 1], charge: 0.0 }
    }

    fn add_segment(&mut self, seg: &Segment, weight: f64, n: usize) {
        for &(owner, i) in &seg.parts {
            let k = match owner {
                Owner::Thread(t) if t < n => t,
                _ => n,
            };
            self.owners[k] += weight * i * seg.voltage;
            self.charge += weight * i;
        }
    }
}

fn index_from_right(segs: &[Segment], t: SimTime) -> usize {
    segs.partition_point(|s| s.start <= t).saturating_sub(1)
}

fn index_from_left(segs: &[Segment], t: SimTime) -> usize {
    segs.partition_point(|s| s.start < t).saturating_sub(1)
}

fn integrate_chunk(segs: &[Segment], n: usize, a: SimTime, b: SimTime, step: SimTime) -> Acc {
    let mut acc = Acc::new(n);
    let mut t = a;
    while t < b {
        let next = if b.as_ns() - t.as_ns() > step.as_ns() { t + step } else { b };
        let mut u = t;
        while u < next {
            let k = index_from_right(segs, u);
            let stop = segs.get(k + 1).map(|s| s.start).filter(|&s| s < next).unwrap_or(next);
            let half = 0.5 * (stop - u).as_secs_f64();
            acc.add_segment(&segs[k], half, n);
            acc.add_segment(&segs[index_from_left(segs, stop)], half, n);
            u = stop;
        }
        t = next;
    }
    acc
}

fn chunks(t0: SimTime, t1: SimTime, step: SimTime) -> Vec<(SimTime, SimTime)> {
    let span = CHUNK_STEPS * step.as_ns().max(1);
    let mut out = Vec::new();
    let mut t = t0;
    while t < t1 {
        let next = SimTime(t1.as_ns().min(t.as_ns() + span));
        out.push((t, next));
        t = next;
    }
    out
}

/// Integrates a load profile per owner over `[t0, t1]` on a grid of `step`.
pub fn integrate_profile(
    profile: &PiecewiseProfile,
    n_threads: usize,
    t0: SimTime,
    t1: SimTime,
    step: SimTime,
    strategy: Strategy,
) -> OracleResult {
    let segs = profile.segments();
    if segs.is_empty() || t1 <= t0 || step.as_ns() == 0 {
        return OracleResult { threads: vec![Joules(0.0); n_threads], ..Default::default() };
    }
    let parts = chunks(t0, t1, step);
    let partial = map_with(strategy, parts.len(), |k| integrate_chunk(segs, n_threads, parts[k].0, parts[k].1, step));
    let mut acc = Acc::new(n_threads);
    for p in &partial {
        for (a, b) in acc.owners.iter_mut().zip(&p.owners) {
            *a += b;
        }
        acc.charge += p.charge;
    }
    let total = acc.owners.iter().sum();
    OracleResult {
        threads: acc.owners[..n_threads].iter().map(|&e| Joules(e)).collect(),
        unattributed: Joules(acc.owners[n_threads]),
        total: Joules(total),
        charge: acc.charge,
        charging: None,
    }
}

/// Plain trapezoid integral of a smooth function over `[t0, t1]`, chunked like
/// [`integrate_profile`].
pub fn integrate_fn<F>(f: F, t0: SimTime, t1: SimTime, step: SimTime, strategy: Strategy) -> f64
where
    F: Fn(SimTime) -> f64 + Sync + Send,
{
    if t1 <= t0 || step.as_ns() == 0 {
        return 0.0;
    }
    let parts = chunks(t0, t1, step);
    map_with(strategy, parts.len(), |k| {
        let (a, b) = parts[k];
        let mut acc = 0.0;
        let mut t = a;
        let mut prev = f(t);
        while t < b {
            let next = if b.as_ns() - t.as_ns() > step.as_ns() { t + step } else { b };
            let v = f(next);
            acc += 0.5 * (prev + v) * (next - t).as_secs_f64();
            prev = v;
            t = next;
        }
        acc
    })
    .into_iter()
    .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> PiecewiseProfile {
        let mut p = PiecewiseProfile::new();
        p.extend_to(SimTime::from_us(300), 3.0, &[(Owner::Thread(0), 5e-3)]);
        p.extend_to(SimTime::from_us(700), 3.0, &[(Owner::Thread(1), 2e-3), (Owner::Thread(0), 1e-3)]);
        p.extend_to(SimTime::from_us(1000), 3.0, &[(Owner::Unattributed, 1e-5)]);
        p
    }

    #[test]
    fn matches_exact_on_grid_aligned_profile() {
        let p = profile();
        let r = integrate_profile(&p, 2, SimTime::ZERO, SimTime::from_us(1000), ORACLE_STEP, Strategy::Sequential);
        let e0 = 3.0 * (5e-3 * 300e-6 + 1e-3 * 400e-6);
        assert!((r.threads[0].0 - e0).abs() < 1e-15);
        assert!((r.threads[1].0 - 3.0 * 2e-3 * 400e-6).abs() < 1e-15);
        assert!((r.unattributed.0 - 3.0 * 1e-5 * 300e-6).abs() < 1e-15);
        assert!((r.total.0 - p.energy(SimTime::ZERO, SimTime::from_us(1000))).abs() < 1e-15);
        assert!((r.charge - p.charge(SimTime::ZERO, SimTime::from_us(1000))).abs() < 1e-15);
    }

    #[test]
    fn strategies_agree_exactly() {
        let mut p = PiecewiseProfile::new();
        for k in 1..400u64 {
            p.extend_to(SimTime::from_us(k * 997), 2.7, &[(Owner::Thread((k % 3) as usize), 1e-3 * (k % 7) as f64)]);
        }
        let end = p.end();
        let a = integrate_profile(&p, 3, SimTime::ZERO, end, ORACLE_STEP, Strategy::Sequential);
        let b = integrate_profile(&p, 3, SimTime::ZERO, end, ORACLE_STEP, Strategy::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn off_grid_breakpoints_are_split() {
        let mut p = PiecewiseProfile::new();
        for k in 1..200u64 {
            let i = if k % 2 == 0 { 1e-4 } else { 2e-2 };
            p.extend_to(SimTime::from_ns(k * 140_200), 2.7, &[(Owner::Thread(0), i)]);
        }
        let end = p.end();
        let r = integrate_profile(&p, 1, SimTime::ZERO, end, ORACLE_STEP, Strategy::Sequential);
        let exact = p.energy(SimTime::ZERO, end);
        assert!((r.total.0 - exact).abs() < 1e-12 * exact, "{} vs {exact}", r.total.0);
    }

    #[test]
    fn smooth_function() {
        let v = integrate_fn(|t| t.as_secs_f64(), SimTime::ZERO, SimTime::from_ms(2000), SimTime::from_ms(1), Strategy::Parallel);
        assert!((v - 2.0).abs() < 1e-9);
    }
}
