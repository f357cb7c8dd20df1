//! Seeded random thread sets for attribution experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::sched::{Activity, ThreadSpec};
use crate::time::SimTime;
use crate::units::Amps;

/// Ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub count: usize,
    pub priority: u32,
    /// Compute slices per thread.
    pub slices: usize,
    pub slice: (SimTime, SimTime),
    pub sleep: (SimTime, SimTime),
    pub current: (Amps, Amps),
}

impl RandomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.slices == 0 {
            return Err(invalid("random threads need count >= 1 and slices >= 1"));
        }
        if self.slice.0.as_ns() == 0 || self.slice.0 > self.slice.1 {
            return Err(invalid("need 0 < slice_min <= slice_max"));
        }
        if self.sleep.0 > self.sleep.1 {
            return Err(invalid("need sleep_min <= sleep_max"));
        }
        if !(self.current.0 .0 >= 0.0 && self.current.0 .0 <= self.current.1 .0) {
            return Err(invalid("need 0 <= current_min <= current_max"));
        }
        Ok(())
    }
}

fn between(rng: &mut ChaCha8Rng, r: (SimTime, SimTime)) -> SimTime {
    // Whole microseconds keep schedules readable in the CSV output.
    let (a, b) = (r.0.as_ns() / 1000, r.1.as_ns() / 1000);
    SimTime::from_us(rng.random_range(a..=b))
}

/// Threads `r0`, `r1`, ... that start after a random sleep and then alternate
/// compute slices (random length and current) with random sleeps.
pub fn random_threads(spec: &RandomSpec, seed: u64) -> Result<Vec<ThreadSpec>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..spec.count)
        .map(|k| {
            let mut script = vec![Activity::Sleep { duration: between(&mut rng, spec.sleep) }];
            for _ in 0..spec.slices {
                let current = if spec.current.0 == spec.current.1 {
                    spec.current.0
                } else {
                    Amps(rng.random_range(spec.current.0 .0..=spec.current.1 .0))
                };
                script.push(Activity::Compute { duration: between(&mut rng, spec.slice), current });
                script.push(Activity::Sleep { duration: between(&mut rng, spec.sleep) });
            }
            ThreadSpec::new(format!("r{k}"), spec.priority, script, false)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> RandomSpec {
        RandomSpec {
            count: 3,
            priority: 4,
            slices: 10,
            slice: (SimTime::from_ms(5), SimTime::from_ms(20)),
            sleep: (SimTime::from_ms(1), SimTime::from_ms(9)),
            current: (Amps(1e-3), Amps(2e-3)),
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = random_threads(&spec(), 9).unwrap();
        assert_eq!(a, random_threads(&spec(), 9).unwrap());
        assert_ne!(a, random_threads(&spec(), 10).unwrap());
        for t in &a {
            assert_eq!(t.script.len(), 21);
            for s in &t.script {
                if let Activity::Compute { duration, current } = s {
                    assert!(*duration >= SimTime::from_ms(5) && *duration <= SimTime::from_ms(20));
                    assert!(current.0 >= 1e-3 && current.0 <= 2e-3);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut s = spec();
        s.slice = (SimTime::from_ms(5), SimTime::from_ms(1));
        assert!(random_threads(&s, 0).is_err());
    }
}
