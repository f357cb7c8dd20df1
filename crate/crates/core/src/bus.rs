//! Time and energy cost of monitor register transactions over I²C.
//!
//! Costs are data-driven: a calibration table maps (speed mode, pull-up) to the
//! measured duration and energy of one register read. Between table rows the
//! model interpolates linearly in 1/R, since pull-up dissipation scales with
//! conductance.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::{max_pullup, read_energy, Farads, Joules, Ohms, Seconds, Volts, Watts};

/// Bus capacitance measured on the reference wiring.
pub const DEFAULT_BUS_CAPACITANCE: Farads = Farads(158e-12);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedMode {
    Fast,
    FastPlus,
    High,
}

impl SpeedMode {
    pub const ALL: [SpeedMode; 3] = [SpeedMode::Fast, SpeedMode::FastPlus, SpeedMode::High];

    /// Maximum rise time allowed by the bus standard for this mode.
    pub fn rise_time(self) -> Seconds {
        match self {
            SpeedMode::Fast => Seconds(300e-9),
            SpeedMode::FastPlus => Seconds(120e-9),
            SpeedMode::High => Seconds(40e-9),
        }
    }

    pub fn clock_hz(self) -> f64 {
        match self {
            SpeedMode::Fast => 400e3,
            SpeedMode::FastPlus => 1e6,
            SpeedMode::High => 3.4e6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeedMode::Fast => "fast",
            SpeedMode::FastPlus => "fast_plus",
            SpeedMode::High => "high",
        }
    }
}

impl fmt::Display for SpeedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpeedMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fast" => Ok(SpeedMode::Fast),
            "fast_plus" | "fast+" => Ok(SpeedMode::FastPlus),
            "high" => Ok(SpeedMode::High),
            other => Err(invalid(format!(
                "unknown speed mode `{other}` (expected fast, fast_plus or high)"
            ))),
        }
    }
}

/// Electrical configuration of the monitor link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusConfig {
    pub speed_mode: SpeedMode,
    pub pullup: Ohms,
    pub c_bus: Farads,
    pub v_dd: Volts,
}

impl BusConfig {
    pub fn new(speed_mode: SpeedMode, pullup: Ohms, c_bus: Farads, v_dd: Volts) -> Result<Self> {
        if !(pullup.0 > 0.0) {
            return Err(invalid(format!("pull-up must be positive, got {pullup}")));
        }
        if !(c_bus.0 > 0.0) {
            return Err(invalid(format!("bus capacitance must be positive, got {c_bus}")));
        }
        if !(v_dd.0 > 0.0) {
            return Err(invalid(format!("bus supply must be positive, got {v_dd}")));
        }
        Ok(BusConfig {
            speed_mode,
            pullup,
            c_bus,
            v_dd,
        })
    }

    /// High-speed link with 2.2 kΩ pull-ups on the reference wiring at 3.3 V.
    pub fn reference() -> Self {
        BusConfig {
            speed_mode: SpeedMode::High,
            pullup: Ohms(2200.0),
            c_bus: DEFAULT_BUS_CAPACITANCE,
            v_dd: Volts(3.3),
        }
    }

    pub fn max_pullup(&self) -> Ohms {
        // Validated at construction, so the relation cannot fail here.
        max_pullup(self.speed_mode.rise_time(), self.c_bus).expect("validated bus config")
    }

    /// Whether the pull-up meets the rise-time requirement of the selected mode.
    pub fn is_compliant(&self) -> bool {
        self.pullup.0 <= self.max_pullup().0
    }
}

/// One measured calibration point: cost of a single register read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub speed_mode: SpeedMode,
    pub pullup_ohms: f64,
    pub time_us: f64,
    #[serde(rename = "energy_nWs")]
    pub energy_nws: f64,
}

/// Declarative per-configuration cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    rows: Vec<CalibrationPoint>,
}

const DEFAULT_PULLUPS: [f64; 4] = [330.0, 1000.0, 2200.0, 4700.0];

impl Default for CalibrationTable {
    /// Reference wiring (158 pF). Endpoints: 4.5 µWs at fast/330 Ω and 100 nWs at
    /// high/4.7 kΩ; 33 µs at high/2.2 kΩ with other modes scaled by clock rate.
    fn default() -> Self {
        let high_t = 33.0;
        let fast_plus_t = high_t * SpeedMode::High.clock_hz() / SpeedMode::FastPlus.clock_hz();
        let fast_t = high_t * SpeedMode::High.clock_hz() / SpeedMode::Fast.clock_hz();
        let table = [
            (SpeedMode::Fast, [(fast_t, 4500.0), (fast_t, 1700.0), (fast_t, 900.0), (285.0, 520.0)]),
            (
                SpeedMode::FastPlus,
                [(fast_plus_t, 2000.0), (fast_plus_t, 760.0), (113.0, 420.0), (125.0, 240.0)],
            ),
            (SpeedMode::High, [(high_t, 1200.0), (high_t, 480.0), (high_t, 260.0), (48.0, 100.0)]),
        ];
        let rows = table
            .iter()
            .flat_map(|(mode, pts)| {
                DEFAULT_PULLUPS.iter().zip(pts).map(move |(&r, &(t, e))| CalibrationPoint {
                    speed_mode: *mode,
                    pullup_ohms: r,
                    time_us: t,
                    energy_nws: e,
                })
            })
            .collect();
        CalibrationTable { rows }
    }
}

impl CalibrationTable {
    pub fn new(mut rows: Vec<CalibrationPoint>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("calibration table has no rows"));
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.pullup_ohms > 0.0) || !(r.time_us > 0.0) || r.energy_nws < 0.0 {
                return Err(Error::Validation(format!(
                    "calibration row {}: pullup and time must be positive and energy non-negative",
                    i + 1
                )));
            }
        }
        rows.sort_by(|a, b| {
            (a.speed_mode, a.pullup_ohms)
                .partial_cmp(&(b.speed_mode, b.pullup_ohms))
                .expect("finite calibration values")
        });
        Ok(CalibrationTable { rows })
    }

    pub fn rows(&self) -> &[CalibrationPoint] {
        &self.rows
    }

    /// Reads `speed_mode,pullup_ohms,time_us,energy_nWs` rows with a header line.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<CalibrationPoint>().enumerate() {
            let rec = rec.map_err(|e| Error::Validation(format!("calibration row {}: {e}", i + 1)))?;
            rows.push(rec);
        }
        Self::new(rows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Scales every energy entry by `k`. Times are untouched.
    pub fn scale_energy(&self, k: f64) -> Self {
        let rows = self.rows.iter().map(|r| CalibrationPoint { energy_nws: r.energy_nws * k, ..*r }).collect();
        CalibrationTable { rows }
    }

    fn mode_rows(&self, mode: SpeedMode) -> Vec<&CalibrationPoint> {
        self.rows.iter().filter(|r| r.speed_mode == mode).collect()
    }

    /// Single-read cost for a configuration.
    pub fn lookup(&self, mode: SpeedMode, pullup: Ohms) -> ReadCost {
        let mut flags = CostFlags::default();
        let mut rows = self.mode_rows(mode);
        if rows.is_empty() {
            flags.fallback_mode = true;
            let nearest = SpeedMode::ALL
                .iter()
                .filter(|m| !self.mode_rows(**m).is_empty())
                .min_by(|a, b| {
                    let da = (a.clock_hz() / mode.clock_hz()).ln().abs();
                    let db = (b.clock_hz() / mode.clock_hz()).ln().abs();
                    da.partial_cmp(&db).expect("finite clock ratio")
                })
                .copied()
                .expect("table is non-empty");
            rows = self.mode_rows(nearest);
        }
        // Sorted by ascending conductance.
        rows.sort_by(|a, b| b.pullup_ohms.partial_cmp(&a.pullup_ohms).expect("finite"));
        let g = 1.0 / pullup.0;
        let g_of = |r: &CalibrationPoint| 1.0 / r.pullup_ohms;
        let first = rows[0];
        let last = rows[rows.len() - 1];
        let (time_us, energy_nws) = if g <= g_of(first) {
            if g < g_of(first) {
                flags.out_of_range = true;
            }
            (first.time_us, first.energy_nws)
        } else if g >= g_of(last) {
            if g > g_of(last) {
                flags.out_of_range = true;
            }
            (last.time_us, last.energy_nws)
        } else {
            let k = rows.windows(2).position(|w| g >= g_of(w[0]) && g <= g_of(w[1])).expect("bracketed");
            let (a, b) = (rows[k], rows[k + 1]);
            let s = (g - g_of(a)) / (g_of(b) - g_of(a));
            (
                a.time_us + s * (b.time_us - a.time_us),
                a.energy_nws + s * (b.energy_nws - a.energy_nws),
            )
        };
        ReadCost {
            time: Seconds(time_us * 1e-6),
            bus_energy: Joules(energy_nws * 1e-9),
            flags,
        }
    }
}

/// Set when the table could not answer for the exact configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostFlags {
    /// The speed mode had no rows; the nearest mode by clock rate was used.
    pub fallback_mode: bool,
    /// The pull-up lay outside the tabulated range and was clamped.
    pub out_of_range: bool,
}

impl CostFlags {
    pub fn any(&self) -> bool {
        self.fallback_mode || self.out_of_range
    }
}

/// Duration and bus-side energy of one or more register transactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadCost {
    pub time: Seconds,
    pub bus_energy: Joules,
    pub flags: CostFlags,
}

impl ReadCost {
    /// Average bus-side power while the transaction is on the wire.
    pub fn bus_power(&self) -> Watts {
        self.bus_energy / self.time
    }

    /// Whole-system energy when the MCU draws `p_mcu` for the duration of the read.
    pub fn total_energy(&self, p_mcu: Watts) -> Result<Joules> {
        read_energy(p_mcu, self.bus_power(), self.time)
    }

    fn times(self, n: u32) -> ReadCost {
        let k = n as f64;
        ReadCost {
            time: self.time * k,
            bus_energy: self.bus_energy * k,
            flags: self.flags,
        }
    }
}

/// Cost of `n_register_reads` reads for `cfg`, scaled linearly from the single-read entry.
pub fn transaction_cost(cfg: &BusConfig, n_register_reads: u32, table: &CalibrationTable) -> Result<ReadCost> {
    if n_register_reads == 0 {
        return Err(invalid("at least one register read is required"));
    }
    Ok(table.lookup(cfg.speed_mode, cfg.pullup).times(n_register_reads))
}

/// A configured link plus its cost table; what the monitor charges reads against.
#[derive(Debug, Clone, PartialEq)]
pub struct BusLink {
    pub config: BusConfig,
    pub table: CalibrationTable,
}

impl BusLink {
    pub fn new(config: BusConfig, table: CalibrationTable) -> Self {
        BusLink { config, table }
    }

    pub fn read_cost(&self, n: u32) -> Result<ReadCost> {
        transaction_cost(&self.config, n, &self.table)
    }
}

impl Default for BusLink {
    fn default() -> Self {
        BusLink::new(BusConfig::reference(), CalibrationTable::default())
    }
}

/// The candidate wiring grid: every speed mode with 330 Ω, 1 kΩ, 2.2 kΩ and 4.7 kΩ pull-ups.
pub fn candidate_grid(c_bus: Farads, v_dd: Volts) -> Vec<BusConfig> {
    SpeedMode::ALL
        .iter()
        .flat_map(|&m| {
            DEFAULT_PULLUPS.iter().map(move |&r| BusConfig {
                speed_mode: m,
                pullup: Ohms(r),
                c_bus,
                v_dd,
            })
        })
        .collect()
}

/// Candidate minimizing (P_MCU + P_read)·t_read. Ties go to the shorter read,
/// then to the larger pull-up.
pub fn optimal_config(candidates: &[BusConfig], p_mcu: Watts, table: &CalibrationTable) -> Result<BusConfig> {
    if candidates.is_empty() {
        return Err(invalid("optimal_config needs at least one candidate"));
    }
    let mut best: Option<(BusConfig, f64, f64)> = None;
    for c in candidates {
        let cost = transaction_cost(c, 1, table)?;
        let e = cost.total_energy(p_mcu)?.0;
        let t = cost.time.0;
        let better = match &best {
            None => true,
            Some((b, be, bt)) => {
                e < *be || (e == *be && (t < *bt || (t == *bt && c.pullup.0 > b.pullup.0)))
            }
        };
        if better {
            best = Some((*c, e, t));
        }
    }
    Ok(best.expect("non-empty").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: SpeedMode, r: f64) -> BusConfig {
        BusConfig::new(mode, Ohms(r), DEFAULT_BUS_CAPACITANCE, Volts(3.3)).unwrap()
    }

    #[test]
    fn endpoint_costs() {
        let t = CalibrationTable::default();
        let fast = transaction_cost(&cfg(SpeedMode::Fast, 330.0), 1, &t).unwrap();
        assert!((fast.bus_energy.0 - 4.5e-6).abs() < 1e-15);
        let high = transaction_cost(&cfg(SpeedMode::High, 4700.0), 1, &t).unwrap();
        assert!((high.bus_energy.0 - 100e-9).abs() < 1e-18);
        let opt = transaction_cost(&cfg(SpeedMode::High, 2200.0), 1, &t).unwrap();
        assert!((opt.time.0 - 33e-6).abs() < 1e-15);
        assert!(!opt.flags.any());
    }

    #[test]
    fn linear_in_reads() {
        let t = CalibrationTable::default();
        for c in candidate_grid(DEFAULT_BUS_CAPACITANCE, Volts(3.3)) {
            let one = transaction_cost(&c, 1, &t).unwrap();
            let two = transaction_cost(&c, 2, &t).unwrap();
            assert_eq!(two.time.0, 2.0 * one.time.0);
            assert_eq!(two.bus_energy.0, 2.0 * one.bus_energy.0);
        }
        assert!(transaction_cost(&cfg(SpeedMode::Fast, 330.0), 0, &t).is_err());
    }

    #[test]
    fn interpolates_in_conductance() {
        let t = CalibrationTable::default();
        // Midway in 1/R between 1 kΩ and 2.2 kΩ.
        let g = 0.5 * (1.0 / 1000.0 + 1.0 / 2200.0);
        let c = t.lookup(SpeedMode::High, Ohms(1.0 / g));
        assert!((c.bus_energy.0 - 0.5 * (480e-9 + 260e-9)).abs() < 1e-15);
        assert!(!c.flags.any());
        let clamp = t.lookup(SpeedMode::High, Ohms(10_000.0));
        assert!(clamp.flags.out_of_range);
        assert!((clamp.bus_energy.0 - 100e-9).abs() < 1e-18);
    }

    #[test]
    fn missing_mode_falls_back_with_flag() {
        let rows: Vec<_> = CalibrationTable::default()
            .rows()
            .iter()
            .filter(|r| r.speed_mode != SpeedMode::FastPlus)
            .copied()
            .collect();
        let t = CalibrationTable::new(rows).unwrap();
        let c = t.lookup(SpeedMode::FastPlus, Ohms(2200.0));
        assert!(c.flags.fallback_mode);
        // 1 MHz is closer to 400 kHz than to 3.4 MHz on a log scale.
        assert_eq!(c.time, t.lookup(SpeedMode::Fast, Ohms(2200.0)).time);
    }

    #[test]
    fn compliance_follows_max_pullup() {
        assert!(cfg(SpeedMode::Fast, 2200.0).is_compliant());
        assert!(!cfg(SpeedMode::Fast, 4700.0).is_compliant());
        assert!(!cfg(SpeedMode::High, 330.0).is_compliant());
        assert!(cfg(SpeedMode::FastPlus, 330.0).is_compliant());
    }

    #[test]
    fn optimal_config_examples() {
        let t = CalibrationTable::default();
        let grid = candidate_grid(DEFAULT_BUS_CAPACITANCE, Volts(3.3));
        let best = optimal_config(&grid, Watts(12e-3 * 3.3), &t).unwrap();
        assert_eq!((best.speed_mode, best.pullup), (SpeedMode::High, Ohms(2200.0)));

        let single = [cfg(SpeedMode::Fast, 330.0)];
        assert_eq!(optimal_config(&single, Watts(1.0), &t).unwrap(), single[0]);
        assert!(optimal_config(&[], Watts(1.0), &t).is_err());
    }

    #[test]
    fn zero_mcu_power_picks_cheapest_bus_energy() {
        let t = CalibrationTable::default();
        let grid = candidate_grid(DEFAULT_BUS_CAPACITANCE, Volts(3.3));
        // Exhaustive evaluation of the grid as the oracle.
        let cheapest = grid
            .iter()
            .min_by(|a, b| {
                let ea = t.lookup(a.speed_mode, a.pullup).bus_energy.0;
                let eb = t.lookup(b.speed_mode, b.pullup).bus_energy.0;
                ea.partial_cmp(&eb).unwrap()
            })
            .unwrap();
        let best = optimal_config(&grid, Watts(0.0), &t).unwrap();
        assert_eq!(best, *cheapest);
        assert_eq!((best.speed_mode, best.pullup), (SpeedMode::High, Ohms(4700.0)));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let t = CalibrationTable::default();
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("speed_mode,pullup_ohms,time_us,energy_nWs"));
        let back = CalibrationTable::from_reader(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        let bad = "speed_mode,pullup_ohms,time_us,energy_nWs\nturbo,330,1,1\n";
        let err = CalibrationTable::from_reader(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let neg = "speed_mode,pullup_ohms,time_us,energy_nWs\nfast,330,-1,1\n";
        assert!(CalibrationTable::from_reader(neg.as_bytes()).is_err());
    }
}
