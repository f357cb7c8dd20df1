//! Physical quantities, quantization and the closed-form electrical relations
//! shared by the monitor, bus and harvesting models.
//!
//! Each unit is a newtype over `f64`. Only dimensionally valid products and
//! quotients are implemented, so mixing incompatible units is a compile error.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::error::{invalid, Result};

/// Shunt voltage step of the emulated monitor (2.5 µV).
pub const SHUNT_LSB_V: f64 = 2.5e-6;
/// Bus voltage step of the emulated monitor (1.25 mV).
pub const BUS_LSB_V: f64 = 1.25e-3;
/// Number of positive codes spanned by the shunt channel (81.92 mV / 2.5 µV).
pub const SHUNT_FULL_SCALE_CODES: i32 = 32_768;
/// Number of codes spanned by the bus channel (40.96 V / 1.25 mV).
pub const BUS_FULL_SCALE_CODES: i32 = 32_768;
/// Rise-time constant of an RC edge from 30 % to 70 % of VDD.
pub const PULLUP_RISE_FACTOR: f64 = 0.8473;

/// Unit tag for labelling and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unit {
    Volt,
    Ampere,
    Watt,
    Joule,
    Second,
    Ohm,
    Farad,
    Hertz,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Volt => "V",
            Unit::Ampere => "A",
            Unit::Watt => "W",
            Unit::Joule => "J",
            Unit::Second => "s",
            Unit::Ohm => "Ω",
            Unit::Farad => "F",
            Unit::Hertz => "Hz",
        }
    }
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $unit:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(pub f64);

        impl $name {
            pub const UNIT: Unit = $unit;

            pub const fn new(v: f64) -> Self {
                $name(v)
            }

            pub const fn value(self) -> f64 {
                self.0
            }

            pub fn abs(self) -> Self {
                $name(self.0.abs())
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                self.0 += rhs.0;
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0 - rhs.0)
            }
        }

        impl Neg for $name {
            type Output = $name;
            fn neg(self) -> $name {
                $name(-self.0)
            }
        }

        impl Mul<f64> for $name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(self.0 * rhs)
            }
        }

        impl Div<f64> for $name {
            type Output = $name;
            fn div(self, rhs: f64) -> $name {
                $name(self.0 / rhs)
            }
        }

        /// Ratio of two like quantities.
        impl Div for $name {
            type Output = f64;
            fn div(self, rhs: $name) -> f64 {
                self.0 / rhs.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $unit.symbol())
            }
        }
    };
}

quantity!(Volts, Unit::Volt);
quantity!(Amps, Unit::Ampere);
quantity!(Watts, Unit::Watt);
quantity!(Joules, Unit::Joule);
quantity!(Seconds, Unit::Second);
quantity!(Ohms, Unit::Ohm);
quantity!(Farads, Unit::Farad);
quantity!(Hertz, Unit::Hertz);

macro_rules! product {
    ($a:ident * $b:ident = $out:ident) => {
        impl Mul<$b> for $a {
            type Output = $out;
            fn mul(self, rhs: $b) -> $out {
                $out(self.0 * rhs.0)
            }
        }
    };
}

macro_rules! quotient {
    ($a:ident / $b:ident = $out:ident) => {
        impl Div<$b> for $a {
            type Output = $out;
            fn div(self, rhs: $b) -> $out {
                $out(self.0 / rhs.0)
            }
        }
    };
}

product!(Volts * Amps = Watts);
product!(Amps * Volts = Watts);
product!(Amps * Ohms = Volts);
product!(Ohms * Amps = Volts);
product!(Watts * Seconds = Joules);
product!(Seconds * Watts = Joules);
quotient!(Volts / Ohms = Amps);
quotient!(Volts / Amps = Ohms);
quotient!(Watts / Volts = Amps);
quotient!(Watts / Amps = Volts);
quotient!(Joules / Seconds = Watts);
quotient!(Joules / Watts = Seconds);

impl Seconds {
    pub fn from_us(us: f64) -> Self {
        Seconds(us * 1e-6)
    }
}

impl Hertz {
    pub fn period(self) -> Seconds {
        Seconds(1.0 / self.0)
    }
}

/// Uniform quantizer description: step size, code span and whether negative codes exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub lsb: f64,
    pub unit: Unit,
    pub full_scale_codes: i32,
    pub signed: bool,
}

impl QuantizerSpec {
    pub fn new(lsb: f64, unit: Unit, full_scale_codes: i32, signed: bool) -> Result<Self> {
        if !(lsb > 0.0) || !lsb.is_finite() {
            return Err(invalid(format!("quantizer lsb must be positive, got {lsb}")));
        }
        if full_scale_codes <= 0 {
            return Err(invalid(format!(
                "quantizer full scale must be positive, got {full_scale_codes}"
            )));
        }
        Ok(QuantizerSpec {
            lsb,
            unit,
            full_scale_codes,
            signed,
        })
    }

    /// Signed shunt-voltage channel: 2.5 µV steps, ±32768 codes.
    pub fn shunt_voltage() -> Self {
        QuantizerSpec {
            lsb: SHUNT_LSB_V,
            unit: Unit::Volt,
            full_scale_codes: SHUNT_FULL_SCALE_CODES,
            signed: true,
        }
    }

    /// Unsigned bus-voltage channel: 1.25 mV steps.
    pub fn bus_voltage() -> Self {
        QuantizerSpec {
            lsb: BUS_LSB_V,
            unit: Unit::Volt,
            full_scale_codes: BUS_FULL_SCALE_CODES,
            signed: false,
        }
    }

    pub fn full_scale(&self) -> f64 {
        self.lsb * self.full_scale_codes as f64
    }

    fn min_code(&self) -> i32 {
        if self.signed {
            -self.full_scale_codes
        } else {
            0
        }
    }
}

/// Quantizer output. `saturated` is set when the input fell outside the code span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Code {
    pub value: i32,
    pub saturated: bool,
}

/// Rounds `x / lsb` half away from zero and saturates at the code span.
pub fn quantize(x: f64, spec: &QuantizerSpec) -> Code {
    let raw = (x / spec.lsb).round();
    let (lo, hi) = (spec.min_code() as f64, spec.full_scale_codes as f64);
    if raw.is_nan() {
        return Code {
            value: 0,
            saturated: true,
        };
    }
    if raw > hi {
        Code {
            value: spec.full_scale_codes,
            saturated: true,
        }
    } else if raw < lo {
        Code {
            value: spec.min_code(),
            saturated: true,
        }
    } else {
        Code {
            value: raw as i32,
            saturated: false,
        }
    }
}

pub fn dequantize(code: i32, spec: &QuantizerSpec) -> f64 {
    code as f64 * spec.lsb
}

/// Current resolution for a given shunt: 2.5 µV / R.
pub fn current_lsb(r_shunt: Ohms) -> Result<Amps> {
    if !(r_shunt.0 > 0.0) {
        return Err(invalid(format!("shunt resistance must be positive, got {r_shunt}")));
    }
    Ok(Volts(SHUNT_LSB_V) / r_shunt)
}

/// Largest pull-up that still meets the rise time `t_rise` on a bus of capacitance `c_bus`.
pub fn max_pullup(t_rise: Seconds, c_bus: Farads) -> Result<Ohms> {
    if !(t_rise.0 > 0.0) || !(c_bus.0 > 0.0) {
        return Err(invalid(format!(
            "rise time and bus capacitance must be positive, got {t_rise} and {c_bus}"
        )));
    }
    Ok(Ohms(t_rise.0 / (PULLUP_RISE_FACTOR * c_bus.0)))
}

/// Energy of one register transaction including what the MCU burns while waiting on it.
pub fn read_energy(p_mcu: Watts, p_read: Watts, t_read: Seconds) -> Result<Joules> {
    if p_mcu.0 < 0.0 || p_read.0 < 0.0 || t_read.0 < 0.0 {
        return Err(invalid(format!(
            "read energy arguments must be non-negative, got {p_mcu}, {p_read}, {t_read}"
        )));
    }
    Ok((p_mcu + p_read) * t_read)
}

/// Power dissipated in the shunt and its share of the total supply power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuntLoss {
    pub absolute: Watts,
    pub relative: f64,
}

pub fn shunt_loss(i_load: Amps, r_shunt: Ohms, v_supply: Volts) -> Result<ShuntLoss> {
    if i_load.0 < 0.0 {
        return Err(invalid(format!("load current must be non-negative, got {i_load}")));
    }
    if !(r_shunt.0 > 0.0) {
        return Err(invalid(format!("shunt resistance must be positive, got {r_shunt}")));
    }
    if !(v_supply.0 > 0.0) {
        return Err(invalid(format!("supply voltage must be positive, got {v_supply}")));
    }
    let absolute = Watts(i_load.0 * i_load.0 * r_shunt.0);
    // i²R / (V·i) reduces to i·R / V, which keeps round values exact.
    let relative = if i_load.0 == 0.0 {
        0.0
    } else {
        (i_load * r_shunt) / v_supply
    };
    Ok(ShuntLoss { absolute, relative })
}
