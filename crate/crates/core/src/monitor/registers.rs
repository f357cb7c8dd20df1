//! Register map of the emulated shunt/bus monitor.
//!
//! | addr | name          | width | contents                                               |
//! |------|---------------|-------|--------------------------------------------------------|
//! | 0x00 | configuration | 16    | AVG[11:9] VBUSCT[8:6] VSHCT[5:3] MODE[2:0]             |
//! | 0x01 | shunt voltage | 16    | two's complement, 2.5 µV/LSB                           |
//! | 0x02 | bus voltage   | 16    | unsigned, 1.25 mV/LSB, bit 15 always 0                 |
//! | 0x03 | power         | 16    | unsigned, 25 × current LSB (W)                         |
//! | 0x04 | current       | 16    | two's complement, 2.5 µV / R_shunt per LSB             |
//! | 0x06 | mask/enable   | 16    | CNVR[10] AFF[4] CVRF[3] OVF[2]; read clears AFF, CVRF  |
//!
//! The calibration register (0x05) is not emulated: conversion to amperes uses the
//! exact shunt value, so addressing it is reported as an unknown register.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegisterId {
    Configuration,
    ShuntVoltage,
    BusVoltage,
    Power,
    Current,
    MaskEnable,
}

impl RegisterId {
    pub const ALL: [RegisterId; 6] = [
        RegisterId::Configuration,
        RegisterId::ShuntVoltage,
        RegisterId::BusVoltage,
        RegisterId::Power,
        RegisterId::Current,
        RegisterId::MaskEnable,
    ];

    pub fn address(self) -> u8 {
        match self {
            RegisterId::Configuration => 0x00,
            RegisterId::ShuntVoltage => 0x01,
            RegisterId::BusVoltage => 0x02,
            RegisterId::Power => 0x03,
            RegisterId::Current => 0x04,
            RegisterId::MaskEnable => 0x06,
        }
    }

    pub fn from_address(addr: u8) -> Result<Self> {
        RegisterId::ALL
            .iter()
            .copied()
            .find(|r| r.address() == addr)
            .ok_or(Error::UnknownRegister(addr))
    }
}

/// Mask/enable bits.
pub const MASK_CNVR: u16 = 1 << 10;
pub const MASK_AFF: u16 = 1 << 4;
pub const MASK_CVRF: u16 = 1 << 3;
pub const MASK_OVF: u16 = 1 << 2;

/// Latched 16-bit register contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegisterFile {
    pub configuration: u16,
    pub shunt_voltage: u16,
    pub bus_voltage: u16,
    pub power: u16,
    pub current: u16,
}

impl RegisterFile {
    pub fn get(&self, id: RegisterId) -> Option<u16> {
        match id {
            RegisterId::Configuration => Some(self.configuration),
            RegisterId::ShuntVoltage => Some(self.shunt_voltage),
            RegisterId::BusVoltage => Some(self.bus_voltage),
            RegisterId::Power => Some(self.power),
            RegisterId::Current => Some(self.current),
            RegisterId::MaskEnable => None,
        }
    }
}

/// Saturates a signed code into a two's complement register; returns `(raw, clipped)`.
pub fn signed_register(code: i32) -> (u16, bool) {
    let clipped = code.clamp(i16::MIN as i32, i16::MAX as i32);
    (clipped as i16 as u16, clipped != code)
}

/// Saturates a non-negative code into `max`; returns `(raw, clipped)`.
pub fn unsigned_register(code: i32, max: u16) -> (u16, bool) {
    let clipped = code.clamp(0, max as i32);
    (clipped as u16, clipped != code)
}
