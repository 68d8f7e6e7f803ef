//! Conversions used at the command-line boundary. Everything else is SI.

pub const GAUSS: f64 = 1e-4;
pub const MHZ: f64 = 1e6;
pub const MCPS: f64 = 1e6;
pub const MICROTESLA: f64 = 1e-6;

pub fn dbm_ratio(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}
