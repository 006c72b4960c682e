//! Physical and system constants shared by every module.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// GPS C/A code period, s.
pub const T_CODE: f64 = 1.0e-3;
/// GPS L1 carrier frequency, Hz.
pub const F_L1: f64 = 1_575.42e6;
/// WGS84 Earth rotation rate, rad/s.
pub const OMEGA_E: f64 = 7.292_115_146_7e-5;
/// GPS value of the Earth's gravitational parameter, m^3/s^2.
pub const MU_GPS: f64 = 3.986_005e14;
/// WGS84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Seconds in a GPS week.
pub const SECONDS_PER_WEEK: f64 = 604_800.0;
/// Nominal propagation delay used before any range is known, s.
pub const NOMINAL_DELAY: f64 = 0.0765;
/// Relativistic clock correction constant F, s/m^(1/2).
pub const REL_F: f64 = -4.442_807_633e-10;
