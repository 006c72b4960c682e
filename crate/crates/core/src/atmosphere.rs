//! Ionospheric (Klobuchar broadcast model) and tropospheric delays.

use core::f64::consts::PI;


use crate::error::{invalid, Result};
use crate::geodesy::{GeodeticPosition, TopocentricView};
use crate::time::GpsTime;

/// Nighttime constant of the broadcast ionosphere model, s.
pub const KLOBUCHAR_FLOOR_S: f64 = 5.0e-9;

/// Broadcast ionosphere coefficients (alpha: amplitude, beta: period).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlobucharParams {
    pub alpha: [f64; 4],
    pub beta: [f64; 4],
}

/// Modeled propagation delays for one line of sight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AtmosphericDelay {
    /// Ionospheric group delay on L1, s.
    pub iono_s: f64,
    /// Tropospheric delay, m.
    pub tropo_m: f64,
}

impl AtmosphericDelay {
    /// Total delay expressed in seconds.
    pub fn total_seconds(&self) -> f64 {
        self.iono_s + self.tropo_m / crate::constants::SPEED_OF_LIGHT
    }
}

/// Surface meteorology for the troposphere model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetConditions {
    /// Pressure, hPa.
    pub pressure: f64,
    /// Temperature, degrees Celsius.
    pub temperature: f64,
    /// Relative humidity, percent.
    pub humidity: f64,
}

impl Default for MetConditions {
    fn default() -> Self {
        Self {
            pressure: 1013.25,
            temperature: 20.0,
            humidity: 50.0,
        }
    }
}

/// Single-frequency ionospheric delay from the broadcast model, s.
pub fn klobuchar_delay(
    user: &GeodeticPosition,
    view: &TopocentricView,
    t: GpsTime,
    params: &KlobucharParams,
) -> f64 {
    // Angles in semicircles, as the broadcast coefficients expect.
    let el = view.elevation.max(0.0) / 180.0;
    let az = view.azimuth.to_radians();
    let lat = user.latitude / 180.0;
    let lon = user.longitude / 180.0;

    let psi = 0.0137 / (el + 0.11) - 0.022;
    let lat_i = (lat + psi * az.cos()).clamp(-0.416, 0.416);
    let lon_i = lon + psi * az.sin() / (lat_i * PI).cos();
    let lat_m = lat_i + 0.064 * ((lon_i - 1.617) * PI).cos();

    let mut local = 4.32e4 * lon_i + t.sow;
    local -= libm::floor(local / 86_400.0) * 86_400.0;

    let obliquity = 1.0 + 16.0 * (0.53 - el).powi(3);
    let poly = |c: &[f64; 4]| c[0] + lat_m * (c[1] + lat_m * (c[2] + lat_m * c[3]));
    let amp = poly(&params.alpha).max(0.0);
    let per = poly(&params.beta).max(72_000.0);

    let x = 2.0 * PI * (local - 50_400.0) / per;
    if x.abs() < 1.57 {
        let x2 = x * x;
        obliquity * (KLOBUCHAR_FLOOR_S + amp * (1.0 - x2 / 2.0 + x2 * x2 / 24.0))
    } else {
        obliquity * KLOBUCHAR_FLOOR_S
    }
}

/// Tropospheric delay, m, from a Goad-Goodman modified Hopfield model.
pub fn tropospheric_delay(
    view: &TopocentricView,
    site: &GeodeticPosition,
    met: Option<MetConditions>,
) -> Result<f64> {
    if !(view.elevation > 0.0) {
        return Err(invalid("tropospheric delay requires positive elevation"));
    }
    let met = met.unwrap_or_default();
    let sinel = view.elevation.to_radians().sin();
    let hsta_km = (site.height / 1000.0).max(0.0);
    Ok(goad_goodman(
        sinel,
        hsta_km,
        met.pressure,
        met.temperature + 273.15,
        met.humidity,
    ))
}

/// Dry plus wet refractivity integrals along the slant path. Heights in km,
/// pressure in hPa, temperature in K, humidity in percent; result in m.
fn goad_goodman(sinel: f64, hsta: f64, p: f64, tkel: f64, hum: f64) -> f64 {
    const EARTH_KM: f64 = 6378.137;
    const B0: f64 = 7.839_257e-5;

    // Met values are sea-level values; the station height enters through
    // the layer geometry.
    let atkel = 7.5 * (tkel - 273.15) / (237.3 + tkel - 273.15);
    let e0sea = 0.0611 * hum * 10f64.powf(atkel);
    let tksea = tkel;
    let psea = p;

    let dry_ref_sea = 77.624e-6 / tksea;
    let dry_top = 1.1385e-5 / dry_ref_sea;
    let wet_ref_sea = (371_900.0e-6 / tksea - 12.92e-6) / tksea;
    let wet_top = 1.1385e-5 * (1255.0 / tksea + 0.05) / wet_ref_sea;

    let layers = [
        (dry_top, dry_ref_sea * psea),
        (wet_top, wet_ref_sea * e0sea),
    ];
    let mut total = 0.0;
    for (htop, ref_sea) in layers {
        if htop <= hsta {
            continue;
        }
        let refr = ref_sea * ((htop - hsta) / htop).powi(4);
        let mut rtop = (EARTH_KM + htop).powi(2) - (EARTH_KM + hsta).powi(2) * (1.0 - sinel * sinel);
        if rtop < 0.0 {
            rtop = 0.0;
        }
        let rtop = rtop.sqrt() - (EARTH_KM + hsta) * sinel;
        let a = -sinel / (htop - hsta);
        let b = -B0 * (1.0 - sinel * sinel) / (htop - hsta);
        let mut alpha = [
            2.0 * a,
            2.0 * a * a + 4.0 * b / 3.0,
            a * (a * a + 3.0 * b),
            a.powi(4) / 5.0 + 2.4 * a * a * b + 1.2 * b * b,
            2.0 * a * b * (a * a + 3.0 * b) / 3.0,
            b * b * (6.0 * a * a + 4.0 * b) * 1.428_571e-1,
            0.0,
            0.0,
        ];
        if b * b > 1.0e-35 {
            alpha[6] = a * b.powi(3) / 2.0;
            alpha[7] = b.powi(4) / 9.0;
        }
        let mut dr = rtop;
        let mut power = rtop;
        for coeff in alpha {
            power *= rtop;
            dr += coeff * power;
        }
        total += dr * refr * 1000.0;
    }
    total
}

/// Ionospheric (s) and tropospheric (m) delays for one line of sight.
/// Lines of sight below the horizon get zero delay.
pub fn atmospheric_delay(
    site: &GeodeticPosition,
    view: &TopocentricView,
    t: GpsTime,
    iono: Option<&KlobucharParams>,
) -> AtmosphericDelay {
    if view.elevation <= 0.0 {
        return AtmosphericDelay::default();
    }
    let iono_s = iono.map_or(0.0, |p| klobuchar_delay(site, view, t, p));
    let tropo_m = tropospheric_delay(view, site, None).unwrap_or(0.0);
    AtmosphericDelay { iono_s, tropo_m }
}
