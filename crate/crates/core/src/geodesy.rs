//! WGS84 coordinate frames and topocentric geometry.

use core::ops::{Add, Sub};

use nalgebra::Vector3;

use crate::constants::{OMEGA_E, WGS84_A, WGS84_F};
use crate::error::{invalid, Result};

const E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Position in the Earth-centered Earth-fixed frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, other: EcefPosition) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// True when the norm lies in the band occupied by receivers on or near
    /// the Earth's surface.
    pub fn is_on_earth(self) -> bool {
        self.is_finite() && (6.2e6..=6.5e6).contains(&self.norm())
    }
}

impl Add for EcefPosition {
    type Output = EcefPosition;
    fn add(self, o: EcefPosition) -> EcefPosition {
        EcefPosition::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for EcefPosition {
    type Output = EcefPosition;
    fn sub(self, o: EcefPosition) -> EcefPosition {
        EcefPosition::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// WGS84 geodetic coordinates: degrees, degrees, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeodeticPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) || !longitude.is_finite() || !height.is_finite() {
            return Err(invalid("geodetic coordinates out of range"));
        }
        Ok(Self {
            latitude,
            longitude: normalize_longitude(longitude),
            height,
        })
    }
}

/// Maps a longitude in degrees into (-180, 180].
pub fn normalize_longitude(lon: f64) -> f64 {
    let mut l = lon % 360.0;
    if l > 180.0 {
        l -= 360.0;
    }
    if l <= -180.0 {
        l += 360.0;
    }
    l
}

/// Azimuth, elevation (degrees) and distance (m) of a target seen from a site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopocentricView {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

/// Rotates a satellite position about the z-axis by the angle the Earth
/// turns during `travel_time_s`, expressing it in the ECEF frame at reception.
pub fn earth_rotation_correction(travel_time_s: f64, sat: EcefPosition) -> EcefPosition {
    let angle = OMEGA_E * travel_time_s;
    let (s, c) = angle.sin_cos();
    EcefPosition::new(c * sat.x + s * sat.y, -s * sat.x + c * sat.y, sat.z)
}

/// ECEF to WGS84 geodetic coordinates by iterative latitude refinement.
pub fn ecef_to_geodetic(p: EcefPosition) -> Result<GeodeticPosition> {
    if !p.is_finite() || p.norm() <= 1.0e5 {
        return Err(invalid("position too close to the Earth's center"));
    }
    let rho = p.x.hypot(p.y);
    let longitude = if rho == 0.0 {
        0.0
    } else {
        p.y.atan2(p.x).to_degrees()
    };
    let mut lat = p.z.atan2(rho * (1.0 - E2));
    for _ in 0..10 {
        let s = lat.sin();
        let n = WGS84_A / (1.0 - E2 * s * s).sqrt();
        let next = (p.z + E2 * n * s).atan2(rho);
        let done = (next - lat).abs() < 1.0e-12;
        lat = next;
        if done {
            break;
        }
    }
    let (s, c) = lat.sin_cos();
    let n = WGS84_A / (1.0 - E2 * s * s).sqrt();
    // Valid at every latitude, including the poles.
    let height = rho * c + p.z * s - n * (1.0 - E2 * s * s);
    Ok(GeodeticPosition {
        latitude: lat.to_degrees(),
        longitude: normalize_longitude(longitude),
        height,
    })
}

/// WGS84 geodetic to ECEF.
pub fn geodetic_to_ecef(g: GeodeticPosition) -> EcefPosition {
    let lat = g.latitude.to_radians();
    let lon = g.longitude.to_radians();
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    let n = WGS84_A / (1.0 - E2 * sl * sl).sqrt();
    EcefPosition::new(
        (n + g.height) * cl * co,
        (n + g.height) * cl * so,
        (n * (1.0 - E2) + g.height) * sl,
    )
}

/// Local east, north and up unit vectors at a geodetic position.
pub fn enu_basis(g: &GeodeticPosition) -> [Vector3<f64>; 3] {
    let (sl, cl) = g.latitude.to_radians().sin_cos();
    let (so, co) = g.longitude.to_radians().sin_cos();
    [
        Vector3::new(-so, co, 0.0),
        Vector3::new(-sl * co, -sl * so, cl),
        Vector3::new(cl * co, cl * so, sl),
    ]
}

/// Azimuth, elevation and distance of `sat` from `receiver`.
pub fn topocentric(receiver: EcefPosition, sat: EcefPosition) -> Result<TopocentricView> {
    let site = ecef_to_geodetic(receiver)?;
    topocentric_from(&site, receiver, sat)
}

/// As [`topocentric`], reusing an already computed geodetic position of the
/// receiver.
pub fn topocentric_from(
    site: &GeodeticPosition,
    receiver: EcefPosition,
    sat: EcefPosition,
) -> Result<TopocentricView> {
    let d = (sat - receiver).to_vector();
    let distance = d.norm();
    if !(distance > 0.0) {
        return Err(invalid("receiver and satellite coincide"));
    }
    let [e, n, u] = enu_basis(site);
    let (de, dn, du) = (d.dot(&e), d.dot(&n), d.dot(&u));
    let elevation = (du / distance).clamp(-1.0, 1.0).asin().to_degrees();
    let mut azimuth = de.atan2(dn).to_degrees();
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    if azimuth >= 360.0 {
        azimuth -= 360.0;
    }
    Ok(TopocentricView {
        azimuth,
        elevation,
        distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equator_and_pole() {
        let g = ecef_to_geodetic(EcefPosition::new(WGS84_A, 0.0, 0.0)).unwrap();
        assert!(g.latitude.abs() < 1e-12 && g.longitude.abs() < 1e-12 && g.height.abs() < 1e-6);
        let g = ecef_to_geodetic(EcefPosition::new(0.0, 0.0, 6_356_752.314_2)).unwrap();
        assert!((g.latitude - 90.0).abs() < 1e-12);
        assert!(g.height.abs() < 1e-3);

        let p = geodetic_to_ecef(GeodeticPosition::new(0.0, 0.0, 0.0).unwrap());
        assert!((p.x - WGS84_A).abs() < 1e-9 && p.y.abs() < 1e-9 && p.z.abs() < 1e-9);
        let p = geodetic_to_ecef(GeodeticPosition::new(90.0, 0.0, 0.0).unwrap());
        assert!((p.z - 6_356_752.314_2).abs() < 1e-3 && p.x.abs() < 1e-6);
    }

    #[test]
    fn near_center_is_rejected() {
        assert!(ecef_to_geodetic(EcefPosition::new(10.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn earth_rotation_examples() {
        let p = EcefPosition::new(26.56e6, 0.0, 0.0);
        assert_eq!(earth_rotation_correction(0.0, p), p);
        let r = earth_rotation_correction(0.0765, p);
        let expected_y = -26.56e6 * (OMEGA_E * 0.0765).sin();
        assert!((r.y - expected_y).abs() < 1e-6);
        assert!((r.norm() - p.norm()).abs() < 1e-6);
    }

    #[test]
    fn zenith_and_horizon() {
        let site = GeodeticPosition::new(32.0, 34.8, 60.0).unwrap();
        let rcv = geodetic_to_ecef(site);
        let [e, _, u] = enu_basis(&site);
        let up = EcefPosition::from_vector(&(rcv.to_vector() + u * 2.0e7));
        let v = topocentric(rcv, up).unwrap();
        assert!((v.elevation - 90.0).abs() < 1e-6);
        assert!((v.distance - 2.0e7).abs() < 1e-6);
        let side = EcefPosition::from_vector(&(rcv.to_vector() + e * 1.0e6));
        let v = topocentric(rcv, side).unwrap();
        assert!(v.elevation.abs() < 1e-9);
        assert!((v.azimuth - 90.0).abs() < 1e-9);
        assert!(topocentric(rcv, rcv).is_err());
    }

    fn on_earth() -> impl Strategy<Value = GeodeticPosition> {
        (-89.999f64..89.999, -179.999f64..180.0, -500.0f64..9000.0).prop_map(|(la, lo, h)| {
            GeodeticPosition {
                latitude: la,
                longitude: lo,
                height: h,
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn geodetic_round_trip(g in on_earth()) {
            let p = geodetic_to_ecef(g);
            let back = geodetic_to_ecef(ecef_to_geodetic(p).unwrap());
            prop_assert!(p.distance(back) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn rotation_composes(t1 in -0.5f64..0.5, t2 in -0.5f64..0.5,
                             x in -3e7f64..3e7, y in -3e7f64..3e7, z in -3e7f64..3e7) {
            let p = EcefPosition::new(x, y, z);
            let a = earth_rotation_correction(t1, earth_rotation_correction(t2, p));
            let b = earth_rotation_correction(t1 + t2, p);
            prop_assert!(a.distance(b) <= 1e-9 * p.norm().max(1.0));
            prop_assert!((earth_rotation_correction(t1, p).norm() - p.norm()).abs() <= 1e-9 * p.norm().max(1.0));
        }

        #[test]
        fn elevation_flips_under_horizon_reflection(g in on_earth(),
                                                    dx in -3e7f64..3e7, dy in -3e7f64..3e7, dz in -3e7f64..3e7) {
            let rcv = geodetic_to_ecef(g);
            let site = ecef_to_geodetic(rcv).unwrap();
            let sat = EcefPosition::new(rcv.x + dx, rcv.y + dy, rcv.z + dz);
            prop_assume!(sat.distance(rcv) > 1.0e3);
            let up = enu_basis(&site)[2];
            let d = (sat - rcv).to_vector();
            let mirrored = EcefPosition::from_vector(&(rcv.to_vector() + d - up * (2.0 * d.dot(&up))));
            let a = topocentric_from(&site, rcv, sat).unwrap();
            let b = topocentric_from(&site, rcv, mirrored).unwrap();
            prop_assert!((a.elevation + b.elevation).abs() < 1e-9);
            prop_assert!((a.distance - sat.distance(rcv)).abs() < 1e-6);
        }
    }
}
