//! GPS time scale and Julian dates.

use crate::constants::SECONDS_PER_WEEK;
use crate::error::{invalid, Result};

/// Julian day of the GPS epoch, 1980-01-06 00:00.
pub const GPS_EPOCH_JD: f64 = 2_444_244.5;

/// A GPS time as week number and seconds of week.
///
/// The week is never wrapped modulo 1024.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsTime {
    pub week: u32,
    pub sow: f64,
}

impl GpsTime {
    pub fn new(week: u32, sow: f64) -> Result<Self> {
        if !sow.is_finite() || !(0.0..SECONDS_PER_WEEK).contains(&sow) {
            return Err(invalid("seconds of week outside [0, 604800)"));
        }
        Ok(Self { week, sow })
    }

    /// Builds a time from a possibly out-of-range seconds value, carrying
    /// whole weeks into the week number.
    pub fn normalized(week: i64, sow: f64) -> Self {
        let carry = libm::floor(sow / SECONDS_PER_WEEK);
        let mut sow = sow - carry * SECONDS_PER_WEEK;
        let mut week = week + carry as i64;
        if sow >= SECONDS_PER_WEEK {
            sow -= SECONDS_PER_WEEK;
            week += 1;
        }
        if sow < 0.0 {
            sow = 0.0;
        }
        Self {
            week: week.max(0) as u32,
            sow,
        }
    }

    /// Returns `self + seconds`.
    pub fn add_seconds(self, seconds: f64) -> Self {
        Self::normalized(self.week as i64, self.sow + seconds)
    }

    /// Signed difference `self - other` in seconds.
    pub fn diff(self, other: GpsTime) -> f64 {
        (self.week as f64 - other.week as f64) * SECONDS_PER_WEEK + (self.sow - other.sow)
    }

    /// Continuous seconds since the GPS epoch. Loses sub-microsecond
    /// precision; use [`GpsTime::diff`] for precise intervals.
    pub fn total_seconds(self) -> f64 {
        self.week as f64 * SECONDS_PER_WEEK + self.sow
    }
}

/// Astronomical Julian day for a Gregorian calendar date.
pub fn julian_day(year: i32, month: u32, day: u32, hours: f64) -> Result<f64> {
    if year < 1901 || !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month)
    {
        return Err(invalid("invalid calendar date"));
    }
    if !hours.is_finite() || !(0.0..=24.0).contains(&hours) {
        return Err(invalid("fractional hours outside [0, 24]"));
    }
    let (y, m) = if month <= 2 {
        (year as f64 - 1.0, month as f64 + 12.0)
    } else {
        (year as f64, month as f64)
    };
    let century = libm::floor(y / 100.0);
    let gregorian = 2.0 - century + libm::floor(century / 4.0);
    let jd = libm::floor(365.25 * (y + 4716.0)) + libm::floor(30.6001 * (m + 1.0))
        + day as f64
        + gregorian
        - 1524.5
        + hours / 24.0;
    Ok(jd)
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
            if leap {
                29
            } else {
                28
            }
        }
    }
}

/// Converts a Julian day to GPS week and seconds of week.
pub fn gps_time(jd: f64) -> Result<GpsTime> {
    if !jd.is_finite() || jd < GPS_EPOCH_JD {
        return Err(invalid("date precedes the GPS epoch"));
    }
    let days = jd - GPS_EPOCH_JD;
    let week = libm::floor(days / 7.0);
    // Work in whole days plus fraction to keep sub-second precision.
    let day_of_week = days - week * 7.0;
    let sow = day_of_week * 86_400.0;
    Ok(GpsTime::normalized(week as i64, sow))
}

/// Calendar date and time of day to GPS time.
pub fn gps_time_from_calendar(
    year: i32,
    month: u32,
    day: u32,
    hour: u32,
    minute: u32,
    second: f64,
) -> Result<GpsTime> {
    let jd = julian_day(year, month, day, 0.0)?;
    let midnight = gps_time(jd)?;
    Ok(midnight.add_seconds(hour as f64 * 3600.0 + minute as f64 * 60.0 + second))
}

/// Calendar date and time of day of a GPS time:
/// (year, month, day, hour, minute, second).
pub fn calendar_from_gps(t: GpsTime) -> (i32, u32, u32, u32, u32, f64) {
    let days = t.week as i64 * 7 + libm::floor(t.sow / 86_400.0) as i64;
    let secs = t.sow - libm::floor(t.sow / 86_400.0) * 86_400.0;
    // Civil-from-days on the proleptic Gregorian calendar, days since 1970-01-01.
    let z = days + 3_657 + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = (yoe + era * 400 + i64::from(month <= 2)) as i32;
    let hour = libm::floor(secs / 3600.0);
    let minute = libm::floor((secs - hour * 3600.0) / 60.0);
    let second = secs - hour * 3600.0 - minute * 60.0;
    (year, month, day, hour as u32, minute as u32, second)
}

/// Wraps a time difference into (-302400, 302400].
pub fn wrap_half_week(dt: f64) -> f64 {
    const HALF: f64 = SECONDS_PER_WEEK / 2.0;
    let mut r = dt - libm::floor(dt / SECONDS_PER_WEEK) * SECONDS_PER_WEEK;
    // r in [0, 604800]
    if r > HALF {
        r -= SECONDS_PER_WEEK;
    }
    if r <= -HALF {
        r += SECONDS_PER_WEEK;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn julian_day_reference_epochs() {
        assert_eq!(julian_day(2000, 1, 1, 12.0).unwrap(), 2_451_545.0);
        assert_eq!(julian_day(1980, 1, 6, 0.0).unwrap(), 2_444_244.5);
    }

    #[test]
    fn julian_day_matches_fliegel_van_flandern() {
        // Integer-arithmetic formula for the Julian day number at noon.
        fn jdn(y: i64, m: i64, d: i64) -> i64 {
            (1461 * (y + 4800 + (m - 14) / 12)) / 4 + (367 * (m - 2 - 12 * ((m - 14) / 12))) / 12
                - (3 * ((y + 4900 + (m - 14) / 12) / 100)) / 4
                + d
                - 32075
        }
        for &(y, m, d) in &[(2021, 3, 1), (1999, 12, 31), (2024, 2, 29), (1901, 1, 1), (2100, 3, 1)] {
            let expected = jdn(y, m, d) as f64 - 0.5;
            assert_eq!(julian_day(y as i32, m as u32, d as u32, 0.0).unwrap(), expected);
        }
        assert_eq!(julian_day(2021, 3, 1, 0.0).unwrap(), 2_459_274.5);
    }

    #[test]
    fn julian_day_rejects_bad_dates() {
        assert!(julian_day(2021, 2, 29, 0.0).is_err());
        assert!(julian_day(2021, 13, 1, 0.0).is_err());
        assert!(julian_day(1900, 1, 1, 0.0).is_err());
    }

    #[test]
    fn gps_time_examples() {
        assert_eq!(gps_time(2_444_244.5).unwrap(), GpsTime { week: 0, sow: 0.0 });
        assert_eq!(gps_time(2_444_251.5).unwrap(), GpsTime { week: 1, sow: 0.0 });
        assert_eq!(gps_time(2_444_245.0).unwrap(), GpsTime { week: 0, sow: 43_200.0 });
        assert!(gps_time(2_444_244.0).is_err());
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_half_week(0.0), 0.0);
        assert_eq!(wrap_half_week(302_401.0), -302_399.0);
        assert_eq!(wrap_half_week(-604_800.0), 0.0);
        assert_eq!(wrap_half_week(302_400.0), 302_400.0);
        assert_eq!(wrap_half_week(-302_400.0), 302_400.0);
    }

    #[test]
    fn calendar_round_trip() {
        assert_eq!(calendar_from_gps(GpsTime { week: 0, sow: 0.0 }), (1980, 1, 6, 0, 0, 0.0));
        for &(y, mo, d, h, mi, s) in &[(2020, 2, 29, 23, 59, 44.0), (1999, 8, 22, 0, 0, 0.0), (2024, 12, 31, 12, 30, 15.5)] {
            let t = gps_time_from_calendar(y, mo, d, h, mi, s).unwrap();
            assert_eq!(calendar_from_gps(t), (y, mo, d, h, mi, s));
        }
    }

    #[test]
    fn add_and_diff() {
        let t = GpsTime::new(2000, 604_799.5).unwrap();
        let u = t.add_seconds(1.0);
        assert_eq!(u.week, 2001);
        assert!((u.sow - 0.5).abs() < 1e-9);
        assert!((u.diff(t) - 1.0).abs() < 1e-9);
        let v = t.add_seconds(-604_800.0 * 2.0);
        assert_eq!(v.week, 1998);
    }
}
