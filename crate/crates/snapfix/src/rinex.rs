//! RINEX 2.10/2.11 and 3.0x GPS navigation files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use snapfix_core::atmosphere::KlobucharParams;
use snapfix_core::nav::{BroadcastExtras, Ephemeris, EphemerisSet};
use snapfix_core::time::{calendar_from_gps, gps_time_from_calendar, GpsTime};

use crate::error::{Error, Result};

const FIELD: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RinexVersion {
    V2,
    V3,
}

/// Result of reading a navigation file.
#[derive(Debug, Clone, PartialEq)]
pub struct NavFile {
    pub version: f64,
    pub ephemerides: EphemerisSet,
    /// Records of other constellations that were skipped, by system letter.
    pub skipped: BTreeMap<char, usize>,
    /// Records dropped because an identical (PRN, toe, IODE) was already read.
    pub duplicates: usize,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "rinex",
        line,
        msg: msg.into(),
    }
}

/// Parses a Fortran-style real; blank fields read as zero.
fn parse_real(s: &str, line: usize) -> Result<f64> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(0.0);
    }
    let t = t.replace(['D', 'd'], "E");
    t.parse::<f64>()
        .map_err(|_| err(line, format!("bad number '{}'", s.trim())))
}

fn parse_int(s: &str, line: usize, what: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| err(line, format!("bad {what} '{}'", s.trim())))
}

/// Characters `[a, b)` of a line, padding short lines with blanks.
fn cols(line: &str, a: usize, b: usize) -> &str {
    let n = line.len();
    if a >= n {
        ""
    } else {
        &line[a..b.min(n)]
    }
}

fn fields(line: &str, start: usize, count: usize, lineno: usize) -> Result<Vec<f64>> {
    (0..count)
        .map(|k| parse_real(cols(line, start + k * FIELD, start + (k + 1) * FIELD), lineno))
        .collect()
}

pub fn read_nav_file(path: &Path) -> Result<NavFile> {
    let text = std::fs::read_to_string(path)?;
    parse_rinex_nav(&text)
}

pub fn parse_rinex_nav(text: &str) -> Result<NavFile> {
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.first().ok_or_else(|| err(1, "empty file"))?;
    if cols(first, 60, 80).trim() != "RINEX VERSION / TYPE" {
        return Err(err(1, "missing RINEX VERSION / TYPE header"));
    }
    let version = parse_real(cols(first, 0, 9), 1)?;
    let v = match version {
        x if (2.0..3.0).contains(&x) => RinexVersion::V2,
        x if (3.0..4.0).contains(&x) => RinexVersion::V3,
        _ => return Err(err(1, format!("unsupported RINEX version {version}"))),
    };
    let file_type = cols(first, 20, 21);
    if file_type != "N" {
        return Err(err(1, format!("not a navigation file (type '{file_type}')")));
    }
    if v == RinexVersion::V3 {
        let sys = cols(first, 40, 41);
        if !matches!(sys, "G" | "M" | " " | "") {
            return Err(err(1, format!("not a GPS navigation file (system '{sys}')")));
        }
    }

    let mut alpha = None;
    let mut beta = None;
    let mut body = None;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        let label = cols(line, 60, 80).trim();
        match label {
            "END OF HEADER" => {
                body = Some(i + 1);
                break;
            }
            "ION ALPHA" => alpha = Some(iono_values(line, 2, n)?),
            "ION BETA" => beta = Some(iono_values(line, 2, n)?),
            "IONOSPHERIC CORR" => match cols(line, 0, 4) {
                "GPSA" => alpha = Some(iono_values(line, 5, n)?),
                "GPSB" => beta = Some(iono_values(line, 5, n)?),
                _ => {}
            },
            "" if !line.trim().is_empty() => return Err(err(n, "header line without label")),
            _ => {}
        }
    }
    let body = body.ok_or_else(|| err(lines.len(), "missing END OF HEADER"))?;

    let mut set = EphemerisSet::new();
    if let (Some(alpha), Some(beta)) = (alpha, beta) {
        set.iono = Some(KlobucharParams { alpha, beta });
    }
    let mut skipped = BTreeMap::new();
    let mut duplicates = 0;
    let mut i = body;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let start = lines[i];
        if v == RinexVersion::V3 {
            let sys = start.chars().next().unwrap_or(' ');
            if sys != 'G' {
                if sys == ' ' {
                    return Err(err(i + 1, "expected a record header"));
                }
                // Skip to the next record header of any system.
                *skipped.entry(sys).or_insert(0) += 1;
                i += 1;
                while i < lines.len() && lines[i].starts_with("    ") {
                    i += 1;
                }
                continue;
            }
        }
        if i + 8 > lines.len() {
            return Err(err(lines.len(), "truncated ephemeris record"));
        }
        let eph = parse_record(&lines[i..i + 8], i + 1, v)?;
        if !set.insert(eph) {
            duplicates += 1;
        }
        i += 8;
    }
    for (sys, count) in &skipped {
        log::warn!("skipped {count} navigation records of system {sys}");
    }
    if duplicates > 0 {
        log::warn!("dropped {duplicates} duplicate ephemeris records");
    }
    Ok(NavFile {
        version,
        ephemerides: set,
        skipped,
        duplicates,
    })
}

fn iono_values(line: &str, start: usize, n: usize) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = parse_real(cols(line, start + 12 * k, start + 12 * (k + 1)), n)?;
    }
    Ok(out)
}

fn parse_record(rec: &[&str], first: usize, v: RinexVersion) -> Result<Ephemeris> {
    let l0 = rec[0];
    let (prn, year, rest, data0, cont) = match v {
        RinexVersion::V2 => {
            let yy = parse_int(cols(l0, 3, 5), first, "year")?;
            let year = if yy >= 80 { 1900 + yy } else { 2000 + yy };
            (parse_int(cols(l0, 0, 2), first, "PRN")?, year, 6, 22, 3)
        }
        RinexVersion::V3 => (
            parse_int(cols(l0, 1, 3), first, "PRN")?,
            parse_int(cols(l0, 4, 8), first, "year")?,
            9,
            23,
            4,
        ),
    };
    if !(1..=32).contains(&prn) {
        return Err(err(first, format!("PRN {prn} outside 1..32")));
    }
    let (month, day, hour, minute, second) = match v {
        RinexVersion::V2 => (
            parse_int(cols(l0, rest, rest + 2), first, "month")?,
            parse_int(cols(l0, rest + 3, rest + 5), first, "day")?,
            parse_int(cols(l0, rest + 6, rest + 8), first, "hour")?,
            parse_int(cols(l0, rest + 9, rest + 11), first, "minute")?,
            parse_real(cols(l0, rest + 11, rest + 16), first)?,
        ),
        RinexVersion::V3 => (
            parse_int(cols(l0, rest, rest + 2), first, "month")?,
            parse_int(cols(l0, rest + 3, rest + 5), first, "day")?,
            parse_int(cols(l0, rest + 6, rest + 8), first, "hour")?,
            parse_int(cols(l0, rest + 9, rest + 11), first, "minute")?,
            parse_int(cols(l0, rest + 12, rest + 14), first, "second")? as f64,
        ),
    };
    let toc = gps_time_from_calendar(
        year as i32,
        month as u32,
        day as u32,
        hour as u32,
        minute as u32,
        second,
    )
    .map_err(|e| err(first, format!("epoch: {e}")))?;
    let clock = fields(l0, data0, 3, first)?;
    let mut orbit = Vec::with_capacity(28);
    for (k, line) in rec[1..].iter().enumerate() {
        if !line.starts_with(&" ".repeat(cont)) {
            return Err(err(first + k + 1, "truncated ephemeris record"));
        }
        orbit.extend(fields(line, cont, 4, first + k + 1)?);
    }
    let week = orbit[18];
    if !(week >= 0.0 && week.fract() == 0.0) {
        return Err(err(first + 5, format!("bad GPS week {week}")));
    }
    let eph = Ephemeris {
        prn: prn as u8,
        toe: GpsTime {
            week: week as u32,
            sow: orbit[8],
        },
        toc,
        af0: clock[0],
        af1: clock[1],
        af2: clock[2],
        iode: orbit[0] as u32,
        crs: orbit[1],
        delta_n: orbit[2],
        m0: orbit[3],
        cuc: orbit[4],
        e: orbit[5],
        cus: orbit[6],
        sqrt_a: orbit[7],
        cic: orbit[9],
        omega0: orbit[10],
        cis: orbit[11],
        i0: orbit[12],
        crc: orbit[13],
        omega: orbit[14],
        omega_dot: orbit[15],
        i_dot: orbit[16],
        tgd: orbit[22],
        extras: BroadcastExtras {
            codes_on_l2: orbit[17],
            l2p_flag: orbit[19],
            sv_accuracy: orbit[20],
            sv_health: orbit[21],
            iodc: orbit[23],
            transmission_time: orbit[24],
            fit_interval: orbit[25],
        },
    };
    if !(0.0..604_800.0).contains(&eph.toe.sow) {
        return Err(err(first + 3, format!("toe {} outside the week", eph.toe.sow)));
    }
    eph.validate().map_err(|e| err(first, e.to_string()))?;
    Ok(eph)
}

/// `x` as a 19-character Fortran D19.12 field.
pub fn format_d19(x: f64) -> String {
    fortran_real(x, 12, 19)
}

fn fortran_real(x: f64, decimals: usize, width: usize) -> String {
    let s = format!("{:.*e}", decimals, x);
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{:>width$}", format!("{mantissa}D{sign}{:02}", exp.abs()))
}

fn header_line(content: &str, label: &str) -> String {
    format!("{content:<60}{label:<20}\n")
}

/// Serializes `set` as a GPS navigation file.
pub fn write_rinex_nav(set: &EphemerisSet, version: RinexVersion) -> String {
    let mut out = String::new();
    match version {
        RinexVersion::V2 => out.push_str(&header_line(
            &format!("{:9.2}{:11}{:<20}{:<20}", 2.11, "", "N: GPS NAV DATA", ""),
            "RINEX VERSION / TYPE",
        )),
        RinexVersion::V3 => out.push_str(&header_line(
            &format!("{:9.2}{:11}{:<20}{:<20}", 3.04, "", "N: GNSS NAV DATA", "G: GPS"),
            "RINEX VERSION / TYPE",
        )),
    }
    out.push_str(&header_line(&format!("{:<20}{:<20}{:<20}", "snapfix", "", ""), "PGM / RUN BY / DATE"));
    if let Some(k) = &set.iono {
        let row = |v: &[f64; 4]| v.iter().map(|x| fortran_real(*x, 4, 12)).collect::<String>();
        match version {
            RinexVersion::V2 => {
                out.push_str(&header_line(&format!("  {}", row(&k.alpha)), "ION ALPHA"));
                out.push_str(&header_line(&format!("  {}", row(&k.beta)), "ION BETA"));
            }
            RinexVersion::V3 => {
                out.push_str(&header_line(&format!("GPSA {}", row(&k.alpha)), "IONOSPHERIC CORR"));
                out.push_str(&header_line(&format!("GPSB {}", row(&k.beta)), "IONOSPHERIC CORR"));
            }
        }
    }
    out.push_str(&header_line("", "END OF HEADER"));
    for e in set.records() {
        write_record(&mut out, e, version);
    }
    out
}

fn write_record(out: &mut String, e: &Ephemeris, version: RinexVersion) {
    let (y, mo, d, h, mi, s) = calendar_from_gps(e.toc);
    let pad = match version {
        RinexVersion::V2 => {
            let _ = write!(out, "{:2} {:02} {:2} {:2} {:2} {:2}{:5.1}", e.prn, y % 100, mo, d, h, mi, s);
            "   "
        }
        RinexVersion::V3 => {
            let _ = write!(
                out,
                "G{:02} {:04} {:02} {:02} {:02} {:02} {:02}",
                e.prn, y, mo, d, h, mi, s.round() as u32
            );
            "    "
        }
    };
    for v in [e.af0, e.af1, e.af2] {
        out.push_str(&format_d19(v));
    }
    out.push('\n');
    let x = &e.extras;
    let rows = [
        [e.iode as f64, e.crs, e.delta_n, e.m0],
        [e.cuc, e.e, e.cus, e.sqrt_a],
        [e.toe.sow, e.cic, e.omega0, e.cis],
        [e.i0, e.crc, e.omega, e.omega_dot],
        [e.i_dot, x.codes_on_l2, e.toe.week as f64, x.l2p_flag],
        [x.sv_accuracy, x.sv_health, e.tgd, x.iodc],
        [x.transmission_time, x.fit_interval, 0.0, 0.0],
    ];
    for row in rows {
        out.push_str(pad);
        for v in row {
            out.push_str(&format_d19(v));
        }
        out.push('\n');
    }
}
