//! Line-oriented snapshot observation files.
//!
//! ```text
//! SNAP1 <week> <sow> <id>
//! <prn> <phi> [<doppler_hz>] [<snr>]
//! ```
//!
//! Lines starting with `#` are comments. A Doppler of `-` marks a missing
//! value when an SNR follows.

use std::fmt::Write as _;
use std::path::Path;

use snapfix_core::model::{CodePhaseObservation, DopplerObservation, Snapshot};
use snapfix_core::time::GpsTime;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapRecord {
    pub prn: u8,
    pub phi: f64,
    pub doppler_hz: Option<f64>,
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub epoch: GpsTime,
    pub id: String,
    pub records: Vec<SnapRecord>,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "snapshot",
        line,
        msg: msg.into(),
    }
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(line, format!("bad {what} '{tok}'")))
}

impl SnapshotFile {
    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(GpsTime, String)> = None;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if header.is_none() {
                if toks.len() != 4 || toks[0] != "SNAP1" {
                    return Err(err(n, "expected 'SNAP1 <week> <sow> <id>'"));
                }
                let week = toks[1]
                    .parse::<u32>()
                    .map_err(|_| err(n, format!("bad week '{}'", toks[1])))?;
                let sow = number(toks[2], n, "seconds of week")?;
                let epoch = GpsTime::new(week, sow).map_err(|e| err(n, e.to_string()))?;
                header = Some((epoch, toks[3].to_string()));
                continue;
            }
            if !(2..=4).contains(&toks.len()) {
                return Err(err(n, "expected '<prn> <phi> [<doppler_hz>] [<snr>]'"));
            }
            let prn = toks[0]
                .parse::<u8>()
                .ok()
                .filter(|p| (1..=32).contains(p))
                .ok_or_else(|| err(n, format!("bad PRN '{}'", toks[0])))?;
            let phi = number(toks[1], n, "code phase")?;
            if !(0.0..1.0).contains(&phi) {
                return Err(err(n, format!("code phase {phi} outside [0, 1)")));
            }
            let doppler_hz = match toks.get(2) {
                None | Some(&"-") => None,
                Some(t) => Some(number(t, n, "Doppler")?),
            };
            let snr = toks.get(3).map(|t| number(t, n, "SNR")).transpose()?;
            if records.iter().any(|r: &SnapRecord| r.prn == prn) {
                return Err(err(n, format!("PRN {prn} listed twice")));
            }
            records.push(SnapRecord {
                prn,
                phi,
                doppler_hz,
                snr,
            });
        }
        let (epoch, id) = header.ok_or_else(|| err(text.lines().count().max(1), "missing SNAP1 header"))?;
        Ok(Self { epoch, id, records })
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("SNAP1 {} {} {}\n", self.epoch.week, self.epoch.sow, self.id);
        for r in &self.records {
            let _ = write!(out, "{} {}", r.prn, r.phi);
            match (r.doppler_hz, r.snr) {
                (Some(d), Some(s)) => {
                    let _ = write!(out, " {d} {s}");
                }
                (Some(d), None) => {
                    let _ = write!(out, " {d}");
                }
                (None, Some(s)) => {
                    let _ = write!(out, " - {s}");
                }
                (None, None) => {}
            }
            out.push('\n');
        }
        out
    }

    /// Doppler is attached only when every satellite has a value.
    pub fn to_snapshot(&self) -> Result<Snapshot> {
        let code = self
            .records
            .iter()
            .map(|r| CodePhaseObservation {
                snr: r.snr,
                ..CodePhaseObservation::new(r.prn, r.phi)
            })
            .collect();
        let dop: Option<Vec<DopplerObservation>> = self
            .records
            .iter()
            .map(|r| {
                r.doppler_hz.map(|d| DopplerObservation {
                    prn: r.prn,
                    doppler_hz: d,
                })
            })
            .collect();
        Ok(Snapshot::new(self.epoch, code, dop)?)
    }

    pub fn from_snapshot(snapshot: &Snapshot, id: &str) -> Result<Self> {
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::Usage(format!("receiver id '{id}' must be one non-empty word")));
        }
        let mut records = Vec::with_capacity(snapshot.len());
        for o in snapshot.code_obs() {
            if o.ms_offset != 0 {
                return Err(Error::Usage(format!(
                    "PRN {}: phase belongs to a different code period",
                    o.prn
                )));
            }
            records.push(SnapRecord {
                prn: o.prn,
                phi: o.phi,
                doppler_hz: snapshot.doppler_for(o.prn),
                snr: o.snr,
            });
        }
        Ok(Self {
            epoch: snapshot.receiver_epoch,
            id: id.to_string(),
            records,
        })
    }
}
