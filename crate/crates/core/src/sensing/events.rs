//! Timestamped sensor events and their per-modality CSV schemas.
//!
//! Each modality is one CSV file named `{modality}.csv` with columns
//! `user_id,timestamp_ms` followed by the payload columns below.
//!
//! | modality        | payload columns                                   |
//! |-----------------|---------------------------------------------------|
//! | activities      | `activity` (on_foot, in_vehicle, on_bicycle, still, tilting, unknown) |
//! | bluetooth       | `address`, `rssi`                                 |
//! | cellularnetwork | `tower_id`, `signal`                              |
//! | location        | `latitude`, `longitude`, `altitude`, `speed`      |
//! | notification    | `action` (posted, removed)                        |
//! | proximity       | `distance`                                        |
//! | screen          | `state` (on, off)                                 |
//! | stepcounter     | `steps` (cumulative counter)                      |
//! | stepdetector    | none                                              |
//! | touch           | none                                              |
//! | userpresence    | `state` (present, absent)                         |
//! | wifi            | `bssid`, `rssi`                                   |

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::registry::Modality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    OnFoot,
    InVehicle,
    OnBicycle,
    Still,
    Tilting,
    Unknown,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::OnFoot,
        Activity::InVehicle,
        Activity::OnBicycle,
        Activity::Still,
        Activity::Tilting,
        Activity::Unknown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activity::OnFoot => "on_foot",
            Activity::InVehicle => "in_vehicle",
            Activity::OnBicycle => "on_bicycle",
            Activity::Still => "still",
            Activity::Tilting => "tilting",
            Activity::Unknown => "unknown",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).expect("listed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Activity(Activity),
    Bluetooth { address: String, rssi: f64 },
    Cell { tower_id: String, signal: f64 },
    Location { latitude: f64, longitude: f64, altitude: f64, speed: f64 },
    Notification { posted: bool },
    Proximity(f64),
    Screen { on: bool },
    StepCounter(f64),
    StepDetector,
    Touch,
    Presence { present: bool },
    Wifi { bssid: String, rssi: f64 },
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Activity(_) => Modality::Activities,
            Payload::Bluetooth { .. } => Modality::Bluetooth,
            Payload::Cell { .. } => Modality::CellularNetwork,
            Payload::Location { .. } => Modality::Location,
            Payload::Notification { .. } => Modality::Notification,
            Payload::Proximity(_) => Modality::Proximity,
            Payload::Screen { .. } => Modality::Screen,
            Payload::StepCounter(_) => Modality::StepCounter,
            Payload::StepDetector => Modality::StepDetector,
            Payload::Touch => Modality::Touch,
            Payload::Presence { .. } => Modality::UserPresence,
            Payload::Wifi { .. } => Modality::Wifi,
        }
    }

    /// Payload column names, in CSV order.
    pub fn columns(modality: Modality) -> &'static [&'static str] {
        match modality {
            Modality::Activities => &["activity"],
            Modality::Bluetooth => &["address", "rssi"],
            Modality::CellularNetwork => &["tower_id", "signal"],
            Modality::Location => &["latitude", "longitude", "altitude", "speed"],
            Modality::Notification => &["action"],
            Modality::Proximity => &["distance"],
            Modality::Screen => &["state"],
            Modality::StepCounter => &["steps"],
            Modality::StepDetector | Modality::Touch => &[],
            Modality::UserPresence => &["state"],
            Modality::Wifi => &["bssid", "rssi"],
        }
    }

    /// Parses payload fields given in [`Payload::columns`] order.
    pub fn parse(modality: Modality, fields: &[&str]) -> Result<Self> {
        let cols = Self::columns(modality);
        let bad = |detail: String| Error::Payload { modality: modality.name().to_string(), detail };
        if fields.len() != cols.len() {
            return Err(bad(format!("expected {} payload fields, got {}", cols.len(), fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 =
                fields[i].trim().parse().map_err(|_| bad(format!("{} is not a number: {:?}", cols[i], fields[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("{} is not finite", cols[i])))
            }
        };
        let text = |i: usize| -> Result<String> {
            let v = fields[i].trim();
            if v.is_empty() {
                Err(bad(format!("{} is empty", cols[i])))
            } else {
                Ok(v.to_string())
            }
        };
        let choice = |i: usize, yes: &str, no: &str| -> Result<bool> {
            match fields[i].trim().to_ascii_lowercase().as_str() {
                s if s == yes => Ok(true),
                s if s == no => Ok(false),
                other => Err(bad(format!("{} must be {yes} or {no}, got {other:?}", cols[i]))),
            }
        };
        Ok(match modality {
            Modality::Activities => {
                let name = fields[0].trim().to_ascii_lowercase();
                let act = Activity::ALL
                    .into_iter()
                    .find(|a| a.name() == name)
                    .ok_or_else(|| bad(format!("unknown activity {name:?}")))?;
                Payload::Activity(act)
            }
            Modality::Bluetooth => Payload::Bluetooth { address: text(0)?, rssi: num(1)? },
            Modality::CellularNetwork => Payload::Cell { tower_id: text(0)?, signal: num(1)? },
            Modality::Location => {
                let (latitude, longitude) = (num(0)?, num(1)?);
                if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
                    return Err(bad(format!("coordinates out of range: ({latitude}, {longitude})")));
                }
                Payload::Location { latitude, longitude, altitude: num(2)?, speed: num(3)? }
            }
            Modality::Notification => Payload::Notification { posted: choice(0, "posted", "removed")? },
            Modality::Proximity => Payload::Proximity(num(0)?),
            Modality::Screen => Payload::Screen { on: choice(0, "on", "off")? },
            Modality::StepCounter => {
                let steps = num(0)?;
                if steps < 0.0 {
                    return Err(bad(format!("negative step counter {steps}")));
                }
                Payload::StepCounter(steps)
            }
            Modality::StepDetector => Payload::StepDetector,
            Modality::Touch => Payload::Touch,
            Modality::UserPresence => Payload::Presence { present: choice(0, "present", "absent")? },
            Modality::Wifi => Payload::Wifi { bssid: text(0)?, rssi: num(1)? },
        })
    }

    /// Inverse of [`Payload::parse`].
    pub fn fields(&self) -> Vec<String> {
        match self {
            Payload::Activity(a) => vec![a.name().into()],
            Payload::Bluetooth { address, rssi } => vec![address.clone(), rssi.to_string()],
            Payload::Cell { tower_id, signal } => vec![tower_id.clone(), signal.to_string()],
            Payload::Location { latitude, longitude, altitude, speed } => {
                vec![latitude.to_string(), longitude.to_string(), altitude.to_string(), speed.to_string()]
            }
            Payload::Notification { posted } => vec![if *posted { "posted" } else { "removed" }.into()],
            Payload::Proximity(d) => vec![d.to_string()],
            Payload::Screen { on } => vec![if *on { "on" } else { "off" }.into()],
            Payload::StepCounter(s) => vec![s.to_string()],
            Payload::StepDetector | Payload::Touch => vec![],
            Payload::Presence { present } => vec![if *present { "present" } else { "absent" }.into()],
            Payload::Wifi { bssid, rssi } => vec![bssid.clone(), rssi.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    pub user_id: String,
    pub timestamp: i64,
    pub payload: Payload,
}

impl SensorEvent {
    pub fn new(user_id: impl Into<String>, timestamp: i64, payload: Payload) -> Self {
        Self { user_id: user_id.into(), timestamp, payload }
    }

    pub fn modality(&self) -> Modality {
        self.payload.modality()
    }
}

/// Sorts events by (user, timestamp), stable within equal keys.
pub fn sort_events(events: &mut [SensorEvent]) {
    events.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
}

/// Reads one modality CSV.
pub fn read_modality_csv<R: Read>(modality: Modality, reader: R) -> Result<Vec<SensorEvent>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Payload {
            modality: modality.name().to_string(),
            detail: format!("missing column {name:?}"),
        })
    };
    let user_col = col("user_id")?;
    let ts_col = col("timestamp_ms")?;
    let payload_cols: Vec<usize> = Payload::columns(modality).iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut events = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let ts_raw = record.get(ts_col).unwrap_or("").trim();
        let timestamp: i64 = ts_raw.parse().map_err(|_| Error::Payload {
            modality: modality.name().to_string(),
            detail: format!("bad timestamp {ts_raw:?}"),
        })?;
        if timestamp < 0 {
            return Err(Error::Payload { modality: modality.name().to_string(), detail: "negative timestamp".into() });
        }
        let fields: Vec<&str> = payload_cols.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        let payload = Payload::parse(modality, &fields)?;
        events.push(SensorEvent::new(record.get(user_col).unwrap_or("").trim(), timestamp, payload));
    }
    Ok(events)
}

pub fn write_modality_csv<W: std::io::Write>(modality: Modality, events: &[SensorEvent], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id", "timestamp_ms"];
    header.extend_from_slice(Payload::columns(modality));
    wtr.write_record(&header)?;
    for e in events.iter().filter(|e| e.modality() == modality) {
        let mut row = vec![e.user_id.clone(), e.timestamp.to_string()];
        row.extend(e.payload.fields());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads every `{modality}.csv` present in `dir`; absent files contribute no events.
pub fn read_event_dir(dir: &Path) -> Result<HashMap<Modality, Vec<SensorEvent>>> {
    let mut out = HashMap::new();
    for m in Modality::ALL {
        let path = dir.join(format!("{}.csv", m.name()));
        if path.exists() {
            let events = read_modality_csv(m, std::fs::File::open(&path)?)?;
            out.insert(m, events);
        }
    }
    Ok(out)
}
