//! Per-modality window features.
//!
//! Windows are half-open `[T − h, T + h)`. Durations are in seconds; a state
//! holds from its event until the next event of the same modality or the window end.
//! Standard deviations are population (ddof 0) and entropies use the natural log.

use std::collections::HashMap;

use super::events::{Activity, Payload, SensorEvent};
use super::geo::{self, LatLon};
use super::registry::Modality;
use crate::error::{Error, Result};

pub const DEFAULT_HALF_WIDTH_MS: i64 = 5 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub report_time: i64,
    pub half_width: i64,
}

impl WindowSpec {
    pub fn new(report_time: i64, half_width: i64) -> Result<Self> {
        if half_width <= 0 {
            return Err(Error::Config(format!("window half width must be positive, got {half_width}")));
        }
        Ok(Self { report_time, half_width })
    }

    pub fn around(report_time: i64) -> Self {
        Self { report_time, half_width: DEFAULT_HALF_WIDTH_MS }
    }

    pub fn start(&self) -> i64 {
        self.report_time - self.half_width
    }

    pub fn end(&self) -> i64 {
        self.report_time + self.half_width
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start() <= t && t < self.end()
    }
}

/// Population mean, min, max and std; `None` when empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // clamp guards against the mean rounding just outside [min, max]
    Some(Summary { mean: mean.clamp(min, max), min, max, std: var.sqrt() })
}

/// Shannon entropy (nats) of the empirical category distribution.
pub fn entropy<'a>(labels: impl IntoIterator<Item = &'a str>) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        n += 1;
    }
    let mut keys: Vec<_> = counts.into_iter().collect();
    keys.sort_unstable();
    let n = n as f64;
    keys.iter().map(|&(_, c)| c as f64 / n).fold(0.0, |acc, p| acc - p * p.ln())
}

/// Steps accumulated over cumulative readings; a drop is a reset, after which the
/// new reading counts as steps since the reset.
pub fn step_total(readings: &[f64]) -> f64 {
    readings.windows(2).fold(0.0, |acc, w| {
        let d = w[1] - w[0];
        acc + if d >= 0.0 { d } else { w[1] }
    })
}

/// Seconds each state is held: `(state, start_ms)` runs until the next start or `end`.
fn state_durations<S: Copy>(states: &[(S, i64)], end: i64) -> Vec<(S, f64)> {
    states
        .iter()
        .enumerate()
        .map(|(i, &(s, t))| {
            let until = states.get(i + 1).map_or(end, |&(_, u)| u);
            (s, (until - t) as f64 / 1000.0)
        })
        .collect()
}

/// ON→OFF episode lengths in seconds. An ON run is timed from its first ON.
pub fn screen_episodes(states: &[(bool, i64)]) -> Vec<f64> {
    let mut open: Option<i64> = None;
    let mut out = Vec::new();
    for &(on, t) in states {
        match (on, open) {
            (true, None) => open = Some(t),
            (false, Some(start)) => {
                out.push((t - start) as f64 / 1000.0);
                open = None;
            }
            _ => {}
        }
    }
    out
}

fn push_summary(out: &mut Vec<f64>, s: Option<Summary>, with_std: bool) {
    match s {
        Some(s) => {
            out.extend([s.mean, s.min, s.max]);
            if with_std {
                out.push(s.std);
            }
        }
        None => out.extend(std::iter::repeat_n(f64::NAN, if with_std { 4 } else { 3 })),
    }
}

/// Features of `modality` over window `w`, in registry order; missing values are NaN.
/// `events` must be sorted by timestamp and may hold other modalities, which are ignored.
pub fn extract_window(events: &[SensorEvent], w: &WindowSpec, modality: Modality) -> Result<Vec<f64>> {
    if events.windows(2).any(|p| p[1].timestamp < p[0].timestamp) {
        return Err(Error::Degenerate("events must be sorted by timestamp".into()));
    }
    let lo = events.partition_point(|e| e.timestamp < w.start());
    let hi = events.partition_point(|e| e.timestamp < w.end());
    let evs: Vec<&SensorEvent> = events[lo..hi].iter().filter(|e| e.modality() == modality).collect();
    let width = modality.features().len();
    if evs.is_empty() {
        return Ok(vec![f64::NAN; width]);
    }
    let end = w.end();
    let mut out = Vec::with_capacity(width);
    match modality {
        Modality::Activities => {
            let states: Vec<(Activity, i64)> = evs
                .iter()
                .filter_map(|e| match e.payload {
                    Payload::Activity(a) => Some((a, e.timestamp)),
                    _ => None,
                })
                .collect();
            let mut time = [0.0; 6];
            for (a, d) in state_durations(&states, end) {
                time[a.index()] += d;
            }
            let total: f64 = time.iter().sum();
            out.extend(time.iter().map(|t| t / total));
        }
        Modality::Bluetooth | Modality::Wifi | Modality::CellularNetwork => {
            let (ids, values): (Vec<&str>, Vec<f64>) = evs
                .iter()
                .filter_map(|e| match &e.payload {
                    Payload::Bluetooth { address, rssi } => Some((address.as_str(), *rssi)),
                    Payload::Wifi { bssid, rssi } => Some((bssid.as_str(), *rssi)),
                    Payload::Cell { tower_id, signal } => Some((tower_id.as_str(), *signal)),
                    _ => None,
                })
                .unzip();
            let mut unique = ids.clone();
            unique.sort_unstable();
            unique.dedup();
            out.push(unique.len() as f64);
            let s = summarize(&values);
            push_summary(&mut out, s, true);
            match modality {
                Modality::Bluetooth => {
                    out.push(s.map_or(f64::NAN, |s| s.std * s.std));
                    out.push(entropy(ids.iter().copied()));
                }
                Modality::CellularNetwork => out.push(entropy(ids.iter().copied())),
                _ => {}
            }
        }
        Modality::Location => {
            let mut pts = Vec::new();
            let (mut alt, mut speed) = (Vec::new(), Vec::new());
            for e in &evs {
                if let Payload::Location { latitude, longitude, altitude, speed: v } = e.payload {
                    pts.push(LatLon::new(latitude, longitude));
                    alt.push(altitude);
                    speed.push(v);
                }
            }
            let center = geo::centermost_point(&pts).expect("non-empty");
            out.extend([center.lat, center.lon]);
            let lats: Vec<f64> = pts.iter().map(|p| p.lat).collect();
            let lons: Vec<f64> = pts.iter().map(|p| p.lon).collect();
            push_summary(&mut out, summarize(&lats), false);
            push_summary(&mut out, summarize(&lons), false);
            push_summary(&mut out, summarize(&alt), false);
            push_summary(&mut out, summarize(&speed), true);
            out.push(geo::radius_of_gyration(&pts));
            out.push(geo::total_distance(&pts));
        }
        Modality::Notification => {
            let posted = evs.iter().filter(|e| matches!(e.payload, Payload::Notification { posted: true })).count();
            out.extend([posted as f64, (evs.len() - posted) as f64]);
        }
        Modality::Proximity => {
            let values: Vec<f64> = evs
                .iter()
                .filter_map(|e| match e.payload {
                    Payload::Proximity(d) => Some(d),
                    _ => None,
                })
                .collect();
            let s = summarize(&values).expect("non-empty");
            out.extend([s.mean, s.std, s.min, s.max]);
        }
        Modality::Screen | Modality::UserPresence => {
            let states: Vec<(bool, i64)> = evs
                .iter()
                .filter_map(|e| match e.payload {
                    Payload::Screen { on } => Some((on, e.timestamp)),
                    Payload::Presence { present } => Some((present, e.timestamp)),
                    _ => None,
                })
                .collect();
            let (mut on_time, mut off_time) = (0.0, 0.0);
            for (s, d) in state_durations(&states, end) {
                if s {
                    on_time += d;
                } else {
                    off_time += d;
                }
            }
            out.extend([on_time, off_time]);
            if modality == Modality::Screen {
                let episodes = screen_episodes(&states);
                out.push(episodes.len() as f64);
                push_summary(&mut out, summarize(&episodes), true);
            }
        }
        Modality::StepCounter => {
            let readings: Vec<f64> = evs
                .iter()
                .filter_map(|e| match e.payload {
                    Payload::StepCounter(s) => Some(s),
                    _ => None,
                })
                .collect();
            out.push(step_total(&readings));
        }
        Modality::StepDetector | Modality::Touch => out.push(evs.len() as f64),
    }
    debug_assert_eq!(out.len(), width);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: i64 = 1_000_000_000;

    fn ev(t: i64, p: Payload) -> SensorEvent {
        SensorEvent::new("u", t, p)
    }

    #[test]
    fn step_counter_totals_increments() {
        let evs: Vec<_> =
            [100.0, 105.0, 120.0].iter().enumerate().map(|(i, &s)| ev(T + i as i64, Payload::StepCounter(s))).collect();
        assert_eq!(extract_window(&evs, &WindowSpec::around(T), Modality::StepCounter).unwrap(), vec![20.0]);
    }

    #[test]
    fn step_counter_reset_adds_new_reading() {
        assert_eq!(step_total(&[100.0, 110.0, 4.0, 9.0]), 10.0 + 4.0 + 5.0);
    }

    #[test]
    fn screen_on_off_twice_is_two_episodes() {
        let states = [true, false, true, false];
        let evs: Vec<_> =
            states.iter().enumerate().map(|(i, &on)| ev(T + 1000 * i as i64, Payload::Screen { on })).collect();
        let f = extract_window(&evs, &WindowSpec::around(T), Modality::Screen).unwrap();
        assert_eq!(f[2], 2.0);
        assert_eq!(f[3], 1.0);
        // ON 1 s twice; OFF 1 s then until window end (T + 300 s)
        assert_eq!(f[0], 2.0);
        assert_eq!(f[1], 1.0 + 297.0);
    }

    #[test]
    fn bluetooth_entropy_hand_value() {
        let evs: Vec<_> = ["A", "A", "B"]
            .iter()
            .enumerate()
            .map(|(i, a)| ev(T + i as i64, Payload::Bluetooth { address: a.to_string(), rssi: -50.0 - i as f64 }))
            .collect();
        let f = extract_window(&evs, &WindowSpec::around(T), Modality::Bluetooth).unwrap();
        assert_eq!(f[0], 2.0);
        let expected = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - (1.0f64 / 3.0) * (1.0f64 / 3.0).ln();
        assert!((f[6] - expected).abs() < 1e-12);
        assert!((expected - 0.6365).abs() < 1e-4);
        assert!((f[5] - f[4] * f[4]).abs() < 1e-12);
    }

    #[test]
    fn window_is_half_open() {
        let w = WindowSpec::around(T);
        let evs = vec![ev(w.start(), Payload::Touch), ev(w.end(), Payload::Touch)];
        assert_eq!(extract_window(&evs, &w, Modality::Touch).unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_window_is_all_missing() {
        let f = extract_window(&[], &WindowSpec::around(T), Modality::Location).unwrap();
        assert_eq!(f.len(), 17);
        assert!(f.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn activity_fractions_sum_to_one() {
        let evs = vec![
            ev(T - 100_000, Payload::Activity(Activity::Still)),
            ev(T, Payload::Activity(Activity::OnFoot)),
            ev(T + 60_000, Payload::Activity(Activity::Still)),
        ];
        let f = extract_window(&evs, &WindowSpec::around(T), Modality::Activities).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((f[0] - 60.0 / 400.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_limits() {
        assert_eq!(entropy(["x", "x", "x"]), 0.0);
        assert!((entropy(["a", "b", "c", "d"]) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_window_rejected() {
        assert!(WindowSpec::new(0, 0).is_err());
    }
}
