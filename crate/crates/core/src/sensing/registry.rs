//! The 59-feature registry over 12 sensing modalities, in fixed order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Activities,
    Bluetooth,
    CellularNetwork,
    Location,
    Notification,
    Proximity,
    Screen,
    StepCounter,
    StepDetector,
    Touch,
    UserPresence,
    Wifi,
}

const ACTIVITIES: &[&str] = &[
    "act_on_foot_frac",
    "act_in_vehicle_frac",
    "act_on_bicycle_frac",
    "act_still_frac",
    "act_tilting_frac",
    "act_unknown_frac",
];
const BLUETOOTH: &[&str] = &[
    "bt_unique_devices",
    "bt_rssi_mean",
    "bt_rssi_min",
    "bt_rssi_max",
    "bt_rssi_std",
    "bt_rssi_var",
    "bt_address_entropy",
];
const CELLULAR: &[&str] = &[
    "cell_unique_towers",
    "cell_signal_mean",
    "cell_signal_min",
    "cell_signal_max",
    "cell_signal_std",
    "cell_tower_entropy",
];
const LOCATION: &[&str] = &[
    "loc_center_lat",
    "loc_center_lon",
    "loc_lat_mean",
    "loc_lat_min",
    "loc_lat_max",
    "loc_lon_mean",
    "loc_lon_min",
    "loc_lon_max",
    "loc_alt_mean",
    "loc_alt_min",
    "loc_alt_max",
    "loc_speed_mean",
    "loc_speed_min",
    "loc_speed_max",
    "loc_speed_std",
    "loc_radius_gyration",
    "loc_total_distance",
];
const NOTIFICATION: &[&str] = &["notif_posted", "notif_removed"];
const PROXIMITY: &[&str] = &["prox_mean", "prox_std", "prox_min", "prox_max"];
const SCREEN: &[&str] = &[
    "screen_on_duration",
    "screen_off_duration",
    "screen_episodes",
    "screen_episode_mean",
    "screen_episode_min",
    "screen_episode_max",
    "screen_episode_std",
];
const STEPCOUNTER: &[&str] = &["steps_total"];
const STEPDETECTOR: &[&str] = &["step_events"];
const TOUCH: &[&str] = &["touch_events"];
const USERPRESENCE: &[&str] = &["presence_present_duration", "presence_absent_duration"];
const WIFI: &[&str] = &["wifi_unique_devices", "wifi_rssi_mean", "wifi_rssi_min", "wifi_rssi_max", "wifi_rssi_std"];

pub const FEATURE_COUNT: usize = 59;

impl Modality {
    pub const ALL: [Modality; 12] = [
        Modality::Activities,
        Modality::Bluetooth,
        Modality::CellularNetwork,
        Modality::Location,
        Modality::Notification,
        Modality::Proximity,
        Modality::Screen,
        Modality::StepCounter,
        Modality::StepDetector,
        Modality::Touch,
        Modality::UserPresence,
        Modality::Wifi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Activities => "activities",
            Modality::Bluetooth => "bluetooth",
            Modality::CellularNetwork => "cellularnetwork",
            Modality::Location => "location",
            Modality::Notification => "notification",
            Modality::Proximity => "proximity",
            Modality::Screen => "screen",
            Modality::StepCounter => "stepcounter",
            Modality::StepDetector => "stepdetector",
            Modality::Touch => "touch",
            Modality::UserPresence => "userpresence",
            Modality::Wifi => "wifi",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Unknown { kind: "modality", name: name.to_string() })
    }

    pub fn features(self) -> &'static [&'static str] {
        match self {
            Modality::Activities => ACTIVITIES,
            Modality::Bluetooth => BLUETOOTH,
            Modality::CellularNetwork => CELLULAR,
            Modality::Location => LOCATION,
            Modality::Notification => NOTIFICATION,
            Modality::Proximity => PROXIMITY,
            Modality::Screen => SCREEN,
            Modality::StepCounter => STEPCOUNTER,
            Modality::StepDetector => STEPDETECTOR,
            Modality::Touch => TOUCH,
            Modality::UserPresence => USERPRESENCE,
            Modality::Wifi => WIFI,
        }
    }

    /// Registry index of this modality's first feature.
    pub fn offset(self) -> usize {
        Self::ALL.iter().take_while(|&&m| m != self).map(|m| m.features().len()).sum()
    }
}

/// All registered feature names in registry order.
pub fn feature_names() -> Vec<&'static str> {
    Modality::ALL.iter().flat_map(|m| m.features().iter().copied()).collect()
}

pub fn feature_index(name: &str) -> Result<usize> {
    feature_names()
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::Unknown { kind: "feature", name: name.to_string() })
}

/// Modality owning registry index `idx`.
pub fn modality_of(idx: usize) -> Option<Modality> {
    Modality::ALL.into_iter().find(|m| (m.offset()..m.offset() + m.features().len()).contains(&idx))
}
