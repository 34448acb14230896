//! Canonical channel order: watch streams, then phone streams, then
//! demographics. Multi-axis sensors are expanded x, y, z.

/// One sensor channel of the canonical schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub name: &'static str,
    pub rate_hz: f64,
    /// Typical level and spread, used by the synthetic generator.
    pub level: f64,
    pub spread: f64,
}

const fn ch(name: &'static str, rate_hz: f64, level: f64, spread: f64) -> ChannelSpec {
    ChannelSpec {
        name,
        rate_hz,
        level,
        spread,
    }
}

pub const WATCH_CHANNELS: [ChannelSpec; 7] = [
    ch("gsr", 4.0, 2.0, 0.5),
    ch("skin_temp", 4.0, 33.0, 0.8),
    ch("watch_acc_x", 32.0, 10.0, 20.0),
    ch("watch_acc_y", 32.0, -20.0, 20.0),
    ch("watch_acc_z", 32.0, 50.0, 20.0),
    ch("ibi", 1.0, 0.8, 0.1),
    ch("bvp", 64.0, 0.0, 40.0),
];

pub const PHONE_CHANNELS: [ChannelSpec; 26] = [
    ch("humidity", 3.0, 40.0, 5.0),
    ch("illuminance", 3.0, 300.0, 120.0),
    ch("light_spectrum_1", 3.0, 500.0, 150.0),
    ch("light_spectrum_2", 3.0, 200.0, 80.0),
    ch("ambient_temp", 3.0, 23.0, 1.5),
    ch("gravity_x", 3.0, 0.5, 3.0),
    ch("gravity_y", 3.0, 8.0, 3.0),
    ch("gravity_z", 3.0, 3.0, 3.0),
    ch("angular_velocity_x", 3.0, 0.0, 0.5),
    ch("angular_velocity_y", 3.0, 0.0, 0.5),
    ch("angular_velocity_z", 3.0, 0.0, 0.5),
    ch("orientation_x", 3.0, 180.0, 60.0),
    ch("orientation_y", 3.0, -10.0, 30.0),
    ch("orientation_z", 3.0, 5.0, 30.0),
    ch("phone_acc_x", 3.0, 0.5, 3.0),
    ch("phone_acc_y", 3.0, 8.0, 3.0),
    ch("phone_acc_z", 3.0, 3.0, 3.0),
    ch("linear_acc_x", 3.0, 0.0, 1.0),
    ch("linear_acc_y", 3.0, 0.0, 1.0),
    ch("linear_acc_z", 3.0, 0.0, 1.0),
    ch("air_pressure", 3.0, 1013.0, 3.0),
    ch("proximity", 3.0, 5.0, 2.0),
    ch("wifi_strength", 3.0, -60.0, 8.0),
    ch("magnetic_x", 3.0, 20.0, 15.0),
    ch("magnetic_y", 3.0, -10.0, 15.0),
    ch("magnetic_z", 3.0, -40.0, 15.0),
];

/// Questionnaire features in canonical order. Binary answers are 0/1.
pub const DEMOGRAPHICS: [&str; 7] = [
    "age",
    "gender",
    "height",
    "weight",
    "relatives_with_diabetes",
    "smoking",
    "drinking",
];

pub const SIGNAL_CHANNEL_COUNT: usize = WATCH_CHANNELS.len() + PHONE_CHANNELS.len();
/// Signal channels plus demographics.
pub const CHANNEL_COUNT: usize = SIGNAL_CHANNEL_COUNT + DEMOGRAPHICS.len();

/// Analysis window length in seconds.
pub const WINDOW_SECONDS: f64 = 15.0;
/// Gap between consecutive windows in seconds.
pub const GAP_SECONDS: f64 = 30.0;
/// Steps per second in the edge encoding.
pub const STEPS_PER_SECOND: f64 = 4.0;

/// All signal channels, watch first.
pub fn signal_channels() -> impl Iterator<Item = &'static ChannelSpec> {
    WATCH_CHANNELS.iter().chain(PHONE_CHANNELS.iter())
}

/// Samples one channel contributes to a window.
pub fn samples_per_window(rate_hz: f64, window_s: f64) -> usize {
    (rate_hz * window_s).round() as usize
}
