//! Ready-made closed-loop scenarios at desk scale.

use crate::model::Vec3;
use crate::sim::{Course, SimConfig, SubjectPath, WindModel};

/// Wind speeds of the wind sweep [m/s].
pub const WIND_SWEEP: [f64; 7] = [0.0, 0.3, 0.6, 0.9, 1.4, 2.2, 3.0];

/// Formation sizes of the formation-size sweep.
pub const FORMATION_SIZES: [usize; 4] = [1, 2, 3, 6];

/// Relative gust strength of the scenario wind.
pub const GUST_INTENSITY: f64 = 0.2;

/// Seconds between wind changes.
pub const GUST_INTERVAL: f64 = 15.0;

/// Gusty wind blowing along `x` at the given mean speed over the whole episode.
pub fn scenario_wind(speed: f64, cfg: &SimConfig) -> WindModel {
    WindModel::gusty(Vec3::new(speed, 0.0, 0.0), GUST_INTENSITY, GUST_INTERVAL, cfg.duration, cfg.seed)
}

fn with_wind(mut cfg: SimConfig, speed: f64) -> SimConfig {
    cfg.wind = scenario_wind(speed, &cfg);
    cfg
}

/// Stationary subject in a 0.6 m/s wind.
pub fn formation_size(airships: usize) -> SimConfig {
    wind_sweep_point(airships, 0.6)
}

/// Three airships around a stationary subject in a wind of the given mean speed.
pub fn wind_speed(speed: f64) -> SimConfig {
    wind_sweep_point(3, speed)
}

fn wind_sweep_point(airships: usize, speed: f64) -> SimConfig {
    with_wind(
        SimConfig {
            airships,
            subject: SubjectPath::Stationary(Vec3::zeros()),
            ..SimConfig::default()
        },
        speed,
    )
}

/// Three airships following a subject around the reversing course.
pub fn moving_subject(wind: f64) -> SimConfig {
    with_wind(
        SimConfig {
            airships: 3,
            subject: SubjectPath::Course(Course::default()),
            ..SimConfig::default()
        },
        wind,
    )
}

/// Rebuilds the scenario wind after changing duration or seed.
pub fn reseed(mut cfg: SimConfig) -> SimConfig {
    let speed = cfg.wind.base.norm();
    cfg.wind = scenario_wind(speed, &cfg);
    cfg
}
