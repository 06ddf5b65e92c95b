//! Closed-form planar orbits around a subject that moves relative to the air.
//!
//! Canonical frame: the subject moves along `-x` relative to the fluid, the
//! camera looks right (`γ = +π/2`) and the airship turns right (`ψ̇ > 0`).
//! The left-looking case is the mirror image `y → -y`, `ψ → -ψ`; the radius
//! and speed formulas are unchanged under that reflection, so they take the
//! heading as flown and use `|ψ̇|`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ControlLimits;

/// Number of heading samples used by feasibility sweeps.
pub const SWEEP_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraSide {
    Right,
    Left,
}

impl CameraSide {
    pub fn sign(self) -> f64 {
        match self {
            CameraSide::Right => 1.0,
            CameraSide::Left => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSpec {
    /// Mean distance to the subject over one orbit [m].
    pub base_radius: f64,
    pub yaw_rate: f64,
    /// Subject speed relative to the fluid [m/s].
    pub subject_speed: f64,
    pub camera_side: CameraSide,
}

impl OrbitSpec {
    pub fn new(base_radius: f64, yaw_rate: f64, subject_speed: f64) -> Result<Self> {
        let spec = Self {
            base_radius,
            yaw_rate,
            subject_speed,
            camera_side: CameraSide::Right,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_side(mut self, side: CameraSide) -> Self {
        self.camera_side = side;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_radius > 0.0) || self.yaw_rate == 0.0 || !self.yaw_rate.is_finite() || !(self.subject_speed >= 0.0) {
            return Err(Error::Config(format!("invalid orbit {self:?}")));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        self.yaw_rate.abs()
    }

    /// Signed yaw rate actually flown: the airship turns toward the camera side.
    pub fn turn_rate(&self) -> f64 {
        self.camera_side.sign() * self.rate()
    }

    /// Amplitude of the radius oscillation, `‖v_S‖ / ψ̇`.
    pub fn eccentric_offset(&self) -> f64 {
        self.subject_speed / self.rate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEnvelope {
    pub v_orbit_min: f64,
    pub v_orbit_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrbitClass {
    Valid,
    ViolatesMin,
    ViolatesMax,
    ViolatesBoth,
}

/// Distance to the subject at heading `psi`: `r₀ − cos ψ · ‖v_S‖/ψ̇`.
pub fn orbit_radius(spec: &OrbitSpec, psi: f64) -> f64 {
    spec.base_radius - psi.cos() * spec.eccentric_offset()
}

/// Airspeed needed at heading `psi`: `ψ̇ r₀ − 2 cos ψ ‖v_S‖`.
pub fn orbit_airspeed(spec: &OrbitSpec, psi: f64) -> f64 {
    spec.rate() * spec.base_radius - 2.0 * psi.cos() * spec.subject_speed
}

pub fn speed_envelope(spec: &OrbitSpec) -> SpeedEnvelope {
    let mid = spec.rate() * spec.base_radius;
    SpeedEnvelope {
        v_orbit_min: mid - 2.0 * spec.subject_speed,
        v_orbit_max: mid + 2.0 * spec.subject_speed,
    }
}

/// Largest subject speed for which some orbit stays inside the airspeed band.
pub fn max_subject_speed(limits: &ControlLimits) -> f64 {
    (limits.v_max - limits.v_min) / 4.0
}

/// Subject speed below which orbits survive `q` reversals spaced half an orbit apart.
pub fn reversal_safe_speed(limits: &ControlLimits, q: u32) -> f64 {
    (limits.v_max - limits.v_min) / (4.0 * (q as f64 + 1.0))
}

pub fn classify_orbit(spec: &OrbitSpec, limits: &ControlLimits) -> OrbitClass {
    let env = speed_envelope(spec);
    match (env.v_orbit_min < limits.v_min, env.v_orbit_max > limits.v_max) {
        (false, false) => OrbitClass::Valid,
        (true, false) => OrbitClass::ViolatesMin,
        (false, true) => OrbitClass::ViolatesMax,
        (true, true) => OrbitClass::ViolatesBoth,
    }
}

/// Base radius of the orbit with the given minimum airspeed.
pub fn base_radius_for_min_speed(yaw_rate: f64, subject_speed: f64, v_min: f64) -> f64 {
    (v_min + 2.0 * subject_speed) / yaw_rate.abs()
}

/// The orbit an airship finds itself on when the subject's fluid-relative
/// velocity flips sign while the airship is at heading `psi`.
///
/// Position relative to the subject and heading are unchanged; in the
/// re-oriented canonical frame the heading is `psi + π`, so the new base
/// radius is `r(ψ) + cos(ψ + π)·‖v_S‖/ψ̇`.
pub fn reversed_orbit(spec: &OrbitSpec, psi: f64) -> OrbitSpec {
    let r = orbit_radius(spec, psi);
    OrbitSpec {
        base_radius: r + (psi + PI).cos() * spec.eccentric_offset(),
        ..*spec
    }
}

/// True when a reversal at any sampled heading leaves the airship on a valid orbit.
pub fn is_reversal_safe(spec: &OrbitSpec, limits: &ControlLimits, samples: usize) -> bool {
    classify_orbit(spec, limits) == OrbitClass::Valid
        && (0..samples).all(|i| {
            let psi = 2.0 * PI * i as f64 / samples as f64;
            classify_orbit(&reversed_orbit(spec, psi), limits) == OrbitClass::Valid
        })
}

/// One sample of a closed-form orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSample {
    pub time: f64,
    /// Heading as flown.
    pub heading: f64,
    pub radius: f64,
    /// Airship horizontal position relative to the subject `[x, y]`.
    pub relative: [f64; 2],
    /// Subject displacement since `t = 0` in the fluid frame.
    pub subject_offset: [f64; 2],
}

impl OrbitSample {
    /// Position in the fluid frame given the subject's initial position.
    pub fn fluid_position(&self, subject_start: [f64; 2]) -> [f64; 2] {
        [
            subject_start[0] + self.subject_offset[0] + self.relative[0],
            subject_start[1] + self.subject_offset[1] + self.relative[1],
        ]
    }
}

/// Samples the orbit at `t = 0, dt, 2dt, … ≤ duration` starting from canonical heading `psi0`.
pub fn reference_trajectory(spec: &OrbitSpec, psi0: f64, duration: f64, dt: f64) -> Result<Vec<OrbitSample>> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Config(format!("invalid sampling duration={duration} dt={dt}")));
    }
    spec.validate()?;
    let steps = (duration / dt + 1e-9).floor() as usize;
    let side = spec.camera_side.sign();
    Ok((0..=steps)
        .map(|i| {
            let t = i as f64 * dt;
            let psi_c = psi0 + spec.rate() * t;
            let r = orbit_radius(spec, psi_c);
            OrbitSample {
                time: t,
                heading: side * psi_c,
                radius: r,
                relative: [r * psi_c.sin(), -side * r * psi_c.cos()],
                subject_offset: [-spec.subject_speed * t, 0.0],
            }
        })
        .collect())
}
