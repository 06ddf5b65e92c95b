//! Shared domain types.
//!
//! All world-frame positions and velocities are North-East-Down: `x` north,
//! `y` east, `z` down. The ground plane is `z = 0`, so altitude is `-z`.
//! Body frame is `x` forward, `y` right, `z` down. Angles are radians.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Horizontal speed below which a course angle is undefined [m/s].
pub const COURSE_EPSILON: f64 = 1e-6;

/// Standard gravity [m/s²].
pub const GRAVITY: f64 = 9.81;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Roll, pitch, yaw applied as intrinsic Z-Y-X (yaw first).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Orientation {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Orientation {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::new(0.0, 0.0, yaw)
    }

    /// Body-to-world rotation `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn body_to_world(&self) -> Mat3 {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Mat3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    pub fn is_valid(&self) -> bool {
        let half = PI / 2.0;
        self.roll.is_finite()
            && self.pitch.is_finite()
            && self.yaw.is_finite()
            && self.roll.abs() < half
            && self.pitch.abs() < half
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirshipState {
    pub position: Vec3,
    /// World-frame (ground-relative) velocity.
    pub velocity: Vec3,
    pub orientation: Orientation,
}

impl AirshipState {
    pub fn new(position: Vec3, velocity: Vec3, orientation: Orientation) -> Self {
        Self {
            position,
            velocity,
            orientation,
        }
    }

    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().chain(self.velocity.iter()).all(|c| c.is_finite());
        if !finite || !self.orientation.is_valid() {
            return Err(Error::Config(format!("invalid airship state {self:?}")));
        }
        Ok(())
    }
}

/// Subject on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl SubjectState {
    /// Builds a ground-plane subject; vertical components are dropped.
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self {
            position: Vec3::new(position.x, position.y, 0.0),
            velocity: Vec3::new(velocity.x, velocity.y, 0.0),
        }
    }

    pub fn stationary(position: Vec3) -> Self {
        Self::new(position, Vec3::zeros())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationState {
    pub subject: SubjectState,
    pub airships: Vec<AirshipState>,
    pub time: f64,
}

impl FormationState {
    pub fn new(subject: SubjectState, airships: Vec<AirshipState>, time: f64) -> Result<Self> {
        let f = Self {
            subject,
            airships,
            time,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.airships.len()
    }

    pub fn is_empty(&self) -> bool {
        self.airships.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.airships.is_empty() {
            return Err(Error::Config("formation needs at least one airship".into()));
        }
        if self.subject.velocity.z != 0.0 {
            return Err(Error::Config("subject must move on the ground plane".into()));
        }
        self.airships.iter().try_for_each(AirshipState::validate)
    }
}

/// One airship's command for one control period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// ψ̇ [rad/s]
    pub yaw_rate: f64,
    /// Acceleration along the air-relative horizontal motion direction [m/s²].
    pub horiz_accel: f64,
    /// Vertical acceleration, NED sign [m/s²].
    pub vert_accel: f64,
}

impl ControlInput {
    pub fn new(yaw_rate: f64, horiz_accel: f64, vert_accel: f64) -> Self {
        Self {
            yaw_rate,
            horiz_accel,
            vert_accel,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.yaw_rate, self.horiz_accel, self.vert_accel]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Controls for every airship over the planning horizon, indexed `[airship][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub inputs: Vec<Vec<ControlInput>>,
}

impl ControlSequence {
    pub fn constant(airships: usize, horizon: usize, u: ControlInput) -> Self {
        Self {
            inputs: vec![vec![u; horizon]; airships],
        }
    }

    pub fn airships(&self) -> usize {
        self.inputs.len()
    }

    pub fn horizon(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn is_rectangular(&self) -> bool {
        let h = self.horizon();
        self.inputs.iter().all(|row| row.len() == h)
    }

    /// Flat decision vector, layout `[(airship * horizon + step) * 3 + channel]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.inputs.iter().flatten().flat_map(|u| u.as_array()).collect()
    }

    pub fn from_flat(airships: usize, horizon: usize, x: &[f64]) -> Self {
        assert_eq!(x.len(), airships * horizon * 3, "flat control vector has wrong length");
        let inputs = x
            .chunks_exact(3 * horizon)
            .map(|row| row.chunks_exact(3).map(|c| ControlInput::new(c[0], c[1], c[2])).collect())
            .collect();
        Self { inputs }
    }

    /// Drops the first step and repeats the last one.
    pub fn shifted(&self) -> Self {
        let inputs = self
            .inputs
            .iter()
            .map(|row| {
                let mut r: Vec<ControlInput> = row.iter().skip(1).copied().collect();
                if let Some(last) = row.last() {
                    r.push(*last);
                }
                r
            })
            .collect();
        Self { inputs }
    }

    pub fn first(&self) -> Vec<ControlInput> {
        self.inputs.iter().map(|row| row[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    /// Combined lift/drag coefficient [1/m].
    pub c_l: f64,
    pub g: f64,
    /// Fluid velocity in the world frame.
    pub wind: Vec3,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            c_l: 0.24,
            g: GRAVITY,
            wind: Vec3::zeros(),
        }
    }
}

impl PhysParams {
    pub fn with_wind(mut self, wind: Vec3) -> Self {
        self.wind = wind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_l > 0.0) || !(self.g > 0.0) || !self.wind.iter().all(|c| c.is_finite()) {
            return Err(Error::Config(format!("invalid physical parameters {self:?}")));
        }
        Ok(())
    }
}

/// Camera mounting relative to the body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    /// Rotation about body z; `+π/2` looks right.
    pub azimuth: f64,
    /// Rotation about the intermediate y axis; negative looks down.
    pub elevation: f64,
}

impl Default for CameraExtrinsics {
    fn default() -> Self {
        Self {
            azimuth: 82f64.to_radians(),
            elevation: (-30f64).to_radians(),
        }
    }
}

impl CameraExtrinsics {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth > -PI && self.azimuth <= PI) || !(self.elevation.abs() < PI / 2.0) {
            return Err(Error::Config(format!("invalid camera extrinsics {self:?}")));
        }
        Ok(())
    }

    /// Camera-to-body rotation `Rz(azimuth) * Ry(elevation)`.
    pub fn camera_to_body(&self) -> Mat3 {
        Orientation::new(0.0, self.elevation, self.azimuth).body_to_world()
    }

    /// +1 when the camera looks to the right of the nose, -1 to the left.
    pub fn side(&self) -> f64 {
        if self.azimuth >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    /// Horizontal airspeed band [m/s].
    pub v_min: f64,
    pub v_max: f64,
    /// Vertical airspeed bound [m/s].
    pub v_vmax: f64,
    pub yaw_rate_min: f64,
    pub yaw_rate_max: f64,
    /// Largest change of ψ̇ between consecutive control periods [rad/s].
    pub yaw_rate_step: f64,
    pub min_altitude: f64,
    pub min_separation: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            v_min: 0.5,
            v_max: 4.0,
            v_vmax: 1.5,
            yaw_rate_min: (-18f64).to_radians(),
            yaw_rate_max: 18f64.to_radians(),
            yaw_rate_step: 3f64.to_radians(),
            min_altitude: 2.0,
            min_separation: 5.0,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_min > 0.0
            && self.v_min < self.v_max
            && self.v_vmax > 0.0
            && self.yaw_rate_min < self.yaw_rate_max
            && self.yaw_rate_step > 0.0
            && self.min_altitude.is_finite()
            && self.min_separation >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid control limits {self:?}")));
        }
        Ok(())
    }
}

/// Velocity relative to the surrounding air.
pub fn air_relative_velocity(state: &AirshipState, params: &PhysParams) -> Vec3 {
    state.velocity - params.wind
}

pub fn horizontal_speed(v: &Vec3) -> f64 {
    v.x.hypot(v.y)
}

/// Direction of horizontal motion, `atan2(v_y, v_x)`.
pub fn course_angle(v_air: &Vec3) -> Result<f64> {
    let h = horizontal_speed(v_air);
    if h <= COURSE_EPSILON {
        return Err(Error::DegenerateVelocity(h));
    }
    Ok(wrap_angle(v_air.y.atan2(v_air.x)))
}
