//! Approximate airship kinematics and the discrete state transition.
//!
//! Within one control period the controls are held and the airship follows a
//! continuous velocity field: horizontal airspeed and vertical airspeed ramp
//! linearly, yaw advances at ψ̇, and the motion direction trails the yaw by
//! the lateral angle of attack `β = ψ̇ / (c_l v_h)`. Position is obtained by
//! integrating that field with classical RK4; the field only depends on time,
//! so splitting an interval into shorter steps reproduces the same motion up
//! to quadrature error.

use std::f64::consts::FRAC_PI_2;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::model::{
    air_relative_velocity, horizontal_speed, wrap_angle, AirshipState, ControlInput, ControlLimits, Orientation,
    PhysParams, SubjectState, Vec3, COURSE_EPSILON,
};

/// How the transition treats limit violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitMode {
    /// Reject violating states and controls.
    Strict,
    /// Saturate airspeeds at their limits.
    Clamp,
    /// Neither reject nor saturate; violations are priced by the objective.
    Penalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionConfig {
    pub dt: f64,
    pub substeps: usize,
    pub phys: PhysParams,
    pub limits: ControlLimits,
    pub mode: LimitMode,
    /// Model the lateral angle of attack; off is the `c_l → ∞` limit.
    pub aoa: bool,
    /// Couple pitch to the climb angle; off forces `θ = 0`.
    pub pitch: bool,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            dt: 1.25,
            substeps: 4,
            phys: PhysParams::default(),
            limits: ControlLimits::default(),
            mode: LimitMode::Clamp,
            aoa: true,
            pitch: true,
        }
    }
}

impl TransitionConfig {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_mode(mut self, mode: LimitMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config(format!("invalid transition dt={} substeps={}", self.dt, self.substeps)));
        }
        self.phys.validate()?;
        self.limits.validate()
    }
}

/// Lateral angle of attack `β ≈ ψ̇ / (c_l ‖v‖)`.
pub fn lateral_aoa(yaw_rate: f64, airspeed: f64, c_l: f64, v_min: f64) -> Result<f64> {
    if airspeed < v_min {
        return Err(Error::InsufficientAirspeed { airspeed, v_min });
    }
    Ok(yaw_rate / (c_l * airspeed))
}

/// Air-relative course `χ ≈ ψ − β`.
pub fn motion_direction(yaw: f64, yaw_rate: f64, airspeed: f64, c_l: f64, v_min: f64) -> Result<f64> {
    Ok(yaw - lateral_aoa(yaw_rate, airspeed, c_l, v_min)?)
}

/// Coordinated-turn roll `atan(χ̇ ‖v‖ / g)`.
pub fn roll_angle(turn_rate: f64, airspeed: f64, g: f64) -> f64 {
    (turn_rate * airspeed / g).atan()
}

/// Pitch from the air-relative climb angle, `atan(−v_z / v_h)` (NED: climbing is `v_z < 0`).
pub fn pitch_angle(v_z_air: f64, v_h_air: f64) -> Result<f64> {
    if v_h_air <= COURSE_EPSILON {
        return Err(Error::DegenerateVelocity(v_h_air));
    }
    Ok((-v_z_air / v_h_air).atan())
}

/// Height above the subject that puts it on the optical axis at horizontal distance `radius`:
/// `r · tan(φ_roll − φ_cam)`.
///
/// For a left-looking camera pass the negated roll.
pub fn required_altitude(radius: f64, roll: f64, cam_elevation: f64) -> Result<f64> {
    let depression = checked_depression(radius, roll, cam_elevation)?;
    Ok(radius * depression.tan())
}

/// Variant with the radius in the denominator, `tan(φ_roll − φ_cam) / r`.
/// Dimensionally inconsistent; kept for side-by-side comparison.
pub fn required_altitude_literal(radius: f64, roll: f64, cam_elevation: f64) -> Result<f64> {
    let depression = checked_depression(radius, roll, cam_elevation)?;
    Ok(depression.tan() / radius)
}

fn checked_depression(radius: f64, roll: f64, cam_elevation: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::Geometry(format!("radius must be positive, got {radius}")));
    }
    let d = roll - cam_elevation;
    if d.abs() >= FRAC_PI_2 {
        return Err(Error::Geometry(format!("line-of-sight angle {d} rad leaves (-π/2, π/2)")));
    }
    Ok(d)
}

pub fn propagate_subject(s: &SubjectState, dt: f64) -> SubjectState {
    SubjectState {
        position: s.position + s.velocity * dt,
        velocity: s.velocity,
    }
}

/// Airship state in the form the rollout differentiates through.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ShipVars<T> {
    pub p: [T; 3],
    /// Horizontal airspeed.
    pub vh: T,
    /// Vertical airspeed.
    pub vz: T,
    /// Air-relative course.
    pub chi: T,
    pub yaw: T,
    pub roll: T,
    pub pitch: T,
}

impl<T: Scalar> ShipVars<T> {
    pub fn from_state(s: &AirshipState, phys: &PhysParams) -> Self {
        let air = air_relative_velocity(s, phys);
        let vh = horizontal_speed(&air);
        let chi = if vh > COURSE_EPSILON { air.y.atan2(air.x) } else { s.orientation.yaw };
        ShipVars {
            p: [T::cst(s.position.x), T::cst(s.position.y), T::cst(s.position.z)],
            vh: T::cst(vh),
            vz: T::cst(air.z),
            chi: T::cst(chi),
            yaw: T::cst(s.orientation.yaw),
            roll: T::cst(s.orientation.roll),
            pitch: T::cst(s.orientation.pitch),
        }
    }
}

impl ShipVars<f64> {
    pub fn to_state(&self, phys: &PhysParams) -> AirshipState {
        AirshipState {
            position: Vec3::new(self.p[0], self.p[1], self.p[2]),
            velocity: Vec3::new(
                self.vh * self.chi.cos() + phys.wind.x,
                self.vh * self.chi.sin() + phys.wind.y,
                self.vz + phys.wind.z,
            ),
            orientation: Orientation::new(self.roll, self.pitch, wrap_angle(self.yaw)),
        }
    }
}

/// Linear ramp `v0 + a τ`; in clamp mode it may not leave the band further than where it started.
fn ramp<T: Scalar>(v0: T, accel: T, tau: f64, lo: f64, hi: f64, clamp: bool) -> T {
    let v = v0 + accel * tau;
    if clamp {
        let v0 = v0.val();
        v.clamp_c(lo.min(v0), hi.max(v0))
    } else {
        v
    }
}

/// One transition without limit checks. Used by rollouts with `f64` or tape variables.
pub(crate) fn step_vars<T: Scalar>(s: &ShipVars<T>, u: [T; 3], cfg: &TransitionConfig) -> ShipVars<T> {
    let [yaw_rate, ah, az] = u;
    let lim = &cfg.limits;
    let phys = &cfg.phys;
    let clamp = cfg.mode == LimitMode::Clamp;
    let vh_at = |tau: f64| ramp(s.vh, ah, tau, lim.v_min, lim.v_max, clamp);
    let vz_at = |tau: f64| ramp(s.vz, az, tau, -lim.v_vmax, lim.v_vmax, clamp);
    // airspeed is floored at v_min inside β and θ where the approximations are undefined
    let beta_at = |vh: T| {
        if cfg.aoa {
            yaw_rate / (vh.max_c(lim.v_min) * phys.c_l)
        } else {
            T::cst(0.0)
        }
    };
    let field = |tau: f64| -> ([T; 3], T, T, T) {
        let vh = vh_at(tau);
        let vz = vz_at(tau);
        let chi = s.yaw + yaw_rate * tau - beta_at(vh);
        let v = [
            vh * chi.cos() + phys.wind.x,
            vh * chi.sin() + phys.wind.y,
            vz + phys.wind.z,
        ];
        (v, vh, vz, chi)
    };

    // The field does not depend on position, so the two RK4 midpoint stages
    // coincide and the last stage of a substep is the first of the next.
    let h = cfg.dt / cfg.substeps as f64;
    let mut p = s.p;
    let (mut k1, ..) = field(0.0);
    let mut end = (k1, s.vh, s.vz, s.chi);
    for i in 0..cfg.substeps {
        let t0 = i as f64 * h;
        let (k2, ..) = field(t0 + 0.5 * h);
        end = field(t0 + h);
        let k4 = end.0;
        for c in 0..3 {
            p[c] += (k1[c] + k2[c] * 4.0 + k4[c]) * (h / 6.0);
        }
        k1 = k4;
    }
    let (_, vh, vz, chi) = end;

    let roll = (yaw_rate * vh / phys.g).atan();
    let pitch = if cfg.pitch {
        (-vz / vh.max_c(lim.v_min)).atan()
    } else {
        T::cst(0.0)
    };
    ShipVars {
        p,
        vh,
        vz,
        chi,
        yaw: s.yaw + yaw_rate * cfg.dt,
        roll,
        pitch,
    }
}

const LIMIT_TOL: f64 = 1e-9;

fn check_limits(state: &AirshipState, u: Option<&ControlInput>, cfg: &TransitionConfig, when: &str) -> Result<()> {
    let lim = &cfg.limits;
    let air = air_relative_velocity(state, &cfg.phys);
    let vh = horizontal_speed(&air);
    if vh < lim.v_min - LIMIT_TOL || vh > lim.v_max + LIMIT_TOL {
        return Err(Error::LimitViolation(format!("{when}: horizontal airspeed {vh} outside [{}, {}]", lim.v_min, lim.v_max)));
    }
    if air.z.abs() > lim.v_vmax + LIMIT_TOL {
        return Err(Error::LimitViolation(format!("{when}: vertical airspeed {} exceeds {}", air.z, lim.v_vmax)));
    }
    if let Some(u) = u {
        if u.yaw_rate < lim.yaw_rate_min - LIMIT_TOL || u.yaw_rate > lim.yaw_rate_max + LIMIT_TOL {
            return Err(Error::LimitViolation(format!("yaw rate {} outside limits", u.yaw_rate)));
        }
    }
    Ok(())
}

/// Advances one airship by `cfg.dt` under a held control.
pub fn step(state: &AirshipState, u: &ControlInput, cfg: &TransitionConfig) -> Result<AirshipState> {
    cfg.validate()?;
    let finite = u.as_array().iter().all(|c| c.is_finite());
    if !finite {
        return Err(Error::LimitViolation(format!("non-finite control {u:?}")));
    }
    if cfg.mode == LimitMode::Strict {
        check_limits(state, Some(u), cfg, "before step")?;
    }
    let s = ShipVars::<f64>::from_state(state, &cfg.phys);
    let next = step_vars(&s, u.as_array(), cfg).to_state(&cfg.phys);
    if cfg.mode == LimitMode::Strict {
        check_limits(&next, None, cfg, "after step")?;
    }
    Ok(next)
}
