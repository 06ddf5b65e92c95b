//! Long-horizon open-loop studies of the optimised orbit shape.
//!
//! Every study works in a frame where the subject starts at the origin and
//! moves along `−x`, and the camera looks to the right of the nose.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::dynamics::{LimitMode, TransitionConfig};
use crate::error::{Error, Result};
use crate::model::{AirshipState, CameraExtrinsics, ControlLimits, FormationState, Orientation, PhysParams, SubjectState, Vec3};
use crate::objective::{centering_cost, CostModel, CostWeights};
use crate::orbits::{orbit_radius, OrbitSpec};
use crate::solver::{solve, SolveConfig, SolveResult, YawRateMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Idealised kinematics around a moving subject; converges on the minimum-speed orbit.
    MinSpeed,
    /// Side slip with a perpendicular camera: outward spiral.
    SlipAbeam,
    /// Side slip with the camera turned to compensate it.
    SlipCompensated,
    /// Pitch coupled to climb rate.
    Pitch,
    /// Three airships with free yaw rates spreading out around the subject.
    Spread,
}

impl Study {
    pub const ALL: [Study; 5] = [Study::MinSpeed, Study::SlipAbeam, Study::SlipCompensated, Study::Pitch, Study::Spread];

    pub fn name(&self) -> &'static str {
        match self {
            Study::MinSpeed => "min-speed",
            Study::SlipAbeam => "slip-abeam",
            Study::SlipCompensated => "slip-compensated",
            Study::Pitch => "pitch",
            Study::Spread => "spread",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown study '{s}', expected one of min-speed, slip-abeam, slip-compensated, pitch, spread")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySetup {
    pub study: Study,
    pub initial: FormationState,
    pub transition: TransitionConfig,
    pub model: CostModel,
    pub solve: SolveConfig,
    /// Analytic orbit the result is compared against, with its phase at `t = 0`.
    pub reference: Option<(OrbitSpec, f64)>,
}

/// Airship on the right-looking orbit phase `psi` at horizontal distance `radius`,
/// at the height that puts the subject on a camera tilted down by `depression`.
fn on_phase(subject: Vec3, psi: f64, radius: f64, depression: f64, speed: f64, yaw_rate: f64, phys: &PhysParams, aoa: bool) -> AirshipState {
    let rel = Vec3::new(radius * psi.sin(), -radius * psi.cos(), -radius * depression.tan());
    let beta = if aoa { yaw_rate / (phys.c_l * speed) } else { 0.0 };
    let chi = psi - beta;
    let v = Vec3::new(speed * chi.cos(), speed * chi.sin(), 0.0) + phys.wind;
    let roll = (yaw_rate * speed / phys.g).atan();
    AirshipState::new(subject + rel, v, Orientation::new(roll, 0.0, psi))
}

fn single(
    study: Study,
    yaw_rate: f64,
    subject_speed: f64,
    limits: ControlLimits,
    c_l: f64,
    aoa: bool,
    pitch: bool,
    azimuth_deg: f64,
    start: (f64, f64, f64),
    orbits: f64,
    reference: OrbitSpec,
) -> StudySetup {
    let phys = PhysParams {
        c_l,
        ..PhysParams::default()
    };
    let camera = CameraExtrinsics::new(azimuth_deg.to_radians(), -PI / 4.0);
    let (psi0, radius, speed) = start;
    let ship = on_phase(Vec3::zeros(), psi0, radius, PI / 4.0, speed, yaw_rate, &phys, aoa);
    let subject = SubjectState::new(Vec3::zeros(), Vec3::new(-subject_speed, 0.0, 0.0));
    let transition = TransitionConfig {
        phys,
        limits,
        mode: LimitMode::Penalized,
        aoa,
        pitch,
        ..TransitionConfig::default()
    };
    let horizon = (orbits * TAU / yaw_rate / transition.dt).ceil() as usize;
    StudySetup {
        study,
        initial: FormationState {
            subject,
            airships: vec![ship],
            time: 0.0,
        },
        transition,
        model: CostModel {
            weights: CostWeights {
                k_d: 0.0,
                ..CostWeights::default()
            },
            camera,
            ..CostModel::default()
        },
        solve: SolveConfig {
            horizon,
            max_iterations: 3000,
            yaw_rate: YawRateMode::Fixed(vec![yaw_rate]),
            ..SolveConfig::default()
        },
        reference: Some((reference, psi0)),
    }
}

/// Limits and rates of the side-slip studies: a narrow airspeed band at a
/// yaw rate where the slip angle stays between 2.5° and 3.1° on the outermost orbit.
const SLIP_YAW_RATE: f64 = 0.145;
const SLIP_SUBJECT_SPEED: f64 = 0.15;
const SLIP_C_L: f64 = 0.8;

fn slip_limits() -> ControlLimits {
    ControlLimits {
        v_min: 3.0,
        v_max: 4.0,
        ..ControlLimits::default()
    }
}

pub fn setup(study: Study) -> StudySetup {
    let limits = ControlLimits::default();
    match study {
        Study::MinSpeed | Study::Pitch => {
            let (rate, vs) = (0.1, 0.5);
            let r0 = (limits.v_min + 2.0 * vs) / rate;
            let spec = OrbitSpec::new(r0, rate, vs).expect("valid orbit");
            // closest point of the minimum-speed orbit, flown at twice its airspeed
            let start = (0.0, r0 - vs / rate, 2.0 * limits.v_min);
            single(study, rate, vs, limits, PhysParams::default().c_l, false, study == Study::Pitch, 90.0, start, 2.2, spec)
        }
        Study::SlipAbeam | Study::SlipCompensated => {
            let lim = slip_limits();
            let r_min = (lim.v_min + 2.0 * SLIP_SUBJECT_SPEED) / SLIP_YAW_RATE;
            let r_max = (lim.v_max - 2.0 * SLIP_SUBJECT_SPEED) / SLIP_YAW_RATE;
            let spec = OrbitSpec::new(r_max, SLIP_YAW_RATE, SLIP_SUBJECT_SPEED).expect("valid orbit");
            let azimuth = if study == Study::SlipAbeam { 90.0 } else { 87.0 };
            let start = (FRAC_PI_2, r_min, SLIP_YAW_RATE * r_min);
            single(study, SLIP_YAW_RATE, SLIP_SUBJECT_SPEED, lim, SLIP_C_L, true, false, azimuth, start, 4.0, spec)
        }
        Study::Spread => three_airships(),
    }
}

fn three_airships() -> StudySetup {
    let phys = PhysParams {
        c_l: SLIP_C_L,
        ..PhysParams::default()
    };
    let camera = CameraExtrinsics::new(87f64.to_radians(), -PI / 4.0);
    let weights = CostWeights::default();
    let radius = weights.d_c * (PI / 4.0).cos();
    let speed = 2.0;
    let rate = speed / radius;
    // bunched on one side of the subject
    let ships = [0.0f64, 25.0, 50.0]
        .iter()
        .map(|deg| on_phase(Vec3::zeros(), FRAC_PI_2 + deg.to_radians(), radius, PI / 4.0, speed, rate, &phys, true))
        .collect();
    let transition = TransitionConfig {
        phys,
        mode: LimitMode::Penalized,
        ..TransitionConfig::default()
    };
    StudySetup {
        study: Study::Spread,
        initial: FormationState {
            subject: SubjectState::new(Vec3::zeros(), Vec3::new(-0.3, 0.0, 0.0)),
            airships: ships,
            time: 0.0,
        },
        transition,
        model: CostModel {
            weights,
            camera,
            ..CostModel::default()
        },
        solve: SolveConfig {
            horizon: 64,
            max_iterations: 3000,
            ..SolveConfig::default()
        },
        reference: None,
    }
}

/// One airship at one predicted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudySample {
    pub step: usize,
    pub time: f64,
    pub airship: usize,
    /// Position relative to the subject.
    pub relative: Vec3,
    pub radius: f64,
    /// Horizontal airspeed.
    pub airspeed: f64,
    /// Side-slip angle ψ̇ / (c_l v_h); zero when not modelled.
    pub slip: f64,
    pub centering: f64,
    /// Analytic radius at the same orbit phase, when a reference exists.
    pub reference_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub setup: StudySetup,
    pub result: SolveResult,
    /// Samples ordered by step, then airship.
    pub samples: Vec<StudySample>,
}

pub fn run(study: Study) -> Result<StudyReport> {
    run_setup(setup(study))
}

pub fn run_setup(setup: StudySetup) -> Result<StudyReport> {
    let result = solve(&setup.initial, None, &setup.transition, &setup.model, &setup.solve)?;
    let samples = sample(&setup, &result);
    Ok(StudyReport { setup, result, samples })
}

fn sample(setup: &StudySetup, result: &SolveResult) -> Vec<StudySample> {
    let t = &setup.transition;
    let mut out = Vec::new();
    for (k, state) in result.cost.states.iter().enumerate() {
        for (m, a) in state.airships.iter().enumerate() {
            let rel = a.position - state.subject.position;
            let air = a.velocity - t.phys.wind;
            let vh = air.xy().norm();
            let rate = result.controls.inputs[m][k].yaw_rate;
            let slip = if t.aoa { rate / (t.phys.c_l * vh.max(t.limits.v_min)) } else { 0.0 };
            let reference_radius = setup.reference.map(|(spec, psi0)| orbit_radius(&spec, psi0 + spec.turn_rate() * state.time));
            out.push(StudySample {
                step: k + 1,
                time: state.time,
                airship: m,
                relative: rel,
                radius: rel.xy().norm(),
                airspeed: vh,
                slip,
                centering: centering_cost(&state.subject.position, a, &setup.model.camera, &setup.model.weights),
                reference_radius,
            });
        }
    }
    out
}

impl StudyReport {
    /// Steps in one orbit at the mean commanded yaw rate.
    pub fn orbit_steps(&self) -> usize {
        let rates: Vec<f64> = self.result.controls.inputs.iter().flatten().map(|u| u.yaw_rate.abs()).collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        ((TAU / mean / self.setup.transition.dt).round() as usize).clamp(1, self.setup.solve.horizon)
    }

    /// Samples of the last full orbit.
    pub fn final_orbit(&self) -> Vec<StudySample> {
        let h = self.setup.solve.horizon;
        let from = h + 1 - self.orbit_steps();
        self.samples.iter().filter(|s| s.step >= from).copied().collect()
    }

    pub fn mean_centering(samples: &[StudySample]) -> f64 {
        samples.iter().map(|s| s.centering).sum::<f64>() / samples.len().max(1) as f64
    }

    /// Largest relative deviation from the analytic radius.
    pub fn radius_error(samples: &[StudySample]) -> Option<f64> {
        samples
            .iter()
            .map(|s| s.reference_radius.map(|r| (s.radius - r).abs() / r))
            .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)))
    }

    pub fn radius_range(samples: &[StudySample]) -> (f64, f64) {
        samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.radius), hi.max(s.radius)))
    }

    pub fn slip_range(samples: &[StudySample]) -> (f64, f64) {
        samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.slip), hi.max(s.slip)))
    }

    /// Pairwise angles between horizontal bearings from the subject at each step [rad].
    pub fn bearing_gaps(&self) -> Vec<Vec<f64>> {
        let n = self.setup.initial.len();
        self.samples
            .chunks(n)
            .map(|group| {
                let mut gaps = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (group[i].relative, group[j].relative);
                        let cos = (a.x * b.x + a.y * b.y) / (a.xy().norm() * b.xy().norm());
                        gaps.push(cos.clamp(-1.0, 1.0).acos());
                    }
                }
                gaps
            })
            .collect()
    }

    /// Orbits flown (mean bearing swept around the subject) before every
    /// pairwise bearing settles inside `target ± tol` for the rest of the horizon.
    pub fn settling_orbits(&self, target: f64, tol: f64) -> Option<f64> {
        let gaps = self.bearing_gaps();
        let ok: Vec<bool> = gaps.iter().map(|g| g.iter().all(|a| (a - target).abs() <= tol)).collect();
        let last_bad = ok.iter().rposition(|o| !o);
        let settle = match last_bad {
            None => 0,
            Some(i) if i + 1 < ok.len() => i + 1,
            Some(_) => return None,
        };
        let n = self.setup.initial.len();
        let bearing = |s: &StudySample| s.relative.y.atan2(s.relative.x);
        let mut swept = 0.0;
        for m in 0..n {
            let mut prev = {
                let a0 = self.setup.initial.airships[m].position - self.setup.initial.subject.position;
                a0.y.atan2(a0.x)
            };
            for s in self.samples.iter().filter(|s| s.airship == m).take(settle + 1) {
                let b = bearing(s);
                swept += crate::model::wrap_angle(b - prev).abs();
                prev = b;
            }
        }
        Some(swept / n as f64 / TAU)
    }
}
