//! Camera-centering and formation costs, and the full horizon objective.
//!
//! The camera frame has `x` along the optical axis, `y` to the image right
//! and `z` to the image bottom. A subject is centred when it lies on the
//! optical axis at distance `d_c`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::autodiff::Scalar;
use crate::dynamics::{step_vars, ShipVars, TransitionConfig};
use crate::error::{Error, Result};
use crate::model::{AirshipState, CameraExtrinsics, ControlSequence, FormationState, Mat3, Vec3};

/// Horizontal distance below which a bearing is undefined [m].
pub const BEARING_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub k_c: f64,
    pub k_f: f64,
    pub k_d: f64,
    /// Desired camera-to-subject distance [m].
    pub d_c: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            k_c: 1.0,
            k_f: 100.0,
            k_d: 0.6,
            d_c: 15.0,
        }
    }
}

/// Weights of the one-sided quadratic constraint penalties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyWeights {
    pub speed: f64,
    pub vertical_speed: f64,
    pub altitude: f64,
    pub separation: f64,
    pub obstacle: f64,
    pub yaw_rate_step: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            speed: 1e3,
            vertical_speed: 1e3,
            altitude: 5e3,
            separation: 1e3,
            obstacle: 1e3,
            yaw_rate_step: 1e3,
        }
    }
}

impl PenaltyWeights {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            speed: self.speed * s,
            vertical_speed: self.vertical_speed * s,
            altitude: self.altitude * s,
            separation: self.separation * s,
            obstacle: self.obstacle * s,
            yaw_rate_step: self.yaw_rate_step * s,
        }
    }
}

/// Keep-out sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub weights: CostWeights,
    pub penalties: PenaltyWeights,
    pub camera: CameraExtrinsics,
    pub obstacles: Vec<Obstacle>,
    /// Soft limit on `|ψ̇_k − ψ̇_{k−1}|` between consecutive horizon steps.
    pub yaw_rate_step: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            penalties: PenaltyWeights::default(),
            camera: CameraExtrinsics::default(),
            obstacles: Vec::new(),
            yaw_rate_step: None,
        }
    }
}

/// Cost terms of one airship at one predicted step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCost {
    pub centering: f64,
    pub formation: f64,
    pub speed: f64,
    pub vertical_speed: f64,
    pub altitude: f64,
    pub separation: f64,
    pub obstacle: f64,
    pub yaw_rate_step: f64,
}

impl StepCost {
    pub fn total(&self) -> f64 {
        self.centering
            + self.formation
            + self.speed
            + self.vertical_speed
            + self.altitude
            + self.separation
            + self.obstacle
            + self.yaw_rate_step
    }

    pub fn penalty(&self) -> f64 {
        self.total() - self.centering - self.formation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    /// Weighted terms indexed `[airship][step]`.
    pub terms: Vec<Vec<StepCost>>,
    pub total: f64,
    /// Predicted formation after each step.
    pub states: Vec<FormationState>,
}

impl CostBreakdown {
    pub fn centering(&self) -> f64 {
        self.terms.iter().flatten().map(|t| t.centering).sum()
    }

    pub fn formation(&self) -> f64 {
        self.terms.iter().flatten().map(|t| t.formation).sum()
    }

    pub fn penalty(&self) -> f64 {
        self.terms.iter().flatten().map(StepCost::penalty).sum()
    }
}

fn mat_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// World-frame offset `d` expressed in the camera frame. `cam_t` is the
/// transposed camera-to-body rotation.
pub(crate) fn to_camera<T: Scalar>(d: [T; 3], roll: T, pitch: T, yaw: T, cam_t: &[[f64; 3]; 3]) -> [T; 3] {
    let (sy, cy) = (yaw.sin(), yaw.cos());
    let e0 = d[0] * cy + d[1] * sy;
    let e1 = d[1] * cy - d[0] * sy;
    let e2 = d[2];
    let (sp, cp) = (pitch.sin(), pitch.cos());
    let f0 = e0 * cp - e2 * sp;
    let f2 = e0 * sp + e2 * cp;
    let (sr, cr) = (roll.sin(), roll.cos());
    let b = [f0, e1 * cr + f2 * sr, f2 * cr - e1 * sr];
    let row = |r: &[f64; 3]| b[0] * r[0] + b[1] * r[1] + b[2] * r[2];
    [row(&cam_t[0]), row(&cam_t[1]), row(&cam_t[2])]
}

/// Subject position in the airship's camera frame.
pub fn world_to_camera(subject: &Vec3, airship: &AirshipState, camera: &CameraExtrinsics) -> Vec3 {
    let world_to_cam = (airship.orientation.body_to_world() * camera.camera_to_body()).transpose();
    world_to_cam * (subject - airship.position)
}

pub(crate) fn centering_terms<T: Scalar>(c: [T; 3], w: &CostWeights) -> T {
    ((c[0] - w.d_c) * -w.k_d).sq() + c[1].sq() + c[2].sq()
}

/// Unweighted centering error `(k_d (d_c − x))² + y² + z²` in the camera frame.
pub fn centering_cost(subject: &Vec3, airship: &AirshipState, camera: &CameraExtrinsics, weights: &CostWeights) -> f64 {
    let c = world_to_camera(subject, airship, camera);
    centering_terms([c.x, c.y, c.z], weights)
}

/// Penalty on the angle between two unit bearings for an `n`-airship formation.
fn pair_term<T: Scalar>(a: [T; 2], b: [T; 2], n: usize) -> T {
    let cos = (a[0] * b[0] + a[1] * b[1]).clamp_c(-1.0, 1.0);
    let angle = cos.acos();
    if n == 2 {
        (angle * -1.0 + FRAC_PI_2).sq()
    } else {
        (angle * -1.0 + 2.0 * PI / n as f64).relu().sq()
    }
}

/// Unit horizontal bearings, floored at `BEARING_EPSILON` so rollouts stay finite.
pub(crate) fn formation_terms<T: Scalar>(rel: &[[T; 2]]) -> T {
    let n = rel.len();
    let mut total = T::cst(0.0);
    if n < 2 {
        return total;
    }
    let units: Vec<[T; 2]> = rel
        .iter()
        .map(|r| {
            let norm = (r[0].sq() + r[1].sq()).sqrt().max_c(BEARING_EPSILON);
            [r[0] / norm, r[1] / norm]
        })
        .collect();
    for m in 0..n {
        for k in m + 1..n {
            total += pair_term(units[m], units[k], n);
        }
    }
    total
}

/// Unweighted formation cost on horizontal bearings from the subject.
///
/// Two airships are pushed towards perpendicular bearings; three or more
/// are penalised only when a pair is closer than `2π/N`.
pub fn formation_cost(state: &FormationState) -> Result<f64> {
    let rel = horizontal_offsets(state)?;
    Ok(formation_terms(&rel))
}

fn horizontal_offsets(state: &FormationState) -> Result<Vec<[f64; 2]>> {
    state
        .airships
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let d = a.position - state.subject.position;
            if d.xy().norm() < BEARING_EPSILON {
                Err(Error::DegenerateGeometry { airship: i })
            } else {
                Ok([d.x, d.y])
            }
        })
        .collect()
}

/// Evaluation context shared by the generic rollout.
pub(crate) struct Rollout<'a> {
    pub initial: &'a FormationState,
    pub horizon: usize,
    pub transition: &'a TransitionConfig,
    pub model: &'a CostModel,
    pub cam_t: [[f64; 3]; 3],
}

impl<'a> Rollout<'a> {
    pub fn new(initial: &'a FormationState, horizon: usize, transition: &'a TransitionConfig, model: &'a CostModel) -> Self {
        Self {
            initial,
            horizon,
            transition,
            model,
            cam_t: mat_rows(&model.camera.camera_to_body().transpose()),
        }
    }

    /// Cost of the flat decision vector `x`. When `record` is given the
    /// weighted terms and the predicted ships are written into it.
    pub fn cost<T: Scalar>(&self, x: &[T], mut record: Option<&mut Record>) -> T {
        let n = self.initial.len();
        let h = self.horizon;
        let w = &self.model.weights;
        let pw = &self.model.penalties;
        let lim = &self.transition.limits;
        let phys = &self.transition.phys;
        let mut ships: Vec<ShipVars<T>> = self.initial.airships.iter().map(|a| ShipVars::from_state(a, phys)).collect();
        let mut subject = self.initial.subject.position;
        let mut total = T::cst(0.0);
        let u = |m: usize, k: usize, c: usize| x[(m * h + k) * 3 + c];
        let zero = T::cst(0.0);

        for k in 0..h {
            for (m, s) in ships.iter_mut().enumerate() {
                *s = step_vars(s, [u(m, k, 0), u(m, k, 1), u(m, k, 2)], self.transition);
            }
            subject += self.initial.subject.velocity * self.transition.dt;

            let mut terms = vec![[zero; 8]; n];
            for (m, s) in ships.iter().enumerate() {
                let d = [-s.p[0] + subject.x, -s.p[1] + subject.y, -s.p[2] + subject.z];
                let c = to_camera(d, s.roll, s.pitch, s.yaw, &self.cam_t);
                terms[m][0] = centering_terms(c, w) * w.k_c;
                terms[m][2] = ((s.vh * -1.0 + lim.v_min).relu().sq() + (s.vh - lim.v_max).relu().sq()) * pw.speed;
                terms[m][3] = ((s.vz - lim.v_vmax).relu().sq() + (s.vz * -1.0 - lim.v_vmax).relu().sq()) * pw.vertical_speed;
                // altitude is -z
                terms[m][4] = (s.p[2] + lim.min_altitude).relu().sq() * pw.altitude;
                let mut obs = zero;
                for o in &self.model.obstacles {
                    let dist = ((s.p[0] - o.center.x).sq() + (s.p[1] - o.center.y).sq() + (s.p[2] - o.center.z).sq()).sqrt();
                    obs += (dist * -1.0 + o.radius).relu().sq();
                }
                terms[m][6] = obs * pw.obstacle;
                if let (Some(limit), true) = (self.model.yaw_rate_step, k > 0) {
                    let jump = u(m, k, 0) - u(m, k - 1, 0);
                    terms[m][7] = ((jump - limit).relu().sq() + (jump * -1.0 - limit).relu().sq()) * pw.yaw_rate_step;
                }
            }
            if n > 1 {
                let rel: Vec<[T; 2]> = ships.iter().map(|s| [s.p[0] - subject.x, s.p[1] - subject.y]).collect();
                let f = formation_terms(&rel) * w.k_f;
                // shared terms are split evenly between the airships involved
                let share = f / n as f64;
                for t in terms.iter_mut() {
                    t[1] = share;
                }
                for a in 0..n {
                    for b in a + 1..n {
                        let (p, q) = (&ships[a].p, &ships[b].p);
                        let dist = ((p[0] - q[0]).sq() + (p[1] - q[1]).sq() + (p[2] - q[2]).sq()).sqrt();
                        let pen = (dist * -1.0 + lim.min_separation).relu().sq() * (0.5 * pw.separation);
                        terms[a][5] += pen;
                        terms[b][5] += pen;
                    }
                }
            }
            for t in &terms {
                for v in t {
                    total += *v;
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                for (m, t) in terms.iter().enumerate() {
                    rec.terms[m].push(StepCost {
                        centering: t[0].val(),
                        formation: t[1].val(),
                        speed: t[2].val(),
                        vertical_speed: t[3].val(),
                        altitude: t[4].val(),
                        separation: t[5].val(),
                        obstacle: t[6].val(),
                        yaw_rate_step: t[7].val(),
                    });
                }
                rec.ships.push(ships.iter().map(|s| s.snapshot()).collect());
            }
        }
        total
    }
}

#[derive(Debug, Default)]
pub(crate) struct Record {
    pub terms: Vec<Vec<StepCost>>,
    pub ships: Vec<Vec<ShipVars<f64>>>,
}

impl<T: Scalar> ShipVars<T> {
    fn snapshot(&self) -> ShipVars<f64> {
        ShipVars {
            p: [self.p[0].val(), self.p[1].val(), self.p[2].val()],
            vh: self.vh.val(),
            vz: self.vz.val(),
            chi: self.chi.val(),
            yaw: self.yaw.val(),
            roll: self.roll.val(),
            pitch: self.pitch.val(),
        }
    }
}

pub(crate) fn check_dimensions(initial: &FormationState, controls: &ControlSequence) -> Result<()> {
    if controls.airships() != initial.len() || !controls.is_rectangular() || controls.horizon() == 0 {
        return Err(Error::Dimension(format!(
            "{} airships but control sequence has {} rows of horizon {}",
            initial.len(),
            controls.airships(),
            controls.horizon()
        )));
    }
    Ok(())
}

/// Weighted cost of applying `controls` from `initial`, with per-term detail.
pub fn trajectory_cost(
    initial: &FormationState,
    controls: &ControlSequence,
    transition: &TransitionConfig,
    model: &CostModel,
) -> Result<CostBreakdown> {
    check_dimensions(initial, controls)?;
    initial.validate()?;
    transition.validate()?;
    if !(model.weights.d_c > 0.0) || [model.weights.k_c, model.weights.k_f, model.weights.k_d].iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config(format!("invalid cost weights {:?}", model.weights)));
    }
    let h = controls.horizon();
    let rollout = Rollout::new(initial, h, transition, model);
    let mut rec = Record {
        terms: vec![Vec::with_capacity(h); initial.len()],
        ships: Vec::with_capacity(h),
    };
    let total = rollout.cost(&controls.to_flat(), Some(&mut rec));
    let states = predicted_states(initial, &rec.ships, transition);
    Ok(CostBreakdown {
        terms: rec.terms,
        total,
        states,
    })
}

pub(crate) fn predicted_states(initial: &FormationState, ships: &[Vec<ShipVars<f64>>], transition: &TransitionConfig) -> Vec<FormationState> {
    let mut subject = initial.subject;
    ships
        .iter()
        .enumerate()
        .map(|(k, row)| {
            subject = crate::dynamics::propagate_subject(&subject, transition.dt);
            FormationState {
                subject,
                airships: row.iter().map(|s| s.to_state(&transition.phys)).collect(),
                time: initial.time + (k + 1) as f64 * transition.dt,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient;
    use crate::dynamics::{step, LimitMode};
    use crate::model::{ControlInput, Orientation, SubjectState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ship_at(p: Vec3, yaw: f64) -> AirshipState {
        AirshipState::new(p, Vec3::new(2.0 * yaw.cos(), 2.0 * yaw.sin(), 0.0), Orientation::from_yaw(yaw))
    }

    fn formation(positions: &[Vec3]) -> FormationState {
        let ships = positions.iter().map(|p| ship_at(*p, 0.0)).collect();
        FormationState::new(SubjectState::stationary(Vec3::zeros()), ships, 0.0).unwrap()
    }

    /// Explicit rotation-matrix oracle, independent of the factored rotation used by the rollout.
    fn oracle_camera(subject: Vec3, a: &AirshipState, cam: &CameraExtrinsics) -> Vec3 {
        let rz = |t: f64| Mat3::new(t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0);
        let ry = |t: f64| Mat3::new(t.cos(), 0.0, t.sin(), 0.0, 1.0, 0.0, -t.sin(), 0.0, t.cos());
        let rx = |t: f64| Mat3::new(1.0, 0.0, 0.0, 0.0, t.cos(), -t.sin(), 0.0, t.sin(), t.cos());
        let o = a.orientation;
        let full = rz(o.yaw) * ry(o.pitch) * rx(o.roll) * rz(cam.azimuth) * ry(cam.elevation);
        full.transpose() * (subject - a.position)
    }

    #[test]
    fn centred_subject_at_design_distance_costs_nothing() {
        // camera looks right and 45° down from a north-facing ship
        let cam = CameraExtrinsics::new(FRAC_PI_2, -PI / 4.0);
        let w = CostWeights::default();
        let h = 15.0 / 2f64.sqrt();
        let a = ship_at(Vec3::new(0.0, -h, -h), 0.0);
        let c = world_to_camera(&Vec3::zeros(), &a, &cam);
        assert_relative_eq!(c, Vec3::new(15.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(centering_cost(&Vec3::zeros(), &a, &cam, &w).abs() < 1e-20);
    }

    #[test]
    fn lateral_offset_costs_its_square() {
        let cam = CameraExtrinsics::new(FRAC_PI_2, -PI / 4.0);
        let w = CostWeights::default();
        let h = 15.0 / 2f64.sqrt();
        // moving the subject north by 1 m puts it 1 m to the image left (negative y)
        let a = ship_at(Vec3::new(0.0, -h, -h), 0.0);
        let c = world_to_camera(&Vec3::new(1.0, 0.0, 0.0), &a, &cam);
        assert_relative_eq!(c.y, -1.0, epsilon = 1e-12);
        assert_relative_eq!(centering_cost(&Vec3::new(1.0, 0.0, 0.0), &a, &cam, &w), 1.0, epsilon = 1e-12);
        // distance error is scaled by k_d
        let far = ship_at(Vec3::new(0.0, -2.0 * h, -2.0 * h), 0.0);
        assert_relative_eq!(centering_cost(&Vec3::zeros(), &far, &cam, &w), (0.6f64 * 15.0).powi(2), epsilon = 1e-9);
        let free = CostWeights { k_d: 0.0, ..w };
        assert!(centering_cost(&Vec3::zeros(), &far, &cam, &free) < 1e-18);
    }

    #[test]
    fn camera_transform_matches_matrix_oracle() {
        let cam = CameraExtrinsics::default();
        let a = AirshipState::new(Vec3::new(3.0, -4.0, -9.0), Vec3::new(1.0, 1.0, 0.0), Orientation::new(0.12, -0.2, 2.3));
        let s = Vec3::new(-1.5, 2.0, 0.0);
        let expect = oracle_camera(s, &a, &cam);
        assert_relative_eq!(world_to_camera(&s, &a, &cam), expect, epsilon = 1e-12);
        let cam_t = mat_rows(&cam.camera_to_body().transpose());
        let d = s - a.position;
        let o = a.orientation;
        let g = to_camera([d.x, d.y, d.z], o.roll, o.pitch, o.yaw, &cam_t);
        assert_relative_eq!(Vec3::new(g[0], g[1], g[2]), expect, epsilon = 1e-12);
    }

    #[test]
    fn formation_examples() {
        assert_eq!(formation_cost(&formation(&[Vec3::new(10.0, 0.0, -5.0)])).unwrap(), 0.0);
        let perpendicular = formation(&[Vec3::new(10.0, 0.0, -5.0), Vec3::new(0.0, 7.0, -5.0)]);
        assert!(formation_cost(&perpendicular).unwrap() < 1e-20);
        let coincident = formation(&[Vec3::new(10.0, 0.0, -5.0), Vec3::new(4.0, 0.0, -9.0)]);
        assert_relative_eq!(formation_cost(&coincident).unwrap(), PI * PI / 4.0, epsilon = 1e-6);
        let opposite = formation(&[Vec3::new(10.0, 0.0, -5.0), Vec3::new(-3.0, 0.0, -5.0)]);
        assert_relative_eq!(formation_cost(&opposite).unwrap(), PI * PI / 4.0, epsilon = 1e-12);
        let ring = |offset: f64| -> Vec<Vec3> {
            (0..3).map(|i| {
                let a = offset + i as f64 * 2.0 * PI / 3.0;
                Vec3::new(12.0 * a.cos(), 12.0 * a.sin(), -6.0)
            }).collect()
        };
        assert!(formation_cost(&formation(&ring(0.3))).unwrap() < 1e-12);
        let bunched = formation(&[Vec3::new(10.0, 0.0, -5.0), Vec3::new(0.0, 10.0, -5.0), Vec3::new(-10.0, 0.0, -5.0)]);
        // pairs at 90°, 90°, 180° against a 120° threshold
        let gap = 2.0 * PI / 3.0 - FRAC_PI_2;
        assert_relative_eq!(formation_cost(&bunched).unwrap(), 2.0 * gap * gap, epsilon = 1e-12);
    }

    #[test]
    fn formation_rejects_an_airship_above_the_subject() {
        let f = formation(&[Vec3::new(10.0, 0.0, -5.0), Vec3::new(0.0, 0.0, -5.0)]);
        assert_eq!(formation_cost(&f), Err(Error::DegenerateGeometry { airship: 1 }));
    }

    fn scene(n: usize) -> (FormationState, ControlSequence, TransitionConfig, CostModel) {
        let ships = (0..n)
            .map(|i| {
                let a = i as f64 * 1.7 + 0.2;
                let p = Vec3::new(11.0 * a.cos(), 11.0 * a.sin(), -8.0);
                AirshipState::new(p, Vec3::new(-2.0 * a.sin(), 2.0 * a.cos(), 0.1), Orientation::new(0.05, 0.0, a + FRAC_PI_2))
            })
            .collect();
        let initial = FormationState::new(SubjectState::new(Vec3::new(0.5, 0.0, 0.0), Vec3::new(-0.3, 0.1, 0.0)), ships, 0.0).unwrap();
        let controls = ControlSequence {
            inputs: (0..n)
                .map(|m| (0..6).map(|k| ControlInput::new(0.15 + 0.01 * k as f64, 0.05 * m as f64 - 0.1, 0.1 - 0.03 * k as f64)).collect())
                .collect(),
        };
        let transition = TransitionConfig::default().with_mode(LimitMode::Penalized);
        let model = CostModel {
            obstacles: vec![Obstacle { center: Vec3::new(0.0, 12.0, -8.0), radius: 6.0 }],
            yaw_rate_step: Some(0.005),
            ..CostModel::default()
        };
        (initial, controls, transition, model)
    }

    #[test]
    fn horizon_one_is_centering_plus_formation_after_one_step() {
        let (initial, controls, transition, model) = scene(3);
        let first = ControlSequence {
            inputs: controls.inputs.iter().map(|r| vec![r[0]]).collect(),
        };
        let model = CostModel {
            obstacles: vec![],
            ..model
        };
        let b = trajectory_cost(&initial, &first, &transition, &model).unwrap();
        let ships: Vec<AirshipState> = initial.airships.iter().zip(first.first()).map(|(a, u)| step(a, &u, &transition).unwrap()).collect();
        let subject = crate::dynamics::propagate_subject(&initial.subject, transition.dt);
        let next = FormationState::new(subject, ships.clone(), 1.25).unwrap();
        let w = &model.weights;
        let expect: f64 = ships.iter().map(|a| w.k_c * centering_cost(&subject.position, a, &model.camera, w)).sum::<f64>()
            + w.k_f * formation_cost(&next).unwrap();
        assert!(b.penalty() == 0.0);
        assert_relative_eq!(b.total, expect, max_relative = 1e-12);
        assert_relative_eq!(b.states[0].airships[1].position, ships[1].position, epsilon = 1e-12);
    }

    #[test]
    fn single_airship_has_no_formation_term() {
        let (initial, controls, transition, model) = scene(1);
        let b = trajectory_cost(&initial, &controls, &transition, &model).unwrap();
        assert_eq!(b.formation(), 0.0);
        assert_eq!(b.terms[0].len(), 6);
        assert_relative_eq!(b.total, b.terms.iter().flatten().map(StepCost::total).sum::<f64>(), max_relative = 1e-12);
    }

    #[test]
    fn penalties_switch_on_outside_limits() {
        let (initial, controls, transition, model) = scene(2);
        let b = trajectory_cost(&initial, &controls, &transition, &model).unwrap();
        assert!(b.terms[0].iter().any(|t| t.yaw_rate_step > 0.0));
        let slow = ControlSequence::constant(2, 6, ControlInput::new(0.1, -0.5, 0.0));
        let b = trajectory_cost(&initial, &slow, &transition, &model).unwrap();
        assert!(b.terms[0][5].speed > 0.0);
        assert_eq!(b.terms[0][0].speed, 0.0);
        let dive = ControlSequence::constant(2, 6, ControlInput::new(0.1, 0.0, 1.0));
        let b = trajectory_cost(&initial, &dive, &transition, &model).unwrap();
        assert!(b.terms[1][5].vertical_speed > 0.0);
        assert!(b.terms[1][5].altitude > 0.0);
    }

    #[test]
    fn mismatched_controls_are_rejected() {
        let (initial, controls, transition, model) = scene(2);
        let short = ControlSequence {
            inputs: vec![controls.inputs[0].clone()],
        };
        assert!(matches!(trajectory_cost(&initial, &short, &transition, &model), Err(Error::Dimension(_))));
        let ragged = ControlSequence {
            inputs: vec![controls.inputs[0].clone(), controls.inputs[1][..3].to_vec()],
        };
        assert!(matches!(trajectory_cost(&initial, &ragged, &transition, &model), Err(Error::Dimension(_))));
    }

    #[test]
    fn tape_gradient_matches_central_differences() {
        let (initial, controls, transition, model) = scene(3);
        let r = Rollout::new(&initial, 6, &transition, &model);
        let x = controls.to_flat();
        let (v, g) = gradient(&x, |xv| r.cost(xv, None));
        assert_relative_eq!(v, r.cost(&x, None), max_relative = 1e-13);
        for i in 0..x.len() {
            let h = 1e-6;
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (r.cost(&a, None) - r.cost(&b, None)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "component {i}: {} vs {fd}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn centering_is_invariant_to_a_common_yaw_rotation(t in -PI..PI, yaw in -PI..PI, x in -20.0..20.0f64, y in -20.0..20.0f64, h in 2.0..15.0f64) {
            let cam = CameraExtrinsics::default();
            let w = CostWeights::default();
            let a = AirshipState::new(Vec3::new(x, y, -h), Vec3::new(1.0, 0.0, 0.0), Orientation::new(0.1, 0.05, yaw));
            let rot = Orientation::from_yaw(t).body_to_world();
            let b = AirshipState::new(rot * a.position, rot * a.velocity, Orientation::new(0.1, 0.05, yaw + t));
            let s = Vec3::new(1.0, -2.0, 0.0);
            let c0 = centering_cost(&s, &a, &cam, &w);
            let c1 = centering_cost(&(rot * s), &b, &cam, &w);
            prop_assert!((c0 - c1).abs() <= 1e-9 * c0.max(1.0));
        }

        #[test]
        fn formation_ignores_radial_scaling(a in 0.0..6.28f64, b in 0.0..6.28f64, c in 0.0..6.28f64, s1 in 0.5..40.0f64, s2 in 0.5..40.0f64, s3 in 0.5..40.0f64) {
            let p = |ang: f64, r: f64| Vec3::new(r * ang.cos(), r * ang.sin(), -5.0);
            let base = formation_cost(&formation(&[p(a, 10.0), p(b, 10.0), p(c, 10.0)])).unwrap();
            let scaled = formation_cost(&formation(&[p(a, s1), p(b, s2), p(c, s3)])).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
            let two = formation_cost(&formation(&[p(a, s1), p(b, s2)])).unwrap();
            prop_assert!(two.is_finite() && two >= 0.0);
        }

        #[test]
        fn nearly_parallel_bearings_stay_finite(a in -PI..PI, eps in -1e-9..1e-9f64) {
            let p = |ang: f64| Vec3::new(10.0 * ang.cos(), 10.0 * ang.sin(), -5.0);
            let f = formation(&[p(a), p(a + eps), p(a + PI)]);
            let v = formation_cost(&f).unwrap();
            prop_assert!(v.is_finite());
            let (_, g) = gradient(&[10.0 * a.cos(), 10.0 * a.sin(), 10.0 * (a + eps).cos(), 10.0 * (a + eps).sin()], |x| {
                formation_terms(&[[x[0], x[1]], [x[2], x[3]]])
            });
            prop_assert!(g.iter().all(|d| d.is_finite()));
        }
    }
}
