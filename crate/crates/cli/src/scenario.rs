//! TOML scenario documents. Every field is optional and overrides a base
//! configuration; angles are in degrees here and radians everywhere else.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use airform::experiments::{GUST_INTENSITY, GUST_INTERVAL};
use airform::model::Vec3;
use airform::sim::{Course, SimConfig, SubjectPath, WindModel};
use airform::solver::YawRateMode;
use airform::studies::{Study, StudySetup};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub formation: Formation,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub camera: Camera,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub wind: Wind,
    #[serde(default)]
    pub subject: Subject,
    #[serde(default)]
    pub mpc: Mpc,
    #[serde(default)]
    pub sim: Sim,
    #[serde(default)]
    pub study: StudyFlags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formation {
    pub airships: Option<usize>,
    pub bearing_jitter_deg: Option<f64>,
    pub radius_jitter: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub v_vmax: Option<f64>,
    pub yaw_rate_deg: Option<f64>,
    pub yaw_rate_step_deg: Option<f64>,
    pub min_altitude: Option<f64>,
    pub min_separation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub k_c: Option<f64>,
    pub k_f: Option<f64>,
    pub k_d: Option<f64>,
    pub d_c: Option<f64>,
    /// Multiplies every soft-constraint weight.
    pub penalty_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub azimuth_deg: Option<f64>,
    pub elevation_deg: Option<f64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub fov_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub c_l: Option<f64>,
    pub g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GustStep {
    pub time: f64,
    pub speed: f64,
    pub direction_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wind {
    /// Mean wind speed [m/s].
    pub speed: Option<f64>,
    /// Direction the wind blows towards, clockwise from north.
    pub direction_deg: Option<f64>,
    pub gust_intensity: Option<f64>,
    pub gust_interval: Option<f64>,
    /// Explicit wind changes; replaces the random gusts when present.
    pub steps: Option<Vec<GustStep>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Stationary,
    Constant,
    Course,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub kind: Option<SubjectKind>,
    pub position: Option<[f64; 2]>,
    pub velocity: Option<[f64; 2]>,
    pub course_length: Option<f64>,
    pub course_width: Option<f64>,
    pub corner_radius: Option<f64>,
    pub speed: Option<f64>,
    pub backtrack: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mpc {
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub substeps: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub penalty_schedule: Option<Vec<f64>>,
    pub wind_window: Option<usize>,
    pub subject_window: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim {
    pub duration: Option<f64>,
    pub frame_rate: Option<f64>,
    pub warmup: Option<f64>,
    pub seed: Option<u64>,
    pub noise_sigma: Option<f64>,
    pub vertical_lag: Option<f64>,
    pub record_timing: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFlags {
    pub name: Option<String>,
    /// Same yaw rate for every airship and step; absent leaves ψ̇ free.
    pub fixed_yaw_rate_deg: Option<f64>,
    pub aoa: Option<bool>,
    pub pitch: Option<bool>,
    /// Divide by the radius instead of multiplying in the orbit altitude column.
    pub literal_altitude: Option<bool>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn study(&self) -> Result<Option<Study>> {
        self.study.name.as_deref().map(str::parse).transpose().map_err(Into::into)
    }

    /// Closed-loop configuration: the formation-size experiment with three
    /// airships, overridden field by field.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        let s = &self.sim;
        set(&mut cfg.duration, s.duration);
        set(&mut cfg.frame_rate, s.frame_rate);
        set(&mut cfg.warmup, s.warmup);
        set(&mut cfg.seed, s.seed);
        set(&mut cfg.measurement.sigma, s.noise_sigma);
        set(&mut cfg.record_timing, s.record_timing);
        if s.vertical_lag.is_some() {
            cfg.vertical_lag = s.vertical_lag;
        }

        let f = &self.formation;
        set(&mut cfg.airships, f.airships);
        set(&mut cfg.placement.bearing_jitter, f.bearing_jitter_deg.map(f64::to_radians));
        set(&mut cfg.placement.radius_jitter, f.radius_jitter);

        let c = &self.camera;
        set(&mut cfg.camera.width, c.width);
        set(&mut cfg.camera.height, c.height);
        set(&mut cfg.camera.fov, c.fov_deg.map(f64::to_radians));

        let m = &self.mpc;
        set(&mut cfg.mpc.solve.horizon, m.horizon);
        set(&mut cfg.mpc.transition.dt, m.dt);
        set(&mut cfg.mpc.transition.substeps, m.substeps);
        set(&mut cfg.mpc.solve.max_iterations, m.max_iterations);
        set(&mut cfg.mpc.solve.tolerance, m.tolerance);
        set(&mut cfg.mpc.solve.penalty_schedule, m.penalty_schedule.clone());
        set(&mut cfg.mpc.wind_window, m.wind_window);
        set(&mut cfg.mpc.subject_window, m.subject_window);

        self.apply_model(&mut cfg.mpc.transition, &mut cfg.mpc.model);
        cfg.camera.extrinsics = cfg.mpc.model.camera;
        if let Some(rate) = self.study.fixed_yaw_rate_deg {
            cfg.mpc.solve.yaw_rate = YawRateMode::Fixed(vec![rate.to_radians(); cfg.airships]);
        }

        cfg.wind = self.wind_model(&cfg)?;
        cfg.subject = self.subject_path()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_model(&self, t: &mut airform::dynamics::TransitionConfig, model: &mut airform::objective::CostModel) {
        let l = &self.limits;
        let lim = &mut t.limits;
        set(&mut lim.v_min, l.v_min);
        set(&mut lim.v_max, l.v_max);
        set(&mut lim.v_vmax, l.v_vmax);
        if let Some(r) = l.yaw_rate_deg {
            lim.yaw_rate_min = -r.to_radians();
            lim.yaw_rate_max = r.to_radians();
        }
        set(&mut lim.yaw_rate_step, l.yaw_rate_step_deg.map(f64::to_radians));
        set(&mut lim.min_altitude, l.min_altitude);
        set(&mut lim.min_separation, l.min_separation);

        set(&mut t.phys.c_l, self.physics.c_l);
        set(&mut t.phys.g, self.physics.g);
        set(&mut t.aoa, self.study.aoa);
        set(&mut t.pitch, self.study.pitch);

        let w = &self.weights;
        set(&mut model.weights.k_c, w.k_c);
        set(&mut model.weights.k_f, w.k_f);
        set(&mut model.weights.k_d, w.k_d);
        set(&mut model.weights.d_c, w.d_c);
        if let Some(s) = w.penalty_scale {
            model.penalties = model.penalties.scaled(s);
        }
        set(&mut model.camera.azimuth, self.camera.azimuth_deg.map(f64::to_radians));
        set(&mut model.camera.elevation, self.camera.elevation_deg.map(f64::to_radians));
    }

    fn wind_model(&self, cfg: &SimConfig) -> Result<WindModel> {
        let w = &self.wind;
        let speed = w.speed.unwrap_or(cfg.wind.base.norm());
        let dir = w.direction_deg.unwrap_or(0.0).to_radians();
        let base = Vec3::new(speed * dir.cos(), speed * dir.sin(), 0.0);
        if let Some(steps) = &w.steps {
            let gusts = steps
                .iter()
                .map(|g| {
                    let d = g.direction_deg.to_radians();
                    (g.time, Vec3::new(g.speed * d.cos(), g.speed * d.sin(), 0.0))
                })
                .collect();
            return Ok(WindModel { base, gusts });
        }
        let intensity = w.gust_intensity.unwrap_or(GUST_INTENSITY);
        let interval = w.gust_interval.unwrap_or(GUST_INTERVAL);
        if !(intensity >= 0.0) || !(interval > 0.0) {
            bail!("gust intensity must be non-negative and gust interval positive");
        }
        Ok(WindModel::gusty(base, intensity, interval, cfg.duration, cfg.seed))
    }

    fn subject_path(&self) -> Result<SubjectPath> {
        let s = &self.subject;
        let p = s.position.unwrap_or([0.0, 0.0]);
        let start = Vec3::new(p[0], p[1], 0.0);
        Ok(match s.kind.unwrap_or(SubjectKind::Stationary) {
            SubjectKind::Stationary => SubjectPath::Stationary(start),
            SubjectKind::Constant => {
                let Some(v) = s.velocity else { bail!("a constant-velocity subject needs `velocity`") };
                SubjectPath::ConstantVelocity {
                    start,
                    velocity: Vec3::new(v[0], v[1], 0.0),
                }
            }
            SubjectKind::Course => {
                let mut c = Course::default();
                set(&mut c.length, s.course_length);
                set(&mut c.width, s.course_width);
                set(&mut c.corner_radius, s.corner_radius);
                set(&mut c.speed, s.speed);
                set(&mut c.backtrack, s.backtrack);
                c.center = start;
                SubjectPath::Course(c)
            }
        })
    }

    /// Open-loop study setup with the document's overrides applied.
    pub fn study_setup(&self, study: Study) -> Result<StudySetup> {
        let mut st = airform::studies::setup(study);
        self.apply_model(&mut st.transition, &mut st.model);
        set(&mut st.transition.dt, self.mpc.dt);
        set(&mut st.transition.substeps, self.mpc.substeps);
        set(&mut st.solve.horizon, self.mpc.horizon);
        set(&mut st.solve.max_iterations, self.mpc.max_iterations);
        set(&mut st.solve.tolerance, self.mpc.tolerance);
        set(&mut st.solve.penalty_schedule, self.mpc.penalty_schedule.clone());
        if let Some(rate) = self.study.fixed_yaw_rate_deg {
            st.solve.yaw_rate = YawRateMode::Fixed(vec![rate.to_radians(); st.initial.len()]);
        }
        st.transition.validate()?;
        Ok(st)
    }

    pub fn literal_altitude(&self) -> bool {
        self.study.literal_altitude.unwrap_or(false)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
