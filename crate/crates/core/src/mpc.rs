//! Receding-horizon controller: estimation, warm starts, rate limits and fallback.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::dynamics::{LimitMode, TransitionConfig};
use crate::error::{Error, Result};
use crate::model::{ControlInput, FormationState, PhysParams, SubjectState, Vec3};
use crate::objective::CostModel;
use crate::solver::{cold_start, solve, SolveConfig, SolveResult};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction model. Its wind is replaced by the running estimate each tick.
    pub transition: TransitionConfig,
    pub model: CostModel,
    pub solve: SolveConfig,
    /// Wind samples per airship kept for the running mean.
    pub wind_window: usize,
    /// Subject position samples used for the velocity fit.
    pub subject_window: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            transition: TransitionConfig::default().with_mode(LimitMode::Penalized),
            model: CostModel::default(),
            solve: SolveConfig {
                penalty_schedule: vec![1.0],
                max_iterations: 150,
                ..SolveConfig::default()
            },
            wind_window: 8,
            subject_window: 4,
        }
    }
}

impl MpcConfig {
    pub fn horizon(&self) -> usize {
        self.solve.horizon
    }

    pub fn dt(&self) -> f64 {
        self.transition.dt
    }

    pub fn validate(&self) -> Result<()> {
        self.transition.validate()?;
        let lim = &self.transition.limits;
        if self.solve.horizon < 2 {
            return Err(Error::Config(format!("horizon must be at least 2, got {}", self.solve.horizon)));
        }
        if !(lim.yaw_rate_step > 0.0) || !(lim.min_altitude > 0.0) || !(lim.min_separation > 0.0) {
            return Err(Error::Config("rate-step, altitude and separation limits must be positive".into()));
        }
        if self.wind_window == 0 || self.subject_window < 2 {
            return Err(Error::Config("estimator windows too short".into()));
        }
        if self.model.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return Err(Error::Config("obstacle radii must be positive".into()));
        }
        Ok(())
    }
}

/// What one airship's onboard sensors report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub position: Vec3,
    pub ground_velocity: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Horizontal air-relative speed.
    pub pitot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindEstimate {
    pub wind: Vec3,
    /// Number of samples behind the estimate.
    pub samples: usize,
}

impl Default for WindEstimate {
    fn default() -> Self {
        Self {
            wind: Vec3::zeros(),
            samples: 0,
        }
    }
}

const WIND_ITERATIONS: usize = 50;
const WIND_TOLERANCE: f64 = 1e-6;

/// Wind from one reading: recover the air-relative velocity direction
/// `χ = ψ − β(ψ̇, ‖v_air‖)` by fixed-point iteration, then subtract it from the
/// ground velocity. Set `phys.c_l` to infinity to ignore the angle of attack.
pub fn estimate_wind(r: &SensorReading, phys: &PhysParams, v_min: f64) -> Result<WindEstimate> {
    if !(r.pitot >= 0.0) {
        return Err(Error::Config(format!("pitot reading {} is negative", r.pitot)));
    }
    if r.pitot < v_min {
        return Err(Error::InsufficientAirspeed {
            airspeed: r.pitot,
            v_min,
        });
    }
    let mut air = Vec3::new(r.pitot * r.yaw.cos(), r.pitot * r.yaw.sin(), 0.0);
    for _ in 0..WIND_ITERATIONS {
        let speed = air.xy().norm();
        let chi = r.yaw - r.yaw_rate / (phys.c_l * speed);
        let next = Vec3::new(r.pitot * chi.cos(), r.pitot * chi.sin(), 0.0);
        let change = (next - air).norm();
        air = next;
        if change < WIND_TOLERANCE {
            let w = r.ground_velocity - air;
            return Ok(WindEstimate {
                wind: Vec3::new(w.x, w.y, 0.0),
                samples: 1,
            });
        }
    }
    Err(Error::NoConvergence(WIND_ITERATIONS))
}

/// Least-squares slope of the last `window` positions against time, with `z` dropped.
pub fn estimate_subject_velocity(history: &[(f64, Vec3)], window: usize) -> Result<Vec3> {
    let (_, v) = fit_subject(history, window)?;
    Ok(v)
}

/// Fitted position at the newest sample time and the fitted velocity.
fn fit_subject(history: &[(f64, Vec3)], window: usize) -> Result<(Vec3, Vec3)> {
    let needed = 2;
    let take = window.max(needed).min(history.len());
    if take < needed {
        return Err(Error::InsufficientHistory {
            needed,
            got: history.len(),
        });
    }
    let recent = &history[history.len() - take..];
    let n = take as f64;
    let t_mean = recent.iter().map(|(t, _)| t).sum::<f64>() / n;
    let p_mean = recent.iter().map(|(_, p)| p).sum::<Vec3>() / n;
    let stt: f64 = recent.iter().map(|(t, _)| (t - t_mean).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::InsufficientHistory {
            needed,
            got: 1,
        });
    }
    let stp: Vec3 = recent.iter().map(|(t, p)| (p - p_mean) * (t - t_mean)).sum();
    let v = stp / stt;
    let t_last = recent[take - 1].0;
    let p = p_mean + v * (t_last - t_mean);
    Ok((Vec3::new(p.x, p.y, 0.0), Vec3::new(v.x, v.y, 0.0)))
}

/// One re-plan. `last_applied` is the command currently flying, which
/// anchors the ψ̇ step limit.
pub fn tick(
    measured: &FormationState,
    wind: &WindEstimate,
    prev: Option<&SolveResult>,
    last_applied: Option<&[ControlInput]>,
    cfg: &MpcConfig,
) -> Result<(Vec<ControlInput>, SolveResult)> {
    measured.validate()?;
    let n = measured.len();
    let lim = cfg.transition.limits;
    let transition = TransitionConfig {
        phys: cfg.transition.phys.with_wind(wind.wind),
        mode: LimitMode::Penalized,
        ..cfg.transition
    };
    let model = CostModel {
        yaw_rate_step: Some(lim.yaw_rate_step),
        ..cfg.model.clone()
    };
    let mut solve_cfg = cfg.solve.clone();
    if let Some(last) = last_applied {
        if last.len() != n {
            return Err(Error::Dimension(format!("{} previous commands for {n} airships", last.len())));
        }
        solve_cfg.first_yaw_rate = Some(last.iter().map(|u| (u.yaw_rate - lim.yaw_rate_step, u.yaw_rate + lim.yaw_rate_step)).collect());
    }
    let warm = match prev {
        Some(p) if p.controls.airships() == n && p.controls.horizon() == solve_cfg.horizon => p.controls.shifted(),
        _ => cold_start(measured, &transition, &model, &solve_cfg),
    };
    let result = solve(measured, Some(&warm), &transition, &model, &solve_cfg)?;
    Ok((result.controls.first(), result))
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub commands: Vec<ControlInput>,
    /// `None` when the previous command was held.
    pub result: Option<SolveResult>,
    pub solve_time: Duration,
    pub wind: WindEstimate,
    pub subject: SubjectState,
    pub fallback: bool,
}

/// Stateful wrapper that owns the estimators and the previous plan.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: MpcConfig,
    prev: Option<SolveResult>,
    last: Option<Vec<ControlInput>>,
    held: bool,
    winds: VecDeque<Vec3>,
    subject: Vec<(f64, Vec3)>,
}

impl Controller {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            prev: None,
            last: None,
            held: false,
            winds: VecDeque::new(),
            subject: Vec::new(),
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// Seeds the command the airships are already flying.
    pub fn with_initial_command(mut self, u: Vec<ControlInput>) -> Self {
        self.last = Some(u);
        self
    }

    pub fn observe_subject(&mut self, time: f64, position: Vec3) {
        self.subject.push((time, position));
        let keep = self.cfg.subject_window;
        if self.subject.len() > keep {
            self.subject.drain(..self.subject.len() - keep);
        }
    }

    /// Adds one wind sample per reading; readings below `v_min` are skipped.
    pub fn observe_airships(&mut self, readings: &[SensorReading]) -> Result<()> {
        let mut phys = self.cfg.transition.phys;
        if !self.cfg.transition.aoa {
            phys.c_l = f64::INFINITY;
        }
        for r in readings {
            match estimate_wind(r, &phys, self.cfg.transition.limits.v_min) {
                Ok(w) => self.winds.push_back(w.wind),
                Err(Error::InsufficientAirspeed { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let keep = self.cfg.wind_window * readings.len().max(1);
        while self.winds.len() > keep {
            self.winds.pop_front();
        }
        Ok(())
    }

    pub fn wind_estimate(&self) -> WindEstimate {
        if self.winds.is_empty() {
            return WindEstimate::default();
        }
        WindEstimate {
            wind: self.winds.iter().sum::<Vec3>() / self.winds.len() as f64,
            samples: self.winds.len(),
        }
    }

    /// Smoothed subject state; a single sample gives a stationary subject.
    pub fn subject_estimate(&self) -> Result<SubjectState> {
        match self.subject.len() {
            0 => Err(Error::InsufficientHistory { needed: 1, got: 0 }),
            1 => Ok(SubjectState::stationary(self.subject[0].1)),
            _ => {
                let (p, v) = fit_subject(&self.subject, self.cfg.subject_window)?;
                Ok(SubjectState::new(p, v))
            }
        }
    }

    /// Re-plans from the measured airship states and the current estimates.
    pub fn tick(&mut self, airships: &FormationState) -> Result<TickOutput> {
        let subject = self.subject_estimate()?;
        let wind = self.wind_estimate();
        let measured = FormationState {
            subject,
            ..airships.clone()
        };
        let started = Instant::now();
        let mut attempt = tick(&measured, &wind, self.prev.as_ref(), self.last.as_deref(), &self.cfg);
        let mut fallback = false;
        if let Err(e) = &attempt {
            log::warn!("t={:.2}: solver failed ({e})", measured.time);
            fallback = true;
            if let (Some(last), false) = (&self.last, self.held) {
                self.held = true;
                return Ok(TickOutput {
                    commands: last.clone(),
                    result: None,
                    solve_time: started.elapsed(),
                    wind,
                    subject,
                    fallback,
                });
            }
            self.prev = None;
            attempt = tick(&measured, &wind, None, self.last.as_deref(), &self.cfg);
        }
        let (commands, result) = attempt?;
        self.held = false;
        self.last = Some(commands.clone());
        self.prev = Some(result.clone());
        Ok(TickOutput {
            commands,
            result: Some(result),
            solve_time: started.elapsed(),
            wind,
            subject,
            fallback,
        })
    }
}
