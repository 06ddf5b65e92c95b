//! Box-constrained optimisation of the horizon controls.
//!
//! Projected L-BFGS with an Armijo backtracking search along the projection
//! arc. Constraint penalties are tightened over a short schedule of rounds,
//! each warm-started from the previous one.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::autodiff::gradient;
use crate::dynamics::TransitionConfig;
use crate::error::{Error, Result};
use crate::model::{ControlInput, ControlSequence, FormationState};
use crate::objective::{check_dimensions, trajectory_cost, CostBreakdown, CostModel, Rollout};

#[derive(Debug, Clone, PartialEq)]
pub enum YawRateMode {
    /// ψ̇ is optimised within the transition limits.
    Free,
    /// ψ̇ is held at the given value for each airship.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub horizon: usize,
    /// Iteration cap per penalty round.
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest component falls below this.
    pub tolerance: f64,
    /// Multipliers applied to the penalty weights, one per round.
    pub penalty_schedule: Vec<f64>,
    pub memory: usize,
    /// Bound on |v̇_h| and |v̇_z| [m/s²].
    pub accel_bound: f64,
    pub yaw_rate: YawRateMode,
    /// Extra `(lo, hi)` box on the first-step ψ̇ of each airship.
    pub first_yaw_rate: Option<Vec<(f64, f64)>>,
    pub time_budget: Option<Duration>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            max_iterations: 500,
            tolerance: 1e-4,
            penalty_schedule: vec![0.01, 0.1, 1.0],
            memory: 8,
            accel_bound: 0.5,
            yaw_rate: YawRateMode::Free,
            first_yaw_rate: None,
            time_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    Stagnated,
    LineSearchFailed,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub controls: ControlSequence,
    /// Breakdown at the full penalty weights.
    pub cost: CostBreakdown,
    pub iterations: usize,
    pub termination: Termination,
    /// Largest projected-gradient component at the returned point.
    pub projected_gradient: f64,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Per-variable box in the flat layout.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        (0..x.len())
            .map(|i| ((x[i] - g[i]).clamp(self.lo[i], self.hi[i]) - x[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Variables pinned at a bound by the gradient.
    fn active(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        (0..x.len())
            .map(|i| {
                let eps = 1e-10 * (1.0 + x[i].abs());
                self.hi[i] - self.lo[i] <= eps || (x[i] <= self.lo[i] + eps && g[i] > 0.0) || (x[i] >= self.hi[i] - eps && g[i] < 0.0)
            })
            .collect()
    }
}

pub fn bounds(airships: usize, transition: &TransitionConfig, cfg: &SolveConfig) -> Result<Bounds> {
    let h = cfg.horizon;
    let lim = &transition.limits;
    let mut lo = Vec::with_capacity(airships * h * 3);
    let mut hi = Vec::with_capacity(airships * h * 3);
    if let YawRateMode::Fixed(rates) = &cfg.yaw_rate {
        if rates.len() != airships {
            return Err(Error::Dimension(format!("{} fixed yaw rates for {airships} airships", rates.len())));
        }
    }
    if let Some(first) = &cfg.first_yaw_rate {
        if first.len() != airships {
            return Err(Error::Dimension(format!("{} first-step yaw boxes for {airships} airships", first.len())));
        }
    }
    for m in 0..airships {
        for k in 0..h {
            let (mut ylo, mut yhi) = match &cfg.yaw_rate {
                YawRateMode::Free => (lim.yaw_rate_min, lim.yaw_rate_max),
                YawRateMode::Fixed(r) => (r[m], r[m]),
            };
            if let (0, Some(first)) = (k, &cfg.first_yaw_rate) {
                let (flo, fhi) = first[m];
                let (a, b) = (ylo.max(flo), yhi.min(fhi));
                // an empty intersection collapses to the admissible value nearest the rate box
                (ylo, yhi) = if a <= b { (a, b) } else { let v = if fhi < ylo { ylo } else { yhi }; (v, v) };
            }
            lo.extend([ylo, -cfg.accel_bound, -cfg.accel_bound]);
            hi.extend([yhi, cfg.accel_bound, cfg.accel_bound]);
        }
    }
    Ok(Bounds { lo, hi })
}

/// Constant-turn initial guess: every airship circles at the rate that keeps
/// a mid-band airspeed at the design distance, on the camera's side.
pub fn cold_start(initial: &FormationState, transition: &TransitionConfig, model: &CostModel, cfg: &SolveConfig) -> ControlSequence {
    let lim = &transition.limits;
    let rate = model.camera.side() * 0.5 * (lim.v_min + lim.v_max) / model.weights.d_c;
    let mut seq = ControlSequence::constant(initial.len(), cfg.horizon, ControlInput::new(rate, 0.0, 0.0));
    if let YawRateMode::Fixed(r) = &cfg.yaw_rate {
        for (row, rate) in seq.inputs.iter_mut().zip(r) {
            row.iter_mut().for_each(|u| u.yaw_rate = *rate);
        }
    }
    seq
}

/// Cost and its gradient with respect to the flat control vector.
pub fn cost_gradient(
    initial: &FormationState,
    controls: &ControlSequence,
    transition: &TransitionConfig,
    model: &CostModel,
) -> Result<(f64, Vec<f64>)> {
    check_dimensions(initial, controls)?;
    let r = Rollout::new(initial, controls.horizon(), transition, model);
    Ok(gradient(&controls.to_flat(), |x| r.cost(x, None)))
}

struct Lbfgs {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    memory: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            return;
        }
        if self.s.len() == self.memory {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    /// Two-loop recursion restricted to the free variables.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, f)| if *f { *x } else { 0.0 }).collect() };
        let mut q = mask(g);
        let ss: Vec<Vec<f64>> = self.s.iter().map(|v| mask(v)).collect();
        let ys: Vec<Vec<f64>> = self.y.iter().map(|v| mask(v)).collect();
        let mut alpha = vec![0.0; ss.len()];
        let mut rho = vec![0.0; ss.len()];
        for i in (0..ss.len()).rev() {
            let sy = dot(&ss[i], &ys[i]);
            if sy <= 0.0 {
                continue;
            }
            rho[i] = 1.0 / sy;
            alpha[i] = rho[i] * dot(&ss[i], &q);
            q.iter_mut().zip(&ys[i]).for_each(|(a, y)| *a -= alpha[i] * y);
        }
        if let (Some(s), Some(y)) = (ss.last(), ys.last()) {
            let yy = dot(y, y);
            if yy > 0.0 && dot(s, y) > 0.0 {
                let gamma = dot(s, y) / yy;
                q.iter_mut().for_each(|a| *a *= gamma);
            }
        }
        for i in 0..ss.len() {
            if rho[i] == 0.0 {
                continue;
            }
            let b = rho[i] * dot(&ys[i], &q);
            q.iter_mut().zip(&ss[i]).for_each(|(a, s)| *a += (alpha[i] - b) * s);
        }
        q.iter_mut().for_each(|a| *a = -*a);
        q
    }
}

struct RoundOutcome {
    termination: Termination,
    iterations: usize,
}

fn minimise(r: &Rollout, x: &mut Vec<f64>, b: &Bounds, cfg: &SolveConfig, deadline: Option<Instant>) -> RoundOutcome {
    let f_only = |x: &[f64]| r.cost(x, None);
    let (mut f, mut g) = gradient(x, |v| r.cost(v, None));
    let mut mem = Lbfgs {
        s: VecDeque::new(),
        y: VecDeque::new(),
        memory: cfg.memory.max(1),
    };
    let mut flat_steps = 0;
    for it in 0..cfg.max_iterations {
        if b.projected_gradient_norm(x, &g) < cfg.tolerance {
            return RoundOutcome { termination: Termination::Converged, iterations: it };
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return RoundOutcome { termination: Termination::TimeBudget, iterations: it };
        }
        let free: Vec<bool> = b.active(x, &g).into_iter().map(|a| !a).collect();
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = mem.direction(&g, &free);
            if attempt == 1 || dot(&d, &g) >= 0.0 {
                mem.clear();
                d = g.iter().zip(&free).map(|(gi, fr)| if *fr { -gi } else { 0.0 }).collect();
            }
            let mut t = if mem.s.is_empty() {
                1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
            } else {
                1.0
            };
            for _ in 0..40 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, di)| a + t * di).collect();
                b.project(&mut xn);
                let step: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, c)| a - c).collect();
                let decrease = dot(&g, &step);
                let fnew = f_only(&xn);
                if fnew.is_finite() && fnew <= f + 1e-4 * decrease && decrease < 0.0 {
                    accepted = Some(xn);
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || mem.s.is_empty() {
                break;
            }
        }
        let Some(xn) = accepted else {
            return RoundOutcome { termination: Termination::LineSearchFailed, iterations: it };
        };
        let (fn_, gn) = gradient(&xn, |v| r.cost(v, None));
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, c)| a - c).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, c)| a - c).collect();
        mem.push(s, y);
        flat_steps = if f - fn_ <= 1e-12 * f.abs().max(1.0) { flat_steps + 1 } else { 0 };
        *x = xn;
        f = fn_;
        g = gn;
        if flat_steps >= 5 {
            return RoundOutcome { termination: Termination::Stagnated, iterations: it + 1 };
        }
    }
    let termination = if b.projected_gradient_norm(x, &g) < cfg.tolerance {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    RoundOutcome { termination, iterations: cfg.max_iterations }
}

/// Optimises the horizon controls from `initial`, starting from `warm` or a cold start.
pub fn solve(
    initial: &FormationState,
    warm: Option<&ControlSequence>,
    transition: &TransitionConfig,
    model: &CostModel,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    if cfg.horizon == 0 || cfg.penalty_schedule.is_empty() || !(cfg.accel_bound >= 0.0) {
        return Err(Error::Config(format!("invalid solver configuration {cfg:?}")));
    }
    initial.validate()?;
    transition.validate()?;
    let n = initial.len();
    let start = match warm {
        Some(w) => {
            check_dimensions(initial, w)?;
            if w.horizon() != cfg.horizon {
                return Err(Error::Dimension(format!("warm start horizon {} but solver horizon {}", w.horizon(), cfg.horizon)));
            }
            w.clone()
        }
        None => cold_start(initial, transition, model, cfg),
    };
    let b = bounds(n, transition, cfg)?;
    let mut x0 = start.to_flat();
    b.project(&mut x0);

    let final_rollout = Rollout::new(initial, cfg.horizon, transition, model);
    let f0 = final_rollout.cost(&x0, None);
    if !f0.is_finite() {
        return Err(Error::NoProgress);
    }

    let deadline = cfg.time_budget.map(|d| Instant::now() + d);
    let mut x = x0.clone();
    let mut iterations = 0;
    let mut termination = Termination::Converged;
    for (i, scale) in cfg.penalty_schedule.iter().enumerate() {
        let last = i + 1 == cfg.penalty_schedule.len();
        let round_model = CostModel {
            penalties: model.penalties.scaled(*scale),
            ..model.clone()
        };
        let r = Rollout::new(initial, cfg.horizon, transition, if last { model } else { &round_model });
        let out = minimise(&r, &mut x, &b, cfg, deadline);
        iterations += out.iterations;
        termination = out.termination;
        if termination == Termination::TimeBudget {
            break;
        }
    }

    let f = final_rollout.cost(&x, None);
    if !(f <= f0) {
        x = x0;
    }
    let (_, g) = gradient(&x, |v| final_rollout.cost(v, None));
    let projected_gradient = b.projected_gradient_norm(&x, &g);
    let controls = ControlSequence::from_flat(n, cfg.horizon, &x);
    let cost = trajectory_cost(initial, &controls, transition, model)?;
    log::debug!("solve: {iterations} iterations, {termination:?}, cost {:.6}", cost.total);
    Ok(SolveResult {
        controls,
        cost,
        iterations,
        termination,
        projected_gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LimitMode;
    use crate::model::{AirshipState, Orientation, SubjectState, Vec3};
    use crate::objective::CostWeights;
    use std::f64::consts::FRAC_PI_2;

    fn penalized() -> TransitionConfig {
        TransitionConfig::default().with_mode(LimitMode::Penalized)
    }

    fn one_ship(p: Vec3, yaw: f64, speed: f64) -> FormationState {
        let a = AirshipState::new(p, Vec3::new(speed * yaw.cos(), speed * yaw.sin(), 0.0), Orientation::from_yaw(yaw));
        FormationState::new(SubjectState::stationary(Vec3::zeros()), vec![a], 0.0).unwrap()
    }

    fn three_ships() -> FormationState {
        let ships = (0..3)
            .map(|i| {
                let a = i as f64 * 0.5;
                AirshipState::new(Vec3::new(-10.0 * a.sin(), -10.0 * a.cos(), -8.0), Vec3::new(2.0 * a.cos(), -2.0 * a.sin(), 0.0), Orientation::from_yaw(-a))
            })
            .collect();
        FormationState::new(SubjectState::new(Vec3::zeros(), Vec3::new(-0.2, 0.0, 0.0)), ships, 0.0).unwrap()
    }

    #[test]
    fn projection_clamps_into_the_box() {
        let cfg = SolveConfig {
            horizon: 2,
            first_yaw_rate: Some(vec![(0.1, 0.12)]),
            ..SolveConfig::default()
        };
        let b = bounds(1, &penalized(), &cfg).unwrap();
        let mut x = vec![1.0, -2.0, 2.0, -1.0, 0.1, 0.0];
        b.project(&mut x);
        let max_rate = 18f64.to_radians();
        assert_eq!(x, vec![0.12, -0.5, 0.5, -max_rate, 0.1, 0.0]);
        let pinned = SolveConfig {
            first_yaw_rate: Some(vec![(0.5, 0.6)]),
            ..cfg.clone()
        };
        let b = bounds(1, &penalized(), &pinned).unwrap();
        assert_eq!((b.lo[0], b.hi[0]), (max_rate, max_rate));
        assert!(bounds(2, &penalized(), &cfg).is_err());
    }

    #[test]
    fn gradient_matches_directional_differences() {
        let initial = three_ships();
        let t = penalized();
        let model = CostModel::default();
        let cfg = SolveConfig::default();
        let u = cold_start(&initial, &t, &model, &cfg);
        let (f, g) = cost_gradient(&initial, &u, &t, &model).unwrap();
        let x = u.to_flat();
        for dir in 0..4 {
            let d: Vec<f64> = (0..x.len()).map(|i| (((i * 7 + dir * 13) % 11) as f64 - 5.0) / 5.0).collect();
            let h = 1e-6;
            let at = |s: f64| {
                let xs: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + s * b).collect();
                trajectory_cost(&initial, &ControlSequence::from_flat(3, 10, &xs), &t, &model).unwrap().total
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let ad = dot(&g, &d);
            assert!((fd - ad).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {ad}");
            assert!((at(0.0) - f).abs() < 1e-9 * f);
        }
    }

    #[test]
    fn solving_never_increases_the_cost() {
        let initial = three_ships();
        let t = penalized();
        let model = CostModel::default();
        let cfg = SolveConfig::default();
        let warm = ControlSequence::constant(3, 10, ControlInput::new(0.9, 3.0, -2.0));
        let mut x = warm.to_flat();
        bounds(3, &t, &cfg).unwrap().project(&mut x);
        let start = trajectory_cost(&initial, &ControlSequence::from_flat(3, 10, &x), &t, &model).unwrap().total;
        let res = solve(&initial, Some(&warm), &t, &model, &cfg).unwrap();
        assert!(res.cost.total <= start);
        assert!(res.cost.total < 0.5 * start);
        let b = bounds(3, &t, &cfg).unwrap();
        for (i, v) in res.controls.to_flat().iter().enumerate() {
            assert!(*v >= b.lo[i] && *v <= b.hi[i]);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let initial = three_ships();
        let t = penalized();
        let model = CostModel::default();
        let cfg = SolveConfig::default();
        let a = solve(&initial, None, &t, &model, &cfg).unwrap();
        let b = solve(&initial, None, &t, &model, &cfg).unwrap();
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.cost.total, b.cost.total);
    }

    #[test]
    fn zero_weights_keep_the_warm_start() {
        let initial = three_ships();
        let t = penalized();
        let model = CostModel {
            weights: CostWeights { k_c: 0.0, k_f: 0.0, k_d: 0.0, d_c: 15.0 },
            penalties: crate::objective::PenaltyWeights::default().scaled(0.0),
            ..CostModel::default()
        };
        let warm = ControlSequence::constant(3, 10, ControlInput::new(0.1, 0.2, -0.1));
        let res = solve(&initial, Some(&warm), &t, &model, &SolveConfig::default()).unwrap();
        assert_eq!(res.controls, warm);
        assert!(res.converged());
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn fixed_yaw_rate_is_respected() {
        let initial = one_ship(Vec3::new(0.0, -10.0, -8.0), 0.0, 2.0);
        let cfg = SolveConfig {
            yaw_rate: YawRateMode::Fixed(vec![0.15]),
            ..SolveConfig::default()
        };
        let res = solve(&initial, None, &penalized(), &CostModel::default(), &cfg).unwrap();
        assert!(res.controls.inputs[0].iter().all(|u| u.yaw_rate == 0.15));
    }

    #[test]
    fn horizon_one_matches_a_grid_search() {
        let initial = one_ship(Vec3::new(0.0, -9.0, -7.0), 0.2, 2.0);
        let t = penalized();
        let model = CostModel {
            camera: crate::model::CameraExtrinsics::new(FRAC_PI_2, -0.6),
            ..CostModel::default()
        };
        let cfg = SolveConfig {
            horizon: 1,
            ..SolveConfig::default()
        };
        let res = solve(&initial, None, &t, &model, &cfg).unwrap();
        let b = bounds(1, &t, &cfg).unwrap();
        let steps = 40;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let pick = |c: usize, s: usize| b.lo[c] + (b.hi[c] - b.lo[c]) * s as f64 / steps as f64;
                    let u = ControlSequence::constant(1, 1, ControlInput::new(pick(0, i), pick(1, j), pick(2, k)));
                    best = best.min(trajectory_cost(&initial, &u, &t, &model).unwrap().total);
                }
            }
        }
        assert!(res.cost.total <= best + 1e-6, "{} vs grid {best}", res.cost.total);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let initial = three_ships();
        let t = penalized();
        let model = CostModel::default();
        let short = ControlSequence::constant(3, 4, ControlInput::default());
        assert!(matches!(solve(&initial, Some(&short), &t, &model, &SolveConfig::default()), Err(Error::Dimension(_))));
        let cfg = SolveConfig {
            horizon: 0,
            ..SolveConfig::default()
        };
        assert!(matches!(solve(&initial, None, &t, &model, &cfg), Err(Error::Config(_))));
    }
}
