use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;

use airform::dynamics::{required_altitude, required_altitude_literal};
use airform::model::ControlLimits;
use airform::orbits::{classify_orbit, is_reversal_safe, max_subject_speed, reference_trajectory, reversal_safe_speed, speed_envelope, OrbitSpec};
use airform::sim::{metrics, run_episode, write_csv, EpisodeLog, Metrics, Visibility};
use airform::studies::{run_setup, Study, StudyReport};

use crate::manifest::Outputs;
use crate::scenario::{ScenarioFile, SubjectKind};
use crate::svg::{Chart, Series, Style};
use crate::{Axis, Common, OrbitArgs, Preset, SweepArgs};

fn load(common: &Common) -> Result<ScenarioFile> {
    let mut f = match &common.config {
        Some(p) => ScenarioFile::load(p)?,
        None => ScenarioFile::default(),
    };
    if common.seed.is_some() {
        f.sim.seed = common.seed;
    }
    Ok(f)
}

pub fn orbit(common: &Common, a: &OrbitArgs, args: &[String]) -> Result<()> {
    let file = load(common)?;
    let cfg = file.sim_config()?;
    let lim = cfg.mpc.transition.limits;
    let rate = a.yaw_rate_deg.to_radians();
    if a.grid < 2 || !(a.radius_max > 0.0) {
        bail!("need at least two grid points and a positive radius range");
    }
    let mut out = Outputs::create(&common.out)?;

    let v_hi = lim.v_max;
    let mut table = String::from("base_radius,subject_speed,yaw_rate,v_orbit_min,v_orbit_max,class,reversal_safe\n");
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for i in 0..a.grid {
        let r0 = a.radius_max * (i + 1) as f64 / a.grid as f64;
        for j in 0..a.grid {
            let vs = v_hi * j as f64 / (a.grid - 1) as f64;
            let spec = OrbitSpec::new(r0, rate, vs)?;
            let env = speed_envelope(&spec);
            let class = classify_orbit(&spec, &lim);
            let safe = is_reversal_safe(&spec, &lim, 72);
            writeln!(table, "{r0},{vs},{rate},{},{},{class:?},{safe}", env.v_orbit_min, env.v_orbit_max)?;
            if class == airform::orbits::OrbitClass::Valid { &mut valid } else { &mut invalid }.push((r0, vs));
        }
    }
    out.write("feasibility.csv", table)?;

    let spec = OrbitSpec::new(a.radius, rate, a.subject_speed)?;
    let elevation = cfg.mpc.model.camera.elevation;
    let literal = file.literal_altitude();
    let period = TAU / rate.abs();
    let samples = reference_trajectory(&spec, 0.0, period, period / 360.0)?;
    let mut refcsv = String::from("time,heading,radius,rel_x,rel_y,fluid_x,fluid_y,airspeed,altitude\n");
    for s in &samples {
        let v = airform::orbits::orbit_airspeed(&spec, s.heading);
        let roll = (rate * v / cfg.mpc.transition.phys.g).atan();
        let alt = if literal { required_altitude_literal(s.radius, roll, elevation) } else { required_altitude(s.radius, roll, elevation) };
        let f = s.fluid_position([0.0, 0.0]);
        writeln!(
            refcsv,
            "{},{},{},{},{},{},{},{v},{}",
            s.time,
            s.heading,
            s.radius,
            s.relative[0],
            s.relative[1],
            f[0],
            f[1],
            alt.map_or(f64::NAN, |h| h)
        )?;
    }
    out.write("reference.csv", refcsv)?;

    let mut chart = Chart::new("Orbit feasibility", "base radius [m]", "subject speed [m/s]");
    chart.add(Series::new("valid", valid, 2, Style::Dots));
    chart.add(Series::new("outside airspeed band", invalid, 1, Style::Dots));
    out.write("feasibility.svg", chart.render())?;
    let mut chart = Chart::new("Reference orbit", "x [m]", "y [m]").equal();
    chart.add(Series::new("relative to subject", samples.iter().map(|s| (s.relative[1], s.relative[0])).collect(), 0, Style::Line));
    chart.add(Series::new("in the air", samples.iter().map(|s| s.fluid_position([0.0, 0.0])).map(|p| (p[1], p[0])).collect(), 3, Style::Dashed));
    out.write("orbit.svg", chart.render())?;

    print_orbit_summary(&lim, &spec);
    out.finish("orbit", args, None, &file, format!("{a:?}\n{lim:?}"))
}

fn print_orbit_summary(lim: &ControlLimits, spec: &OrbitSpec) {
    let env = speed_envelope(spec);
    println!("airspeed band       {:.3} .. {:.3} m/s", lim.v_min, lim.v_max);
    println!("max subject speed   {:.4} m/s", max_subject_speed(lim));
    println!("reversal-safe speed {:.4} m/s (one reversal)", reversal_safe_speed(lim, 1));
    println!(
        "reference orbit     r0 {:.2} m, envelope {:.3} .. {:.3} m/s, {:?}",
        spec.base_radius,
        env.v_orbit_min,
        env.v_orbit_max,
        classify_orbit(spec, lim)
    );
}

pub fn solve(common: &Common, study: Option<&str>, args: &[String]) -> Result<()> {
    let mut file = load(common)?;
    let study: Study = match study {
        Some(s) => s.parse()?,
        None => file.study()?.ok_or_else(|| anyhow!("no study given; pass --study or set [study] name"))?,
    };
    file.study.name = Some(study.name().into());
    let setup = file.study_setup(study)?;
    let resolved = format!("{setup:?}");
    let mut out = Outputs::create(&common.out)?;
    let started = Instant::now();
    let report = run_setup(setup).with_context(|| format!("solving {study}"))?;
    info!("{study} solved in {:.1} s", started.elapsed().as_secs_f64());

    let mut traj = String::from("step,time,airship,rel_x,rel_y,altitude,radius,reference_radius,airspeed,slip_deg,yaw_rate_cmd,horiz_accel_cmd,vert_accel_cmd,e_c\n");
    for s in &report.samples {
        let u = report.result.controls.inputs[s.airship][s.step - 1];
        writeln!(
            traj,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.time,
            s.airship,
            s.relative.x,
            s.relative.y,
            -s.relative.z,
            s.radius,
            s.reference_radius.map_or(f64::NAN, |r| r),
            s.airspeed,
            s.slip.to_degrees(),
            u.yaw_rate,
            u.horiz_accel,
            u.vert_accel,
            s.centering
        )?;
    }
    out.write("trajectory.csv", traj)?;

    let cost = &report.result.cost;
    let h = report.setup.solve.horizon;
    let mut trace = String::from("step,time,centering,formation,penalty\n");
    for k in 0..h {
        let (c, f, p) = cost.terms.iter().map(|t| &t[k]).fold((0.0, 0.0, 0.0), |(c, f, p), t| (c + t.centering, f + t.formation, p + t.penalty()));
        writeln!(trace, "{},{},{c},{f},{p}", k + 1, cost.states[k].time)?;
    }
    out.write("cost.csv", trace)?;

    write_study_plots(&mut out, &report)?;
    print_study_summary(&report);
    out.finish("solve", args, None, &file, resolved)
}

fn write_study_plots(out: &mut Outputs, r: &StudyReport) -> Result<()> {
    let n = r.setup.initial.len();
    let mut chart = Chart::new(&format!("{} trajectory relative to the subject", r.setup.study), "east [m]", "north [m]").equal();
    for m in 0..n {
        let pts = r.samples.iter().filter(|s| s.airship == m).map(|s| (s.relative.y, s.relative.x)).collect();
        chart.add(Series::new(format!("airship {m}"), pts, m, Style::Line));
    }
    if let Some((spec, psi0)) = r.setup.reference {
        let period = TAU / spec.turn_rate().abs();
        let pts = reference_trajectory(&spec, psi0, period, period / 360.0)?.iter().map(|s| (s.relative[1], s.relative[0])).collect();
        chart.add(Series::new("analytic", pts, 7, Style::Dashed));
    }
    chart.add(Series::new("subject", vec![(0.0, 0.0)], 1, Style::Dots));
    out.write("trajectory.svg", chart.render())?;

    let mut chart = Chart::new("Centering cost", "time [s]", "E_c");
    for m in 0..n {
        let pts = r.samples.iter().filter(|s| s.airship == m).map(|s| (s.time, s.centering)).collect();
        chart.add(Series::new(format!("airship {m}"), pts, m, Style::Line));
    }
    out.write("cost.svg", chart.render())?;

    let mut chart = Chart::new("Distance to the subject", "time [s]", "radius [m]");
    for m in 0..n {
        let pts = r.samples.iter().filter(|s| s.airship == m).map(|s| (s.time, s.radius)).collect();
        chart.add(Series::new(format!("airship {m}"), pts, m, Style::Line));
    }
    if r.setup.reference.is_some() {
        let pts = r.samples.iter().filter(|s| s.airship == 0).filter_map(|s| s.reference_radius.map(|x| (s.time, x))).collect();
        chart.add(Series::new("analytic", pts, 7, Style::Dashed));
    }
    out.write("radius.svg", chart.render())
}

fn print_study_summary(r: &StudyReport) {
    let fo = r.final_orbit();
    println!("study               {}", r.setup.study);
    println!("termination         {:?} after {} iterations", r.result.termination, r.result.iterations);
    println!("total cost          {:.6}", r.result.cost.total);
    println!("final orbit E_c     mean {:.6}, max {:.6}", StudyReport::mean_centering(&fo), fo.iter().map(|s| s.centering).fold(0.0, f64::max));
    let (lo, hi) = StudyReport::radius_range(&fo);
    println!("final orbit radius  {lo:.3} .. {hi:.3} m");
    if let Some(e) = StudyReport::radius_error(&fo) {
        println!("radius error        {:.3} % of analytic", 100.0 * e);
    }
    if r.setup.transition.aoa {
        let (a, b) = StudyReport::slip_range(&r.samples);
        println!("slip angle          {:.3} .. {:.3} deg", a.to_degrees(), b.to_degrees());
    }
    if r.setup.initial.len() == 3 {
        match r.settling_orbits(2.0 * PI / 3.0, 10f64.to_radians()) {
            Some(o) => println!("spread 120 deg      after {o:.2} orbits"),
            None => println!("spread 120 deg      not reached"),
        }
    }
}

pub fn sim(common: &Common, args: &[String]) -> Result<()> {
    let file = load(common)?;
    let cfg = file.sim_config()?;
    let mut out = Outputs::create(&common.out)?;
    let log = run_episode(&cfg)?;
    let mut csv = Vec::new();
    write_csv(&log, &mut csv)?;
    out.write("log.csv", csv)?;
    write_sim_plots(&mut out, &log)?;
    if log.frames.iter().any(|f| f.time >= log.warmup) {
        let m = metrics(&log)?;
        out.write("metrics.csv", format!("{}\n{}\n", METRIC_HEADER, metric_row(&m)))?;
        print_metrics(&m);
    } else {
        println!("no frames after the {:.0} s warm-up; metrics skipped", log.warmup);
    }
    out.finish("sim", args, Some(cfg.seed), &file, format!("{cfg:?}"))
}

fn write_sim_plots(out: &mut Outputs, log: &EpisodeLog) -> Result<()> {
    let n = log.airships;
    let stride = (log.frame_rate.round() as usize).max(1);
    let mut chart = Chart::new("Ground track", "east [m]", "north [m]").equal();
    for m in 0..n {
        let pts = log.frames.iter().filter(|f| f.airship == m).step_by(stride).map(|f| (f.state.position.y, f.state.position.x)).collect();
        chart.add(Series::new(format!("airship {m}"), pts, m, Style::Line));
    }
    let subject = log.frames.iter().filter(|f| f.airship == 0).step_by(stride).map(|f| (f.subject.y, f.subject.x)).collect();
    chart.add(Series::new("subject", subject, 7, Style::Dashed));
    out.write("trajectory.svg", chart.render())?;

    let mut chart = Chart::new("Subject distance from the image centre", "time [s]", "pixels");
    for m in 0..n {
        let pts = log
            .frames
            .iter()
            .filter(|f| f.airship == m)
            .map(|f| match f.visibility {
                Visibility::InFov(d) => (f.time, d),
                Visibility::OutOfFov => (f.time, f64::NAN),
            })
            .collect();
        chart.add(Series::new(format!("airship {m}"), pts, m, Style::Line));
    }
    out.write("pixels.svg", chart.render())
}

const METRIC_HEADER: &str = "frames,visibility,mean_pixel,max_pixel,altitude_violations,separation_violations,lowest_altitude,closest_approach,loss_intervals,longest_loss,solo_loss_fraction,median_solve_ms,max_solve_ms,fallbacks,warmup";

fn metric_row(m: &Metrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.frames,
        m.visibility,
        m.mean_pixel,
        m.max_pixel,
        m.altitude_violations,
        m.separation_violations,
        m.lowest_altitude,
        m.closest_approach,
        m.loss_intervals.len(),
        m.longest_loss(),
        m.solo_loss_fraction(),
        m.median_solve_ms,
        m.max_solve_ms,
        m.fallbacks,
        m.warmup
    )
}

fn print_metrics(m: &Metrics) {
    println!("frames after {:.0} s warm-up  {}", m.warmup, m.frames);
    println!("visibility          {:.2} %", 100.0 * m.visibility);
    println!("pixel distance      mean {:.1}, max {:.1}", m.mean_pixel, m.max_pixel);
    println!("loss intervals      {} (longest {:.1} s, solo {:.0} %)", m.loss_intervals.len(), m.longest_loss(), 100.0 * m.solo_loss_fraction());
    println!("violations          altitude {}, separation {}", m.altitude_violations, m.separation_violations);
    println!("controller          {} fallbacks", m.fallbacks);
}

struct Cell {
    label: String,
    axis: &'static str,
    value: String,
    scenario: ScenarioFile,
}

fn cells(base: &ScenarioFile, s: &SweepArgs) -> Result<Vec<Cell>> {
    let cell = |axis: &'static str, value: String, f: &dyn Fn(&mut ScenarioFile)| {
        let mut scenario = base.clone();
        f(&mut scenario);
        Cell {
            label: format!("{axis}={value}"),
            axis,
            value,
            scenario,
        }
    };
    let mut out = Vec::new();
    match (s.preset, s.axis) {
        (Some(Preset::Sizes), _) => {
            for n in airform::experiments::FORMATION_SIZES {
                out.push(cell("airships", n.to_string(), &|f| {
                    f.formation.airships = Some(n);
                    f.wind.speed = Some(0.6);
                }));
            }
        }
        (Some(Preset::Wind), _) => {
            for w in airform::experiments::WIND_SWEEP {
                out.push(cell("wind", w.to_string(), &|f| {
                    f.formation.airships = Some(3);
                    f.wind.speed = Some(w);
                }));
            }
        }
        (Some(Preset::Moving), _) => {
            for kind in [SubjectKind::Stationary, SubjectKind::Course] {
                for w in [0.0, 0.6] {
                    let mut c = cell("subject", format!("{kind:?}").to_lowercase(), &|f| {
                        f.formation.airships = Some(3);
                        f.subject.kind = Some(kind);
                        f.wind.speed = Some(w);
                    });
                    c.label = format!("subject={} wind={w}", c.value);
                    out.push(c);
                }
            }
        }
        (None, Some(axis)) => {
            let values: Vec<String> = s.values.iter().flatten().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                bail!("empty value list");
            }
            for v in values {
                let c = match axis {
                    Axis::Wind => {
                        let w: f64 = v.parse().with_context(|| format!("wind value '{v}'"))?;
                        cell("wind", v, &|f| f.wind.speed = Some(w))
                    }
                    Axis::Airships => {
                        let n: usize = v.parse().with_context(|| format!("airship count '{v}'"))?;
                        cell("airships", v, &|f| f.formation.airships = Some(n))
                    }
                    Axis::Seed => {
                        let seed: u64 = v.parse().with_context(|| format!("seed '{v}'"))?;
                        cell("seed", v, &|f| f.sim.seed = Some(seed))
                    }
                    Axis::Subject => {
                        let kind = match v.as_str() {
                            "stationary" => SubjectKind::Stationary,
                            "course" => SubjectKind::Course,
                            other => bail!("subject value '{other}', expected stationary or course"),
                        };
                        cell("subject", v, &|f| f.subject.kind = Some(kind))
                    }
                };
                out.push(c);
            }
        }
        (None, None) => bail!("give --preset or --axis with --values"),
    }
    Ok(out)
}

pub fn sweep(common: &Common, s: &SweepArgs, threads: Option<usize>, args: &[String]) -> Result<()> {
    let base = load(common)?;
    let cells = cells(&base, s)?;
    let mut out = Outputs::create(&common.out)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    let results: Vec<Result<(Metrics, f64)>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let t = Instant::now();
                let cfg = c.scenario.sim_config()?;
                let log = run_episode(&cfg)?;
                let m = metrics(&log)?;
                info!("{} done in {:.1} s", c.label, t.elapsed().as_secs_f64());
                Ok((m, t.elapsed().as_secs_f64()))
            })
            .collect()
    });

    let mut table = format!("label,axis,value,{METRIC_HEADER},error\n");
    let blank = METRIC_HEADER.split(',').map(|_| "").collect::<Vec<_>>().join(",");
    let mut ok = Vec::new();
    let mut failed = 0;
    for (c, r) in cells.iter().zip(&results) {
        match r {
            Ok((m, _)) => {
                writeln!(table, "{},{},{},{},", c.label, c.axis, c.value, metric_row(m))?;
                ok.push(m);
            }
            Err(e) => {
                failed += 1;
                let msg = format!("{e:#}").replace([',', '\n'], ";");
                writeln!(table, "{},{},{},{blank},{msg}", c.label, c.axis, c.value)?;
            }
        }
    }
    out.write("sweep.csv", table)?;
    out.write("summary.csv", summary(&ok))?;

    println!("{:<28} {:>9} {:>9} {:>9} {:>6}", "cell", "visible%", "mean px", "max px", "losses");
    for (c, r) in cells.iter().zip(&results) {
        match r {
            Ok((m, _)) => println!("{:<28} {:>9.2} {:>9.1} {:>9.1} {:>6}", c.label, 100.0 * m.visibility, m.mean_pixel, m.max_pixel, m.loss_intervals.len()),
            Err(e) => println!("{:<28} failed: {e:#}", c.label),
        }
    }
    let walls: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().map(|(_, w)| *w)).collect();
    let resolved = format!("{:?}\ncell wall times {walls:?}", cells.iter().map(|c| &c.label).collect::<Vec<_>>());
    out.finish("sweep", args, base.sim.seed, &base, resolved)?;
    if failed > 0 {
        bail!("{failed} of {} cells failed", cells.len());
    }
    Ok(())
}

/// Mean, standard deviation and range of the headline metrics across cells.
fn summary(ms: &[&Metrics]) -> String {
    let mut s = String::from("metric,mean,std,min,max\n");
    let rows: [(&str, fn(&Metrics) -> f64); 4] = [
        ("visibility", |m| m.visibility),
        ("mean_pixel", |m| m.mean_pixel),
        ("max_pixel", |m| m.max_pixel),
        ("longest_loss", |m| m.longest_loss()),
    ];
    for (name, f) in rows {
        let v: Vec<f64> = ms.iter().map(|m| f(m)).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        let _ = writeln!(s, "{name},{mean},{},{lo},{hi}", var.sqrt());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use airform::sim::SubjectPath;

    fn args(preset: Option<Preset>, axis: Option<Axis>, values: &[&str]) -> SweepArgs {
        SweepArgs {
            axis,
            values: Some(values.iter().map(|s| s.to_string()).collect()),
            preset,
        }
    }

    #[test]
    fn presets_expand_to_the_experiment_grids() {
        let base = ScenarioFile::default();
        assert_eq!(cells(&base, &args(Some(Preset::Sizes), None, &[])).unwrap().len(), 4);
        let wind = cells(&base, &args(Some(Preset::Wind), None, &[])).unwrap();
        assert_eq!(wind.len(), 7);
        assert_eq!(wind[6].scenario.wind.speed, Some(3.0));
        let e3 = cells(&base, &args(Some(Preset::Moving), None, &[])).unwrap();
        assert_eq!(e3.len(), 4);
        assert!(matches!(e3[3].scenario.sim_config().unwrap().subject, SubjectPath::Course(_)));
    }

    #[test]
    fn axis_values_are_parsed() {
        let base = ScenarioFile::default();
        let c = cells(&base, &args(None, Some(Axis::Seed), &["1", " 2"])).unwrap();
        assert_eq!(c[1].scenario.sim.seed, Some(2));
        assert!(cells(&base, &args(None, Some(Axis::Wind), &[])).is_err());
        assert!(cells(&base, &args(None, Some(Axis::Airships), &["x"])).is_err());
        assert!(cells(&base, &args(None, None, &[])).is_err());
    }

    #[test]
    fn summary_statistics() {
        let base = Metrics {
            frames: 1,
            visibility: 1.0,
            mean_pixel: 10.0,
            max_pixel: 20.0,
            per_airship: vec![],
            altitude_violations: 0,
            separation_violations: 0,
            lowest_altitude: 5.0,
            closest_approach: 10.0,
            loss_intervals: vec![],
            median_solve_ms: 0.0,
            max_solve_ms: 0.0,
            fallbacks: 0,
            warmup: 0.0,
        };
        let other = Metrics { mean_pixel: 30.0, ..base.clone() };
        let s = summary(&[&base, &other]);
        let row = s.lines().find(|l| l.starts_with("mean_pixel")).unwrap();
        let cols: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[0], 20.0);
        assert!((cols[1] - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!((cols[2], cols[3]), (10.0, 30.0));
    }
}
