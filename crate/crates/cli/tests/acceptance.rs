//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use darboux_core::darboux::DarbouxReport;
use darboux_core::linalg::{canonical_form, Matrix, Vector};
use darboux_core::moser::{moser_invariant_drift, poincare_primitive, uniform_grid, MoserField};
use darboux_core::ode::{solution_interval, solve_picard, solve_rk4, PicardProblem};
use darboux_core::projective::ProjectiveMapFamily;
use darboux_core::sampling::Sampler;
use darboux_core::scenario::{parse_report, Scenario};
use darboux_core::symplectic::{
    f_dual_norm, f_norm, flat, psi_ji, LevelForm, MoserDeformation, SymplecticField,
};
use darboux_core::tower::{make_thread, LevelSpec, Tower, TowerSpec};

type Outcome = Result<String, String>;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trivial_darboux() -> Outcome {
    let s = load("trivial_2d.json");
    if s.tower.levels.len() != 3 {
        return Err("scenario is not a 3-level tower".into());
    }
    let (report, elapsed) = timed(|| s.run());
    let report = report.map_err(|e| e.to_string())?;
    let identity = report
        .samples
        .iter()
        .all(|p| p.trajectory.last().is_some_and(|q| q.x == p.point));
    check(
        report.passed() && identity && report.pullback.max <= 1e-12 && elapsed < Duration::from_secs(1),
        format!(
            "verdict {}, Phi = id: {identity}, residual {:.2e}, {:.2?}",
            report.verdict, report.pullback.max, elapsed
        ),
    )
}

fn run_timed(name: &str) -> Result<(Scenario, DarbouxReport, Duration), String> {
    let s = load(name);
    let (report, elapsed) = timed(|| s.run());
    Ok((s.clone(), report.map_err(|e| format!("{name}: {e}"))?, elapsed))
}

fn running_example(run: &Result<(Scenario, DarbouxReport, Duration), String>) -> Outcome {
    let (s, report, elapsed) = run.as_ref().map_err(Clone::clone)?;
    let tower = Arc::new(Tower::build(&s.tower).map_err(|e| e.to_string())?);
    let field = Arc::new(SymplecticField::from_spec(tower.clone(), &s.field).map_err(|e| e.to_string())?);
    let deformation = MoserDeformation::new(field);
    let eps = 0.3;
    let mut primitive_err = 0.0_f64;
    for sample in &report.samples {
        let x = &sample.point;
        let thread = make_thread(&tower, &Vector::from_column_slice(x)).map_err(|e| e.to_string())?;
        let alpha = poincare_primitive(&deformation, &thread, s.solver.quad_n).map_err(|e| e.to_string())?;
        let oracle = [-eps * x[0] * x[1] / 3.0, eps * x[0] * x[0] / 3.0];
        primitive_err = primitive_err
            .max((alpha.level(0)[0] - oracle[0]).abs())
            .max((alpha.level(0)[1] - oracle[1]).abs());
    }
    let setup_ok = s.domain.samples == 50
        && s.domain.radius == 0.5
        && s.solver.step == 1e-3
        && s.solver.jacobian == darboux_core::moser::JacobianMode::Analytic;
    check(
        setup_ok
            && report.passed()
            && report.pullback.max <= 1e-6
            && primitive_err <= 1e-9
            && *elapsed < Duration::from_secs(30),
        format!(
            "verdict {}, residual {:.2e}, primitive error {:.2e}, {:.2?}",
            report.verdict, report.pullback.max, primitive_err, elapsed
        ),
    )
}

fn four_dim(run: &Result<(Scenario, DarbouxReport, Duration), String>) -> Outcome {
    let (s, report, elapsed) = run.as_ref().map_err(Clone::clone)?;
    let dim_ok = s.tower.levels.iter().all(|l| l.dim == 4);
    check(
        dim_ok && report.passed() && report.pullback.max <= 1e-5 && *elapsed < Duration::from_secs(120),
        format!("verdict {}, residual {:.2e}, {:.2?}", report.verdict, report.pullback.max, elapsed),
    )
}

/// Max drift over the first few samples of a scenario at the given step.
fn coarse_drift(s: &Scenario, report: &DarbouxReport, step: f64) -> Result<f64, String> {
    let tower = Arc::new(Tower::build(&s.tower).map_err(|e| e.to_string())?);
    let field = Arc::new(SymplecticField::from_spec(tower.clone(), &s.field).map_err(|e| e.to_string())?);
    let moser = MoserField::from_field(field);
    let mut worst = 0.0_f64;
    for sample in report.samples.iter().take(5) {
        let x0 = make_thread(&tower, &Vector::from_column_slice(&sample.point)).map_err(|e| e.to_string())?;
        worst = worst.max(moser_invariant_drift(&moser, &x0, &uniform_grid(11), step).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn moser_invariant(runs: &[&Result<(Scenario, DarbouxReport, Duration), String>]) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for run in runs {
        let (s, report, _) = run.as_ref().map_err(Clone::clone)?;
        let name = s.name.clone().unwrap_or_default();
        let coarse = coarse_drift(s, report, 0.1)?;
        let halved = coarse_drift(s, report, 0.05)?;
        let ratio = coarse / halved;
        ok &= report.drift.max <= 1e-6 && report.options.drift_checkpoints == 11 && ratio >= 8.0;
        details.push(format!(
            "{name}: drift {:.2e} at step {:e}, halving 0.1->0.05 ratio {ratio:.1}",
            report.drift.max, report.options.step
        ));
    }
    check(ok, details.join("; "))
}

fn interval_formula() -> Outcome {
    let mut sampler = Sampler::new(5);
    let (mut tau_branch, mut bound_branch, mut mismatches) = (0, 0, 0);
    for k in 0..1000 {
        let tau = sampler.uniform(1e-3, 4.0);
        let mu = if k % 10 == 0 { 0.0 } else { sampler.uniform(0.0, 3.0) };
        let m1 = sampler.uniform(0.0, 3.0);
        let r = 1.0 / (m1 + mu);
        let oracle = if tau <= r {
            tau_branch += 1;
            tau
        } else {
            bound_branch += 1;
            r
        };
        match solution_interval(tau, mu, m1) {
            Ok(a) if a.to_bits() == oracle.to_bits() => {}
            _ => mismatches += 1,
        }
    }
    check(
        mismatches == 0 && tau_branch > 0 && bound_branch > 0,
        format!("1000 cases, {tau_branch} tau branch, {bound_branch} 1/(M1+mu) branch, {mismatches} mismatches"),
    )
}

fn picard_rk4() -> Outcome {
    let tower = Tower::build(&TowerSpec::inclusion(1, 1, |_| 1.0)).map_err(|e| e.to_string())?;
    let x0 = make_thread(&tower, &Vector::from_element(1, 1.0)).map_err(|e| e.to_string())?;
    let rhs = ProjectiveMapFamily::autonomous(1, |x| -x);
    let step = 1.0 / 1024.0;
    let rk = solve_rk4(&tower, &rhs, &x0, (0.0, 0.25), step).map_err(|e| e.to_string())?;
    let problem = PicardProblem { rhs, t0: 0.0, x0, tau: 0.25, mu: 1.0, m1: 1.0 };
    let pic = solve_picard(&tower, &problem, 512, 200, 1e-14).map_err(|e| e.to_string())?;
    let (mut e_rk, mut e_pic, mut mutual) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (t, s) in rk.times.iter().zip(&rk.states) {
        e_rk = e_rk.max((s.level(0)[0] - (-t).exp()).abs());
        let p = pic.state_at(*t).ok_or("Picard grid misses an RK4 node")?;
        mutual = mutual.max((s.level(0)[0] - p.level(0)[0]).abs());
    }
    for (t, s) in pic.times.iter().zip(&pic.states) {
        if *t >= 0.0 {
            e_pic = e_pic.max((s.level(0)[0] - (-t).exp()).abs());
        }
    }
    check(
        e_rk <= 1e-6 && e_pic <= 1e-6 && mutual <= 1e-6,
        format!("RK4 error {e_rk:.2e}, Picard error {e_pic:.2e}, mutual {mutual:.2e}"),
    )
}

fn random_spd(sampler: &mut Sampler, dim: usize) -> Vec<f64> {
    let a = Matrix::from_fn(dim, dim, |_, _| sampler.uniform(-1.0, 1.0));
    let g = &a * a.transpose() + Matrix::identity(dim, dim) * 0.5;
    g.transpose().as_slice().to_vec()
}

fn random_antisym(sampler: &mut Sampler, dim: usize) -> Matrix {
    let b = Matrix::from_fn(dim, dim, |_, _| sampler.uniform(-1.0, 1.0));
    canonical_form(dim).unwrap() + (&b - b.transpose()) * 0.2
}

fn psi_cocycle() -> Outcome {
    let mut sampler = Sampler::new(17);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let connect = |s: &mut Sampler| {
            let m = Matrix::identity(2, 2) + Matrix::from_fn(2, 2, |_, _| s.uniform(-0.3, 0.3));
            m.transpose().as_slice().to_vec()
        };
        let spec = TowerSpec {
            levels: vec![
                LevelSpec { dim: 2, gram: Some(random_spd(&mut sampler, 2)), connect: Some(connect(&mut sampler)) },
                LevelSpec { dim: 2, gram: Some(random_spd(&mut sampler, 2)), connect: Some(connect(&mut sampler)) },
                LevelSpec { dim: 2, gram: Some(random_spd(&mut sampler, 2)), connect: None },
            ],
            composites: Vec::new(),
            tol_thread: None,
        };
        let tower = Arc::new(Tower::build(&spec).map_err(|e| e.to_string())?);
        let eps = sampler.uniform(-0.3, 0.3);
        let forms = vec![
            LevelForm::linear_perturbation(random_antisym(&mut sampler, 2), 0, eps, (0, 1)),
            LevelForm::Constant(random_antisym(&mut sampler, 2)),
            LevelForm::linear_perturbation(random_antisym(&mut sampler, 2), 1, eps, (0, 1)),
        ];
        let field = SymplecticField::new(tower.clone(), forms, None).map_err(|e| e.to_string())?;
        let x = make_thread(&tower, &sampler.in_box(2, -0.5, 0.5)).map_err(|e| e.to_string())?;
        let alpha = sampler.in_box(2, -1.0, 1.0);
        let direct = psi_ji(&field, &x, 2, 0, &alpha).map_err(|e| e.to_string())?;
        let mid = psi_ji(&field, &x, 2, 1, &alpha).map_err(|e| e.to_string())?;
        let via = psi_ji(&field, &x, 1, 0, &mid).map_err(|e| e.to_string())?;
        worst = worst.max((direct - via).amax());
    }
    check(worst <= 1e-12, format!("100 draws, max residual {worst:.2e}"))
}

fn eq_alpha() -> Outcome {
    let names = ["trivial_2d.json", "perturbed_2d.json", "perturbed_2d_3level.json", "perturbed_4d.json", "degenerate_2d.json"];
    let mut sampler = Sampler::new(23);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut draws = 0;
    for (k, name) in names.iter().enumerate() {
        let s = load(name);
        let tower = Arc::new(Tower::build(&s.tower).map_err(|e| e.to_string())?);
        let field = SymplecticField::from_spec(tower.clone(), &s.field).map_err(|e| e.to_string())?;
        let per = if k < 4 { 200 } else { 1000 - 4 * 200 };
        for _ in 0..per {
            let top = sampler.in_unit_ball(tower.dim(tower.deepest())) * s.domain.radius;
            let x = make_thread(&tower, &top).map_err(|e| e.to_string())?;
            let level = (sampler.uniform(0.0, tower.depth() as f64) as usize).min(tower.depth() - 1);
            let v = sampler.in_box(tower.dim(level), -1.0, 1.0);
            let c = flat(&field, level, x.level(level), &v, 1.0).map_err(|e| e.to_string())?;
            let lhs = f_dual_norm(&field, level, x.level(level), &c).map_err(|e| e.to_string())?;
            worst_excess = worst_excess.max(lhs - tower.norm(level, &v));
            draws += 1;
        }
    }
    check(
        draws == 1000 && worst_excess <= 1e-12,
        format!("{draws} draws over {} scenarios, max excess {worst_excess:.2e}", names.len()),
    )
}

/// Roughly uniform Hopf-coordinate grid on the unit 3-sphere.
fn hopf_grid(rows: usize, k: f64) -> Vec<Vector> {
    let mut out = Vec::new();
    for r in 0..rows {
        let eta = (r as f64 + 0.5) * (PI / 2.0) / rows as f64;
        let a = ((k * eta.cos()).round() as usize).max(1);
        let b = ((k * eta.sin()).round() as usize).max(1);
        for i in 0..a {
            for j in 0..b {
                let (x1, x2) = (2.0 * PI * i as f64 / a as f64, 2.0 * PI * j as f64 / b as f64);
                out.push(Vector::from_column_slice(&[
                    eta.cos() * x1.cos(),
                    eta.cos() * x1.sin(),
                    eta.sin() * x2.cos(),
                    eta.sin() * x2.sin(),
                ]));
            }
        }
    }
    out
}

/// Cube of `m^3` points in the tangent space at `q`, projected back onto the sphere.
fn local_grid(q: &Vector, radius: f64, m: usize) -> Vec<Vector> {
    let n = q.len();
    let mut basis: Vec<Vector> = Vec::new();
    for k in 0..n {
        let mut e = Vector::zeros(n);
        e[k] = 1.0;
        let mut v = &e - q * q.dot(&e);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-6 {
            basis.push(v.normalize());
        }
        if basis.len() == n - 1 {
            break;
        }
    }
    let mut out = Vec::with_capacity(m.pow(3));
    let coord = |i: usize| -radius + 2.0 * radius * i as f64 / (m - 1) as f64;
    for i in 0..m {
        for j in 0..m {
            for l in 0..m {
                let p = q + &basis[0] * coord(i) + &basis[1] * coord(j) + &basis[2] * coord(l);
                out.push(p.normalize());
            }
        }
    }
    out
}

fn f_norm_oracle() -> Outcome {
    let mut sampler = Sampler::new(31);
    let mut worst = [0.0_f64; 2];
    let mut points = [0usize; 2];
    for (slot, dim) in [2usize, 4].into_iter().enumerate() {
        for _ in 0..20 {
            let gram = random_spd(&mut sampler, dim);
            let spec = TowerSpec {
                levels: vec![LevelSpec { dim, gram: Some(gram.clone()), connect: None }],
                composites: Vec::new(),
                tol_thread: None,
            };
            let tower = Arc::new(Tower::build(&spec).map_err(|e| e.to_string())?);
            let g = Matrix::from_row_slice(dim, dim, &gram);
            let s = random_antisym(&mut sampler, dim);
            let field = SymplecticField::uniform(tower, LevelForm::Constant(s.clone())).map_err(|e| e.to_string())?;
            let x = Vector::zeros(dim);
            let v = sampler.in_box(dim, -1.0, 1.0);
            let exact = f_norm(&field, 0, &x, &v).map_err(|e| e.to_string())?;
            // sup of |sigma(X, Y)| over Y on the G-unit sphere, by radial projection of grid points
            let value = |u: &Vector| {
                let y = u / u.dot(&(&g * u)).sqrt();
                (v.transpose() * &s * y)[(0, 0)].abs()
            };
            let best_of = |pts: &[Vector]| {
                pts.iter()
                    .map(|u| (value(u), u.clone()))
                    .fold((f64::NEG_INFINITY, Vector::zeros(dim)), |a, b| if b.0 > a.0 { b } else { a })
            };
            let (brute, used) = if dim == 2 {
                let grid: Vec<Vector> = (0..10_000)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / 10_000.0;
                        Vector::from_column_slice(&[th.cos(), th.sin()])
                    })
                    .collect();
                (best_of(&grid).0, grid.len())
            } else {
                let coarse = hopf_grid(12, 36.0);
                let (c_best, q) = best_of(&coarse);
                let fine = local_grid(&q, 0.16, 17);
                let f_best = best_of(&fine).0;
                (c_best.max(f_best), coarse.len() + fine.len())
            };
            points[slot] = used;
            worst[slot] = worst[slot].max((exact - brute).abs() / exact);
        }
    }
    check(
        worst.iter().all(|w| *w <= 1e-3) && points.iter().all(|p| *p <= 10_000),
        format!(
            "dim 2: {} points, max rel error {:.2e}; dim 4: {} points, max rel error {:.2e}",
            points[0], worst[0], points[1], worst[1]
        ),
    )
}

fn degenerate_detection() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report_path = dir.path().join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_darboux"))
        .arg("run")
        .arg(scenario_path("degenerate_2d.json"))
        .arg("--report")
        .arg(&report_path)
        .output()
        .map_err(|e| e.to_string())?
        .status;
    let text = std::fs::read_to_string(&report_path).map_err(|e| e.to_string())?;
    let report = parse_report(&text).map_err(|e| e.to_string())?;
    let h1 = &report.hypotheses.h1;
    check(
        status.code() == Some(2) && !report.passed() && h1.min_singular_value <= h1.sigma_min_tol,
        format!(
            "exit {:?}, verdict {}, H1 margin {:.2e} (tol {:.0e})",
            status.code(),
            report.verdict,
            h1.min_singular_value,
            h1.sigma_min_tol
        ),
    )
}

fn level_flow_consistency() -> Outcome {
    let s = load("perturbed_2d_3level.json");
    let report = s.run().map_err(|e| e.to_string())?;
    let inclusion = Tower::build(&s.tower).map_err(|e| e.to_string())?.is_inclusion();
    check(
        inclusion && s.tower.levels.len() == 3 && report.consistency.max <= 1e-9 && report.samples.iter().all(|p| p.error.is_none()),
        format!("3-level inclusion tower, max residual {:.2e}", report.consistency.max),
    )
}

fn main() {
    let running = run_timed("perturbed_2d.json");
    let four = run_timed("perturbed_4d.json");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("trivial Darboux chart", Box::new(trivial_darboux)),
        ("running example", Box::new(|| running_example(&running))),
        ("4D analogue", Box::new(|| four_dim(&four))),
        ("Moser invariant drift", Box::new(|| moser_invariant(&[&running, &four]))),
        ("interval formula", Box::new(interval_formula)),
        ("Picard/RK4 oracle equivalence", Box::new(picard_rk4)),
        ("psi cocycle", Box::new(psi_cocycle)),
        ("flat map norm inequality", Box::new(eq_alpha)),
        ("f_norm vs sphere grid", Box::new(f_norm_oracle)),
        ("degenerate detection", Box::new(degenerate_detection)),
        ("level-flow consistency", Box::new(level_flow_consistency)),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
