//! Acceptance suite. Every criterion prints one PASS/FAIL line to stderr.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use entrhythm_core::arima::{auto_select, fit_css, ArimaOrder};
use entrhythm_core::entropy::{normalized_entropy, window_occupancy, TimeWindow};
use entrhythm_core::eval::{mae, rmse};
use entrhythm_core::gam::{fit, Family, FitOptions, LambdaSelection, ModelSpec, PenalizedProblem, Table};
use entrhythm_core::grid::{CellIndex, GridSpec};
use entrhythm_core::trace::LocationRecord;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

const OCCUPANCY_WINDOWS: usize = 10_000;
const OCCUPANCY_SUM_TOL: f64 = 1e-9;
const OCCUPANCY_ORACLE_TOL: f64 = 2.0 / 3600.0;
const OCCUPANCY_BUDGET: Duration = Duration::from_secs(30);
const ENTROPY_TOL: f64 = 1e-9;
const GAM_NORMAL_EQ_TOL: f64 = 1e-8;
const GAM_SIN_MIN_R: f64 = 0.95;
const GAM_FD_REL_TOL: f64 = 1e-4;
const GAM_BUDGET: Duration = Duration::from_secs(120);
const ARIMA_COEF_TOL: f64 = 0.1;
const ARIMA_MIN_RATE: usize = 95;
const ARIMA_SEEDS: u64 = 100;
const ARIMA_N: usize = 2000;
const ARIMA_BUDGET: Duration = Duration::from_secs(180);
const MAE_GAP_MAX: f64 = 0.15;
const JOB_P_MAX: f64 = 0.01;
const PIPELINE_USERS: usize = 12;
const PIPELINE_BUDGET: Duration = Duration::from_secs(300);

fn report(id: u32, name: &str, pass: bool, detail: String) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{verdict}] criterion {id}: {name}: {detail}");
    pass
}

#[test]
fn c1_occupancy_partition() {
    let started = Instant::now();
    let grid = GridSpec::new(46.0, 6.0, 0.0025, 0.0025, 4, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_sum, mut worst_oracle) = (0.0f64, 0.0f64);
    for _ in 0..OCCUPANCY_WINDOWS {
        let t_start = 1_522_623_600 + rng.random_range(0..1000) * 3600;
        let window = TimeWindow { k: 1, t_start, t_end: t_start + 3600 };
        let n = rng.random_range(1..=8);
        let mut offsets: Vec<i64> = Vec::new();
        while offsets.len() < n {
            let o = rng.random_range(0..3600);
            if !offsets.contains(&o) {
                offsets.push(o);
            }
        }
        offsets.sort_unstable();
        let records: Vec<LocationRecord> = offsets
            .iter()
            .map(|o| {
                let (ci, cj) = (rng.random_range(0..3), rng.random_range(0..3));
                LocationRecord::new(46.0 + (ci as f64 + 0.5) * 0.0025, 6.0 + (cj as f64 + 0.5) * 0.0025, t_start + o).unwrap()
            })
            .collect();
        let occ = window_occupancy(&records, &grid, &window).unwrap();
        let total: f64 = occ.iter().map(|o| o.proportion).sum();
        worst_sum = worst_sum.max((total - 1.0).abs());

        // every second of the window goes to the record nearest in time
        let mut oracle: BTreeMap<CellIndex, f64> = BTreeMap::new();
        for s in 0..3600 {
            let centre = s as f64 + 0.5;
            let nearest = offsets
                .iter()
                .enumerate()
                .min_by(|a, b| (*a.1 as f64 - centre).abs().total_cmp(&(*b.1 as f64 - centre).abs()))
                .unwrap()
                .0;
            let cell = grid.cell_of(records[nearest].latitude, records[nearest].longitude).unwrap();
            *oracle.entry(cell).or_default() += 1.0 / 3600.0;
        }
        for (cell, p) in &oracle {
            let got = occ.iter().find(|o| o.cell == *cell).map_or(0.0, |o| o.proportion);
            worst_oracle = worst_oracle.max((got - p).abs());
        }
        for o in &occ {
            if !oracle.contains_key(&o.cell) {
                worst_oracle = worst_oracle.max(o.proportion);
            }
        }
    }
    let elapsed = started.elapsed();
    let pass = worst_sum <= OCCUPANCY_SUM_TOL && worst_oracle <= OCCUPANCY_ORACLE_TOL && elapsed < OCCUPANCY_BUDGET;
    assert!(report(
        1,
        "occupancy partition",
        pass,
        format!("{OCCUPANCY_WINDOWS} windows, max |sum-1| {worst_sum:.2e}, max oracle gap {worst_oracle:.2e} (tol {OCCUPANCY_ORACLE_TOL:.2e}), {elapsed:.1?}")
    ));
}

#[test]
fn c2_entropy_bounds_and_anchors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut in_bounds = true;
    for _ in 0..5000 {
        let (n, m) = (rng.random_range(1..8), rng.random_range(2..8));
        let k = rng.random_range(1..=n * m);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let h = normalized_entropy(&p, n * m).unwrap().unwrap();
        in_bounds &= (0.0..=100.0).contains(&h);
    }
    let single = normalized_entropy(&[1.0], 16).unwrap().unwrap();
    let two_on_four = normalized_entropy(&[0.5, 0.5], 4).unwrap().unwrap();
    let mut worst_uniform = 0.0f64;
    for (n, m) in [(2, 2), (3, 5), (10, 10), (46, 25)] {
        for k in 1..=(n * m).min(40) {
            let h = normalized_entropy(&vec![1.0 / k as f64; k], n * m).unwrap().unwrap();
            let expected = 100.0 * (k as f64).log2() / ((n * m) as f64).log2();
            worst_uniform = worst_uniform.max((h - expected).abs());
        }
    }
    let pass = in_bounds && single == 0.0 && (two_on_four - 50.0).abs() <= ENTROPY_TOL && worst_uniform <= ENTROPY_TOL;
    assert!(report(
        2,
        "entropy bounds and anchors",
        pass,
        format!("bounds {in_bounds}, single cell {single}, 2 of 2x2 {two_on_four}, uniform max err {worst_uniform:.2e}")
    ));
}

fn gamma_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    Gamma::new(5.0, mean / 5.0).unwrap().sample(rng)
}

fn random_problem(rng: &mut ChaCha8Rng) -> PenalizedProblem {
    let n = rng.random_range(15..40);
    let p = rng.random_range(2..6);
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
    let eta = &x * DVector::from_vec(beta);
    let y = eta.map(|e| gamma_draw(rng, (1.0 + e).exp()));
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let penalty = a.transpose() * a * rng.random_range(0.0..2.0);
    PenalizedProblem::new(Family::Gamma, x, y, penalty)
}

fn pearson_r(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn c3_gam_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut monotone = 0;
    for _ in 0..50 {
        let prob = random_problem(&mut rng);
        let r = prob.solve(None, 200, 1e-12).unwrap();
        if r.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) {
            monotone += 1;
        }
    }

    let n = 300;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
    let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a.cos() + 0.5 * b + rng.random_range(-0.3..0.3)).collect();
    let t = Table::new().with_column("x", x).unwrap().with_column("g", g).unwrap();
    let mut spec = ModelSpec::gamma().smooth("x", 8).factor("g");
    spec.family = Family::Gaussian;
    let opts = FitOptions {
        lambda: LambdaSelection::Fixed(vec![0.37]),
        ..FitOptions::default()
    };
    let m = fit(&spec, &t, &y, &opts).unwrap();
    let xm = m.design.matrix(&t).unwrap();
    let lhs = xm.transpose() * &xm + &m.design.penalties().unwrap()[0] * 0.37;
    let direct = lhs.lu().solve(&(xm.transpose() * DVector::from_vec(y))).unwrap();
    let normal_eq_err = direct.iter().zip(&m.coefficients).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let hours: Vec<f64> = (0..5000).map(|_| rng.random_range(0..24) as f64).collect();
    let resp: Vec<f64> = hours.iter().map(|h| gamma_draw(&mut rng, (1.0 + (2.0 * PI * h / 24.0).sin()).exp())).collect();
    let sin_model = fit(
        &ModelSpec::gamma().smooth("hourNb", 10),
        &Table::new().with_column("hourNb", hours).unwrap(),
        &resp,
        &FitOptions::default(),
    )
    .unwrap();
    let curve = sin_model.smooth_curve("hourNb", 100).unwrap();
    let fitted: Vec<f64> = curve.iter().map(|c| c.fit).collect();
    let truth: Vec<f64> = curve.iter().map(|c| (2.0 * PI * c.x / 24.0).sin()).collect();
    let r = pearson_r(&fitted, &truth);

    let mut worst_fd = 0.0f64;
    for _ in 0..20 {
        let prob = random_problem(&mut rng);
        let p = prob.x.ncols();
        let beta = DVector::from_fn(p, |_, _| rng.random_range(-0.5..0.5));
        let grad = prob.gradient(&beta);
        for j in 0..p {
            let h = 1e-6 * (1.0 + beta[j].abs());
            let (mut up, mut down) = (beta.clone(), beta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (prob.objective(&up) - prob.objective(&down)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - grad[j]).abs() / grad[j].abs().max(1.0));
        }
    }
    let elapsed = started.elapsed();
    let pass = monotone == 50
        && normal_eq_err <= GAM_NORMAL_EQ_TOL
        && r >= GAM_SIN_MIN_R
        && worst_fd < GAM_FD_REL_TOL
        && elapsed < GAM_BUDGET;
    assert!(report(
        3,
        "GAM correctness",
        pass,
        format!("(a) monotone {monotone}/50, (b) normal-equation gap {normal_eq_err:.2e}, (c) r = {r:.4}, (d) max FD rel err {worst_fd:.2e}, {elapsed:.1?}")
    ));
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

#[test]
fn c4_arima_recovery() {
    let started = Instant::now();
    let e = noise(41, ARIMA_N + 200);
    let mut x = vec![0.0; e.len()];
    for t in 1..e.len() {
        x[t] = 0.7 * x[t - 1] + e[t];
    }
    let ar: Vec<f64> = x[200..].iter().map(|v| v + 30.0).collect();
    let phi = fit_css(&ar, ArimaOrder::new(1, 0, 0)).unwrap().phi[0];
    let e = noise(42, ARIMA_N + 1);
    let ma: Vec<f64> = (1..e.len()).map(|t| 10.0 + e[t] - 0.5 * e[t - 1]).collect();
    let theta = fit_css(&ma, ArimaOrder::new(0, 0, 1)).unwrap().theta[0];

    let (mut walks, mut whites) = (0, 0);
    for seed in 0..ARIMA_SEEDS {
        let e = noise(1000 + seed, ARIMA_N);
        if auto_select(&e, ArimaOrder::default()).unwrap().order == ArimaOrder::new(0, 0, 0) {
            whites += 1;
        }
        let mut acc = 0.0;
        let walk: Vec<f64> = e.iter().map(|v| {
            acc += v;
            acc
        })
        .collect();
        if auto_select(&walk, ArimaOrder::default()).unwrap().order.d == 1 {
            walks += 1;
        }
    }
    let elapsed = started.elapsed();
    let pass = (phi - 0.7).abs() <= ARIMA_COEF_TOL
        && (theta - 0.5).abs() <= ARIMA_COEF_TOL
        && walks >= ARIMA_MIN_RATE
        && whites >= ARIMA_MIN_RATE
        && elapsed < ARIMA_BUDGET;
    assert!(report(
        4,
        "ARIMA recovery and selection",
        pass,
        format!("phi {phi:.4}, theta {theta:.4}, random walk d=1 {walks}/{ARIMA_SEEDS}, white noise (0,0,0) {whites}/{ARIMA_SEEDS}, {elapsed:.1?}")
    ));
}

fn entrhythm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_entrhythm")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = entrhythm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// `synth → entropy → fit × 3 → evaluate` into `dir`.
fn pipeline(dir: &Path) {
    let d = dir.to_str().unwrap();
    let conf = dir.join("synth.conf");
    let c = conf.to_str().unwrap();
    run_ok(&["synth", "--out", d, "--seed", "0", "--users", &PIPELINE_USERS.to_string()]);
    run_ok(&["entropy", "--config", c, "--out", d]);
    for kind in ["global-gam", "individual-gam", "arima"] {
        run_ok(&["fit", kind, "--config", c, "--out", d]);
    }
    run_ok(&["evaluate", "--config", c, "--out", d]);
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| headers.iter().map(String::from).zip(r.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or(f64::NAN)
}

#[test]
fn c5_c6_pipeline_and_metrics() {
    let fixed_mae = mae(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
    let fixed_rmse = rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();
    pipeline(tmp.path());
    let elapsed = started.elapsed();

    let rows = csv_rows(&tmp.path().join("report.csv"));
    let scored: Vec<_> = rows.iter().filter(|r| !r["mae"].is_empty()).collect();
    let rmse_ge_mae = scored.iter().all(|r| num(r, "rmse") >= num(r, "mae"));
    let metrics_pass = fixed_mae == 2.0 && (fixed_rmse - 5f64.sqrt()).abs() < 1e-15 && rmse_ge_mae && !scored.is_empty();
    let c5 = report(
        5,
        "metric sanity",
        metrics_pass,
        format!("errors [1,3] -> MAE {fixed_mae}, RMSE {fixed_rmse:.6}; RMSE >= MAE on {} scored report rows: {rmse_ge_mae}", scored.len()),
    );

    let avg = |model: &str| {
        rows.iter()
            .find(|r| r["user_id"] == "AVERAGE" && r["model"] == model)
            .map_or(f64::NAN, |r| num(r, "mae"))
    };
    let (global, individual, arima) = (avg("global_gam"), avg("individual_gam"), avg("arima"));
    let gap = (global - individual).abs() / individual;
    let shape_ok = rows.len() == 3 * PIPELINE_USERS + 3;
    let coefs = csv_rows(&tmp.path().join("global_gam_coefficients.csv"));
    let job = coefs.iter().find(|r| r["term"] == "job[1]");
    let (job_est, job_p) = job.map_or((f64::NAN, f64::NAN), |r| (num(r, "estimate"), num(r, "p")));
    let individual_coefs = csv_rows(&tmp.path().join("individual_gam_coefficients.csv"));
    let no_profiles_in_individual = individual_coefs.iter().all(|r| !r["term"].starts_with("job"));
    let pass = shape_ok
        && gap < MAE_GAP_MAX
        && job_est > 0.0
        && job_p < JOB_P_MAX
        && no_profiles_in_individual
        && elapsed < PIPELINE_BUDGET;
    let c6 = report(
        6,
        "end-to-end protocol",
        pass,
        format!(
            "{} report rows; average MAE global {global:.4}, individual {individual:.4}, arima {arima:.4}; relative gap {gap:.3} (max {MAE_GAP_MAX}); job estimate {job_est:.3}, p {job_p:.2e}; {elapsed:.1?}",
            rows.len()
        ),
    );
    assert!(c5 && c6);
}

fn output_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                files.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

#[test]
fn c7_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let files = output_files(a.path());
    let same_listing = files == output_files(b.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let pass = same_listing && differing.is_empty() && files.len() > 10;
    assert!(report(
        7,
        "determinism",
        pass,
        format!("{} CSV/JSON outputs compared, same listing {same_listing}, differing {differing:?}", files.len())
    ));
}
