use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use entrhythm_core::arima::{self, ArimaModel};
use entrhythm_core::covariates::{self, StaticProfile};
use entrhythm_core::entropy;
use entrhythm_core::eval::{self, UserData};
use entrhythm_core::gam::{self, FitOptions, FittedAdditiveModel};
use entrhythm_core::grid::build_grid;
use entrhythm_core::persist::{self, GamScope, SavedModel};
use entrhythm_core::synth::{generate_cohort, ProfileMixer};
use entrhythm_core::trace::{self, TraceDataset};

use crate::config::RunConfig;
use crate::{CliError, FitKind};

pub const ENTROPY_FILE: &str = "entropy.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const GAP_FILE: &str = "gap_report.csv";

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(input(format!("cannot open {}", path.display())))
}

/// Writes `path` through a buffered writer, then flushes.
fn write_file<E: std::fmt::Display>(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(input(format!("cannot create {}", parent.display())))?;
    }
    let file = File::create(path).map_err(input(format!("cannot create {}", path.display())))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(input(format!("writing {}", path.display())))?;
    w.flush().map_err(input(format!("writing {}", path.display())))
}

/// File-name-safe form of a user id.
fn file_stem(user_id: &str) -> String {
    user_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn selected_traces(cfg: &RunConfig) -> Result<(Vec<TraceDataset>, Vec<(String, trace::GapReport)>), CliError> {
    let path = cfg.require_locations()?;
    let all = trace::parse_traces(open(path)?).map_err(input(path.display()))?;
    let reports = all
        .iter()
        .map(|ds| {
            trace::gap_statistics(ds, cfg.utc_offset)
                .map(|g| (ds.user_id.clone(), g))
                .map_err(input(&ds.user_id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let selected = trace::select_users(&all, &cfg.selection);
    if selected.is_empty() {
        return Err(CliError::EmptySelection(format!(
            "no user passes the selection ({} users read): duration >= {} days and longest gap <= {} days",
            all.len(),
            cfg.selection.min_days,
            cfg.selection.max_gap_days
        )));
    }
    Ok((selected, reports))
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let (selected, reports) = selected_traces(cfg)?;
    write_file(&cfg.out.join(GAP_FILE), |w| -> Result<(), std::io::Error> {
        writeln!(w, "user_id,duration_days,max_gap_days,selected")?;
        for (user, g) in &reports {
            let kept = selected.iter().any(|d| &d.user_id == user);
            writeln!(w, "{user},{:.6},{},{}", g.duration_days, g.max_gap_days, kept as u8)?;
        }
        Ok(())
    })?;
    write_file(&cfg.out.join("selected_locations.csv"), |w| trace::write_traces(&selected, w))?;
    println!("{} of {} users selected", selected.len(), reports.len());
    Ok(())
}

pub fn entropy(cfg: &RunConfig) -> Result<(), CliError> {
    let campus = cfg.require_campus()?;
    let (selected, _) = selected_traces(cfg)?;
    let grid = build_grid(&selected, cfg.cell_degrees, cfg.cell_degrees, cfg.grid_padding).map_err(input("grid"))?;
    let users = eval::prepare_users(&selected, &grid, campus, cfg.window_seconds, cfg.utc_offset).map_err(input("entropy"))?;
    let sequences: Vec<_> = users.iter().map(|u| u.entropy.clone()).collect();
    let features: Vec<_> = users.iter().map(|u| (u.user_id.clone(), u.features.clone())).collect();
    write_file(&cfg.out.join(ENTROPY_FILE), |w| entropy::write_entropy_csv(&sequences, w))?;
    write_file(&cfg.out.join(FEATURES_FILE), |w| covariates::write_features_csv(&features, w))?;
    write_file(&cfg.out.join(GRID_FILE), |w| grid.write_csv(w))?;
    println!("grid {} x {} cells", grid.n, grid.m);
    println!("user_id\twindows\tmissing");
    for s in &sequences {
        println!("{}\t{}\t{}", s.user_id, s.len(), s.missing_count());
    }
    Ok(())
}

fn load_users(cfg: &RunConfig) -> Result<Vec<UserData>, CliError> {
    let ep = cfg.data_dir.join(ENTROPY_FILE);
    let fp = cfg.data_dir.join(FEATURES_FILE);
    let sequences = entropy::read_entropy_csv(open(&ep)?).map_err(input(ep.display()))?;
    let mut features = covariates::read_features_csv(open(&fp)?).map_err(input(fp.display()))?;
    let users = sequences
        .into_iter()
        .map(|seq| {
            let pos = features
                .iter()
                .position(|(u, _)| *u == seq.user_id)
                .ok_or_else(|| CliError::Input(format!("{}: no features for user {}", fp.display(), seq.user_id)))?;
            let (_, f) = features.swap_remove(pos);
            UserData::new(seq, f).map_err(input(fp.display()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if users.is_empty() {
        return Err(CliError::EmptySelection(format!("{} holds no users", ep.display())));
    }
    Ok(users)
}

fn load_profiles(cfg: &RunConfig) -> Result<Vec<StaticProfile>, CliError> {
    let path = cfg
        .profiles
        .as_deref()
        .ok_or_else(|| CliError::Input("global model needs a profiles file (`--profiles` or `profiles =`)".into()))?;
    covariates::load_profiles(open(path)?).map_err(input(path.display()))
}

fn save(path: &Path, model: &SavedModel) -> Result<(), CliError> {
    write_file(path, |w| persist::save_model(model, w))
}

fn models_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("models")
}

pub fn fit(cfg: &RunConfig, kind: FitKind) -> Result<(), CliError> {
    let users = load_users(cfg)?;
    let options = FitOptions::default();
    match kind {
        FitKind::GlobalGam => {
            let profiles = load_profiles(cfg)?;
            let inputs: Vec<(&UserData, std::ops::Range<usize>)> = users.iter().map(|u| (u, 0..u.entropy.len())).collect();
            let (model, notes) = eval::fit_global(&inputs, &profiles, &cfg.global, &options)
                .map_err(|e| CliError::AllFailed(format!("global model failed: {e}")))?;
            for n in &notes {
                eprintln!("note: {n}");
            }
            let saved = SavedModel::Gam {
                trained_on: GamScope::Global {
                    users: users.iter().map(|u| u.user_id.clone()).collect(),
                },
                model: Box::new(model.clone()),
            };
            save(&models_dir(cfg).join("global_gam.json"), &saved)?;
            let labelled = [("global".to_string(), &model)];
            write_file(&cfg.out.join("global_gam_coefficients.csv"), |w| gam::write_coefficient_csv(w, &labelled))?;
            write_file(&cfg.out.join("global_gam_smooths.csv"), |w| gam::write_smooth_csv(w, &labelled))?;
            print_coefficients(&model);
            Ok(())
        }
        FitKind::IndividualGam => {
            let fits: Vec<(String, Result<FittedAdditiveModel, String>)> = users
                .iter()
                .map(|u| {
                    let r = eval::fit_individual(u, 0..u.entropy.len(), &cfg.individual, &options)
                        .map(|(m, _)| m)
                        .map_err(|e| e.to_string());
                    (u.user_id.clone(), r)
                })
                .collect();
            let ok = report_failures(&fits, "individual GAM")?;
            for (user, m) in &ok {
                let saved = SavedModel::Gam {
                    trained_on: GamScope::Individual { user_id: user.clone() },
                    model: Box::new((*m).clone()),
                };
                save(&models_dir(cfg).join("individual_gam").join(format!("{}.json", file_stem(user))), &saved)?;
            }
            let labelled: Vec<(String, &FittedAdditiveModel)> = ok.iter().map(|(u, m)| (u.clone(), *m)).collect();
            write_file(&cfg.out.join("individual_gam_coefficients.csv"), |w| gam::write_coefficient_csv(w, &labelled))?;
            write_file(&cfg.out.join("individual_gam_smooths.csv"), |w| gam::write_smooth_csv(w, &labelled))?;
            println!("{} of {} individual models fitted", ok.len(), fits.len());
            Ok(())
        }
        FitKind::Arima => {
            let comparison = cfg.comparison();
            let fits: Vec<(String, Result<ArimaModel, String>)> = users
                .iter()
                .map(|u| {
                    let r = eval::fit_arima(u, 0..u.entropy.len(), &comparison)
                        .map(|(m, _)| m)
                        .map_err(|e| e.to_string());
                    (u.user_id.clone(), r)
                })
                .collect();
            let ok = report_failures(&fits, "ARIMA")?;
            for (user, m) in &ok {
                let saved = SavedModel::Arima {
                    user_id: user.clone(),
                    model: (*m).clone(),
                };
                save(&models_dir(cfg).join("arima").join(format!("{}.json", file_stem(user))), &saved)?;
            }
            let rows: Vec<(String, ArimaModel)> = ok.iter().map(|(u, m)| (u.clone(), (*m).clone())).collect();
            write_file(&cfg.out.join("arima_summary.csv"), |w| arima::write_summary_csv(w, &rows))?;
            println!("user_id\torder");
            for (u, m) in &rows {
                println!("{u}\t{}", m.order);
            }
            Ok(())
        }
    }
}

/// Prints per-user failures; errors when every user failed.
fn report_failures<'a, M>(fits: &'a [(String, Result<M, String>)], what: &str) -> Result<Vec<(String, &'a M)>, CliError> {
    let mut ok = Vec::new();
    for (user, r) in fits {
        match r {
            Ok(m) => ok.push((user.clone(), m)),
            Err(e) => eprintln!("{what} failed for {user}: {e}"),
        }
    }
    if ok.is_empty() {
        return Err(CliError::AllFailed(format!("{what} failed for all {} users", fits.len())));
    }
    Ok(ok)
}

fn print_coefficients(model: &FittedAdditiveModel) {
    println!("{:<20} {:>12} {:>12} {:>10} {:>12}", "term", "estimate", "std_error", "z", "p");
    for r in model.coefficient_table() {
        println!("{:<20} {:>12.5} {:>12.5} {:>10.3} {:>12.3e}", r.name, r.estimate, r.std_error, r.z, r.p);
    }
    for ((name, edf), lambda) in model.smooth_names().iter().zip(&model.edf).zip(&model.lambdas) {
        println!("s({name}): edf {edf:.3}, lambda {lambda:e}");
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let users = load_users(cfg)?;
    let profiles = match &cfg.profiles {
        Some(_) => load_profiles(cfg)?,
        None => Vec::new(),
    };
    let outcome = eval::run_comparison(&users, &profiles, &cfg.comparison()).map_err(input("evaluation"))?;
    for n in &outcome.global_notes {
        eprintln!("note: {n}");
    }
    let report = &outcome.report;
    write_file(&cfg.out.join(REPORT_FILE), |w| report.write_csv(w))?;
    for r in report.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!("{} {} failed: {}", r.user_id, r.model, r.failure.as_deref().unwrap_or_default());
    }
    println!("{:<16} {:>10} {:>10} {:>7} {:>7}", "model", "MAE", "RMSE", "users", "failed");
    for a in &report.averages {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<16} {:>10} {:>10} {:>7} {:>7}", a.model.as_str(), fmt(a.mae), fmt(a.rmse), a.n_users, a.n_failed);
    }
    if report.rows.iter().all(|r| !r.is_ok()) {
        return Err(CliError::AllFailed("every model failed for every user".into()));
    }
    Ok(())
}

pub fn curves(cfg: &RunConfig, model_path: &Path, terms: &[String], points: usize) -> Result<(), CliError> {
    let saved = persist::load_model(open(model_path)?).map_err(input(model_path.display()))?;
    let model = match saved {
        SavedModel::Gam { model, .. } => model,
        SavedModel::Arima { .. } => {
            return Err(CliError::Input(format!(
                "{} holds an ARIMA model, which has no smooth terms",
                model_path.display()
            )))
        }
    };
    let available = model.smooth_names();
    let terms: Vec<String> = if terms.is_empty() { available.clone() } else { terms.to_vec() };
    for t in &terms {
        if !available.contains(t) {
            return Err(CliError::Input(format!(
                "unknown term `{t}`; available smooth terms: {}",
                available.join(", ")
            )));
        }
    }
    for t in &terms {
        let curve = model.smooth_curve(t, points).map_err(input(t))?;
        let path = cfg.out.join(format!("curve_{}.csv", file_stem(t)));
        write_file(&path, |w| gam::write_curve_csv(w, t, &curve))?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, users: usize, days: u32, job_effect: bool) -> Result<(), CliError> {
    if users == 0 {
        return Err(CliError::Input("--users must be at least 1".into()));
    }
    let mixer = ProfileMixer {
        days,
        job_effect,
        ..ProfileMixer::default()
    };
    let (traces, profiles) = generate_cohort(cfg.seed, users, &mixer).map_err(input("synth"))?;
    let locations = cfg.out.join("locations.csv");
    let profiles_path = cfg.out.join("profiles.csv");
    write_file(&locations, |w| trace::write_traces(&traces, w))?;
    write_file(&profiles_path, |w| covariates::write_profiles(&profiles, w))?;
    let abs = |p: &Path| std::fs::canonicalize(p).map_err(input(p.display()));
    let (min_lat, max_lat, min_lon, max_lon) = mixer.campus_box();
    let conf = format!(
        "# synthetic cohort: {users} users, {days} days, base seed {}\nlocations = {}\nprofiles = {}\nutc_offset_seconds = {}\ncampus.min_lat = {min_lat}\ncampus.max_lat = {max_lat}\ncampus.min_lon = {min_lon}\ncampus.max_lon = {max_lon}\n",
        cfg.seed,
        abs(&locations)?.display(),
        abs(&profiles_path)?.display(),
        trace::DEFAULT_UTC_OFFSET,
    );
    write_file(&cfg.out.join("synth.conf"), |w| w.write_all(conf.as_bytes()))?;
    println!("{} users, {} records", traces.len(), traces.iter().map(|t| t.len()).sum::<usize>());
    Ok(())
}
