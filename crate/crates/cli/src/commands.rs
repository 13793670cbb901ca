use std::fs;
use std::path::Path;

use gqda::data::{self, CsvTable, LabeledDataset, RealExperiment};
use gqda::estimators::{EstimatorKind, EstimatorSpec};
use gqda::gqda::GqdaModel;
use gqda::simulate::{self, EstimatorEntry, ExperimentConfig, Report};
use serde::Deserialize;

use crate::error::CliError;
use crate::{DataArgs, FitArgs, PredictArgs, RealBenchArgs, SimulateArgs, SummarizeArgs};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))
}

fn load(path: &Path, args: &DataArgs) -> Result<LabeledDataset> {
    let mut data = data::load_csv(path, &args.label_column, args.feature_columns.as_deref())?;
    if args.drop_constant_columns {
        let dropped = data.drop_constant_columns();
        if !dropped.is_empty() {
            eprintln!("dropped constant columns: {}", dropped.join(", "));
        }
    } else {
        data.check_constant_columns()?;
    }
    Ok(data)
}

/// Parse a comma-separated estimator list such as `classical,mcd,sd`.
fn parse_estimators(list: &str) -> Result<Vec<EstimatorSpec>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<EstimatorSpec>()
                .map_err(|e| CliError::usage(format!("--estimators: {e}")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::usage("--estimators: list is empty"))
            } else {
                Ok(v)
            }
        })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

fn print_summary(report: &Report) {
    println!(
        "{:<6} {:>5} {:>6} {:>18} {:>10} {:>8}",
        "est", "R", "failed", "ME% mean (sd)", "median", "c*"
    );
    for s in &report.summaries {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<6} {:>5} {:>6} {:>18} {:>10} {:>8}",
            s.estimator,
            s.replications,
            s.failures,
            format!("{} ({})", f(s.mean_me_percent), f(s.sd_me_percent)),
            f(s.median_me_percent),
            f(s.mean_c_star),
        );
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let spec: EstimatorSpec = match &args.config {
        Some(path) => {
            let text = read_text(path)?;
            let spec: EstimatorSpec =
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            spec.validate()?;
            spec
        }
        None => args.estimator.parse()?,
    };
    let data = load(&args.data, &args.columns)?;
    let mut rng = simulate::estimator_rng(args.seed, spec.kind);
    let (model, selection) = GqdaModel::fit(&data, &spec, &mut rng)?;
    let me = 100.0 * model.misclassification_error(&data)?;
    write_file(&args.out, &model.to_json()?)?;
    println!(
        "classes={} estimator={} c_star={} selection={:?}",
        model.n_classes(),
        spec.label(),
        model.c_star(),
        selection.outcome
    );
    println!("resubstitution_me_percent={me}");
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let model = GqdaModel::from_json(&read_text(&args.model)?)
        .map_err(|e| CliError::data(format!("{}: {e}", args.model.display())))?;
    let table = CsvTable::read(&args.data)?;

    let label_idx = match &args.label_column {
        Some(col) => Some(table.column(col)?),
        None => table.has_column("label").then(|| table.column("label")).transpose()?,
    };
    let cols: Vec<usize> = match (&args.feature_columns, model.feature_names().is_empty()) {
        (Some(sel), _) => table.selection(sel)?,
        (None, false) => model
            .feature_names()
            .iter()
            .map(|n| table.column(n))
            .collect::<data::Result<_>>()?,
        (None, true) => (0..table.headers.len()).filter(|&j| Some(j) != label_idx).collect(),
    };
    let x = table.numeric(&cols)?;
    let predicted = model.classify_rows(&x)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string(), "predicted".to_string()];
    header.extend(model.classes().iter().map(|c| format!("margin_{c}")));
    w.write_record(&header).map_err(CliError::data)?;
    for (i, &k) in predicted.iter().enumerate() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let mut record = vec![i.to_string(), model.classes()[k].clone()];
        record.extend(model.margins(&row)?.iter().map(|m| m.to_string()));
        w.write_record(&record).map_err(CliError::data)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write_file(&args.out, &String::from_utf8(bytes).expect("csv output is utf-8"))?;

    println!("rows={}", predicted.len());
    if let Some(j) = label_idx {
        let truth = table.strings(j)?;
        let wrong = predicted
            .iter()
            .zip(&truth)
            .filter(|(&k, t)| &model.classes()[k] != *t)
            .count();
        println!("me_percent={}", 100.0 * wrong as f64 / predicted.len() as f64);
    }
    Ok(())
}

/// A config file path, or the name of a built-in preset.
fn resolve_config(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(ExperimentConfig::from_path(path)?);
    }
    simulate::preset(arg).ok_or_else(|| {
        let names: Vec<&str> = simulate::PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::usage(format!(
            "--config {arg:?} is neither a file nor a preset ({})",
            names.join(", ")
        ))
    })
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    if args.list_presets {
        for (name, _) in simulate::PRESETS {
            println!("{name}");
        }
        return Ok(());
    }
    let Some(config_arg) = &args.config else {
        if args.table1 {
            return table1_grid(&args);
        }
        return Err(CliError::usage(
            "simulate needs --config (a file or preset name) or --table1",
        ));
    };
    let mut config = resolve_config(config_arg)?;
    if let Some(list) = &args.estimators {
        config.estimators = parse_estimators(list)?
            .iter()
            .map(|s| EstimatorEntry::Spec(s.clone()))
            .collect();
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    config.table1 |= args.table1;
    config.validate()?;

    let report = simulate::run_experiment(&config, args.seed, args.jobs)?;
    report.write_to(&args.out_dir)?;
    print_summary(&report);
    Ok(())
}

/// Threshold diagnostic on the two-class design over pure, mild and hard
/// contamination of the training set alone and of both sets.
fn table1_grid(args: &SimulateArgs) -> Result<()> {
    if args.estimators.is_some() {
        return Err(CliError::usage(
            "the --table1 grid uses the classical estimator only; drop --estimators",
        ));
    }
    let reps = args.replications.unwrap_or(50);
    let mut summary = csv::Writer::from_writer(Vec::new());
    let mut detail = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::data(e);
    summary
        .write_record([
            "scenario",
            "replications",
            "failures",
            "mean_c_star",
            "mean_me_percent",
            "sd_me_percent",
            "mean_c_test",
            "mean_me_test_percent",
        ])
        .map_err(csv_err)?;
    detail
        .write_record([
            "scenario",
            "replication",
            "c_star",
            "me_percent",
            "c_test",
            "me_test_percent",
            "failed",
        ])
        .map_err(csv_err)?;
    let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for scenario in simulate::table1_scenarios() {
        let config = simulate::table1_config(&scenario, reps);
        let report = simulate::run_experiment(&config, args.seed, args.jobs)?;
        let s = &report.summaries[0];
        summary
            .write_record([
                scenario.name.clone(),
                s.replications.to_string(),
                s.failures.to_string(),
                f(s.mean_c_star),
                f(s.mean_me_percent),
                f(s.sd_me_percent),
                f(s.mean_c_test),
                f(s.mean_me_test_percent),
            ])
            .map_err(csv_err)?;
        for r in &report.records {
            detail
                .write_record([
                    scenario.name.clone(),
                    r.replication.to_string(),
                    f(r.c_star),
                    f(r.me_percent),
                    f(r.c_test),
                    f(r.me_test_percent),
                    r.failed().to_string(),
                ])
                .map_err(csv_err)?;
        }
        let g = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<16} c*={:>6} ME%={:>7}  c_test={:>6} ME_test%={:>7}",
            scenario.name,
            g(s.mean_c_star),
            g(s.mean_me_percent),
            g(s.mean_c_test),
            g(s.mean_me_test_percent)
        );
    }
    let finish = |w: csv::Writer<Vec<u8>>| String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
    write_file(&args.out_dir.join("table1.csv"), &finish(summary))?;
    write_file(&args.out_dir.join("table1_replications.csv"), &finish(detail))?;
    Ok(())
}

/// Optional JSON settings for `real-bench`; flags override these.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfig {
    name: Option<String>,
    estimators: Option<Vec<EstimatorEntry>>,
    replications: Option<usize>,
    train_fraction: Option<f64>,
    flip_fraction: Option<f64>,
    seed: Option<u64>,
}

pub fn real_bench(args: RealBenchArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => serde_json::from_str::<BenchConfig>(&read_text(path)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        None => BenchConfig::default(),
    };
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::usage("real-bench needs --seed (or `seed` in the config)"))?;
    let estimators = match (&args.estimators, &file.estimators) {
        (Some(list), _) => parse_estimators(list)?,
        (None, Some(entries)) => entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.resolve()
                    .map_err(|m| CliError::usage(format!("estimators[{i}]: {m}")))
            })
            .collect::<Result<_>>()?,
        (None, None) => EstimatorKind::ALL.into_iter().map(EstimatorSpec::new).collect(),
    };
    let name = file.name.clone().unwrap_or_else(|| {
        args.data
            .file_stem()
            .map_or("real".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut cfg = RealExperiment::new(name, estimators, seed);
    if let Some(r) = args.replications.or(file.replications) {
        cfg.replications = r;
    }
    if let Some(t) = args.train_fraction.or(file.train_fraction) {
        cfg.train_fraction = t;
    }
    if let Some(f) = args.flip_fraction.or(file.flip_fraction) {
        cfg.flip_fraction = f;
    }
    if cfg.replications == 0 {
        return Err(CliError::usage("--replications must be at least 1"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(CliError::usage(format!(
            "--train-fraction {} outside (0, 1)",
            cfg.train_fraction
        )));
    }
    if !(0.0..1.0).contains(&cfg.flip_fraction) {
        return Err(CliError::usage(format!(
            "--flip-fraction {} outside [0, 1)",
            cfg.flip_fraction
        )));
    }

    let data = load(&args.data, &args.columns)?;
    if data.n_classes() < 2 {
        return Err(CliError::data(format!(
            "need at least two classes, found {}",
            data.n_classes()
        )));
    }
    let report = data::run_real_experiment(&data, &cfg, args.jobs)?;
    report.write_to(&args.out_dir)?;
    print_summary(&report);
    Ok(())
}

pub fn summarize(args: SummarizeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", args.report.display())))?;
    let name = args.report.display().to_string();
    let report = Report::from_csv(name.clone(), &text).map_err(|e| CliError::data(format!("{name}: {e}")))?;
    print_summary(&report);
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "estimator",
            "replications",
            "failures",
            "mean_me_percent",
            "sd_me_percent",
            "median_me_percent",
            "mean_c_star",
        ])
        .map_err(CliError::data)?;
        let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for s in &report.summaries {
            w.write_record([
                s.estimator.clone(),
                s.replications.to_string(),
                s.failures.to_string(),
                f(s.mean_me_percent),
                f(s.sd_me_percent),
                f(s.median_me_percent),
                f(s.mean_c_star),
            ])
            .map_err(CliError::data)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
        write_file(out, &String::from_utf8(bytes).expect("utf-8"))?;
    }
    Ok(())
}
