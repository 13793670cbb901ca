use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

fn gqda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gqda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// `g` Gaussian classes in `p` dimensions, class `k` centred at `shift·k` on
/// every axis with standard deviation `1 + k/2`.
fn gaussian_csv(dir: &Path, name: &str, g: usize, p: usize, n: usize, shift: f64, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = (1..=p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + ",label\n";
    for i in 0..g * n {
        let k = i % g;
        let row: Vec<String> = (0..p)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (shift * k as f64 + (1.0 + 0.5 * k as f64) * z).to_string()
            })
            .collect();
        text += &format!("{},c{k}\n", row.join(","));
    }
    let file = dir.join(name);
    fs::write(&file, text).unwrap();
    file
}

#[test]
fn fit_and_predict_separable_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_csv(dir.path(), "toy.csv", 2, 3, 40, 20.0, 1);
    let model = path(dir.path(), "model.json");
    let o = gqda(&["fit", data.to_str().unwrap(), "--out", &model]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("resubstitution_me_percent=0\n"), "{}", stdout(&o));

    let preds = path(dir.path(), "pred.csv");
    let o = gqda(&["predict", &model, data.to_str().unwrap(), "--out", &preds]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("me_percent=0\n"));
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,predicted,margin_c0,margin_c1"));
    for (i, line) in lines.enumerate() {
        let predicted = line.split(',').nth(1).unwrap();
        assert_eq!(predicted, format!("c{}", i % 2));
    }
}

#[test]
fn constant_column_is_rejected_unless_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("const.csv");
    let mut text = String::from("a,flat,b,label\n");
    for i in 0..30 {
        let k = i % 2;
        text += &format!(
            "{},{},{},{}\n",
            (i * 7 % 11) as f64 + 10.0 * k as f64,
            3.5,
            (i * i % 13) as f64,
            k
        );
    }
    fs::write(&file, text).unwrap();
    let model = path(dir.path(), "m.json");
    let o = gqda(&["fit", file.to_str().unwrap(), "--out", &model]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("\"flat\""), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = gqda(&[
        "fit",
        file.to_str().unwrap(),
        "--drop-constant-columns",
        "--out",
        &model,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["features"], serde_json::json!(["a", "b"]));
}

#[test]
fn four_class_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_csv(dir.path(), "four.csv", 4, 3, 50, 2.0, 2);
    let model = path(dir.path(), "m.json");
    let o = gqda(&[
        "fit",
        data.to_str().unwrap(),
        "--estimator",
        "mcd",
        "--seed",
        "5",
        "--out",
        &model,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(doc["classes"].as_array().unwrap().len(), 4);
    let c = doc["c_star"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
}

#[test]
fn predict_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let train = gaussian_csv(dir.path(), "p3.csv", 2, 3, 30, 3.0, 3);
    let other = gaussian_csv(dir.path(), "p2.csv", 2, 2, 30, 3.0, 4);
    let model = path(dir.path(), "m.json");
    assert!(gqda(&["fit", train.to_str().unwrap(), "--out", &model])
        .status
        .success());
    // Without recorded column names the mismatch surfaces as a dimension error.
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("features");
    fs::write(&model, doc.to_string()).unwrap();
    let o = gqda(&[
        "predict",
        &model,
        other.to_str().unwrap(),
        "--out",
        &path(dir.path(), "p.csv"),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

struct ClassParams {
    location: DVector<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

fn class_params(doc: &Value) -> Vec<ClassParams> {
    doc["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            let loc: Vec<f64> = c["location"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect();
            let rows: Vec<Vec<f64>> = c["scatter"]
                .as_array()
                .unwrap()
                .iter()
                .map(|r| r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
                .collect();
            let p = loc.len();
            let s = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
            ClassParams {
                location: DVector::from_vec(loc),
                log_det: s.determinant().ln(),
                inverse: s.try_inverse().unwrap(),
            }
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, k| if v[k] < v[b] { k } else { b })
}

#[test]
fn zero_and_unit_thresholds_differ_where_mmd_and_qda_differ() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_csv(dir.path(), "d.csv", 2, 3, 300, 1.0, 6);
    let model = path(dir.path(), "m.json");
    assert!(gqda(&["fit", data.to_str().unwrap(), "--out", &model]).status.success());
    let doc: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();

    let mut predictions = Vec::new();
    for c in [0.0, 1.0] {
        let mut d = doc.clone();
        d["c_star"] = serde_json::json!(c);
        let m = path(dir.path(), &format!("m{c}.json"));
        fs::write(&m, d.to_string()).unwrap();
        let out = path(dir.path(), &format!("p{c}.csv"));
        assert!(gqda(&["predict", &m, data.to_str().unwrap(), "--out", &out])
            .status
            .success());
        let labels: Vec<String> = fs::read_to_string(&out)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect();
        predictions.push(labels);
    }

    let params = class_params(&doc);
    let names: Vec<String> = doc["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap().to_string())
        .collect();
    let text = fs::read_to_string(&data).unwrap();
    let mut differing = 0;
    for (i, line) in text.lines().skip(1).enumerate() {
        let x = DVector::from_iterator(3, line.split(',').take(3).map(|v| v.parse::<f64>().unwrap()));
        let d: Vec<f64> = params
            .iter()
            .map(|c| {
                let r = &x - &c.location;
                (r.transpose() * &c.inverse * &r)[(0, 0)]
            })
            .collect();
        let q: Vec<f64> = d.iter().zip(&params).map(|(d, c)| d + c.log_det).collect();
        let mmd = &names[argmin(&d)];
        let qda = &names[argmin(&q)];
        assert_eq!(&predictions[0][i], mmd, "row {i}");
        assert_eq!(&predictions[1][i], qda, "row {i}");
        differing += usize::from(mmd != qda);
    }
    assert!(differing > 0, "the two rules never disagree on this sample");
}

#[test]
fn simulate_reports_field_path_for_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"classes": [{"family": "normal", "location": [0, 0], "scatter": [[1, 0], [0, 1]]},
                        {"family": "normal", "location": [1, 1], "scatter": [[1, 0], [0, 1]]}],
            "n_train": 50, "n_test": -4, "estimators": ["classical"], "replications": 2, "seed": 1}"#,
    )
    .unwrap();
    let o = gqda(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        &path(dir.path(), "out"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_test"), "{}", stderr(&o));

    let o = gqda(&["simulate", "--config", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("noseed.json");
    fs::write(
        &cfg,
        r#"{"classes": [{"family": "normal", "location": [0, 0], "scatter": [[1, 0], [0, 1]]},
                        {"family": "normal", "location": [1, 1], "scatter": [[2, 0], [0, 2]]}],
            "n_train": 50, "n_test": 50, "estimators": ["classical"], "replications": 2}"#,
    )
    .unwrap();
    let out = path(dir.path(), "out");
    let o = gqda(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = gqda(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out-dir",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(report.starts_with("estimator,replication,me_percent,c_star,failed\n"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn simulate_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for jobs in ["1", "3"] {
        let out = path(dir.path(), &format!("j{jobs}"));
        let o = gqda(&[
            "simulate",
            "--config",
            "two-class-normal-hard-10",
            "--replications",
            "4",
            "--estimators",
            "classical,mcd,sd",
            "--seed",
            "77",
            "--jobs",
            jobs,
            "--out-dir",
            &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read(Path::new(&out).join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(String::from_utf8_lossy(&reports[0]).lines().count(), 1 + 3 * 4);
}

#[test]
fn real_bench_shape_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_csv(dir.path(), "real.csv", 3, 2, 40, 2.0, 8);
    let d = data.to_str().unwrap();
    let o = gqda(&[
        "real-bench",
        d,
        "--replications",
        "3",
        "--out-dir",
        &path(dir.path(), "x"),
    ]);
    assert_eq!(o.status.code(), Some(2), "seed is mandatory");

    let o = gqda(&[
        "real-bench",
        d,
        "--seed",
        "1",
        "--label-column",
        "class",
        "--out-dir",
        &path(dir.path(), "x"),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let mut reports = Vec::new();
    for jobs in ["1", "2"] {
        let out = path(dir.path(), &format!("r{jobs}"));
        let o = gqda(&[
            "real-bench",
            d,
            "--seed",
            "9",
            "--replications",
            "3",
            "--jobs",
            jobs,
            "--out-dir",
            &out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read_to_string(Path::new(&out).join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0].lines().count(), 1 + 7 * 3);
}

#[test]
fn summarize_formats_mean_and_sample_sd() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    fs::write(
        &report,
        "estimator,replication,me_percent,c_star,failed\nGQDA,0,6,1,false\nGQDA,1,7,1,false\nGQDA,2,8,1,false\nGQDA,3,,,true\n",
    )
    .unwrap();
    let out = path(dir.path(), "summary.csv");
    let o = gqda(&["summarize", report.to_str().unwrap(), "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("7.000 (1.000)"), "{}", stdout(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.contains("GQDA,4,1,7,1,7,1\n"), "{csv}");

    fs::write(&report, "a,b\n1,2\n").unwrap();
    assert_eq!(gqda(&["summarize", report.to_str().unwrap()]).status.code(), Some(3));
}
