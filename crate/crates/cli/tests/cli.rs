use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/net_2_16_16_3.onlab");

fn onlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = onlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn dir(tmp: &tempfile::TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

const QUICK: [&str; 4] = ["--set", "train.epochs=3", "--set", "data.n_per_class=40"];

#[test]
fn fixture_theorem_check_is_exact_in_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir(&tmp, "vt");
    ok(&["verify-theorem1", "--model", FIXTURE, "--set", "analysis.samples=25", "--out", s(&out)]);
    let (header, rows) = csv_rows(&out.join("equivalence.csv"));
    assert_eq!(header, ["sample_id", "p", "q", "eps", "iter", "cosine", "in_cell", "sigma_pga", "sigma_power"]);
    let in_cell: Vec<_> = rows.iter().filter(|r| r[6] == "true").collect();
    assert!(!in_cell.is_empty());
    for r in in_cell {
        let cos: f64 = r[5].parse().unwrap();
        assert!(cos >= 1.0 - 1e-9, "{r:?}");
        let (a, b): (f64, f64) = (r[7].parse().unwrap(), r[8].parse().unwrap());
        assert!((a - b).abs() <= 1e-9 * b, "{r:?}");
    }
    // all nine (p, q) pairs appear
    let pairs: std::collections::BTreeSet<_> = rows.iter().map(|r| (r[1].clone(), r[2].clone())).collect();
    assert_eq!(pairs.len(), 9);
}

#[test]
fn zero_weight_regularizers_reproduce_standard_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let base = dir(&tmp, "std");
    ok(&[&["train", "--out", s(&base)], &QUICK[..]].concat());
    let want = fs::read(base.join("metrics.csv")).unwrap();
    for obj in ["adversarial", "dd_snr", "global_snr", "dd_onr"] {
        let out = dir(&tmp, obj);
        let set = format!("train.objective={obj}");
        ok(&[&["train", "--out", s(&out), "--set", &set, "--set", "train.weight=0"], &QUICK[..]].concat());
        assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), want, "{obj}");
    }
}

#[test]
fn accuracy_at_zero_matches_training_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let trained = dir(&tmp, "train");
    ok(&[&["train", "--out", s(&trained)], &QUICK[..]].concat());
    let (_, metrics) = csv_rows(&trained.join("metrics.csv"));
    let clean = &metrics.last().unwrap()[2];
    let out = dir(&tmp, "acc");
    let model = trained.join("model.onlab");
    ok(&[
        &[
            "analyze",
            "accuracy",
            "--model",
            s(&model),
            "--method",
            "standard",
            "--set",
            "analysis.split=train",
            "--set",
            "analysis.samples=0",
            "--set",
            "analysis.eps_grid=[0.0, 0.2, 0.5]",
            "--out",
            s(&out),
        ],
        &QUICK[..],
    ]
    .concat());
    let (header, rows) = csv_rows(&out.join("accuracy.csv"));
    assert_eq!(header, ["method", "eps", "accuracy", "stderr"]);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("standard", "0.0"));
    assert_eq!(&rows[0][2], clean);
    let acc: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(acc.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn analyses_write_their_schemas_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let schemas = [
        ("spectrum", "spectrum.csv", vec!["sample_id", "rank", "sigma"]),
        ("alignment", "alignment.csv", vec!["sample_id", "rank", "cosine"]),
        ("linearity", "linearity.csv", vec!["sample_id", "direction_kind", "radius", "deviation"]),
        ("topsv", "topsv.csv", vec!["sample_id", "direction_kind", "radius", "sigma"]),
        ("activations", "activations.csv", vec!["base_kind", "eps", "shared_fraction_mean", "stderr"]),
    ];
    for (kind, file, header) in schemas {
        let mut outputs = Vec::new();
        for (tag, threads) in [("a", "1"), ("b", "2"), ("c", "1")] {
            let out = dir(&tmp, &format!("{kind}-{tag}"));
            ok(&[
                "analyze",
                kind,
                "--model",
                FIXTURE,
                "--threads",
                threads,
                "--set",
                "analysis.samples=8",
                "--set",
                "analysis.draws=5",
                "--out",
                s(&out),
            ]);
            let (h, rows) = csv_rows(&out.join(file));
            assert_eq!(h, header);
            assert!(!rows.is_empty(), "{kind}");
            outputs.push(fs::read(out.join(file)).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]), "{kind} not reproducible");
    }
}

#[test]
fn in_cell_linearity_deviation_vanishes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir(&tmp, "lin");
    ok(&["analyze", "linearity", "--model", FIXTURE, "--set", "analysis.samples=10", "--out", s(&out)]);
    let (_, rows) = csv_rows(&out.join("linearity.csv"));
    // The smallest radii stay inside the base cell for the fixture.
    let smallest: Vec<f64> = rows.iter().filter(|r| r[2] == rows[0][2]).map(|r| r[3].parse().unwrap()).collect();
    assert!(smallest.iter().all(|d| *d <= 1e-10), "{smallest:?}");
}

#[test]
fn manifest_records_provenance_and_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir(&tmp, "run");
    ok(&[&["train", "--out", s(&out), "--set", "seed=11"], &QUICK[..]].concat());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["train"]["epochs"], 3);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["model.onlab", "metrics.csv"]);
    use sha2::Digest as _;
    let digest = format!("{:x}", sha2::Sha256::digest(fs::read(out.join("metrics.csv")).unwrap()));
    assert_eq!(m["outputs"][1]["sha256"], digest.as_str());

    let again = dir(&tmp, "again");
    ok(&[&["train", "--out", s(&again), "--set", "seed=11"], &QUICK[..]].concat());
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), fs::read(again.join("manifest.json")).unwrap());
}

#[test]
fn generated_dataset_round_trips_through_data_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = dir(&tmp, "data");
    ok(&["gen-data", "--out", s(&data), "--set", "data.n_per_class=40"]);
    let csv_path = data.join("dataset.csv");
    let (header, rows) = csv_rows(&csv_path);
    assert_eq!(header, ["split", "label", "x0", "x1"]);
    assert_eq!(rows.len(), 120);

    let generated = dir(&tmp, "gen");
    let loaded = dir(&tmp, "load");
    ok(&[&["train", "--out", s(&generated)], &QUICK[..]].concat());
    let path_set = format!("data.path=\"{}\"", csv_path.display());
    ok(&[&["train", "--out", s(&loaded), "--set", &path_set], &QUICK[..]].concat());
    assert_eq!(
        fs::read(generated.join("metrics.csv")).unwrap(),
        fs::read(loaded.join("metrics.csv")).unwrap()
    );
}

#[test]
fn failures_exit_with_documented_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir(&tmp, "x");
    let cases: [(Vec<&str>, i32, &str); 5] = [
        (vec!["train", "--set", "train.no_such_key=1"], 2, "config"),
        (vec!["train", "--set", "data.kind=spirals"], 2, "config"),
        (vec!["train", "--set", "train.learning_rate=1e300", "--set", "train.epochs=2"], 3, "numerical"),
        (vec!["analyze", "spectrum", "--model", "/definitely/missing.onlab"], 4, "io"),
        (vec!["train", "--config", "/definitely/missing.toml"], 4, "io"),
    ];
    for (args, code, kind) in cases {
        let res = onlab(&[&args[..], &["--out", s(&out)]].concat());
        assert_eq!(res.status.code(), Some(code), "{args:?}");
        let line = String::from_utf8(res.stderr).unwrap();
        let last = line.lines().last().unwrap();
        let v: serde_json::Value = serde_json::from_str(last).unwrap();
        assert_eq!(v["error"]["kind"], kind);
        assert_eq!(v["error"]["code"], code);
    }
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, "seed = 3\n[data]\nn_per_class = 40\n[train]\nepochs = 2\nobjective = \"adversarial\"\nweight = 1.0\n[attack]\neps = 0.2\n").unwrap();
    let out = dir(&tmp, "run");
    ok(&["train", "--config", s(&cfg), "--set", "train.epochs=4", "--out", s(&out)]);
    let (_, rows) = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 5);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["attack"]["eps"], 0.2);
    assert_eq!(m["config"]["train"]["objective"], "adversarial");
}

#[test]
fn sweep_writes_one_row_and_metrics_file_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir(&tmp, "sweep");
    ok(&[
        &[
            "sweep",
            "--set",
            "train.objective=adversarial",
            "--set",
            "analysis.sweep_param=attack.eps",
            "--set",
            "analysis.sweep_lo=0.1",
            "--set",
            "analysis.sweep_hi=1.0",
            "--set",
            "analysis.sweep_n=3",
            "--set",
            "analysis.samples=20",
            "--out",
            s(&out),
        ],
        &QUICK[..],
    ]
    .concat());
    let (header, rows) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header, ["param", "value", "val_accuracy", "robust_accuracy", "robust_stderr"]);
    assert_eq!(rows.len(), 3);
    let values: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((values[0] - 0.1).abs() < 1e-12 && (values[2] - 1.0).abs() < 1e-12);
    for j in 0..3 {
        assert!(out.join(format!("metrics_{j:02}.csv")).is_file());
    }
}
