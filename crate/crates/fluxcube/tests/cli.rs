use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fluxcube::csvio::load_csv;
use fluxcube::model_file;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluxcube"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Short training so the command-line tests stay quick.
const QUICK: &str = r#"{"hidden_candidates":[4],"max_epochs":60,"warmup_epochs":10,"patience":20,"kmeans_restarts":3,"max_groups":3}"#;

fn setup() -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("quick.json");
    fs::write(&cfg, QUICK).unwrap();
    (dir, cfg)
}

fn synth(dir: &Path, scenario: &str, out: &str) {
    let o = run(dir, &["synth", "--scenario", scenario, "--out", out, "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn fit(dir: &Path, input: &str, model: &str, holdout: &str) -> Output {
    run(dir, &["fit", "--input", input, "--config", "quick.json", "--out", model, "--holdout", holdout, "--threads", "2"])
}

#[test]
fn synth_writes_one_row_per_cell_and_reingests() {
    let (dir, _) = setup();
    let d = dir.path();
    synth(d, "logistic-solo", "a.csv");
    let text = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 416);
    assert!(text.starts_with("date,location,keyword,value\n2010-01-04,"));

    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["spec"]["name"], "logistic-solo");
    assert_eq!(truth["step_days"], 7);

    let loaded = load_csv(&d.join("a.csv"), false).unwrap();
    let mut spec = fluxcube_core::synth::logistic_solo(4);
    spec.seed = 4;
    let generated = fluxcube_core::synth::generate(&spec).unwrap();
    assert_eq!(loaded.values(), generated.values());
    assert_eq!(truth["trajectory_sha256"], fluxcube::cli::trajectory_hash(generated.values()));

    let o = run(d, &["synth", "--scenario", "logistic-solo", "--out", "b.csv", "--seed", "4", "--truth", "b.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn synth_accepts_a_spec_file() {
    let (dir, _) = setup();
    let d = dir.path();
    let mut spec = fluxcube_core::synth::competition_pair(1);
    spec.steps = 30;
    fs::write(d.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let o = run(d, &["synth", "--spec", "spec.json", "--out", "c.csv", "--start-date", "2020-02-27", "--step-days", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let x = load_csv(&d.join("c.csv"), false).unwrap();
    assert_eq!((x.len_t(), x.locations(), x.keywords()), (30, 1, 2));
    assert_eq!(x.time_labels()[2], "2020-02-29");
}

#[test]
fn unknown_scenario_lists_the_names() {
    let (dir, _) = setup();
    let o = run(dir.path(), &["synth", "--scenario", "nope", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for name in fluxcube_core::synth::SCENARIO_NAMES {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let (dir, _) = setup();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["fit", "--out", "m.json"])), 1);
}

#[test]
fn malformed_csv_cites_the_line() {
    let (dir, _) = setup();
    let d = dir.path();
    fs::write(
        d.join("bad.csv"),
        "date,location,keyword,value\n2020-01-06,a,k,1\n2020-01-13,a,k,oops\n",
    )
    .unwrap();
    let o = fit(d, "bad.csv", "m.json", "0");
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!d.join("m.json").exists());
}

#[test]
fn training_failure_exits_two() {
    let (dir, _) = setup();
    let d = dir.path();
    synth(d, "competition-pair", "data.csv");
    fs::write(d.join("quick.json"), r#"{"hidden_candidates":[4],"max_epochs":50,"learning_rate":1e12,"clip_norm":1e12}"#).unwrap();
    let o = fit(d, "data.csv", "m.json", "0");
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn single_series_fits_one_group_and_round_trips() {
    let (dir, _) = setup();
    let d = dir.path();
    synth(d, "logistic-solo", "solo.csv");
    let o = fit(d, "solo.csv", "solo.json", "52");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = model_file::load(&d.join("solo.json")).unwrap();
    assert_eq!(model.group_count(), 1);
    assert_eq!(model.modeling_len(), 364);
    assert!(model.diffusion_series(0, 10).iter().flatten().all(|v| *v == 0.0));

    let o = run(d, &["explain", "--model", "solo.json", "--out-dir", "ex"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let flows: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ex/flows.json")).unwrap()).unwrap();
    assert_eq!(flows["series"].as_array().unwrap().len(), 0);
    for w in flows["windows"].as_array().unwrap() {
        assert!(w["flows"].as_array().unwrap().is_empty());
    }
}

#[test]
fn fit_forecast_evaluate_explain() {
    let (dir, _) = setup();
    let d = dir.path();
    synth(d, "two-group-flow", "data.csv");
    let o = fit(d, "data.csv", "model.json", "52");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("d_l") && summary.contains("selected"), "{summary}");

    let o = run(d, &["forecast", "--model", "model.json", "--horizon", "13", "--out", "fc.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fc = load_csv(&d.join("fc.csv"), false).unwrap();
    assert_eq!((fc.len_t(), fc.locations(), fc.keywords()), (13, 8, 3));
    let data = load_csv(&d.join("data.csv"), false).unwrap();
    assert_eq!(fc.time_labels(), &data.time_labels()[364..377]);

    for bad in ["0", "-3"] {
        let o = run(d, &["forecast", "--model", "model.json", "--horizon", bad, "--out", "x.csv"]);
        assert_eq!(code(&o), 1, "horizon {bad}");
    }

    let o = run(d, &["evaluate", "--model", "model.json", "--truth", "data.csv", "--out", "metrics.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("method,horizon,metric,value"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 3 * 2);
    assert!(metrics.contains("fluxcube,52,rmse,") && metrics.contains("seasonal-naive,13,mae,"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["units"], "normalized");
    assert_eq!(json["forecast_start"], data.time_labels()[364].as_str());

    let o = run(d, &["evaluate", "--model", "model.json", "--truth", "data.csv", "--out", "raw.csv", "--raw", "--horizons", "5,200"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let raw = fs::read_to_string(d.join("raw.csv")).unwrap();
    assert!(raw.contains("fluxcube,200,rmse,n/a"), "{raw}");

    synth(d, "competition-pair", "other.csv");
    let o = run(d, &["evaluate", "--model", "model.json", "--truth", "other.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("locations"), "{}", stderr(&o));

    let o = run(d, &["explain", "--model", "model.json", "--out-dir", "ex", "--top-k", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["interactions.json", "flows.json", "seasonality.csv", "groups.json"] {
        assert!(d.join("ex").join(f).is_file(), "{f}");
    }
    let groups: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ex/groups.json")).unwrap()).unwrap();
    assert_eq!(groups["locations"].as_array().unwrap().len(), 8);
    let inter: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ex/interactions.json")).unwrap()).unwrap();
    for loc in inter["locations"].as_array().unwrap() {
        assert!(loc["edges"].as_array().unwrap().len() <= 2);
    }
    let season = fs::read_to_string(d.join("ex/seasonality.csv")).unwrap();
    assert_eq!(season.lines().count(), 1 + 52 * 8 * 3);

    fs::write(d.join("plain"), "x").unwrap();
    let o = run(d, &["explain", "--model", "model.json", "--out-dir", "plain/sub"]);
    assert_eq!(code(&o), 1);
}

fn without_wall_time(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["model"]["report"]["wall_time_secs"] = serde_json::Value::Null;
    v
}

#[test]
fn fit_is_deterministic_and_forecasts_reload_exactly() {
    let (dir, _) = setup();
    let d = dir.path();
    synth(d, "competition-pair", "pair.csv");
    assert_eq!(code(&fit(d, "pair.csv", "m1.json", "52")), 0);
    let o = run(d, &["fit", "--input", "pair.csv", "--config", "quick.json", "--out", "m2.json", "--holdout", "52", "--threads", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(without_wall_time(&d.join("m1.json")), without_wall_time(&d.join("m2.json")));

    let o = run(d, &["fit", "--input", "pair.csv", "--config", "quick.json", "--out", "m3.json", "--holdout", "52", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    assert_ne!(without_wall_time(&d.join("m1.json")), without_wall_time(&d.join("m3.json")));

    for (model, out) in [("m1.json", "f1.csv"), ("m2.json", "f2.csv")] {
        assert_eq!(code(&run(d, &["forecast", "--model", model, "--horizon", "30", "--out", out])), 0);
    }
    assert_eq!(fs::read(d.join("f1.csv")).unwrap(), fs::read(d.join("f2.csv")).unwrap());

    let model = model_file::load(&d.join("m1.json")).unwrap();
    let direct = fluxcube_core::forecast::forecast(&model, &model.history, 30).unwrap();
    let reloaded = load_csv(&d.join("f1.csv"), false).unwrap();
    assert_eq!(direct.denormalized.as_deref(), Some(reloaded.values()));
}

#[test]
fn broken_model_files_are_input_errors() {
    let (dir, _) = setup();
    let d = dir.path();
    fs::write(d.join("junk.json"), "{\"format\":\"something-else\"}").unwrap();
    let o = run(d, &["forecast", "--model", "junk.json", "--horizon", "3", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    let o = run(d, &["explain", "--model", "absent.json", "--out-dir", "ex"]);
    assert_eq!(code(&o), 1);
}
