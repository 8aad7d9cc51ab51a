//! End-to-end runs of the `mixsel` binary on small panels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixsel_cli::manifest::{sha256_hex, Manifest};
use mixsel_cli::tables::{DemandTable, FitTable};
use serde_json::json;

fn mixsel_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixsel")).current_dir(dir).args(args).output().expect("binary runs")
}

fn mixsel(args: &[&str]) -> Output {
    mixsel_in(Path::new("."), args)
}

fn ok_in(dir: &Path, args: &[&str]) -> Output {
    let out = mixsel_in(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn ok(args: &[&str]) -> Output {
    ok_in(Path::new("."), args)
}

fn small_config(dir: &Path, k_range: &[usize]) -> PathBuf {
    let cfg = json!({
        "seed": 11,
        "dgp": { "n_markets": 250, "draws": 3 },
        "first_stage": { "k_range": k_range, "em": { "n_restarts": 2 } },
        "second_stage": { "columns": ["ols", "2sls", "heckman", "semiparametric", "mixture:2"] },
        "montecarlo": { "replications": 2 }
    });
    let path = dir.join("config.in.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Run every subcommand inside `root` with relative paths, so two roots see
/// identical command lines.
fn pipeline(root: &Path) {
    small_config(root, &[1, 2]);
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "config.in.json"];
        full.extend_from_slice(args);
        ok_in(root, &full);
    };
    run(&["--output-dir", "sim", "simulate"]);
    run(&["--output-dir", "fit", "fit-entry", "--panel", "sim/panel.csv"]);
    run(&["--output-dir", "sel", "select-k", "--panel", "sim/panel.csv"]);
    run(&["--output-dir", "est", "estimate-demand", "--panel", "sim/panel.csv", "--first-stage", "fit/mixture_k2.json"]);
    run(&["--set", "dgp.n_markets=150", "--output-dir", "mc", "montecarlo"]);
    run(&["--output-dir", "rep", "report", "--input", "est"]);
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in std::fs::read_dir(root).unwrap() {
        let sub = sub.unwrap().path();
        if !sub.is_dir() {
            continue;
        }
        for f in std::fs::read_dir(&sub).unwrap() {
            let f = f.unwrap().path();
            let key = format!("{}/{}", sub.file_name().unwrap().to_string_lossy(), f.file_name().unwrap().to_string_lossy());
            out.insert(key, std::fs::read(&f).unwrap());
        }
    }
    out
}

#[test]
fn every_command_is_byte_reproducible_and_manifests_hash_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between identical runs");
    }
    for dir in ["sim", "fit", "sel", "est", "mc", "rep"] {
        let m: Manifest = serde_json::from_slice(&fa[&format!("{dir}/manifest.json")]).unwrap();
        assert_eq!(m.seed, 11);
        assert!(!m.outputs.is_empty());
        for o in &m.outputs {
            assert_eq!(o.sha256, sha256_hex(&fa[&format!("{dir}/{}", o.path)]), "{dir}/{}", o.path);
        }
        assert_eq!(m.config_sha256, sha256_hex(&fa[&format!("{dir}/config.json")]));
    }
    let fit: Manifest = serde_json::from_slice(&fa["fit/manifest.json"]).unwrap();
    assert_eq!(fit.inputs[0].sha256, sha256_hex(&fa["sim/panel.csv"]));
    assert!(fa.contains_key("rep/report.md"));
}

#[test]
fn different_seeds_give_different_panels() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), &[1]);
    let a = d.path().join("a");
    let b = d.path().join("b");
    ok(&["--config", s(&cfg), "--output-dir", s(&a), "simulate"]);
    ok(&["--config", s(&cfg), "--seed", "12", "--output-dir", s(&b), "simulate"]);
    assert_ne!(std::fs::read(a.join("panel.csv")).unwrap(), std::fs::read(b.join("panel.csv")).unwrap());
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn csv_row<'a>(rows: &'a [Vec<String>], name: &str) -> &'a [String] {
    &rows.iter().find(|r| r[0] == name).unwrap_or_else(|| panic!("row {name}"))[1..]
}

#[test]
fn fit_and_demand_tables_are_internally_consistent() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), &[1, 2, 3, 4]);
    let c = s(&cfg);
    let sim = d.path().join("sim");
    let fit = d.path().join("fit");
    let sel = d.path().join("sel");
    let est = d.path().join("est");
    let panel = sim.join("panel.csv");
    ok(&["--config", c, "--output-dir", s(&sim), "simulate"]);
    ok(&["--config", c, "--output-dir", s(&fit), "fit-entry", "--panel", s(&panel)]);
    ok(&["--config", c, "--output-dir", s(&sel), "select-k", "--panel", s(&panel)]);

    let table: FitTable = serde_json::from_str(&std::fs::read_to_string(fit.join("table3.json")).unwrap()).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for r in &table.rows {
        let bic = -2.0 * r.loglik + r.parameters as f64 * (r.observations as f64).ln();
        assert!((bic - r.bic).abs() < 1e-8 * bic.abs(), "K={}", r.k);
        let aic = -2.0 * r.loglik + 2.0 * r.parameters as f64;
        assert!((aic - r.aic).abs() < 1e-8 * aic.abs());
        assert!(fit.join(format!("mixture_k{}.json", r.k)).exists());
    }
    let best = table.rows.iter().min_by(|a, b| a.bic.total_cmp(&b.bic)).unwrap().k;
    assert_eq!(table.chosen_k, best);
    let selected: FitTable = serde_json::from_str(&std::fs::read_to_string(sel.join("table3.json")).unwrap()).unwrap();
    assert_eq!(selected, table);

    let (header, rows) = read_csv(&fit.join("table3.csv"));
    assert_eq!(header, vec!["statistic", "K=1", "K=2", "K=3", "K=4"]);
    for (i, r) in table.rows.iter().enumerate() {
        assert_eq!(csv_row(&rows, "bic")[i].parse::<f64>().unwrap(), r.bic);
        assert_eq!(csv_row(&rows, "log_likelihood")[i].parse::<f64>().unwrap(), r.loglik);
        assert_eq!(csv_row(&rows, "chosen")[i], (r.k == table.chosen_k).to_string());
    }

    let with_k3 = ["ols", "2sls", "heckman", "semiparametric", "mixture:2", "mixture:3"];
    ok(&[
        "--config",
        c,
        "--set",
        &format!("second_stage.columns={}", serde_json::to_string(&with_k3).unwrap()),
        "--output-dir",
        s(&est),
        "estimate-demand",
        "--panel",
        s(&panel),
        "--first-stage",
        s(&fit.join("mixture_k2.json")),
        "--first-stage",
        s(&fit.join("mixture_k3.json")),
    ]);
    let demand: DemandTable = serde_json::from_str(&std::fs::read_to_string(est.join("table4.json")).unwrap()).unwrap();
    assert_eq!(demand.columns.len(), 6);
    // per-firm controls: one inverse Mills ratio, three polynomial terms, or three per type
    let j = 5;
    let l = 3;
    let expected = [0, 0, j, l * j, 2 * l * j, 3 * l * j];
    let (_, rows) = read_csv(&est.join("table4.csv"));
    for (col, want) in demand.columns.iter().zip(expected) {
        assert_eq!(col.controls_specified, want, "{}", col.label);
        if let Some(used) = col.controls_used {
            assert!(used <= want);
        }
    }
    for (p, name) in demand.parameters.iter().enumerate() {
        for (i, col) in demand.columns.iter().enumerate() {
            let cell = &csv_row(&rows, name)[i];
            match &col.estimates {
                Some(e) => assert_eq!(cell.parse::<f64>().unwrap(), e[p]),
                None => assert_eq!(cell, "NA"),
            }
        }
    }
    // OLS has no first stage to report
    assert_eq!(csv_row(&rows, "first_stage_f_price")[0], "NA");
    assert_ne!(csv_row(&rows, "first_stage_f_price")[1], "NA");
}

#[test]
fn exit_codes_distinguish_config_and_threshold_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = s(d.path());
    let unknown = mixsel(&["--set", "dgp.bogus=1", "--output-dir", out, "simulate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bogus"));

    let invalid = mixsel(&["--set", "dgp.type_probs=[0.5,0.6]", "--output-dir", out, "simulate"]);
    assert_eq!(invalid.status.code(), Some(2));

    let stalled = mixsel(&["--set", "dgp.n_markets=20", "--set", "dgp.bne.max_iter=1", "--output-dir", out, "simulate"]);
    assert_eq!(stalled.status.code(), Some(3));
    // outputs are still written before the threshold is reported
    assert!(d.path().join("manifest.json").exists());

    let missing = mixsel(&["--output-dir", out, "fit-entry", "--panel", s(&d.path().join("nope.csv"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn print_config_shows_overrides() {
    let out = ok(&["--seed", "42", "--set", "dgp.n_markets=77", "--print-config", "simulate"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["dgp"]["n_markets"], 77);
    assert_eq!(v["dgp"]["seed"], 42);
}
