use std::fs;
use std::path::PathBuf;

use nhgauge::cli::main_with;

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("nhgauge-cli-{}", std::process::id()));
    fs::create_dir_all(&d).unwrap();
    d.join(name)
}

fn run(args: &[&str]) -> i32 {
    main_with(std::iter::once("nhgauge").chain(args.iter().copied()))
}

#[test]
fn verify_is_deterministic_per_seed() {
    let (a, b) = (tmp("a.json"), tmp("b.json"));
    for p in [&a, &b] {
        assert_eq!(run(&["verify", "chaplygin", "--points", "8", "--seed", "11", "--out", p.to_str().unwrap()]), 0);
    }
    let (ja, jb) = (fs::read_to_string(&a).unwrap(), fs::read_to_string(&b).unwrap());
    assert_eq!(ja, jb);
    let v: serde_json::Value = serde_json::from_str(&ja).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["seed"], 11);
}

#[test]
fn verify_fails_when_tolerances_are_squeezed() {
    let out = tmp("tight.json");
    assert_eq!(run(&["verify", "solid", "--points", "5", "--tol-scale", "1e-12", "--out", out.to_str().unwrap()]), 1);
}

#[test]
fn config_file_overrides_parameters() {
    let cfg = tmp("cfg.json");
    fs::write(&cfg, r#"{"system": "chaplygin", "params": {"m": 2.0}, "domain": {"theta": [0.4, 0.8]}}"#).unwrap();
    let out = tmp("cfg-out.json");
    assert_eq!(run(&["--params", cfg.to_str().unwrap(), "verify", "chaplygin", "--points", "5", "--out", out.to_str().unwrap()]), 0);
    fs::write(&cfg, r#"{"system": "chaplygin", "params": {"mass": 2.0}}"#).unwrap();
    assert_eq!(run(&["--params", cfg.to_str().unwrap(), "verify", "chaplygin", "--points", "5"]), 2);
}

#[test]
fn hgm_writes_a_grid_with_unit_determinant() {
    let out = tmp("hgm.csv");
    assert_eq!(run(&["hgm", "ball", "--p1min", "0", "--p1max", "1", "--nodes", "11", "--out", out.to_str().unwrap()]), 0);
    let mut r = csv::Reader::from_path(&out).unwrap();
    let h = r.headers().unwrap().clone();
    let det = h.iter().position(|c| c == "detF").expect("detF column");
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 11);
    for row in rows {
        assert!((row[det].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn reduced_and_full_ball_runs_agree_on_p1() {
    let (full, red) = (tmp("full.csv"), tmp("red.csv"));
    let common = ["--T", "1", "--h", "1e-3", "--stride", "100"];
    let mut a = vec!["simulate", "ball", "--out", full.to_str().unwrap()];
    a.extend(common);
    assert_eq!(run(&a), 0);
    let mut b = vec!["simulate", "ball", "--reduced", "--out", red.to_str().unwrap()];
    b.extend(common);
    assert_eq!(run(&b), 0);

    let last = |p: &PathBuf, col: &str| -> f64 {
        let mut r = csv::Reader::from_path(p).unwrap();
        let i = r.headers().unwrap().iter().position(|c| c == col).unwrap();
        r.records().last().unwrap().unwrap()[i].parse().unwrap()
    };
    let (x, y) = (last(&full, "x"), last(&full, "y"));
    let p1 = last(&red, "p1");
    assert!(((x * x + y * y) - p1).abs() < 1e-6, "{} vs {p1}", x * x + y * y);
}

#[test]
fn bracket_table_matches_both_ball_tables() {
    for extra in [&[][..], &["--ungauged"][..]] {
        let out = tmp(&format!("table{}.csv", extra.len()));
        let mut a = vec!["bracket-table", "ball", "--points", "4", "--out", out.to_str().unwrap()];
        a.extend(extra);
        assert_eq!(run(&a), 0);
        let mut r = csv::Reader::from_path(&out).unwrap();
        let mut n = 0;
        for row in r.records() {
            let row = row.unwrap();
            let res: f64 = row[4].parse().unwrap();
            let o: f64 = row[3].parse().unwrap();
            assert!(res.abs() < 1e-6 * o.abs().max(1.0), "{:?}", row);
            n += 1;
        }
        assert_eq!(n, 4 * 10);
    }
}
