use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sascorr(dir: &Path, args: &[&str]) -> Out {
    let out = Command::new(env!("CARGO_BIN_EXE_sascorr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn sascorr");
    Out {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sascorr(dir, args);
    assert_eq!(out.code, 0, "{args:?} failed: {}", out.stderr);
    out.stdout
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), config).unwrap();
    let path = dir.path().to_path_buf();
    (dir, path)
}

/// `key = value` lines of a report.
fn report(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn num(map: &HashMap<String, String>, key: &str) -> f64 {
    map.get(key).unwrap_or_else(|| panic!("missing {key}")).parse().unwrap()
}

/// Header and rows of a CSV with `#` metadata lines.
fn csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let (header, rows) = csv(text);
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

const IDEAL: &str = "rates.eta_s = 1\nrates.eta_as = 1\n";

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "sweep", "oracle"] {
        let out = sascorr(dir.path(), &[cmd, "--config", "nowhere.cfg"]);
        assert_eq!(out.code, 2, "{cmd}");
        assert!(out.stderr.contains("nowhere.cfg"), "{}", out.stderr);
    }
}

#[test]
fn config_faults_exit_2_with_line_numbers() {
    let (_d, dir) = setup("run.seed = 3\n# comment\nrates.k_q = 1\n");
    let out = sascorr(&dir, &["simulate", "--config", "run.cfg"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("run.cfg:3"), "{}", out.stderr);
    assert!(out.stderr.contains("rates.k_q"), "{}", out.stderr);

    fs::write(dir.join("dup.cfg"), "run.seed = 3\nrun.seed = 4\n").unwrap();
    let out = sascorr(&dir, &["oracle", "--config", "dup.cfg", "--powers", "1"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("dup.cfg:2"), "{}", out.stderr);

    fs::write(dir.join("bad.cfg"), "rates.eta_as = 2\n").unwrap();
    assert_eq!(sascorr(&dir, &["oracle", "--config", "bad.cfg", "--powers", "1"]).code, 2);
}

#[test]
fn zero_pulses_rejected() {
    let (_d, dir) = setup("run.n_pulses = 0\n");
    let out = sascorr(&dir, &["simulate", "--config", "run.cfg"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("n_pulses"), "{}", out.stderr);

    fs::write(dir.join("ok.cfg"), "").unwrap();
    assert_eq!(sascorr(&dir, &["simulate", "--config", "ok.cfg", "--pulses", "0"]).code, 2);
}

#[test]
fn bad_flags_exit_2() {
    let (_d, dir) = setup("");
    assert_eq!(sascorr(&dir, &["sweep", "--config", "run.cfg", "--powers", "1,2"]).code, 2);
    assert_eq!(sascorr(&dir, &["sweep", "--config", "run.cfg", "--powers", "1,x,2"]).code, 2);
    assert_eq!(sascorr(&dir, &["simulate", "--config", "run.cfg", "--power", "-1"]).code, 2);
    assert_eq!(sascorr(&dir, &["frobnicate"]).code, 2);
}

#[test]
fn default_config_reproduces_calibrated_rates() {
    let (_d, dir) = setup("");
    // about two seconds of acquisition
    let text = ok(&dir, &["simulate", "--config", "run.cfg", "--power", "8.6", "--pulses", "150000000"]);
    let r = report(&text);
    let duration = num(&r, "duration_s");
    for (key, tags, want) in [("rate_S_Hz", "stokes_tags", 4200.0), ("rate_aS_Hz", "as_tags", 200.0)] {
        let rate = num(&r, key);
        let sigma = num(&r, tags).sqrt() / duration;
        assert!((rate - want).abs() <= 3.0 * sigma, "{key} = {rate} +- {sigma}, want {want}");
    }
    assert_eq!(fs::read_to_string(dir.join("tags.summary.txt")).unwrap(), text);
    assert!(dir.join("tags.rtg").exists());
}

fn simulate_and_correlate(config: &str, power: &str, pulses: &str, extra: &[&str]) -> (TempDir, HashMap<String, String>) {
    let (d, dir) = setup(config);
    ok(&dir, &["simulate", "--config", "run.cfg", "--power", power, "--pulses", pulses, "--out", "run.rtg"]);
    let mut args = vec!["correlate", "--tags", "run.rtg"];
    args.extend_from_slice(extra);
    let text = ok(&dir, &args);
    assert_eq!(fs::read_to_string(dir.join("run.g2.txt")).unwrap(), text);
    (d, report(&text))
}

#[test]
fn comb_peaks_sit_at_multiples_of_the_rep_period() {
    let (d, r) = simulate_and_correlate(&format!("{IDEAL}rates.k_r = 8\n"), "0.1", "300000", &[]);
    assert_eq!(r["rep_period_ps"], "13158");
    assert_eq!(r["bin_width_ps"], "102");
    let hist = fs::read_to_string(d.path().join("run.hist.csv")).unwrap();
    let lags = column(&hist, "lag_ps");
    let counts = column(&hist, "count");
    for k in -10i64..=10 {
        let centre = (k * 13158) as f64;
        // the largest bin within half a period of k T sits within the jitter of k T
        let (lag, _) = lags
            .iter()
            .zip(&counts)
            .filter(|(l, _)| (**l - centre).abs() < 6579.0)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((lag - centre).abs() <= 3.0 * 350.0, "peak {k} at {lag}");
        assert_eq!(*lag as i64 % 102, 0);
    }
    let peaks = fs::read_to_string(d.path().join("run.peaks.csv")).unwrap();
    assert_eq!(column(&peaks, "peak_index"), (-10..=10).map(f64::from).collect::<Vec<_>>());
    assert!(hist.starts_with("# version: "));
}

#[test]
fn uncorrelated_tags_give_g2_of_one() {
    let (_d, r) = simulate_and_correlate(&format!("{IDEAL}rates.k_r = 0\nrates.k_th = 0.5\n"), "0.2", "1000000", &[]);
    let (g2, sigma) = (num(&r, "g2"), num(&r, "sigma"));
    assert!((g2 - 1.0).abs() <= 3.0 * sigma, "g2 = {g2} +- {sigma}");
    assert!(!r.contains_key("R"));
}

#[test]
fn auto_flag_reports_cauchy_schwarz_violation() {
    let (_d, r) = simulate_and_correlate(
        &format!("{IDEAL}rates.k_r = 8\nrates.k_th = 0.01\n"),
        "0.1",
        "1000000",
        &["--auto", "--seed", "5"],
    );
    let (cs, sigma) = (num(&r, "R"), num(&r, "R_sigma"));
    assert!(cs - 3.0 * sigma > 1.0, "R = {cs} +- {sigma}");
    for key in ["g2_SS", "g2_aSaS"] {
        let g = num(&r, key);
        assert!((g - 1.0).abs() <= 3.0 * num(&r, &format!("{key}_sigma")), "{key} = {g}");
    }
}

#[test]
fn correlate_rejects_wide_window_and_bad_files() {
    let (_d, dir) = setup(IDEAL);
    ok(&dir, &["simulate", "--config", "run.cfg", "--power", "1", "--pulses", "1000", "--out", "run.rtg"]);
    let out = sascorr(&dir, &["correlate", "--tags", "run.rtg", "--window", "6580"]);
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert_eq!(sascorr(&dir, &["correlate", "--tags", "run.rtg", "--bin-width", "100"]).code, 2);
    assert!(!ok(&dir, &["correlate", "--tags", "run.rtg", "--window", "6579"]).is_empty());

    let mut bytes = fs::read(dir.join("run.rtg")).unwrap();
    bytes[0] = b'X';
    fs::write(dir.join("bad.rtg"), &bytes).unwrap();
    let out = sascorr(&dir, &["correlate", "--tags", "bad.rtg"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("bad.rtg"), "{}", out.stderr);

    let good = fs::read(dir.join("run.rtg")).unwrap();
    fs::write(dir.join("short.rtg"), &good[..good.len() - 3]).unwrap();
    assert_eq!(sascorr(&dir, &["correlate", "--tags", "short.rtg"]).code, 3);
    assert_eq!(sascorr(&dir, &["correlate", "--tags", "absent.rtg"]).code, 3);
}

#[test]
fn reruns_are_byte_identical() {
    let (_d, dir) = setup(&format!("{IDEAL}run.n_pulses = 200000\nrun.seed = 11\nrun.powers_mw = 0.5, 1, 2\n"));
    ok(&dir, &["sweep", "--config", "run.cfg", "--out", "a.csv"]);
    ok(&dir, &["sweep", "--config", "run.cfg", "--out", "b.csv"]);
    assert_eq!(fs::read(dir.join("a.csv")).unwrap(), fs::read(dir.join("b.csv")).unwrap());
    ok(&dir, &["sweep", "--config", "run.cfg", "--out", "c.csv", "--seed", "12"]);
    assert_ne!(fs::read(dir.join("a.csv")).unwrap(), fs::read(dir.join("c.csv")).unwrap());

    ok(&dir, &["simulate", "--config", "run.cfg", "--power", "1", "--out", "a.rtg"]);
    ok(&dir, &["simulate", "--config", "run.cfg", "--power", "1", "--out", "b.rtg"]);
    assert_eq!(fs::read(dir.join("a.rtg")).unwrap(), fs::read(dir.join("b.rtg")).unwrap());
    ok(&dir, &["correlate", "--tags", "a.rtg", "--auto", "--out-dir", "x"]);
    ok(&dir, &["correlate", "--tags", "a.rtg", "--auto", "--out-dir", "y"]);
    for f in ["a.hist.csv", "a.peaks.csv"] {
        assert_eq!(fs::read(dir.join("x").join(f)).unwrap(), fs::read(dir.join("y").join(f)).unwrap());
    }

    let csv_text = fs::read_to_string(dir.join("a.csv")).unwrap();
    for key in ["# version:", "# config_digest:", "# seed: 11", "# columns:"] {
        assert!(csv_text.contains(key), "missing {key}");
    }
}

#[test]
fn duplicate_powers_get_independent_seeds() {
    let (_d, dir) = setup(&format!("{IDEAL}run.n_pulses = 20000\n"));
    ok(&dir, &["sweep", "--config", "run.cfg", "--powers", "1,1,1", "--out", "s.csv"]);
    let text = fs::read_to_string(dir.join("s.csv")).unwrap();
    let (header, rows) = csv(&text);
    let i = header.iter().position(|h| h == "seed").unwrap();
    let seeds: Vec<&String> = rows.iter().map(|r| &r[i]).collect();
    assert_eq!(rows.len(), 3);
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    let s = column(&text, "mean_stokes_per_pulse");
    assert!(s[0] != s[1] || s[1] != s[2]);
}

#[test]
fn g2_grows_without_plateau_when_thermal_background_vanishes() {
    let (_d, dir) = setup(&format!("{IDEAL}rates.k_r = 100\nrates.k_th = 0\nrun.n_pulses = 2000000\n"));
    ok(&dir, &["sweep", "--config", "run.cfg", "--powers", "0.01,0.03,0.1,0.3,1", "--out", "s.csv"]);
    let text = fs::read_to_string(dir.join("s.csv")).unwrap();
    let g2 = column(&text, "g2");
    let sigma = column(&text, "g2_sigma");
    for i in 1..g2.len() {
        assert!(g2[i] < g2[i - 1], "{g2:?}");
    }
    // 1 + 1/m_S at the lowest power is 126
    assert!((g2[0] - 126.0).abs() <= 3.0 * sigma[0], "{} +- {}", g2[0], sigma[0]);
}

#[test]
fn fit_exponents_and_model_selection() {
    let (_d, dir) = setup(&format!("{IDEAL}rates.k_r = 1e-4\nrates.k_th = 1e-5\nrun.n_pulses = 2000000\n"));
    ok(&dir, &["sweep", "--config", "run.cfg", "--powers", "0.5,1,2,5,10,20,50,100,200", "--out", "s.csv"]);

    let r = report(&ok(&dir, &["fit", "--csv", "s.csv", "--column", "rate_S_Hz"]));
    let e = num(&r, "exponent");
    assert!((e - 1.0).abs() <= 0.05, "Stokes exponent {e}");

    let text = ok(&dir, &["fit", "--csv", "s.csv", "--column", "center", "--bases", "2;2,3", "--svg", "center.svg"]);
    assert_eq!(report(&text)["basis"], "2,3");
    let svg = fs::read_to_string(dir.join("center.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle") && svg.contains("slope -1"));

    let r = report(&ok(&dir, &["fit", "--csv", "s.csv", "--column", "n_pulses"]));
    assert!(num(&r, "exponent").abs() < 1e-12);
}

#[test]
fn fit_reports_missing_columns() {
    let (_d, dir) = setup("");
    fs::write(dir.join("d.csv"), "# meta\npower_mW,y\n1,2\n2,4\n3,6\n").unwrap();
    let out = sascorr(&dir, &["fit", "--csv", "d.csv", "--column", "g2"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("g2"), "{}", out.stderr);
    let out = sascorr(&dir, &["fit", "--csv", "d.csv", "--column", "y", "--sigma-column", "dy"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("dy"), "{}", out.stderr);
    fs::write(dir.join("e.csv"), "power_mW,y\n1,2\n2,oops\n").unwrap();
    assert_eq!(sascorr(&dir, &["fit", "--csv", "e.csv", "--column", "y"]).code, 3);
    assert_eq!(sascorr(&dir, &["fit", "--csv", "absent.csv", "--column", "y"]).code, 3);

    let r = report(&ok(&dir, &["fit", "--csv", "d.csv", "--column", "y", "--bases", "1;1,2"]));
    assert_eq!(r["basis"], "1");
    assert!((num(&r, "exponent") - 1.0).abs() < 1e-12);
}

#[test]
fn fit_numerical_failure_exits_4() {
    let (_d, dir) = setup("");
    fs::write(dir.join("d.csv"), "power_mW,y\n1,2\n1,2\n1,2\n").unwrap();
    assert_eq!(sascorr(&dir, &["fit", "--csv", "d.csv", "--column", "y", "--bases", "1,2"]).code, 4);
}

#[test]
fn oracle_flags_zero_power() {
    let (_d, dir) = setup("");
    let text = ok(&dir, &["oracle", "--config", "run.cfg", "--powers", "0,1"]);
    let (header, rows) = csv(&text);
    let g = header.iter().position(|h| h == "g2").unwrap();
    let f = header.iter().position(|h| h == "flag").unwrap();
    assert_eq!(rows[0][g], "");
    assert_eq!(rows[0][f], "g2_undefined");
    for (i, v) in rows[0].iter().enumerate() {
        if i != g && i != f {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{}", header[i]);
        }
    }
    assert_eq!(rows[1][f], "");
}

#[test]
fn oracle_g2_without_thermal_background_is_exact() {
    let (_d, dir) = setup("rates.k_s = 0.37\nrates.k_r = 0.02\nrates.k_th = 0\n");
    let powers = [0.01, 0.3, 1.0, 7.5, 200.0];
    let list: Vec<String> = powers.iter().map(|p| p.to_string()).collect();
    let text = ok(&dir, &["oracle", "--config", "run.cfg", "--powers", &list.join(",")]);
    let g2 = column(&text, "g2");
    for (p, g) in powers.iter().zip(g2) {
        assert_eq!(g, 1.0 + 1.0 / (0.37 * p), "P = {p}");
    }
}

#[test]
fn oracle_agrees_with_sweep() {
    let (_d, dir) = setup(&format!("{IDEAL}rates.k_s = 0.3\nrates.k_r = 0.4\nrates.k_th = 0.1\nrun.n_pulses = 1000000\nrun.powers_mw = 0.5, 1, 2\n"));
    ok(&dir, &["oracle", "--config", "run.cfg", "--out", "o.csv"]);
    ok(&dir, &["sweep", "--config", "run.cfg", "--out", "s.csv"]);
    let o = fs::read_to_string(dir.join("o.csv")).unwrap();
    let s = fs::read_to_string(dir.join("s.csv")).unwrap();
    let n = 1e6;
    let pairs = [
        ("m_S", "mean_stokes_per_pulse", 1.0),
        ("m_aS_pair", "mean_as_pair_per_pulse", 1.0),
        ("m_aS_thermal", "mean_as_thermal_per_pulse", 1.0),
        ("rate_S_Hz", "rate_S_Hz", 1.0),
        ("rate_aS_Hz", "rate_aS_Hz", 1.0),
        ("p_center", "center", n),
        ("p_side", "side_mean", n),
        ("g2", "g2", 1.0),
    ];
    for (oc, sc, scale) in pairs {
        let want = column(&o, oc);
        let got = column(&s, sc);
        let sigma = column(&s, &format!("{sc}_sigma"));
        for i in 0..want.len() {
            let z = (got[i] - want[i] * scale) / sigma[i];
            assert!(z.abs() <= 3.0, "{sc}[{i}]: {} vs {} (z = {z})", got[i], want[i] * scale);
        }
    }
}

#[test]
fn thermal_oracle_uses_enumeration() {
    let (_d, dir) = setup("rates.stokes_statistics = thermal\nrates.k_r = 0.1\nrates.k_th = 0\n");
    let text = ok(&dir, &["oracle", "--config", "run.cfg", "--powers", "0.5,1"]);
    // thermal: p_center / p_side = 2 + 1 / m_S with k_th = 0
    for (p, g) in [0.5, 1.0].iter().zip(column(&text, "g2")) {
        let want = 2.0 + 1.0 / (0.8 * p);
        assert!((g - want).abs() < 1e-9 * want, "P = {p}: {g} vs {want}");
    }
}
