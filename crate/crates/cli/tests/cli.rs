use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use freepd_core::energysolver::{encost_report, random_configuration};
use freepd_core::io::{graph_to_json, load_configuration, load_pdfunction, pdfunction_to_json, read_json, report_edges, save_configuration, write_json};
use freepd_core::pdcore::{check_pd, random_nspd, PdFunction, Verdict};
use freepd_core::surgery::desk_strip;

fn freepd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freepd")).args(args).output().expect("run freepd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn random_then_check_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    let o = freepd(&["random", "--r", "2", "--d", "2", "--seed", "5", "--margin", "0.3", "--out", s(&f)]);
    assert!(o.status.success(), "{o:?}");
    for extra in [&[][..], &["--brute-force"][..]] {
        let mut args = vec!["check", s(&f)];
        args.extend_from_slice(extra);
        let o = freepd(&args);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
        assert!(stdout(&o).contains("verdict strict"));
    }
}

#[test]
fn random_is_a_pure_function_of_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for f in [&a, &b] {
        assert!(freepd(&["random", "--r", "1", "--d", "1", "--out", s(f)]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn extend_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let (f, g) = (dir.path().join("c.json"), dir.path().join("ext.json"));
    assert!(freepd(&["random", "--r", "1", "--d", "1", "--seed", "3", "--margin", "0.2", "--out", s(&f)]).status.success());
    let o = freepd(&["extend", s(&f), "--radius", "3", "--policy", "central", "--out", s(&g)]);
    assert!(o.status.success(), "{o:?}");
    let o = freepd(&["check", s(&g)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("ball(3)"));
}

#[test]
fn self_energy_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    assert!(freepd(&["random", "--r", "2", "--d", "2", "--seed", "9", "--out", s(&f)]).status.success());
    let o = freepd(&["energy", s(&f), s(&f)]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.lines().all(|l| l.ends_with("energy=1.00000000000")), "{out}");
    let o = freepd(&["energy", s(&f), s(&f), "--radii", "0,1"]);
    assert_eq!(stdout(&o), out);
}

#[test]
fn non_pd_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.json");
    let bad = (0..)
        .map(|seed| random_nspd(1, 1, seed, 0.0).mix_delta(-0.5))
        .find(|c| check_pd(c, 1e-10).unwrap().verdict == Verdict::NotPd)
        .unwrap();
    write_json(&f, &pdfunction_to_json(&bad)).unwrap();
    let o = freepd(&["check", s(&f)]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(stdout(&o).contains("verdict not_pd"));
}

#[test]
fn malformed_input_exits_two_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.json");
    let mut v = pdfunction_to_json(&random_nspd(1, 1, 0, 0.2));
    v["d"] = serde_json::json!("one");
    write_json(&f, &v).unwrap();
    let o = freepd(&["check", s(&f)]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("`d`"), "{o:?}");

    std::fs::write(&f, "{ not json").unwrap();
    assert_eq!(freepd(&["check", s(&f)]).status.code(), Some(2));
    assert_eq!(freepd(&["check", s(&dir.path().join("missing.json"))]).status.code(), Some(2));
    assert_eq!(freepd(&["toeplitz", "--seq", "1,x", "--zeta", "0"]).status.code(), Some(2));
}

#[test]
fn toeplitz_central_step() {
    let o = freepd(&["toeplitz", "--seq", "1,0.5", "--zeta", "0,0"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "c2 = 0.250000000000 + 0.00000000000i");
}

#[test]
fn surgery_with_verification() {
    let dir = tempfile::tempdir().unwrap();
    let (g, out) = (dir.path().join("g.json"), dir.path().join("s.json"));
    write_json(&g, &graph_to_json(&desk_strip(2, 1))).unwrap();
    let o = freepd(&["surgery", s(&g), "--R", "2", "--r", "1", "--out", s(&out), "--verify"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let rep = read_json(&dir.path().join("s.json.verify.json")).unwrap();
    assert_eq!(rep["pass"], serde_json::json!(true));
    assert!(read_json(&out).unwrap()["B"].as_array().unwrap().len() >= 4);
}

#[test]
fn solve_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("in").join("config.json");
    std::fs::create_dir_all(cfg_path.parent().unwrap()).unwrap();
    save_configuration(&cfg_path, &random_configuration(false, 2, 1, 1, 21, 1.1).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = freepd(&["solve", "--config", s(&cfg_path), "--radius", "3", "--epsilon", "2e-3", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");

    // Re-measure the saved extensions against the input and compare to the report.
    let report = read_json(&out.join("report.json")).unwrap();
    assert_eq!(report["pass"], serde_json::json!(true));
    let input = load_configuration(Path::new(report["input"].as_str().unwrap())).unwrap();
    let solved: BTreeMap<String, PdFunction> = report["extensions"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(v, file)| (v.clone(), load_pdfunction(&out.join(file.as_str().unwrap())).unwrap()))
        .collect();
    let again = encost_report(&input, &solved, 2e-3).unwrap();
    let saved = report_edges(&report).unwrap();
    assert_eq!(saved.len(), again.edges.len());
    for ((from, to, before, after), e) in saved.iter().zip(&again.edges) {
        assert_eq!((from, to), (&e.from, &e.to));
        assert!((before - e.before).abs() <= 1e-11 * before.abs(), "{before} vs {}", e.before);
        assert!((after - e.after).abs() <= 1e-11 * after.abs(), "{after} vs {}", e.after);
    }
    let encost = report["check"]["encost"].as_f64().unwrap();
    assert!((encost - again.encost).abs() <= 1e-11 * encost.abs().max(1.0));
}
