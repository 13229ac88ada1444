mod common;

use std::fs;

use common::*;
use gcomm_core::io::coefficients_tsv;
use gcomm_core::Coefficients;
use serde_json::Value;

fn json_stdout(out: &std::process::Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn two_cliques_separate() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cliques.txt");
    fs::write(&input, two_cliques()).unwrap();
    let fit = dir.path().join("fit");
    let out = gcomm(&[
        "infer",
        path_str(&input),
        "--out",
        path_str(&fit),
        "--seed",
        "1",
    ]);
    assert_eq!(status(&out), 0, "{}", stderr(&out));

    let means = posterior_means(&fit);
    assert_eq!(means.len(), 60);
    let side = |p: &str| -> Vec<f64> {
        means
            .iter()
            .filter(|(l, _)| l.starts_with(p))
            .map(|(_, m)| *m)
            .collect()
    };
    let (ma, sa) = mean_and_spread(&side("a"));
    let (mb, sb) = mean_and_spread(&side("b"));
    let separation = (ma - mb).abs();
    assert!(
        separation > 5.0 * sa.max(sb),
        "separation {separation}, spreads {sa} {sb}"
    );
    assert!(separation > 0.3, "{separation}");

    let report: Value =
        serde_json::from_str(&fs::read_to_string(fit.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    assert_eq!(report["manifest"]["command"], "infer");
    assert_eq!(report["manifest"]["config"]["degree"], 4);
    assert_eq!(report["manifest"]["input"]["edges"], 870);
    assert_eq!(
        report["manifest"]["input"]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
    assert_eq!(report["restart_objectives"].as_array().unwrap().len(), 5);

    // rerunning BP under the saved fit lands on the same objective
    let ev = gcomm(&["eval", path_str(&input), "--fit", path_str(&fit)]);
    assert_eq!(status(&ev), 0, "{}", stderr(&ev));
    let got = json_stdout(&ev)["objective"].as_f64().unwrap();
    let want = report["final_objective"].as_f64().unwrap();
    assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
}

#[test]
fn empty_input_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.txt");
    fs::write(&input, "# nothing here\n\n").unwrap();
    let out = gcomm(&[
        "infer",
        path_str(&input),
        "--out",
        path_str(&dir.path().join("fit")),
    ]);
    assert_eq!(status(&out), 1);
    assert!(stderr(&out).contains("no edges"), "{}", stderr(&out));
    assert!(!dir.path().join("fit").exists());
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "a b\nb c d\n").unwrap();
    let out = gcomm(&[
        "infer",
        path_str(&bad),
        "--out",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(status(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let missing = dir.path().join("missing.txt");
    assert_eq!(
        status(&gcomm(&["infer", path_str(&missing), "--out", "x"])),
        1
    );
    // argument errors use the same status, not the cap-stopped one
    assert_eq!(status(&gcomm(&["infer"])), 1);
    assert_eq!(
        status(&gcomm(&[
            "infer",
            path_str(&bad),
            "--out",
            "x",
            "--grid",
            "2"
        ])),
        1
    );
}

#[test]
fn cap_stopped_run_exits_two_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cliques.txt");
    fs::write(&input, two_cliques()).unwrap();
    let fit = dir.path().join("fit");
    let out = gcomm(&[
        "infer",
        path_str(&input),
        "--out",
        path_str(&fit),
        "--max-outer",
        "1",
        "--restarts",
        "1",
    ]);
    assert_eq!(status(&out), 2, "{}", stderr(&out));
    for f in [
        "posterior.tsv",
        "omega.tsv",
        "coefficients.tsv",
        "report.json",
    ] {
        assert!(fit.join(f).is_file(), "{f}");
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(fit.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["manifest"]["convergence"]["exit_status"], 2);
}

#[test]
fn infer_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net");
    let out = gcomm(&[
        "generate",
        "sbm",
        "--n",
        "150",
        "--cin",
        "14",
        "--cout",
        "2",
        "--seed",
        "9",
        "--out",
        path_str(&net),
    ]);
    assert_eq!(status(&out), 0, "{}", stderr(&out));
    let input = net.join("network.edgelist");
    let run = |name: &str| {
        let fit = dir.path().join(name);
        let out = gcomm(&[
            "infer",
            path_str(&input),
            "--out",
            path_str(&fit),
            "--restarts",
            "2",
            "--seed",
            "3",
        ]);
        assert!(matches!(status(&out), 0 | 2), "{}", stderr(&out));
        fit
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["posterior.tsv", "omega.tsv", "coefficients.tsv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_of_constant_function_on_one_edge() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("edge.txt");
    fs::write(&input, "x y\n").unwrap();
    let fit = dir.path().join("fit");
    fs::create_dir(&fit).unwrap();
    fs::write(
        fit.join("coefficients.tsv"),
        coefficients_tsv(&Coefficients::constant(2, 1.0)),
    )
    .unwrap();
    let out = gcomm(&["eval", path_str(&input), "--fit", path_str(&fit)]);
    assert_eq!(status(&out), 0, "{}", stderr(&out));
    let v = json_stdout(&out);
    assert!(
        (v["objective"].as_f64().unwrap() + 1.0).abs() < 1e-12,
        "{v}"
    );
    assert_eq!(v["bp"]["converged"], true);
    assert!(v["bp"]["max_normalization_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn eval_on_a_tree_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tree.txt");
    fs::write(&input, "0 1\n1 2\n1 3\n3 4\n4 5\n").unwrap();
    let c = Coefficients::symmetrized(
        3,
        &[
            2.0, 0.4, 0.3, 0.1, 0.4, 1.5, 0.6, 0.2, 0.3, 0.6, 1.1, 0.9, 0.1, 0.2, 0.9, 2.5,
        ],
    )
    .unwrap();
    let fit = dir.path().join("fit");
    fs::create_dir(&fit).unwrap();
    let cpath = fit.join("coefficients.tsv");
    fs::write(&cpath, coefficients_tsv(&c)).unwrap();

    let ev = gcomm(&[
        "eval",
        path_str(&input),
        "--fit",
        path_str(&fit),
        "--tol-bp",
        "1e-14",
        "--damping",
        "0.5",
        "--max-sweeps",
        "20000",
    ]);
    assert_eq!(status(&ev), 0, "{}", stderr(&ev));
    let or = gcomm(&[
        "oracle",
        path_str(&input),
        "--coefficients",
        path_str(&cpath),
        "--grid",
        "12",
    ]);
    assert_eq!(status(&or), 0, "{}", stderr(&or));
    let got = json_stdout(&ev)["objective"].as_f64().unwrap();
    let want = json_stdout(&or)["objective"].as_f64().unwrap();
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
}

#[test]
fn eval_refuses_missing_or_corrupt_fits() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("edge.txt");
    fs::write(&input, "x y\ny z\n").unwrap();
    let fit = dir.path().join("fit");
    assert_eq!(
        status(&gcomm(&["eval", path_str(&input), "--fit", path_str(&fit)])),
        1
    );
    fs::create_dir(&fit).unwrap();
    fs::write(fit.join("coefficients.tsv"), "0\t0\tone\n").unwrap();
    assert_eq!(
        status(&gcomm(&["eval", path_str(&input), "--fit", path_str(&fit)])),
        1
    );
    fs::write(
        fit.join("coefficients.tsv"),
        coefficients_tsv(&Coefficients::constant(1, 1.0)),
    )
    .unwrap();
    fs::write(fit.join("report.json"), "{ not json").unwrap();
    let out = gcomm(&["eval", path_str(&input), "--fit", path_str(&fit)]);
    assert_eq!(status(&out), 1);
    assert!(stderr(&out).contains("report.json"), "{}", stderr(&out));
}

#[test]
fn oracle_is_hidden() {
    let help = String::from_utf8(gcomm(&["--help"]).stdout).unwrap();
    assert!(help.contains("infer") && help.contains("generate") && help.contains("eval"));
    assert!(!help.contains("oracle"));
}

#[test]
fn zero_affinities_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcomm(&[
        "generate",
        "sbm",
        "--cin",
        "0",
        "--cout",
        "0",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(status(&out), 1);
    assert!(!dir.path().join("network.edgelist").exists());
}

#[test]
fn benchmark_generation() {
    let dir = tempfile::tempdir().unwrap();
    let mut degrees = Vec::new();
    for seed in 1..=10 {
        let net = dir.path().join(format!("s{seed}"));
        let s = seed.to_string();
        let out = gcomm(&[
            "generate",
            "sbm",
            "--n",
            "600",
            "--groups",
            "3",
            "--cin",
            "15",
            "--cout",
            "3",
            "--seed",
            &s,
            "--out",
            path_str(&net),
        ]);
        assert_eq!(status(&out), 0, "{}", stderr(&out));
        let edges = fs::read_to_string(net.join("network.edgelist"))
            .unwrap()
            .lines()
            .count();
        degrees.push(2.0 * edges as f64 / 600.0);

        let truth = fs::read_to_string(net.join("truth.tsv")).unwrap();
        let rows: Vec<Vec<&str>> = truth
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split('\t').collect())
            .collect();
        assert!(rows.len() > 590);
        for r in &rows {
            let group: usize = r[2].parse().unwrap();
            let x: f64 = r[1].parse().unwrap();
            assert!(group < 3 && (group as f64 / 3.0..=(group + 1) as f64 / 3.0).contains(&x));
        }
    }
    let (mean, _) = mean_and_spread(&degrees);
    assert!((mean - 7.0).abs() <= 0.3, "{degrees:?}");

    // same seed, same bytes
    let again = dir.path().join("again");
    gcomm(&["generate", "sbm", "--seed", "1", "--out", path_str(&again)]);
    for f in ["network.edgelist", "truth.tsv"] {
        assert_eq!(
            fs::read(again.join(f)).unwrap(),
            fs::read(dir.path().join("s1").join(f)).unwrap()
        );
    }
}

#[test]
fn latent_generation() {
    let dir = tempfile::tempdir().unwrap();
    let omega = dir.path().join("omega.tsv");
    let c = Coefficients::new(2, vec![2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0]).unwrap();
    fs::write(&omega, coefficients_tsv(&c)).unwrap();
    let net = dir.path().join("net");
    let args = |out: &str| {
        gcomm(&[
            "generate",
            "latent",
            "--n",
            "400",
            "--degree-param",
            "8",
            "--omega-file",
            path_str(&omega),
            "--seed",
            "5",
            "--out",
            out,
        ])
    };
    let out = args(path_str(&net));
    assert_eq!(status(&out), 0, "{}", stderr(&out));
    let edges = fs::read_to_string(net.join("network.edgelist"))
        .unwrap()
        .lines()
        .count();
    assert!((2.0 * edges as f64 / 400.0 - 8.0).abs() < 1.0, "{edges}");
    let truth = fs::read_to_string(net.join("truth.tsv")).unwrap();
    assert!(truth
        .lines()
        .filter(|l| !l.starts_with('#'))
        .all(|l| l.ends_with("\tNA")));

    let net2 = dir.path().join("net2");
    args(path_str(&net2));
    assert_eq!(
        fs::read(net.join("truth.tsv")).unwrap(),
        fs::read(net2.join("truth.tsv")).unwrap()
    );

    let bad = gcomm(&[
        "generate",
        "latent",
        "--n",
        "400",
        "--degree-param",
        "-1",
        "--omega-file",
        path_str(&omega),
        "--out",
        "x",
    ]);
    assert_eq!(status(&bad), 1);
}
