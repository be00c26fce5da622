use std::path::{Path, PathBuf};
use std::process::Command;

use bregman_ab::{IterationTrace, TraceRow};
use bregman_ab_cli::{
    emit_trace, execute_compare, execute_solve, parse_problem, parse_problem_file, problem_to_json, round_sig,
    Algorithm, CompareArgs, RunReport, SolveArgs, TRACE_HEADER,
};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn err_text(text: &str) -> String {
    format!("{:#}", parse_problem(text).unwrap_err())
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bregman-ab"))
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn binary_entropy(p: f64) -> f64 {
    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
}

#[test]
fn rejects_unnormalized_source() {
    let msg = err_text(r#"{"p_x": [0.5, 0.6], "distortion": [[0, 1], [1, 0]], "c": 0.3}"#);
    assert!(msg.contains("p_x must sum to 1"), "{msg}");
    assert!(msg.contains("\"p_x\""), "{msg}");
}

#[test]
fn names_the_offending_key() {
    let missing = err_text(r#"{"p_x": [0.5, 0.5], "c": 0.3}"#);
    assert!(missing.contains("missing key \"distortion\""), "{missing}");

    let wrong = err_text("{\"p_x\": [0.5, 0.5],\n\"distortion\": [[0, 1], [1, 0]],\n\"c\": \"low\"}");
    assert!(wrong.contains("\"c\" (line 3)"), "{wrong}");

    let extra = err_text(r#"{"p_x": [0.5, 0.5], "distortion": [[0, 1], [1, 0]], "c": 0.3, "beta": 1}"#);
    assert!(extra.contains("\"beta\"") && extra.contains("unknown key"), "{extra}");

    let entry = err_text(r#"{"p_x": [0.5, "x"], "distortion": [[0, 1], [1, 0]], "c": 0.3}"#);
    assert!(entry.contains("\"p_x\""), "{entry}");
}

#[test]
fn rejects_infeasible_level() {
    for c in ["0", "1", "1.5", "-0.2"] {
        let msg = err_text(&format!(r#"{{"p_x": [0.5, 0.5], "distortion": [[0, 1], [1, 0]], "c": {c}}}"#));
        assert!(msg.contains("\"c\"") && msg.contains("strictly between"), "{msg}");
    }
}

#[test]
fn rejects_shape_errors() {
    let ragged = err_text(r#"{"p_x": [0.5, 0.5], "distortion": [[0, 1], [1]], "c": 0.3}"#);
    assert!(ragged.contains("\"distortion\""), "{ragged}");
    let rows = err_text(r#"{"p_x": [0.5, 0.5], "distortion": [[0, 1]], "c": 0.3}"#);
    assert!(rows.contains("\"distortion\""), "{rows}");
    let degenerate = err_text(r#"{"p_x": [1.0], "distortion": [[0]], "c": 0.0}"#);
    assert!(degenerate.contains("degenerate alphabet"), "{degenerate}");
    let zero = err_text(r#"{"p_x": [1.0, 0.0], "distortion": [[0, 1], [1, 0]], "c": 0.3}"#);
    assert!(zero.contains("strictly positive"), "{zero}");
}

#[test]
fn problem_file_round_trips() {
    let text = std::fs::read_to_string(fixture("reference.json")).unwrap();
    let problem = parse_problem(&text).unwrap();
    let again = parse_problem(&problem_to_json(&problem).unwrap()).unwrap();
    assert_eq!(problem.p_x().probs(), again.p_x().probs());
    assert_eq!(problem.distortion(), again.distortion());
    assert_eq!(problem.level(), again.level());
    assert_eq!(parse_problem_file(&text).unwrap().c, 1.5);
}

#[test]
fn degenerate_alphabet_fails_compare() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "one.json", r#"{"p_x": [1.0], "distortion": [[0.0]], "c": 0.0}"#);
    let status = binary()
        .args(["compare", "--problem"])
        .arg(&problem)
        .arg("--out")
        .arg(dir.path().join("gaps.csv"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("degenerate alphabet"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let reference = fixture("reference.json");
    let run = |extra: &[&str]| binary().arg("solve").arg("--problem").arg(&reference).args(extra).output().unwrap();

    let ok = run(&[]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report = RunReport::from_json(&String::from_utf8(ok.stdout).unwrap()).unwrap();
    assert_eq!(report.termination, "tolerance");

    assert_eq!(run(&["--max-iter", "3"]).status.code(), Some(2));
    assert_eq!(run(&["--algorithm", "em", "--max-iter", "2"]).status.code(), Some(2));
    assert_eq!(run(&["--gamma", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["--algorithm", "em", "--schedule", "f1"]).status.code(), Some(1));
    assert_eq!(run(&["--algorithm", "bogus"]).status.code(), Some(1));

    let bad = write(&dir, "bad.json", r#"{"p_x": [0.5, 0.6], "distortion": [[0, 1], [1, 0]], "c": 0.3}"#);
    let out = binary().arg("solve").arg("--problem").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_x must sum to 1"));

    let missing = binary().args(["solve", "--problem", "/nonexistent/problem.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(binary().arg("--help").output().unwrap().status.code(), Some(0));
}

fn strip_elapsed(csv: &str) -> Vec<String> {
    csv.lines().map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head).to_string()).collect()
}

#[test]
fn runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    for algorithm in [Algorithm::Minfree, Algorithm::Em, Algorithm::EmNewton, Algorithm::Mirror] {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let args = SolveArgs {
                out: Some(dir.path().join(format!("report{k}.json"))),
                trace: Some(dir.path().join(format!("trace{k}.csv"))),
                max_iter: 500,
                ..SolveArgs::new(fixture("reference.json"), algorithm)
            };
            execute_solve(&args).unwrap();
            let report = std::fs::read(args.out.as_ref().unwrap()).unwrap();
            let trace = std::fs::read_to_string(args.trace.as_ref().unwrap()).unwrap();
            outputs.push((report, strip_elapsed(&trace)));
        }
        assert_eq!(outputs[0].0, outputs[1].0, "{algorithm:?} report differs");
        assert_eq!(outputs[0].1, outputs[1].1, "{algorithm:?} trace differs");
        assert_eq!(outputs[0].1[0], TRACE_HEADER.rsplit_once(',').unwrap().0);
    }
}

#[test]
fn report_round_trips() {
    let dir = TempDir::new().unwrap();
    for algorithm in [Algorithm::Minfree, Algorithm::EmNewton] {
        let args =
            SolveArgs { out: Some(dir.path().join("r.json")), ..SolveArgs::new(fixture("reference.json"), algorithm) };
        let report = execute_solve(&args).unwrap();
        let text = std::fs::read_to_string(args.out.as_ref().unwrap()).unwrap();
        let parsed = RunReport::from_json(&text).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(parsed.to_json().unwrap(), text);
        assert_eq!(parsed.objective, round_sig(parsed.objective));
    }
}

#[test]
fn report_rejects_non_stochastic_channel() {
    let dir = TempDir::new().unwrap();
    let args =
        SolveArgs { out: Some(dir.path().join("r.json")), ..SolveArgs::new(fixture("hamming.json"), Algorithm::Em) };
    let mut report = execute_solve(&args).unwrap();
    report.w[0][0] += 0.01;
    assert!(RunReport::from_json(&report.to_json().unwrap()).is_err());
}

#[test]
fn trace_rows_match_entries() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t.csv");
    let mut trace = IterationTrace::default();
    emit_trace(&trace, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{TRACE_HEADER}\n"));

    trace.rows.push(TraceRow {
        iter: 0,
        objective: 0.25,
        constraint_residual: 0.0,
        min_entry: None,
        cumulative_inner: 0,
        elapsed_ns: 7,
        point: vec![],
        gamma_check: None,
        surrogate: None,
    });
    emit_trace(&trace, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, [TRACE_HEADER, "0,0.25,0,,0,7"]);
}

#[test]
fn reference_minfree_descends_where_step_condition_holds() {
    let problem = bregman_ab_cli::load_problem(&fixture("reference.json")).unwrap();
    let solution = bregman_ab_cli::run_algorithm(&problem, &SolveArgs::new("", Algorithm::Minfree)).unwrap();
    for pair in solution.trace.rows.windows(2) {
        if pair[1].gamma_check == Some(true) {
            assert!(pair[1].objective <= pair[0].objective + 1e-10, "iteration {}", pair[1].iter);
        }
    }
    let last = solution.trace.rows.last().unwrap();
    assert!((last.objective - 0.100039).abs() < 1e-5);
}

#[test]
fn hamming_compare_reaches_closed_form() {
    let dir = TempDir::new().unwrap();
    let args = CompareArgs::new(fixture("hamming.json"), dir.path().join("gaps.csv"));
    let comparison = execute_compare(&args).unwrap();
    let exact = std::f64::consts::LN_2 - binary_entropy(0.1);
    assert_eq!(comparison.runs.len(), 3);
    for run in &comparison.runs {
        assert!((run.objective - exact).abs() < 1e-4, "{} {}", run.algorithm, run.objective);
    }
    let csv = std::fs::read_to_string(&args.out).unwrap();
    assert!(csv.starts_with("algorithm,cumulative_inner_iterations,objective_gap\n"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() > -1e-10));
}

#[test]
fn em_agrees_with_minfree_on_reference() {
    let problem = bregman_ab_cli::load_problem(&fixture("reference.json")).unwrap();
    let minfree = bregman_ab_cli::run_algorithm(&problem, &SolveArgs::new("", Algorithm::Minfree)).unwrap();
    let em = bregman_ab_cli::run_algorithm(&problem, &SolveArgs::new("", Algorithm::Em)).unwrap();
    assert!((minfree.objective - em.objective).abs() < 2e-4);
    assert!((minfree.distortion - 1.5).abs() < 1e-8);
}
