//! Campaign artifact contracts and CLI behavior.

use std::path::Path;
use std::process::Command;

use supertomo::campaign::{compare, run_campaign};
use supertomo::config::parse_config_str;

fn config_text(output_dir: &Path, extra: &str) -> String {
    format!(
        "\
        n_side = 16\n\
        n_angles = 6\n\
        n_rays = 23\n\
        model = emission\n\
        snr_db = 18\n\
        stop_metric = objective\n\
        stop_threshold = none\n\
        master_seed = 5\n\
        timing = zero\n\
        output_dir = {}\n\
        {extra}",
        output_dir.display()
    )
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn single_repetition_single_iteration_writes_one_row_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = parse_config_str(&config_text(
        &out,
        "solver = em\nrepetitions = 1\nmax_iters = 1\n",
    ))
    .unwrap();
    let outcome = run_campaign(&config).unwrap();
    assert!(outcome.fully_succeeded());

    // One data row after each header.
    for file in [
        "rep_000_iterations.csv",
        "err_vs_iter.csv",
        "curves_mean.csv",
    ] {
        let text = read(&out.join(file));
        assert_eq!(text.lines().count(), 2, "{file}: {text}");
    }
    let tvkl = read(&out.join("tv_vs_kl.csv"));
    assert_eq!(tvkl.lines().count(), 2);
    // Single repetition: summary has per-metric rows (NaN interval) plus the
    // failures row.
    let summary = read(&out.join("summary.csv"));
    assert!(summary.lines().any(|l| l.starts_with("kl,")));
    assert!(summary.lines().any(|l| l.starts_with("failures,0")));
}

#[test]
fn compare_duplicates_series_when_merging_a_run_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = parse_config_str(&config_text(
        &out,
        "solver = em\nrepetitions = 2\nmax_iters = 4\n",
    ))
    .unwrap();
    run_campaign(&config).unwrap();

    let merged = dir.path().join("merged.csv");
    compare(&[out.clone(), out.clone()], &merged).unwrap();
    let text = read(&merged);
    let header = text.lines().next().unwrap();
    assert_eq!(header, "k,run_err,run_kl,run_tv,run_2_err,run_2_kl,run_2_tv");
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1..4], cells[4..7], "self-merge series differ: {line}");
    }
}

#[test]
fn compare_pads_shorter_series_with_empty_cells() {
    let dir = tempfile::tempdir().unwrap();
    let short = dir.path().join("short");
    let long = dir.path().join("long");
    let base = "solver = em\nrepetitions = 1\n";
    run_campaign(
        &parse_config_str(&config_text(&short, &format!("{base}max_iters = 2\n"))).unwrap(),
    )
    .unwrap();
    run_campaign(
        &parse_config_str(&config_text(&long, &format!("{base}max_iters = 6\n"))).unwrap(),
    )
    .unwrap();

    let merged = dir.path().join("merged.csv");
    compare(&[short, long], &merged).unwrap();
    let text = read(&merged);
    assert_eq!(text.lines().count(), 7, "{text}");
    let last = text.lines().last().unwrap();
    let cells: Vec<&str> = last.split(',').collect();
    assert_eq!(cells[0], "6");
    assert!(cells[1].is_empty() && cells[2].is_empty() && cells[3].is_empty());
    assert!(!cells[4].is_empty());
}

#[test]
fn compare_rejects_mismatched_geometries() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_campaign(
        &parse_config_str(&config_text(&a, "solver = em\nrepetitions = 1\nmax_iters = 2\n"))
            .unwrap(),
    )
    .unwrap();
    let other = format!(
        "\
        n_side = 16\n\
        n_angles = 5\n\
        n_rays = 23\n\
        model = emission\n\
        solver = em\n\
        repetitions = 1\n\
        max_iters = 2\n\
        timing = zero\n\
        output_dir = {}\n",
        b.display()
    );
    run_campaign(&parse_config_str(&other).unwrap()).unwrap();
    assert!(compare(&[a, b], &dir.path().join("m.csv")).is_err());
}

#[test]
fn campaign_records_solver_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // A pinned, absurdly large stepsize: every repetition fails with the
    // mid-string negativity error and the campaign reports them all.
    let config = parse_config_str(&config_text(
        &out,
        "solver = saem\nstrings = 2\nlambda0 = 1e6\nrepetitions = 2\nmax_iters = 3\n",
    ))
    .unwrap();
    let outcome = run_campaign(&config).unwrap();
    assert_eq!(outcome.failures.len(), 2);
    let failures = read(&out.join("failures.csv"));
    assert!(failures.contains("negativity"), "{failures}");
    let summary = read(&out.join("summary.csv"));
    assert!(summary.lines().any(|l| l.starts_with("failures,2")));
}

#[test]
fn desk_scale_em_reaches_kl_threshold_with_monotone_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = parse_config_str(&format!(
        "\
        n_side = 64\n\
        n_angles = 16\n\
        n_rays = 95\n\
        model = emission\n\
        snr_db = 18\n\
        solver = em\n\
        stop_metric = kl\n\
        stop_threshold = 700\n\
        max_iters = 400\n\
        repetitions = 1\n\
        master_seed = 3\n\
        timing = zero\n\
        output_dir = {}\n",
        out.display()
    ))
    .unwrap();
    let outcome = run_campaign(&config).unwrap();
    assert!(outcome.fully_succeeded());

    let text = read(&out.join("rep_000_iterations.csv"));
    let objectives: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!objectives.is_empty() && objectives.len() < 400, "did not stop early");
    for pair in objectives.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "objective not monotone: {pair:?}");
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_supertomo"))
}

#[test]
fn cli_exit_codes_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();

    // Config error: unknown key.
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "solverr = em\n").unwrap();
    let status = cli().arg("run").arg(&bad).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("solverr"));

    // Successful run.
    let out = dir.path().join("ok_run");
    let good = dir.path().join("good.cfg");
    std::fs::write(
        &good,
        config_text(&out, "solver = em\nrepetitions = 1\nmax_iters = 2\n"),
    )
    .unwrap();
    let status = cli().arg("run").arg(&good).output().unwrap();
    assert_eq!(status.status.code(), Some(0), "{status:?}");
    assert!(out.join("summary.csv").exists());

    // Partial failure: exit code 2.
    let fail_out = dir.path().join("fail_run");
    let failing = dir.path().join("fail.cfg");
    std::fs::write(
        &failing,
        config_text(
            &fail_out,
            "solver = saem\nstrings = 2\nlambda0 = 1e6\nrepetitions = 1\nmax_iters = 2\n",
        ),
    )
    .unwrap();
    let status = cli().arg("run").arg(&failing).output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Environment override redirects the output directory.
    let redirected = dir.path().join("redirected");
    let status = cli()
        .arg("run")
        .arg(&good)
        .env("SUPERTOMO_OUTPUT_DIR", &redirected)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(redirected.join("summary.csv").exists());

    // Phantom subcommand writes both encodings.
    let csv = dir.path().join("ph.csv");
    let bin = dir.path().join("ph.bin");
    assert_eq!(
        cli().args(["phantom", "--n", "32", "--out"]).arg(&csv).output().unwrap().status.code(),
        Some(0)
    );
    assert_eq!(
        cli().args(["phantom", "--n", "32", "--out"]).arg(&bin).output().unwrap().status.code(),
        Some(0)
    );
    let img = supertomo::io::read_image_csv(&csv).unwrap();
    let img_bin = supertomo::io::read_image_binary(&bin).unwrap();
    assert_eq!(img, img_bin);
    assert_eq!(img.n_side(), 32);

    // Compare subcommand over two runs.
    let merged = dir.path().join("merged.csv");
    let status = cli()
        .arg("compare")
        .arg(&out)
        .arg(&redirected)
        .arg("--out")
        .arg(&merged)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(merged.exists());
}
