use std::process::{Command, Output};

fn planwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planwatch")).args(args).output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn run_replay_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = planwatch(&[
        "run", "--grid", "pick-place", "--policies", "saycan,doremi", "--seeds", "1,2", "--episodes", "3", "--out", out,
        "--workers", "2", "--traces",
    ]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(csv.starts_with("family,levels,policy,n_episodes,success_mean"));

    let traces: Vec<_> = std::fs::read_dir(dir.path().join("traces")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(traces.len(), 3 * 2 * 2 * 3);
    let r = planwatch(&["replay", "--trace", traces[0].to_str().unwrap()]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    assert!(text(&r.stdout).starts_with("identical"));

    let r = planwatch(&["summarize", "--csv", dir.path().join("results.csv").to_str().unwrap()]);
    assert!(r.status.success());
    assert!(text(&r.stdout).contains("pick-place"));
}

#[test]
fn replay_reports_divergence_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = planwatch(&["run", "--grid", "move-box", "--policies", "doremi", "--seeds", "1", "--episodes", "1", "--out", out, "--traces"]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let trace = std::fs::read_dir(dir.path().join("traces")).unwrap().next().unwrap().unwrap().path();
    let edited = std::fs::read_to_string(&trace).unwrap().replacen("Go to table A", "Go to table C", 1);
    let bad = dir.path().join("edited.trace");
    std::fs::write(&bad, edited).unwrap();
    let r = planwatch(&["replay", "--trace", bad.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(text(&r.stdout).contains("diverged at event"));
}

#[test]
fn config_file_and_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "[harness]\nseeds = [9]\nepisodes_per_seed = 2\n").unwrap();
    let out = dir.path().join("out");
    let r = planwatch(&["run", "--config", cfg.to_str().unwrap(), "--grid", "stack", "--policies", "saycan", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",saycan,2,"));

    std::fs::write(&cfg, "[arm]\nwarp_speed = 3\n").unwrap();
    let r = planwatch(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(text(&r.stderr).contains("warp_speed"), "{}", text(&r.stderr));
}

#[test]
fn calibrate_prints_a_loadable_config() {
    let r = planwatch(&["calibrate"]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    assert!(text(&r.stderr).contains("move-box nominal s"));
    let fitted = planwatch::config::SimConfig::from_toml_str(&text(&r.stdout)).unwrap();
    fitted.validate().unwrap();
}
