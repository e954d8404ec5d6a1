use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_miso-ma"))
}

#[test]
fn single_dof_query() {
    let out = cli().args(["dof", "--strategy", "rs1", "-k", "6", "-m", "4", "--alpha", "1/2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "strategy,M,K,alpha,sum,mmf\nRS1,4,6,1/2,5/2,1/3\n");
}

#[test]
fn simulate_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let status = cli()
        .args(["simulate", "-k", "2", "-m", "2", "--strategies", "mulp,oma", "--snr", "0:10:10", "--realizations", "2", "-o"])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let cells = std::fs::read_to_string(&path).unwrap();
    assert!(cells.starts_with("strategy,seed,snr_dB,alpha,R_1,R_2,R_c,sum,mmf,iterations,converged\n"));
    assert_eq!(cells.lines().count(), 1 + 2 * 2 * 2);
    assert!(dir.path().join("run.summary.csv").exists());
}

#[test]
fn print_config_round_trips() {
    let out = cli()
        .args(["simulate", "-k", "4", "-m", "2", "--strategies", "noma:2,rs1", "--snr", "5,15", "--alpha", "0.5", "--print-config"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = cli().args(["simulate", "--print-config", "--config"]).arg(&path).output().unwrap();
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn bad_input_exits_with_two() {
    let out = cli().args(["simulate", "-k", "4", "-m", "2", "--strategies", "noma:3", "--snr", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_selftest_passes() {
    let out = cli().args(["selftest", "--quick"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8(out.stdout).unwrap().lines().all(|l| l.starts_with("PASS")));
}
