use std::fs;
use std::process::{Command, Output};

fn netscatter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netscatter"))
        .args(args)
        .env_remove("NETSCATTER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Value of `column` in the first data row.
fn field(csv: &str, column: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap_or_else(|| panic!("no column {column}"));
    row[i].to_string()
}

#[test]
fn analytic_collision_prints_headline() {
    let o = netscatter(&["analytic", "--collision", "--sf", "9", "--n", "10"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().next().unwrap().ends_with(" 0.088"));
}

#[test]
fn analytic_choir_for_five_devices() {
    let o = netscatter(&["analytic", "--choir", "--n", "5"]);
    assert_eq!(stdout(&o).trim(), "choir_fraction 0.3024");
}

#[test]
fn bersnr_high_snr_single_device_is_error_free() {
    let o = netscatter(&["bersnr", "--snr", "60", "--devices", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "ber"), "0");
    assert_eq!(field(&out, "experiment"), "bersnr");
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn same_command_gives_identical_bytes() {
    let args = ["bersnr", "--snr", "-5,5", "--devices", "4", "--n-symbols", "400", "--seed", "11"];
    let (a, b) = (netscatter(&args), netscatter(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "seed = 3\n\n[bersnr]\ndevices = 2\nsnr_range = [0, 5]\n").unwrap();
    let o = netscatter(&["bersnr", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn invalid_value_in_file_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "# bad spreading factor\nseed = 3\nsf = 13\n").unwrap();
    let o = netscatter(&["bersnr", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.toml:3: sf"), "{}", stderr(&o));
}

#[test]
fn bad_flag_is_a_config_error() {
    assert_eq!(netscatter(&["bersnr", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(netscatter(&["bersnr", "--skip", "0"]).status.code(), Some(1));
    assert_eq!(netscatter(&["--help"]).status.code(), Some(0));
}

#[test]
fn capacity_exceeded_is_a_runtime_error() {
    let o = netscatter(&["network", "--n-devices", "300", "--rounds", "1", "--schemes", "netscatter_cfg1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("capacity"), "{}", stderr(&o));
}

#[test]
fn flags_override_file_and_env_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "experiment = \"bersnr\"\nseed = 5\n\n[bersnr]\nsnr = [60]\nn_symbols = 40\n").unwrap();
    let cfg = path.to_str().unwrap();

    let from_file = netscatter(&["bersnr", "--config", cfg]);
    assert_eq!(field(&stdout(&from_file), "seed"), "5");
    assert_eq!(field(&stdout(&from_file), "n_symbols"), "40");

    let flagged = netscatter(&["bersnr", "--config", cfg, "--seed", "6", "--n-symbols", "80"]);
    assert_eq!(field(&stdout(&flagged), "seed"), "6");
    assert_eq!(field(&stdout(&flagged), "n_symbols"), "80");

    let env = Command::new(env!("CARGO_BIN_EXE_netscatter"))
        .args(["bersnr", "--config", cfg])
        .env("NETSCATTER_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(field(&stdout(&env), "seed"), "9");
}

#[test]
fn config_for_another_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "experiment = \"nearfar\"\n").unwrap();
    let o = netscatter(&["bersnr", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":1: experiment"), "{}", stderr(&o));
}

#[test]
fn output_flag_writes_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let o = netscatter(&["nearfar", "--power-diff-db", "0,20", "--n-symbols", "200", "--output", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("experiment,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn fftvar_and_dynrange_run() {
    let o = netscatter(&["fftvar", "--n-packets", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = netscatter(&["dynrange", "--candidate-bins", "258", "--packets", "10", "--resolution-db", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
}
