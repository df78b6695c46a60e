use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
lambda_0 = 12
L = 1
S = 5
K = 2
D_h = 6
T = 2
e = 3
alpha = 0.1
init_range = 0.3
frames = 6
train_sequences = 2
U = 5
D = 2
oracle_resolution = 6
cell_size = 5
";

fn vlcuav(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlcuav")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

#[test]
fn usage_errors_exit_one() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&vlcuav(d, &["--help"])), 0);
    assert_eq!(code(&vlcuav(d, &["--bogus"])), 1);
    assert_eq!(code(&vlcuav(d, &[])), 1);
    assert_eq!(code(&vlcuav(d, &["synth"])), 1);
    assert_eq!(code(&vlcuav(d, &["--set", "nokey=1", "synth", "--out", "x"])), 1);
    assert_eq!(code(&vlcuav(d, &["--set", "gamma", "synth", "--out", "x"])), 1);
    fs::write(d.join("bad.cfg"), "gamma = fast\n").unwrap();
    let out = vlcuav(d, &["-c", "bad.cfg", "synth", "--out", "x"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(code(&vlcuav(d, &["-c", "small.cfg", "sweep", "--var", "weather", "--values", "1"])), 1);
}

#[test]
fn print_config_lists_every_key() {
    let dir = setup();
    let out = vlcuav(dir.path(), &["--set", "H=55", "--print-config"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for line in ["eta_r = 0.0005", "gamma = 0.01", "delta = 0.01", "epsilon = 0.0001", "H = 55", "D_q = 16", "N = 200"] {
        assert!(text.lines().any(|l| l == line), "missing `{line}`");
    }
}

#[test]
fn synth_train_predict_plan() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["-c", "small.cfg"];
    let run = |args: &[&str]| vlcuav(d, &[&cfg[..], args].concat());

    let out = run(&["synth", "--out", "seq.txt", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(d.join("seq.txt")).unwrap().starts_with("ILLUMGRID v1 12 6 5 10"));

    let out = run(&["train", "--out", "model.ckpt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["train", "--out", "model2.ckpt", "--data", "seq.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&["predict", "--checkpoint", "model.ckpt", "--input", "seq.txt", "--out", "next.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(d.join("next.txt")).unwrap().starts_with("ILLUMGRID v1 12 1 5 10"));

    let out = run(&["plan", "--grid", "next.txt", "--out", "plan"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("total power"));
    let uavs = fs::read_to_string(d.join("plan/uavs.csv")).unwrap();
    assert_eq!(uavs.lines().count(), 3);
    assert_eq!(fs::read_to_string(d.join("plan/users.csv")).unwrap().lines().count(), 6);

    fs::write(d.join("users.csv"), "v,w,rate\n10,10,1\n50,50,0.5\n").unwrap();
    let out = run(&["plan", "--grid", "seq.txt", "--frame", "0", "--users", "users.csv", "--variant", "center"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&run(&["plan", "--grid", "seq.txt", "--variant", "best"])), 1);
    assert_eq!(code(&run(&["plan", "--grid", "seq.txt", "--frame", "9"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["-c", "small.cfg"];
    let run = |args: &[&str]| vlcuav(d, &[&cfg[..], args].concat());
    assert_eq!(code(&run(&["plan", "--grid", "missing.txt"])), 2);
    fs::write(d.join("broken.txt"), "ILLUMGRID v1 2 1 1 1\n1 2\n").unwrap();
    assert_eq!(code(&run(&["plan", "--grid", "broken.txt"])), 2);
    fs::write(d.join("users.csv"), "v,w,rate\n500,10,1\n").unwrap();
    assert_eq!(code(&run(&["synth", "--out", "seq.txt"])), 0);
    assert_eq!(code(&run(&["plan", "--grid", "seq.txt", "--users", "users.csv"])), 2);
    assert_eq!(code(&run(&["predict", "--checkpoint", "nothing.ckpt", "--input", "seq.txt", "--out", "o.txt"])), 2);
}

#[test]
fn divergence_exits_three() {
    let dir = setup();
    let out = vlcuav(dir.path(), &["-c", "small.cfg", "--set", "alpha=1e300", "--set", "init_range=0.5", "train", "--out", "m"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_and_report() {
    let dir = setup();
    let d = dir.path();
    let out = vlcuav(d, &["-c", "small.cfg", "--set", "replicates=2", "sweep", "--var", "height", "--values", "30,40", "--out", "res"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(d.join("res/metrics_height.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2 * 7);
    assert!(metrics.starts_with("experiment,sweep,sweep_value,replicate,variant"));
    assert!(d.join("res/summary_height.csv").is_file());
    assert!(d.join("res/timings.csv").is_file());

    let out = vlcuav(d, &["report", "--metrics", "res/metrics_height.csv", "--out", "again"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(d.join("again/metrics_height.csv")).unwrap(), metrics);
    assert_eq!(
        fs::read_to_string(d.join("again/summary_height.csv")).unwrap(),
        fs::read_to_string(d.join("res/summary_height.csv")).unwrap()
    );
}
