use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssm-lfi"))
}

#[test]
fn unknown_keys_fail_with_their_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[run]\nhorizon = 4\nepoch = 3\n[plots]\n").unwrap();
    let out = bin()
        .args(["bench", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.epoch") && err.contains("plots"), "{err}");
}

#[test]
fn run_and_oracle_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "[run]\nhorizon = 3\ninitial_sims = 6\nlmc_epochs = 30\nlmc_inducing = 6\nposterior_samples = 50\ntransition_pairs = 100\n[output]\ntiming = false\nn_traj = 3\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["run", "--method", "lmc-blr", "--model", "nn", "--seed", "4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["raw.csv", "aggregate.csv", "plots.gp", "run.log"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let raw = fs::read_to_string(out.join("raw.csv")).unwrap();
    assert!(raw.lines().nth(2).unwrap().starts_with("lmc-blr,nn,4,2,"));

    let oracle = dir.path().join("abc");
    let status = bin()
        .args(["oracle", "--model", "lg", "--t", "2", "--proposals", "2000", "--retain", "0.01", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&oracle)
        .status()
        .unwrap();
    assert!(status.success());
    let abc = fs::read_to_string(oracle.join("abc.csv")).unwrap();
    assert_eq!(abc.lines().count(), 21);
}
