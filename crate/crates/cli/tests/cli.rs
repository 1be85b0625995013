use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn uapdfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uapdfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = r#"
arms = ["ua_pdfl", "d_fedavg"]
seeds = [1, 2]

[partition]
clients = 5

[protocol]
n_com = 2
rounds = 3

[probe]
rounds = 2

[bound_check]
trials = 5
rounds = 30
"#;

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_twice_gives_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = tmp.path().join(name);
        let o = uapdfl(&["run", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut files = Vec::new();
        for run in ["ua_pdfl_seed1", "ua_pdfl_seed2", "d_fedavg_seed1", "d_fedavg_seed2"] {
            files.push(fs::read(out_dir.join(run).join("metrics.csv")).unwrap());
        }
        files.push(fs::read(out_dir.join("summary.json")).unwrap());
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_and_arm_flags_narrow_the_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out_dir = tmp.path().join("out");
    let o = uapdfl(&[
        "run", "--config", &cfg, "--seed", "7", "--arm", "local", "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut dirs: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, vec!["local_seed7", "summary.json"]);
}

#[test]
fn other_subcommands_write_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    for cmd in ["probe-divergence", "bound-check", "gen-data"] {
        let o = uapdfl(&[cmd, "--config", &cfg, "--seed", "3", "--out-dir", out_s]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join("probe_seed3/divergence.csv").is_file());
    assert!(out.join("bound_check_seed3.csv").is_file());
    assert!(out.join("data_seed3/dataset.txt").is_file());
    assert!(out.join("data_seed3/partition.txt").is_file());
}

#[test]
fn bad_config_fails_with_the_key_named() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[protocol]\nn_com = 30\n").unwrap();
    let o = uapdfl(&["run", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("protocol.n_com"));

    let o = uapdfl(&["run", "--arm", "fedprox"]);
    assert!(!o.status.success());
}
