use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cdpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdpinn")).args(args).output().unwrap()
}

fn read_csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join(name)).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn fdm_solve_writes_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fdm");
    let o = cdpinn(&["fdm-solve", "--N", "32", "--epsilon", "0.01", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out, "solution.csv");
    assert_eq!(rows[0], ["x", "u_fdm", "u_exact"]);
    assert_eq!(rows.len(), 34);
    assert_eq!(rows[1][0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[33][0].parse::<f64>().unwrap(), 1.0);
    let meta = fs::read_to_string(out.join("run_meta.csv")).unwrap();
    assert!(meta.contains("peclet,1.5625"));
    assert!(meta.contains("oscillatory,true"));
    assert!(out.join("config.echo").exists());
}

#[test]
fn missing_epsilon_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fdm");
    let o = cdpinn(&["fdm-solve", "--N", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "problem = primary1d\nepsilon = 1e-3\nadam.epoch = 10\n").unwrap();
    let out = tmp.path().join("run");
    let o = cdpinn(&["train-correct-reduced", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adam.epoch"));
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        "problem = primary1d\nepsilon = 1e-3\nnet.dims = 1, 6, 1\ntransform.a = 2\ntransform.b = -1\n\
         adam.epochs = 40\nlbfgs.epochs = 10\nsamples.res_div = 32\nseed = 5\nsweep.runs = 3\nntk.k = 3\n",
    )
    .unwrap();
    for cmd in ["train-correct-reduced", "sweep-seeds", "ntk-analyze"] {
        let dirs: Vec<_> = ["a", "b"].iter().map(|d| tmp.path().join(format!("{cmd}-{d}"))).collect();
        for d in &dirs {
            let o = cdpinn(&["--threads", "2", cmd, "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 3, "{cmd}: {names:?}");
        for n in names {
            if n == "run_meta.csv" {
                continue;
            }
            assert_eq!(fs::read(dirs[0].join(&n)).unwrap(), fs::read(dirs[1].join(&n)).unwrap(), "{cmd}: {n:?}");
        }
    }
}

#[test]
fn two_d_solution_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "problem = cd2d\nepsilon = 0.1\nsamples.n = 5\nadam.epochs = 20\nlbfgs.epochs = 0\n").unwrap();
    let out = tmp.path().join("2d");
    let o = cdpinn(&["train-2d", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out, "solution.csv");
    assert_eq!(rows[0], ["x", "y", "u_exact", "u_approx"]);
    assert!(rows.len() > 1);
    assert!(out.join("params.txt").exists());
}
