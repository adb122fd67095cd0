use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn keypose(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_keypose")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "keypose {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen_small(dir: &Path) -> String {
    let data = dir.join("data");
    keypose(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--objects-per-family",
        "2",
        "--scenes-per-object",
        "6",
    ]);
    data.to_str().unwrap().to_string()
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let config = dir.path().join("train.cfg");
    fs::write(
        &config,
        "# small run\nhidden = 16\nscenes_per_object = 6\ncontext_seeds = 8\niterations = 50\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    keypose(&[
        "train",
        "--data",
        &data,
        "--config",
        config.to_str().unwrap(),
        "--decoder",
        "mlp",
        "--iters",
        "4",
        "--seed",
        "2",
        "--out",
        run_s,
        "--quiet",
    ]);

    let trace = fs::read_to_string(run.join("loss.txt")).unwrap();
    let rows: Vec<&str> = trace.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4, "--iters overrides the config file");
    let echo = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echo.contains("decoder = mlp") && echo.contains("hidden = 16") && echo.contains("seed = 2"));

    let ckpt = run.join("checkpoint.json");
    let report = dir.path().join("report.csv");
    let out = keypose(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--split",
        "cross",
        "--occluded",
        "--report",
        report.to_str().unwrap(),
    ]);
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("cross") && summary.contains("ADD-0.1d"));
    let csv = fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "id,family,split,l1,add,adds,add_0.1d,targets,failures"
    );
    assert_eq!(lines.count(), 4);
    assert!(dir.path().join("report.csv.txt").exists());

    let again = dir.path().join("again.csv");
    keypose(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--split",
        "cross",
        "--occluded",
        "--report",
        again.to_str().unwrap(),
    ]);
    assert_eq!(csv, fs::read_to_string(&again).unwrap());
}

#[test]
fn eval_on_training_objects_with_context_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let config = dir.path().join("train.cfg");
    fs::write(&config, "hidden = 8\nscenes_per_object = 6\niterations = 2\n").unwrap();
    let run = dir.path().join("run");
    keypose(&[
        "train",
        "--data",
        &data,
        "--config",
        config.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--quiet",
    ]);
    let ckpt = run.join("checkpoint.json");
    let out = keypose(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--train-objects",
        "--contexts",
        "3",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("overrides eval_contexts"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train"));
}

#[test]
fn fit_pose_prints_pose_and_residual() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.txt");
    // 90 degrees about z, then a shift of (1, 2, 3).
    let src = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ];
    let mut text = String::from("# x y z x' y' z'\n");
    for p in src {
        text += &format!(
            "{} {} {} {} {} {}\n",
            p[0],
            p[1],
            p[2],
            -p[1] + 1.0,
            p[0] + 2.0,
            p[2] + 3.0
        );
    }
    fs::write(&path, text).unwrap();
    let out = keypose(&["fit-pose", path.to_str().unwrap()]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let t_line = stdout.lines().find(|l| l.starts_with("translation:")).unwrap();
    let t: Vec<f64> = t_line[12..].split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert!((t[0] - 1.0).abs() < 1e-12 && (t[1] - 2.0).abs() < 1e-12 && (t[2] - 3.0).abs() < 1e-12);
    let residual: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("residual: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual < 1e-20);

    fs::write(&path, "1 2 3\n").unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_keypose"))
        .args(["fit-pose", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn gradcheck_command_passes() {
    let out = keypose(&["gradcheck", "--configs", "1"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 8);
    assert!(!stdout.contains("FAIL"));
}
