use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spnpb(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spnpb"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn spnpb")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn collect_train_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = spnpb(
        out,
        &["--seed", "3", "collect", "--steps", "20", "--trials-per-config", "2"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dataset.csv").exists());

    let data = out.join("dataset.csv");
    let o = spnpb(out, &["train", "--data", data.to_str().unwrap(), "--epochs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let losses = fs::read_to_string(out.join("train_loss.csv")).unwrap();
    let lines: Vec<&str> = losses.lines().collect();
    assert_eq!(lines[0], "# train-loss v1");
    assert_eq!(lines[1], "epoch,loss");
    assert_eq!(lines.len(), 4);

    let model = out.join("model.json");
    let o = spnpb(out, &["analyze-pb", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let points = fs::read_to_string(out.join("pb_pca_points.csv")).unwrap();
    // 6 configs x 2 trials, plus comment and header.
    assert_eq!(points.lines().count(), 14);
}

#[test]
fn control_and_adapt_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let data = out.join("dataset.csv");
    let model = out.join("model.json");
    assert_eq!(
        code(&spnpb(out, &["collect", "--steps", "15", "--trials-per-config", "1"])),
        0
    );
    assert_eq!(
        code(&spnpb(
            out,
            &["train", "--data", data.to_str().unwrap(), "--epochs", "1"]
        )),
        0
    );

    let o = spnpb(
        out,
        &[
            "--sequential",
            "control",
            "--model",
            model.to_str().unwrap(),
            "--episodes",
            "2",
            "--ticks",
            "5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "control_episode_0.csv",
        "control_episode_1.csv",
        "control_average.csv",
        "control_summary.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ep = fs::read_to_string(out.join("control_episode_0.csv")).unwrap();
    assert_eq!(ep.lines().count(), 2 + 5);
    assert!(ep.lines().nth(1).unwrap().ends_with(",fault,p0,p1"));

    let cfg = out.join("live.cfg");
    fs::write(&cfg, "control.pb_label = zero\nadapt.threshold = 2\n").unwrap();
    let o = spnpb(
        out,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "control",
            "--model",
            model.to_str().unwrap(),
            "--episodes",
            "1",
            "--ticks",
            "6",
            "--live-adapt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ep = fs::read_to_string(out.join("control_episode_0.csv")).unwrap();
    let pb_cols = |line: &str| line.rsplitn(3, ',').take(2).map(str::to_string).collect::<Vec<_>>();
    let rows: Vec<&str> = ep.lines().skip(2).collect();
    assert!(pb_cols(rows[0]).iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    assert!(pb_cols(rows[5]).iter().any(|v| v.parse::<f64>().unwrap() != 0.0));

    let o = spnpb(
        out,
        &[
            "adapt",
            "--model",
            model.to_str().unwrap(),
            "--ticks",
            "15",
            "--episodes",
            "1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("pb_trajectory_0.csv")).unwrap();
    assert!(traj.starts_with("# pb-trajectory v1\ntick,env,p0,p1,buffer_nll\n"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("run.cfg");
    fs::write(
        &cfg,
        "# tiny\ncollect.steps = 12\ncollect.trials_per_config = 1\ncollect.alphas = 0.5\n",
    )
    .unwrap();
    let o = spnpb(out, &["--config", cfg.to_str().unwrap(), "collect"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("wrote 2 trials (12 samples each)"));

    let o = spnpb(out, &["--config", cfg.to_str().unwrap(), "collect", "--steps", "9"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("(9 samples each)"));
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("bad.cfg");
    fs::write(&cfg, "train.epochz = 3\n").unwrap();
    assert_eq!(code(&spnpb(out, &["--config", cfg.to_str().unwrap(), "collect"])), 2);

    fs::write(&cfg, "control.horizon = 0\n").unwrap();
    let model = out.join("model.json");
    assert_eq!(
        code(&spnpb(out, &["collect", "--steps", "10", "--trials-per-config", "1"])),
        0
    );
    let data = out.join("dataset.csv");
    assert_eq!(
        code(&spnpb(
            out,
            &["train", "--data", data.to_str().unwrap(), "--epochs", "1"]
        )),
        0
    );
    assert_eq!(
        code(&spnpb(
            out,
            &[
                "--config",
                cfg.to_str().unwrap(),
                "control",
                "--model",
                model.to_str().unwrap()
            ]
        )),
        2
    );

    assert_eq!(
        code(&spnpb(out, &["evaluate", "--model", "/definitely/not/here.json"])),
        2
    );
    assert_eq!(code(&spnpb(out, &["train", "--data", "/definitely/not/here.csv"])), 2);
    // clap usage errors
    assert_eq!(code(&spnpb(out, &["train"])), 2);
    assert_eq!(code(&spnpb(out, &["collect", "--steps", "many"])), 2);

    fs::write(out.join("garbage.json"), "{\"format\": \"other\"}").unwrap();
    let g = out.join("garbage.json");
    assert_eq!(code(&spnpb(out, &["analyze-pb", "--model", g.to_str().unwrap()])), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(
        code(&spnpb(out, &["collect", "--steps", "20", "--trials-per-config", "1"])),
        0
    );
    let cfg = out.join("hot.cfg");
    fs::write(
        &cfg,
        "train.weight_lr = 1e300\ntrain.pb_lr = 1e300\ntrain.clip_norm = 1e300\n",
    )
    .unwrap();
    let data = out.join("dataset.csv");
    let o = spnpb(
        out,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "5",
        ],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn outputs_are_reproducible() {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (i, dir) in runs.iter().enumerate() {
        let out = dir.path();
        let data = out.join("dataset.csv");
        let model = out.join("model.json");
        // Alternate thread modes: results must not depend on them.
        let mode: &[&str] = if i == 0 { &["--sequential"] } else { &[] };
        let run = |args: &[&str]| {
            let all: Vec<&str> = mode.iter().chain(args).copied().collect();
            let o = spnpb(out, &all);
            assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        };
        run(&["--seed", "4", "collect", "--steps", "15", "--trials-per-config", "2"]);
        run(&[
            "--seed",
            "4",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--epochs",
            "2",
        ]);
        run(&["analyze-pb", "--model", model.to_str().unwrap()]);
        run(&[
            "adapt",
            "--model",
            model.to_str().unwrap(),
            "--ticks",
            "14",
            "--episodes",
            "2",
        ]);
        run(&[
            "control",
            "--model",
            model.to_str().unwrap(),
            "--ticks",
            "4",
            "--episodes",
            "2",
        ]);
        run(&[
            "estimate",
            "--model",
            model.to_str().unwrap(),
            "--ticks",
            "8",
            "--episodes",
            "2",
        ]);
    }
    let mut names: Vec<_> = fs::read_dir(runs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.contains(&"estimate_1.csv".into()) && names.len() >= 14);
    for name in names {
        let a = fs::read(runs[0].path().join(&name)).unwrap();
        let b = fs::read(runs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs between runs");
    }
}
