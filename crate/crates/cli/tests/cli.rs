use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afh_core::config::{DataSource, RunConfig, ToyDataConfig};
use afh_core::episode::{read_trajectory, EpisodeConfig};
use afh_core::image::{read_png, write_png, Image, PatchGeometry};
use afh_core::nets::{load_checkpoint, ConvLayer, EnhancerConfig, PolicyConfig};

fn afh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 32x32 run with tiny networks; `output_dir` under `dir`.
fn tiny_config(dir: &Path, iterations: usize) -> PathBuf {
    let (h, w, c) = (32, 32, 3);
    let mut cfg = RunConfig::toy();
    cfg.policy = PolicyConfig::new(h, w, c);
    cfg.policy.encoder_width = 8;
    cfg.policy.lstm_hidden = 6;
    cfg.enhancer = EnhancerConfig::new(h, w, c, 12, 10);
    cfg.enhancer.global_fc_width = 6;
    cfg.enhancer.conv_spec = vec![ConvLayer::new(4, 3), ConvLayer::new(c, 3)];
    cfg.episode = EpisodeConfig {
        steps: 3,
        geometry: PatchGeometry::new(12, 10),
        ..cfg.episode
    };
    cfg.training.optimizer.iterations = iterations;
    cfg.training.optimizer.batch_size = 2;
    cfg.training.validate_every = 2;
    cfg.training.validation_size = 2;
    cfg.training.checkpoint_every = 2;
    cfg.data = DataSource::Toy(ToyDataConfig {
        height: h,
        width: w,
        scale: 4,
        train_size: 6,
        val_size: 3,
        seed: 5,
    });
    cfg.ablation.tsweep_steps = vec![1, 2];
    cfg.ablation.no_attention_steps = 2;
    cfg.output_dir = dir.join("run");
    let path = dir.join("tiny.json");
    cfg.save(&path).unwrap();
    path
}

fn manifest(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn toy_preset_trains_two_hundred_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    ok(&afh(&["train", "--preset", "toy", "--iterations", "200", "--output", s(&out)]));
    let ck = load_checkpoint::<f32>(out.join("final.ckpt")).unwrap();
    assert_eq!(ck.meta["iteration"], 200);
    assert!(out.join("checkpoints/iter_0000200.ckpt").exists());
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
    let effective = RunConfig::load(out.join("config.json")).unwrap();
    assert_eq!(effective.training.optimizer.iterations, 200);
    assert_eq!(effective.output_dir, out);
}

#[test]
fn resume_continues_numbering_and_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 4);
    let straight = dir.path().join("straight");
    ok(&afh(&["train", "--config", s(&cfg), "--output", s(&straight)]));

    let split = dir.path().join("split");
    ok(&afh(&["train", "--config", s(&cfg), "--output", s(&split), "--iterations", "2"]));
    let half = split.join("checkpoints/iter_0000002.ckpt");
    ok(&afh(&["train", "--config", s(&cfg), "--output", s(&split), "--checkpoint", s(&half)]));

    let log = std::fs::read_to_string(split.join("train_log.csv")).unwrap();
    let iters: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, vec!["1", "2", "3", "4"]);
    let a = load_checkpoint::<f32>(straight.join("final.ckpt")).unwrap();
    let b = load_checkpoint::<f32>(split.join("final.ckpt")).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.optimizer, b.optimizer);
    assert!(manifest(&split).iter().any(|l| l.ends_with("iter_0000004.ckpt")));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    json["data"]["width"] = 30.into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let out = afh(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.width"));

    std::fs::write(&bad, "{\n  \"policy\": {\n    \"image_height\": \"x\"\n  }\n}\n").unwrap();
    let out = afh(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = afh(&["ablate", "--config", s(&cfg), "--suite", "everything"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn untrained_checkpoint_evaluates_as_bicubic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let run = dir.path().join("run");
    ok(&afh(&["train", "--config", s(&cfg)]));
    let out = afh(&["eval", "--checkpoint", s(&run.join("final.ckpt")), "--time"]);
    ok(&out);
    let summary = std::fs::read_to_string(run.join("eval/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1..], rows[1][1..]);
    let per_image = std::fs::read_to_string(run.join("eval/metrics.csv")).unwrap();
    // Header, three images, mean.
    assert_eq!(per_image.lines().count(), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("latency"));
    let listed = manifest(&run);
    assert!(listed.iter().any(|l| l.ends_with("summary.csv")));
    assert!(listed.iter().any(|l| l.ends_with("final.ckpt")));
    let missing = afh(&["eval", "--checkpoint", s(&run.join("nope.ckpt"))]);
    assert!(!missing.status.success());
}

#[test]
fn hallucinate_writes_model_sized_output_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let run = dir.path().join("run");
    ok(&afh(&["train", "--config", s(&cfg)]));
    let ckpt = run.join("final.ckpt");
    let input = dir.path().join("lr.png");
    write_png(&Image::from_fn(8, 8, 1, |y, x, _| ((y * 3 + x) % 8) as f64 / 8.0), &input).unwrap();

    let first = dir.path().join("a/out.png");
    std::fs::create_dir_all(first.parent().unwrap()).unwrap();
    let traj = dir.path().join("traj");
    ok(&afh(&["hallucinate", "--checkpoint", s(&ckpt), s(&input), s(&first), "--dump-trajectory", s(&traj), "--time"]));
    let img = read_png(&first).unwrap();
    assert_eq!(img.dims(), (32, 32, 3));
    let exported = read_trajectory(&traj).unwrap();
    assert_eq!(exported.rows.len(), 3);
    assert_eq!(exported.states.len(), 4);

    let second = dir.path().join("b.png");
    ok(&afh(&["hallucinate", "--checkpoint", s(&ckpt), s(&input), s(&second)]));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let odd = dir.path().join("odd.png");
    write_png(&Image::filled(8, 7, 3, 0.5), &odd).unwrap();
    assert!(!afh(&["hallucinate", "--checkpoint", s(&ckpt), s(&odd), s(&second)]).status.success());
    let garbage = dir.path().join("garbage.png");
    std::fs::write(&garbage, b"not a png").unwrap();
    assert!(!afh(&["hallucinate", "--checkpoint", s(&ckpt), s(&garbage), s(&second)]).status.success());

    let grid = dir.path().join("grid.png");
    ok(&afh(&["visualize", s(&traj), s(&grid)]));
    let rendered = read_png(&grid).unwrap();
    assert_eq!(rendered.width(), 2 + 3 * (32 + 2));
    std::fs::write(traj.join("manifest.csv"), "step,x\n1,oops\n").unwrap();
    assert!(!afh(&["visualize", s(&traj), s(&grid)]).status.success());
}

#[test]
fn ablation_suites_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let run = dir.path().join("run");
    for (suite, rows) in [("tsweep", 3), ("random_patch", 3), ("no_attention", 3), ("i0_input", 3)] {
        ok(&afh(&["ablate", "--config", s(&cfg), "--suite", suite]));
        let table = std::fs::read_to_string(run.join(format!("ablation_{suite}.csv"))).unwrap();
        assert_eq!(table.lines().count(), rows + 1, "{suite}");
    }
    let listed = manifest(&run);
    assert!(listed.iter().any(|l| l.ends_with("no_attention/no_attention.ckpt")));
    assert!(listed.iter().any(|l| l.ends_with("tsweep/T2.ckpt")));
}
