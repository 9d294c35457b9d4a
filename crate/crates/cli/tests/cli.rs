use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldenhancer::image_io::{load_image, save_image};
use ldenhancer::network::{Network, NetworkConfig};
use ldenhancer::tensor::{Shape, Tensor};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldenhancer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_weights(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("w.bin");
    Network::<f32>::new(NetworkConfig::default()).unwrap().to_archive().save(&path).unwrap();
    path
}

#[test]
fn enhance_writes_the_output_and_trace() {
    let t = tempfile::tempdir().unwrap();
    let weights = write_weights(t.path());
    let img = Tensor::from_fn(Shape::new(1, 40, 24, 3), |_, y, x, c| ((y * 3 + x + c) % 17) as f32 / 16.0);
    let input = t.path().join("img.png");
    save_image(&img, 0, &input).unwrap();
    let out = t.path().join("out");
    let o = run(&["enhance", "--weights", p(&weights), "--input", p(&input), "--out", p(&out), "--iterations", "3", "--dump-trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_image(out.join("img.png")).unwrap().shape(), Shape::new(1, 40, 24, 3));
    for i in 0..=3 {
        assert!(out.join("img_trace").join(format!("iter_{i:02}.png")).is_file());
    }
    assert!(!t.path().join("img_trace").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["enhance", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn eval_length_mismatch_names_the_sequence() {
    let t = tempfile::tempdir().unwrap();
    let (pred, gt) = (t.path().join("pred"), t.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    fs::write(gt.join("car7.txt"), "1,1,10,10\n2,2,10,10\n3,3,10,10\n").unwrap();
    fs::write(pred.join("car7.txt"), "1,1,10,10\n2,2,10,10\n").unwrap();
    let o = run(&["eval", "--pred-dir", p(&pred), "--gt-dir", p(&gt), "--out-dir", p(&t.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("car7"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn eval_with_baseline_writes_reports_and_plots() {
    let t = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["gt", "base", "enh"].iter().map(|d| t.path().join(d)).collect();
    for d in &dirs {
        fs::create_dir_all(d).unwrap();
    }
    let gt: String = (0..30).map(|i| format!("{},{},20,20\n", 10 + i, 10)).collect();
    let base: String = (0..30).map(|i| format!("{},{},20,20\n", 10 + i + (i % 5) * 6, 10)).collect();
    let enh: String = (0..30).map(|i| format!("{},{},20,20\n", 10 + i + (i % 5), 10)).collect();
    fs::write(dirs[0].join("s1.txt"), &gt).unwrap();
    fs::write(dirs[1].join("s1.txt"), &base).unwrap();
    fs::write(dirs[2].join("s1.txt"), &enh).unwrap();
    let out = t.path().join("out");
    let o = run(&[
        "eval", "--pred-dir", p(&dirs[2]), "--gt-dir", p(&dirs[0]), "--baseline-dir", p(&dirs[1]), "--out-dir", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "baseline.json", "deltas.json", "success.svg", "precision.csv", "norm_precision.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let svg = fs::read_to_string(out.join("success.svg")).unwrap();
    assert_eq!(svg.matches("class=\"curve\"").count(), 2);

    let replot = t.path().join("replot");
    let spec = format!("enh={}", p(&out.join("report.json")));
    let o = run(&["plot", "--report", &spec, "--out-dir", p(&replot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!fs::read(replot.join("success.csv")).unwrap().is_empty());
}

#[test]
fn bad_override_fails_with_one_line() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["label", "--set", "train.no_such_key=3", "--set", &format!("train.dataset_root={}", p(t.path()))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}

#[test]
fn label_then_train_on_a_tiny_synthetic_set() {
    let t = tempfile::tempdir().unwrap();
    let sets: Vec<String> = [
        format!("train.dataset_root={}", p(&t.path().join("data"))),
        format!("train.label_cache={}", p(&t.path().join("labels"))),
        format!("train.out_dir={}", p(&t.path().join("run"))),
        "train.input_size=32".into(),
        "network.input_size=32".into(),
        "train.sample_stride=1".into(),
        "train.epochs=2".into(),
        "train.checkpoint_every=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect();
    let args = |cmd: &str, extra: &[&str]| -> Vec<String> {
        let mut v = vec![cmd.to_string()];
        v.extend(sets.iter().cloned());
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let train_args = args("train", &[]);
    let refs: Vec<&str> = train_args.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(1), "training without labels must fail");
    let label_args = args("label", &["--synthesize", "6"]);
    let refs: Vec<&str> = label_args.iter().map(String::as_str).collect();
    let o = run(&refs);
    assert!(o.status.success(), "{}", stderr(&o));
    let refs: Vec<&str> = train_args.iter().map(String::as_str).collect();
    let o = run(&refs);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = t.path().join("run");
    assert!(run_dir.join("weights.bin").is_file());
    assert_eq!(fs::read_to_string(run_dir.join("loss_log.csv")).unwrap().lines().count(), 3);
    let ckpt = run_dir.join("checkpoints").join("epoch_0001.json");
    let resume_args = args("train", &["--resume", p(&ckpt)]);
    let refs: Vec<&str> = resume_args.iter().map(String::as_str).collect();
    let o = run(&refs);
    assert!(o.status.success(), "{}", stderr(&o));
}
