use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pretext_select::kernels::write_embedding_cache;
use pretext_select::synthetic::{generate, SyntheticConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pretext-select"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: String,
    features: String,
    embeddings: String,
}

impl Fixture {
    fn out(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }

    fn data_args<'a>(&'a self, tasks: &'a str) -> Vec<&'a str> {
        vec![
            "--manifest",
            &self.manifest,
            "--features",
            &self.features,
            "--embeddings",
            &self.embeddings,
            "--tasks",
            tasks,
        ]
    }
}

/// Manifest without audio plus a precomputed feature table and embedding cache.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let set = generate(&SyntheticConfig::default(), 21).unwrap();
    let mut manifest = String::from("id,audio_path,label\n");
    for (id, label) in set.table.sample_ids().iter().zip(set.table.labels()) {
        manifest.push_str(&format!("{id},,{label}\n"));
    }
    let m = root.join("manifest.csv");
    fs::write(&m, manifest).unwrap();
    let f = root.join("features.csv");
    set.table.to_writer(fs::File::create(&f).unwrap()).unwrap();
    let e = root.join("embeddings.gde");
    write_embedding_cache(&e, &set.dataset.embeddings).unwrap();
    let s = |p: &Path| p.to_string_lossy().into_owned();
    Fixture {
        manifest: s(&m),
        features: s(&f),
        embeddings: s(&e),
        root,
        _dir: dir,
    }
}

fn json(path: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn compute_ci_writes_one_row_per_task() {
    let fx = fixture();
    let out = fx.out("ci");
    let mut args = vec!["compute-ci"];
    args.extend(fx.data_args("z_ci,z_dep"));
    args.extend(["--out-dir", &out]);
    ok(&args);
    let report = fs::read_to_string(Path::new(&out).join("ci_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "task_id,ci_estimate");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("z_ci,") && lines[2].starts_with("z_dep,"));
    let ci: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(ci[0] < ci[1]);
    assert!(Path::new(&out).join("ci_per_class.csv").exists());

    let config = json(&format!("{out}/run_config.json"));
    assert_eq!(config["subcommand"], "compute-ci");
    assert_eq!(config["frames"], 32);
    assert_eq!(config["width_factor"], 0.5);
    assert_eq!(config["dataset"]["extraction"]["f0_max_hz"], 500.0);
}

#[test]
fn optimize_weights_is_reproducible() {
    let fx = fixture();
    let (a, b) = (fx.out("w1"), fx.out("w2"));
    for out in [&a, &b] {
        let mut args = vec!["optimize-weights", "--method", "sparsemax", "--seed", "7"];
        args.extend(fx.data_args("z_ci,z_dep,z_mix"));
        args.extend(["--out-dir", out]);
        ok(&args);
    }
    let wa = fs::read(format!("{a}/weights.json")).unwrap();
    let wb = fs::read(format!("{b}/weights.json")).unwrap();
    assert_eq!(wa, wb);
    let m = json(&format!("{a}/weights.json"));
    assert_eq!(m["method"], "sparsemax");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["tasks"].as_array().unwrap().len(), 3);
    assert_eq!(m["weights"].as_array().unwrap().len(), 3);
    assert!((m["sum"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let traj = m["trajectory"].as_array().unwrap();
    assert!(traj.windows(2).all(|p| p[1][1].as_f64() <= p[0][1].as_f64()));
    let config = json(&format!("{a}/run_config.json"));
    assert_eq!(config["optimizer"]["restarts"], 5);
}

#[test]
fn single_task_gets_full_weight() {
    let fx = fixture();
    let out = fx.out("single");
    let mut args = vec!["optimize-weights"];
    args.extend(fx.data_args("z_ci"));
    args.extend(["--out-dir", &out]);
    ok(&args);
    let m = json(&format!("{out}/weights.json"));
    assert_eq!(m["tasks"], serde_json::json!(["z_ci"]));
    assert_eq!(m["weights"], serde_json::json!([1.0]));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let fx = fixture();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = fx.out(&format!("t{threads}"));
        let mut args = vec!["optimize-weights", "--method", "softmax", "--threads", threads];
        args.extend(fx.data_args("z_ci,z_dep,z_mix"));
        args.extend(["--out-dir", &out]);
        ok(&args);
        reports.push(fs::read(format!("{out}/weights.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn all_baseline_emits_ones() {
    let fx = fixture();
    let out = fx.out("all");
    let mut args = vec!["optimize-weights", "--method", "all"];
    args.extend(fx.data_args("z_ci,z_dep"));
    args.extend(["--out-dir", &out]);
    ok(&args);
    let m = json(&format!("{out}/weights.json"));
    assert_eq!(m["weights"], serde_json::json!([1.0, 1.0]));
    assert_eq!(m["method"], "all");
}

#[test]
fn selections_emit_indicator_weights() {
    let fx = fixture();
    for (cmd, dir) in [("select-mrmr", "mrmr"), ("select-rfe", "rfe")] {
        let out = fx.out(dir);
        let mut args = vec![cmd, "--p", "2"];
        args.extend(fx.data_args("z_ci,z_dep,z_mix"));
        args.extend(["--out-dir", &out]);
        ok(&args);
        let sel = json(&format!("{out}/selection.json"));
        assert_eq!(sel["method"], dir);
        assert_eq!(sel["selected"].as_array().unwrap().len(), 2);
        let m = json(&format!("{out}/weights.json"));
        let w: Vec<f64> = m["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(w.iter().filter(|&&v| v == 0.0).count(), 1);
    }
}

#[test]
fn ternary_sweep_grid() {
    let fx = fixture();
    let out = fx.out("tern");
    let mut args = vec!["sweep-ternary", "--step", "0.1"];
    args.extend(fx.data_args("z_ci,z_dep,z_mix"));
    args.extend(["--out-dir", &out]);
    ok(&args);
    let grid = fs::read_to_string(format!("{out}/ternary_z_ci_z_dep_z_mix.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "lambda_1,lambda_2,lambda_3,objective");
    assert_eq!(grid.lines().count(), 67);
}

#[test]
fn subsample_report() {
    let fx = fixture();
    let out = fx.out("sub");
    let mut args = vec!["subsample", "--sizes", "2,4", "--reps", "3", "--seed", "5"];
    args.extend(fx.data_args("z_ci,z_dep"));
    args.extend(["--out-dir", &out]);
    ok(&args);
    let report = fs::read_to_string(format!("{out}/robustness.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 3 * 2);
}

#[test]
fn correlate_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.csv");
    let ci = [0.21, 0.71, 0.17, 0.43, 0.85, 0.80, 0.07];
    let per = [16.77, 16.99, 16.43, 17.46, 18.35, 17.88, 16.46];
    let mut text = String::from("task_set,x,y\n");
    for (x, y) in ci.iter().zip(per) {
        text.push_str(&format!("timit,{x},{y}\n"));
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    ok(&["correlate", "--input", input.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("correlations.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "timit");
    let (rho, tau): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
    assert!((rho - 0.93).abs() <= 0.01 && (tau - 0.81).abs() <= 0.01);
}

#[test]
fn exit_codes() {
    let fx = fixture();
    let unknown = run(&["compute-ci", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(!unknown.stderr.is_empty());

    let out = fx.out("bad");
    let mut args = vec!["compute-ci", "--sigma", "-1"];
    args.extend(fx.data_args("z_ci"));
    args.extend(["--out-dir", &out]);
    assert_eq!(run(&args).status.code(), Some(2));
    assert!(!Path::new(&out).exists());

    let mut args = vec!["sweep-ternary", "--step", "0.3"];
    args.extend(fx.data_args("z_ci,z_dep,z_mix"));
    args.extend(["--out-dir", &out]);
    assert_eq!(run(&args).status.code(), Some(2));

    let mut args = vec!["compute-ci"];
    args.extend(fx.data_args("no_such_task"));
    args.extend(["--out-dir", &out]);
    assert_eq!(run(&args).status.code(), Some(2));

    let missing = run(&["compute-ci", "--manifest", "/nonexistent/m.csv", "--out-dir", &out]);
    assert_eq!(missing.status.code(), Some(1));

    // manifest without audio and nothing precomputed: every path is listed
    let needs_audio = run(&["compute-ci", "--manifest", &fx.manifest, "--tasks", "f0", "--out-dir", &out]);
    assert_eq!(needs_audio.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&needs_audio.stderr).contains("missing audio"));
}

fn write_tone(path: &Path, freq: f64, amp: f64, noise_seed: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let mut state = noise_seed.wrapping_mul(2_654_435_761).max(1);
    for i in 0..8_000 {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        let noise = (state as f64 / u32::MAX as f64 - 0.5) * 0.05;
        let t = i as f64 / 16_000.0;
        let v = amp * (2.0 * PI * freq * t).sin() + noise;
        w.write_sample((v * 32_000.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn audio_extraction_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::from("id,audio_path,label\n");
    for i in 0..12 {
        let name = format!("a{i}.wav");
        let class = i % 2;
        write_tone(&dir.path().join(&name), 150.0 + 100.0 * class as f64 + 7.0 * i as f64, 0.2 + 0.05 * i as f64, i);
        manifest.push_str(&format!("s{i},{name},c{class}\n"));
    }
    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest).unwrap();
    let m = m.to_str().unwrap();
    let ext = dir.path().join("ext");
    let tasks = "f0,loudness,zcr";
    ok(&["extract-features", "--manifest", m, "--tasks", tasks, "--out-dir", ext.to_str().unwrap()]);
    let features = ext.join("features.csv");
    let cache = ext.join("embeddings.gde");
    assert!(fs::read_to_string(&features).unwrap().starts_with("id,label,f0,loudness,zcr\n"));
    assert!(ext.join("embeddings.gde.index").exists());

    let direct = dir.path().join("direct");
    ok(&["compute-ci", "--manifest", m, "--tasks", tasks, "--out-dir", direct.to_str().unwrap()]);
    let cached = dir.path().join("cached");
    ok(&[
        "compute-ci",
        "--manifest",
        m,
        "--features",
        features.to_str().unwrap(),
        "--embeddings",
        cache.to_str().unwrap(),
        "--out-dir",
        cached.to_str().unwrap(),
    ]);
    let read = |d: &Path| -> Vec<f64> {
        fs::read_to_string(d.join("ci_report.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let (a, b) = (read(&direct), read(&cached));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        // embeddings pass through f32 in the cache
        assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-6), "{a:?} vs {b:?}");
    }
}
