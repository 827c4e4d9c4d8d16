//! End-to-end tests of the `cqpass` binary: artifact flow between
//! subcommands, exit codes, config/flag precedence, and the external
//! process codec with fake shell-script adapters.

use cqpass_core::frameio::{write_y4m, FrameSequence, Plane};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cqpass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqpass"))
        .args(args)
        .output()
        .expect("cannot launch cqpass")
}

/// Runs a subcommand that must succeed and returns its stdout.
fn ok(args: &[&str]) -> String {
    let out = cqpass(args);
    assert!(
        out.status.success(),
        "`cqpass {}` failed with {:?}\nstdout: {}\nstderr: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("killed by signal")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---- synthetic pipeline -----------------------------------------------------

#[test]
fn synthetic_pipeline_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let corpus = p("corpus.tsv");
    let labels = p("labels.tsv");
    let model1 = p("pass1.model");
    let model2 = p("pass2.model");
    let results = p("results.tsv");

    let out = ok(&[
        "synth-corpus",
        "--out", path_str(&corpus),
        "--count", "160",
        "--dim", "6",
        "--noise-sigma", "0.2",
        "--seed", "9",
    ]);
    assert!(out.contains("160 synthetic segments"), "got: {out}");

    let out = ok(&["label", "--corpus", path_str(&corpus), "--out", path_str(&labels)]);
    assert!(out.contains("labeled 160 segments"), "got: {out}");
    assert!(out.contains("converged"), "got: {out}");

    let train_flags = [
        "--hidden", "16",
        "--blocks", "1",
        "--epochs", "150",
        "--learning-rate", "2e-3",
        "--batch-size", "32",
        "--seed", "5",
    ];
    let mut args = vec![
        "train",
        "--corpus", path_str(&corpus),
        "--labels", path_str(&labels),
        "--pass", "1",
        "--model-out", path_str(&model1),
    ];
    args.extend_from_slice(&train_flags);
    let out = ok(&args);
    assert!(out.contains("pass-1 model"), "got: {out}");

    let mut args = vec![
        "train",
        "--corpus", path_str(&corpus),
        "--labels", path_str(&labels),
        "--pass", "2",
        "--pass1-model", path_str(&model1),
        "--model-out", path_str(&model2),
    ];
    args.extend_from_slice(&train_flags);
    let out = ok(&args);
    assert!(out.contains("pass-2 model") && out.contains("+fb"), "got: {out}");

    let out = ok(&[
        "run",
        "--corpus", path_str(&corpus),
        "--model1", path_str(&model1),
        "--model2", path_str(&model2),
        "--out", path_str(&results),
        "--measure-final",
    ]);
    assert!(out.contains("encoded 160 of 160 segments"), "got: {out}");
    assert!(out.contains("mean passes"), "got: {out}");

    let report = p("report.txt");
    let hist = p("hist.tsv");
    let out = ok(&[
        "report",
        "--results", path_str(&results),
        "--out", path_str(&report),
        "--histogram", path_str(&hist),
        "--bands", "1,2",
    ]);
    assert!(out.contains("segments: 160 measured of 160 encoded"), "got: {out}");
    assert!(out.contains("±1.00") && out.contains("±2.00"), "got: {out}");
    assert!(out.contains("mean passes"), "got: {out}");
    assert!(fs::read_to_string(&report).unwrap().contains("mean passes"));
    let hist_text = fs::read_to_string(&hist).unwrap();
    assert_eq!(hist_text.lines().filter(|l| !l.starts_with('#')).count(), 32);

    let baseline = p("baseline.tsv");
    let out = ok(&["baseline", "--corpus", path_str(&corpus), "--out", path_str(&baseline)]);
    assert!(out.contains("fixed rf"), "got: {out}");
    assert!(fs::read_to_string(&baseline).unwrap().starts_with("# cqpass fixed-rf baseline"));

    // Identical inputs reproduce the results artifact byte for byte.
    let results2 = p("results2.tsv");
    ok(&[
        "run",
        "--corpus", path_str(&corpus),
        "--model1", path_str(&model1),
        "--model2", path_str(&model2),
        "--out", path_str(&results2),
        "--measure-final",
    ]);
    assert_eq!(fs::read(&results).unwrap(), fs::read(&results2).unwrap());
}

// ---- exit codes ---------------------------------------------------------------

#[test]
fn pass2_training_without_pass1_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let labels = dir.path().join("labels.tsv");
    ok(&["synth-corpus", "--out", path_str(&corpus), "--count", "10", "--dim", "4"]);
    ok(&["label", "--corpus", path_str(&corpus), "--out", path_str(&labels)]);

    let out = cqpass(&[
        "train",
        "--corpus", path_str(&corpus),
        "--labels", path_str(&labels),
        "--pass", "2",
        "--model-out", path_str(&dir.path().join("m2.model")),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("--pass1-model"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_and_usage_problems_exit_2_runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "not_a_known_key = 1\n").unwrap();
    let out = cqpass(&[
        "--config", path_str(&cfg),
        "label", "--corpus", "x.tsv", "--out", "y.tsv",
    ]);
    assert_eq!(exit_code(&out), 2, "unknown config key should refuse to run");

    // Contradictory segment sources are rejected before any file IO.
    let out = cqpass(&[
        "label",
        "--corpus", "a.tsv",
        "--manifest", "b.tsv",
        "--out", "y.tsv",
    ]);
    assert_eq!(exit_code(&out), 2);

    // A missing input file is a runtime failure, not a config problem.
    let out = cqpass(&["report", "--results", path_str(&dir.path().join("absent.tsv"))]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    ok(&["synth-corpus", "--out", path_str(&corpus), "--count", "8", "--dim", "4"]);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "target_vmaf = 85.0\nlabel_max_iters = 9\n").unwrap();

    let labels = dir.path().join("labels.tsv");
    let out = ok(&[
        "--config", path_str(&cfg),
        "label", "--corpus", path_str(&corpus), "--out", path_str(&labels),
    ]);
    assert!(out.contains("target 85"), "config target not applied: {out}");

    let out = ok(&[
        "--config", path_str(&cfg),
        "label",
        "--corpus", path_str(&corpus),
        "--out", path_str(&labels),
        "--target-vmaf", "88",
    ]);
    assert!(out.contains("target 88"), "flag should beat config file: {out}");
}

// ---- media pipeline with script adapters ---------------------------------------

/// A 60-frame 48×32 clip with a hard cut at frame 30; the per-frame
/// pattern drift stays under the default scene threshold.
fn write_test_clip(path: &Path) {
    let mut frames = Vec::new();
    for t in 0..60u32 {
        let base: u8 = if t < 30 { 0 } else { 200 };
        let mut samples = Vec::with_capacity(48 * 32);
        for y in 0..32u32 {
            for x in 0..48u32 {
                samples.push(base.wrapping_add(((x * 3 + y * 2 + t * 5) % 40) as u8));
            }
        }
        frames.push(Plane::new(48, 32, samples));
    }
    let seq = FrameSequence::new(frames, 25.0);
    let mut w = BufWriter::new(File::create(path).unwrap());
    write_y4m(&seq, &mut w).unwrap();
}

fn write_script(path: &Path, body: &str) {
    use std::os::unix::fs::PermissionsExt;
    fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
}

/// Fake codec scripts: the encoder copies the RF into the stream file (and
/// refuses inputs with "poison" in the name); the meter recovers the RF
/// and prints the quality of a fixed linear response.
fn write_adapters(dir: &Path) -> PathBuf {
    write_script(
        &dir.join("encoder.sh"),
        "case \"$1\" in *poison*) echo \"cannot read $1\" >&2; exit 9;; esac\n\
         printf 'rf %s\\n' \"$2\" > \"$3\"",
    );
    write_script(
        &dir.join("quality.sh"),
        "rf=$(awk '{print $2; exit}' \"$1\")\n\
         awk -v rf=\"$rf\" 'BEGIN { printf \"VMAF score: %.4f\\n\", 98.0 - 1.1 * rf }'",
    );
    let cfg = dir.join("process.toml");
    let text = format!(
        "workers = 2\n\n\
         [codec]\n\
         mode = \"process\"\n\
         work_dir = \"{work}\"\n\n\
         [codec.encoder]\n\
         command_template = \"{enc} {{input}} {{rf}} {{output}}\"\n\
         timeout_secs = 30\n\n\
         [codec.quality]\n\
         command_template = \"{meter} {{input}}\"\n\
         parse_rule = \"float-after:VMAF score:\"\n",
        work = dir.join("work").display(),
        enc = dir.join("encoder.sh").display(),
        meter = dir.join("quality.sh").display(),
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn media_pipeline_segments_extracts_features_and_labels_via_processes() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip.y4m");
    write_test_clip(&clip);
    let shots = dir.path().join("shots");

    let out = ok(&["segment", "--input", path_str(&clip), "--out-dir", path_str(&shots)]);
    assert!(out.contains("2 shots from 60 frames"), "got: {out}");
    let manifest = shots.join("segments.tsv");
    assert!(manifest.is_file());
    assert!(shots.join("seg0000.y4m").is_file() && shots.join("seg0001.y4m").is_file());

    let cache = dir.path().join("features.cache");
    let seg0 = shots.join("seg0000.y4m");
    let seg1 = shots.join("seg0001.y4m");
    let out = ok(&["features", "--input", path_str(&seg0), "--cache", path_str(&cache)]);
    assert!(out.contains("130 features"), "got: {out}");
    let out = ok(&["features", "--input", path_str(&seg1), "--cache", path_str(&cache)]);
    assert!(out.contains("now holds 2 segments"), "got: {out}");
    // Re-running is a cache hit and leaves the artifact unchanged.
    let before = fs::read(&cache).unwrap();
    ok(&["features", "--input", path_str(&seg0), "--cache", path_str(&cache)]);
    assert_eq!(before, fs::read(&cache).unwrap());

    let cfg = write_adapters(dir.path());
    let labels = dir.path().join("labels.tsv");
    let out = ok(&[
        "--config", path_str(&cfg),
        "label",
        "--manifest", path_str(&manifest),
        "--out", path_str(&labels),
    ]);
    // quality(rf) = 98 − 1.1·rf hits 91 at rf ≈ 6.36 for every segment.
    assert!(out.contains("2 converged"), "got: {out}");
    let text = fs::read_to_string(&labels).unwrap();
    let rf: f64 = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rf - (98.0 - 91.0) / 1.1).abs() < 0.5, "label rf {rf} far from expected");
}

#[test]
fn run_reports_partial_failures_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let clip = dir.path().join("clip.y4m");
    write_test_clip(&clip);
    let shots = dir.path().join("shots");
    ok(&["segment", "--input", path_str(&clip), "--out-dir", path_str(&shots)]);
    let manifest = shots.join("segments.tsv");

    let cache = dir.path().join("features.cache");
    ok(&["features", "--input", path_str(&shots.join("seg0000.y4m")), "--cache", path_str(&cache)]);
    ok(&["features", "--input", path_str(&shots.join("seg0001.y4m")), "--cache", path_str(&cache)]);
    let cfg = write_adapters(dir.path());

    // Untrained-but-valid models are enough to drive the loop.
    let schema = cqpass_core::features::FeatureSchema::default_v1().full_version();
    let m1 = cqpass_core::model::ModelParams::new(&schema, 130, 8, 1, 42);
    let m2 = cqpass_core::model::ModelParams::new(&format!("{schema}+fb"), 132, 8, 1, 43);
    let m1_path = dir.path().join("m1.model");
    let m2_path = dir.path().join("m2.model");
    cqpass_core::model::save_model(&m1, &m1_path).unwrap();
    cqpass_core::model::save_model(&m2, &m2_path).unwrap();

    let results = dir.path().join("results.tsv");
    let out = ok(&[
        "--config", path_str(&cfg),
        "run",
        "--manifest", path_str(&manifest),
        "--features-cache", path_str(&cache),
        "--model1", path_str(&m1_path),
        "--model2", path_str(&m2_path),
        "--out", path_str(&results),
        "--measure-final",
    ]);
    assert!(out.contains("encoded 2 of 2 segments"), "got: {out}");

    // Poison one manifest entry: same content (so the cached features still
    // apply), but a path the encoder refuses.
    let poisoned = shots.join("poison0001.y4m");
    fs::copy(shots.join("seg0001.y4m"), &poisoned).unwrap();
    let manifest_text = fs::read_to_string(&manifest).unwrap();
    let poisoned_manifest = dir.path().join("poisoned.tsv");
    fs::write(&poisoned_manifest, manifest_text.replace("seg0001.y4m", "poison0001.y4m")).unwrap();

    let out = cqpass(&[
        "--config", path_str(&cfg),
        "run",
        "--manifest", path_str(&poisoned_manifest),
        "--features-cache", path_str(&cache),
        "--model1", path_str(&m1_path),
        "--model2", path_str(&m2_path),
        "--out", path_str(&results),
    ]);
    assert_eq!(exit_code(&out), 3, "partial failure should exit 3");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("poison0001.y4m"), "failure listing missing: {stderr}");
    assert!(stderr.contains("cannot read"), "adapter tail missing: {stderr}");
    // The surviving segment still produced a result row.
    let rows: Vec<String> = fs::read_to_string(&results)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 1, "rows: {rows:?}");

    // A manifest without cached features is a config problem when the
    // cache flag is missing entirely.
    let out = cqpass(&[
        "--config", path_str(&cfg),
        "run",
        "--manifest", path_str(&manifest),
        "--model1", path_str(&m1_path),
        "--model2", path_str(&m2_path),
        "--out", path_str(&results),
    ]);
    assert_eq!(exit_code(&out), 2);
}
