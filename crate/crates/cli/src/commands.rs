//! Subcommand implementations. Each command reads its declared inputs,
//! performs one pipeline operation, writes one artifact, and prints a short
//! plain-text summary. Anything parallel runs on a dedicated worker pool
//! sized by the `workers` setting, which caps child processes when the
//! codec spawns external adapters.

use crate::adapter::ProcessCodec;
use crate::artifacts::{
    read_manifest, read_results, write_manifest, write_results, ManifestEntry, ResultRow,
};
use crate::config::{CodecConfig, ConfigError, Settings};
use anyhow::{anyhow, ensure, Context, Result};
use cqpass_core::controller::{
    accuracy_report, assemble_features, band_accuracy, fixed_rf_baseline, quality_histogram,
    run_pipeline, AccuracyReport, Codec, EncodeJob, QualityTarget,
};
use cqpass_core::features::{segment_features_cached, FeatureCache, FeatureSchema, FeatureVector};
use cqpass_core::frameio::{read_y4m, write_y4m, FrameSequence};
use cqpass_core::labeler::{read_labels, search_rf, write_labels, LabelRecord, SearchStatus};
use cqpass_core::model::{load_model, save_model, train_new, LabeledExample, TrainConfig};
use cqpass_core::oracle::{
    generate_corpus, mix_seed, read_corpus, synth_quality, write_corpus, OracleCodec,
    SyntheticSegment,
};
use cqpass_core::precode::{aggregate_precoding, parse_stats_log};
use cqpass_core::segmenter::detect_shots;
use cqpass_core::texture::spatial_temporal_vector;
use rayon::prelude::*;
use std::collections::HashMap;
use std::convert::Infallible;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

/// What a finished command tells `main` about the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandStatus {
    Clean,
    /// `run` finished but some segments failed; maps to exit code 3.
    PartialFailures(usize),
}

/// An error that should exit with the config code (2) rather than the
/// generic runtime code: the invocation itself is wrong, not the data.
fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot build the worker pool")
}

// ---- segment / feature sources -------------------------------------------

/// The `--corpus` / `--manifest` / `--features-cache` flag triple shared by
/// the corpus-driven commands.
#[derive(Debug, Clone, Default)]
pub struct SourceArgs {
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub features_cache: Option<PathBuf>,
}

/// Where segments come from: a synthetic corpus (oracle codec) or a
/// manifest of exported shots (process codec).
#[derive(Debug)]
pub enum Source {
    Synth(Vec<SyntheticSegment>),
    Media(Vec<ManifestEntry>),
}

fn load_source(settings: &Settings, args: &SourceArgs) -> Result<Source> {
    match (&args.corpus, &args.manifest) {
        (Some(_), Some(_)) => Err(config_err("give either --corpus or --manifest, not both")),
        (None, None) => {
            Err(config_err("one of --corpus (synthetic) or --manifest (media) is required"))
        }
        (Some(corpus), None) => {
            if !matches!(settings.codec, CodecConfig::Synthetic) {
                return Err(config_err(
                    "--corpus drives the synthetic oracle; drop the process [codec] section or use --manifest",
                ));
            }
            let segments = read_corpus(open(corpus)?)
                .with_context(|| format!("corpus {}", corpus.display()))?;
            ensure!(!segments.is_empty(), "corpus {} holds no segments", corpus.display());
            let dim = segments[0].descriptors.len();
            ensure!(
                segments.iter().all(|s| s.descriptors.len() == dim),
                "corpus {} mixes descriptor widths",
                corpus.display()
            );
            Ok(Source::Synth(segments))
        }
        (None, Some(manifest)) => {
            if !matches!(settings.codec, CodecConfig::Process { .. }) {
                return Err(config_err(
                    "--manifest needs codec.mode = \"process\" with [codec.encoder] and [codec.quality]",
                ));
            }
            let entries = read_manifest(open(manifest)?)
                .with_context(|| format!("manifest {}", manifest.display()))?;
            ensure!(!entries.is_empty(), "manifest {} lists no segments", manifest.display());
            Ok(Source::Media(entries))
        }
    }
}

impl Source {
    fn jobs(&self) -> Vec<EncodeJob> {
        match self {
            Source::Synth(segments) => segments
                .iter()
                .map(|s| EncodeJob::new(s.id, format!("synth:{:016x}", s.id)))
                .collect(),
            Source::Media(entries) => entries
                .iter()
                .map(|e| EncodeJob::new(e.source_id, e.path.display().to_string()))
                .collect(),
        }
    }
}

fn codec_for(source: &Source, settings: &Settings) -> Result<Box<dyn Codec>> {
    match (source, &settings.codec) {
        (Source::Synth(segments), CodecConfig::Synthetic) => {
            Ok(Box::new(OracleCodec::new(segments)))
        }
        (Source::Media(_), CodecConfig::Process { encoder, quality, work_dir }) => {
            fs::create_dir_all(work_dir)
                .with_context(|| format!("cannot create work dir {}", work_dir.display()))?;
            Ok(Box::new(ProcessCodec::new(encoder.clone(), quality.clone(), work_dir)))
        }
        // `load_source` already rejected the mixed combinations.
        _ => Err(config_err("segment source and codec mode do not match")),
    }
}

/// Jobs paired with their base feature vectors, plus the base schema id all
/// vectors share. Synthetic descriptors are their own features; media
/// segments read from the feature cache written by `features`.
fn jobs_with_features(
    source: &Source,
    cache_path: Option<&Path>,
) -> Result<(Vec<(EncodeJob, FeatureVector)>, String)> {
    match source {
        Source::Synth(segments) => {
            let schema = format!("synth/d{}", segments[0].descriptors.len());
            let jobs = segments
                .iter()
                .map(|s| {
                    let fv = FeatureVector::new(&schema, s.descriptors.clone())?;
                    Ok((EncodeJob::new(s.id, format!("synth:{:016x}", s.id)), fv))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((jobs, schema))
        }
        Source::Media(entries) => {
            let cache_path = cache_path
                .ok_or_else(|| config_err("--features-cache is required with --manifest"))?;
            let schema = FeatureSchema::default_v1().full_version();
            let mut cache = FeatureCache::load(open(cache_path)?, &schema)
                .with_context(|| format!("feature cache {}", cache_path.display()))?;
            let jobs = entries
                .iter()
                .map(|e| {
                    let fv = cache.get(e.source_id).ok_or_else(|| {
                        anyhow!(
                            "no cached features for segment {} ({:016x}); run `cqpass features --input {}` first",
                            e.index,
                            e.source_id,
                            e.path.display()
                        )
                    })?;
                    Ok((EncodeJob::new(e.source_id, e.path.display().to_string()), fv))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((jobs, schema))
        }
    }
}

/// Index splitting `n` segments (in corpus order) into the pass-1 and
/// pass-2 training pools; both sides stay non-empty.
pub fn split_point(n: usize, pass1_fraction: f64) -> usize {
    (((n as f64) * pass1_fraction).round() as usize).clamp(1, n - 1)
}

// ---- synth-corpus ---------------------------------------------------------

pub fn synth_corpus(
    settings: &Settings,
    count: usize,
    dim: usize,
    noise_sigma: f64,
    out: &Path,
) -> Result<()> {
    let corpus = generate_corpus(count, dim, noise_sigma, settings.seed)?;
    let mut w = create(out)?;
    write_corpus(&corpus, &mut w)?;
    w.flush()?;
    println!(
        "wrote {count} synthetic segments (descriptor dim {dim}, noise sigma {noise_sigma}, seed {}) to {}",
        settings.seed,
        out.display()
    );
    Ok(())
}

// ---- segment ---------------------------------------------------------------

pub fn segment(settings: &Settings, input: &Path, out_dir: &Path) -> Result<()> {
    let seq = read_y4m(open(input)?).with_context(|| format!("reading {}", input.display()))?;
    ensure!(!seq.is_empty(), "{} holds no frames", input.display());
    let shots = detect_shots(&seq, settings.scene_threshold, settings.min_shot_len);
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    let mut entries = Vec::with_capacity(shots.len());
    for (index, shot) in shots.iter().enumerate() {
        let path = out_dir.join(format!("seg{index:04}.y4m"));
        let sub = FrameSequence::new(shot.frames(&seq).to_vec(), seq.frame_rate());
        let mut w = create(&path)?;
        write_y4m(&sub, &mut w)?;
        w.flush()?;
        entries.push(ManifestEntry {
            index,
            source_id: shot.source_id,
            start_frame: shot.start_frame,
            end_frame: shot.end_frame,
            path,
        });
    }
    let manifest = out_dir.join("segments.tsv");
    let mut w = create(&manifest)?;
    write_manifest(&entries, &mut w)?;
    w.flush()?;

    println!(
        "{} shots from {} frames of {} (threshold {}, min length {}):",
        entries.len(),
        seq.len(),
        input.display(),
        settings.scene_threshold,
        settings.min_shot_len
    );
    for e in &entries {
        println!(
            "  seg {:04}  frames [{}, {})  source {:016x}  {}",
            e.index,
            e.start_frame,
            e.end_frame,
            e.source_id,
            e.path.display()
        );
    }
    println!("manifest: {}", manifest.display());
    Ok(())
}

// ---- features ---------------------------------------------------------------

/// Where the pre-coding block of the feature vector comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrecodeMode {
    /// The built-in IPIP analyzer.
    Builtin,
    /// A stats-log CSV produced by an external pre-coder.
    Log(PathBuf),
}

impl FromStr for PrecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            return Ok(PrecodeMode::Builtin);
        }
        if let Some(path) = s.strip_prefix("log:") {
            if path.is_empty() {
                return Err("log: needs a path, e.g. log:stats.csv".into());
            }
            return Ok(PrecodeMode::Log(PathBuf::from(path)));
        }
        Err(format!("`{s}` (expected `builtin` or `log:<stats.csv>`)"))
    }
}

pub fn features(input: &Path, cache_path: &Path, precode: &PrecodeMode) -> Result<()> {
    let seq = read_y4m(open(input)?).with_context(|| format!("reading {}", input.display()))?;
    ensure!(!seq.is_empty(), "{} holds no frames", input.display());
    // The whole file is one segment; an unreachable threshold reproduces
    // the source_id the segmenter recorded in the manifest.
    let shot = detect_shots(&seq, f64::MAX, 1)[0];

    let schema = FeatureSchema::default_v1();
    let version = schema.full_version();
    let mut cache = if cache_path.exists() {
        FeatureCache::load(open(cache_path)?, &version)
            .with_context(|| format!("feature cache {}", cache_path.display()))?
    } else {
        FeatureCache::new(&version)
    };

    let fv = match precode {
        PrecodeMode::Builtin => segment_features_cached(shot.frames(&seq), &shot, &schema, &mut cache)?,
        PrecodeMode::Log(log) => match cache.get(shot.source_id) {
            Some(fv) => fv,
            None => {
                let mut values = spatial_temporal_vector(shot.frames(&seq))?;
                let (intra, inter) = parse_stats_log(open(log)?, &schema)
                    .with_context(|| format!("stats log {}", log.display()))?;
                values.extend(aggregate_precoding(&intra, &inter, &schema)?);
                let fv = FeatureVector::new(&version, values)?;
                cache.insert(shot.source_id, fv.clone());
                fv
            }
        },
    };

    let mut w = create(cache_path)?;
    cache.save(&mut w)?;
    w.flush()?;
    println!(
        "segment {:016x}: {} features ({}); cache {} now holds {} segments",
        shot.source_id,
        fv.len(),
        fv.schema_version(),
        cache_path.display(),
        cache.len()
    );
    Ok(())
}

// ---- label -------------------------------------------------------------------

pub fn label(settings: &Settings, source_args: &SourceArgs, out: &Path) -> Result<()> {
    let source = load_source(settings, source_args)?;
    let pool = thread_pool(settings.workers)?;
    let started = Instant::now();

    let records: Vec<LabelRecord> = match &source {
        Source::Synth(segments) => pool.install(|| {
            segments
                .par_iter()
                .map(|seg| {
                    // Per-probe noise streams disjoint from the pipeline's
                    // pass-indexed ones, so labeling never reuses the noise
                    // a later encode will see.
                    let mut calls: u64 = 0;
                    let search = search_rf(
                        |rf| {
                            calls += 1;
                            Ok::<_, Infallible>(synth_quality(
                                &seg.curve,
                                rf,
                                mix_seed(seg.seed, (1 << 32) | calls, rf),
                            ))
                        },
                        settings.target_vmaf,
                        settings.label_tol,
                        settings.label_max_iters,
                    )
                    .unwrap_or_else(|failure| match failure.source {});
                    LabelRecord::from_search(seg.id, &search)
                })
                .collect()
        }),
        Source::Media(entries) => {
            let codec = codec_for(&source, settings)?;
            pool.install(|| {
                entries
                    .par_iter()
                    .map(|e| {
                        let job = EncodeJob::new(e.source_id, e.path.display().to_string());
                        let search = search_rf(
                            |rf| {
                                let stream = codec.encode(&job, rf, 1)?;
                                codec.measure(&job, &stream)
                            },
                            settings.target_vmaf,
                            settings.label_tol,
                            settings.label_max_iters,
                        )
                        .map_err(|f| {
                            anyhow!("segment {:016x} ({}): {f}", e.source_id, e.path.display())
                        })?;
                        Ok(LabelRecord::from_search(e.source_id, &search))
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
    };

    let mut w = create(out)?;
    write_labels(&records, &mut w)?;
    w.flush()?;

    let count_status = |s: SearchStatus| records.iter().filter(|r| r.status == s).count();
    let mean_evals =
        records.iter().map(|r| r.evaluations).sum::<usize>() as f64 / records.len() as f64;
    println!(
        "labeled {} segments for target {} in {:.1}s: {} converged, {} max-iters, {} unreachable; mean evaluations {:.2}; labels: {}",
        records.len(),
        settings.target_vmaf,
        started.elapsed().as_secs_f64(),
        count_status(SearchStatus::Converged),
        count_status(SearchStatus::MaxIters),
        count_status(SearchStatus::Unreachable),
        mean_evals,
        out.display()
    );
    Ok(())
}

// ---- train -------------------------------------------------------------------

pub fn train(
    settings: &Settings,
    source_args: &SourceArgs,
    labels_path: &Path,
    pass: u8,
    model_out: &Path,
    pass1_model: Option<&Path>,
) -> Result<()> {
    let source = load_source(settings, source_args)?;
    let labels = read_labels(open(labels_path)?)
        .with_context(|| format!("labels {}", labels_path.display()))?;
    let rf_label: HashMap<u64, f64> =
        labels.iter().map(|r| (r.source_id, r.rf_label)).collect();
    let lookup = |job: &EncodeJob| {
        rf_label.get(&job.id).copied().ok_or_else(|| {
            anyhow!(
                "no label for segment {:016x} in {}; run `cqpass label` over the same corpus",
                job.id,
                labels_path.display()
            )
        })
    };

    let (jobs, base_schema) = jobs_with_features(&source, source_args.features_cache.as_deref())?;
    ensure!(jobs.len() >= 2, "training needs at least 2 segments, got {}", jobs.len());
    let cut = split_point(jobs.len(), settings.pass1_fraction);
    let (pool1, pool2) = jobs.split_at(cut);

    let (dataset, schema, seed) = match pass {
        1 => {
            let dataset = pool1
                .iter()
                .map(|(job, fv)| Ok(LabeledExample::new(fv.clone(), lookup(job)?)?))
                .collect::<Result<Vec<_>>>()?;
            (dataset, base_schema.clone(), settings.seed)
        }
        2 => {
            let model1_path = pass1_model.ok_or_else(|| {
                config_err("train --pass 2 needs --pass1-model (train pass 1 first)")
            })?;
            let model1 = load_model(model1_path)
                .with_context(|| format!("pass-1 model {}", model1_path.display()))?;
            model1
                .check_schema(&base_schema)
                .map_err(|e| anyhow!("pass-1 model does not fit this corpus: {e}"))?;
            // The corrector trains on what it will see at run time: the
            // pass-1 prediction and its measured quality on this codec.
            let codec = codec_for(&source, settings)?;
            let pool = thread_pool(settings.workers)?;
            let dataset = pool.install(|| {
                pool2
                    .par_iter()
                    .map(|(job, fv)| {
                        let rf1 = model1.forward_infer(fv.values())?;
                        let stream = codec
                            .encode(job, rf1, 1)
                            .map_err(|e| anyhow!("segment {:016x}: {e}", job.id))?;
                        let quality1 = codec
                            .measure(job, &stream)
                            .map_err(|e| anyhow!("segment {:016x}: {e}", job.id))?;
                        let with_fb = assemble_features(fv, Some((rf1, quality1)));
                        Ok(LabeledExample::new(with_fb, lookup(job)?)?)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            (dataset, format!("{base_schema}+fb"), settings.seed.wrapping_add(1))
        }
        other => return Err(config_err(format!("--pass must be 1 or 2, got {other}"))),
    };

    let cfg = TrainConfig {
        learning_rate: settings.learning_rate,
        batch_size: settings.batch_size,
        epochs: settings.epochs,
        seed,
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let outcome = train_new(&schema, settings.hidden, settings.blocks, &dataset, &cfg)?;
    save_model(&outcome.model, model_out)
        .with_context(|| format!("cannot write model {}", model_out.display()))?;

    let first = outcome.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "pass-{pass} model ({schema}, hidden {}, blocks {}): {} examples, loss {first:.4} → {last:.4} over {} epochs in {:.1}s; saved to {}",
        settings.hidden,
        settings.blocks,
        dataset.len(),
        settings.epochs,
        started.elapsed().as_secs_f64(),
        model_out.display()
    );
    Ok(())
}

// ---- run ---------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn run(
    settings: &Settings,
    source_args: &SourceArgs,
    model1_path: &Path,
    model2_path: &Path,
    out: &Path,
    measure_final: bool,
) -> Result<CommandStatus> {
    let source = load_source(settings, source_args)?;
    let (jobs, base_schema) = jobs_with_features(&source, source_args.features_cache.as_deref())?;
    let model1 = load_model(model1_path)
        .with_context(|| format!("pass-1 model {}", model1_path.display()))?;
    let model2 = load_model(model2_path)
        .with_context(|| format!("pass-2 model {}", model2_path.display()))?;
    model1
        .check_schema(&base_schema)
        .map_err(|e| anyhow!("pass-1 model: {e}"))?;
    model2
        .check_schema(&format!("{base_schema}+fb"))
        .map_err(|e| anyhow!("pass-2 model: {e}"))?;

    let qt = QualityTarget::new(settings.window_low, settings.target_vmaf, settings.window_high)?;
    let codec = codec_for(&source, settings)?;
    let pool = thread_pool(settings.workers)?;
    let started = Instant::now();
    let report = pool.install(|| {
        run_pipeline(&jobs, &model1, &model2, codec.as_ref(), &qt, measure_final)
    });

    let rows: Vec<ResultRow> = report.results.iter().map(ResultRow::from_result).collect();
    let mut w = create(out)?;
    write_results(&rows, &mut w)?;
    w.flush()?;

    let one_pass = rows.iter().filter(|r| r.passes == 1).count();
    println!(
        "encoded {} of {} segments in {:.1}s ({} single-pass, mean passes {:.3}); results: {}",
        rows.len(),
        jobs.len(),
        started.elapsed().as_secs_f64(),
        one_pass,
        report.mean_passes(),
        out.display()
    );
    if measure_final {
        let outcomes = report.outcomes();
        if !outcomes.is_empty() {
            let acc = accuracy_report(&outcomes, settings.target_vmaf, &settings.bands)?;
            print!("{}", render_accuracy(&acc, rows.len()));
        }
    }

    if report.is_clean() {
        Ok(CommandStatus::Clean)
    } else {
        eprintln!("{} segments failed:", report.failures.len());
        for f in &report.failures {
            eprintln!("  {:016x} ({}): {}", f.job_id, f.label, f.error);
        }
        Ok(CommandStatus::PartialFailures(report.failures.len()))
    }
}

// ---- baseline ----------------------------------------------------------------

pub fn baseline(settings: &Settings, source_args: &SourceArgs, out: &Path) -> Result<()> {
    let source = load_source(settings, source_args)?;
    let jobs = source.jobs();
    let codec = codec_for(&source, settings)?;
    let pool = thread_pool(settings.workers)?;
    let base = pool.install(|| {
        fixed_rf_baseline(
            &jobs,
            codec.as_ref(),
            settings.target_vmaf,
            settings.label_tol,
            settings.label_max_iters,
        )
    })?;

    let mut w = create(out)?;
    writeln!(w, "# cqpass fixed-rf baseline (target {})", settings.target_vmaf)?;
    writeln!(w, "rf\t{:.6}", base.rf)?;
    writeln!(w, "mean_quality\t{:.6}", base.mean_quality)?;
    writeln!(w, "# job_id\tquality")?;
    for (job, q) in jobs.iter().zip(&base.qualities) {
        writeln!(w, "{:016x}\t{:.6}", job.id, q)?;
    }
    w.flush()?;

    println!(
        "fixed rf {:.3} gives mean quality {:.3} over {} segments; baseline: {}",
        base.rf,
        base.mean_quality,
        jobs.len(),
        out.display()
    );
    for band in &settings.bands {
        println!(
            "  within ±{band}: {:.2}%",
            band_accuracy(&base.qualities, settings.target_vmaf, *band)
        );
    }
    Ok(())
}

// ---- report ------------------------------------------------------------------

fn render_accuracy(acc: &AccuracyReport, total_rows: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "segments: {} measured of {} encoded", acc.segments, total_rows);
    let _ = writeln!(out, "target quality: {}", acc.target);
    let _ = writeln!(out, "  band       first-pass      final");
    for (i, band) in acc.bands.iter().enumerate() {
        let _ = writeln!(
            out,
            "  ±{:<8.2} {:>9.2}%   {:>8.2}%",
            band, acc.first_pass_pct[i], acc.final_pct[i]
        );
    }
    let _ = writeln!(out, "mean passes: {:.3}", acc.mean_passes);
    out
}

pub fn report(
    settings: &Settings,
    results_path: &Path,
    out: Option<&Path>,
    histogram: Option<&Path>,
) -> Result<()> {
    let rows = read_results(open(results_path)?)
        .with_context(|| format!("results {}", results_path.display()))?;
    ensure!(!rows.is_empty(), "{} holds no result rows", results_path.display());
    let outcomes: Vec<_> = rows.iter().filter_map(|r| r.outcome()).collect();
    ensure!(
        !outcomes.is_empty(),
        "{} has no measured final qualities; produce it with `cqpass run --measure-final`",
        results_path.display()
    );

    let acc = accuracy_report(&outcomes, settings.target_vmaf, &settings.bands)?;
    let mut text = render_accuracy(&acc, rows.len());
    if outcomes.len() < rows.len() {
        let _ = writeln!(
            text,
            "note: {} rows lack a measured final quality and are excluded from the \
             bands above; evaluate with `cqpass run --measure-final`",
            rows.len() - outcomes.len()
        );
    }
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?;
        println!("report: {}", path.display());
    }

    if let Some(path) = histogram {
        let finals: Vec<f64> = outcomes.iter().map(|o| o.final_quality).collect();
        let (lo, hi, bins) = (settings.target_vmaf - 8.0, settings.target_vmaf + 8.0, 32usize);
        let counts = quality_histogram(&finals, lo, hi, bins);
        let width = (hi - lo) / bins as f64;
        let mut w = create(path)?;
        writeln!(w, "# final-quality histogram; outliers land in the edge bins")?;
        writeln!(w, "# bin_low\tbin_high\tcount")?;
        for (i, c) in counts.iter().enumerate() {
            writeln!(w, "{:.4}\t{:.4}\t{c}", lo + i as f64 * width, lo + (i + 1) as f64 * width)?;
        }
        w.flush()?;
        println!("histogram: {}", path.display());
    }
    Ok(())
}
