use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use laneperf::data::{parse_manifest, Manifest, MiniDataset};
use laneperf::estimators::ArtifactFile;
use laneperf::eval::dataset_f1;
use laneperf::harness::{calibrate_all, run_benchmark, Calibration, Estimator, Fitted, Method};
use laneperf::io::write_atomic;
use laneperf::laneperf::{
    gradcheck, BuiltinEmbedder, GradcheckConfig, ImageEmbedder, PrecomputedEmbedder, TrainConfig, WeightsFile,
};
use laneperf::synth::{generate_corpus, write_corpus, SynthConfig};
use laneperf::Role;

use crate::{
    BenchmarkArgs, CalibrateArgs, Command, DataArgs, EmbedderKind, EstimateArgs, EvalArgs, GradcheckArgs, SelectArgs,
    SynthArgs, EXIT_OK, EXIT_PARTIAL,
};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<u8, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Eval(a) => eval(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Estimate(a) => estimate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn load_manifest(data: &DataArgs) -> Result<Manifest, Failure> {
    let mut manifest =
        parse_manifest(&data.manifest).with_context(|| format!("reading manifest {}", data.manifest.display()))?;
    if let Some(size) = data.minidataset_size {
        manifest.minidataset_size = size as usize;
    }
    Ok(manifest)
}

/// Loads the selected segments, chunked into mini-datasets.
fn load_selected(manifest: &Manifest, select: &SelectArgs, default_role: Option<Role>) -> Result<Vec<MiniDataset>, Failure> {
    for id in &select.segments {
        if !manifest.segments.iter().any(|s| &s.id == id) {
            return Err(Failure::Usage(format!("no segment `{id}` in the manifest")));
        }
    }
    let role = select.role.map(Role::from).or(default_role);
    let mut selected = manifest.clone();
    selected.segments.retain(|s| {
        (select.segments.is_empty() || select.segments.contains(&s.id)) && role.is_none_or(|r| s.role == r)
    });
    if selected.segments.is_empty() {
        return Err(Failure::Usage("the selection matches no segments".into()));
    }
    let segments = selected.load_all()?;
    Ok(laneperf::data::chunk_minidatasets(&segments, manifest.minidataset_size)?)
}

fn embedder(kind: EmbedderKind, manifest: &Manifest) -> Box<dyn ImageEmbedder> {
    match kind {
        EmbedderKind::Precomputed => Box::new(PrecomputedEmbedder::new(manifest.d_img)),
        EmbedderKind::Builtin => Box::new(BuiltinEmbedder::new(manifest.base_dir.clone())),
    }
}

fn methods_or_all(methods: &[Method]) -> Vec<Method> {
    if methods.is_empty() {
        return Method::ALL.to_vec();
    }
    // Report order, without duplicates.
    Method::ALL.into_iter().filter(|m| methods.contains(m)).collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn artifact_path(dir: &Path, method: Method) -> PathBuf {
    match method {
        Method::LanePerf => dir.join("laneperf.weights.json"),
        m => dir.join(format!("{}.json", m.as_str())),
    }
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

/// Left-aligned first column, right-aligned others.
fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|k| rows.iter().map(|r| r[k].len()).chain([header[k].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (k, cell) in row.iter().enumerate() {
            if k == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[k]);
            }
        }
        out.push('\n');
    }
    out
}

fn eval(args: EvalArgs) -> Outcome {
    let manifest = load_manifest(&args.data)?;
    let datasets = load_selected(&manifest, &args.select, None)?;
    let header = ["dataset_id", "role", "frames", "tp", "fp", "fn", "precision", "recall", "f1"];
    let mut rows = Vec::new();
    for d in &datasets {
        let s = dataset_f1(d, &manifest).with_context(|| format!("evaluating `{}`", d.dataset_id))?;
        if s.vacuous {
            log::warn!("`{}` has no lanes in predictions or ground truth; F1 taken as 1", d.dataset_id);
        }
        rows.push(vec![
            d.dataset_id.clone(),
            d.role.as_str().to_owned(),
            d.samples.len().to_string(),
            s.counts.tp.to_string(),
            s.counts.fp.to_string(),
            s.counts.fn_.to_string(),
            format!("{:.4}", s.precision),
            format!("{:.4}", s.recall),
            format!("{:.4}", s.f1),
        ]);
    }
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    print!("{}", render_table(&header, &rows));
    if let Some(out) = &args.out {
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_text(out, &csv_string(&h, &rows)?)?;
    }
    Ok(EXIT_OK)
}

fn calibrate(args: CalibrateArgs) -> Outcome {
    let manifest = load_manifest(&args.data)?;
    let methods = methods_or_all(&args.methods);
    let mut train_config = match &args.train_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    train_config.seed = args.seed;
    if let Some(epochs) = args.epochs {
        train_config.epochs = epochs;
    }
    train_config.validate()?;

    let val = manifest
        .load_minidatasets(Role::SourceVal, manifest.minidataset_size)
        .context("loading source validation segments")?;
    let reference = if methods.contains(&Method::Fid) {
        manifest
            .segments_with_role(Role::SourceTrainRef)
            .map(|entry| laneperf::data::load_segment(entry, &manifest))
            .collect::<laneperf::Result<Vec<_>>>()
            .context("loading reference segments")?
    } else {
        Vec::new()
    };
    let reference_features: Vec<&[f64]> = reference
        .iter()
        .flat_map(|d| d.pred_lanes())
        .filter_map(|l| l.feature.as_deref())
        .collect();
    let embedder = embedder(args.embedder, &manifest);
    let calibration = calibrate_all(&val, &reference_features, &manifest, embedder.as_ref(), &methods, &train_config)?;

    println!("calibrated on {} validation mini-datasets", val.len());
    for method in &methods {
        let path = artifact_path(&args.out, *method);
        match (calibration.fitted.get(method), calibration.failures.get(method)) {
            (Some(Fitted::Free), _) => println!("{:<9} no calibration needed, no artifact written", method.label()),
            (Some(Fitted::Artifact(a)), _) => {
                ArtifactFile::new(a.clone(), &manifest).save(&path)?;
                println!("{:<9} wrote {}", method.label(), path.display());
            }
            (Some(Fitted::Network(w)), _) => {
                WeightsFile::new(w.clone(), &train_config, &manifest, embedder.as_ref()).save(&path)?;
                let t = calibration.training.as_ref();
                println!(
                    "{:<9} wrote {} (loss {:.5} -> {:.5} over {} frames)",
                    method.label(),
                    path.display(),
                    t.map_or(f64::NAN, |t| t.initial_loss),
                    t.map_or(f64::NAN, |t| t.final_loss),
                    t.map_or(0, |t| t.samples)
                );
            }
            (None, Some(msg)) => println!("{:<9} FAILED: {msg}", method.label()),
            (None, None) => unreachable!("every requested method is fitted or failed"),
        }
    }
    Ok(if calibration.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

/// Reads the artifacts for `methods`; unreadable or mismatched files are
/// recorded as failures.
fn load_calibration(
    dir: &Path,
    methods: &[Method],
    manifest: &Manifest,
    embedder: &dyn ImageEmbedder,
) -> Calibration {
    let mut calibration = Calibration {
        fitted: BTreeMap::new(),
        failures: BTreeMap::new(),
        training: None,
    };
    for &method in methods {
        let path = artifact_path(dir, method);
        let loaded: anyhow::Result<Fitted> = (|| {
            if method == Method::Ac {
                return Ok(Fitted::Free);
            }
            if !path.exists() {
                return Err(anyhow!("missing artifact {}", path.display()));
            }
            if method == Method::LanePerf {
                let file = WeightsFile::load(&path)?;
                return Ok(Fitted::Network(file.checked(manifest, embedder)?.clone()));
            }
            let file = ArtifactFile::load(&path)?;
            let artifact = file.checked(manifest)?;
            if artifact.method_name() != method.as_str() {
                return Err(anyhow!("{} holds a `{}` artifact", path.display(), artifact.method_name()));
            }
            Ok(Fitted::Artifact(artifact.clone()))
        })()
        .with_context(|| format!("loading {}", path.display()));
        match loaded {
            Ok(f) => {
                calibration.fitted.insert(method, f);
            }
            Err(e) => {
                calibration.failures.insert(method, format!("{e:#}"));
            }
        }
    }
    calibration
}

fn estimate(args: EstimateArgs) -> Outcome {
    let manifest = load_manifest(&args.data)?;
    let methods = methods_or_all(&args.methods);
    let embedder = embedder(args.embedder, &manifest);
    let calibration = load_calibration(&args.artifacts_dir, &methods, &manifest, embedder.as_ref());
    // Estimating with the wrong calibration is refused outright.
    if let Some((_, msg)) = calibration.failures.iter().next() {
        return Err(Failure::Data(anyhow!("{msg}")));
    }
    let datasets = load_selected(&manifest, &args.select, Some(Role::Target))?;
    let estimators = calibration.estimators(&methods, embedder.as_ref());

    let mut header = vec!["dataset_id".to_owned(), "frames".to_owned()];
    header.extend(methods.iter().map(|m| m.as_str().to_owned()));
    let mut rows = Vec::new();
    for d in &datasets {
        let mut row = vec![d.dataset_id.clone(), d.samples.len().to_string()];
        for e in &estimators {
            let v = e.estimate(d).with_context(|| format!("{} on `{}`", e.name(), d.dataset_id))?;
            row.push(format!("{v}"));
        }
        rows.push(row);
    }
    let shown: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(k, c)| if k < 2 { c.clone() } else { format!("{:.4}", c.parse::<f64>().unwrap_or(f64::NAN)) })
                .collect()
        })
        .collect();
    print!("{}", render_table(&header, &shown));
    if let Some(out) = &args.out {
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_text(out, &csv_string(&h, &rows)?)?;
    }
    Ok(EXIT_OK)
}

fn benchmark(args: BenchmarkArgs) -> Outcome {
    let manifest = load_manifest(&args.data)?;
    let methods = methods_or_all(&args.methods);
    let embedder = embedder(args.embedder, &manifest);
    let calibration = load_calibration(&args.artifacts_dir, &methods, &manifest, embedder.as_ref());
    for (method, msg) in &calibration.failures {
        log::warn!("{method}: {msg}");
    }
    let targets = manifest
        .load_minidatasets(Role::Target, manifest.minidataset_size)
        .context("loading target segments")?;
    let estimators = calibration.estimators(&methods, embedder.as_ref());
    let refs: Vec<&dyn Estimator> = estimators.iter().map(|e| e.as_ref()).collect();
    let mut report = run_benchmark(&targets, &refs, &manifest)?;
    report.seed = args.seed;
    for method in &methods {
        let path = artifact_path(&args.artifacts_dir, *method);
        if calibration.fitted.contains_key(method) && path.exists() {
            let digest = laneperf::io::file_digest(&path)?;
            report.artifact_fingerprints.insert(method.as_str().to_owned(), digest);
        }
    }
    report.verify()?;

    let table = report.table()?;
    write_text(&args.out.join("rows.csv"), &report.rows_csv()?)?;
    write_text(&args.out.join("aggregates.csv"), &report.aggregates_csv()?)?;
    write_text(&args.out.join("report.json"), &report.to_json()?)?;
    write_text(&args.out.join("table.txt"), &table)?;
    print!("{table}");
    for f in &report.failures {
        println!("{} FAILED: {}", f.method, f.message);
    }
    println!("reports written to {}", args.out.display());
    Ok(if report.has_failures() { EXIT_PARTIAL } else { EXIT_OK })
}

fn synth(args: SynthArgs) -> Outcome {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    config.seed = args.seed;
    if let Some(size) = args.minidataset_size {
        config.minidataset_size = size as usize;
    }
    if args.no_images {
        config.images = false;
    }
    let corpus = generate_corpus(&config)?;
    let manifest_path = write_corpus(&corpus, &args.out)?;
    let frames: usize = corpus.segments.iter().map(|s| s.samples.len()).sum();
    println!(
        "wrote {} segments ({frames} frames) across {} families",
        corpus.segments.len(),
        config.families.len()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(EXIT_OK)
}

fn gradcheck_cmd(args: GradcheckArgs) -> Outcome {
    let report = gradcheck(&GradcheckConfig {
        seed: args.seed,
        corrupt_analytic: args.corrupt_analytic,
        ..GradcheckConfig::default()
    });
    println!(
        "{} draws ({} redrawn near a kink), tolerance {:e}",
        report.draws, report.redraws, report.tolerance
    );
    let header: Vec<String> = ["block", "max_rel_error", "status"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .blocks
        .iter()
        .map(|b| {
            vec![
                b.block.to_owned(),
                format!("{:.3e}", b.max_rel_error),
                if b.passed { "pass" } else { "FAIL" }.to_owned(),
            ]
        })
        .collect();
    print!("{}", render_table(&header, &rows));
    println!("{}", if report.passed() { "gradcheck passed" } else { "gradcheck FAILED" });
    Ok(if report.passed() { EXIT_OK } else { EXIT_PARTIAL })
}
