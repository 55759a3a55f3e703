//! `hero` command-line driver: `prune`, `analyze`, `synth`.
//!
//! Diagnostics go to stderr. Artifacts go under `--out DIR`, or to stdout
//! as a single JSON document when `--out -` is given.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{detect_stages, iou_curve, iou_curve_csv, layer_similarity, split_score, RegionSelector, SaliencyMask};
use crate::budgeting::RemainderPolicy;
use crate::container::{read_trace_file, write_trace_file};
use crate::efficiency::LlmProfile;
use crate::error::Error;
use crate::pipeline::{prune_trace, PruneResult, PruneSettings};
use crate::scoring::DEFAULT_ALPHA;
use crate::selection::LayerSet;
use crate::synth::{generate, SynthSpec};
use crate::tiling::plan_tiling;
use crate::trace::ImageTrace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

pub const TRACE_EXTENSION: &str = "trc";

#[derive(Debug, Parser)]
#[command(name = "hero", version, about = "Visual token budgeting and early dropping for tiled image traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Allocate budgets and select retained tokens for each trace.
    Prune(PruneArgs),
    /// Layerwise attention similarity, stage boundary and saliency IoU.
    Analyze(AnalyzeArgs),
    /// Write deterministic synthetic traces.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, or `-` for stdout.
    #[arg(long)]
    pub out: Option<String>,
    /// Stop at the first failing trace.
    #[arg(long)]
    pub fail_fast: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Trace files or directories of `.trc` files.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Visual token retention ratio in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Weight of visual saliency against textual relevance.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Layers averaged for local tiles, e.g. `6..10`.
    #[arg(long)]
    pub layers_low: Option<LayerSet>,
    /// Layers averaged for the thumbnail, e.g. `22` or `21,22`.
    #[arg(long)]
    pub layers_high: Option<LayerSet>,
    /// Built-in profile name (`vicuna-7b`, `vicuna-13b`) or JSON file.
    #[arg(long)]
    pub profile: Option<String>,
    /// Plain floors for tile quotas; leftovers are not redistributed.
    #[arg(long)]
    pub strict_floor: bool,
    /// Instruction tokens added to the cost model.
    #[arg(long)]
    pub text_tokens: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Corpus: trace files or directories of `.trc` files.
    #[arg(required = true)]
    pub corpus: Vec<PathBuf>,
    /// Directory of `<image_id>.pgm` salient-object masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Regions contributing to the similarity matrix.
    #[arg(long, value_enum, default_value_t = RegionSelector::Thumbnail)]
    pub region: RegionSelector,
    /// Patches per layer compared against the mask.
    #[arg(long, default_value_t = 50)]
    pub iou_k: usize,
    /// Layers of the IoU curve.
    #[arg(long, default_value = "1..12")]
    pub iou_layers: LayerSet,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// SynthSpec JSON file.
    pub spec: PathBuf,
    /// Number of traces; trace i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub ratio: Option<f64>,
    pub alpha: Option<f64>,
    pub layers_low: Option<LayerSet>,
    pub layers_high: Option<LayerSet>,
    pub profile: Option<String>,
    pub strict_floor: Option<bool>,
    pub text_tokens: Option<u64>,
    pub out: Option<String>,
    pub fail_fast: Option<bool>,
    pub jobs: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))
    }
}

/// A failure that maps onto an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Prune(args) => run_prune(&args),
        Command::Analyze(args) => run_analyze(&args),
        Command::Synth(args) => run_synth(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig, Failure> {
    match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::input(e.to_string())),
        None => Ok(PipelineConfig::default()),
    }
}

enum Output {
    Dir(PathBuf),
    Stdout,
}

fn resolve_output(flag: &Option<String>, config: &PipelineConfig) -> Result<Output, Failure> {
    match flag.clone().or_else(|| config.out.clone()) {
        Some(s) if s == "-" => Ok(Output::Stdout),
        Some(s) => {
            let dir = PathBuf::from(s);
            fs::create_dir_all(&dir).map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
            Ok(Output::Dir(dir))
        }
        None => Err(Failure::input("--out is required (a directory or `-`)")),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

fn write_stdout(bytes: &[u8]) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Failure::internal(format!("stdout: {e}")))
}

/// Expand directories into their `.trc` files; result sorted by path.
pub fn collect_traces(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = fs::read_dir(input).map_err(|e| Failure::input(format!("{}: {e}", input.display())))?;
            for entry in entries {
                let path = entry.map_err(|e| Failure::input(e.to_string()))?.path();
                if path.is_file() && path.extension().is_some_and(|e| e == TRACE_EXTENSION) {
                    out.push(path);
                }
            }
        } else {
            out.push(input.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::internal(e.to_string()))
}

fn prune_settings(args: &PruneArgs, config: &PipelineConfig) -> Result<PruneSettings, Failure> {
    let ratio = args
        .ratio
        .or(config.ratio)
        .ok_or_else(|| Failure::input("--ratio is required"))?;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Failure::input(Error::RatioOutOfRange(ratio).to_string()));
    }
    let alpha = args.alpha.or(config.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Failure::input(Error::AlphaOutOfRange(alpha).to_string()));
    }
    let profile_name = args
        .profile
        .clone()
        .or_else(|| config.profile.clone())
        .unwrap_or_else(|| "vicuna-7b".into());
    let profile = LlmProfile::resolve(&profile_name).map_err(|e| Failure::input(e.to_string()))?;
    let strict = args.strict_floor || config.strict_floor.unwrap_or(false);
    Ok(PruneSettings {
        ratio,
        alpha,
        layers_low: args
            .layers_low
            .clone()
            .or_else(|| config.layers_low.clone())
            .unwrap_or_else(LayerSet::default_low),
        layers_high: args
            .layers_high
            .clone()
            .or_else(|| config.layers_high.clone())
            .unwrap_or_else(LayerSet::default_high),
        policy: if strict {
            RemainderPolicy::StrictFloor
        } else {
            RemainderPolicy::Redistribute
        },
        text_tokens: args.text_tokens.or(config.text_tokens).unwrap_or(0),
        profile,
    })
}

/// Per-trace output directory names: file stems, suffixed on collision.
fn artifact_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "trace".into());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect()
}

fn prune_one(path: &Path, settings: &PruneSettings) -> Result<PruneResult, String> {
    let trace = read_trace_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    prune_trace(&trace, settings).map_err(|e| format!("{} ({}): {e}", path.display(), trace.image_id()))
}

fn trace_report(path: &Path, r: &PruneResult) -> serde_json::Value {
    json!({
        "path": path.display().to_string(),
        "image_id": r.image_id,
        "status": "ok",
        "K": r.allocation.num_tiles,
        "N": r.allocation.n_patches,
        "visual_tokens_full": r.efficiency.full.n_visual,
        "visual_tokens_kept": r.efficiency.pruned.n_visual,
        "effective_ratio": r.effective_ratio(),
        "alpha_applied": r.scores.alpha,
        "alpha_fallback": r.scores.alpha_fallback,
        "tflops_full": r.efficiency.full.tflops,
        "tflops_pruned": r.efficiency.pruned.tflops,
        "kv_cache_mib_full": r.efficiency.full.kv_cache_mib,
        "kv_cache_mib_pruned": r.efficiency.pruned.kv_cache_mib,
    })
}

pub fn run_prune(args: &PruneArgs) -> Result<i32, Failure> {
    let config = load_config(&args.common)?;
    let settings = prune_settings(args, &config)?;
    let output = resolve_output(&args.common.out, &config)?;
    let fail_fast = args.common.fail_fast || config.fail_fast.unwrap_or(false);
    let paths = collect_traces(&args.traces)?;
    if paths.is_empty() {
        return Err(Failure::input("no trace files found"));
    }

    let pool = thread_pool(args.common.jobs.or(config.jobs))?;
    let results: Vec<Result<PruneResult, String>> = if fail_fast {
        let mut out = Vec::new();
        for p in &paths {
            let r = pool.install(|| prune_one(p, &settings));
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    } else {
        use rayon::prelude::*;
        pool.install(|| paths.par_iter().map(|p| prune_one(p, &settings)).collect())
    };

    let names = artifact_names(&paths);
    let mut rows = Vec::new();
    let mut per_trace = Vec::new();
    let (mut failed, mut fallbacks) = (0usize, 0usize);
    let (mut full_tokens, mut kept_tokens) = (0u64, 0u64);
    for ((path, name), result) in paths.iter().zip(&names).zip(&results) {
        match result {
            Ok(r) => {
                if r.scores.alpha_fallback {
                    fallbacks += 1;
                    eprintln!(
                        "warning: {}: no instruction embedding, alpha {} -> 1 (visual saliency only)",
                        path.display(),
                        r.scores.requested_alpha
                    );
                }
                full_tokens += r.efficiency.full.n_visual;
                kept_tokens += r.efficiency.pruned.n_visual;
                rows.push(trace_report(path, r));
                if let Output::Dir(dir) = &output {
                    let sub = dir.join(name);
                    fs::create_dir_all(&sub).map_err(|e| Failure::internal(format!("{}: {e}", sub.display())))?;
                    write_file(&sub.join("masks.json"), &to_json(&r.region_masks()))?;
                    write_file(&sub.join("masks.bin"), &r.mask_bitmaps())?;
                    write_file(&sub.join("scores.json"), &to_json(&r.scores))?;
                    write_file(&sub.join("allocation.json"), &to_json(&r.allocation))?;
                    write_file(&sub.join("efficiency.json"), &to_json(&r.efficiency))?;
                } else {
                    per_trace.push(json!({
                        "path": path.display().to_string(),
                        "masks": r.region_masks(),
                        "scores": r.scores,
                        "allocation": r.allocation,
                        "efficiency": r.efficiency,
                    }));
                }
            }
            Err(msg) => {
                failed += 1;
                eprintln!("error: {msg}");
                rows.push(json!({
                    "path": path.display().to_string(),
                    "status": "error",
                    "error": msg,
                }));
            }
        }
    }
    let skipped = paths.len() - results.len();
    let ok = results.len() - failed;
    let summary = json!({
        "settings": settings,
        "traces": rows,
        "totals": {
            "ok": ok,
            "failed": failed,
            "not_run": skipped,
            "alpha_fallbacks": fallbacks,
            "visual_tokens_full": full_tokens,
            "visual_tokens_kept": kept_tokens,
            "kept_fraction": if full_tokens > 0 { kept_tokens as f64 / full_tokens as f64 } else { 0.0 },
        },
    });
    match &output {
        Output::Dir(dir) => write_file(&dir.join("summary.json"), &to_json(&summary))?,
        Output::Stdout => write_stdout(&to_json(&json!({ "summary": summary, "results": per_trace })))?,
    }
    eprintln!(
        "pruned {ok}/{} trace(s): {kept_tokens} of {full_tokens} visual tokens kept{}",
        paths.len(),
        if fallbacks > 0 { format!(", {fallbacks} alpha fallback(s)") } else { String::new() }
    );
    Ok(if failed > 0 { EXIT_INPUT } else { EXIT_OK })
}

fn load_corpus(paths: &[PathBuf], fail_fast: bool, pool: &rayon::ThreadPool) -> (Vec<(PathBuf, ImageTrace)>, usize) {
    use rayon::prelude::*;
    let loaded: Vec<_> = if fail_fast {
        let mut out = Vec::new();
        for p in paths {
            let r = read_trace_file(p);
            let bad = r.is_err();
            out.push((p.clone(), r));
            if bad {
                break;
            }
        }
        out
    } else {
        pool.install(|| paths.par_iter().map(|p| (p.clone(), read_trace_file(p))).collect())
    };
    let mut ok = Vec::new();
    let mut failed = 0;
    for (p, r) in loaded {
        match r {
            Ok(t) => ok.push((p, t)),
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", p.display());
            }
        }
    }
    (ok, failed)
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<i32, Failure> {
    let config = load_config(&args.common)?;
    let output = resolve_output(&args.common.out, &config)?;
    let fail_fast = args.common.fail_fast || config.fail_fast.unwrap_or(false);
    let paths = collect_traces(&args.corpus)?;
    let pool = thread_pool(args.common.jobs.or(config.jobs))?;
    let (corpus, mut failed) = load_corpus(&paths, fail_fast, &pool);
    if corpus.is_empty() {
        return Err(Failure::input("empty corpus: no readable traces"));
    }
    if fail_fast && failed > 0 {
        return Ok(EXIT_INPUT);
    }
    let traces: Vec<ImageTrace> = corpus.iter().map(|(_, t)| t.clone()).collect();
    let matrix = layer_similarity(&traces, args.region).map_err(|e| Failure::input(e.to_string()))?;
    let boundary = detect_stages(&matrix);
    let split_scores: Vec<f64> = (1..matrix.num_layers).map(|b| split_score(&matrix, b)).collect();
    eprintln!(
        "{} trace(s), {} region(s): stage boundary after layer {boundary} of {}",
        corpus.len(),
        matrix.num_regions,
        matrix.num_layers
    );

    let mut iou_csv = None;
    match &args.masks {
        None => eprintln!("notice: no --masks directory; IoU study skipped"),
        Some(dir) => {
            let mut items = Vec::new();
            for (path, trace) in &corpus {
                let mask_path = dir.join(format!("{}.pgm", trace.image_id()));
                if !mask_path.exists() {
                    eprintln!("notice: no mask for `{}`; skipped", trace.image_id());
                    continue;
                }
                let mask = match SaliencyMask::from_pgm_file(trace.image_id(), &mask_path) {
                    Ok(m) => m,
                    Err(e) => {
                        failed += 1;
                        eprintln!("error: {}: {e}", mask_path.display());
                        continue;
                    }
                };
                let plan = plan_tiling(mask.width, mask.height);
                if (plan.grid_rows as usize, plan.grid_cols as usize) != (trace.grid_rows(), trace.grid_cols()) {
                    failed += 1;
                    eprintln!(
                        "error: {}: mask geometry {}x{} plans grid {}x{}, trace has {}x{}",
                        path.display(),
                        mask.width,
                        mask.height,
                        plan.grid_rows,
                        plan.grid_cols,
                        trace.grid_rows(),
                        trace.grid_cols()
                    );
                    continue;
                }
                items.push((trace, plan, mask));
            }
            let layers: Vec<usize> = args
                .iou_layers
                .indices()
                .iter()
                .copied()
                .filter(|&l| l <= matrix.num_layers)
                .collect();
            if items.is_empty() {
                eprintln!("notice: no trace has a usable mask; IoU study skipped");
            } else {
                let curve = iou_curve(&items, &layers, args.iou_k).map_err(|e| Failure::input(e.to_string()))?;
                eprintln!("IoU computed over {} image(s), k = {}", items.len(), args.iou_k);
                iou_csv = Some(iou_curve_csv(&curve));
            }
        }
    }

    let stages = json!({
        "boundary": boundary,
        "num_layers": matrix.num_layers,
        "num_traces": corpus.len(),
        "num_regions": matrix.num_regions,
        "region": args.region,
        "split_scores": split_scores,
    });
    match &output {
        Output::Dir(dir) => {
            write_file(&dir.join("similarity.csv"), matrix.to_csv().as_bytes())?;
            write_file(&dir.join("stages.json"), &to_json(&stages))?;
            if let Some(csv) = &iou_csv {
                write_file(&dir.join("iou.csv"), csv.as_bytes())?;
            }
        }
        Output::Stdout => write_stdout(&to_json(&json!({
            "stages": stages,
            "similarity_csv": matrix.to_csv(),
            "iou_csv": iou_csv,
        })))?,
    }
    Ok(if failed > 0 { EXIT_INPUT } else { EXIT_OK })
}

pub fn run_synth(args: &SynthArgs) -> Result<i32, Failure> {
    let config = load_config(&args.common)?;
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| Failure::input(format!("{}: {e}", args.spec.display())))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", args.spec.display())))?;
    spec.validate().map_err(|e| Failure::input(e.to_string()))?;
    let dir = match resolve_output(&args.common.out, &config)? {
        Output::Dir(d) => d,
        Output::Stdout => return Err(Failure::input("synth writes trace files; --out must be a directory")),
    };
    for i in 0..args.count {
        let seed = spec
            .seed
            .checked_add(i)
            .ok_or_else(|| Failure::input("seed overflow"))?;
        let trace = generate(&spec.with_seed(seed)).map_err(|e| Failure::input(e.to_string()))?;
        let path = dir.join(format!("{}.{TRACE_EXTENSION}", trace.image_id()));
        write_trace_file(&path, &trace).map_err(|e| Failure::internal(e.to_string()))?;
    }
    eprintln!("wrote {} trace(s) to {}", args.count, dir.display());
    Ok(EXIT_OK)
}
