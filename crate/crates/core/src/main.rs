use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use pseudolabel::augment::{apply_plan, make_plan, materialize_audio};
use pseudolabel::corpus::{
    load_manifest, merge_corpora, preprocess_filter, save_manifest, Corpus, CorpusRole, Sample,
    MANIFEST_SCHEMA_VERSION,
};
use pseudolabel::density::{linspace, KdeModel};
use pseudolabel::diagnostics::{
    field_values, ratio_scatter_export, write_diagnostics, write_scatter_tsv, DiagnoseOptions,
    LengthField, Side,
};
use pseudolabel::filters::{
    filter_embedding_similarity, filter_ratio_kde_with, filter_ratio_to_gold_with, LengthUnit,
    RatioKdeConfig,
};
use pseudolabel::selftrain::{
    mock_label, run_loop, Backend, ExperimentConfig, NoiseModel, SimCheckpoint, SimulatedBackend,
};
use pseudolabel::text::{evaluate, EvalConfig};
use pseudolabel::{Error, Result};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (manifest schema 1)");

#[derive(Debug, Parser)]
#[command(name = "pseudolabel", version = VERSION, about = "Pseudo-label curation for speech transcription and translation corpora")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-sample stages; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a JSONL or TSV listing into a manifest.
    Ingest(IngestArgs),
    /// Write vocabulary, length-profile and scatter tables for two corpora.
    Diagnose(DiagnoseArgs),
    /// Filter pseudo-labels and write the kept manifest plus a report.
    Filter(FilterArgs),
    /// Build concatenation-augmented samples from a supervised manifest.
    Augment(AugmentArgs),
    /// Score predicted labels against gold.
    Evaluate(EvaluateArgs),
    /// Export KDE densities of a length field.
    KdeExport(KdeExportArgs),
    /// Self-training experiments.
    #[command(subcommand)]
    Selftrain(SelftrainCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    Jsonl,
    Tsv,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "mixed")]
    role: CorpusRole,
    #[arg(long, default_value = "und")]
    src_lang: String,
    #[arg(long, default_value = "und")]
    tgt_lang: String,
    /// Apply the duration and length cutoffs.
    #[arg(long)]
    preprocess: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "transcript")]
    side: Side,
    #[arg(long, default_value = "duration")]
    field: LengthField,
    #[arg(long, default_value_t = 256)]
    grid: usize,
    #[arg(long, default_value_t = 2)]
    tail_threshold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    RatioKde,
    RatioGold,
    Laser,
    Preprocess,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Unit {
    Words,
    Characters,
}

impl From<Unit> for LengthUnit {
    fn from(u: Unit) -> Self {
        match u {
            Unit::Words => LengthUnit::Words,
            Unit::Characters => LengthUnit::Characters,
        }
    }
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1]"))
    }
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, default_value = "0.9", value_parser = fraction)]
    keep: f64,
    #[arg(long, default_value_t = 0.9)]
    low: f64,
    #[arg(long, default_value_t = 1.1)]
    high: f64,
    #[arg(long, value_enum, default_value = "words")]
    unit: Unit,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = pseudolabel::augment::DEFAULT_AUGMENT_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.plan.json`.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Concatenate audio into this directory.
    #[arg(long, conflicts_with = "manifest_only")]
    with_audio: Option<PathBuf>,
    #[arg(long)]
    manifest_only: bool,
    /// Write the original samples followed by the augmented ones.
    #[arg(long)]
    union: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    source_lang: Option<String>,
    #[arg(long)]
    target_lang: Option<String>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct KdeExportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "duration")]
    field: LengthField,
    #[arg(long, default_value_t = 256)]
    grid: usize,
    /// Score every sample under the 2D duration/length density instead.
    #[arg(long)]
    joint: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum SelftrainCommand {
    /// Run or resume an experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulated trainer, usable as an external train command.
    MockTrain {
        #[arg(long)]
        train_manifest: PathBuf,
        /// Empty for training from scratch.
        #[arg(long, default_value = "")]
        init: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long)]
        plateau_after: Option<usize>,
    },
    /// Simulated labeler, usable as an external label command.
    MockLabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated embedder, usable as an external embed command.
    MockEmbed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = NoiseModel::default().word_sub_rate)]
    word_sub_rate: f64,
    #[arg(long, default_value_t = NoiseModel::default().loop_rate_slope)]
    loop_rate_slope: f64,
    #[arg(long, default_value_t = NoiseModel::default().loop_ngram_n)]
    loop_ngram_n: usize,
    #[arg(long, default_value_t = NoiseModel::default().loop_repeats)]
    loop_repeats: usize,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_tsv(path: &Path) -> Result<Vec<Sample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Ok(Vec::new()),
    };
    let columns: Vec<String> = header.split('\t').map(|c| c.trim().to_string()).collect();
    for required in ["id", "duration_s"] {
        if !columns.iter().any(|c| c == required) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header lacks column {required:?}"),
            });
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("{} cells, header has {}", cells.len(), columns.len()),
            });
        }
        let mut obj = serde_json::Map::new();
        for (col, cell) in columns.iter().zip(cells) {
            let value = if col == "duration_s" {
                let d: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    message: format!("bad duration {cell:?}"),
                })?;
                serde_json::Value::from(d)
            } else {
                serde_json::Value::from(cell)
            };
            obj.insert(col.clone(), value);
        }
        let sample: Sample = serde_json::from_value(obj.into()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

fn ingest(args: IngestArgs) -> Result<()> {
    let name = args.name.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    });
    let samples = match args.format {
        InputFormat::Jsonl => load_manifest(&args.input)?.samples,
        InputFormat::Tsv => read_tsv(&args.input)?,
    };
    let mut corpus = Corpus::new(name, args.role, args.src_lang, args.tgt_lang, samples)?;
    if args.preprocess {
        let (kept, report) = preprocess_filter(&corpus);
        info!("preprocess kept {} of {}", kept.len(), corpus.len());
        if let Some(p) = &args.report {
            write_text(p, &(report.to_json_pretty()? + "\n"))?;
        }
        corpus = kept;
    }
    save_manifest(&corpus, &args.out)?;
    println!("{} samples", corpus.len());
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let a = load_manifest(&args.a)?;
    let b = load_manifest(&args.b)?;
    let opts = DiagnoseOptions {
        side: args.side,
        tail_threshold: args.tail_threshold,
        field: args.field,
        grid: args.grid,
    };
    write_diagnostics(&a, &b, &opts, &args.out)?;
    let run = serde_json::json!({
        "a": args.a,
        "b": args.b,
        "options": opts,
    });
    write_text(&args.out.join("run_config.json"), &(serde_json::to_string_pretty(&run)? + "\n"))
}

fn filter(args: FilterArgs) -> Result<()> {
    let corpus = load_manifest(&args.manifest)?;
    let (kept, report) = match args.method {
        Method::RatioKde => filter_ratio_kde_with(
            &corpus,
            &RatioKdeConfig {
                keep_fraction: args.keep,
                unit: args.unit.into(),
            },
        )?,
        Method::RatioGold => filter_ratio_to_gold_with(&corpus, args.low, args.high, args.unit.into())?,
        Method::Laser => filter_embedding_similarity(&corpus, args.keep)?,
        Method::Preprocess => preprocess_filter(&corpus),
    };
    save_manifest(&kept, &args.out)?;
    let report_path = args.report.unwrap_or_else(|| with_suffix(&args.out, ".report.json"));
    write_text(&report_path, &(report.to_json_pretty()? + "\n"))?;
    println!("kept {} dropped {}", report.kept.len(), report.dropped.len());
    Ok(())
}

fn augment(args: AugmentArgs, seed: u64) -> Result<()> {
    let corpus = load_manifest(&args.manifest)?.with_role(CorpusRole::Supervised)?;
    let plan = make_plan(&corpus, args.k, seed)?;
    let mut augmented = apply_plan(&corpus, &plan)?;
    if let Some(dir) = &args.with_audio {
        materialize_audio(&corpus, &mut augmented, dir)?;
    }
    let plan_path = args.plan.unwrap_or_else(|| with_suffix(&args.out, ".plan.json"));
    write_text(&plan_path, &(plan.to_json_pretty()? + "\n"))?;
    let out = if args.union {
        merge_corpora(&corpus, &augmented, 1.0)?
    } else {
        augmented
    };
    save_manifest(&out, &args.out)?;
    println!("{} augmented samples", plan.len());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let mut corpus = load_manifest(&args.manifest)?;
    if let Some(l) = args.source_lang {
        corpus.source_lang = l;
    }
    if let Some(l) = args.target_lang {
        corpus.target_lang = l;
    }
    let report = evaluate(&corpus, &EvalConfig::default())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "WER={:.2} BLEU={:.2}",
            100.0 * report.transcript.wer,
            report.translation.bleu
        );
    }
    Ok(())
}

fn kde_export(args: KdeExportArgs) -> Result<()> {
    let corpus = load_manifest(&args.manifest)?;
    if args.joint {
        let rows = ratio_scatter_export(&corpus)?;
        return write_with(&args.out, |w| write_scatter_tsv(&rows, w));
    }
    if args.grid < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let values = field_values(&corpus, args.field)?;
    let model = KdeModel::fit_1d(&values, None)?;
    let h = model.bandwidth()[0];
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let xs = linspace(lo, hi, args.grid);
    let pts: Vec<[f64; 1]> = xs.iter().map(|&x| [x]).collect();
    let ys = model.pdf_batch(&pts)?;
    write_with(&args.out, |w| {
        writeln!(w, "x\tdensity")?;
        for (x, y) in xs.iter().zip(&ys) {
            writeln!(w, "{x}\t{y}")?;
        }
        Ok(())
    })
}

fn selftrain(cmd: SelftrainCommand, seed: u64, seed_given: bool) -> Result<()> {
    match cmd {
        SelftrainCommand::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if seed_given {
                cfg.round.seed = seed;
                if let pseudolabel::selftrain::BackendSpec::Simulated(s) = &mut cfg.backend {
                    s.seed = seed;
                }
            }
            let backend = cfg.build_backend()?;
            let corpora = cfg.load_corpora()?;
            fs::create_dir_all(&cfg.experiment_dir).map_err(|e| Error::io(&cfg.experiment_dir, e))?;
            info!("resolved config: {}", serde_json::to_string(&cfg)?);
            write_text(
                &cfg.experiment_dir.join("run_config.json"),
                &(serde_json::to_string_pretty(&cfg)? + "\n"),
            )?;
            let outcome = run_loop(&cfg.experiment_dir, backend.as_ref(), corpora, cfg.round.clone())?;
            for rec in std::iter::once(&outcome.base).chain(&outcome.rounds) {
                println!(
                    "round={} train={} kept={} dropped={} WER={:.2} BLEU={:.2}",
                    rec.round,
                    rec.n_train,
                    rec.n_pseudo_kept,
                    rec.n_pseudo_dropped,
                    100.0 * rec.eval_supervised.transcript.wer,
                    rec.eval_supervised.translation.bleu
                );
            }
            Ok(())
        }
        SelftrainCommand::MockTrain {
            train_manifest,
            init,
            out,
            noise,
            eta,
            plateau_after,
        } => {
            let backend = SimulatedBackend {
                base: NoiseModel {
                    word_sub_rate: noise.word_sub_rate,
                    loop_rate_slope: noise.loop_rate_slope,
                    loop_ngram_n: noise.loop_ngram_n,
                    loop_repeats: noise.loop_repeats,
                },
                eta,
                plateau_after,
                seed,
            };
            backend.base.validate()?;
            let init = (!init.is_empty()).then(|| PathBuf::from(init));
            backend.train(&train_manifest, init.as_deref(), &out)
        }
        SelftrainCommand::MockLabel { checkpoint, input, out } => {
            let ck = SimCheckpoint::load(&checkpoint)?;
            let corpus = load_manifest(&input)?;
            save_manifest(&mock_label(&corpus, &ck.noise, ck.seed)?, &out)
        }
        SelftrainCommand::MockEmbed { input, out } => {
            let corpus = load_manifest(&input)?;
            save_manifest(&SimulatedBackend::embed_corpus(&corpus)?, &out)
        }
    }
}

fn run(cli: Cli, seed_given: bool) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Filter(a) => filter(a),
        Command::Augment(a) => augment(a, cli.seed),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::KdeExport(a) => kde_export(a),
        Command::Selftrain(c) => selftrain(c, cli.seed, seed_given),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let seed_given = args.iter().any(|a| a == "--seed" || a.starts_with("--seed="));
    env_logger::Builder::new().filter_level(cli.log_level).init();
    debug_assert_eq!(MANIFEST_SCHEMA_VERSION, 1);
    match run(cli, seed_given) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
