//! `hummit`: command-line front end of the query-by-humming engine.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hummit_core::contour::SlopeConfig;
use hummit_core::corpus::{scan_corpus, Catalog, CorpusTag};
use hummit_core::dataset::{build_dataset, decode_dataset, encode_dataset, frame_query, normalize_frame, DatasetConfig};
use hummit_core::eval::{evaluate_model, run_ablation, AblationConfig, ConfigResult, EvalReport};
use hummit_core::fcn::{predict_song, read_checkpoint, train, write_checkpoint, ArchSpec, Checkpoint, TrainConfig};
use hummit_core::pipeline::{extract_catalog, extract_from_pitch_file, extract_from_wav, Extraction, FrontEnd, PitchSource};
use hummit_core::pitch::{format_pitch_text, parse_pitch_text, PitchConfig};
use hummit_core::synth::{write_synthetic_corpus, SynthConfig};
use hummit_core::tvr::{denoise_tv, TvrConfig};
use hummit_core::{write_atomic, Error};

#[derive(Parser, Debug)]
#[command(name = "hummit", version, about = "Query-by-humming: contour extraction, TV denoising and FCN retrieval")]
struct Cli {
    /// Seed for splits, initialization, shuffling and synthesis.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract a note contour from a hummed WAV (or a pitch file).
    Extract(ExtractArgs),
    /// TV-denoise a pitch file.
    Denoise(DenoiseArgs),
    /// Build a dataset cache or synthesize a corpus.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier on a dataset cache.
    Train(TrainArgs),
    /// Run the with/without-TVR ablation, or score one model.
    Evaluate(EvaluateArgs),
    /// Rank songs for a hummed query.
    Query(QueryArgs),
}

#[derive(Args, Debug, Clone)]
struct FrontEndArgs {
    /// Fidelity weight of the TV objective (larger stays closer to the input).
    #[arg(long, default_value_t = 0.3)]
    tv_lambda: f64,
    /// Smallest per-frame slope, in semitones, counted as a note transition.
    #[arg(long, default_value_t = 0.5)]
    slope_threshold: f64,
    /// Minimal spacing between transitions, in seconds.
    #[arg(long, default_value_t = 0.1)]
    min_gap: f64,
    /// Voicing threshold of the pitch tracker.
    #[arg(long, default_value_t = 0.45)]
    voicing_threshold: f64,
}

impl FrontEndArgs {
    fn front_end(&self) -> FrontEnd {
        FrontEnd {
            pitch: PitchConfig {
                voicing_threshold: self.voicing_threshold,
                ..PitchConfig::default()
            },
            tv: TvrConfig {
                lambda_fidelity: self.tv_lambda,
            },
            slope: SlopeConfig {
                threshold_semitones: self.slope_threshold,
                min_gap_s: self.min_gap,
            },
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// WAV file, or a pitch file with --pitch-from-file.
    input: PathBuf,
    /// Treat the input as a one-value-per-line pitch file.
    #[arg(long)]
    pitch_from_file: bool,
    /// Frame rate of the pitch file.
    #[arg(long, default_value_t = 100.0)]
    pv_frame_rate: f64,
    /// Include the pitch vector, denoised signal and transitions.
    #[arg(long)]
    dump_intermediate: bool,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fe: FrontEndArgs,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    /// Pitch file, one value per line, 0 = unvoiced.
    input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    tv_lambda: f64,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Extract contours for a corpus and write a HUMDS1 cache.
    Build(BuildArgs),
    /// Write a synthetic corpus in the MIR-QBSH layout.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Corpus root directory.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "mir-qbsh")]
    layout: CorpusTag,
    /// Optional MTG-QBH root merged into the catalog.
    #[arg(long)]
    mtg_root: Option<PathBuf>,
    /// Use bundled `.pv` annotations instead of tracking the WAVs.
    #[arg(long)]
    bundled_pitch: bool,
    /// Frame rate of bundled `.pv` annotations.
    #[arg(long, default_value_t = 31.25)]
    pv_frame_rate: f64,
    /// Contour frame rate of the dataset.
    #[arg(long, default_value_t = 100.0)]
    frame_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    window_s: f64,
    #[arg(long, default_value_t = 2.0)]
    hop_s: f64,
    #[arg(long)]
    include_mtg: bool,
    #[command(flatten)]
    fe: FrontEndArgs,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Append TV-denoised contours of training queries.
    #[arg(long)]
    augment_tvr: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    songs: usize,
    #[arg(long, default_value_t = 16)]
    queries_per_song: usize,
    #[arg(long, default_value_t = 8.0)]
    query_s: f64,
    /// Octave cracks per second.
    #[arg(long, default_value_t = 0.6)]
    crack_rate: f64,
    /// Slow pitch-drift standard deviation, semitones.
    #[arg(long, default_value_t = 0.3)]
    drift_sd: f64,
    /// Per-note intonation error standard deviation, semitones.
    #[arg(long, default_value_t = 0.3)]
    note_error_sd: f64,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum ArchArg {
    Fcn,
    Mlp,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Convolution blocks as `filtersxkernel`, comma separated.
    #[arg(long, default_value = "128x8,256x5,128x3")]
    fcn_blocks: String,
    /// Hidden layer widths of the MLP, comma separated.
    #[arg(long, default_value = "300,300,300,300")]
    mlp_hidden: String,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    constant_epochs: usize,
    #[arg(long, default_value_t = 0.7)]
    decay: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    /// Print one line per epoch to stderr.
    #[arg(long)]
    verbose: bool,
}

impl ModelArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            initial_lr: self.lr,
            constant_epochs: self.constant_epochs,
            decay_factor: self.decay,
            plateau_patience: self.patience,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    fn blocks(&self) -> Result<Vec<(usize, usize)>, CliError> {
        self.fcn_blocks
            .split(',')
            .map(|b| {
                let (f, k) = b
                    .trim()
                    .split_once('x')
                    .ok_or_else(|| CliError::Usage(format!("bad block `{b}`, expected FILTERSxKERNEL")))?;
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| CliError::Usage(format!("bad block `{b}`")))
                };
                Ok((num(f)?, num(k)?))
            })
            .collect()
    }

    fn hidden(&self) -> Result<Vec<usize>, CliError> {
        self.mlp_hidden
            .split(',')
            .map(|h| {
                h.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad hidden width `{h}`")))
            })
            .collect()
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// HUMDS1 dataset cache.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "fcn")]
    arch: ArchArg,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Corpus root for the ablation.
    #[arg(long, required_unless_present = "model")]
    root: Option<PathBuf>,
    #[arg(long, default_value = "mir-qbsh")]
    layout: CorpusTag,
    #[arg(long)]
    mtg_root: Option<PathBuf>,
    #[arg(long)]
    bundled_pitch: bool,
    #[arg(long, default_value_t = 31.25)]
    pv_frame_rate: f64,
    #[arg(long, default_value_t = 100.0)]
    frame_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    window_s: f64,
    #[arg(long, default_value_t = 2.0)]
    hop_s: f64,
    #[arg(long)]
    include_mtg: bool,
    /// Skip the MLP baseline.
    #[arg(long)]
    no_mlp: bool,
    /// Score a single checkpoint on a dataset cache instead.
    #[arg(long, requires = "dataset")]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Emit JSON instead of the text table.
    #[arg(long)]
    json: bool,
    /// Exit non-zero unless with-TVR accuracy >= without-TVR accuracy.
    #[arg(long)]
    check: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fe: FrontEndArgs,
    #[command(flatten)]
    train: ModelArgs,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Hummed WAV.
    wav: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Hop between query windows, seconds.
    #[arg(long, default_value_t = 2.0)]
    hop_s: f64,
    #[command(flatten)]
    fe: FrontEndArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
    /// `--check` failed; the report was still written.
    Check,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

fn data<E: Into<Error>>(e: E) -> CliError {
    CliError::Data(e.into())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn validate_front_end(fe: &FrontEnd) -> Result<(), CliError> {
    let usage = |m: String| CliError::Usage(m);
    fe.pitch.validate().map_err(|e| usage(e.to_string()))?;
    fe.tv.validate().map_err(|e| usage(e.to_string()))?;
    fe.slope.validate().map_err(|e| usage(e.to_string()))?;
    Ok(())
}

fn load_catalog(root: &Path, layout: CorpusTag, mtg_root: Option<&Path>) -> Result<Catalog, CliError> {
    let mut catalog = scan_corpus(root, layout).map_err(data)?;
    if let Some(m) = mtg_root {
        catalog = catalog.merge(scan_corpus(m, CorpusTag::MtgQbh).map_err(data)?).map_err(data)?;
    }
    for s in &catalog.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    Ok(catalog)
}

fn pitch_source(bundled: bool, pv_frame_rate: f64) -> PitchSource {
    if bundled {
        PitchSource::Bundled {
            frame_rate: pv_frame_rate,
        }
    } else {
        PitchSource::Audio
    }
}

fn run_extract(a: &ExtractArgs) -> Result<(), CliError> {
    let fe = a.fe.front_end();
    validate_front_end(&fe)?;
    let ex: Extraction = if a.pitch_from_file {
        extract_from_pitch_file(&a.input, a.pv_frame_rate, &fe)?
    } else {
        extract_from_wav(&a.input, &fe)?
    };
    let c = &ex.trace.contour;
    let mut v = serde_json::json!({
        "frame_rate": c.frame_rate,
        "segments": c.segments,
    });
    if a.dump_intermediate {
        v["pitch_vector"] = serde_json::json!({
            "frame_rate": ex.pitch.frame_rate,
            "values": ex.pitch.values,
            "voiced": ex.pitch.voiced,
        });
        v["filled"] = serde_json::json!(ex.filled.values);
        v["denoised"] = serde_json::json!(ex.trace.denoised);
        v["slope"] = serde_json::json!(ex.trace.slope);
        v["transitions"] = serde_json::json!(ex.trace.transitions);
        v["config"] = serde_json::to_value(fe).expect("config serializes");
    }
    let mut text = serde_json::to_string_pretty(&v).expect("json");
    text.push('\n');
    emit(a.out.as_deref(), &text)
}

fn run_denoise(a: &DenoiseArgs) -> Result<(), CliError> {
    let tv = TvrConfig::new(a.tv_lambda).map_err(|e| CliError::Usage(e.to_string()))?;
    let text = std::fs::read_to_string(&a.input).map_err(io_err(&a.input))?;
    // The frame rate does not enter the TV objective.
    let pv = parse_pitch_text(&text, 1.0).map_err(data)?;
    let filled = hummit_core::pitch::fill_unvoiced(&pv).map_err(data)?;
    let u = denoise_tv(&filled.values, &tv).map_err(data)?;
    emit(a.out.as_deref(), &format_pitch_text(&u, Some(&pv.voiced)))
}

fn dataset_config(c: &CorpusArgs, augment: bool, seed: u64) -> Result<DatasetConfig, CliError> {
    let cfg = DatasetConfig {
        window_s: c.window_s,
        hop_s: c.hop_s,
        frame_rate: c.frame_rate,
        augment_with_denoised: augment,
        include_mtg: c.include_mtg,
        seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn run_build(a: &BuildArgs, seed: u64) -> Result<(), CliError> {
    let fe = a.corpus.fe.front_end();
    validate_front_end(&fe)?;
    let cfg = dataset_config(&a.corpus, a.augment_tvr, seed)?;
    let c = &a.corpus;
    let catalog = load_catalog(&c.root, c.layout, c.mtg_root.as_deref())?;
    let (catalog, contours) = extract_catalog(&catalog, &fe, pitch_source(c.bundled_pitch, c.pv_frame_rate), cfg.frame_rate);
    let ds = build_dataset(&catalog, &contours, &cfg).map_err(data)?;
    write_atomic(&a.out, &encode_dataset(&ds)).map_err(io_err(&a.out))?;
    eprintln!(
        "{} frames, {} classes, {} queries ({} skipped)",
        ds.frames.len(),
        ds.n_classes,
        catalog.queries.len(),
        catalog.skipped.len()
    );
    Ok(())
}

fn run_synth(a: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_songs: a.songs,
        queries_per_song: a.queries_per_song,
        query_s: a.query_s,
        crack_rate: a.crack_rate,
        drift_sd: a.drift_sd,
        note_error_sd: a.note_error_sd,
        snr_db: a.snr_db,
        seed,
        ..SynthConfig::default()
    };
    if cfg.n_songs < 2 || cfg.queries_per_song == 0 || !(cfg.query_s > 0.1) {
        return Err(CliError::Usage("need at least 2 songs, 1 query per song and query_s > 0.1".into()));
    }
    let written = write_synthetic_corpus(&a.out, &cfg)?;
    eprintln!("{} songs, {} queries under {}", cfg.n_songs, written.len(), a.out.display());
    Ok(())
}

fn progress(verbose: bool) -> impl FnMut(&str, &hummit_core::fcn::EpochRecord) {
    move |label, r| {
        if verbose {
            eprintln!(
                "{label}: epoch {:>3} lr {:.6} loss {:.4} val {:.4}",
                r.epoch, r.lr, r.train_loss, r.val_accuracy
            );
        }
    }
}

fn run_train(a: &TrainArgs, seed: u64) -> Result<(), CliError> {
    let cfg = a.model.train_config(seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bytes = std::fs::read(&a.dataset).map_err(io_err(&a.dataset))?;
    let ds = decode_dataset(&bytes).map_err(data)?;
    let arch = match a.arch {
        ArchArg::Fcn => ArchSpec::fcn_with_blocks(ds.n_classes, ds.frame_len(), &a.model.blocks()?),
        ArchArg::Mlp => ArchSpec::mlp_with_hidden(ds.n_classes, ds.frame_len(), &a.model.hidden()?),
    };
    arch.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut report = progress(a.model.verbose);
    let outcome = train::<f32>(&ds, &arch, &cfg, |r| report("train", r)).map_err(data)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        class_names: ds.class_names.clone(),
        frame_rate: ds.frame_rate,
    };
    write_checkpoint(&a.out, &ckpt).map_err(io_err(&a.out))?;
    if let Some(h) = &a.history {
        let text = serde_json::to_string_pretty(&outcome.history).expect("json");
        write_atomic(h, text.as_bytes()).map_err(io_err(h))?;
    }
    let best = &outcome.history[outcome.best_epoch - 1];
    eprintln!(
        "best epoch {} of {}: validation accuracy {:.4}",
        outcome.best_epoch,
        outcome.history.len(),
        best.val_accuracy
    );
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs, seed: u64) -> Result<(), CliError> {
    let report = if let (Some(model), Some(dataset)) = (&a.model, &a.dataset) {
        let ckpt = read_checkpoint(model)?;
        let bytes = std::fs::read(dataset).map_err(io_err(dataset))?;
        let ds = decode_dataset(&bytes).map_err(data)?;
        if ds.class_names != ckpt.class_names {
            return Err(data(hummit_core::fcn::FcnError::ShapeMismatch(
                "model and dataset class lists differ".into(),
            )));
        }
        let (q, f, n) = evaluate_model(&ckpt.params, &ds)?;
        EvalReport {
            results: vec![ConfigResult {
                label: model.display().to_string(),
                query_accuracy: q,
                frame_accuracy: f,
                n_queries: n,
                n_classes: ds.n_classes,
                seed,
                epochs_run: 0,
                best_epoch: 0,
            }],
            references: hummit_core::eval::reference_rows(),
        }
    } else {
        let fe = a.fe.front_end();
        validate_front_end(&fe)?;
        let root = a.root.as_ref().expect("clap enforces --root");
        let dataset = DatasetConfig {
            window_s: a.window_s,
            hop_s: a.hop_s,
            frame_rate: a.frame_rate,
            augment_with_denoised: true,
            include_mtg: a.include_mtg,
            seed,
        };
        dataset.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let train_cfg = a.train.train_config(seed);
        train_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = AblationConfig {
            dataset,
            train: train_cfg,
            fcn_blocks: a.train.blocks()?,
            mlp_hidden: a.train.hidden()?,
            include_mlp: !a.no_mlp,
        };
        let catalog = load_catalog(root, a.layout, a.mtg_root.as_deref())?;
        let (catalog, contours) =
            extract_catalog(&catalog, &fe, pitch_source(a.bundled_pitch, a.pv_frame_rate), a.frame_rate);
        run_ablation(&catalog, &contours, &cfg, progress(a.train.verbose))?
    };
    let text = if a.json { report.to_json() + "\n" } else { report.to_text() };
    emit(a.out.as_deref(), &text)?;
    if a.check && !report.tvr_check() {
        return Err(CliError::Check);
    }
    Ok(())
}

fn run_query(a: &QueryArgs) -> Result<(), CliError> {
    let fe = a.fe.front_end();
    validate_front_end(&fe)?;
    let ckpt = read_checkpoint(&a.model)?;
    let ex = extract_from_wav(&a.wav, &fe)?;
    let raw = ex.contours(ckpt.frame_rate).raw;
    let input_len = ckpt.params.arch.input_len;
    let cfg = DatasetConfig {
        window_s: input_len as f64 / ckpt.frame_rate,
        hop_s: a.hop_s.min(input_len as f64 / ckpt.frame_rate),
        frame_rate: ckpt.frame_rate,
        ..DatasetConfig::default()
    };
    let windows = frame_query(&raw, &cfg).map_err(data)?;
    let frames: Vec<f32> = windows
        .iter()
        .flat_map(|w| normalize_frame(w).into_iter().map(|v| v as f32))
        .collect();
    let ranked = predict_song(&ckpt.params, &frames, windows.len(), &ckpt.class_names).map_err(data)?;
    let mut text = String::new();
    for (rank, (song, score)) in ranked.iter().take(a.top).enumerate() {
        text.push_str(&format!("{:>2}  {song}  {score:.6}\n", rank + 1));
    }
    emit(None, &text)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Denoise(a) => run_denoise(a),
        Command::Dataset(DatasetCommand::Build(a)) => run_build(a, cli.seed),
        Command::Dataset(DatasetCommand::Synth(a)) => run_synth(a, cli.seed),
        Command::Train(a) => run_train(a, cli.seed),
        Command::Evaluate(a) => run_evaluate(a, cli.seed),
        Command::Query(a) => run_query(a),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Check) => {
            eprintln!("check failed: with-TVR accuracy below without-TVR accuracy");
            ExitCode::from(3)
        }
    }
}
