use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bwe_core::audio::{load_audio, write_wav, AudioBuffer, WavEncoding, MODEL_RATE};
use bwe_core::config::TrainConfig;
use bwe_core::degrade::{add_noise, butterworth_condition, sample_cutoff, CutoffDistribution, NoiseSpec};
use bwe_core::filters::{design_butterworth_lowpass, design_fir_lowpass, filter_fir_aligned, fir_response, response_table, FilterSpec};
use bwe_core::inference::{run_inference, PipelineConfig};
use bwe_core::ltas::{all_difference_curves, average_curves, compute_ltas, estimate_cutoff, save_curve, DEFAULT_SMOOTHING_OCTAVES};
use bwe_core::metrics::{embedding_distance, fad_protocol, fad_two_split, lsd, write_report_file, EmbeddingProvider, ReportRow, SurrogateEmbedder};
use bwe_core::plot::{plot_curves, plot_response, plot_trace, spectrogram_plot};
use bwe_core::synth::piano_corpus;
use bwe_core::trainer::Trainer;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Bandwidth extension for band-limited music recordings.
#[derive(Parser)]
#[command(name = "bwe", version, about, arg_required_else_help = true)]
struct Cli {
    /// Seed for every random draw made by the command
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Increase logging verbosity (-v, -vv)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply training or test lowpass filters to a corpus
    Degrade(DegradeArgs),
    /// Train a generator and discriminators from a TOML config
    Train(TrainArgs),
    /// Restore a recording with a trained checkpoint
    Infer(InferArgs),
    /// Compute LSD, embedding distance or FAD between two sets of files
    Evaluate(EvaluateArgs),
    /// Long-term average spectrum difference curves and cutoff estimates
    Ltas(LtasArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FilterKind {
    /// Kaiser-window FIR as used for training pairs
    TrainFir,
    /// Sixth-order Butterworth test condition
    Butterworth,
}

#[derive(Args, Serialize)]
struct DegradeArgs {
    /// WAV file or directory of WAV files
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "butterworth")]
    filter: FilterKind,
    /// Cutoff in Hz; the training FIR samples one per file when omitted
    #[arg(long)]
    fc: Option<f64>,
    /// Add the training noise floor after filtering
    #[arg(long)]
    noise: bool,
    /// Write the filter's magnitude response as SVG
    #[arg(long)]
    response_plot: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a trainer checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train on this many synthesized piano clips instead of corpus_dir
    #[arg(long)]
    synthetic_clips: Option<usize>,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Shell command with {input} and {output} placeholders
    #[arg(long)]
    denoiser_cmd: Option<String>,
    /// Add -30 dBFS white noise before the generator
    #[arg(long)]
    noise: bool,
    #[arg(long, default_value_t = 5.0)]
    chunk_seconds: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap_seconds: f64,
    /// Write a spectrogram of the output as SVG
    #[arg(long)]
    spectrogram: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum Metric {
    Lsd,
    Vgg,
    Fad,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Provider {
    Surrogate,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    /// Reference files (file or directory)
    #[arg(long)]
    background: PathBuf,
    /// Processed files, paired with references by file name
    #[arg(long)]
    evaluation: PathBuf,
    #[arg(long, value_enum, default_value = "surrogate")]
    provider: Provider,
    /// FAD only: seeded split into background and evaluation halves
    #[arg(long)]
    two_split: bool,
    /// Condition label written to the report
    #[arg(long, default_value = "evaluation")]
    condition: String,
    /// CSV report (condition, metric, value, provider, seed); overwritten if present
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct LtasArgs {
    /// Historical recordings
    #[arg(long, num_args = 1.., required = true)]
    old: Vec<PathBuf>,
    /// Modern reference recordings
    #[arg(long, num_args = 1.., required = true)]
    modern: Vec<PathBuf>,
    /// Gaussian smoothing width in octaves
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_OCTAVES)]
    smoothing: f64,
    /// Averaged difference curve as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Difference curves as SVG
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn print_config<T: Serialize>(name: &str, seed: u64, args: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Effective<'a, T> {
        command: &'a str,
        seed: u64,
        #[serde(flatten)]
        args: &'a T,
    }
    let text = toml::to_string(&Effective { command: name, seed, args }).context("serializing effective config")?;
    println!("# effective config\n{text}");
    Ok(())
}

fn wav_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .wav files in {}", path.display());
    }
    Ok(files)
}

fn load(path: &Path) -> Result<AudioBuffer> {
    load_audio(path, MODEL_RATE).with_context(|| format!("loading {}", path.display()))
}

fn degrade(seed: u64, a: &DegradeArgs) -> Result<()> {
    print_config("degrade", seed, a)?;
    let files = wav_files(&a.input)?;
    std::fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if a.noise { NoiseSpec::default() } else { NoiseSpec::disabled() };
    for f in &files {
        let y = load(f)?;
        let (x, fc) = match a.filter {
            FilterKind::Butterworth => {
                let fc = a.fc.context("--fc is required for the butterworth filter")?;
                (butterworth_condition(&y, fc)?, fc)
            }
            FilterKind::TrainFir => {
                let fc = a.fc.unwrap_or_else(|| sample_cutoff(&CutoffDistribution::default(), &mut rng));
                let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(fc, MODEL_RATE))?;
                (AudioBuffer::new(filter_fir_aligned(y.samples(), &taps), MODEL_RATE)?, fc)
            }
        };
        let x = add_noise(&x, &noise, &mut rng);
        let name = f.file_name().context("file name")?;
        write_wav(a.out.join(name), &x, WavEncoding::Float32)?;
        println!("{}\tfc={fc:.1}", f.display());
    }
    if let Some(plot) = &a.response_plot {
        let fc = a.fc.unwrap_or(CutoffDistribution::default().mean_hz);
        let rows = match a.filter {
            FilterKind::Butterworth => {
                let sos = design_butterworth_lowpass(&FilterSpec::butterworth(fc, MODEL_RATE))?;
                response_table(512, MODEL_RATE, |f| sos.response(f))
            }
            FilterKind::TrainFir => {
                let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(fc, MODEL_RATE))?;
                response_table(512, MODEL_RATE, |f| fir_response(&taps, f, MODEL_RATE))
            }
        };
        plot_response(plot, &format!("{:?} lowpass at {fc:.0} Hz", a.filter), &rows)?;
    }
    Ok(())
}

fn train(seed: u64, a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    print_config("train", seed, a)?;
    println!("{}", cfg.to_toml());
    let clips = match (a.synthetic_clips, &cfg.corpus_dir) {
        (Some(n), _) => piano_corpus(n, 5.0, seed),
        (None, Some(dir)) => wav_files(dir)?.iter().map(|f| load(f)).collect::<Result<_>>()?,
        (None, None) => bail!("set corpus_dir in the config or pass --synthetic-clips"),
    };
    info!("{} training clips", clips.len());
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg.clone(), clips, p)?,
        None => Trainer::new(cfg.clone(), clips)?,
    };
    trainer.run()?;
    plot_trace(cfg.output_dir.join("trace.svg"), trainer.trace())?;
    println!("wrote {}", cfg.output_dir.join("final.ckpt").display());
    Ok(())
}

fn infer(seed: u64, a: &InferArgs) -> Result<()> {
    print_config("infer", seed, a)?;
    let cfg = PipelineConfig {
        checkpoint: a.checkpoint.clone(),
        denoiser_cmd: a.denoiser_cmd.clone(),
        chunk_seconds: a.chunk_seconds,
        overlap_seconds: a.overlap_seconds,
        inference_noise: a.noise.then(NoiseSpec::default),
        seed,
    };
    let y = run_inference(&a.input, &a.out, &cfg)?;
    if let Some(p) = &a.spectrogram {
        spectrogram_plot(p, "restored", &y, 400, 256)?;
    }
    println!("wrote {} ({} samples at {} Hz)", a.out.display(), y.len(), y.sample_rate());
    Ok(())
}

fn paired(a: &EvaluateArgs) -> Result<Vec<(AudioBuffer, AudioBuffer)>> {
    let refs = wav_files(&a.background)?;
    let mut out = Vec::new();
    for r in refs {
        let name = r.file_name().context("file name")?;
        let e = if a.evaluation.is_file() { a.evaluation.clone() } else { a.evaluation.join(name) };
        if !e.exists() {
            bail!("no evaluation file matching {}", r.display());
        }
        out.push((load(&r)?, load(&e)?));
    }
    Ok(out)
}

fn evaluate(seed: u64, a: &EvaluateArgs) -> Result<()> {
    print_config("evaluate", seed, a)?;
    let provider: Box<dyn EmbeddingProvider> = match a.provider {
        Provider::Surrogate => Box::new(SurrogateEmbedder::with_seed(seed)),
    };
    let descriptor = if a.metric == Metric::Lsd { "none".to_string() } else { provider.descriptor() };
    let value = match a.metric {
        Metric::Lsd | Metric::Vgg => {
            let pairs = paired(a)?;
            let mut total = 0.0;
            for (r, e) in &pairs {
                total += match a.metric {
                    Metric::Lsd => lsd(r, e)?,
                    _ => embedding_distance(r, e, provider.as_ref())?,
                };
            }
            total / pairs.len() as f64
        }
        Metric::Fad if a.two_split => {
            let (refs, evals): (Vec<_>, Vec<_>) = paired(a)?.into_iter().unzip();
            let r = fad_two_split(&refs, &evals, provider.as_ref(), seed)?;
            println!("background split: {:?}\nevaluation split: {:?}", r.background, r.evaluation);
            r.value
        }
        Metric::Fad => {
            let bg = wav_files(&a.background)?.iter().map(|f| load(f)).collect::<Result<Vec<_>>>()?;
            let ev = wav_files(&a.evaluation)?.iter().map(|f| load(f)).collect::<Result<Vec<_>>>()?;
            fad_protocol(&bg, &ev, provider.as_ref())?
        }
    };
    let metric = format!("{:?}", a.metric).to_lowercase();
    println!("{metric} = {value}");
    if let Some(p) = &a.report {
        let row = ReportRow {
            condition: a.condition.clone(),
            metric,
            value,
            provider: descriptor,
            seed,
        };
        write_report_file(p, &[row])?;
    }
    Ok(())
}

fn ltas(seed: u64, a: &LtasArgs) -> Result<()> {
    print_config("ltas", seed, a)?;
    let curves = |paths: &[PathBuf]| -> Result<Vec<_>> {
        paths.iter().map(|p| Ok(compute_ltas(&load(p)?, a.smoothing)?)).collect()
    };
    let (old, modern) = (curves(&a.old)?, curves(&a.modern)?);
    let diffs = all_difference_curves(&old, &modern)?;
    let avg = average_curves(&diffs)?;
    match estimate_cutoff(&avg) {
        Ok(fc) => println!("estimated -3 dB cutoff: {fc:.1} Hz"),
        Err(e) => println!("estimated -3 dB cutoff: {e}"),
    }
    if let Some(p) = &a.csv {
        save_curve(p, &avg)?;
    }
    if let Some(p) = &a.plot {
        let mut named: Vec<(String, _)> = diffs
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("old {} - modern {}", i / modern.len() + 1, i % modern.len() + 1), c))
            .collect();
        named.push(("average".into(), avg));
        plot_curves(p, "LTAS difference", &named)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::from_default_env().filter_level(level).init();
    let result = match &cli.command {
        Command::Degrade(a) => degrade(cli.seed, a),
        Command::Train(a) => train(cli.seed, a),
        Command::Infer(a) => infer(cli.seed, a),
        Command::Evaluate(a) => evaluate(cli.seed, a),
        Command::Ltas(a) => ltas(cli.seed, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
