//! Command-line front end: dereverberate WAV files, score results, run
//! batch experiments, and synthesize test impulse responses.

mod config;
mod experiment;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use dereverb_core::{
    activation_deconvolve, cepstral_distortion, istft, measure_t60, nmfd,
    nmfd_convnmf, nmfd_nmf, nmfd_stacked, read_wav, recombine, split, stft, synth_rir, write_wav,
    ActivationDeconvParams, MagnitudeSpectrogram, NmfdParams, RirSpec, SpeechModelParams,
    StftConfig, Waveform, WindowKind,
};

use config::{resolve, ConfigFile};

#[derive(Parser)]
#[command(
    name = "dereverb",
    about = "Single-channel blind speech dereverberation toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dereverberate a WAV file and write the enhanced audio.
    Dereverb(DereverbArgs),
    /// Score an enhanced file against its clean and reverberant versions.
    Evaluate(EvaluateArgs),
    /// Run a batch of utterances x impulse responses x algorithms and
    /// write long-format and pivot CSV reports.
    Experiment(experiment::ExperimentArgs),
    /// Synthesize a room impulse response with a target T60.
    SynthRir(SynthRirArgs),
    /// Measure the T60 of an impulse response by Schroeder integration.
    MeasureT60 { rir: PathBuf },
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum Algo {
    /// Sub-band factor deconvolution.
    Nmfd,
    /// Deconvolution with the low-rank speech model.
    NmfdNmf,
    /// Frame-stacked model with spectral-gain output.
    Stacked,
    /// Convolutive-basis speech model.
    Conv,
    /// NMF followed by deconvolution of the activation rows.
    ActDeconv,
}

impl Algo {
    pub fn name(&self) -> &'static str {
        match self {
            Algo::Nmfd => "nmfd",
            Algo::NmfdNmf => "nmfd-nmf",
            Algo::Stacked => "stacked",
            Algo::Conv => "conv",
            Algo::ActDeconv => "act-deconv",
        }
    }

    fn default_rank(&self) -> usize {
        match self {
            Algo::ActDeconv => 20,
            _ => 10,
        }
    }
}

/// Hyperparameter flags shared by `dereverb` and `experiment`; unset values
/// fall back to the config file, then to the experiment-protocol defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct TuningArgs {
    /// Basis count R (default 10; 20 for act-deconv).
    #[arg(long)]
    rank: Option<usize>,
    /// Smearing-filter length in frames.
    #[arg(long)]
    filter_len: Option<usize>,
    /// Frames per stack for the stacked model.
    #[arg(long)]
    t_stack: Option<usize>,
    /// Basis pattern length in frames for the convolutive model.
    #[arg(long)]
    t_base: Option<usize>,
    /// Sparsity weight; default is sum(Y) * 1e-8 computed per input.
    #[arg(long)]
    lambda: Option<f64>,
    /// Multiplicative-update iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Seed for randomized initializations.
    #[arg(long)]
    seed: Option<u64>,
    /// Analysis window length in milliseconds.
    #[arg(long)]
    window_ms: Option<f64>,
    /// Hop between frames in milliseconds.
    #[arg(long)]
    hop_ms: Option<f64>,
    /// Analysis window shape.
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    /// Key-value config file consulted for unset flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, ValueEnum)]
pub enum WindowArg {
    SqrtHann,
    Hann,
}

impl std::str::FromStr for WindowArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sqrt-hann" => Ok(WindowArg::SqrtHann),
            "hann" => Ok(WindowArg::Hann),
            other => Err(format!("unknown window {other:?}")),
        }
    }
}

/// Fully resolved run settings.
#[derive(Clone, Debug)]
pub struct Settings {
    pub rank: usize,
    pub filter_len: usize,
    pub t_stack: usize,
    pub t_base: usize,
    pub lambda: Option<f64>,
    pub iters: usize,
    pub seed: u64,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window: WindowArg,
}

impl TuningArgs {
    pub fn settings(&self, algo: Algo) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Ok(Settings {
            rank: resolve(self.rank, &file, "rank", algo.default_rank())?,
            filter_len: resolve(self.filter_len, &file, "filter-len", 11)?,
            t_stack: resolve(self.t_stack, &file, "t-stack", 3)?,
            t_base: resolve(self.t_base, &file, "t-base", 2)?,
            lambda: match self.lambda {
                Some(l) => Some(l),
                None => file.get::<f64>("lambda")?,
            },
            iters: resolve(self.iters, &file, "iters", 20)?,
            seed: resolve(self.seed, &file, "seed", 0)?,
            window_ms: resolve(self.window_ms, &file, "window-ms", 64.0)?,
            hop_ms: resolve(self.hop_ms, &file, "hop-ms", 16.0)?,
            window: resolve(self.window, &file, "window", WindowArg::SqrtHann)?,
        })
    }
}

impl Settings {
    pub fn stft_config(&self, sample_rate: u32) -> Result<StftConfig> {
        let to_samples = |ms: f64| (ms / 1000.0 * sample_rate as f64).round() as usize;
        let window_len = to_samples(self.window_ms);
        let kind = match self.window {
            WindowArg::SqrtHann => WindowKind::SqrtHann,
            WindowArg::Hann => WindowKind::Hann,
        };
        StftConfig::new(window_len, to_samples(self.hop_ms), window_len, sample_rate, kind)
            .map_err(Into::into)
    }
}

/// What an algorithm run produced, for reporting and CSV export.
pub struct AlgoOutput {
    pub clean: Array2<f64>,
    pub cost_trace: Vec<f64>,
    /// Smearing/deconvolution filter when the algorithm estimates one.
    pub filter: Option<Array2<f64>>,
    /// Named side products (bases, activations, gains).
    pub extras: Vec<(&'static str, Array2<f64>)>,
}

/// Runs one algorithm on a magnitude spectrogram.
pub fn run_algorithm(algo: Algo, mag: &Array2<f64>, s: &Settings) -> Result<AlgoOutput> {
    let speech_params = SpeechModelParams {
        rank: s.rank,
        filter_len: s.filter_len,
        lambda: s.lambda,
        iters: s.iters,
        seed: s.seed,
    };
    let out = match algo {
        Algo::Nmfd => {
            let r = nmfd(
                mag,
                &NmfdParams {
                    filter_len: s.filter_len,
                    lambda: s.lambda,
                    iters: s.iters,
                },
            )?;
            AlgoOutput {
                clean: r.clean,
                cost_trace: r.cost_trace,
                filter: Some(r.filter.coeffs),
                extras: vec![],
            }
        }
        Algo::NmfdNmf => {
            let r = nmfd_nmf(mag, &speech_params)?;
            AlgoOutput {
                clean: r.clean,
                cost_trace: r.cost_trace,
                filter: Some(r.filter.coeffs),
                extras: vec![("basis", r.basis), ("activations", r.activations)],
            }
        }
        Algo::Stacked => {
            let r = nmfd_stacked(mag, &speech_params, s.t_stack)?;
            AlgoOutput {
                clean: r.clean,
                cost_trace: r.cost_trace,
                filter: Some(r.filter.coeffs),
                extras: vec![
                    ("gain", r.gain),
                    ("basis", r.basis),
                    ("activations", r.activations),
                ],
            }
        }
        Algo::Conv => {
            let r = nmfd_convnmf(mag, &speech_params, s.t_base)?;
            let mut extras: Vec<(&'static str, Array2<f64>)> =
                vec![("activations", r.activations)];
            // One slice per pattern frame; exported with indexed names.
            for slice in r.basis.into_iter() {
                extras.push(("basis_slice", slice));
            }
            AlgoOutput {
                clean: r.clean,
                cost_trace: r.cost_trace,
                filter: Some(r.filter.coeffs),
                extras,
            }
        }
        Algo::ActDeconv => {
            let r = activation_deconvolve(
                mag,
                &ActivationDeconvParams {
                    rank: s.rank,
                    filter_len: s.filter_len,
                    lambda: s.lambda,
                    iters_nmf: s.iters,
                    iters_deconv: s.iters,
                    shared_filter: false,
                    seed: s.seed,
                },
            )?;
            AlgoOutput {
                clean: r.clean,
                cost_trace: r.cost_trace,
                filter: Some(r.filter.coeffs),
                extras: vec![
                    ("basis", r.basis),
                    ("activations_reverberant", r.reverberant_activations),
                    ("activations_deconvolved", r.activations),
                ],
            }
        }
    };
    Ok(out)
}

/// Full audio-to-audio enhancement used by `dereverb` and `experiment`.
pub fn enhance_file(
    input: &Waveform,
    algo: Algo,
    settings: &Settings,
) -> Result<(Waveform, AlgoOutput, MagnitudeSpectrogram)> {
    let cfg = settings.stft_config(input.sample_rate)?;
    let spec = stft(input, &cfg)?;
    let (mag, phase) = split(&spec);
    let out = run_algorithm(algo, &mag.mag, settings)?;
    let enhanced = MagnitudeSpectrogram {
        mag: out.clean.clone(),
        config: cfg.clone(),
    };
    let audio = istft(&recombine(&enhanced, &phase)?)?;
    Ok((audio, out, mag))
}

#[derive(Args)]
struct DereverbArgs {
    /// Reverberant input WAV.
    input: PathBuf,
    /// Enhancement algorithm.
    #[arg(long, value_enum)]
    algo: Algo,
    /// Output WAV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Print the per-iteration cost trace.
    #[arg(long)]
    verbose: bool,
    /// Directory for CSV dumps of spectrograms, filters and factors.
    #[arg(long)]
    export_dir: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
}

fn cmd_dereverb(args: DereverbArgs) -> Result<()> {
    let settings = args.tuning.settings(args.algo)?;
    let input = read_wav(&args.input)?;
    let (audio, out, input_mag) = enhance_file(&input, args.algo, &settings)?;
    write_wav(&args.output, &audio)?;
    if args.verbose {
        eprintln!(
            "{} seed={} iterations={}",
            args.algo.name(),
            settings.seed,
            settings.iters
        );
        for (i, c) in out.cost_trace.iter().enumerate() {
            eprintln!("iter {:>3}  cost {c:.6e}", i + 1);
        }
    }
    if let Some(dir) = &args.export_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating export dir {}", dir.display()))?;
        input_mag.write_csv(dir.join("input_magnitude.csv"))?;
        dereverb_core::export::write_matrix_csv(dir.join("enhanced_magnitude.csv"), &out.clean)?;
        dereverb_core::export::write_cost_trace_csv(dir.join("cost_trace.csv"), &out.cost_trace)?;
        if let Some(filter) = &out.filter {
            dereverb_core::export::write_matrix_csv(dir.join("filter.csv"), filter)?;
            dereverb_core::export::write_matrix_csv_db(dir.join("filter_db.csv"), filter, -120.0)?;
        }
        let mut slice_idx = 0usize;
        for (name, matrix) in &out.extras {
            let file = if *name == "basis_slice" {
                slice_idx += 1;
                format!("basis_slice_{}.csv", slice_idx - 1)
            } else {
                format!("{name}.csv")
            };
            dereverb_core::export::write_matrix_csv(dir.join(file), matrix)?;
        }
    }
    println!(
        "wrote {} ({} samples, algo {})",
        args.output.display(),
        audio.len(),
        args.algo.name()
    );
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    /// Clean reference WAV.
    clean: PathBuf,
    /// Reverberant (unprocessed) WAV.
    reverberant: PathBuf,
    /// Enhanced WAV to score.
    enhanced: PathBuf,
    /// Utterance id for the CSV row.
    #[arg(long, default_value = "utterance")]
    id: String,
    /// Condition label recorded in the report (for example 500ms).
    #[arg(long, default_value = "")]
    t60_label: String,
    /// Write the scores as a one-row CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    tuning: TuningArgs,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let settings = args.tuning.settings(Algo::Nmfd)?;
    let clean = read_wav(&args.clean)?;
    let reverberant = read_wav(&args.reverberant)?;
    let enhanced = read_wav(&args.enhanced)?;
    let cfg = settings.stft_config(clean.sample_rate)?;

    let trim_to = clean
        .len()
        .min(reverberant.len())
        .min(enhanced.len());
    let trim = |w: &Waveform| -> Result<Waveform> {
        Waveform::new(w.samples[..trim_to].to_vec(), w.sample_rate).map_err(Into::into)
    };
    let clean = trim(&clean)?;
    let cd_in = cepstral_distortion(&clean, &trim(&reverberant)?, &cfg)?;
    let cd_out = cepstral_distortion(&clean, &trim(&enhanced)?, &cfg)?;
    let improvement = cd_in - cd_out;

    println!("cd_in_db={cd_in:.6}");
    println!("cd_out_db={cd_out:.6}");
    println!("cd_improvement_db={improvement:.6}");
    if let Some(path) = &args.csv {
        let mut text = String::from("id,t60,cd_in,cd_out,cd_improvement\n");
        text.push_str(&format!(
            "{},{},{cd_in:.6},{cd_out:.6},{improvement:.6}\n",
            args.id, args.t60_label
        ));
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Args)]
struct SynthRirArgs {
    /// Target reverberation time in seconds.
    #[arg(long)]
    t60: f64,
    /// Output WAV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Length in seconds (default 1.25 * t60).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    /// Direct-path offset in samples.
    #[arg(long, default_value_t = 0)]
    direct_delay: usize,
}

fn cmd_synth_rir(args: SynthRirArgs) -> Result<()> {
    let mut spec = RirSpec::new(args.t60, args.sample_rate, args.seed);
    if let Some(d) = args.duration {
        spec.duration = d;
    }
    spec.direct_delay = args.direct_delay;
    let h = synth_rir(&spec)?;
    write_wav(&args.output, &h)?;
    match measure_t60(&h) {
        Ok(t) => println!("wrote {} (measured t60 {t:.3} s)", args.output.display()),
        Err(_) => println!("wrote {}", args.output.display()),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Dereverb(args) => cmd_dereverb(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => experiment::run(args),
        Command::SynthRir(args) => cmd_synth_rir(args),
        Command::MeasureT60 { rir } => {
            let h = read_wav(&rir)?;
            let t = measure_t60(&h)?;
            println!("{t:.4}");
            Ok(())
        }
    }
}
