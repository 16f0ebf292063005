//! Batch experiment harness: utterances x impulse responses x algorithms
//! x sweep points, scored by cepstral distortion and written as a
//! long-format CSV plus an algorithm-by-T60 pivot summary.
//!
//! Items run in parallel with per-item seeds derived from the base seed and
//! the item key, so reruns are byte-identical regardless of scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use dereverb_core::{
    cepstral_distortion, convolve, import_pesq, read_wav, speech_like, synth_rir, RirSpec,
    Waveform,
};

use crate::{enhance_file, Algo, Settings, TuningArgs};

/// Environment variable consulted when `--corpus` is not given.
pub const CORPUS_ENV: &str = "DEREVERB_CORPUS";

#[derive(Args)]
pub struct ExperimentArgs {
    /// Directory of 16 kHz clean WAV utterances; falls back to the
    /// DEREVERB_CORPUS environment variable, then to synthetic utterances.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of generated utterances when no corpus directory is used.
    #[arg(long, default_value_t = 10)]
    synth_utterances: usize,
    /// Duration of generated utterances in seconds.
    #[arg(long, default_value_t = 2.0)]
    utt_duration: f64,
    /// Reverberation times for synthetic impulse responses, in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.7])]
    t60s: Vec<f64>,
    /// Directory of recorded impulse-response WAVs used instead of
    /// synthetic ones; each file becomes one condition.
    #[arg(long)]
    rir_dir: Option<PathBuf>,
    /// Algorithms to run.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algo::Nmfd])]
    algos: Vec<Algo>,
    /// Sweep the smearing-filter length over these frame counts.
    #[arg(long, value_delimiter = ',')]
    sweep_filter_len: Option<Vec<usize>>,
    /// Sweep the basis count.
    #[arg(long, value_delimiter = ',')]
    sweep_rank: Option<Vec<usize>>,
    /// Sweep the convolutive basis length.
    #[arg(long, value_delimiter = ',')]
    sweep_t_base: Option<Vec<usize>>,
    /// Sweep the stack size.
    #[arg(long, value_delimiter = ',')]
    sweep_t_stack: Option<Vec<usize>>,
    /// Long-format results CSV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Pivot summary CSV path (algorithm x T60 mean improvement).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Externally computed PESQ scores to merge (CSV: id,pesq_in,pesq_out).
    #[arg(long)]
    pesq: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    tuning: TuningArgs,
}

struct Item {
    utt_idx: usize,
    id: String,
    algo: Algo,
    t60_label: String,
    sweep_param: &'static str,
    sweep_value: String,
    settings: Settings,
}

struct Row {
    id: String,
    algo: &'static str,
    t60_label: String,
    sweep_param: &'static str,
    sweep_value: String,
    seed: u64,
    cd_in: f64,
    cd_out: f64,
}

pub fn run(args: ExperimentArgs) -> Result<()> {
    let base = args.tuning.settings(Algo::Nmfd)?;

    let utterances = load_corpus(&args, &base)?;
    if utterances.is_empty() {
        bail!("corpus is empty");
    }
    let rirs = load_rirs(&args, &base)?;
    if rirs.is_empty() {
        bail!("no impulse responses: give --t60s or --rir-dir");
    }

    let sweep = sweep_points(&args)?;
    let items = build_items(&args, &base, &utterances, &rirs, &sweep);
    eprintln!(
        "experiment: {} utterances x {} conditions x {} algorithms x {} sweep points = {} items",
        utterances.len(),
        rirs.len(),
        args.algos.len(),
        sweep.len(),
        items.len()
    );

    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }

    let results: Vec<(String, Result<Row>)> = items
        .par_iter()
        .map(|item| {
            let key = format!(
                "{} algo={} t60={} {}={}",
                item.id, item.algo.name(), item.t60_label, item.sweep_param, item.sweep_value
            );
            let utterance = &utterances[item.utt_idx];
            let rir = &rirs
                .iter()
                .find(|(label, _)| *label == item.t60_label)
                .expect("label from the same table")
                .1;
            (key, run_item(item, utterance, rir))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = 0usize;
    for (key, result) in results {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                failures += 1;
                eprintln!("item failed, skipping: {key}: {e:#}");
            }
        }
    }
    if rows.is_empty() {
        bail!("every item failed ({failures} of {failures})");
    }
    rows.sort_by(|a, b| {
        (a.algo, &a.t60_label, a.sweep_param, &a.sweep_value, &a.id).cmp(&(
            b.algo,
            &b.t60_label,
            b.sweep_param,
            &b.sweep_value,
            &b.id,
        ))
    });

    let pesq = match &args.pesq {
        Some(path) => import_pesq(path)?,
        None => BTreeMap::new(),
    };

    write_long_csv(&args.output, &rows, &pesq, base.seed, &args, failures)?;
    eprintln!(
        "experiment: {} rows written to {} ({failures} failures)",
        rows.len(),
        args.output.display()
    );
    if let Some(summary) = &args.summary {
        write_summary_csv(summary, &rows, &args.output)?;
    }
    Ok(())
}

fn load_corpus(args: &ExperimentArgs, base: &Settings) -> Result<Vec<(String, Waveform)>> {
    let dir = args
        .corpus
        .clone()
        .or_else(|| std::env::var_os(CORPUS_ENV).map(PathBuf::from));
    match dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .with_context(|| format!("reading corpus dir {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("corpus dir {} contains no .wav files", dir.display());
            }
            files
                .into_iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "utterance".into());
                    Ok((id, read_wav(&p)?))
                })
                .collect()
        }
        None => Ok((0..args.synth_utterances)
            .map(|i| {
                (
                    format!("synth-{i:03}"),
                    speech_like(base.seed.wrapping_add(10 + i as u64), 16_000, args.utt_duration),
                )
            })
            .collect()),
    }
}

fn load_rirs(args: &ExperimentArgs, base: &Settings) -> Result<Vec<(String, Waveform)>> {
    match &args.rir_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading rir dir {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            files
                .into_iter()
                .map(|p| {
                    let label = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "rir".into());
                    Ok((label, read_wav(&p)?))
                })
                .collect()
        }
        None => args
            .t60s
            .iter()
            .map(|&t60| {
                let label = format!("{}ms", (t60 * 1000.0).round() as u64);
                let seed = item_seed(base.seed, &["rir", &label]);
                Ok((label, synth_rir(&RirSpec::new(t60, 16_000, seed))?))
            })
            .collect(),
    }
}

fn sweep_points(args: &ExperimentArgs) -> Result<Vec<(&'static str, String)>> {
    let mut sweeps: Vec<(&'static str, Vec<String>)> = Vec::new();
    if let Some(v) = &args.sweep_filter_len {
        sweeps.push(("filter_len", v.iter().map(|x| x.to_string()).collect()));
    }
    if let Some(v) = &args.sweep_rank {
        sweeps.push(("rank", v.iter().map(|x| x.to_string()).collect()));
    }
    if let Some(v) = &args.sweep_t_base {
        sweeps.push(("t_base", v.iter().map(|x| x.to_string()).collect()));
    }
    if let Some(v) = &args.sweep_t_stack {
        sweeps.push(("t_stack", v.iter().map(|x| x.to_string()).collect()));
    }
    match sweeps.len() {
        0 => Ok(vec![("none", String::new())]),
        1 => {
            let (param, values) = sweeps.remove(0);
            Ok(values.into_iter().map(|v| (param, v)).collect())
        }
        _ => bail!("give at most one sweep"),
    }
}

fn build_items(
    args: &ExperimentArgs,
    base: &Settings,
    utterances: &[(String, Waveform)],
    rirs: &[(String, Waveform)],
    sweep: &[(&'static str, String)],
) -> Vec<Item> {
    let mut items = Vec::new();
    for (utt_idx, (id, _)) in utterances.iter().enumerate() {
        for (label, _) in rirs {
            for &algo in &args.algos {
                for (param, value) in sweep {
                    let mut settings = base.clone();
                    match *param {
                        "filter_len" => settings.filter_len = value.parse().unwrap(),
                        "rank" => settings.rank = value.parse().unwrap(),
                        "t_base" => settings.t_base = value.parse().unwrap(),
                        "t_stack" => settings.t_stack = value.parse().unwrap(),
                        _ => {}
                    }
                    settings.seed = item_seed(
                        base.seed,
                        &[id, algo.name(), label, param, value],
                    );
                    items.push(Item {
                        utt_idx,
                        id: id.clone(),
                        algo,
                        t60_label: label.clone(),
                        sweep_param: param,
                        sweep_value: value.clone(),
                        settings,
                    });
                }
            }
        }
    }
    items
}

fn run_item(item: &Item, utterance: &(String, Waveform), rir: &Waveform) -> Result<Row> {
    let clean = &utterance.1;
    let reverb = convolve(clean, rir)?;
    let (enhanced, _, _) = enhance_file(&reverb, item.algo, &item.settings)?;
    let cfg = item.settings.stft_config(clean.sample_rate)?;

    let n = enhanced.len().min(clean.len());
    let trim = |w: &Waveform| Waveform::new(w.samples[..n].to_vec(), w.sample_rate);
    let clean_t = trim(clean)?;
    let cd_in = cepstral_distortion(&clean_t, &trim(&reverb)?, &cfg)?;
    let cd_out = cepstral_distortion(&clean_t, &trim(&enhanced)?, &cfg)?;
    Ok(Row {
        id: utterance.0.clone(),
        algo: item.algo.name(),
        t60_label: item.t60_label.clone(),
        sweep_param: item.sweep_param,
        sweep_value: item.sweep_value.clone(),
        seed: item.settings.seed,
        cd_in,
        cd_out,
    })
}

/// Stable FNV-1a over the base seed and the item key parts.
fn item_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in base.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for part in parts {
        for byte in part.as_bytes() {
            h ^= *byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn write_long_csv(
    path: &Path,
    rows: &[Row],
    pesq: &BTreeMap<String, (Option<f64>, Option<f64>)>,
    base_seed: u64,
    args: &ExperimentArgs,
    failures: usize,
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("# base_seed={base_seed}\n"));
    let corpus = match &args.corpus {
        Some(dir) => dir.display().to_string(),
        None => match std::env::var(CORPUS_ENV) {
            Ok(dir) => dir,
            Err(_) => format!("synthetic:{}", args.synth_utterances),
        },
    };
    text.push_str(&format!("# corpus={corpus}\n"));
    text.push_str(&format!("# rows={} failures={failures}\n", rows.len()));
    text.push_str("id,algorithm,t60,sweep_param,sweep_value,seed,cd_in,cd_out,cd_improvement,pesq_in,pesq_out\n");
    for row in rows {
        let (pesq_in, pesq_out) = pesq.get(&row.id).copied().unwrap_or((None, None));
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
            row.id,
            row.algo,
            row.t60_label,
            row.sweep_param,
            row.sweep_value,
            row.seed,
            row.cd_in,
            row.cd_out,
            row.cd_in - row.cd_out,
            fmt_opt(pesq_in),
            fmt_opt(pesq_out),
        ));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Pivot: one line per algorithm, one column per condition, mean
/// improvement in each cell. Recomputable from the long CSV.
fn write_summary_csv(path: &Path, rows: &[Row], source: &Path) -> Result<()> {
    let mut labels: Vec<&String> = rows.iter().map(|r| &r.t60_label).collect();
    labels.sort();
    labels.dedup();
    let mut algos: Vec<&'static str> = rows.iter().map(|r| r.algo).collect();
    algos.sort();
    algos.dedup();

    let mut text = String::new();
    text.push_str(&format!("# derived_from={}\n", source.display()));
    text.push_str("technique");
    for label in &labels {
        text.push_str(&format!(",{label}"));
    }
    text.push('\n');
    for algo in algos {
        text.push_str(algo);
        for label in &labels {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.algo == algo && &r.t60_label == *label)
                .map(|r| r.cd_in - r.cd_out)
                .collect();
            if values.is_empty() {
                text.push(',');
            } else {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                text.push_str(&format!(",{mean:.6}"));
            }
        }
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
