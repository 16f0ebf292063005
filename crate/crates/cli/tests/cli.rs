//! End-to-end tests of the `dereverb` binary: enhancement runs, metric
//! evaluation, the experiment harness, and reproducibility of CSV outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

use dereverb_core::{convolve, speech_like, synth_rir, write_wav, RirSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dereverb"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("dereverb-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Clean utterance, reverberant version, and the RIR, written as WAVs.
fn fixture(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let clean = speech_like(seed, 16_000, 1.5);
    let rir = synth_rir(&RirSpec::new(0.3, 16_000, 5)).unwrap();
    let reverb = convolve(&clean, &rir).unwrap();
    let clean_path = dir.join("clean.wav");
    let reverb_path = dir.join("reverb.wav");
    write_wav(&clean_path, &clean).unwrap();
    write_wav(&reverb_path, &reverb).unwrap();
    (clean_path, reverb_path)
}

#[test]
fn dereverb_writes_output() {
    let dir = workdir("dereverb-basic");
    let (_, reverb) = fixture(&dir, 1);
    let out = dir.join("enhanced.wav");
    let status = bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "nmfd", "--iters", "3", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.exists());
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let dir = workdir("dereverb-badalgo");
    let (_, reverb) = fixture(&dir, 2);
    let output = bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "welp", "-o"])
        .arg(dir.join("x.wav"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("welp"), "stderr: {stderr}");
}

#[test]
fn conv_with_unit_basis_length_matches_plain_speech_model() {
    let dir = workdir("dereverb-reduction");
    let (_, reverb) = fixture(&dir, 3);
    let out_conv = dir.join("conv.wav");
    let out_plain = dir.join("plain.wav");
    for (algo, extra, out) in [
        ("conv", Some(["--t-base", "1"]), &out_conv),
        ("nmfd-nmf", None, &out_plain),
    ] {
        let mut cmd = bin();
        cmd.args(["dereverb"])
            .arg(&reverb)
            .args(["--algo", algo, "--iters", "4", "--seed", "7", "-o"])
            .arg(out);
        if let Some(extra) = extra {
            cmd.args(extra);
        }
        assert!(cmd.status().unwrap().success());
    }
    let a = std::fs::read(&out_conv).unwrap();
    let b = std::fs::read(&out_plain).unwrap();
    assert_eq!(a, b, "degenerate convolutive run must match bit for bit");
}

#[test]
fn evaluate_reports_identity_and_full_improvement() {
    let dir = workdir("evaluate");
    let (clean, reverb) = fixture(&dir, 4);

    // Enhanced = reverberant: improvement must be zero.
    let csv = dir.join("same.csv");
    let output = bin()
        .args(["evaluate"])
        .arg(&clean)
        .arg(&reverb)
        .arg(&reverb)
        .args(["--id", "utt0", "--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    let improvement: f64 = fields[4].parse().unwrap();
    assert!(improvement.abs() < 1e-9, "row: {row}");

    // Enhanced = clean: improvement equals the input distortion.
    let csv = dir.join("perfect.csv");
    assert!(bin()
        .args(["evaluate"])
        .arg(&clean)
        .arg(&reverb)
        .arg(&clean)
        .args(["--csv"])
        .arg(&csv)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let cd_in: f64 = fields[2].parse().unwrap();
    let cd_out: f64 = fields[3].parse().unwrap();
    let improvement: f64 = fields[4].parse().unwrap();
    assert!(cd_in > 0.5, "reverberation should distort: {cd_in}");
    assert!(cd_out.abs() < 1e-9);
    assert!((improvement - cd_in).abs() < 1e-9);

    // Cross-check the reported value against the library metric.
    let clean_w = dereverb_core::read_wav(&clean).unwrap();
    let reverb_w = dereverb_core::read_wav(&reverb).unwrap();
    let n = clean_w.len().min(reverb_w.len());
    let trim = |w: &dereverb_core::Waveform| {
        dereverb_core::Waveform::new(w.samples[..n].to_vec(), w.sample_rate).unwrap()
    };
    let expect = dereverb_core::cepstral_distortion(
        &trim(&clean_w),
        &trim(&reverb_w),
        &dereverb_core::StftConfig::default_16k(),
    )
    .unwrap();
    assert!((cd_in - expect).abs() < 1e-6, "{cd_in} vs {expect}");
}

#[test]
fn experiment_produces_expected_row_count_and_is_reproducible() {
    let dir = workdir("experiment");
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    write_wav(corpus.join("utt0.wav"), &speech_like(9, 16_000, 1.2)).unwrap();

    let run = |out: &Path, summary: &Path| {
        let status = bin()
            .args(["experiment", "--corpus"])
            .arg(&corpus)
            .args([
                "--t60s",
                "0.25",
                "--algos",
                "nmfd",
                "--sweep-filter-len",
                "4,8",
                "--iters",
                "2",
                "--seed",
                "42",
                "-o",
            ])
            .arg(out)
            .arg("--summary")
            .arg(summary)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out1 = dir.join("r1.csv");
    let sum1 = dir.join("s1.csv");
    run(&out1, &sum1);
    let text = std::fs::read_to_string(&out1).unwrap();
    let data_rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("id,"))
        .collect();
    // 1 utterance x 1 condition x 1 algorithm x 2 sweep points.
    assert_eq!(data_rows.len(), 2, "rows: {data_rows:?}");
    assert!(data_rows.iter().all(|r| r.starts_with("utt0,nmfd,250ms,filter_len,")));

    // Same seed, byte-identical outputs.
    let out2 = dir.join("r2.csv");
    let sum2 = dir.join("s2.csv");
    run(&out2, &sum2);
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap()
    );

    // The pivot is recomputable from the long format and lays out one
    // column per condition.
    let summary = std::fs::read_to_string(&sum1).unwrap();
    assert!(summary.lines().any(|l| l == "technique,250ms"), "{summary}");
    let mean_from_long: f64 = data_rows
        .iter()
        .map(|r| r.split(',').nth(8).unwrap().parse::<f64>().unwrap())
        .sum::<f64>()
        / data_rows.len() as f64;
    let pivot_row = summary
        .lines()
        .find(|l| l.starts_with("nmfd,"))
        .expect("pivot row");
    let pivot_value: f64 = pivot_row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((pivot_value - mean_from_long).abs() < 1e-6);
}

#[test]
fn experiment_skips_failing_items_and_reports_them() {
    let dir = workdir("experiment-failures");
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    write_wav(corpus.join("good.wav"), &speech_like(9, 16_000, 1.2)).unwrap();
    // Shorter than one analysis window: the item must fail and be skipped.
    write_wav(
        corpus.join("tiny.wav"),
        &dereverb_core::Waveform::new(vec![0.1; 200], 16_000).unwrap(),
    )
    .unwrap();

    let out = dir.join("results.csv");
    let output = bin()
        .args(["experiment", "--corpus"])
        .arg(&corpus)
        .args(["--t60s", "0.25", "--algos", "nmfd", "--iters", "2", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("skipping"), "stderr: {stderr}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# rows=1 failures=1"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("good,")));
    assert!(!text.lines().any(|l| l.starts_with("tiny,")));
}

#[test]
fn experiment_corpus_from_environment_variable() {
    let dir = workdir("experiment-env");
    let corpus = dir.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    write_wav(corpus.join("utt.wav"), &speech_like(5, 16_000, 1.2)).unwrap();
    let out = dir.join("results.csv");
    assert!(bin()
        .env("DEREVERB_CORPUS", &corpus)
        .args(["experiment", "--t60s", "0.25", "--algos", "nmfd", "--iters", "2", "-o"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().any(|l| l.starts_with("utt,")), "{text}");
}

#[test]
fn experiment_with_synthetic_corpus_and_pesq_merge() {
    let dir = workdir("experiment-synth");
    let pesq = dir.join("pesq.csv");
    std::fs::write(&pesq, "id,pesq_in,pesq_out\nsynth-000,1.5,2.0\n").unwrap();
    let out = dir.join("results.csv");
    let status = bin()
        .args([
            "experiment",
            "--synth-utterances",
            "2",
            "--utt-duration",
            "1.2",
            "--t60s",
            "0.25",
            "--algos",
            "nmfd",
            "--iters",
            "2",
            "-o",
        ])
        .arg(&out)
        .arg("--pesq")
        .arg(&pesq)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let with_pesq: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("synth-000"))
        .collect();
    assert_eq!(with_pesq.len(), 1);
    assert!(with_pesq[0].ends_with(",1.500000,2.000000"), "{}", with_pesq[0]);
    assert!(text.lines().any(|l| l.starts_with("synth-001") && l.ends_with(",,")));
}

#[test]
fn synth_rir_and_measure_t60_round_trip() {
    let dir = workdir("rir");
    let rir = dir.join("rir.wav");
    assert!(bin()
        .args(["synth-rir", "--t60", "0.5", "--seed", "3", "-o"])
        .arg(&rir)
        .status()
        .unwrap()
        .success());
    let output = bin().arg("measure-t60").arg(&rir).output().unwrap();
    assert!(output.status.success());
    let measured: f64 = String::from_utf8_lossy(&output.stdout)
        .trim()
        .parse()
        .unwrap();
    assert!((measured - 0.5).abs() <= 0.05, "measured {measured}");
}

#[test]
fn export_dir_contains_factor_csvs() {
    let dir = workdir("export");
    let (_, reverb) = fixture(&dir, 6);
    let export = dir.join("dump");
    assert!(bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "act-deconv", "--iters", "2", "--export-dir"])
        .arg(&export)
        .args(["-o"])
        .arg(dir.join("out.wav"))
        .status()
        .unwrap()
        .success());
    for file in [
        "input_magnitude.csv",
        "enhanced_magnitude.csv",
        "cost_trace.csv",
        "filter.csv",
        "filter_db.csv",
        "activations_reverberant.csv",
        "activations_deconvolved.csv",
    ] {
        assert!(export.join(file).exists(), "missing {file}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = workdir("config");
    let (_, reverb) = fixture(&dir, 7);
    let conf = dir.join("run.conf");
    std::fs::write(&conf, "iters = 2\nseed = 11\n").unwrap();

    // Config-driven run matches the equivalent flag-driven run.
    let out_conf = dir.join("via-config.wav");
    let out_flags = dir.join("via-flags.wav");
    assert!(bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "nmfd-nmf", "--config"])
        .arg(&conf)
        .arg("-o")
        .arg(&out_conf)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "nmfd-nmf", "--iters", "2", "--seed", "11", "-o"])
        .arg(&out_flags)
        .status()
        .unwrap()
        .success());
    assert_eq!(
        std::fs::read(&out_conf).unwrap(),
        std::fs::read(&out_flags).unwrap()
    );

    // A flag wins over the config value.
    let out_override = dir.join("override.wav");
    assert!(bin()
        .args(["dereverb"])
        .arg(&reverb)
        .args(["--algo", "nmfd-nmf", "--seed", "12", "--config"])
        .arg(&conf)
        .arg("-o")
        .arg(&out_override)
        .status()
        .unwrap()
        .success());
    assert_ne!(
        std::fs::read(&out_conf).unwrap(),
        std::fs::read(&out_override).unwrap()
    );
}
