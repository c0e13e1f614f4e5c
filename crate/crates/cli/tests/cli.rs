use std::path::Path;
use std::process::{Command, Output};

use bwe_core::audio::{load_audio, write_wav, AudioBuffer, WavEncoding};
use bwe_core::degrade::butterworth_condition;
use bwe_core::generator::{Generator, GeneratorConfig};
use bwe_core::trainer::save_generator;

fn bwe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwe")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn noise_wav(path: &Path, secs: f64, seed: u64) -> AudioBuffer {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let n = (secs * 22050.0) as usize;
    let x: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.4
        })
        .collect();
    let a = AudioBuffer::new(x, 22050).unwrap();
    write_wav(path, &a, WavEncoding::Float32).unwrap();
    load_audio(path, 22050).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = bwe(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_command_and_flag_fail() {
    assert_eq!(bwe(&["polish"]).status.code(), Some(2));
    assert_eq!(bwe(&["ltas", "--bogus"]).status.code(), Some(2));
}

#[test]
fn degrade_butterworth_matches_library_condition() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    let y = noise_wav(&src.join("a.wav"), 1.0, 1);
    let out = dir.path().join("lp");
    let o = bwe(&[
        "degrade", "--in", src.to_str().unwrap(), "--out", out.to_str().unwrap(), "--filter", "butterworth", "--fc", "3000",
        "--seed", "4", "--response-plot", dir.path().join("r.svg").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# effective config") && text.contains("seed = 4") && text.contains("filter = \"butterworth\""));
    let got = load_audio(out.join("a.wav"), 22050).unwrap();
    let want = butterworth_condition(&y, 3000.0).unwrap();
    for (a, b) in got.samples().iter().zip(want.samples()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(dir.path().join("r.svg").exists());
}

#[test]
fn evaluate_lsd_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.wav");
    noise_wav(&f, 1.0, 2);
    let report = dir.path().join("report.csv");
    let o = bwe(&[
        "evaluate", "--metric", "lsd", "--background", f.to_str().unwrap(), "--evaluation", f.to_str().unwrap(),
        "--report", report.to_str().unwrap(), "--condition", "same",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("lsd = 0\n"));
    let csv = std::fs::read_to_string(report).unwrap();
    assert_eq!(csv, "condition,metric,value,provider,seed\nsame,lsd,0.0,none,0\n");
}

#[test]
fn ltas_estimates_cutoff_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.wav");
    let y = noise_wav(&clean, 10.0, 3);
    let old = dir.path().join("old.wav");
    write_wav(&old, &butterworth_condition(&y, 3000.0).unwrap(), WavEncoding::Float32).unwrap();
    let (csv, svg) = (dir.path().join("d.csv"), dir.path().join("d.svg"));
    let o = bwe(&[
        "ltas", "--old", old.to_str().unwrap(), "--modern", clean.to_str().unwrap(), "--smoothing", "0.0208",
        "--csv", csv.to_str().unwrap(), "--plot", svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let fc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("estimated -3 dB cutoff: "))
        .and_then(|v| v.trim_end_matches(" Hz").parse().ok())
        .unwrap();
    assert!((fc - 3000.0).abs() < 150.0, "{fc}");
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("frequency_hz,level_db\n"));
    assert!(svg.exists());
}

#[test]
fn infer_with_zero_head_checkpoint_outputs_silence() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("g.ckpt");
    let cfg = GeneratorConfig {
        head_init_gain: 0.0,
        ..GeneratorConfig::tiny()
    };
    save_generator(&Generator::new(cfg, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1)).unwrap(), &ck).unwrap();
    let input = dir.path().join("in.wav");
    let x = noise_wav(&input, 2.0, 5);
    let out = dir.path().join("out.wav");
    let o = bwe(&[
        "infer", "--checkpoint", ck.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--spectrogram", dir.path().join("s.svg").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("chunk_seconds = 5.0"));
    let y = load_audio(&out, 22050).unwrap();
    assert_eq!(y.len(), x.len());
    assert!(y.samples().iter().all(|&v| v == 0.0));

    let bad = bwe(&[
        "infer", "--checkpoint", ck.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--denoiser-cmd", "exit 7",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("denoiser"));
}

#[test]
fn train_tiny_run_writes_checkpoint_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    let out = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!(
            "output_dir = {:?}\nbatch_size = 1\nsegment_seconds = 0.25\nstage1_steps = 2\nstage2_steps = 3\ncheckpoint_every = 1\n\
             stft_resolutions = [256, 512]\ngen_depth = 1\ngen_base_channels = 4\ngen_dense_block_layers = 1\n\
             gen_growth_rate = 2\ngen_freq_embedding_dims = 2\ndisc_layers = 4\ndisc_base_channels = 2\n\
             disc_max_channels = 8\ndisc_group_size = 2\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = bwe(&["train", "--config", cfg.to_str().unwrap(), "--synthetic-clips", "2", "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("seed = 9"));
    for f in ["final.ckpt", "latest.ckpt", "trace.csv", "trace.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let bad = std::fs::write(&cfg, "stage1_stepz = 3\n");
    assert!(bad.is_ok());
    assert_eq!(bwe(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}
