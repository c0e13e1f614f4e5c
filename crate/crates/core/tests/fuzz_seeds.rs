use std::fs;
use std::path::PathBuf;

use bwe_core::audio::decode_wav_bytes;
use bwe_core::checkpoint::Checkpoint;
use bwe_core::config::TrainConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn wav_seeds_decode() {
    for (name, bytes) in seeds("wav_decode") {
        let a = decode_wav_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!a.is_empty() && a.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0), "{name}");
    }
    assert!(decode_wav_bytes(b"RIFF\x04\x00\x00\x00WAVE").is_err());
}

#[test]
fn config_seeds_parse_or_fail_cleanly() {
    for (name, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        match TrainConfig::from_toml_str(&text) {
            Ok(cfg) => assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg, "{name}"),
            Err(e) => assert!(name.starts_with("unknown") || name.starts_with("invalid"), "{name}: {e}"),
        }
    }
}

#[test]
fn checkpoint_seeds_decode_and_reencode() {
    for (name, bytes) in seeds("checkpoint_decode") {
        match Checkpoint::decode(&bytes) {
            Ok(ck) => assert_eq!(ck.encode(), bytes, "{name}"),
            Err(_) => assert!(name.starts_with("bad"), "{name}"),
        }
    }
}
