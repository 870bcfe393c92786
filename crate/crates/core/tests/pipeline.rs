use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqapc::analysis::write_code_file;
use vqapc::cli::{self, PipelineConfig};
use vqapc::features::io::{write_label_file, write_wav, Manifest, ManifestRecord, MANIFEST_NAME};
use vqapc::features::Utterance;
use vqapc::probing::ProbeTask;
use vqapc::synthetic::SynthConfig;
use vqapc::Error;

fn small() -> PipelineConfig {
    let mut cfg = PipelineConfig::desk();
    cfg.synth = SynthConfig {
        num_speakers: 3,
        utterances_per_speaker: 6,
        frames_per_utterance: 30,
        ..SynthConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.probe.epochs = 5;
    cfg
}

fn tone(id: &str, speaker: &str, hz: f64) -> Utterance {
    let samples = (0..8000)
        .map(|n| (8000.0 * (2.0 * std::f64::consts::PI * hz * n as f64 / 16_000.0).sin()) as i16)
        .collect();
    Utterance {
        id: id.into(),
        speaker_id: speaker.into(),
        sample_rate: 16_000,
        samples,
    }
}

fn wav_manifest(dir: &Path, ids: &[&str]) -> std::path::PathBuf {
    let mut records = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let name = format!("{id}.wav");
        write_wav(&dir.join(&name), &tone(id, "s0", 300.0 + 200.0 * i as f64)).unwrap();
        records.push(ManifestRecord {
            id: id.to_string(),
            speaker_id: "s0".into(),
            wav_path: Some(name),
            feature_path: None,
            phone_alignment_path: None,
        });
    }
    let path = dir.join(MANIFEST_NAME);
    Manifest { root: dir.into(), records }.save(&path).unwrap();
    path
}

#[test]
fn featurize_three_wavs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = wav_manifest(dir.path(), &["a", "b", "c"]);
    let out = dir.path().join("out");
    let m = cli::cmd_featurize(&PipelineConfig::default(), &manifest, &out).unwrap();
    assert_eq!(m.records.len(), 3);
    for seq in Manifest::load(&out).unwrap().load_features().unwrap() {
        assert_eq!(seq.dim(), 80);
        assert!(seq.num_frames() > 40);
    }
    assert!(out.join("config.json").exists());
}

#[test]
fn missing_wav_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = wav_manifest(dir.path(), &["a", "b"]);
    fs::remove_file(dir.path().join("b.wav")).unwrap();
    let out = dir.path().join("out");
    let err = cli::cmd_featurize(&PipelineConfig::default(), &manifest, &out).unwrap_err();
    assert!(err.to_string().contains("b.wav"), "{err}");
    let code = cli::run(["vqapc", "featurize", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ne!(code, 0);
}

#[test]
fn invalid_vq_layer_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cli::cmd_synth(&cfg, dir.path()).unwrap();
    cfg.model.vq_layers = vec![4];
    let err = cli::cmd_train(&cfg, dir.path(), &dir.path().join("run")).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let code = cli::run([
        "vqapc",
        "--vq-layers",
        "7",
        "train",
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("run2").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = cli::cmd_sweep(&small(), dir.path(), &[], &dir.path().join("s")).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn train_extract_probe_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let data = dir.path().join("data");
    cli::cmd_synth(&cfg, &data).unwrap();
    let trained = cli::cmd_train(&cfg, &data, &dir.path().join("train")).unwrap();
    assert_eq!(trained.loss_history.len(), 2);
    let loss_csv = fs::read_to_string(dir.path().join("train/loss.csv")).unwrap();
    assert_eq!(loss_csv.lines().count(), 3);

    let repr = dir.path().join("repr");
    let meta = cli::cmd_extract(&cfg, &trained.final_checkpoint, &data, &repr).unwrap();
    assert_eq!(meta.codebook_size, Some(32));
    let codes = fs::read_dir(&repr)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "codes"))
        .count();
    assert_eq!(codes, 18);

    let res = cli::cmd_probe(&cfg, &repr, None, ProbeTask::Phone, &dir.path().join("probe")).unwrap();
    assert_eq!(res.errors.len(), 5);
    let report = fs::read_to_string(&res.report).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "model_tag,layer,quantized,task,seed,error_rate");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].contains("mean"));
}

#[test]
fn probe_ignores_utterance_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let data = dir.path().join("data");
    cli::cmd_synth(&cfg, &data).unwrap();
    let first = cli::cmd_probe(&cfg, &data, None, ProbeTask::Phone, &dir.path().join("p1")).unwrap();

    let mut m = Manifest::load(&data).unwrap();
    m.records.reverse();
    m.records.swap(1, 4);
    m.save(&data.join(MANIFEST_NAME)).unwrap();
    let second = cli::cmd_probe(&cfg, &data, None, ProbeTask::Phone, &dir.path().join("p2")).unwrap();
    assert_eq!(first.errors, second.errors);
}

/// A codes directory whose codes are `code_of(phone, rng)` frame by frame.
fn codes_dir(dir: &Path, mut code_of: impl FnMut(usize, &mut ChaCha8Rng) -> usize) {
    let corpus = vqapc::synthetic::generate_corpus(&SynthConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut records = Vec::new();
    for (seq, phones) in corpus.sequences.iter().zip(&corpus.alignments) {
        let id = &seq.utterance_id;
        let codes: Vec<usize> = phones.iter().map(|&p| code_of(p, &mut rng)).collect();
        write_code_file(&dir.join(format!("{id}.codes")), &codes).unwrap();
        write_label_file(&dir.join(format!("{id}.phn")), phones).unwrap();
        records.push(ManifestRecord {
            id: id.clone(),
            speaker_id: seq.speaker_id.clone(),
            wav_path: None,
            feature_path: None,
            phone_alignment_path: Some(format!("{id}.phn")),
        });
    }
    Manifest { root: dir.into(), records }.save(&dir.join(MANIFEST_NAME)).unwrap();
}

#[test]
fn analysis_nmi_extremes() {
    let cfg = small();
    let same = tempfile::tempdir().unwrap();
    codes_dir(same.path(), |p, _| p);
    let stats = cli::cmd_analyze(&cfg, same.path(), None, &same.path().join("an")).unwrap();
    assert!((stats.nmi - 1.0).abs() < 1e-9, "{}", stats.nmi);
    let csv = fs::read_to_string(same.path().join("an/heatmap.csv")).unwrap();
    assert!(csv.starts_with("phone,"));
    assert!(same.path().join("an/heatmap.ppm").exists());

    let random = tempfile::tempdir().unwrap();
    codes_dir(random.path(), |_, rng| rng.random_range(0..8));
    let stats = cli::cmd_analyze(&cfg, random.path(), None, &random.path().join("an")).unwrap();
    assert!(stats.nmi < 0.05, "{}", stats.nmi);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli::run(["vqapc", "no-such-command"]), 2);
    assert_eq!(cli::run(["vqapc", "--help"]), 0);
}
