//! Pipeline stages over shared on-disk formats, and the `vqapc` command line.
//!
//! Every stage reads the previous stage's files, writes into its own output
//! directory and leaves a `config.json` there holding the exact configuration
//! it ran with.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{accumulate_cooccurrence, code_stats, conditional_prob, emit_heatmap, spectral_cocluster, write_code_file, CodeStats};
use crate::error::{Error, Result};
use crate::features::io::{ensure_dir, read_json, read_wav, write_feature_file, write_json, write_label_file, Manifest, ManifestRecord, MANIFEST_NAME, NUM_PHONES};
use crate::features::{log_mel, normalize_per_speaker, MelConfig};
use crate::model::{apc_forward, load_checkpoint, save_checkpoint, ModelConfig, Mode};
use crate::probing::{build_phone_dataset, build_speaker_dataset, probe_report_csv, run_seeds, split_by_speaker, ProbeConfig, ProbeDataset, ProbeTask, SpeakerIndex, Split, UtteranceRepr};
use crate::synthetic::{generate_corpus, write_corpus, SynthConfig};
use crate::training::{train_with, TrainConfig};

pub const CONFIG_NAME: &str = "config.json";
pub const EXTRACT_META_NAME: &str = "extract.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Independently seeded probes averaged per report.
    pub num_seeds: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            epochs: p.epochs,
            seed: p.seed,
            num_seeds: 5,
        }
    }
}

impl ProbeSettings {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractSettings {
    pub layer: usize,
    pub quantized: bool,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        Self { layer: 3, quantized: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub clusters: usize,
    pub saturation: f64,
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            clusters: 15,
            saturation: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub codebook_sizes: Vec<usize>,
}

/// Every stage's settings in one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mel: MelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub extract: ExtractSettings,
    pub probe: ProbeSettings,
    pub analysis: AnalysisSettings,
    pub sweep: SweepSettings,
}

impl PipelineConfig {
    /// Small settings matched to the default synthetic corpus; a full run
    /// takes seconds on one core.
    pub fn desk() -> Self {
        let synth = SynthConfig::default();
        Self {
            model: ModelConfig {
                input_dim: synth.feature_dim,
                num_layers: 3,
                hidden_dim: 32,
                vq_layers: vec![3],
                codebook_size: 32,
                code_dim: 32,
                shift: 5,
                tau: 0.1,
            },
            train: TrainConfig {
                epochs: 20,
                batch_size: 4,
                learning_rate: 3e-3,
                seed: 0,
                checkpoint_every: 10,
                max_frames_per_batch: None,
            },
            synth,
            analysis: AnalysisSettings {
                clusters: 4,
                ..AnalysisSettings::default()
            },
            sweep: SweepSettings {
                codebook_sizes: vec![8, 32, 128],
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Command-line overrides applied on top of `--config`.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Codebook size V
    #[arg(long, global = true)]
    pub codebook_size: Option<usize>,
    /// Comma-separated 1-based VQ layers, or `none`
    #[arg(long, global = true)]
    pub vq_layers: Option<String>,
    /// Layer to extract representations from
    #[arg(long, global = true)]
    pub layer: Option<usize>,
    /// Extract quantized codes instead of hidden vectors (`--quantized=false` to undo)
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub quantized: Option<bool>,
    /// Seed for every stage
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

pub fn parse_layer_list(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad layer index `{t}` in --vq-layers")))
        })
        .collect()
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(v) = self.codebook_size {
            cfg.model.codebook_size = v;
        }
        if let Some(l) = &self.vq_layers {
            cfg.model.vq_layers = parse_layer_list(l)?;
        }
        if let Some(l) = self.layer {
            cfg.extract.layer = l;
        }
        if let Some(q) = self.quantized {
            cfg.extract.quantized = q;
        }
        if let Some(s) = self.seed {
            cfg.synth.seed = s;
            cfg.train.seed = s;
            cfg.probe.seed = s;
            cfg.analysis.seed = s;
        }
        Ok(())
    }
}

fn echo_config(out: &Path, cfg: &PipelineConfig) -> Result<()> {
    write_json(&out.join(CONFIG_NAME), cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a seeded synthetic corpus with alignments.
pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    ensure_dir(out)?;
    let corpus = generate_corpus(&cfg.synth)?;
    let manifest = write_corpus(out, &corpus)?;
    echo_config(out, cfg)?;
    Ok(manifest)
}

/// log-Mel features with per-speaker normalization for every WAV in a manifest.
pub fn cmd_featurize(cfg: &PipelineConfig, manifest_path: &Path, out: &Path) -> Result<Manifest> {
    cfg.mel.validate()?;
    let input = Manifest::load(manifest_path)?;
    let mut raw = Vec::with_capacity(input.records.len());
    for r in &input.records {
        let wav = r
            .wav_path
            .as_deref()
            .ok_or_else(|| Error::Data(format!("manifest record `{}` has no wav_path", r.id)))?;
        let utt = read_wav(&input.resolve(wav), &r.id, &r.speaker_id)?;
        raw.push(log_mel(&utt, &cfg.mel)?);
    }
    let normalized = normalize_per_speaker(&raw)?;

    let feats = out.join("feats");
    ensure_dir(&feats)?;
    let mut records = Vec::with_capacity(normalized.len());
    for (seq, r) in normalized.iter().zip(&input.records) {
        let name = write_feature_file(&feats, seq, cfg.mel.frame_shift)?;
        records.push(ManifestRecord {
            id: r.id.clone(),
            speaker_id: r.speaker_id.clone(),
            wav_path: None,
            feature_path: Some(format!("feats/{name}")),
            phone_alignment_path: copy_alignment(&input, r, out)?,
        });
    }
    let manifest = Manifest {
        root: out.to_path_buf(),
        records,
    };
    manifest.save(&out.join(MANIFEST_NAME))?;
    echo_config(out, cfg)?;
    Ok(manifest)
}

/// Copies a record's alignment into `<out>/align/` so later stages need only `out`.
fn copy_alignment(src: &Manifest, r: &ManifestRecord, out: &Path) -> Result<Option<String>> {
    if r.phone_alignment_path.is_none() {
        return Ok(None);
    }
    let labels = src.load_alignment(&r.id)?;
    let dir = out.join("align");
    ensure_dir(&dir)?;
    let name = format!("{}.phn", r.id);
    write_label_file(&dir.join(&name), &labels)?;
    Ok(Some(format!("align/{name}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub loss_history: Vec<f64>,
    pub final_checkpoint: PathBuf,
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch}.ckpt"))
}

/// Trains on a feature manifest; writes checkpoints and `loss.csv`.
pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let corpus = Manifest::load(data)?.load_features()?;
    ensure_dir(&out.join("checkpoints"))?;
    echo_config(out, cfg)?;

    let every = cfg.train.checkpoint_every;
    let total = cfg.train.epochs;
    let seed = cfg.train.seed;
    let (_, state) = train_with(&corpus, &cfg.model, &cfg.train, |model, st| {
        eprintln!("epoch {:>4}  loss {:.6}", st.epoch, st.loss_history[st.epoch - 1]);
        if (every > 0 && st.epoch % every == 0) || st.epoch == total {
            save_checkpoint(&checkpoint_path(out, st.epoch), model, st.epoch, &st.loss_history, seed)?;
        }
        Ok(())
    })?;

    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in state.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:.8}", i + 1);
    }
    write_text(&out.join("loss.csv"), &csv)?;
    Ok(TrainSummary {
        loss_history: state.loss_history,
        final_checkpoint: checkpoint_path(out, total),
    })
}

/// Provenance of an extracted representation directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractMeta {
    pub model_tag: String,
    pub checkpoint: String,
    pub layer: usize,
    pub quantized: bool,
    /// Set when the layer has a quantizer, in which case `<id>.codes` exist.
    pub codebook_size: Option<usize>,
}

pub fn model_tag(cfg: &ModelConfig) -> String {
    if cfg.vq_layers.is_empty() {
        "apc".into()
    } else {
        let layers: Vec<String> = cfg.vq_layers.iter().map(usize::to_string).collect();
        format!("vq{}_V{}", layers.join("-"), cfg.codebook_size)
    }
}

/// Eval-mode representations of one layer for every utterance.
///
/// Writes `<id>.fmat` for each representation and, for quantized layers,
/// `<id>.codes` with one code index per line.
pub fn cmd_extract(cfg: &PipelineConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<ExtractMeta> {
    let (model, _) = load_checkpoint(checkpoint)?;
    let (layer, quantized) = (cfg.extract.layer, cfg.extract.quantized);
    if layer == 0 || layer > model.config.num_layers {
        return Err(Error::config(format!("layer {layer} outside 1..={}", model.config.num_layers)));
    }
    let is_vq = model.config.is_vq_layer(layer);
    if quantized && !is_vq {
        return Err(Error::config(format!("layer {layer} has no VQ layer to extract codes from")));
    }
    let input = Manifest::load(data)?;
    let corpus = input.load_features()?;
    ensure_dir(out)?;

    let mut records = Vec::with_capacity(corpus.len());
    for (seq, r) in corpus.iter().zip(&input.records) {
        let mut trace = apc_forward(&seq.frames, &model, &mut Mode::Eval)?;
        let repr = if quantized {
            trace.quantized.remove(&layer).expect("vq layer present")
        } else {
            trace.hidden.swap_remove(layer - 1)
        };
        let out_seq = crate::features::FeatureSequence {
            utterance_id: seq.utterance_id.clone(),
            speaker_id: seq.speaker_id.clone(),
            frames: repr,
        };
        let name = write_feature_file(out, &out_seq, cfg.mel.frame_shift)?;
        if let Some(codes) = trace.codes.remove(&layer) {
            write_code_file(&out.join(format!("{}.codes", seq.utterance_id)), &codes)?;
        }
        records.push(ManifestRecord {
            id: r.id.clone(),
            speaker_id: r.speaker_id.clone(),
            wav_path: None,
            feature_path: Some(name),
            phone_alignment_path: copy_alignment(&input, r, out)?,
        });
    }
    Manifest {
        root: out.to_path_buf(),
        records,
    }
    .save(&out.join(MANIFEST_NAME))?;

    let meta = ExtractMeta {
        model_tag: model_tag(&model.config),
        checkpoint: checkpoint.display().to_string(),
        layer,
        quantized,
        codebook_size: is_vq.then_some(model.config.codebook_size),
    };
    write_json(&out.join(EXTRACT_META_NAME), &meta)?;
    echo_config(
        out,
        &PipelineConfig {
            model: model.config.clone(),
            ..cfg.clone()
        },
    )?;
    Ok(meta)
}

fn load_reprs(manifest: &Manifest) -> Result<Vec<UtteranceRepr>> {
    Ok(manifest
        .load_features()?
        .into_iter()
        .map(|s| UtteranceRepr {
            id: s.utterance_id,
            speaker_id: s.speaker_id,
            repr: s.frames,
        })
        .collect())
}

fn model_tag_of(dir: &Path) -> String {
    read_json::<ExtractMeta>(&dir.join(EXTRACT_META_NAME))
        .map(|m| m.model_tag)
        .unwrap_or_else(|_| dir.file_name().map_or_else(|| "model".into(), |n| n.to_string_lossy().into_owned()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub errors: Vec<f64>,
    pub mean: f64,
    pub report: PathBuf,
}

/// Builds the three speaker-stratified splits for one task. Utterances are
/// taken in id order, so listing order does not matter.
pub fn probe_splits(
    reprs: &[UtteranceRepr],
    labels: &Manifest,
    task: ProbeTask,
    seed: u64,
) -> Result<[ProbeDataset; 3]> {
    let mut reprs: Vec<&UtteranceRepr> = reprs.iter().collect();
    reprs.sort_by(|a, b| a.id.cmp(&b.id));
    let speakers: Vec<String> = reprs.iter().map(|r| r.speaker_id.clone()).collect();
    let assign = split_by_speaker(&speakers, seed);
    let index = SpeakerIndex::new(speakers.iter().cloned());
    let build = |split: Split| -> Result<ProbeDataset> {
        let part: Vec<UtteranceRepr> = reprs
            .iter()
            .zip(&assign)
            .filter(|(_, &s)| s == split)
            .map(|(r, _)| (*r).clone())
            .collect();
        match task {
            ProbeTask::Phone => {
                let ali = part.iter().map(|r| labels.load_alignment(&r.id)).collect::<Result<Vec<_>>>()?;
                build_phone_dataset(&part, &ali, split)
            }
            ProbeTask::Speaker => build_speaker_dataset(&part, &index, split),
        }
    };
    Ok([build(Split::Train)?, build(Split::Dev)?, build(Split::Test)?])
}

/// Seeded linear probes on an extracted representation directory; writes
/// `probe_<task>.csv` with one row per seed and the mean.
pub fn cmd_probe(cfg: &PipelineConfig, reprs_dir: &Path, labels: Option<&Path>, task: ProbeTask, out: &Path) -> Result<ProbeResult> {
    let manifest = Manifest::load(reprs_dir)?;
    let labels = match labels {
        Some(p) => Manifest::load(p)?,
        None => manifest.clone(),
    };
    let reprs = load_reprs(&manifest)?;
    let [train, dev, test] = probe_splits(&reprs, &labels, task, cfg.probe.seed)?;
    let pc = cfg.probe.probe_config();
    let errors = run_seeds(&train, &dev, &test, &pc, cfg.probe.num_seeds.max(1))?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;

    let (layer, quantized) = read_json::<ExtractMeta>(&reprs_dir.join(EXTRACT_META_NAME))
        .map(|m| (m.layer, m.quantized))
        .unwrap_or((cfg.extract.layer, cfg.extract.quantized));
    ensure_dir(out)?;
    let report = out.join(format!("probe_{task}.csv"));
    write_text(
        &report,
        &probe_report_csv(&model_tag_of(reprs_dir), layer, quantized, task, pc.seed, &errors),
    )?;
    echo_config(out, cfg)?;
    Ok(ProbeResult { errors, mean, report })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub codebook_size: usize,
    pub final_loss: f64,
    pub phone_err: f64,
    pub speaker_err: f64,
}

/// Train, extract and probe once per codebook size; writes `summary.csv`.
pub fn cmd_sweep(cfg: &PipelineConfig, data: &Path, sizes: &[usize], out: &Path) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::config("sweep needs at least one codebook size"));
    }
    if cfg.model.vq_layers.is_empty() {
        return Err(Error::config("sweep varies the codebook size, but vq_layers is empty"));
    }
    ensure_dir(out)?;
    echo_config(out, cfg)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &v in sizes {
        let run = out.join(format!("V{v}"));
        let mut c = cfg.clone();
        c.model.codebook_size = v;
        let trained = cmd_train(&c, data, &run.join("train"))?;
        cmd_extract(&c, &trained.final_checkpoint, data, &run.join("repr"))?;
        let phone = cmd_probe(&c, &run.join("repr"), None, ProbeTask::Phone, &run.join("probe"))?;
        let speaker = cmd_probe(&c, &run.join("repr"), None, ProbeTask::Speaker, &run.join("probe"))?;
        rows.push(SweepRow {
            codebook_size: v,
            final_loss: *trained.loss_history.last().expect("epochs >= 1"),
            phone_err: phone.mean,
            speaker_err: speaker.mean,
        });
    }
    let mut csv = String::from("codebook_size,final_loss,phone_err,speaker_err\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:.8},{:.6},{:.6}", r.codebook_size, r.final_loss, r.phone_err, r.speaker_err);
    }
    write_text(&out.join("summary.csv"), &csv)?;
    Ok(rows)
}

/// Code/phone statistics for an extraction directory holding `<id>.codes`;
/// writes `heatmap.csv`, `heatmap.ppm` and `stats.json`.
pub fn cmd_analyze(cfg: &PipelineConfig, codes_dir: &Path, labels: Option<&Path>, out: &Path) -> Result<CodeStats> {
    let manifest = Manifest::load(codes_dir)?;
    let labels = match labels {
        Some(p) => Manifest::load(p)?,
        None => manifest.clone(),
    };
    let mut ids = Vec::with_capacity(manifest.records.len());
    let mut codes = Vec::with_capacity(manifest.records.len());
    let mut phones = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        codes.push(crate::analysis::read_code_file(&codes_dir.join(format!("{}.codes", r.id)))?);
        phones.push(labels.load_alignment(&r.id)?);
        ids.push(r.id.clone());
    }
    let num_codes = read_json::<ExtractMeta>(&codes_dir.join(EXTRACT_META_NAME))
        .ok()
        .and_then(|m| m.codebook_size)
        .unwrap_or_else(|| codes.iter().flatten().max().map_or(0, |m| m + 1));

    let cont = accumulate_cooccurrence(&ids, &codes, &phones, NUM_PHONES, num_codes)?;
    let cond = conditional_prob(&cont);
    let ordering = spectral_cocluster(&cond, cfg.analysis.clusters, cfg.analysis.seed)?;
    ensure_dir(out)?;
    emit_heatmap(
        &cond,
        &cont.row_labels,
        &cont.col_labels,
        Some(&ordering),
        cfg.analysis.saturation,
        &out.join("heatmap"),
    )?;
    let stats = code_stats(&cont)?;
    write_json(&out.join("stats.json"), &stats)?;
    write_json(&out.join("ordering.json"), &ordering)?;
    echo_config(out, cfg)?;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Phone,
    Speaker,
}

impl From<TaskArg> for ProbeTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Phone => ProbeTask::Phone,
            TaskArg::Speaker => ProbeTask::Speaker,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vqapc", version, about = "Vector-quantized autoregressive predictive coding toolkit")]
pub struct Cli {
    /// Pipeline configuration JSON; built-in defaults when absent
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a configuration document (defaults, or the desk-scale preset)
    Config {
        #[arg(long)]
        desk: bool,
    },
    /// Generate a synthetic corpus with known phone and speaker factors
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute normalized log-Mel features for a WAV manifest
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a feature manifest
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, extract and probe across codebook sizes
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated codebook sizes; defaults to the config's list
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one layer's representations (and codes) for every utterance
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probes on extracted representations
    Probe {
        #[arg(long)]
        reprs: PathBuf,
        /// Manifest providing alignments; defaults to the representation manifest
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Code/phone co-occurrence statistics and heatmap
    Analyze {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Co-clustering cluster count
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        saturation: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg)?;
    match cli.command {
        Command::Config { desk } => {
            let mut c = if desk { PipelineConfig::desk() } else { cfg };
            if desk {
                cli.overrides.apply(&mut c)?;
            }
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
        Command::Synth { out } => {
            let m = cmd_synth(&cfg, &out)?;
            println!("wrote {} utterances to {}", m.records.len(), out.display());
        }
        Command::Featurize { manifest, out } => {
            let m = cmd_featurize(&cfg, &manifest, &out)?;
            println!("wrote {} feature files to {}", m.records.len(), out.display());
        }
        Command::Train { data, out } => {
            let s = cmd_train(&cfg, &data, &out)?;
            println!("final loss {:.6}; checkpoint {}", s.loss_history.last().unwrap_or(&f64::NAN), s.final_checkpoint.display());
        }
        Command::Sweep { data, sizes, out } => {
            let sizes = sizes.unwrap_or_else(|| cfg.sweep.codebook_sizes.clone());
            cfg.sweep.codebook_sizes = sizes.clone();
            for r in cmd_sweep(&cfg, &data, &sizes, &out)? {
                println!("V={:<5} loss {:.6}  phone err {:.4}  speaker err {:.4}", r.codebook_size, r.final_loss, r.phone_err, r.speaker_err);
            }
        }
        Command::Extract { checkpoint, data, out } => {
            let m = cmd_extract(&cfg, &checkpoint, &data, &out)?;
            println!("extracted layer {} ({}) to {}", m.layer, if m.quantized { "codes" } else { "hidden" }, out.display());
        }
        Command::Probe { reprs, labels, task, out } => {
            let r = cmd_probe(&cfg, &reprs, labels.as_deref(), task.into(), &out)?;
            println!("{} error rate {:.4} (mean of {})", ProbeTask::from(task), r.mean, r.errors.len());
        }
        Command::Analyze { codes, labels, k, saturation, out } => {
            if let Some(k) = k {
                cfg.analysis.clusters = k;
            }
            if let Some(s) = saturation {
                cfg.analysis.saturation = s;
            }
            let s = cmd_analyze(&cfg, &codes, labels.as_deref(), &out)?;
            println!("NMI {:.4}; {} codes used", s.nmi, s.num_used_codes);
        }
    }
    Ok(())
}

/// Parses arguments, runs one subcommand and returns the process exit code:
/// 0 success, 2 usage or configuration error, 3 data error, 4 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
