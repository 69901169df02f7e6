//! The pretraining driver: one run directory holding the config snapshot,
//! a manifest, JSON-lines metrics and the latest checkpoint.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use recat_core::model::{Network, Sentence};
use recat_core::train::{StepMetrics, Trainer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::read_corpus;
use crate::error::{read_bytes, write, IoError, IoResult};
use crate::run::parallel_grads;
use crate::vocab::Vocab;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.txt";
pub const METRICS: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const VOCAB: &str = "vocab.txt";

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub sentences: usize,
    pub masked: usize,
    pub mlm_loss: f64,
    pub parser_loss: f64,
    pub cells_encoded: usize,
    pub batches: usize,
    pub composes: usize,
    /// Wall time of the step; the only field that varies between identical runs.
    pub wall_ms: u64,
}

impl From<&StepMetrics> for MetricRecord {
    fn from(m: &StepMetrics) -> Self {
        MetricRecord {
            step: m.step,
            epoch: m.epoch,
            sentences: m.sentences,
            masked: m.masked,
            mlm_loss: m.mlm_loss,
            parser_loss: m.parser_loss,
            cells_encoded: m.cells_encoded,
            batches: m.batches,
            composes: m.composes,
            wall_ms: m.wall_ms,
        }
    }
}

impl MetricRecord {
    /// The record with its timing removed, for reproducibility checks.
    pub fn untimed(&self) -> Self {
        MetricRecord { wall_ms: 0, ..self.clone() }
    }
}

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub hash: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// The config text as snapshotted into the run directory.
    pub config: String,
    pub inputs: BTreeMap<String, InputRecord>,
    /// Role → file name inside the run directory.
    pub layout: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> IoResult<Self> {
        serde_json::from_slice(&read_bytes(path)?).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainArgs {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub config: RunConfig,
    pub out: PathBuf,
    pub max_steps: Option<u64>,
    /// Continue from `out/checkpoint.bin` when it exists.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSummary {
    pub steps: u64,
    pub resumed_from: Option<u64>,
    pub last: Option<MetricRecord>,
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Reads every record of a metrics file.
pub fn read_metrics(path: &Path) -> IoResult<Vec<MetricRecord>> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| IoError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_metrics(path: &Path, records: &[MetricRecord]) -> IoResult<()> {
    let text: String = records.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect();
    write(path, text)
}

/// Writes to a sibling file first so a crash never leaves a torn checkpoint.
fn save_atomically(path: &Path, config: &RunConfig, trainer: &Trainer<f32>) -> IoResult<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp, checkpoint::encode(config, trainer))?;
    std::fs::rename(&tmp, path).map_err(file_err(path))
}

struct Inputs {
    sentences: Vec<Sentence>,
    vocab: Vocab,
    manifest: Manifest,
}

fn load_inputs(args: &PretrainArgs) -> IoResult<Inputs> {
    let vocab_bytes = read_bytes(&args.vocab)?;
    let vocab = Vocab::read(&args.vocab)?;
    let model = &args.config.model;
    if vocab.len() != model.vocab || vocab.mask_id() != model.mask_id {
        return Err(IoError::Format(format!(
            "vocab file has {} entries with mask id {}, config expects vocab = {} and mask_id = {}",
            vocab.len(),
            vocab.mask_id(),
            model.vocab,
            model.mask_id
        )));
    }
    let corpus_bytes = read_bytes(&args.corpus)?;
    let sentences = read_corpus(&args.corpus, &vocab)?.into_iter().map(|l| l.sentence).collect();
    let config = args.config.to_text();
    let record =
        |path: &Path, bytes: &[u8]| InputRecord { path: path.display().to_string(), hash: content_hash(bytes) };
    let inputs = BTreeMap::from([
        ("corpus".to_string(), record(&args.corpus, &corpus_bytes)),
        ("vocab".to_string(), record(&args.vocab, &vocab_bytes)),
    ]);
    let layout = [
        ("config", CONFIG),
        ("metrics", METRICS),
        ("checkpoint", CHECKPOINT),
        ("manifest", MANIFEST),
        ("vocab", VOCAB),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    Ok(Inputs { sentences, vocab, manifest: Manifest { seed: args.config.train.seed, config, inputs, layout } })
}

/// Runs (or resumes) pretraining into `args.out`.
pub fn pretrain(args: &PretrainArgs) -> IoResult<PretrainSummary> {
    args.config.validate()?;
    let Inputs { sentences, vocab, manifest } = load_inputs(args)?;
    std::fs::create_dir_all(&args.out).map_err(file_err(&args.out))?;
    let ckpt_path = args.out.join(CHECKPOINT);
    let metrics_path = args.out.join(METRICS);

    let mut resumed_from = None;
    let mut trainer = if args.resume && ckpt_path.exists() {
        let (stored, trainer) = checkpoint::load::<f32>(&ckpt_path)?;
        if stored != args.config {
            return Err(IoError::Format(format!("{}: config differs from the checkpoint's", ckpt_path.display())));
        }
        let kept: Vec<MetricRecord> = if metrics_path.exists() {
            read_metrics(&metrics_path)?.into_iter().filter(|r| r.step <= trainer.state.step).collect()
        } else {
            Vec::new()
        };
        write_metrics(&metrics_path, &kept)?;
        resumed_from = Some(trainer.state.step);
        trainer
    } else {
        let net = Network::<f32>::new(args.config.model.clone(), args.config.train.seed)?;
        write_metrics(&metrics_path, &[])?;
        Trainer::new(net, args.config.train.clone())?
    };
    write(&args.out.join(CONFIG), &manifest.config)?;
    write(&args.out.join(VOCAB), vocab.to_text())?;
    write(&args.out.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("plain manifest") + "\n")?;

    let mut sink = OpenOptions::new().append(true).open(&metrics_path).map_err(file_err(&metrics_path))?;
    let every = args.config.checkpoint_every;
    let mut last = None;
    let mut clock = Instant::now();
    let mut io_error = None;
    let fitted = trainer.fit(&sentences, args.max_steps, parallel_grads, |m, tr| {
        m.wall_ms = clock.elapsed().as_millis() as u64;
        let record = MetricRecord::from(&*m);
        let line = serde_json::to_string(&record).expect("plain record") + "\n";
        let mut result = sink.write_all(line.as_bytes()).map_err(file_err(&metrics_path));
        if result.is_ok() && every > 0 && m.step % every == 0 {
            result = save_atomically(&ckpt_path, &args.config, tr);
        }
        last = Some(record);
        clock = Instant::now();
        result.map_err(|e| {
            io_error = Some(e);
            recat_core::Error::Input("aborted by an output failure".into())
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    fitted?;
    sink.flush().map_err(file_err(&metrics_path))?;
    save_atomically(&ckpt_path, &args.config, &trainer)?;
    Ok(PretrainSummary { steps: trainer.state.step, resumed_from, last })
}
