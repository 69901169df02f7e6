//! Command-line surface. Exit codes: 0 success, 2 usage or unreadable
//! input, 3 numeric or validation failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recat_core::model::{network_gradcheck, EncodeMode, Masked, Network, Sentence};

use crate::config::RunConfig;
use crate::error::{read_to_string, write, IoError, IoResult};
use crate::pretrain::{pretrain, PretrainArgs, VOCAB};
use crate::{bench, checkpoint, corpus, sexpr, synth, tools};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Gradient check tolerance on the relative error of every group.
pub const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "recat", version, about = "Pruned inside-outside encoders with an induced-tree parser")]
pub struct Cli {
    /// Worker threads for per-sentence parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ParseMode {
    /// Pruned chart encoding; trees come from the last inside-outside layer.
    Full,
    /// Trust the parser's tree and encode along it.
    Fast,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Masked-LM pretraining with parser feedback.
    Pretrain {
        /// Token file, one sentence per line; `##` marks word-piece continuations.
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary file, `token id` per line.
        #[arg(long)]
        vocab: PathBuf,
        /// `key = value` run config (default: built-in defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory for the config, manifest, metrics and checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many optimizer steps in total.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from the run directory's checkpoint if present.
        #[arg(long)]
        resume: bool,
    },
    /// Writes one bracketed tree per input line.
    Parse {
        /// Checkpoint written by `pretrain`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Token file, one sentence per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: ParseMode,
        /// Vocabulary for the input tokens (default: `vocab.txt` beside the checkpoint).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output file for the bracketed trees.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean sentence F1 and per-label recall of predicted trees.
    EvalF1 {
        /// Predicted trees, one per line.
        #[arg(long)]
        pred: PathBuf,
        /// Gold labeled trees, one per line.
        #[arg(long)]
        gold: PathBuf,
    },
    /// Efficiency counters over balanced inputs, as CSV.
    Bench {
        /// `a..b` for powers of two, or a comma list.
        #[arg(long, default_value = "8..256")]
        lengths: String,
        /// Pruning threshold.
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Model shape used for the timing columns.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the randomly initialized model.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic corpus, its gold trees, a vocabulary and a config.
    ExportTrees {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of sentences.
        #[arg(long, default_value_t = 2000)]
        count: usize,
        /// Shortest sentence, in words.
        #[arg(long, default_value_t = 4)]
        min_len: usize,
        /// Longest sentence, in words.
        #[arg(long, default_value_t = 16)]
        max_len: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Finite-difference check of every parameter group.
    Gradcheck {
        /// Model config (default: built-in defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the randomly initialized model.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sentence length of the checked input.
        #[arg(long, default_value_t = 5)]
        len: usize,
    },
}

fn exit_code(e: &IoError) -> i32 {
    match e {
        IoError::File { .. } | IoError::Format(_) => EXIT_USAGE,
        IoError::Version { .. } | IoError::Param { .. } | IoError::Engine(_) => EXIT_NUMERIC,
    }
}

fn load_config(path: Option<&Path>) -> IoResult<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| run(cli.command, &mut buf));
    if let Err(e) = out.write_all(&buf).and_then(|_| out.flush()) {
        eprintln!("error: writing output: {e}");
        return EXIT_USAGE;
    }
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(out: &mut Vec<u8>, text: &str) -> IoResult<()> {
    out.extend_from_slice(text.as_bytes());
    Ok(())
}

fn run(command: Command, out: &mut Vec<u8>) -> IoResult<i32> {
    match command {
        Command::Pretrain { corpus, vocab, config, out: dir, seed, max_steps, resume } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.train.seed = s;
            }
            let summary = pretrain(&PretrainArgs { corpus, vocab, config, out: dir, max_steps, resume })?;
            let mut text = format!("steps {}\n", summary.steps);
            if let Some(m) = summary.last {
                text.push_str(&format!("mlm_loss {:.4}\nparser_loss {:.4}\n", m.mlm_loss, m.parser_loss));
            }
            emit(out, &text)?;
        }
        Command::Parse { ckpt, input, mode, vocab, out: path } => {
            let (_, trainer) = checkpoint::load::<f32>(&ckpt)?;
            let vocab_path = vocab.unwrap_or_else(|| ckpt.with_file_name(VOCAB));
            let vocab = crate::vocab::Vocab::read(&vocab_path)?;
            if vocab.len() != trainer.net.config.vocab {
                return Err(IoError::Format(format!(
                    "vocab has {} entries, checkpoint expects {}",
                    vocab.len(),
                    trainer.net.config.vocab
                )));
            }
            let lines = corpus::read_corpus(&input, &vocab)?;
            let mode = match mode {
                ParseMode::Full => EncodeMode::Pruned,
                ParseMode::Fast => EncodeMode::Fast,
            };
            let trees = tools::parse_lines(&trainer.net, &lines, mode)?;
            write(&path, trees.iter().map(|t| format!("{t}\n")).collect::<String>())?;
        }
        Command::EvalF1 { pred, gold } => {
            let pred = sexpr::parse_trees(&read_to_string(&pred)?)?;
            let gold = sexpr::parse_trees(&read_to_string(&gold)?)?;
            emit(out, &tools::evaluate(&pred, &gold)?.to_text())?;
        }
        Command::Bench { lengths, m, config, seed, out: path } => {
            let lengths = bench::parse_lengths(&lengths)?;
            let config = load_config(config.as_deref())?;
            let rows = bench::bench(&lengths, m, &config.model, seed)?;
            let mut csv = format!("{}\n", bench::CSV_HEADER);
            rows.iter().for_each(|r| csv.push_str(&(r.to_csv() + "\n")));
            match path {
                Some(p) => write(&p, csv)?,
                None => emit(out, &csv)?,
            }
        }
        Command::ExportTrees { out: dir, count, min_len, max_len, seed } => {
            if min_len == 0 || min_len > max_len {
                return Err(IoError::Format(format!("bad length range {min_len}..={max_len}")));
            }
            std::fs::create_dir_all(&dir).map_err(|source| IoError::File { path: dir.clone(), source })?;
            let trees = synth::generate(count, min_len, max_len, seed);
            let corpus: String = trees.iter().map(|t| t.words().join(" ") + "\n").collect();
            let gold: String = trees.iter().map(|t| sexpr::write_labeled(t) + "\n").collect();
            write(&dir.join("corpus.txt"), corpus)?;
            write(&dir.join("gold.txt"), gold)?;
            write(&dir.join("vocab.txt"), synth::vocab().to_text())?;
            write(&dir.join("config.txt"), synth::run_config().to_text())?;
        }
        Command::Gradcheck { config, seed, len } => {
            let config = load_config(config.as_deref())?;
            return gradcheck(&config, seed, len, out);
        }
    }
    Ok(EXIT_OK)
}

fn gradcheck(config: &RunConfig, seed: u64, len: usize, out: &mut Vec<u8>) -> IoResult<i32> {
    let model = &config.model;
    if len < 2 || len > model.max_len {
        return Err(IoError::Format(format!("gradcheck length {len} must lie in 2..={}", model.max_len)));
    }
    let net = Network::<f64>::new(model.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ordinary: Vec<usize> = (0..model.vocab).filter(|&t| t != model.mask_id).collect();
    let tokens: Vec<usize> = (0..len).map(|_| ordinary[rng.gen_range(0..ordinary.len())]).collect();
    let sentence = Sentence::new(tokens.clone());
    let positions = [1, len - 1];
    let mut input = tokens.clone();
    positions.iter().for_each(|&p| input[p] = model.mask_id);
    let masked = Masked { input, targets: positions.iter().map(|&p| (p, tokens[p])).collect() };
    let (m, p) = network_gradcheck(&net, &sentence, &masked, EncodeMode::Pruned, 1e-5, 4, 1e-4)?;
    let mut text = String::new();
    for g in m.groups.iter().chain(&p.groups) {
        let ok = g.max_rel_error < GRADCHECK_TOL && g.max_abs_grad > 0.0;
        text.push_str(&format!(
            "{} {} max_rel_error {:.3e} max_abs_grad {:.3e} coords {}\n",
            if ok { "ok  " } else { "FAIL" },
            g.group,
            g.max_rel_error,
            g.max_abs_grad,
            g.coords_checked
        ));
    }
    let pass = m.passes(GRADCHECK_TOL) && p.passes(GRADCHECK_TOL);
    text.push_str(if pass { "gradcheck passed\n" } else { "gradcheck FAILED\n" });
    emit(out, &text)?;
    Ok(if pass { EXIT_OK } else { EXIT_NUMERIC })
}
