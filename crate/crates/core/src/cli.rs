//! The `sbl` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{ingest, sample_pair, DocumentStore, SyntheticLanguage, TokenizedStore};
use crate::corruptor::{collect_corruption_stats, make_example, PretrainExample};
use crate::experiment::{corpus_rng, directional_checks, SyntheticSetup};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::rng;
use crate::tokenizer::{build_vocab, Vocab};
use crate::trainer::{ablation_suite, finetune, grid_search, pretrain_with, AblationConfig, DevMetric, FinetuneTask};

pub const VERSION: &str = env!("SBL_VERSION");

#[derive(Parser, Debug)]
#[command(name = "sbl", version = VERSION, about = "Structural pre-training lab", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CorpusArgs {
    /// Corpus text: one sentence per line, blank line between documents.
    /// Without it the `[synthetic]` corpus is generated.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Vocabulary file; built from the corpus when omitted
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a subword vocabulary from a corpus
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a synthetic corpus
    GenSynthetic {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Sampling seed (defaults to the language seed)
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        documents: Option<usize>,
    },
    /// Pre-train an encoder; writes checkpoint, metrics and manifest to --out
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tune a checkpoint on a generated task with the [finetune] settings
    Finetune {
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Fine-tune a checkpoint for every [grid] combination and keep the best
    Grid {
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Pre-train every variant for every seed and fine-tune each on the ablation tasks
    Ablation {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Monte Carlo check of the corruption rates
    Stats {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print one corrupted pre-training example with its targets
    InspectExample {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct TaskArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary of the checkpoint (default: vocab.txt next to it)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// order_acceptability, pair_order or next_word_span
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub created_unix: u64,
}

impl RunManifest {
    fn new(command: &str, config: &ConfigArg, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: config.config.as_ref().map(|p| p.display().to_string()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: VERSION.into(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    fn write(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(c: &ConfigArg) -> anyhow::Result<RunConfig> {
    Ok(match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Documents and vocabulary from the flags, falling back to the synthetic
/// corpus and a freshly built vocabulary.
fn corpus_and_vocab(cfg: &RunConfig, args: &CorpusArgs) -> anyhow::Result<(DocumentStore, Vocab)> {
    let docs = match &args.corpus {
        Some(p) => ingest(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SyntheticLanguage::new(&cfg.synthetic)?.generate(cfg.synthetic.documents, &mut corpus_rng(cfg.synthetic.language_seed))?,
    };
    let vocab = match &args.vocab {
        Some(p) => Vocab::load(p)?,
        None => build_vocab(docs.sentences(), cfg.train.model.vocab_size)?,
    };
    Ok((docs, vocab))
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::BuildVocab { corpus, size, out } => {
            let docs = ingest(&fs::read_to_string(&corpus).with_context(|| format!("reading {}", corpus.display()))?)?;
            let vocab = build_vocab(docs.sentences(), size)?;
            vocab.save(&out)?;
            let mut m = RunManifest::new("build-vocab", &ConfigArg { config: None }, None).input(&corpus);
            m.outputs.push(out.display().to_string());
            m.write(&sibling_manifest(&out))?;
            println!("{} entries -> {}", vocab.len(), out.display());
        }
        Command::GenSynthetic { config, out, seed, documents } => {
            let cfg = load_config(&config)?;
            let lang = SyntheticLanguage::new(&cfg.synthetic)?;
            let seed = seed.unwrap_or(cfg.synthetic.language_seed);
            let docs = lang.generate(documents.unwrap_or(cfg.synthetic.documents), &mut corpus_rng(seed))?;
            docs.save(&out)?;
            let mut m = RunManifest::new("gen-synthetic", &config, Some(seed));
            m.outputs.push(out.display().to_string());
            m.write(&sibling_manifest(&out))?;
            println!("{} documents -> {}", docs.num_documents(), out.display());
        }
        Command::Pretrain { config, corpus, out, seed, steps } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            cfg.train.validate()?;
            let (docs, vocab) = corpus_and_vocab(&cfg, &corpus)?;
            create_dir(&out)?;
            let mut m = RunManifest::new("pretrain", &config, Some(cfg.train.seed));
            for p in [&corpus.corpus, &corpus.vocab].into_iter().flatten() {
                m = m.input(p);
            }
            let vocab_path = out.join("vocab.txt");
            vocab.save(&vocab_path)?;
            write_file(&out.join("config.toml"), &cfg.to_toml()?)?;
            let store = docs.tokenize(&vocab);
            let mut periodic = Vec::new();
            let outcome = pretrain_with(&cfg.train, &store, &vocab, |ck: &Checkpoint| {
                let p = out.join(format!("checkpoint-{}.sbrt", ck.meta["step"]));
                save_checkpoint(&p, ck)?;
                periodic.push(p);
                Ok(())
            })?;
            let ck_path = out.join("checkpoint.sbrt");
            save_checkpoint(&ck_path, &outcome.checkpoint)?;
            let csv_path = out.join("metrics.csv");
            outcome.log.save(&csv_path)?;
            m.outputs = [vocab_path, out.join("config.toml"), ck_path, csv_path]
                .iter()
                .chain(&periodic)
                .map(|p| p.display().to_string())
                .collect();
            m.write(&out.join("manifest.json"))?;
            if let Some(last) = outcome.log.records().last() {
                println!(
                    "step {}: mlm {:.4}/{:.3} shuffle {:.4}/{:.3} sentence {:.4}/{:.3}",
                    last.step, last.mlm_loss, last.mlm_acc, last.shuf_loss, last.shuf_acc, last.sent_loss, last.sent_acc
                );
            }
        }
        Command::Finetune { task } => run_task_command(&task, false)?,
        Command::Grid { task } => run_task_command(&task, true)?,
        Command::Ablation { config, out, seeds } => {
            let cfg = load_config(&config)?;
            let setup = SyntheticSetup::new(&cfg)?;
            let tasks = setup.ablation_tasks(&cfg)?;
            let acfg = AblationConfig {
                base: cfg.train.clone(),
                n_seeds: seeds.unwrap_or(cfg.ablation.n_seeds),
                hyper: cfg.finetune,
                variants: cfg.ablation.variants.clone(),
            };
            let report = ablation_suite(&acfg, &setup.store, &setup.vocab, &tasks)?;
            create_dir(&out)?;
            write_file(&out.join("ablation.csv"), &report.to_csv())?;
            write_file(&out.join("means.csv"), &report.mean_table())?;
            let mut summary = String::new();
            for d in directional_checks(&report) {
                let _ = writeln!(
                    summary,
                    "{}: full {:.4} vs {} {:.4}; {}/{} seeds positive, sign test p = {:.4}",
                    d.task,
                    d.full_mean,
                    d.ablated.name(),
                    d.ablated_mean,
                    d.sign.positive,
                    d.sign.n,
                    d.sign.p_value
                );
            }
            write_file(&out.join("sign_tests.txt"), &summary)?;
            let mut m = RunManifest::new("ablation", &config, Some(cfg.train.seed));
            m.outputs = ["ablation.csv", "means.csv", "sign_tests.txt"].iter().map(|f| out.join(f).display().to_string()).collect();
            m.write(&out.join("manifest.json"))?;
            print!("{}{summary}", report.mean_table());
        }
        Command::Stats { config, corpus, n, seed } => {
            let cfg = load_config(&config)?;
            let (docs, vocab) = corpus_and_vocab(&cfg, &corpus)?;
            let store = docs.tokenize(&vocab);
            let stats = collect_corruption_stats(&store, &cfg.train.corruption, vocab.len(), n, seed)?;
            println!("{n} examples, {} eligible positions, {} trigram draws", stats.eligible_positions, stats.trigram_draws);
            let checks = stats.checks(&cfg.train.corruption);
            for c in &checks {
                println!("{c}");
            }
            if !checks.iter().all(|c| c.ok()) {
                bail!("corruption statistics out of range");
            }
        }
        Command::InspectExample { config, corpus, seed } => {
            let cfg = load_config(&config)?;
            let (docs, vocab) = corpus_and_vocab(&cfg, &corpus)?;
            let store: TokenizedStore = docs.tokenize(&vocab);
            let rng = &mut rng::from_seed(seed);
            let pair = sample_pair(&store, cfg.train.corruption.max_len - 3, rng)?;
            let ex = make_example(&pair, &cfg.train.corruption, vocab.len(), rng)?;
            print!("{}", render_example(&ex, &vocab));
        }
    }
    Ok(())
}

/// One line per non-pad position: index, segment, input piece, and the
/// target for masked (`M`) or shuffled (`S`) positions.
pub fn render_example(ex: &PretrainExample, vocab: &Vocab) -> String {
    let piece = |id: u32| vocab.piece(id).unwrap_or("?").to_string();
    let mut s = format!("label {}\n", ex.sentence_label);
    for i in 0..ex.real_len() {
        let target = match (ex.mlm_targets.get(&i), ex.shuffle_targets.get(&i)) {
            (Some(&t), _) => format!("  M -> {}", piece(t)),
            (_, Some(&t)) => format!("  S -> {}", piece(t)),
            _ => String::new(),
        };
        let _ = writeln!(s, "{i:>3} {} {:<12}{target}", ex.segment_ids[i], piece(ex.input_ids[i]));
    }
    s
}

fn run_task_command(args: &TaskArgs, grid: bool) -> anyhow::Result<()> {
    let cfg = load_config(&args.config)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let vocab_path = match &args.vocab {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
    };
    let vocab = Vocab::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    let lang = SyntheticLanguage::new(&cfg.synthetic)?;
    let t = &cfg.tasks;
    let task: FinetuneTask = crate::trainer::tasks::build_task(
        &args.task,
        &lang,
        &vocab,
        t.train_examples,
        t.dev_examples,
        ck.params.config.max_len,
        t.seed,
    )?;
    create_dir(&args.out)?;
    let name = if grid { "grid" } else { "finetune" };
    let mut m = RunManifest::new(name, &args.config, Some(args.seed)).input(&args.checkpoint).input(&vocab_path);
    if grid {
        let r = grid_search(&ck, &task, &cfg.grid, args.seed)?;
        let mut csv = String::from("batch,lr,epochs,dropout,metric\n");
        for (h, v) in &r.trials {
            let _ = writeln!(csv, "{},{},{},{},{}", h.batch, h.lr, h.epochs, h.dropout, v);
        }
        let path = args.out.join("grid.csv");
        write_file(&path, &csv)?;
        m.outputs.push(path.display().to_string());
        println!(
            "best: batch {} lr {} epochs {} dropout {} -> {:.4}",
            r.best.batch, r.best.lr, r.best.epochs, r.best.dropout, r.metric
        );
    } else {
        let out = finetune(&ck, &task, &cfg.finetune, args.seed)?;
        let metric = match out.dev {
            DevMetric::Accuracy(a) => serde_json::json!({ "accuracy": a }),
            DevMetric::Span { exact_match, f1 } => serde_json::json!({ "exact_match": exact_match, "f1": f1 }),
        };
        let result = serde_json::json!({ "task": task.name, "steps": out.steps, "hyper": cfg.finetune, "dev": metric });
        let path = args.out.join("finetune.json");
        write_file(&path, &(serde_json::to_string_pretty(&result)? + "\n"))?;
        let enc = args.out.join("encoder.sbrt");
        let mut ck2 = Checkpoint::new(out.params);
        ck2.meta = ck.meta.clone();
        ck2.meta.insert("finetuned_on".into(), task.name.clone());
        save_checkpoint(&enc, &ck2)?;
        m.outputs.extend([path.display().to_string(), enc.display().to_string()]);
        println!("{}: {:.4}", task.name, out.dev.primary());
    }
    m.write(&args.out.join("manifest.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["sbl"]), 2);
        assert_eq!(run(["sbl", "frobnicate"]), 2);
        assert_eq!(run(["sbl", "stats", "--bogus"]), 2);
        assert_eq!(run(["sbl", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_with_one() {
        assert_eq!(run(["sbl", "build-vocab", "--corpus", "/nonexistent/c.txt", "--out", "/tmp/v.txt"]), 1);
    }
}
