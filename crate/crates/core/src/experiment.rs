//! Set-up shared by the command line and the acceptance suite: a synthetic
//! corpus with its vocabulary, downstream tasks, and the directional
//! ablation checks.

use crate::config::RunConfig;
use crate::corpus::{DocumentStore, SyntheticLanguage, TokenizedStore};
use crate::error::Result;
use crate::rng::{self, Rng};
use crate::tokenizer::{build_vocab, Vocab};
use crate::trainer::tasks::build_task;
use crate::trainer::{sign_test, AblationReport, FinetuneTask, SignTest, Variant};

const CORPUS_STREAM: u64 = 1;

/// Tasks fine-tuned in the ablation, each paired with the variant that
/// lacks the objective it probes.
pub const ABLATION_TASKS: [(&str, Variant); 2] = [("pair_order", Variant::NoSentence), ("order_acceptability", Variant::NoWord)];

/// Sampling rng of a synthetic corpus drawn with `seed`.
pub fn corpus_rng(seed: u64) -> Rng {
    rng::stream(seed, CORPUS_STREAM)
}

pub struct SyntheticSetup {
    pub language: SyntheticLanguage,
    pub documents: DocumentStore,
    pub vocab: Vocab,
    pub store: TokenizedStore,
}

impl SyntheticSetup {
    /// The `[synthetic]` corpus sampled with its language seed and a
    /// vocabulary of at most `model.vocab_size` entries built from it.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let language = SyntheticLanguage::new(&cfg.synthetic)?;
        let documents = language.generate(cfg.synthetic.documents, &mut corpus_rng(cfg.synthetic.language_seed))?;
        let vocab = build_vocab(documents.sentences(), cfg.train.model.vocab_size)?;
        let store = documents.tokenize(&vocab);
        Ok(Self { language, documents, vocab, store })
    }

    pub fn task(&self, name: &str, cfg: &RunConfig) -> Result<FinetuneTask> {
        let t = &cfg.tasks;
        build_task(name, &self.language, &self.vocab, t.train_examples, t.dev_examples, cfg.train.corruption.max_len, t.seed)
    }

    pub fn ablation_tasks(&self, cfg: &RunConfig) -> Result<Vec<FinetuneTask>> {
        ABLATION_TASKS.iter().map(|(name, _)| self.task(name, cfg)).collect()
    }
}

/// Full model against one ablated variant on one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Directional {
    pub task: String,
    pub ablated: Variant,
    pub full_mean: f64,
    pub ablated_mean: f64,
    pub sign: SignTest,
}

impl Directional {
    pub fn passed(&self, alpha: f64) -> bool {
        self.full_mean > self.ablated_mean && self.sign.p_value < alpha
    }
}

/// One entry per ablation task whose variants both appear in `report`.
pub fn directional_checks(report: &AblationReport) -> Vec<Directional> {
    ABLATION_TASKS
        .iter()
        .filter_map(|&(task, ablated)| {
            let full_mean = report.mean(Variant::Full, task)?;
            let ablated_mean = report.mean(ablated, task)?;
            let sign = sign_test(&report.paired_differences(task, Variant::Full, ablated));
            Some(Directional { task: task.into(), ablated, full_mean, ablated_mean, sign })
        })
        .collect()
}
