use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::finetune::{finetune, FinetuneHyper, FinetuneTask};
use super::pretrain::pretrain;
use super::TrainConfig;
use crate::corpus::TokenizedStore;
use crate::error::{Error, Result};
use crate::model::Objectives;
use crate::rng;
use crate::tokenizer::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Full,
    NoWord,
    NoSentence,
    NoBoth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoWord, Variant::NoSentence, Variant::NoBoth];

    pub fn objectives(self) -> Objectives {
        let (w, s) = match self {
            Variant::Full => (true, true),
            Variant::NoWord => (false, true),
            Variant::NoSentence => (true, false),
            Variant::NoBoth => (false, false),
        };
        Objectives { word_structural: w, sentence_structural: s }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoWord => "-word",
            Variant::NoSentence => "-sentence",
            Variant::NoBoth => "-both",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl TryFrom<String> for Variant {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Variant::from_name(&s).ok_or_else(|| format!("unknown variant {s:?} (expected full, -word, -sentence or -both)"))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub base: TrainConfig,
    pub n_seeds: usize,
    /// Fine-tuning hyper-parameters shared by every task and run.
    pub hyper: FinetuneHyper,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { base: TrainConfig::default(), n_seeds: 8, hyper: FinetuneHyper::default(), variants: Variant::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub task: String,
    pub seed: u64,
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,task,seed,metric\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.variant.name(), r.task, r.seed, r.metric);
        }
        s
    }

    pub fn tasks(&self) -> Vec<String> {
        let mut t: Vec<String> = Vec::new();
        for r in &self.rows {
            if !t.contains(&r.task) {
                t.push(r.task.clone());
            }
        }
        t
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = self.rows.iter().map(|r| r.variant).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn mean(&self, variant: Variant, task: &str) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant && r.task == task).map(|r| r.metric).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// One row per variant, one column per task, cells are means.
    pub fn mean_table(&self) -> String {
        let tasks = self.tasks();
        let mut s = String::from("variant");
        for t in &tasks {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
        for v in self.variants() {
            s.push_str(v.name());
            for t in &tasks {
                let _ = write!(s, ",{:.4}", self.mean(v, t).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        s
    }

    /// `a − b` per seed for seeds present in both variants, in seed order.
    pub fn paired_differences(&self, task: &str, a: Variant, b: Variant) -> Vec<f64> {
        let pick = |v: Variant| -> BTreeMap<u64, f64> {
            self.rows.iter().filter(|r| r.variant == v && r.task == task).map(|r| (r.seed, r.metric)).collect()
        };
        let (ma, mb) = (pick(a), pick(b));
        ma.iter().filter_map(|(s, x)| mb.get(s).map(|y| x - y)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub n: usize,
    /// `P(X >= positive)` for `X ~ Binomial(n, 1/2)`.
    pub p_value: f64,
}

/// One-sided sign test that differences tend to be positive. Zero
/// differences count as non-positive.
pub fn sign_test(diffs: &[f64]) -> SignTest {
    let n = diffs.len();
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    let mut tail = 0.0;
    let mut c = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            c = c * (n + 1 - k) as f64 / k as f64;
        }
        if k >= positive {
            tail += c;
        }
    }
    SignTest { positive, n, p_value: tail / 2f64.powi(n as i32) }
}

/// Worker count from `SBL_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("SBL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Pre-trains every variant with `n_seeds` seeds and fine-tunes each run on
/// every task. Seed `i` is shared across variants so runs pair up.
pub fn ablation_suite(cfg: &AblationConfig, store: &TokenizedStore, vocab: &Vocab, tasks: &[FinetuneTask]) -> Result<AblationReport> {
    if cfg.n_seeds == 0 || tasks.is_empty() || cfg.variants.is_empty() {
        return Err(Error::InvalidArgument("ablation needs seeds, variants and tasks".into()));
    }
    let jobs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| (0..cfg.n_seeds as u64).map(move |i| (v, rng::mix(cfg.base.seed, i))))
        .collect();
    let run = |&(variant, seed): &(Variant, u64)| -> Result<Vec<AblationRow>> {
        let tc = TrainConfig { seed, objectives: variant.objectives(), ..cfg.base.clone() };
        let ck = pretrain(&tc, store, vocab)?.checkpoint;
        tasks
            .iter()
            .map(|t| {
                let out = finetune(&ck, t, &cfg.hyper, seed)?;
                log::info!("{} seed {seed:016x} {}: {:.4}", variant.name(), t.name, out.dev.primary());
                Ok(AblationRow { variant, task: t.name.clone(), seed, metric: out.dev.primary() })
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<AblationRow>>> = pool.install(|| jobs.par_iter().map(run).collect());
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        let t = sign_test(&[1.0; 8]);
        assert_eq!(t.positive, 8);
        assert!((t.p_value - 1.0 / 256.0).abs() < 1e-15);
        let t = sign_test(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0]);
        assert!((t.p_value - 9.0 / 256.0).abs() < 1e-15);
        let t = sign_test(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, -1.0]);
        assert!((t.p_value - 37.0 / 256.0).abs() < 1e-15);
        assert_eq!(sign_test(&[]).p_value, 1.0);
    }

    #[test]
    fn report_tables() {
        let mut rows = Vec::new();
        for (v, base) in [(Variant::Full, 0.8), (Variant::NoWord, 0.6)] {
            for s in 0..3u64 {
                rows.push(AblationRow { variant: v, task: "t".into(), seed: s, metric: base + s as f64 * 0.01 });
            }
        }
        let r = AblationReport { rows };
        assert!(r.to_csv().starts_with("variant,task,seed,metric\nfull,t,0,0.8\n"));
        assert!((r.mean(Variant::Full, "t").unwrap() - 0.81).abs() < 1e-12);
        assert_eq!(r.mean_table(), "variant,t\nfull,0.8100\n-word,0.6100\n");
        let d = r.paired_differences("t", Variant::Full, Variant::NoWord);
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn variant_switches() {
        assert_eq!(Variant::NoBoth.objectives(), Objectives { word_structural: false, sentence_structural: false });
        for v in Variant::ALL {
            assert_eq!(Variant::from_name(v.name()), Some(v));
        }
    }
}
