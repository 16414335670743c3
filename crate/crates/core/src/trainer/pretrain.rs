use super::metrics::{MetricsLog, StepRecord};
use super::TrainConfig;
use crate::corpus::{sample_pair_with, PairMode, TokenizedStore};
use crate::corruptor::{make_example_traced, PretrainExample};
use crate::error::{Error, Result};
use crate::model::{joint_loss, joint_loss_and_grads, Checkpoint, HeadMetrics, JointMetrics, ModelParams, Objectives};
use crate::numerics::{lr_at, AdamState, ParamSlot, Tensor};
use crate::rng::{self, Rng};
use crate::tokenizer::Vocab;

const INIT_STREAM: u64 = 1;
const EXAMPLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
}

fn pair_mode(objectives: Objectives) -> PairMode {
    if objectives.sentence_structural {
        PairMode::ThreeWay
    } else {
        PairMode::NextOnly
    }
}

/// One example from its own rng stream; word-off runs skip shuffling.
fn example(cfg: &TrainConfig, store: &TokenizedStore, vocab_size: usize, rng: &mut Rng) -> Result<PretrainExample> {
    let budget = cfg.corruption.max_len - 3;
    let pair = sample_pair_with(store, budget, pair_mode(cfg.objectives), rng)?;
    let (ex, _) = make_example_traced(&pair, &cfg.corruption, vocab_size, cfg.objectives.word_structural, rng)?;
    Ok(ex)
}

/// Drops trailing columns that are padding in every example. Positions are
/// absolute, so this leaves every loss unchanged.
fn trim(mut batch: Vec<PretrainExample>) -> Vec<PretrainExample> {
    let len = batch.iter().map(PretrainExample::real_len).max().unwrap_or(0).max(1);
    for e in &mut batch {
        e.input_ids.truncate(len);
        e.segment_ids.truncate(len);
    }
    batch
}

/// The batch consumed at `step` (1-based) of a run with seed `seed`.
pub fn pretrain_batch(cfg: &TrainConfig, store: &TokenizedStore, vocab_size: usize, seed: u64, step: usize) -> Result<Vec<PretrainExample>> {
    let base = rng::mix(seed, EXAMPLE_STREAM);
    let b = cfg.batch_size;
    let batch = (0..b)
        .map(|i| example(cfg, store, vocab_size, &mut rng::stream(base, ((step - 1) * b + i) as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(trim(batch))
}

fn checkpoint_of(params: &ModelParams<f32>, cfg: &TrainConfig, vocab: &Vocab, step: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(params.clone());
    ck.meta.insert("vocab_fingerprint".into(), format!("{:016x}", vocab.fingerprint()));
    ck.meta.insert("step".into(), step.to_string());
    ck.meta.insert("seed".into(), cfg.seed.to_string());
    ck.meta.insert("word_structural".into(), cfg.objectives.word_structural.to_string());
    ck.meta.insert("sentence_structural".into(), cfg.objectives.sentence_structural.to_string());
    ck
}

pub fn pretrain(cfg: &TrainConfig, store: &TokenizedStore, vocab: &Vocab) -> Result<PretrainOutcome> {
    pretrain_with(cfg, store, vocab, |_| Ok(()))
}

/// Runs `total_steps` updates. `on_checkpoint` receives every periodic
/// checkpoint (the final one is returned, not passed).
pub fn pretrain_with(
    cfg: &TrainConfig,
    store: &TokenizedStore,
    vocab: &Vocab,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if store.num_documents() == 0 {
        return Err(Error::EmptyCorpus("pre-training store has no documents".into()));
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    model_cfg.dropout = cfg.dropout;
    let mut params = ModelParams::<f32>::init(&model_cfg, &mut rng::stream(cfg.seed, INIT_STREAM))?;
    let adam_cfg = cfg.adam();
    let shapes: Vec<Vec<usize>> = params.weights.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut adam = AdamState::<f32>::new(adam_cfg, shapes.iter().map(Vec::as_slice));
    let mut log = MetricsLog::new();

    for step in 1..=cfg.total_steps {
        let batch = pretrain_batch(cfg, store, vocab.len(), cfg.seed, step)?;
        let dropout_rng = rng::stream(rng::mix(cfg.seed, DROPOUT_STREAM), step as u64);
        let (metrics, grads) = joint_loss_and_grads(&params, &batch, cfg.objectives, Some(dropout_rng))?;
        if !metrics.total.is_finite() {
            return Err(Error::Diverged { step, loss: metrics.total });
        }
        let grads: Vec<Tensor<f32>> = grads.named().into_iter().map(|(_, g)| g.clone()).collect();
        let mut slots: Vec<ParamSlot<'_, f32>> = params
            .weights
            .named_mut()
            .into_iter()
            .map(|(_, t)| {
                let decay = t.rank() == 2;
                ParamSlot { value: t, decay }
            })
            .collect();
        adam.update(&mut slots, &grads)?;
        log.push(StepRecord::new(step, lr_at(step, &adam_cfg)?, &metrics))?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.total_steps {
            on_checkpoint(&checkpoint_of(&params, cfg, vocab, step))?;
        }
    }
    Ok(PretrainOutcome { checkpoint: checkpoint_of(&params, cfg, vocab, cfg.total_steps), log })
}

fn merge(acc: &mut HeadMetrics, m: &HeadMetrics) {
    let n = acc.count + m.count;
    if n > 0 {
        acc.loss = (acc.loss * acc.count as f64 + m.loss * m.count as f64) / n as f64;
    }
    acc.count = n;
    acc.correct += m.correct;
}

/// Metrics of `params` on `n` fresh examples drawn from `store` with
/// `seed`, without dropout. Head losses are averaged per position.
pub fn evaluate(params: &ModelParams<f32>, store: &TokenizedStore, cfg: &TrainConfig, n: usize, seed: u64) -> Result<JointMetrics> {
    let eval_cfg = TrainConfig { batch_size: cfg.batch_size.max(1), ..cfg.clone() };
    let b = eval_cfg.batch_size;
    let mut out = JointMetrics::default();
    let mut done = 0;
    let mut step = 1;
    while done < n {
        let mut batch = pretrain_batch(&eval_cfg, store, params.config.vocab_size, seed, step)?;
        batch.truncate(n - done);
        let m = joint_loss(params, &batch, cfg.objectives)?;
        merge(&mut out.mlm, &m.mlm);
        merge(&mut out.shuffle, &m.shuffle);
        merge(&mut out.sentence, &m.sentence);
        done += b;
        step += 1;
    }
    out.total = out.mlm.loss + out.shuffle.loss + out.sentence.loss;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SyntheticLanguage, SyntheticSpec};
    use crate::model::ModelConfig;
    use crate::tokenizer::build_vocab;

    fn setup() -> (TrainConfig, TokenizedStore, Vocab) {
        let spec = SyntheticSpec { documents: 30, ..Default::default() };
        let docs = SyntheticLanguage::new(&spec).unwrap().generate(30, &mut rng::from_seed(3)).unwrap();
        let vocab = build_vocab(docs.sentences(), 200).unwrap();
        let store = docs.tokenize(&vocab);
        let cfg = TrainConfig {
            model: ModelConfig { layers: 1, hidden: 16, heads: 2, max_len: 32, ..Default::default() },
            corruption: crate::corruptor::CorruptionConfig { max_len: 32, ..Default::default() },
            batch_size: 4,
            total_steps: 6,
            lr_peak: 1e-3,
            seed: 9,
            ..Default::default()
        };
        (cfg, store, vocab)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (mut cfg, store, vocab) = setup();
        cfg.total_steps = 0;
        let out = pretrain(&cfg, &store, &vocab).unwrap();
        assert!(out.log.is_empty());
        let mut mc = cfg.model.clone();
        mc.vocab_size = vocab.len();
        let init = ModelParams::<f32>::init(&mc, &mut rng::stream(cfg.seed, INIT_STREAM)).unwrap();
        assert_eq!(out.checkpoint.params, init);
    }

    #[test]
    fn logged_lr_follows_schedule_and_runs_repeat() {
        let (cfg, store, vocab) = setup();
        let a = pretrain(&cfg, &store, &vocab).unwrap();
        for r in a.log.records() {
            assert_eq!(r.lr, lr_at(r.step, &cfg.adam()).unwrap());
        }
        let b = pretrain(&cfg, &store, &vocab).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log.to_csv(), b.log.to_csv());
    }

    #[test]
    fn word_objective_off_disables_shuffling() {
        let (mut cfg, store, vocab) = setup();
        cfg.objectives.word_structural = false;
        cfg.corruption.trigram_rate = 0.5;
        for step in 1..=5 {
            let batch = pretrain_batch(&cfg, &store, vocab.len(), 1, step).unwrap();
            assert!(batch.iter().all(|e| e.shuffle_targets.is_empty()));
        }
        let out = pretrain(&cfg, &store, &vocab).unwrap();
        assert!(out.log.records().iter().all(|r| r.shuf_loss == 0.0 && r.shuf_acc == 0.0));
    }

    #[test]
    fn sentence_objective_off_samples_only_following_pairs() {
        let (mut cfg, store, vocab) = setup();
        cfg.objectives.sentence_structural = false;
        for step in 1..=5 {
            let batch = pretrain_batch(&cfg, &store, vocab.len(), 2, step).unwrap();
            assert!(batch.iter().all(|e| e.sentence_label == crate::corpus::SentenceLabel::Next));
        }
        let out = pretrain(&cfg, &store, &vocab).unwrap();
        assert!(out.log.records().iter().all(|r| r.sent_loss == 0.0));
    }

    #[test]
    fn periodic_checkpoints() {
        let (mut cfg, store, vocab) = setup();
        cfg.checkpoint_every = 2;
        let mut steps = Vec::new();
        pretrain_with(&cfg, &store, &vocab, |ck| {
            steps.push(ck.meta["step"].clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(steps, ["2", "4"]);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut cfg, store, vocab) = setup();
        cfg.lr_peak = 1e300;
        cfg.total_steps = 20;
        cfg.warmup_fraction = 0.0;
        let r = pretrain(&cfg, &store, &vocab).map(|o| o.log.records().last().copied());
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn batches_are_trimmed_to_longest_example() {
        let (cfg, store, vocab) = setup();
        let batch = pretrain_batch(&cfg, &store, vocab.len(), 0, 1).unwrap();
        let len = batch[0].len();
        assert!(batch.iter().all(|e| e.len() == len));
        assert!(batch.iter().any(|e| e.real_len() == len));
    }
}
