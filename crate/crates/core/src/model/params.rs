use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::rng::Rng;

pub const MAX_POSITIONS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 2,
            vocab_size: 2000,
            max_len: 64,
            dropout: 0.1,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn ffn(&self) -> usize {
        4 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        if self.layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        Ok(())
    }

    pub(crate) fn validate_shapes(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!("hidden {} not divisible by heads {}", self.hidden, self.heads)));
        }
        if self.max_len == 0 || self.max_len > MAX_POSITIONS {
            return Err(Error::Config(format!("max_len {} outside 1..={MAX_POSITIONS}", self.max_len)));
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS as usize {
            return Err(Error::Config(format!("vocab_size {} too small", self.vocab_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Weights of one pre-norm encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<P> {
    pub ln1_g: P,
    pub ln1_b: P,
    pub q_w: P,
    pub q_b: P,
    pub k_w: P,
    pub k_b: P,
    pub v_w: P,
    pub v_b: P,
    pub o_w: P,
    pub o_b: P,
    pub ln2_g: P,
    pub ln2_b: P,
    pub ff1_w: P,
    pub ff1_b: P,
    pub ff2_w: P,
    pub ff2_b: P,
}

/// Every learnable tensor of the encoder and its pre-training heads. The
/// vocabulary projection reuses `tok_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<P> {
    pub tok_emb: P,
    pub pos_emb: P,
    pub seg_emb: P,
    pub emb_ln_g: P,
    pub emb_ln_b: P,
    pub layers: Vec<LayerWeights<P>>,
    /// Transform applied before the tied vocabulary projection.
    pub mlm_w: P,
    pub mlm_b: P,
    pub mlm_ln_g: P,
    pub mlm_ln_b: P,
    pub mlm_bias: P,
    pub sent_w: P,
    pub sent_b: P,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b)
    };
}

impl<P> LayerWeights<P> {
    fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> LayerWeights<Q> {
        macro_rules! build {
            ($($field:ident),*) => {
                LayerWeights { $($field: f(&format!("{prefix}.{}", stringify!($field)), &self.$field)),* }
            };
        }
        layer_fields!(build)
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        macro_rules! push {
            ($($field:ident),*) => {
                {$(out.push((format!("{prefix}.{}", stringify!($field)), &self.$field));)*}
            };
        }
        layer_fields!(push)
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut P)>) {
        macro_rules! push {
            ($($field:ident),*) => {
                {$(out.push((format!("{prefix}.{}", stringify!($field)), &mut self.$field));)*}
            };
        }
        layer_fields!(push)
    }
}

impl<P> Weights<P> {
    /// Applies `f` to every tensor, in canonical order, with its name.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> Weights<Q> {
        let tok_emb = f("tok_emb", &self.tok_emb);
        let pos_emb = f("pos_emb", &self.pos_emb);
        let seg_emb = f("seg_emb", &self.seg_emb);
        let emb_ln_g = f("emb_ln_g", &self.emb_ln_g);
        let emb_ln_b = f("emb_ln_b", &self.emb_ln_b);
        let layers = self.layers.iter().enumerate().map(|(i, l)| l.map(&format!("layers.{i}"), &mut f)).collect();
        Weights {
            tok_emb,
            pos_emb,
            seg_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            mlm_w: f("mlm_w", &self.mlm_w),
            mlm_b: f("mlm_b", &self.mlm_b),
            mlm_ln_g: f("mlm_ln_g", &self.mlm_ln_g),
            mlm_ln_b: f("mlm_ln_b", &self.mlm_ln_b),
            mlm_bias: f("mlm_bias", &self.mlm_bias),
            sent_w: f("sent_w", &self.sent_w),
            sent_b: f("sent_b", &self.sent_b),
        }
    }

    /// Named tensors in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out: Vec<(String, &P)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
            ("seg_emb".into(), &self.seg_emb),
            ("emb_ln_g".into(), &self.emb_ln_g),
            ("emb_ln_b".into(), &self.emb_ln_b),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&format!("layers.{i}"), &mut out);
        }
        out.extend([
            ("mlm_w".into(), &self.mlm_w),
            ("mlm_b".into(), &self.mlm_b),
            ("mlm_ln_g".into(), &self.mlm_ln_g),
            ("mlm_ln_b".into(), &self.mlm_ln_b),
            ("mlm_bias".into(), &self.mlm_bias),
            ("sent_w".into(), &self.sent_w),
            ("sent_b".into(), &self.sent_b),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out: Vec<(String, &mut P)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
            ("seg_emb".into(), &mut self.seg_emb),
            ("emb_ln_g".into(), &mut self.emb_ln_g),
            ("emb_ln_b".into(), &mut self.emb_ln_b),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&format!("layers.{i}"), &mut out);
        }
        out.extend([
            ("mlm_w".into(), &mut self.mlm_w),
            ("mlm_b".into(), &mut self.mlm_b),
            ("mlm_ln_g".into(), &mut self.mlm_ln_g),
            ("mlm_ln_b".into(), &mut self.mlm_ln_b),
            ("mlm_bias".into(), &mut self.mlm_bias),
            ("sent_w".into(), &mut self.sent_w),
            ("sent_b".into(), &mut self.sent_b),
        ]);
        out
    }
}

/// Initialized or loaded encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub weights: Weights<Tensor<T>>,
}

fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

impl<T: Real> ModelParams<T> {
    /// Normal(0, init_std) matrices and embeddings, unit gains, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self::init_unchecked(config, rng))
    }

    /// Like `init` but allows an empty layer stack.
    pub(crate) fn init_unchecked(config: &ModelConfig, rng: &mut Rng) -> Self {
        let (h, v, f, s) = (config.hidden, config.vocab_size, config.ffn(), config.init_std);
        let ones = |n: usize| Tensor::full(&[n], T::one());
        let zeros = |n: usize| Tensor::<T>::zeros(&[n]);
        let tok_emb = normal(&[v, h], s, rng);
        let pos_emb = normal(&[config.max_len, h], s, rng);
        let seg_emb = normal(&[2, h], s, rng);
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_g: ones(h),
                ln1_b: zeros(h),
                q_w: normal(&[h, h], s, rng),
                q_b: zeros(h),
                k_w: normal(&[h, h], s, rng),
                k_b: zeros(h),
                v_w: normal(&[h, h], s, rng),
                v_b: zeros(h),
                o_w: normal(&[h, h], s, rng),
                o_b: zeros(h),
                ln2_g: ones(h),
                ln2_b: zeros(h),
                ff1_w: normal(&[h, f], s, rng),
                ff1_b: zeros(f),
                ff2_w: normal(&[f, h], s, rng),
                ff2_b: zeros(h),
            })
            .collect();
        let weights = Weights {
            tok_emb,
            pos_emb,
            seg_emb,
            emb_ln_g: ones(h),
            emb_ln_b: zeros(h),
            layers,
            mlm_w: normal(&[h, h], s, rng),
            mlm_b: zeros(h),
            mlm_ln_g: ones(h),
            mlm_ln_b: zeros(h),
            mlm_bias: zeros(v),
            sent_w: normal(&[h, 3], s, rng),
            sent_b: zeros(3),
        };
        Self { config: config.clone(), weights }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { config: self.config.clone(), weights: self.weights.map(|_, t| t.cast()) }
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = Self::init_unchecked(&self.config, &mut crate::rng::from_seed(0));
        for ((name, a), (_, b)) in self.weights.named().iter().zip(expected.weights.named()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!("{name}: {:?}, expected {:?}", a.shape(), b.shape())));
            }
        }
        if self.weights.layers.len() != self.config.layers {
            return Err(Error::Shape("layer count".into()));
        }
        Ok(())
    }
}
