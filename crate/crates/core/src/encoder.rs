//! Text encoder: token sequences to pooled, projected feature vectors.
//!
//! The encoder is a post-layer-norm transformer (BERT layout). It is either
//! the small built-in model trained from scratch or a pretrained checkpoint
//! loaded through [`load_checkpoint_encoder`].

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, ParamId, Params, Var};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Token ids of one text, sentinels included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::domain("token sequence must contain at least one id"));
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::domain(format!(
                "token id {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    FirstToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    SmallTrainable,
    PretrainedCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Hidden size of the encoder and of every fused feature.
    pub d: usize,
    pub kind: EncoderKind,
    /// Directory with `config.json`, `weights.json` and `vocab.txt`.
    pub checkpoint_dir: Option<PathBuf>,
    pub pooling: Pooling,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ffn_mult: usize,
    pub max_positions: usize,
    /// Keep encoder weights fixed during training.
    pub freeze: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 768,
            kind: EncoderKind::SmallTrainable,
            checkpoint_dir: None,
            pooling: Pooling::Mean,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            max_positions: 512,
            freeze: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dimension {} must be positive and divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.max_positions == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("max_positions and ffn_mult must be positive".into()));
        }
        if self.kind == EncoderKind::PretrainedCheckpoint && self.checkpoint_dir.is_none() {
            return Err(Error::Config("pretrained_checkpoint encoder needs checkpoint_dir".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Parameter layout of the transformer encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub d: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    token_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerIds>,
}

impl TextEncoder {
    /// Registers freshly initialized encoder weights under `encoder.*`.
    pub fn init<R: Rng>(cfg: &EncoderConfig, vocab_size: usize, params: &mut Params, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let ff = cfg.ffn_mult * d;
        let token_emb = params.add_uniform("encoder.token_embedding", vocab_size, d, d, rng);
        let pos_emb = params.add_uniform("encoder.position_embedding", cfg.max_positions, d, d, rng);
        let emb_ln_g = params.add_ones("encoder.embedding_norm.gain", 1, d);
        let emb_ln_b = params.add_zeros("encoder.embedding_norm.bias", 1, d);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |s: &str| format!("encoder.layer{l}.{s}");
                LayerIds {
                    wq: params.add_uniform(p("query.weight"), d, d, d, rng),
                    bq: params.add_zeros(p("query.bias"), 1, d),
                    wk: params.add_uniform(p("key.weight"), d, d, d, rng),
                    bk: params.add_zeros(p("key.bias"), 1, d),
                    wv: params.add_uniform(p("value.weight"), d, d, d, rng),
                    bv: params.add_zeros(p("value.bias"), 1, d),
                    wo: params.add_uniform(p("output.weight"), d, d, d, rng),
                    bo: params.add_zeros(p("output.bias"), 1, d),
                    ln1_g: params.add_ones(p("attention_norm.gain"), 1, d),
                    ln1_b: params.add_zeros(p("attention_norm.bias"), 1, d),
                    w1: params.add_uniform(p("ffn_in.weight"), d, ff, d, rng),
                    b1: params.add_zeros(p("ffn_in.bias"), 1, ff),
                    w2: params.add_uniform(p("ffn_out.weight"), ff, d, ff, rng),
                    b2: params.add_zeros(p("ffn_out.bias"), 1, d),
                    ln2_g: params.add_ones(p("ffn_norm.gain"), 1, d),
                    ln2_b: params.add_zeros(p("ffn_norm.bias"), 1, d),
                }
            })
            .collect();
        Ok(Self {
            d,
            heads: cfg.heads,
            vocab_size,
            max_positions: cfg.max_positions,
            token_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        if let Some(bad) = seq.ids().iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::domain(format!(
                "token id {bad} outside encoder vocabulary of size {}",
                self.vocab_size
            )));
        }
        if seq.len() > self.max_positions {
            return Err(Error::domain(format!(
                "sequence of length {} exceeds {} positions",
                seq.len(),
                self.max_positions
            )));
        }
        Ok(())
    }

    /// Token-level outputs, one `d`-row per token.
    pub fn forward(&self, g: &mut Graph, seq: &TokenSequence) -> Result<Var> {
        self.check(seq)?;
        let n = seq.len();
        let ids: Vec<usize> = seq.ids().iter().map(|&i| i as usize).collect();
        let table = g.param(self.token_emb);
        let tok = g.gather(table, &ids);
        let pos_table = g.param(self.pos_emb);
        let pos = g.row_range(pos_table, 0, n);
        let x = g.add(tok, pos);
        let mut x = norm_affine(g, x, self.emb_ln_g, self.emb_ln_b);
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let q = g.linear(x, layer.wq, Some(layer.bq));
            let k = g.linear(x, layer.wk, Some(layer.bk));
            let v = g.linear(x, layer.wv, Some(layer.bv));
            let heads: Vec<Var> = (0..self.heads)
                .map(|h| {
                    let (a, b) = (h * dh, (h + 1) * dh);
                    let qh = g.col_range(q, a, b);
                    let kh = g.col_range(k, a, b);
                    let vh = g.col_range(v, a, b);
                    let scores = g.matmul_t(qh, kh);
                    let scores = g.affine(scores, scale, 0.0);
                    let attn = g.softmax_rows(scores);
                    g.matmul(attn, vh)
                })
                .collect();
            let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
            let attn_out = g.linear(cat, layer.wo, Some(layer.bo));
            let res = g.add(x, attn_out);
            x = norm_affine(g, res, layer.ln1_g, layer.ln1_b);
            let hidden = g.linear(x, layer.w1, Some(layer.b1));
            let hidden = g.gelu(hidden);
            let ff = g.linear(hidden, layer.w2, Some(layer.b2));
            let res = g.add(x, ff);
            x = norm_affine(g, res, layer.ln2_g, layer.ln2_b);
        }
        Ok(x)
    }

    /// Ids of every encoder parameter.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token_emb, self.pos_emb, self.emb_ln_g, self.emb_ln_b];
        for l in &self.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_g, l.ln1_b, l.w1, l.b1, l.w2, l.b2,
                l.ln2_g, l.ln2_b,
            ]);
        }
        ids
    }
}

/// Layer norm followed by the learned gain and bias.
pub(crate) fn norm_affine(g: &mut Graph, x: Var, gain: ParamId, bias: ParamId) -> Var {
    let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
    let gv = g.param(gain);
    let bv = g.param(bias);
    let y = g.mul_row(n, gv);
    g.add_row(y, bv)
}

pub fn pool_graph(g: &mut Graph, tokens: Var, pooling: Pooling) -> Var {
    match pooling {
        Pooling::Mean => g.mean_rows(tokens),
        Pooling::FirstToken => g.select_row(tokens, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    /// Replaces the nonlinearity; used to test the wiring of the projection.
    Identity,
}

/// The projected nonlinearity `L1 · act(L2 · v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub l1: ParamId,
    pub l2: ParamId,
    pub activation: Activation,
}

impl Projection {
    pub fn init<R: Rng>(d: usize, params: &mut Params, rng: &mut R) -> Self {
        // stored input-major: row vectors multiply on the left
        let l2 = params.add_uniform("projection.l2", d, d, d, rng);
        let l1 = params.add_uniform("projection.l1", d, d, d, rng);
        Self {
            l1,
            l2,
            activation: Activation::Gelu,
        }
    }

    pub fn forward(&self, g: &mut Graph, v: Var) -> Var {
        let h = g.linear(v, self.l2, None);
        let h = match self.activation {
            Activation::Gelu => g.gelu(h),
            Activation::Identity => h,
        };
        g.linear(h, self.l1, None)
    }
}

/// Token matrix of one sequence (`length × d`).
pub fn encode_tokens(seq: &TokenSequence, encoder: &TextEncoder, params: &Params) -> Result<Array2<f64>> {
    let mut g = Graph::new(params);
    let out = encoder.forward(&mut g, seq)?;
    Ok(g.value(out).clone())
}

/// Pools a token matrix into one vector.
pub fn pool(tokens: &Array2<f64>, pooling: Pooling) -> Result<Array1<f64>> {
    if tokens.nrows() == 0 {
        return Err(Error::domain("cannot pool an empty token matrix"));
    }
    Ok(match pooling {
        Pooling::Mean => tokens.mean_axis(ndarray::Axis(0)).expect("nonempty"),
        Pooling::FirstToken => tokens.row(0).to_owned(),
    })
}

pub fn project(v: &Array1<f64>, proj: &Projection, params: &Params) -> Result<Array1<f64>> {
    let d = params.get(proj.l2).nrows();
    if v.len() != d {
        return Err(Error::Dimension {
            context: "projection input",
            expected: d,
            actual: v.len(),
        });
    }
    let mut g = Graph::new(params);
    let x = g.row(v.as_slice().expect("contiguous"));
    let y = proj.forward(&mut g, x);
    Ok(g.value(y).row(0).to_owned())
}

/// Encoded text: the pooled, projected feature plus the token matrix it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub feature: Array1<f64>,
    pub tokens: Array2<f64>,
}

pub fn encode_text(
    seq: &TokenSequence,
    encoder: &TextEncoder,
    pooling: Pooling,
    proj: &Projection,
    params: &Params,
) -> Result<EncodedText> {
    let mut g = Graph::new(params);
    let tokens = encoder.forward(&mut g, seq)?;
    let pooled = pool_graph(&mut g, tokens, pooling);
    let f = proj.forward(&mut g, pooled);
    Ok(EncodedText {
        feature: g.value(f).row(0).to_owned(),
        tokens: g.value(tokens).clone(),
    })
}

/// Architecture of a pretrained checkpoint (`config.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default = "default_true")]
    pub lowercase: bool,
}

fn default_true() -> bool {
    true
}

pub fn read_checkpoint_config(dir: &Path) -> Result<CheckpointConfig> {
    let path = dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Builds the encoder layout described by a checkpoint directory and loads
/// its `weights.json` (tensors named as in [`TextEncoder::init`]).
pub fn load_checkpoint_encoder<R: Rng>(cfg: &EncoderConfig, params: &mut Params, rng: &mut R) -> Result<TextEncoder> {
    let dir = cfg
        .checkpoint_dir
        .as_deref()
        .ok_or_else(|| Error::Config("pretrained_checkpoint encoder needs checkpoint_dir".into()))?;
    let ck = read_checkpoint_config(dir)?;
    if ck.hidden_size != cfg.d {
        return Err(Error::Config(format!(
            "configured d = {} does not match checkpoint hidden size {}",
            cfg.d, ck.hidden_size
        )));
    }
    if ck.ffn_size % ck.hidden_size != 0 {
        return Err(Error::Config("checkpoint ffn_size must be a multiple of hidden_size".into()));
    }
    let layout = EncoderConfig {
        layers: ck.num_layers,
        heads: ck.num_heads,
        ffn_mult: ck.ffn_size / ck.hidden_size,
        max_positions: ck.max_positions,
        ..cfg.clone()
    };
    let mut staged = Params::new();
    let encoder = TextEncoder::init(&layout, ck.vocab_size, &mut staged, rng)?;
    let path = dir.join("weights.json");
    staged.load_into(&path)?;
    // move the loaded tensors into the caller's store under the same names
    let remap = TextEncoder::init(&layout, ck.vocab_size, params, rng)?;
    for (src, dst) in encoder.param_ids().into_iter().zip(remap.param_ids()) {
        params.set(dst, staged.get(src).clone())?;
    }
    Ok(remap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(d: usize) -> (TextEncoder, Projection, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = Params::new();
        let cfg = EncoderConfig {
            d,
            max_positions: 32,
            ..EncoderConfig::default()
        };
        let enc = TextEncoder::init(&cfg, 20, &mut params, &mut rng).unwrap();
        let proj = Projection::init(d, &mut params, &mut rng);
        (enc, proj, params)
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), 20).unwrap()
    }

    #[test]
    fn token_matrix_shape_and_determinism() {
        let (enc, _, params) = small(16);
        let m = encode_tokens(&seq(&[4]), &enc, &params).unwrap();
        assert_eq!(m.dim(), (1, 16));
        let a = encode_tokens(&seq(&[2, 5, 7, 3]), &enc, &params).unwrap();
        assert_eq!(a, encode_tokens(&seq(&[2, 5, 7, 3]), &enc, &params).unwrap());
        assert_eq!(a.dim(), (4, 16));
    }

    #[test]
    fn zero_weights_give_identical_token_outputs() {
        let (enc, _, mut params) = small(8);
        for id in enc.param_ids() {
            let name = params.name(id).to_string();
            if !name.ends_with(".gain") {
                params.get_mut(id).fill(0.0);
            }
        }
        let m = encode_tokens(&seq(&[2, 9, 11, 3]), &enc, &params).unwrap();
        for r in 1..m.nrows() {
            assert_eq!(m.row(r), m.row(0));
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let (enc, _, params) = small(8);
        assert!(TokenSequence::new(vec![25], 20).is_err());
        assert!(TokenSequence::new(vec![], 20).is_err());
        let wide = TokenSequence::new(vec![25], 30).unwrap();
        assert!(encode_tokens(&wide, &enc, &params).is_err());
    }

    #[test]
    fn pooling_examples() {
        let single = ndarray::array![[1.0, -2.0, 3.0]];
        assert_eq!(pool(&single, Pooling::Mean).unwrap(), single.row(0));
        let sym = ndarray::array![[1.0, -2.0], [-1.0, 2.0]];
        assert_eq!(pool(&sym, Pooling::Mean).unwrap(), ndarray::array![0.0, 0.0]);
        let three = ndarray::array![[1.0, 2.0], [3.0, 5.0], [8.0, -1.0]];
        assert_eq!(pool(&three, Pooling::Mean).unwrap(), ndarray::array![4.0, 2.0]);
        assert_eq!(pool(&three, Pooling::FirstToken).unwrap(), ndarray::array![1.0, 2.0]);
    }

    fn set_identity(params: &mut Params, id: ParamId, scale: f64) {
        let d = params.get(id).nrows();
        params.set(id, Array2::eye(d) * scale).unwrap();
    }

    #[test]
    fn projection_examples() {
        let (_, proj, mut params) = small(8);
        assert!(project(&Array1::zeros(8), &proj, &params).unwrap().iter().all(|&v| v == 0.0));
        set_identity(&mut params, proj.l1, 1.0);
        set_identity(&mut params, proj.l2, 1.0);
        let out = project(&Array1::from_elem(8, 10.0), &proj, &params).unwrap();
        assert!(out.iter().all(|&v| (v - 10.0).abs() < 1e-6));
        set_identity(&mut params, proj.l1, 2.0);
        let out = project(&Array1::from_elem(8, 1.0), &proj, &params).unwrap();
        assert!(out.iter().all(|&v| (v - 1.68269).abs() < 1e-5));
        assert!(project(&Array1::zeros(7), &proj, &params).is_err());
    }

    #[test]
    fn projection_is_linear_without_activation() {
        let (_, mut proj, params) = small(8);
        proj.activation = Activation::Identity;
        let a = Array1::from_shape_fn(8, |i| (i as f64 * 0.7).sin());
        let b = Array1::from_shape_fn(8, |i| (i as f64 * 1.3).cos());
        let lhs = project(&(&a * 2.0 - &b * 3.0), &proj, &params).unwrap();
        let rhs = project(&a, &proj, &params).unwrap() * 2.0 - project(&b, &proj, &params).unwrap() * 3.0;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_text_is_the_composition() {
        let (enc, proj, params) = small(16);
        let s = seq(&[2, 6, 6, 9, 3]);
        let out = encode_text(&s, &enc, Pooling::Mean, &proj, &params).unwrap();
        let manual = project(
            &pool(&encode_tokens(&s, &enc, &params).unwrap(), Pooling::Mean).unwrap(),
            &proj,
            &params,
        )
        .unwrap();
        assert_eq!(out.feature.len(), 16);
        for (x, y) in out.feature.iter().zip(manual.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(out.tokens.nrows(), 5);
    }

    #[test]
    fn checkpoint_adapter_loads_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layout = EncoderConfig {
            d: 8,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            max_positions: 16,
            ..EncoderConfig::default()
        };
        let mut source = Params::new();
        let src_enc = TextEncoder::init(&layout, 12, &mut source, &mut rng).unwrap();
        source.save(&dir.path().join("weights.json")).unwrap();
        let ck = CheckpointConfig {
            hidden_size: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_size: 16,
            vocab_size: 12,
            max_positions: 16,
            lowercase: true,
        };
        std::fs::write(dir.path().join("config.json"), serde_json::to_string(&ck).unwrap()).unwrap();

        let cfg = EncoderConfig {
            d: 8,
            kind: EncoderKind::PretrainedCheckpoint,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..EncoderConfig::default()
        };
        let mut params = Params::new();
        let enc = load_checkpoint_encoder(&cfg, &mut params, &mut rng).unwrap();
        let s = TokenSequence::new(vec![2, 7, 3], 12).unwrap();
        assert_eq!(
            encode_tokens(&s, &enc, &params).unwrap(),
            encode_tokens(&s, &src_enc, &source).unwrap()
        );

        let wrong = EncoderConfig { d: 16, ..cfg };
        assert!(load_checkpoint_encoder(&wrong, &mut Params::new(), &mut rng).is_err());
    }
}
