//! The IMAC network: title/abstract attention fusion, residual shortcut,
//! MS-CAM gated feature fusion, metadata fusion and the linear classifier.
//!
//! Every stage is exposed twice: as a graph builder used for training, and
//! as an eager function over plain vectors. The eager functions run the
//! graph builders on a throwaway tape, so both paths share one
//! implementation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MetadataVector, METADATA_DIM};
use crate::encoder::{
    load_checkpoint_encoder, norm_affine, pool_graph, EncoderConfig, EncoderKind, Projection, TextEncoder,
    TokenSequence,
};
use crate::nn::{Graph, ParamId, Params, Var};
use crate::{Error, Result};

/// Inputs at which the title/abstract attention operates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionGranularity {
    /// Title token embeddings attend over abstract token embeddings.
    #[default]
    Token,
    /// Pooled, projected title vector attends over the pooled abstract
    /// vector. The softmax is over a single score, so it is always 1.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention_granularity: AttentionGranularity,
    pub dropout: f64,
    /// MS-CAM bottleneck reduction ratio.
    pub reduction: usize,
    /// Spatial positions the fused vector is reshaped into before MS-CAM;
    /// channels = d / spatial.
    pub mscam_spatial: usize,
    /// Bypass attention and AFF fusion: `F_txt = F_t + F_a`.
    pub no_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            attention_granularity: AttentionGranularity::Token,
            dropout: 0.1,
            reduction: 4,
            mscam_spatial: 1,
            no_fusion: false,
        }
    }
}

impl ModelConfig {
    pub fn d(&self) -> usize {
        self.encoder.d
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        let d = self.d();
        if self.mscam_spatial == 0 || d % self.mscam_spatial != 0 {
            return Err(Error::Config(format!(
                "d = {d} is not divisible into {} MS-CAM positions",
                self.mscam_spatial
            )));
        }
        let channels = d / self.mscam_spatial;
        if self.reduction == 0 || channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "MS-CAM channels {channels} not divisible by reduction ratio {}",
                self.reduction
            )));
        }
        Ok(())
    }
}

/// Attention weights and the post-attention layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionFuse {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub dropout: f64,
}

/// One MS-CAM context branch: down-project, rectify, up-project.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub down: ParamId,
    pub down_bias: ParamId,
    pub up: ParamId,
    pub up_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsCam {
    pub local: Bottleneck,
    pub global: Bottleneck,
    pub channels: usize,
    pub spatial: usize,
}

/// Metadata embedding, fusion map and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc0_w: ParamId,
    pub fc0_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

impl AttentionFuse {
    pub fn init<R: Rng>(d: usize, dropout: f64, params: &mut Params, rng: &mut R) -> Self {
        Self {
            wq: params.add_uniform("attention.query", d, d, d, rng),
            wk: params.add_uniform("attention.key", d, d, d, rng),
            wv: params.add_uniform("attention.value", d, d, d, rng),
            ln_gain: params.add_ones("attention.norm.gain", 1, d),
            ln_bias: params.add_zeros("attention.norm.bias", 1, d),
            dropout,
        }
    }

    /// Returns `(F_att, attention weights)`. `queries` is `nq×d`, `context`
    /// is `nk×d`; the weights are `nq×nk` with rows on the simplex.
    pub fn forward(&self, g: &mut Graph, queries: Var, context: Var, rng: Option<&mut ChaCha8Rng>) -> (Var, Var) {
        let d = g.value(queries).ncols();
        let wq = g.param(self.wq);
        let wk = g.param(self.wk);
        let wv = g.param(self.wv);
        let q = g.matmul(queries, wq);
        let k = g.matmul(context, wk);
        let v = g.matmul(context, wv);
        let scores = g.matmul_t(q, k);
        let scores = g.affine(scores, 1.0 / (d as f64).sqrt(), 0.0);
        let weights = g.softmax_rows(scores);
        let attended = g.matmul(weights, v);
        let pooled = g.mean_rows(attended);
        let normed = norm_affine(g, pooled, self.ln_gain, self.ln_bias);
        let out = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let mask = Array2::from_shape_simple_fn(g.value(normed).dim(), || {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                g.dropout(normed, mask)
            }
            _ => normed,
        };
        (out, weights)
    }
}

impl Bottleneck {
    fn init<R: Rng>(prefix: &str, channels: usize, hidden: usize, params: &mut Params, rng: &mut R) -> Self {
        Self {
            down: params.add_uniform(format!("{prefix}.down"), channels, hidden, channels, rng),
            down_bias: params.add_zeros(format!("{prefix}.down_bias"), 1, hidden),
            up: params.add_uniform(format!("{prefix}.up"), hidden, channels, hidden, rng),
            up_bias: params.add_zeros(format!("{prefix}.up_bias"), 1, channels),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = g.linear(x, self.down, Some(self.down_bias));
        let h = g.relu(h);
        g.linear(h, self.up, Some(self.up_bias))
    }
}

impl MsCam {
    pub fn init<R: Rng>(d: usize, spatial: usize, reduction: usize, params: &mut Params, rng: &mut R) -> Self {
        let channels = d / spatial;
        let hidden = channels / reduction;
        Self {
            local: Bottleneck::init("mscam.local", channels, hidden, params, rng),
            global: Bottleneck::init("mscam.global", channels, hidden, params, rng),
            channels,
            spatial,
        }
    }

    /// Gate `M ∈ (0,1)^d` for a `1×d` input.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let d = self.channels * self.spatial;
        let grid = if self.spatial == 1 { x } else { g.reshape(x, self.spatial, self.channels) };
        let local = self.local.forward(g, grid);
        let gap = if self.spatial == 1 { grid } else { g.mean_rows(grid) };
        let global = self.global.forward(g, gap);
        let global = if self.spatial == 1 { global } else { g.broadcast_rows(global, self.spatial) };
        let sum = g.add(local, global);
        let gate = g.sigmoid(sum);
        if self.spatial == 1 {
            gate
        } else {
            g.reshape(gate, 1, d)
        }
    }
}

impl Head {
    pub fn init<R: Rng>(d: usize, params: &mut Params, rng: &mut R) -> Self {
        Self {
            fc0_w: params.add_uniform("metadata.fc0.weight", METADATA_DIM, d, METADATA_DIM, rng),
            fc0_b: params.add_zeros("metadata.fc0.bias", 1, d),
            fc1_w: params.add_uniform("metadata.fc1.weight", d, d, d, rng),
            fc1_b: params.add_zeros("metadata.fc1.bias", 1, d),
            cls_w: params.add_uniform("head.classifier.weight", d, 2, d, rng),
            cls_b: params.add_zeros("head.classifier.bias", 1, 2),
        }
    }

    /// Returns `(F_m, F_u)`.
    pub fn metadata_fuse(&self, g: &mut Graph, f_txt: Var, x_m: Var) -> (Var, Var) {
        let f_m = g.linear(x_m, self.fc0_w, Some(self.fc0_b));
        let prod = g.mul(f_txt, f_m);
        let f_u = g.linear(prod, self.fc1_w, Some(self.fc1_b));
        (f_m, f_u)
    }

    /// Returns `(logits, probabilities)`.
    pub fn classify(&self, g: &mut Graph, f_u: Var) -> (Var, Var) {
        let out = g.linear(f_u, self.cls_w, Some(self.cls_b));
        let p = g.softmax_rows(out);
        (out, p)
    }
}

/// Model-side view of one article.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub title: TokenSequence,
    pub abstract_tokens: TokenSequence,
    pub metadata: MetadataVector,
}

/// Graph handles of every intermediate of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TraceVars {
    pub f_t: Var,
    pub f_a: Var,
    pub f_att: Option<Var>,
    pub attention: Option<Var>,
    pub f_o: Var,
    pub f_aff: Option<Var>,
    pub gate: Option<Var>,
    pub f_txt: Var,
    pub f_m: Var,
    pub f_u: Var,
    pub out: Var,
    pub p: Var,
}

/// Values of every intermediate of one forward pass. Fusion-stage fields
/// are `None` when fusion is ablated.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub f_t: Array1<f64>,
    pub f_a: Array1<f64>,
    pub f_att: Option<Array1<f64>>,
    pub attention: Option<Array2<f64>>,
    pub f_o: Array1<f64>,
    pub f_aff: Option<Array1<f64>>,
    pub gate: Option<Array1<f64>>,
    pub f_txt: Array1<f64>,
    pub f_m: Array1<f64>,
    pub f_u: Array1<f64>,
    pub out: Array1<f64>,
    pub p: Array1<f64>,
}

/// The complete network layout; weights live in a separate [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImacModel {
    pub config: ModelConfig,
    pub encoder: TextEncoder,
    pub projection: Projection,
    pub attention: AttentionFuse,
    pub mscam: MsCam,
    pub head: Head,
}

/// Batched forward outputs: rows are articles.
#[derive(Debug, Clone, Copy)]
pub struct BatchVars {
    pub features: Var,
    pub probabilities: Var,
}

impl ImacModel {
    /// Builds the layout and initial weights. The pretrained encoder
    /// variant loads its weights from the configured checkpoint.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<(Self, Params)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let d = config.d();
        let encoder = match config.encoder.kind {
            EncoderKind::SmallTrainable => TextEncoder::init(&config.encoder, vocab_size, &mut params, &mut rng)?,
            EncoderKind::PretrainedCheckpoint => load_checkpoint_encoder(&config.encoder, &mut params, &mut rng)?,
        };
        let projection = Projection::init(d, &mut params, &mut rng);
        let attention = AttentionFuse::init(d, config.dropout, &mut params, &mut rng);
        let mscam = MsCam::init(d, config.mscam_spatial, config.reduction, &mut params, &mut rng);
        let head = Head::init(d, &mut params, &mut rng);
        Ok((
            Self {
                config: config.clone(),
                encoder,
                projection,
                attention,
                mscam,
                head,
            },
            params,
        ))
    }

    pub fn d(&self) -> usize {
        self.config.d()
    }

    /// Records one article's forward pass. Dropout is active iff `rng` is given.
    pub fn forward_graph(&self, g: &mut Graph, bundle: &FeatureBundle, rng: Option<&mut ChaCha8Rng>) -> Result<TraceVars> {
        if !bundle.metadata.normalized {
            return Err(Error::domain("metadata must be normalized before the forward pass"));
        }
        let pooling = self.config.encoder.pooling;
        let title_tokens = self.encoder.forward(g, &bundle.title)?;
        let abstract_tokens = self.encoder.forward(g, &bundle.abstract_tokens)?;
        let t_pooled = pool_graph(g, title_tokens, pooling);
        let a_pooled = pool_graph(g, abstract_tokens, pooling);
        let f_t = self.projection.forward(g, t_pooled);
        let f_a = self.projection.forward(g, a_pooled);
        let f_o = g.add(f_t, f_a);

        let (f_att, attention, f_aff, gate, f_txt) = if self.config.no_fusion {
            (None, None, None, None, f_o)
        } else {
            let (queries, context) = match self.config.attention_granularity {
                AttentionGranularity::Token => (title_tokens, abstract_tokens),
                AttentionGranularity::Pooled => (f_t, f_a),
            };
            let (f_att, weights) = self.attention.forward(g, queries, context, rng);
            let f_aff = g.add(f_o, f_att);
            let gate = self.mscam.forward(g, f_aff);
            let f_txt = aff_graph(g, gate, f_o, f_att);
            (Some(f_att), Some(weights), Some(f_aff), Some(gate), f_txt)
        };

        let x_m = g.row(&bundle.metadata.values);
        let (f_m, f_u) = self.head.metadata_fuse(g, f_txt, x_m);
        let (out, p) = self.head.classify(g, f_u);
        Ok(TraceVars {
            f_t,
            f_a,
            f_att,
            attention,
            f_o,
            f_aff,
            gate,
            f_txt,
            f_m,
            f_u,
            out,
            p,
        })
    }

    /// Forward passes for a batch, stacked into `B×d` features and `B×2`
    /// probabilities.
    pub fn batch_graph(&self, g: &mut Graph, bundles: &[FeatureBundle], mut rng: Option<&mut ChaCha8Rng>) -> Result<BatchVars> {
        let mut feats = Vec::with_capacity(bundles.len());
        let mut probs = Vec::with_capacity(bundles.len());
        for b in bundles {
            let t = self.forward_graph(g, b, rng.as_deref_mut())?;
            feats.push(t.f_u);
            probs.push(t.p);
        }
        let features = if feats.len() == 1 { feats[0] } else { g.concat_rows(&feats) };
        let probabilities = if probs.len() == 1 { probs[0] } else { g.concat_rows(&probs) };
        Ok(BatchVars {
            features,
            probabilities,
        })
    }

    /// Inference forward pass (dropout off).
    pub fn forward(&self, params: &Params, bundle: &FeatureBundle) -> Result<ForwardTrace> {
        let mut g = Graph::new(params);
        let t = self.forward_graph(&mut g, bundle, None)?;
        let row = |v: Var| g.value(v).row(0).to_owned();
        Ok(ForwardTrace {
            f_t: row(t.f_t),
            f_a: row(t.f_a),
            f_att: t.f_att.map(row),
            attention: t.attention.map(|v| g.value(v).clone()),
            f_o: row(t.f_o),
            f_aff: t.f_aff.map(row),
            gate: t.gate.map(row),
            f_txt: row(t.f_txt),
            f_m: row(t.f_m),
            f_u: row(t.f_u),
            out: row(t.out),
            p: row(t.p),
        })
    }

    /// Ids of parameters that belong to the text encoder.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.encoder.param_ids()
    }
}

fn aff_graph(g: &mut Graph, gate: Var, f_o: Var, f_att: Var) -> Var {
    let keep = g.mul(gate, f_o);
    let complement = g.affine(gate, -1.0, 1.0);
    let residual = g.mul(complement, f_att);
    g.add(keep, residual)
}

fn row_vec(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Attention output of the eager API.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub f_att: Array1<f64>,
    /// Row-stochastic attention weights, title positions × abstract positions.
    pub weights: Array2<f64>,
}

/// Title-to-abstract attention with dropout disabled.
pub fn attention_fuse(
    title_tokens: &Array2<f64>,
    abstract_tokens: &Array2<f64>,
    attention: &AttentionFuse,
    params: &Params,
) -> Result<AttentionOutput> {
    let d = params.get(attention.wq).nrows();
    check_dim("attention title tokens", d, title_tokens.ncols())?;
    check_dim("attention abstract tokens", d, abstract_tokens.ncols())?;
    if title_tokens.nrows() == 0 || abstract_tokens.nrows() == 0 {
        return Err(Error::domain("attention inputs need at least one token"));
    }
    let mut g = Graph::new(params);
    let q = g.input(title_tokens.clone());
    let k = g.input(abstract_tokens.clone());
    let (f_att, weights) = attention.forward(&mut g, q, k, None);
    Ok(AttentionOutput {
        f_att: g.value(f_att).row(0).to_owned(),
        weights: g.value(weights).clone(),
    })
}

/// `(F_o, F_aff) = (F_t + F_a, F_t + F_a + F_att)`.
pub fn residual_merge(f_t: &Array1<f64>, f_a: &Array1<f64>, f_att: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let f_o = f_t + f_a;
    let f_aff = &f_o + f_att;
    (f_o, f_aff)
}

pub fn ms_cam(f_aff: &Array1<f64>, mscam: &MsCam, params: &Params) -> Result<Array1<f64>> {
    check_dim("MS-CAM input", mscam.channels * mscam.spatial, f_aff.len())?;
    let mut g = Graph::new(params);
    let x = g.input(row_vec(f_aff));
    let m = mscam.forward(&mut g, x);
    Ok(g.value(m).row(0).to_owned())
}

/// `M ⊗ F_o + (1 − M) ⊗ F_att`.
pub fn aff_fuse(f_o: &Array1<f64>, f_att: &Array1<f64>, gate: &Array1<f64>) -> Array1<f64> {
    gate * f_o + &(gate.mapv(|m| 1.0 - m) * f_att)
}

/// Returns `(F_m, F_u)`.
pub fn metadata_fuse(
    f_txt: &Array1<f64>,
    x_m: &MetadataVector,
    head: &Head,
    params: &Params,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if !x_m.normalized {
        return Err(Error::domain("metadata must be normalized before fusion"));
    }
    check_dim("metadata fusion text feature", params.get(head.fc1_w).nrows(), f_txt.len())?;
    let mut g = Graph::new(params);
    let t = g.input(row_vec(f_txt));
    let m = g.row(&x_m.values);
    let (f_m, f_u) = head.metadata_fuse(&mut g, t, m);
    Ok((g.value(f_m).row(0).to_owned(), g.value(f_u).row(0).to_owned()))
}

/// Returns `(logits, probabilities)`.
pub fn classify(f_u: &Array1<f64>, head: &Head, params: &Params) -> Result<(Array1<f64>, Array1<f64>)> {
    check_dim("classifier input", params.get(head.cls_w).nrows(), f_u.len())?;
    let mut g = Graph::new(params);
    let u = g.input(row_vec(f_u));
    let (out, p) = head.classify(&mut g, u);
    Ok((g.value(out).row(0).to_owned(), g.value(p).row(0).to_owned()))
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    fn attention_params(d: usize) -> (AttentionFuse, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::new();
        let att = AttentionFuse::init(d, 0.1, &mut params, &mut rng);
        (att, params)
    }

    fn layer_norm(v: &Array1<f64>) -> Array1<f64> {
        let n = v.len() as f64;
        let mean = v.sum() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        v.mapv(|x| (x - mean) / (var + 1e-5).sqrt())
    }

    #[test]
    fn zero_query_key_weights_attend_uniformly() {
        let (att, mut params) = attention_params(4);
        params.get_mut(att.wq).fill(0.0);
        params.get_mut(att.wk).fill(0.0);
        params.set(att.wv, Array2::eye(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = rand_matrix(3, 4, &mut rng);
        let a = rand_matrix(5, 4, &mut rng);
        let out = attention_fuse(&t, &a, &att, &params).unwrap();
        assert!(out.weights.iter().all(|&w| (w - 0.2).abs() < 1e-12));
        let expected = layer_norm(&a.mean_axis(ndarray::Axis(0)).unwrap());
        for (x, y) in out.f_att.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_attends_fully() {
        let (att, mut params) = attention_params(3);
        params.set(att.wv, Array2::eye(3)).unwrap();
        let t = array![[0.3, -0.2, 0.9]];
        let a = array![[1.0, 2.0, 4.0]];
        let out = attention_fuse(&t, &a, &att, &params).unwrap();
        assert_eq!(out.weights, array![[1.0]]);
        // pre-norm attended value is the abstract token itself
        let expected = layer_norm(&array![1.0, 2.0, 4.0]);
        for (x, y) in out.f_att.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_matches_bruteforce() {
        let (att, mut params) = attention_params(2);
        let wq = array![[1.0, 0.5], [-0.3, 0.8]];
        let wk = array![[0.2, -1.0], [0.7, 0.4]];
        let wv = array![[1.5, 0.0], [-0.5, 2.0]];
        params.set(att.wq, wq.clone()).unwrap();
        params.set(att.wk, wk.clone()).unwrap();
        params.set(att.wv, wv.clone()).unwrap();
        let t = array![[0.6, -1.2], [2.0, 0.4]];
        let a = array![[-0.7, 1.1], [0.3, 0.9]];
        let out = attention_fuse(&t, &a, &att, &params).unwrap();

        let mm = |x: &Array2<f64>, y: &Array2<f64>| {
            let mut r = Array2::<f64>::zeros((x.nrows(), y.ncols()));
            for i in 0..x.nrows() {
                for j in 0..y.ncols() {
                    for k in 0..x.ncols() {
                        r[[i, j]] += x[[i, k]] * y[[k, j]];
                    }
                }
            }
            r
        };
        let (q, k, v) = (mm(&t, &wq), mm(&a, &wk), mm(&a, &wv));
        let mut attended = Array1::<f64>::zeros(2);
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| (q[[i, 0]] * k[[j, 0]] + q[[i, 1]] * k[[j, 1]]) / 2f64.sqrt())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for j in 0..2 {
                let w = s[j].exp() / z;
                assert!((out.weights[[i, j]] - w).abs() < 1e-12);
                for c in 0..2 {
                    attended[c] += w * v[[j, c]] / 2.0;
                }
            }
        }
        let expected = layer_norm(&attended);
        for (x, y) in out.f_att.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_dimension_mismatch() {
        let (att, params) = attention_params(4);
        assert!(attention_fuse(&Array2::zeros((2, 3)), &Array2::zeros((2, 4)), &att, &params).is_err());
    }

    #[test]
    fn residual_examples() {
        let z = Array1::zeros(3);
        assert_eq!(residual_merge(&z, &z, &z), (z.clone(), z.clone()));
        let t = array![1.0, 2.0, -3.0];
        let a = array![0.5, -0.5, 4.0];
        let (o, aff) = residual_merge(&t, &a, &z);
        assert_eq!(o, aff);
        let att = array![0.25, 1.0, -1.0];
        let (o, aff) = residual_merge(&t, &a, &att);
        assert_eq!(o, array![1.5, 1.5, 1.0]);
        assert_eq!(aff, array![1.75, 2.5, 0.0]);
    }

    fn mscam_params(d: usize, spatial: usize, r: usize) -> (MsCam, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = Params::new();
        let m = MsCam::init(d, spatial, r, &mut params, &mut rng);
        (m, params)
    }

    #[test]
    fn mscam_zero_weights_gate_is_half() {
        let (m, mut params) = mscam_params(8, 1, 4);
        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).fill(0.0);
        }
        let out = ms_cam(&Array1::from_elem(8, 3.0), &m, &params).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mscam_saturates_towards_one() {
        let (m, mut params) = mscam_params(4, 1, 2);
        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).fill(0.0);
        }
        params.get_mut(m.local.up_bias).fill(50.0);
        let out = ms_cam(&Array1::from_elem(4, 1.0), &m, &params).unwrap();
        assert!(out.iter().all(|&v| v > 1.0 - 1e-12));
    }

    #[test]
    fn mscam_matches_branch_oracle() {
        let (m, mut params) = mscam_params(4, 1, 2);
        let ld = array![[0.5, -1.0], [0.2, 0.3], [-0.4, 0.8], [1.0, 0.1]];
        let ldb = array![[0.1, -0.2]];
        let lu = array![[0.3, -0.6, 0.9, 0.2], [-0.5, 0.4, 0.1, 0.7]];
        let lub = array![[0.05, 0.0, -0.05, 0.1]];
        let gd = array![[-0.3, 0.6], [0.9, -0.1], [0.2, 0.2], [-0.7, 0.5]];
        let gdb = array![[0.0, 0.3]];
        let gu = array![[0.4, 0.4, -0.2, 0.1], [0.6, -0.8, 0.3, -0.3]];
        let gub = array![[-0.1, 0.2, 0.0, 0.05]];
        for (id, v) in [
            (m.local.down, ld.clone()),
            (m.local.down_bias, ldb.clone()),
            (m.local.up, lu.clone()),
            (m.local.up_bias, lub.clone()),
            (m.global.down, gd.clone()),
            (m.global.down_bias, gdb.clone()),
            (m.global.up, gu.clone()),
            (m.global.up_bias, gub.clone()),
        ] {
            params.set(id, v).unwrap();
        }
        let x = [0.7, -1.3, 2.1, 0.4];
        let branch = |down: &Array2<f64>, db: &Array2<f64>, up: &Array2<f64>, ub: &Array2<f64>, inp: &[f64]| {
            let mut hidden = [0.0; 2];
            for h in 0..2 {
                let mut s = db[[0, h]];
                for c in 0..4 {
                    s += inp[c] * down[[c, h]];
                }
                hidden[h] = s.max(0.0);
            }
            let mut out = [0.0; 4];
            for c in 0..4 {
                out[c] = ub[[0, c]] + hidden[0] * up[[0, c]] + hidden[1] * up[[1, c]];
            }
            out
        };
        let local = branch(&ld, &ldb, &lu, &lub, &x);
        // a single spatial position: the global average of each channel is the channel itself
        let global = branch(&gd, &gdb, &gu, &gub, &x);
        let out = ms_cam(&Array1::from(x.to_vec()), &m, &params).unwrap();
        for c in 0..4 {
            let expected = 1.0 / (1.0 + (-(local[c] + global[c])).exp());
            assert!((out[c] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn mscam_spatial_reshape_uses_channel_averages() {
        let (m, mut params) = mscam_params(8, 2, 2);
        // disable the local branch; the gate then depends only on channel means
        params.get_mut(m.local.up).fill(0.0);
        params.get_mut(m.local.up_bias).fill(0.0);
        let a = array![1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        let b = array![2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let ga = ms_cam(&a, &m, &params).unwrap();
        let gb = ms_cam(&b, &m, &params).unwrap();
        for (x, y) in ga.iter().zip(gb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // both positions receive the same broadcast gate
        assert_eq!(ga.slice(ndarray::s![0..4]), ga.slice(ndarray::s![4..8]));
    }

    #[test]
    fn aff_examples() {
        let o = array![1.0, -2.0, 3.0];
        let att = array![5.0, 0.0, -1.0];
        assert_eq!(aff_fuse(&o, &att, &Array1::ones(3)), o);
        assert_eq!(aff_fuse(&o, &att, &Array1::from_elem(3, 0.5)), (&o + &att) / 2.0);
        let m = array![0.1, 0.7, 0.4];
        let out = aff_fuse(&o, &att, &m);
        for j in 0..3 {
            assert!((out[j] - (m[j] * o[j] + (1.0 - m[j]) * att[j])).abs() < 1e-15);
        }
    }

    fn head_params(d: usize) -> (Head, Params) {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = Params::new();
        let h = Head::init(d, &mut params, &mut rng);
        (h, params)
    }

    fn normalized(values: [f64; 7]) -> MetadataVector {
        MetadataVector {
            values,
            normalized: true,
        }
    }

    #[test]
    fn metadata_fuse_examples() {
        let (h, mut params) = head_params(3);
        params.get_mut(h.fc1_b).assign(&array![[0.1, 0.2, 0.3]]);
        let (_, f_u) = metadata_fuse(&Array1::zeros(3), &normalized([0.5; 7]), &h, &params).unwrap();
        assert!((f_u - array![0.1, 0.2, 0.3]).iter().all(|v| v.abs() < 1e-15));

        params.get_mut(h.fc0_w).fill(0.0);
        params.get_mut(h.fc0_b).fill(1.0);
        params.set(h.fc1_w, Array2::eye(3)).unwrap();
        params.get_mut(h.fc1_b).fill(0.0);
        let txt = array![0.4, -1.0, 2.5];
        let (f_m, f_u) = metadata_fuse(&txt, &normalized([0.3; 7]), &h, &params).unwrap();
        assert_eq!(f_m, Array1::<f64>::ones(3));
        assert_eq!(f_u, txt);

        let raw = MetadataVector {
            values: [0.0; 7],
            normalized: false,
        };
        assert!(metadata_fuse(&txt, &raw, &h, &params).is_err());
    }

    #[test]
    fn metadata_fuse_matches_matrix_arithmetic() {
        let (h, params) = head_params(3);
        let txt = array![0.3, -0.8, 1.1];
        let x = [0.2, -1.0, 0.5, 1.5, -0.3, 0.0, 0.9];
        let (f_m, f_u) = metadata_fuse(&txt, &normalized(x), &h, &params).unwrap();
        let (w0, b0) = (params.get(h.fc0_w), params.get(h.fc0_b));
        let (w1, b1) = (params.get(h.fc1_w), params.get(h.fc1_b));
        for j in 0..3 {
            let m: f64 = b0[[0, j]] + (0..7).map(|i| x[i] * w0[[i, j]]).sum::<f64>();
            assert!((f_m[j] - m).abs() < 1e-12);
        }
        for j in 0..3 {
            let u: f64 = b1[[0, j]] + (0..3).map(|i| txt[i] * f_m[i] * w1[[i, j]]).sum::<f64>();
            assert!((f_u[j] - u).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&array![0.0, 0.0]), array![0.5, 0.5]);
        let p = softmax(&array![3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let q = softmax(&array![3f64.ln() + 100.0, 100.0]);
        assert!((&p - &q).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn classify_is_softmax_of_linear_map() {
        let (h, mut params) = head_params(2);
        params.set(h.cls_w, Array2::eye(2)).unwrap();
        let (out, p) = classify(&array![3f64.ln(), 0.0], &h, &params).unwrap();
        assert_eq!(out, array![3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12);
    }
}
