use serde::{Deserialize, Serialize};

use super::attention::multi_head_attention;
use super::{ForecastError, TransformerConfig};
use crate::dataset::WindowBatch;
use crate::numeric::{uniform, Graph, Matrix, NodeId, SeededRng};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Linear {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AttentionBlock {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EncoderLayer {
    attn: AttentionBlock,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DecoderLayer {
    self_attn: AttentionBlock,
    norm1: Norm,
    cross_attn: AttentionBlock,
    norm2: Norm,
    ff1: Linear,
    ff2: Linear,
    norm3: Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    enc_embed: Linear,
    dec_embed: Linear,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    head: Linear,
}

/// Whether a forward pass applies dropout.
pub enum ForwardMode<'a> {
    Train(&'a mut SeededRng),
    Eval,
}

/// Encoder-decoder transformer: linear value embedding plus sinusoidal
/// positions, post-norm attention/feed-forward blocks and a `d_model → 1`
/// head read at the horizon positions of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    config: TransformerConfig,
    params: Vec<Matrix>,
    names: Vec<String>,
    layout: Layout,
}

struct Builder<'a> {
    rng: &'a mut SeededRng,
    params: Vec<Matrix>,
    names: Vec<String>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, m: Matrix) -> usize {
        self.params.push(m);
        self.names.push(name);
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(self.rng, fan_in, fan_out, bound);
        let b = uniform(self.rng, 1, fan_out, bound);
        Linear {
            weight: self.push(format!("{name}.weight"), w),
            bias: self.push(format!("{name}.bias"), b),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), Matrix::filled(1, d, 1.0)),
            bias: self.push(format!("{name}.bias"), Matrix::zeros(1, d)),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> AttentionBlock {
        AttentionBlock {
            query: self.linear(&format!("{name}.query"), d, d),
            key: self.linear(&format!("{name}.key"), d, d),
            value: self.linear(&format!("{name}.value"), d, d),
            out: self.linear(&format!("{name}.out"), d, d),
        }
    }
}

/// Fixed sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let freq = (-(i as f64) * (10000.0_f64).ln() / d as f64).exp();
            let angle = pos as f64 * freq;
            pe.set(pos, i, angle.sin());
            if i + 1 < d {
                pe.set(pos, i + 1, angle.cos());
            }
        }
    }
    pe
}

fn tiled(pe: &Matrix, copies: usize) -> Matrix {
    let mut data = Vec::with_capacity(pe.len() * copies);
    for _ in 0..copies {
        data.extend_from_slice(pe.as_slice());
    }
    Matrix::from_raw(pe.rows() * copies, pe.cols(), data)
}

struct Ctx<'a, 'r> {
    g: &'a mut Graph,
    ids: Vec<NodeId>,
    mode: ForwardMode<'r>,
    dropout: f64,
    heads: usize,
    batch: usize,
}

impl Ctx<'_, '_> {
    fn linear(&mut self, x: NodeId, l: Linear) -> Result<NodeId, ForecastError> {
        let y = self.g.matmul(x, self.ids[l.weight])?;
        Ok(self.g.add_row(y, self.ids[l.bias])?)
    }

    fn norm(&mut self, x: NodeId, n: Norm) -> Result<NodeId, ForecastError> {
        Ok(self.g.layer_norm(x, self.ids[n.gain], self.ids[n.bias], NORM_EPS)?)
    }

    fn dropout(&mut self, x: NodeId) -> Result<NodeId, ForecastError> {
        let p = self.dropout;
        let ForwardMode::Train(rng) = &mut self.mode else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.g.value(x).shape();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.uniform(0.0, 1.0) < p { 0.0 } else { keep })
            .collect();
        let mask = self.g.constant(Matrix::from_raw(r, c, mask));
        Ok(self.g.mul(x, mask)?)
    }

    fn attention(
        &mut self,
        xq: NodeId,
        xkv: NodeId,
        block: AttentionBlock,
        q_len: usize,
        kv_len: usize,
        causal: bool,
    ) -> Result<NodeId, ForecastError> {
        let q = self.linear(xq, block.query)?;
        let k = self.linear(xkv, block.key)?;
        let v = self.linear(xkv, block.value)?;
        let a = multi_head_attention(self.g, q, k, v, self.batch, q_len, kv_len, self.heads, causal)?;
        self.linear(a, block.out)
    }

    fn feed_forward(&mut self, x: NodeId, ff1: Linear, ff2: Linear) -> Result<NodeId, ForecastError> {
        let h = self.linear(x, ff1)?;
        let h = self.g.gelu(h);
        let h = self.dropout(h)?;
        self.linear(h, ff2)
    }

    fn residual_norm(&mut self, x: NodeId, sub: NodeId, n: Norm) -> Result<NodeId, ForecastError> {
        let sub = self.dropout(sub)?;
        let s = self.g.add(x, sub)?;
        self.norm(s, n)
    }
}

impl ForecastModel {
    /// Builds a model with weights drawn from `U(±1/√fan_in)` using
    /// `config.seed`.
    pub fn new(config: TransformerConfig) -> Result<Self, ForecastError> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let d = config.d_model;
        let mut b = Builder {
            rng: &mut rng,
            params: Vec::new(),
            names: Vec::new(),
        };
        let enc_embed = b.linear("enc_embed", config.input_channels, d);
        let dec_embed = b.linear("dec_embed", config.input_channels, d);
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderLayer {
                    attn: b.attention(&format!("{p}.attn"), d),
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, config.d_ff),
                    ff2: b.linear(&format!("{p}.ff2"), config.d_ff, d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let decoder = (0..config.decoder_layers)
            .map(|i| {
                let p = format!("decoder.{i}");
                DecoderLayer {
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, config.d_ff),
                    ff2: b.linear(&format!("{p}.ff2"), config.d_ff, d),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let head = b.linear("head", d, 1);
        let Builder { params, names, .. } = b;
        Ok(Self {
            config,
            params,
            names,
            layout: Layout {
                enc_embed,
                dec_embed,
                encoder,
                enc_norm,
                decoder,
                dec_norm,
                head,
            },
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    /// Replaces every parameter; shapes must match.
    pub fn set_params(&mut self, params: Vec<Matrix>) -> Result<(), ForecastError> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(ForecastError::Checkpoint("parameter shapes do not match config".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Zeros every parameter whose name starts with `prefix`.
    pub fn zero_params(&mut self, prefix: &str) {
        for (p, n) in self.params.iter_mut().zip(&self.names) {
            if n.starts_with(prefix) {
                *p = Matrix::zeros(p.rows(), p.cols());
            }
        }
    }

    fn check_batch(&self, batch: &WindowBatch) -> Result<(), ForecastError> {
        let c = &self.config;
        let b = batch.size;
        let ok = batch.encoder_input.shape() == (b * c.lookback, c.input_channels)
            && batch.decoder_input.shape() == (b * (c.label_len + c.horizon), c.input_channels)
            && batch.horizon_target.shape() == (b, c.horizon);
        if !ok || b == 0 {
            return Err(ForecastError::BatchMismatch(format!(
                "batch of {b}: encoder {:?}, decoder {:?}; config expects L={}, label={}, F={}, C={}",
                batch.encoder_input.shape(),
                batch.decoder_input.shape(),
                c.lookback,
                c.label_len,
                c.horizon,
                c.input_channels
            )));
        }
        Ok(())
    }

    /// Registers all parameters on `g` as trainable leaves.
    pub fn register(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Encoder input embedding (value projection plus positions) for `batch`.
    pub fn encoder_embedding(&self, batch: &WindowBatch) -> Result<Matrix, ForecastError> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let ids = self.register(&mut g);
        let mut ctx = Ctx {
            g: &mut g,
            ids,
            mode: ForwardMode::Eval,
            dropout: 0.0,
            heads: self.config.n_heads,
            batch: batch.size,
        };
        let x = ctx.g.constant(batch.encoder_input.clone());
        let e = self.embed(&mut ctx, x, self.layout.enc_embed, self.config.lookback)?;
        Ok(g.value(e).clone())
    }

    fn embed(&self, ctx: &mut Ctx, x: NodeId, l: Linear, len: usize) -> Result<NodeId, ForecastError> {
        let e = ctx.linear(x, l)?;
        let pe = tiled(&positional_encoding(len, self.config.d_model), ctx.batch);
        let pe = ctx.g.constant(pe);
        let e = ctx.g.add(e, pe)?;
        ctx.dropout(e)
    }

    /// Full forward pass. Returns the `size·F × 1` horizon predictions and
    /// the `size·(label_len + F) × 1` head output over every decoder position.
    pub fn forward_full(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        batch: &WindowBatch,
        mode: ForwardMode,
    ) -> Result<(NodeId, NodeId), ForecastError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let dec_len = c.label_len + c.horizon;
        let mut ctx = Ctx {
            g,
            ids: ids.to_vec(),
            mode,
            dropout: c.dropout,
            heads: c.n_heads,
            batch: batch.size,
        };

        let x = ctx.g.constant(batch.encoder_input.clone());
        let mut enc = self.embed(&mut ctx, x, self.layout.enc_embed, c.lookback)?;
        for layer in &self.layout.encoder {
            let a = ctx.attention(enc, enc, layer.attn, c.lookback, c.lookback, false)?;
            enc = ctx.residual_norm(enc, a, layer.norm1)?;
            let f = ctx.feed_forward(enc, layer.ff1, layer.ff2)?;
            enc = ctx.residual_norm(enc, f, layer.norm2)?;
        }
        let enc = ctx.norm(enc, self.layout.enc_norm)?;

        let y = ctx.g.constant(batch.decoder_input.clone());
        let mut dec = self.embed(&mut ctx, y, self.layout.dec_embed, dec_len)?;
        for layer in &self.layout.decoder {
            let s = ctx.attention(dec, dec, layer.self_attn, dec_len, dec_len, true)?;
            dec = ctx.residual_norm(dec, s, layer.norm1)?;
            let x = ctx.attention(dec, enc, layer.cross_attn, dec_len, c.lookback, false)?;
            dec = ctx.residual_norm(dec, x, layer.norm2)?;
            let f = ctx.feed_forward(dec, layer.ff1, layer.ff2)?;
            dec = ctx.residual_norm(dec, f, layer.norm3)?;
        }
        let dec = ctx.norm(dec, self.layout.dec_norm)?;
        let out = ctx.linear(dec, self.layout.head)?;

        let rows: Vec<usize> = (0..batch.size)
            .flat_map(|b| (c.label_len..dec_len).map(move |t| b * dec_len + t))
            .collect();
        let pred = ctx.g.gather_rows(out, &rows)?;
        Ok((pred, out))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        batch: &WindowBatch,
        mode: ForwardMode,
    ) -> Result<NodeId, ForecastError> {
        self.forward_full(g, ids, batch, mode).map(|(p, _)| p)
    }

    /// Per-layer parameter counts `(encoder layer, decoder layer)`.
    pub fn layer_parameter_counts(config: &TransformerConfig) -> (usize, usize) {
        let d = config.d_model;
        let f = config.d_ff;
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let ff = d * f + f + f * d + d;
        (attn + ff + 2 * norm, 2 * attn + ff + 3 * norm)
    }
}
