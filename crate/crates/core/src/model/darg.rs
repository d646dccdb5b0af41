//! Joint dialogue act and response generator.

use rand::Rng;
use uniconv_numcore::{causal_mask, Graph, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Var};

use super::encoder::Encoder;
use super::{Level, RawTrace};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::kb::NUM_BINS;

pub const GEN_SUBLAYERS: [&str; 5] = ["self", "context", "utterance", "state", "db"];

#[derive(Debug, Clone)]
pub struct Darg {
    /// Learned act latent, `[1, d]`, placed before the response.
    pub act_latent: ParamId,
    pub blocks: Vec<[MultiHeadAttention; 5]>,
    pub w_act: Linear,
    pub w_gen: Linear,
    pub db_bins: ParamId,
    pub db_domains: ParamId,
    db_norm: LayerNorm,
}

/// Non-response inputs of the generator.
#[derive(Debug, Clone, Copy)]
pub struct GenInputs {
    pub ctx: Var,
    pub utt: Var,
    pub state: Var,
    pub db: Var,
}

/// Act probabilities `[1, |A|]` and token logits `[L, |V_res|]`.
#[derive(Debug, Clone, Copy)]
pub struct GenVars {
    pub acts: Var,
    pub logits: Var,
}

impl Darg {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, num_domains: usize, num_acts: usize, res_vocab: usize, rng: &mut R) -> Result<Self> {
        let d = cfg.d;
        let act_latent = store.add_uniform("darg.act_latent", &[1, d], d, rng)?;
        let mut blocks = Vec::with_capacity(cfg.n_gen);
        for b in 0..cfg.n_gen {
            let mut mk = |s: &str| MultiHeadAttention::new(store, &format!("darg.{b}.{s}"), d, cfg.heads, rng);
            blocks.push([mk("self")?, mk("context")?, mk("utterance")?, mk("state")?, mk("db")?]);
        }
        Ok(Self {
            act_latent,
            blocks,
            w_act: Linear::zeros(store, "darg.act", d, num_acts)?,
            w_gen: Linear::new(store, "darg.out", d, res_vocab, true, rng)?,
            db_bins: store.add_uniform("darg.db.bins", &[NUM_BINS, d], d, rng)?,
            db_domains: store.add_uniform("darg.db.domains", &[num_domains, d], d, rng)?,
            db_norm: LayerNorm::new(store, "darg.db.norm", d)?,
        })
    }

    /// `LayerNorm(bin_embedding[bin_i] + domain_embedding[i])` per domain.
    pub fn embed_db(&self, g: &mut Graph, store: &ParamStore, bins: &[usize]) -> Result<Var> {
        let table = g.param(store, self.db_bins);
        let rows = g.gather_rows(table, bins)?;
        let tags = g.param(store, self.db_domains);
        let x = g.add(rows, tags)?;
        Ok(self.db_norm.forward(g, store, x)?)
    }

    /// Runs the stack over `[act latent; response input]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        enc: &Encoder,
        resp_in: &[usize],
        x: &GenInputs,
        dropout: f64,
        mut trace: Option<&mut RawTrace>,
    ) -> Result<GenVars> {
        let emb = enc.encode_response(g, store, resp_in, dropout)?;
        let latent = g.param(store, self.act_latent);
        let mut z = g.concat_rows(&[latent, emb])?;
        let len = resp_in.len() + 1;
        let mask = causal_mask(len);
        for (b, block) in self.blocks.iter().enumerate() {
            for (i, att) in block.iter().enumerate() {
                let (kv, m) = match i {
                    0 => (z, Some(mask.as_slice())),
                    1 => (x.ctx, None),
                    2 => (x.utt, None),
                    3 => (x.state, None),
                    _ => (x.db, None),
                };
                let a = att.forward(g, store, kv, z, m, dropout)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push((Level::Generator, b, GEN_SUBLAYERS[i], a.weights));
                }
                z = a.out;
            }
        }
        let head = g.slice_rows(z, 0, 1)?;
        let act_logits = self.w_act.forward(g, store, head)?;
        let acts = g.sigmoid(act_logits)?;
        let body = g.slice_rows(z, 1, resp_in.len())?;
        let logits = self.w_gen.forward(g, store, body)?;
        Ok(GenVars { acts, logits })
    }
}
