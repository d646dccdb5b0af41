//! Bi-level state tracker: slot-level and domain-level attention stacks, the
//! domain-slot fusion, and the value and request heads.

use rand::Rng;
use uniconv_numcore::{Graph, GruCell, Linear, MultiHeadAttention, ParamStore, Reduction, Var};

use super::{Level, RawTrace};
use crate::config::{ModelConfig, SlotSublayer};
use crate::error::Result;
use crate::vocab::{EOS_ID, PAD_ID, VALUE_BOS_ID};

#[derive(Debug, Clone)]
pub struct Bdst {
    pub slot_blocks: Vec<Vec<(SlotSublayer, MultiHeadAttention)>>,
    /// Self, context and utterance attention per block.
    pub domain_blocks: Vec<[MultiHeadAttention; 3]>,
    pub fuse: MultiHeadAttention,
    pub init: Linear,
    pub gru: GruCell,
    pub w_inf: Linear,
    pub w_req: Linear,
}

/// Encoded inputs of the tracker.
#[derive(Debug, Clone, Copy)]
pub struct DstInputs {
    pub ctx: Var,
    pub utt: Var,
    pub prev_state: Var,
    pub slots: Var,
    pub domains: Var,
}

pub const DOMAIN_SUBLAYERS: [&str; 3] = ["self", "context", "utterance"];

impl Bdst {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, src_vocab: usize, rng: &mut R) -> Result<Self> {
        let d = cfg.d;
        let mut slot_blocks = Vec::with_capacity(cfg.n_dst_slot);
        for b in 0..cfg.n_dst_slot {
            let mut block = Vec::with_capacity(cfg.slot_chain.len());
            for &kind in &cfg.slot_chain {
                let name = format!("bdst.slot.{b}.{}", kind.name());
                block.push((kind, MultiHeadAttention::new(store, &name, d, cfg.heads, rng)?));
            }
            slot_blocks.push(block);
        }
        let mut domain_blocks = Vec::with_capacity(cfg.n_dst_domain);
        for b in 0..cfg.n_dst_domain {
            let mk = |store: &mut ParamStore, rng: &mut R, s: &str| MultiHeadAttention::new(store, &format!("bdst.domain.{b}.{s}"), d, cfg.heads, rng);
            domain_blocks.push([mk(store, rng, "self")?, mk(store, rng, "context")?, mk(store, rng, "utterance")?]);
        }
        Ok(Self {
            slot_blocks,
            domain_blocks,
            fuse: MultiHeadAttention::new(store, "bdst.fuse", d, cfg.heads, rng)?,
            init: Linear::new(store, "bdst.value.init", d, d, true, rng)?,
            gru: GruCell::new(store, "bdst.value.gru", d, d, rng)?,
            w_inf: Linear::new(store, "bdst.value.out", d, src_vocab, true, rng)?,
            w_req: Linear::new(store, "bdst.request", d, 1, true, rng)?,
        })
    }

    /// Slot-level stack, `[|S|, d]`.
    pub fn slot_level(&self, g: &mut Graph, store: &ParamStore, x: &DstInputs, dropout: f64, mut trace: Option<&mut RawTrace>) -> Result<Var> {
        let mut z = x.slots;
        for (b, block) in self.slot_blocks.iter().enumerate() {
            for (kind, att) in block {
                let kv = match kind {
                    SlotSublayer::SelfAttn => z,
                    SlotSublayer::Context => x.ctx,
                    SlotSublayer::State => x.prev_state,
                    SlotSublayer::Utterance => x.utt,
                };
                let a = att.forward(g, store, kv, z, None, dropout)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push((Level::Slot, b, kind.name(), a.weights));
                }
                z = a.out;
            }
        }
        Ok(z)
    }

    /// Domain-level stack, `[|D|, d]`.
    pub fn domain_level(&self, g: &mut Graph, store: &ParamStore, x: &DstInputs, dropout: f64, mut trace: Option<&mut RawTrace>) -> Result<Var> {
        let mut z = x.domains;
        for (b, block) in self.domain_blocks.iter().enumerate() {
            for (att, (kv, name)) in block.iter().zip([(None, "self"), (Some(x.ctx), "context"), (Some(x.utt), "utterance")]) {
                let a = att.forward(g, store, kv.unwrap_or(z), z, None, dropout)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push((Level::Domain, b, name, a.weights));
                }
                z = a.out;
            }
        }
        Ok(z)
    }

    /// Joint features of the valid (domain, slot) pairs, `[|DS|, d]` in
    /// ontology pair order. Invalid grid positions are never materialised,
    /// which is the masked self-attention over the full grid with those
    /// rows removed from both queries and keys.
    pub fn fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        zd: Option<Var>,
        zs: Var,
        pairs: &[(usize, usize)],
        dropout: f64,
        trace: Option<&mut RawTrace>,
    ) -> Result<Var> {
        let s_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let srows = g.gather_rows(zs, &s_idx)?;
        let joint = match zd {
            Some(zd) => {
                let d_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let drows = g.gather_rows(zd, &d_idx)?;
                g.mul(drows, srows)?
            }
            None => srows,
        };
        let a = self.fuse.forward(g, store, joint, joint, None, dropout)?;
        if let Some(t) = trace {
            t.push((Level::Fusion, 0, "self", a.weights));
        }
        Ok(a.out)
    }

    /// Teacher-forced value loss (summed over tokens) for the rows of `z`
    /// listed in `pos`; `targets[k]` ends with the end token.
    pub fn inform_loss(&self, g: &mut Graph, store: &ParamStore, src_embed: Var, z: Var, pos: &[usize], targets: &[Vec<usize>]) -> Result<Var> {
        if pos.is_empty() {
            return Ok(g.constant(uniconv_numcore::Tensor::scalar(0.0))?);
        }
        let rows = g.gather_rows(z, pos)?;
        let mut h = self.init.forward(g, store, rows)?;
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut logits = Vec::with_capacity(steps);
        let mut flat_targets = Vec::with_capacity(steps * pos.len());
        for l in 0..steps {
            let inputs: Vec<usize> = targets
                .iter()
                .map(|t| match l {
                    0 => VALUE_BOS_ID,
                    _ => t.get(l - 1).copied().unwrap_or(PAD_ID),
                })
                .collect();
            let x = g.gather_rows(src_embed, &inputs)?;
            h = self.gru.step(g, store, x, h)?;
            logits.push(self.w_inf.forward(g, store, h)?);
            flat_targets.extend(targets.iter().map(|t| t.get(l).copied().unwrap_or(PAD_ID)));
        }
        let all = g.concat_rows(&logits)?;
        Ok(g.cross_entropy(all, &flat_targets, 0.0, Some(PAD_ID), Reduction::Sum)?)
    }

    /// Greedy value decoding. Returns the emitted tokens of every pair (end
    /// token excluded) and whether the pair hit `max_len` before ending.
    pub fn decode_inform(&self, g: &mut Graph, store: &ParamStore, src_embed: Var, z: Var, pos: &[usize], max_len: usize) -> Result<Vec<(Vec<usize>, bool)>> {
        let mut out: Vec<(Vec<usize>, bool)> = vec![(Vec::new(), true); pos.len()];
        if pos.is_empty() {
            return Ok(out);
        }
        let rows = g.gather_rows(z, pos)?;
        let mut h = self.init.forward(g, store, rows)?;
        let mut inputs = vec![VALUE_BOS_ID; pos.len()];
        let mut done = vec![false; pos.len()];
        for _ in 0..max_len {
            let x = g.gather_rows(src_embed, &inputs)?;
            h = self.gru.step(g, store, x, h)?;
            let logits = self.w_inf.forward(g, store, h)?;
            let lv = g.value(logits);
            for k in 0..pos.len() {
                let tok = argmax(lv.row(k));
                inputs[k] = tok;
                if done[k] {
                    continue;
                }
                if tok == EOS_ID {
                    done[k] = true;
                    out[k].1 = false;
                } else {
                    out[k].0.push(tok);
                }
            }
            if done.iter().all(|&x| x) {
                break;
            }
        }
        Ok(out)
    }

    /// Request probabilities of the rows of `z` listed in `pos`, `[R, 1]`.
    pub fn request_probs(&self, g: &mut Graph, store: &ParamStore, z: Var, pos: &[usize]) -> Result<Var> {
        let rows = g.gather_rows(z, pos)?;
        let logit = self.w_req.forward(g, store, rows)?;
        Ok(g.sigmoid(logit)?)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
