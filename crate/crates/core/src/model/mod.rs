//! The UniConv network: shared encoders, the bi-level state tracker and the
//! act/response generator, with per-turn losses.

pub mod bdst;
pub mod darg;
pub mod encoder;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uniconv_numcore::{Graph, ParamStore, Reduction, Tensor, Var};

use crate::config::{ModelConfig, TaskMode};
use crate::corpus::{make_context, Dataset, DialogueTurn};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::ontology::{DialogueState, Ontology, SlotKind};
use crate::vocab::{build_vocab, Vocab, BOS_ID, EMPTY, EOS_ID};
use bdst::{Bdst, DstInputs};
use darg::{Darg, GenInputs, GenVars};
use encoder::Encoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Slot,
    Domain,
    Fusion,
    Generator,
}

/// Attention weights collected during a forward pass:
/// `(level, block, sublayer, weights [heads, queries, keys])`.
pub type RawTrace = Vec<(Level, usize, &'static str, Tensor)>;

/// Where the state and response inputs of a turn came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Gold,
    Predicted,
}

/// Token ids of one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnInput {
    pub ctx: Vec<usize>,
    pub utt: Vec<usize>,
    pub prev_state: Vec<usize>,
    /// Serialised current state, read by the generator in c2t mode.
    pub cur_state: Vec<usize>,
    pub db_bins: Vec<usize>,
    /// `[<bos>, tokens..., <eos>]` in the response vocabulary.
    pub response: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnTargets {
    /// Value ids plus the end token, per inform pair.
    pub inform: Vec<Vec<usize>>,
    /// Per request pair.
    pub request: Vec<f64>,
    /// Multi-hot over the ontology acts.
    pub acts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub dialogue_id: String,
    pub turn: usize,
    pub input: TurnInput,
    pub targets: TurnTargets,
}

/// Per-turn loss terms (each a sum over its tokens or labels).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub inform: f64,
    pub request: f64,
    pub response: f64,
    pub act: f64,
}

impl LossParts {
    pub fn dst(&self) -> f64 {
        self.inform + self.request
    }

    pub fn gen(&self) -> f64 {
        self.response + self.act
    }

    pub fn total(&self) -> f64 {
        self.dst() + self.gen()
    }

    pub fn add(&mut self, o: &LossParts) {
        self.inform += o.inform;
        self.request += o.request;
        self.response += o.response;
        self.act += o.act;
    }

    pub fn scale(&mut self, s: f64) {
        self.inform *= s;
        self.request *= s;
        self.response *= s;
        self.act *= s;
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub dst: Option<Var>,
    pub gen: Option<GenVars>,
    pub ctx: Var,
    pub utt: Var,
}

#[derive(Debug, Clone)]
pub struct UniConv {
    pub config: ModelConfig,
    pub ontology: Ontology,
    pub src_vocab: Vocab,
    pub res_vocab: Vocab,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub bdst: Bdst,
    pub darg: Darg,
    /// Source ids of the slot tokens, in ontology order.
    pub slot_ids: Vec<usize>,
    pub domain_ids: Vec<usize>,
    /// Positions (into the ontology pairs) of inform and request pairs.
    pub inform_pos: Vec<usize>,
    pub request_pos: Vec<usize>,
}

impl UniConv {
    /// Fresh model with parameters drawn from a generator seeded by `seed`.
    pub fn new(config: ModelConfig, ontology: Ontology, src_vocab: Vocab, res_vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, config.d, src_vocab.len(), res_vocab.len(), &mut rng)?;
        let bdst = Bdst::new(&mut store, &config, src_vocab.len(), &mut rng)?;
        let darg = Darg::new(&mut store, &config, ontology.domains().len(), ontology.acts().len(), res_vocab.len(), &mut rng)?;
        let mut slot_ids = Vec::with_capacity(ontology.slots().len());
        for s in ontology.slots() {
            slot_ids.push(
                src_vocab
                    .get(&s.token())
                    .ok_or_else(|| Error::Ontology(format!("slot token {} missing from vocabulary", s.token())))?,
            );
        }
        let mut domain_ids = Vec::with_capacity(ontology.domains().len());
        for d in ontology.domains() {
            domain_ids.push(
                src_vocab
                    .get(d)
                    .ok_or_else(|| Error::Ontology(format!("domain token {d} missing from vocabulary")))?,
            );
        }
        let inform_pos = ontology.pairs_of_kind(SlotKind::Inform);
        let request_pos = ontology.pairs_of_kind(SlotKind::Request);
        Ok(Self {
            config,
            ontology,
            src_vocab,
            res_vocab,
            store,
            encoder,
            bdst,
            darg,
            slot_ids,
            domain_ids,
            inform_pos,
            request_pos,
        })
    }

    /// Fresh model with vocabularies built from the training split.
    pub fn for_dataset(config: ModelConfig, ds: &Dataset, min_count: usize, seed: u64) -> Result<Self> {
        let tags: Vec<String> = ds.delex.tags().iter().cloned().collect();
        let (src, res) = build_vocab(&ds.corpus.train, &ds.ontology, &tags, min_count);
        Self::new(config, ds.ontology.clone(), src, res, seed)
    }

    /// Source ids of a serialised state; the empty state is one placeholder.
    pub fn state_ids(&self, state: &DialogueState) -> Result<Vec<usize>> {
        let toks = state.serialize(&self.ontology)?;
        if toks.is_empty() {
            return Ok(vec![self.src_vocab.id(EMPTY)]);
        }
        Ok(self.src_vocab.ids(&toks))
    }

    /// `[<bos>, ids..., <eos>]`, truncated to the maximum response length.
    pub fn response_ids(&self, delex: &[String]) -> Vec<usize> {
        let n = delex.len().min(self.config.max_response_len);
        let mut out = Vec::with_capacity(n + 2);
        out.push(BOS_ID);
        out.extend(self.res_vocab.ids(&delex[..n]));
        out.push(EOS_ID);
        out
    }

    /// Teacher-forced example of a corpus turn: gold previous state, gold
    /// database vector of the current state, gold response.
    pub fn example(&self, turn: &DialogueTurn, kb: &KnowledgeBase) -> Result<Example> {
        let ont = &self.ontology;
        let ctx = make_context(turn, self.config.context_mode);
        let mut inform = Vec::with_capacity(self.inform_pos.len());
        for &p in &self.inform_pos {
            let (d, s) = ont.pairs()[p];
            let v = turn.state.inform_or_none(&ont.domains()[d], &ont.slots()[s].name);
            let mut ids = self.src_vocab.ids(&v);
            ids.push(EOS_ID);
            inform.push(ids);
        }
        let request = self
            .request_pos
            .iter()
            .map(|&p| {
                let (d, s) = ont.pairs()[p];
                let hit = turn
                    .state
                    .domains
                    .get(&ont.domains()[d])
                    .is_some_and(|ds| ds.request.contains(&ont.slots()[s].name));
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let acts = ont.act_vector(&turn.acts)?.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Example {
            dialogue_id: turn.dialogue_id.clone(),
            turn: turn.index,
            input: TurnInput {
                ctx: self.src_vocab.ids(&ctx),
                utt: self.src_vocab.ids(&turn.user),
                prev_state: self.state_ids(&turn.prev_state)?,
                cur_state: self.state_ids(&turn.state)?,
                db_bins: kb.db_vector(ont, &turn.state).bins,
                response: self.response_ids(&turn.delex),
                provenance: Provenance::Gold,
            },
            targets: TurnTargets { inform, request, acts },
        })
    }

    /// Encodes the tracker inputs.
    pub fn dst_inputs(&self, g: &mut Graph, prev_state: &[usize], ctx: Var, utt: Var, dropout: f64) -> Result<DstInputs> {
        Ok(DstInputs {
            ctx,
            utt,
            prev_state: self.encoder.encode(g, &self.store, prev_state, dropout)?,
            slots: self.encoder.encode_flat(g, &self.store, &self.slot_ids)?,
            domains: self.encoder.encode_flat(g, &self.store, &self.domain_ids)?,
        })
    }

    /// Fused tracker features `[|DS|, d]`.
    pub fn dst_features(&self, g: &mut Graph, x: &DstInputs, dropout: f64, mut trace: Option<&mut RawTrace>) -> Result<Var> {
        let store = &self.store;
        let zs = self.bdst.slot_level(g, store, x, dropout, trace.as_deref_mut())?;
        let zd = if self.config.bilevel {
            Some(self.bdst.domain_level(g, store, x, dropout, trace.as_deref_mut())?)
        } else {
            None
        };
        self.bdst.fuse(g, store, zd, zs, self.ontology.pairs(), dropout, trace)
    }

    /// Forward pass of every component `mode` uses.
    pub fn forward(&self, g: &mut Graph, input: &TurnInput, mode: TaskMode, dropout: f64, mut trace: Option<&mut RawTrace>) -> Result<Forward> {
        let store = &self.store;
        let ctx = self.encoder.encode(g, store, &input.ctx, dropout)?;
        let utt = self.encoder.encode(g, store, &input.utt, dropout)?;
        let dst = match mode {
            TaskMode::C2t => None,
            _ => {
                let x = self.dst_inputs(g, &input.prev_state, ctx, utt, dropout)?;
                Some(self.dst_features(g, &x, dropout, trace.as_deref_mut())?)
            }
        };
        let gen = match mode {
            TaskMode::Dst => None,
            _ => {
                let state = match dst {
                    Some(z) => z,
                    None => self.encoder.encode(g, store, &input.cur_state, dropout)?,
                };
                let db = self.darg.embed_db(g, store, &input.db_bins)?;
                let resp_in = &input.response[..input.response.len() - 1];
                let x = GenInputs { ctx, utt, state, db };
                Some(self.darg.forward(g, store, &self.encoder, resp_in, &x, dropout, trace)?)
            }
        };
        Ok(Forward { dst, gen, ctx, utt })
    }

    /// Scalar loss of one example and its parts. Every term is a sum over
    /// its tokens or labels; response tokens use label smoothing.
    pub fn loss(&self, g: &mut Graph, ex: &Example, mode: TaskMode, smoothing: f64, dropout: f64) -> Result<(Var, LossParts)> {
        if ex.input.response.len() < 2 {
            return Err(Error::Data(format!("{} turn {}: response lacks begin/end tokens", ex.dialogue_id, ex.turn)));
        }
        let f = self.forward(g, &ex.input, mode, dropout, None)?;
        let mut terms = Vec::with_capacity(4);
        let mut parts = LossParts::default();
        if let Some(z) = f.dst {
            let e = g.param(&self.store, self.encoder.src_embed);
            let inf = self.bdst.inform_loss(g, &self.store, e, z, &self.inform_pos, &ex.targets.inform)?;
            parts.inform = g.value(inf).data()[0];
            terms.push(inf);
            if !self.request_pos.is_empty() {
                let p = self.bdst.request_probs(g, &self.store, z, &self.request_pos)?;
                let req = g.binary_cross_entropy(p, &ex.targets.request, Reduction::Sum)?;
                parts.request = g.value(req).data()[0];
                terms.push(req);
            }
        }
        if let Some(gen) = f.gen {
            let targets = &ex.input.response[1..];
            let res = g.cross_entropy(gen.logits, targets, smoothing, None, Reduction::Sum)?;
            parts.response = g.value(res).data()[0];
            terms.push(res);
            if self.config.act_loss && !ex.targets.acts.is_empty() {
                let act = g.binary_cross_entropy(gen.acts, &ex.targets.acts, Reduction::Sum)?;
                parts.act = g.value(act).data()[0];
                terms.push(act);
            }
        }
        let total = g.add_all(&terms)?;
        Ok((total, parts))
    }
}
