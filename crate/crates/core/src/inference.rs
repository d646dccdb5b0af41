//! Turn-by-turn decoding: state tracking, database lookup, beam-search
//! response generation, act prediction and lexicalisation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uniconv_numcore::{Graph, Tensor, Var};

use crate::config::TaskMode;
use crate::corpus::{changed_domain, context_tokens, Dialogue};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::darg::GenInputs;
use crate::model::{Level, RawTrace, UniConv};
use crate::ontology::{DialogueState, SlotKind, NONE_VALUE};
use crate::vocab::{BOS_ID, EOS_ID, RESERVED, SYSTEM_SEP, USER_SEP};

/// Result of [`beam_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    /// Emitted tokens, ending with the end token unless truncated.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / len^alpha`.
    pub score: f64,
    /// No hypothesis ended within `max_len`.
    pub truncated: bool,
}

fn normalised(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(alpha)
}

/// Beam search over a next-token model. `step` maps a prefix (starting with
/// `bos`) to log probabilities of the next token. Stops once `beam`
/// hypotheses have ended or after `max_len` tokens.
pub fn beam_search<F>(mut step: F, bos: usize, eos: usize, beam: usize, max_len: usize, alpha: f64) -> Result<BeamResult>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![bos], 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (h, (prefix, lp)) in live.iter().enumerate() {
            let next = step(prefix)?;
            cands.extend(next.iter().enumerate().map(|(t, &l)| (h, t, lp + l)));
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next_live = Vec::with_capacity(beam);
        for (rank, &(h, t, lp)) in cands.iter().enumerate() {
            if next_live.len() == beam {
                break;
            }
            let mut prefix = live[h].0.clone();
            prefix.push(t);
            if t == eos {
                if rank < beam {
                    finished.push((prefix, lp));
                }
            } else {
                next_live.push((prefix, lp));
            }
        }
        live = next_live;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
    }
    let pick = |set: &[(Vec<usize>, f64)]| -> Option<(Vec<usize>, f64, f64)> {
        let mut best: Option<(Vec<usize>, f64, f64)> = None;
        for (p, lp) in set {
            let sc = normalised(*lp, p.len() - 1, alpha);
            if best.as_ref().is_none_or(|b| sc > b.2) {
                best = Some((p.clone(), *lp, sc));
            }
        }
        best
    };
    let (best, truncated) = match pick(&finished) {
        Some(b) => (b, false),
        None => (pick(&live).expect("beam keeps at least one hypothesis"), true),
    };
    Ok(BeamResult {
        tokens: best.0[1..].to_vec(),
        log_prob: best.1,
        score: best.2,
        truncated,
    })
}

/// Attention weights of one sublayer with the token labels of both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub level: Level,
    pub block: usize,
    pub sublayer: String,
    pub queries: Vec<String>,
    pub keys: Vec<String>,
    /// `[head][query][key]`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub turn: usize,
    pub entries: Vec<TraceEntry>,
}

fn split_heads(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (h, q, k) = (s[0], s[1], s[2]);
    let d = t.data();
    (0..h)
        .map(|hi| (0..q).map(|qi| d[(hi * q + qi) * k..(hi * q + qi + 1) * k].to_vec()).collect())
        .collect()
}

/// One decoded turn, as recorded in the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub utterance: Vec<String>,
    /// State the turn was conditioned on.
    pub input_state: DialogueState,
    pub state: DialogueState,
    pub acts: Vec<String>,
    /// Probability of every ontology act, in ontology order.
    pub act_probs: Vec<f64>,
    pub delex: Vec<String>,
    pub lexical: Vec<String>,
    pub db_counts: BTreeMap<String, usize>,
    pub db_bins: Vec<usize>,
    pub active_domain: Option<String>,
    /// Some inform value hit the length cap.
    pub state_truncated: bool,
    pub response_truncated: bool,
}

/// A running conversation.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub mode: TaskMode,
    pub max_turns: usize,
    pub state: DialogueState,
    pub transcript: Vec<TurnRecord>,
    pub traces: Vec<TurnTrace>,
    prev_response: Vec<String>,
    history: Vec<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, mode: TaskMode, max_turns: usize) -> Self {
        Self {
            id: id.into(),
            mode,
            max_turns,
            state: DialogueState::new(),
            transcript: Vec::new(),
            traces: Vec::new(),
            prev_response: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Replaces the last system response seen by the context encoder, e.g.
    /// with the gold response when replaying a corpus dialogue.
    pub fn set_last_response(&mut self, tokens: Vec<String>) {
        if let Some(sys) = self.history.iter().rposition(|t| t == SYSTEM_SEP) {
            self.history.truncate(sys + 1);
            self.history.extend(tokens.iter().cloned());
        }
        self.prev_response = tokens;
    }

    /// Attention trace of a 1-based turn.
    pub fn export_trace(&self, turn: usize) -> Result<&TurnTrace> {
        self.traces
            .iter()
            .find(|t| t.turn == turn)
            .ok_or_else(|| Error::Range(format!("session {} has no trace for turn {turn}", self.id)))
    }

    /// Writes the transcript as one JSON record per line.
    pub fn write_transcript(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.transcript {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-call decoding switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOptions {
    /// Generate a response (otherwise only acts are predicted).
    pub respond: bool,
    pub trace: bool,
    pub beam_size: Option<usize>,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            respond: true,
            trace: false,
            beam_size: None,
        }
    }
}

/// Decodes turns with a model and a database.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub model: &'a UniConv,
    pub kb: &'a KnowledgeBase,
}

fn is_reserved(t: &str) -> bool {
    RESERVED.contains(&t)
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a UniConv, kb: &'a KnowledgeBase) -> Self {
        Self { model, kb }
    }

    /// Decodes the state of the current turn from tracker features `z`.
    fn decode_state(&self, g: &mut Graph, z: Var) -> Result<(DialogueState, bool)> {
        let m = self.model;
        let ont = &m.ontology;
        let e = g.param(&m.store, m.encoder.src_embed);
        let values = m.bdst.decode_inform(g, &m.store, e, z, &m.inform_pos, m.config.max_value_len)?;
        let mut state = DialogueState::new();
        let mut truncated = false;
        for (&p, (ids, cut)) in m.inform_pos.iter().zip(values) {
            truncated |= cut;
            let toks: Vec<String> = ids.iter().map(|&i| m.src_vocab.token(i).to_string()).filter(|t| !is_reserved(t)).collect();
            if toks.is_empty() || (toks.len() == 1 && toks[0] == NONE_VALUE) {
                continue;
            }
            let (d, s) = ont.pairs()[p];
            state.set_inform(&ont.domains()[d], &ont.slots()[s].name, toks);
        }
        if !m.request_pos.is_empty() {
            let probs = m.bdst.request_probs(g, &m.store, z, &m.request_pos)?;
            let pv = g.value(probs).data().to_vec();
            for (&p, pr) in m.request_pos.iter().zip(pv) {
                if pr >= m.config.request_threshold {
                    let (d, s) = ont.pairs()[p];
                    state.add_request(&ont.domains()[d], &ont.slots()[s].name);
                }
            }
        }
        state.validate(ont)?;
        Ok((state, truncated))
    }

    /// Runs one turn. `gold_state` is required in c2t mode and ignored
    /// otherwise.
    pub fn step_turn(&self, session: &mut Session, utterance: &[String], gold_state: Option<&DialogueState>, opts: StepOptions) -> Result<TurnRecord> {
        let m = self.model;
        let ont = &m.ontology;
        let turn = session.transcript.len() + 1;
        if turn > session.max_turns {
            return Err(Error::Range(format!("session {} reached its limit of {} turns", session.id, session.max_turns)));
        }
        let input_state = session.state.clone();
        let ctx_toks = context_tokens(m.config.context_mode, &session.prev_response, &session.history);
        let ctx_ids = m.src_vocab.ids(&ctx_toks);
        let utt_ids = if utterance.is_empty() {
            vec![m.src_vocab.id(crate::vocab::EMPTY)]
        } else {
            m.src_vocab.ids(utterance)
        };
        let prev_ids = m.state_ids(&input_state)?;

        let mut g = Graph::new();
        let mut raw: RawTrace = Vec::new();
        let store = &m.store;
        let ctx = m.encoder.encode(&mut g, store, &ctx_ids, 0.0)?;
        let utt = m.encoder.encode(&mut g, store, &utt_ids, 0.0)?;

        let (state, state_truncated, dst) = match session.mode {
            TaskMode::C2t => {
                let gold = gold_state.ok_or_else(|| Error::Contract("c2t decoding needs the gold current state".into()))?;
                gold.validate(ont)?;
                (gold.clone(), false, None)
            }
            _ => {
                let x = m.dst_inputs(&mut g, &prev_ids, ctx, utt, 0.0)?;
                let z = m.dst_features(&mut g, &x, 0.0, opts.trace.then_some(&mut raw))?;
                let (s, cut) = self.decode_state(&mut g, z)?;
                (s, cut, Some(z))
            }
        };
        let db = self.kb.db_vector(ont, &state);
        let mut record = TurnRecord {
            turn,
            utterance: utterance.to_vec(),
            input_state,
            active_domain: changed_domain(&session.state, &state, ont),
            state,
            acts: Vec::new(),
            act_probs: Vec::new(),
            delex: Vec::new(),
            lexical: Vec::new(),
            db_counts: ont.domains().iter().cloned().zip(db.counts.iter().copied()).collect(),
            db_bins: db.bins.clone(),
            state_truncated,
            response_truncated: false,
        };
        let mut state_labels = Vec::new();
        if session.mode != TaskMode::Dst {
            let (state_var, labels) = match dst {
                Some(z) => (z, ont.pairs().iter().map(|&(d, s)| pair_label(m, d, s)).collect()),
                None => {
                    let ids = m.state_ids(&record.state)?;
                    let v = m.encoder.encode(&mut g, store, &ids, 0.0)?;
                    (v, ids.iter().map(|&i| m.src_vocab.token(i).to_string()).collect())
                }
            };
            state_labels = labels;
            let db_var = m.darg.embed_db(&mut g, store, &db.bins)?;
            let x = GenInputs {
                ctx,
                utt,
                state: state_var,
                db: db_var,
            };
            let mark = g.len();
            let first = m.darg.forward(&mut g, store, &m.encoder, &[BOS_ID], &x, 0.0, None)?;
            record.act_probs = g.value(first.acts).data().to_vec();
            g.truncate(mark);
            let hot: Vec<bool> = record.act_probs.iter().map(|&p| p >= m.config.act_threshold).collect();
            record.acts = ont.act_labels(&hot);
            if opts.respond {
                let beam = opts.beam_size.unwrap_or(m.config.beam_size);
                let res = beam_search(
                    |prefix| {
                        let mark = g.len();
                        let out = m.darg.forward(&mut g, store, &m.encoder, prefix, &x, 0.0, None)?;
                        let logits = g.value(out.logits);
                        let lp = log_softmax(logits.row(logits.rows() - 1));
                        g.truncate(mark);
                        Ok(lp)
                    },
                    BOS_ID,
                    EOS_ID,
                    beam,
                    m.config.max_response_len + 1,
                    m.config.length_penalty,
                )?;
                record.response_truncated = res.truncated;
                let body: Vec<usize> = res.tokens.iter().copied().filter(|&t| t != EOS_ID).collect();
                record.delex = body.iter().map(|&t| m.res_vocab.token(t).to_string()).collect();
                record.lexical = lexicalize(m, self.kb, &record.delex, &record.state);
                if opts.trace {
                    let mut resp_in = vec![BOS_ID];
                    resp_in.extend(&body);
                    m.darg.forward(&mut g, store, &m.encoder, &resp_in, &x, 0.0, Some(&mut raw))?;
                }
            }
        }
        if opts.trace {
            let labels = TraceLabels {
                ctx: ctx_toks,
                utt: if utterance.is_empty() {
                    vec![crate::vocab::EMPTY.to_string()]
                } else {
                    utterance.to_vec()
                },
                prev_state: prev_ids.iter().map(|&i| m.src_vocab.token(i).to_string()).collect(),
                state: state_labels,
                response: std::iter::once("<act>".to_string())
                    .chain(std::iter::once(crate::vocab::BOS.to_string()))
                    .chain(record.delex.iter().cloned())
                    .collect(),
            };
            session.traces.push(TurnTrace {
                turn,
                entries: build_trace(m, &raw, &labels),
            });
        }

        session.history.push(USER_SEP.to_string());
        session.history.extend(utterance.iter().cloned());
        session.history.push(SYSTEM_SEP.to_string());
        session.history.extend(record.lexical.iter().cloned());
        session.prev_response = record.lexical.clone();
        session.state = record.state.clone();
        session.transcript.push(record.clone());
        Ok(record)
    }

    /// Replays the user side of a corpus dialogue. The context always holds
    /// the gold system responses, and c2t mode reads the gold states.
    pub fn replay(&self, dialogue: &Dialogue, mode: TaskMode, opts: StepOptions) -> Result<Session> {
        let mut s = Session::new(dialogue.id.clone(), mode, dialogue.turns.len().max(1));
        for t in &dialogue.turns {
            self.step_turn(&mut s, &t.user, Some(&t.state), opts)?;
            s.set_last_response(t.system.clone());
        }
        Ok(s)
    }
}

fn pair_label(m: &UniConv, d: usize, s: usize) -> String {
    format!("{}-{}", m.ontology.domains()[d], m.ontology.slots()[s].name)
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

struct TraceLabels {
    ctx: Vec<String>,
    utt: Vec<String>,
    prev_state: Vec<String>,
    state: Vec<String>,
    response: Vec<String>,
}

fn build_trace(m: &UniConv, raw: &RawTrace, l: &TraceLabels) -> Vec<TraceEntry> {
    let ont = &m.ontology;
    let slots: Vec<String> = ont.slots().iter().map(|s| s.token()).collect();
    let domains: Vec<String> = ont.domains().to_vec();
    let (nd, ns) = (domains.len(), slots.len());
    let grid: Vec<String> = (0..nd).flat_map(|d| (0..ns).map(move |s| (d, s))).map(|(d, s)| pair_label(m, d, s)).collect();
    raw.iter()
        .map(|(level, block, sub, w)| {
            let (queries, keys, weights) = match level {
                Level::Slot => (
                    slots.clone(),
                    match *sub {
                        "self" => slots.clone(),
                        "context" => l.ctx.clone(),
                        "state" => l.prev_state.clone(),
                        _ => l.utt.clone(),
                    },
                    split_heads(w),
                ),
                Level::Domain => (
                    domains.clone(),
                    match *sub {
                        "self" => domains.clone(),
                        "context" => l.ctx.clone(),
                        _ => l.utt.clone(),
                    },
                    split_heads(w),
                ),
                Level::Fusion => {
                    let heads = split_heads(w);
                    let at: Vec<usize> = ont.pairs().iter().map(|&(d, s)| d * ns + s).collect();
                    let full = heads
                        .iter()
                        .map(|h| {
                            let mut gw = vec![vec![0.0; nd * ns]; nd * ns];
                            for (qi, row) in h.iter().enumerate() {
                                for (ki, &x) in row.iter().enumerate() {
                                    gw[at[qi]][at[ki]] = x;
                                }
                            }
                            gw
                        })
                        .collect();
                    (grid.clone(), grid.clone(), full)
                }
                Level::Generator => (
                    l.response.clone(),
                    match *sub {
                        "self" => l.response.clone(),
                        "context" => l.ctx.clone(),
                        "utterance" => l.utt.clone(),
                        "state" => l.state.clone(),
                        _ => domains.clone(),
                    },
                    split_heads(w),
                ),
            };
            TraceEntry {
                level: *level,
                block: *block,
                sublayer: sub.to_string(),
                queries,
                keys,
                weights,
            }
        })
        .collect()
}

/// Replaces `domain_slot` tags by the first matching entity's attribute,
/// then by the state value, then by a visible `[slot]` placeholder.
pub fn lexicalize(m: &UniConv, kb: &KnowledgeBase, delex: &[String], state: &DialogueState) -> Vec<String> {
    let ont = &m.ontology;
    let mut out = Vec::with_capacity(delex.len());
    for tok in delex {
        let Some((domain, slot)) = tok.split_once('_').filter(|(d, s)| !s.is_empty() && ont.domain_index(d).is_some()) else {
            out.push(tok.clone());
            continue;
        };
        let from_db = kb
            .query_state(ont, domain, state)
            .ok()
            .filter(|r| !r.no_db)
            .and_then(|r| r.rows.first().copied())
            .and_then(|row| kb.table(domain).and_then(|t| t.value(row, slot)).map(str::to_string));
        match from_db {
            Some(v) => out.extend(v.split_whitespace().map(str::to_string)),
            None => match state.inform(domain, slot) {
                Some(v) if ont.is_valid(domain, slot, SlotKind::Inform) => out.extend(v.iter().cloned()),
                _ => out.push(format!("[{slot}]")),
            },
        }
    }
    out
}

/// Writes the transcripts of several sessions, one record per line.
pub fn write_transcripts(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut buf = Vec::new();
    for s in sessions {
        for r in &s.transcript {
            let mut v = serde_json::to_value(r).expect("record serialises");
            v["dialogue"] = serde_json::Value::String(s.id.clone());
            buf.extend(serde_json::to_vec(&v).expect("record serialises"));
            buf.push(b'\n');
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
