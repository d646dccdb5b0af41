//! Joint and slot accuracy, request F1, act exact match, Inform, Success and
//! corpus BLEU, with per-domain, single/multi-domain and per-turn views.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TaskMode;
use crate::corpus::{Dialogue, Goal};
use crate::error::{Error, Result};
use crate::inference::{Engine, Session, StepOptions};
use crate::kb::KnowledgeBase;
use crate::model::UniConv;
use crate::ontology::{DialogueState, Ontology, SlotKind, NONE_VALUE};
use crate::text::normalize_value;

fn aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{a} predicted turns against {b} gold turns")));
    }
    Ok(())
}

fn normalised_triples(s: &DialogueState) -> BTreeSet<(String, String, String)> {
    s.inform_triples().into_iter().map(|(d, sl, v)| (d, sl, normalize_value(&v))).collect()
}

/// Fraction of turns whose inform triples match exactly.
pub fn joint_accuracy(pred: &[DialogueState], gold: &[DialogueState]) -> Result<f64> {
    aligned(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| normalised_triples(p) == normalised_triples(g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn value_or_none(s: &DialogueState, d: &str, slot: &str) -> String {
    s.inform(d, slot)
        .map(|v| normalize_value(&v.join(" ")))
        .unwrap_or_else(|| NONE_VALUE.to_string())
}

/// Fraction of (turn, inform pair) cells whose value matches, `none` included.
pub fn slot_accuracy(pred: &[DialogueState], gold: &[DialogueState], ont: &Ontology) -> Result<f64> {
    slot_accuracy_over(pred, gold, ont, &ont.pairs_of_kind(SlotKind::Inform))
}

fn slot_accuracy_over(pred: &[DialogueState], gold: &[DialogueState], ont: &Ontology, pairs: &[usize]) -> Result<f64> {
    aligned(pred.len(), gold.len())?;
    let cells = gold.len() * pairs.len();
    if cells == 0 {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (p, g) in pred.iter().zip(gold) {
        for &k in pairs {
            let (d, s) = ont.pairs()[k];
            let (dn, sn) = (&ont.domains()[d], &ont.slots()[s].name);
            if value_or_none(p, dn, sn) == value_or_none(g, dn, sn) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / cells as f64)
}

fn requests(s: &DialogueState) -> BTreeSet<(String, String)> {
    s.domains
        .iter()
        .flat_map(|(d, ds)| ds.request.iter().map(move |r| (d.clone(), r.clone())))
        .collect()
}

/// Micro F1 of requested (domain, slot) pairs; 1 when neither side has any.
pub fn request_f1(pred: &[DialogueState], gold: &[DialogueState]) -> Result<f64> {
    aligned(pred.len(), gold.len())?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (requests(p), requests(g));
        tp += p.intersection(&g).count();
        fp += p.difference(&g).count();
        fne += g.difference(&p).count();
    }
    if tp + fp + fne == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
}

/// Fraction of turns whose predicted act set equals the gold set.
pub fn act_exact_match(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    aligned(pred.len(), gold.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let set = |v: &Vec<String>| v.iter().cloned().collect::<BTreeSet<_>>();
    let hits = pred.iter().zip(gold).filter(|(p, g)| set(p) == set(g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn ngrams(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with one reference per candidate and no smoothing.
pub fn corpus_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    aligned(cands.len(), refs.len())?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, k) in ngrams(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    Ok(bp * log_p.exp())
}

/// Predictions and gold annotations of one dialogue, aligned by turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDialogue {
    pub id: String,
    pub domains: Vec<String>,
    pub goal: Option<Goal>,
    pub gold_states: Vec<DialogueState>,
    pub pred_states: Vec<DialogueState>,
    pub gold_acts: Vec<Vec<String>>,
    pub pred_acts: Vec<Vec<String>>,
    pub gold_delex: Vec<Vec<String>>,
    pub pred_delex: Vec<Vec<String>>,
}

impl ScoredDialogue {
    pub fn new(d: &Dialogue, s: &Session) -> Result<Self> {
        aligned(s.transcript.len(), d.turns.len())?;
        Ok(Self {
            id: d.id.clone(),
            domains: d.domains.clone(),
            goal: d.goal.clone(),
            gold_states: d.turns.iter().map(|t| t.state.clone()).collect(),
            pred_states: s.transcript.iter().map(|r| r.state.clone()).collect(),
            gold_acts: d.turns.iter().map(|t| t.acts.clone()).collect(),
            pred_acts: s.transcript.iter().map(|r| r.acts.clone()).collect(),
            gold_delex: d.turns.iter().map(|t| t.delex.clone()).collect(),
            pred_delex: s.transcript.iter().map(|r| r.delex.clone()).collect(),
        })
    }

    /// The gold dialogue scored against itself.
    pub fn oracle(d: &Dialogue) -> Self {
        Self {
            id: d.id.clone(),
            domains: d.domains.clone(),
            goal: d.goal.clone(),
            gold_states: d.turns.iter().map(|t| t.state.clone()).collect(),
            pred_states: d.turns.iter().map(|t| t.state.clone()).collect(),
            gold_acts: d.turns.iter().map(|t| t.acts.clone()).collect(),
            pred_acts: d.turns.iter().map(|t| t.acts.clone()).collect(),
            gold_delex: d.turns.iter().map(|t| t.delex.clone()).collect(),
            pred_delex: d.turns.iter().map(|t| t.delex.clone()).collect(),
        }
    }
}

/// Outcome of the task-success check of one dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskOutcome {
    pub inform: bool,
    pub success: bool,
}

/// Inform and Success of one dialogue, or `None` without a goal.
///
/// For every goal domain with constraints and a database, the offered
/// entity is the first row of the query on the state of the last turn whose
/// response carries a `domain_name` or `domain_id` tag; Inform requires each
/// such entity to satisfy the goal constraints. Success further requires the
/// tag of every requested slot to appear in some response.
pub fn task_outcome(
    goal: Option<&Goal>,
    states: &[DialogueState],
    responses: &[Vec<String>],
    kb: &KnowledgeBase,
    ont: &Ontology,
    only_domain: Option<&str>,
) -> Result<Option<TaskOutcome>> {
    let Some(goal) = goal else { return Ok(None) };
    aligned(states.len(), responses.len())?;
    let mut inform = true;
    let mut success = true;
    for (domain, dg) in &goal.domains {
        if only_domain.is_some_and(|d| d != domain) || ont.domain_index(domain).is_none() {
            continue;
        }
        if !dg.inform.is_empty() && kb.table(domain).is_some() {
            let tags = [format!("{domain}_name"), format!("{domain}_id")];
            let offered = responses.iter().rposition(|r| r.iter().any(|t| tags.contains(t)));
            let ok = match offered {
                Some(t) => {
                    let row = kb.query_state(ont, domain, &states[t])?.rows.first().copied();
                    let goal_c: Vec<(String, String)> = dg.inform.iter().map(|(s, v)| (s.clone(), v.clone())).collect();
                    let satisfying = kb.query(ont, domain, &goal_c)?.rows;
                    row.is_some_and(|r| satisfying.contains(&r))
                }
                None => false,
            };
            inform &= ok;
        }
        for r in &dg.request {
            let tag = format!("{domain}_{r}");
            if !responses.iter().any(|resp| resp.contains(&tag)) {
                success = false;
            }
        }
    }
    Ok(Some(TaskOutcome {
        inform,
        success: inform && success,
    }))
}

/// Inform and Success rates over dialogues with goals, plus the number of
/// dialogues without one.
pub fn inform_success(dialogues: &[ScoredDialogue], kb: &KnowledgeBase, ont: &Ontology) -> Result<(f64, f64, usize)> {
    rates(dialogues, kb, ont, None)
}

fn rates(dialogues: &[ScoredDialogue], kb: &KnowledgeBase, ont: &Ontology, only: Option<&str>) -> Result<(f64, f64, usize)> {
    let (mut n, mut inf, mut suc, mut excluded) = (0usize, 0usize, 0usize, 0usize);
    for d in dialogues {
        match task_outcome(d.goal.as_ref(), &d.pred_states, &d.pred_delex, kb, ont, only)? {
            Some(o) => {
                n += 1;
                inf += o.inform as usize;
                suc += o.success as usize;
            }
            None => excluded += 1,
        }
    }
    if n == 0 {
        return Ok((0.0, 0.0, excluded));
    }
    Ok((inf as f64 / n as f64, suc as f64 / n as f64, excluded))
}

/// Metric values of one slice of the corpus; absent entries do not apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub dialogues: usize,
    pub turns: usize,
    pub joint: Option<f64>,
    pub slot: Option<f64>,
    pub inform: Option<f64>,
    pub success: Option<f64>,
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: TaskMode,
    pub overall: MetricRow,
    pub request_f1: Option<f64>,
    pub act_exact_match: Option<f64>,
    /// Dialogues left out of Inform/Success for lack of a goal.
    pub excluded: usize,
    pub per_domain: Vec<MetricRow>,
    pub single_domain: MetricRow,
    pub multi_domain: MetricRow,
    /// (turn index, joint accuracy)
    pub joint_by_turn: Vec<(usize, f64)>,
    /// (turn index, BLEU)
    pub bleu_by_turn: Vec<(usize, f64)>,
}

fn restrict(s: &DialogueState, domain: &str) -> DialogueState {
    let mut out = DialogueState::new();
    if let Some(ds) = s.domains.get(domain) {
        out.domains.insert(domain.to_string(), ds.clone());
    }
    out
}

fn flat<T: Clone>(ds: &[&ScoredDialogue], f: impl Fn(&ScoredDialogue) -> &Vec<T>) -> Vec<T> {
    ds.iter().flat_map(|d| f(d).iter().cloned()).collect()
}

fn row(name: &str, ds: &[&ScoredDialogue], mode: TaskMode, kb: &KnowledgeBase, ont: &Ontology) -> Result<MetricRow> {
    if ds.is_empty() {
        return Ok(MetricRow {
            name: name.to_string(),
            ..Default::default()
        });
    }
    let dst = mode != TaskMode::C2t;
    let gen = mode != TaskMode::Dst;
    let gold = flat(ds, |d| &d.gold_states);
    let pred = flat(ds, |d| &d.pred_states);
    let owned: Vec<ScoredDialogue> = ds.iter().map(|d| (*d).clone()).collect();
    let (inform, success) = if gen {
        let (i, s, _) = rates(&owned, kb, ont, None)?;
        (Some(i), Some(s))
    } else {
        (None, None)
    };
    Ok(MetricRow {
        name: name.to_string(),
        dialogues: ds.len(),
        turns: gold.len(),
        joint: if dst { Some(joint_accuracy(&pred, &gold)?) } else { None },
        slot: if dst { Some(slot_accuracy(&pred, &gold, ont)?) } else { None },
        inform,
        success,
        bleu: if gen {
            Some(corpus_bleu(&flat(ds, |d| &d.pred_delex), &flat(ds, |d| &d.gold_delex))?)
        } else {
            None
        },
    })
}

/// Scores a set of dialogues decoded in `mode`.
pub fn evaluate(dialogues: &[ScoredDialogue], mode: TaskMode, kb: &KnowledgeBase, ont: &Ontology) -> Result<EvalReport> {
    let all: Vec<&ScoredDialogue> = dialogues.iter().collect();
    let mut overall = row("overall", &all, mode, kb, ont)?;
    let excluded = dialogues.iter().filter(|d| d.goal.is_none()).count();
    let dst = mode != TaskMode::C2t;
    let gen = mode != TaskMode::Dst;
    if !gen {
        overall.inform = None;
    }

    let mut per_domain = Vec::new();
    for domain in ont.domains() {
        let with: Vec<&ScoredDialogue> = all.iter().copied().filter(|d| d.domains.contains(domain)).collect();
        if with.is_empty() {
            continue;
        }
        let mut r = MetricRow {
            name: domain.clone(),
            dialogues: with.len(),
            ..Default::default()
        };
        if dst {
            let gold: Vec<DialogueState> = flat(&with, |d| &d.gold_states).iter().map(|s| restrict(s, domain)).collect();
            let pred: Vec<DialogueState> = flat(&with, |d| &d.pred_states).iter().map(|s| restrict(s, domain)).collect();
            let di = ont.domain_index(domain).expect("ontology domain");
            let pairs: Vec<usize> = ont.pairs_of_kind(SlotKind::Inform).into_iter().filter(|&k| ont.pairs()[k].0 == di).collect();
            r.turns = gold.len();
            r.joint = Some(joint_accuracy(&pred, &gold)?);
            r.slot = Some(slot_accuracy_over(&pred, &gold, ont, &pairs)?);
        }
        if gen && kb.table(domain).is_some() {
            let single: Vec<ScoredDialogue> = with.iter().filter(|d| d.domains.len() == 1).map(|d| (*d).clone()).collect();
            if single.iter().any(|d| d.goal.is_some()) {
                let (i, s, _) = rates(&single, kb, ont, Some(domain))?;
                r.inform = Some(i);
                r.success = Some(s);
            }
        }
        per_domain.push(r);
    }

    let single: Vec<&ScoredDialogue> = all.iter().copied().filter(|d| d.domains.len() <= 1).collect();
    let multi: Vec<&ScoredDialogue> = all.iter().copied().filter(|d| d.domains.len() > 1).collect();
    let single_domain = row("single-domain", &single, mode, kb, ont)?;
    let multi_domain = row("multi-domain", &multi, mode, kb, ont)?;

    let mut by_turn: BTreeMap<usize, (Vec<DialogueState>, Vec<DialogueState>, Vec<Vec<String>>, Vec<Vec<String>>)> = BTreeMap::new();
    for d in dialogues {
        for t in 0..d.gold_states.len() {
            let e = by_turn.entry(t + 1).or_default();
            e.0.push(d.pred_states[t].clone());
            e.1.push(d.gold_states[t].clone());
            e.2.push(d.pred_delex[t].clone());
            e.3.push(d.gold_delex[t].clone());
        }
    }
    let mut joint_by_turn = Vec::new();
    let mut bleu_by_turn = Vec::new();
    for (t, (p, g, pd, gd)) in &by_turn {
        if dst {
            joint_by_turn.push((*t, joint_accuracy(p, g)?));
        }
        if gen {
            bleu_by_turn.push((*t, corpus_bleu(pd, gd)?));
        }
    }

    let gold_states = flat(&all, |d| &d.gold_states);
    let pred_states = flat(&all, |d| &d.pred_states);
    Ok(EvalReport {
        mode,
        overall,
        request_f1: if dst { Some(request_f1(&pred_states, &gold_states)?) } else { None },
        act_exact_match: if gen {
            Some(act_exact_match(&flat(&all, |d| &d.pred_acts), &flat(&all, |d| &d.gold_acts))?)
        } else {
            None
        },
        excluded,
        per_domain,
        single_domain,
        multi_domain,
        joint_by_turn,
        bleu_by_turn,
    })
}

/// Replays `dialogues` with `model` and scores the transcripts. Without
/// responses only the tracker and act metrics are reported.
pub fn evaluate_model(model: &UniConv, kb: &KnowledgeBase, dialogues: &[Dialogue], mode: TaskMode, opts: StepOptions) -> Result<(EvalReport, Vec<Session>)> {
    let engine = Engine::new(model, kb);
    let sessions: Vec<Session> = dialogues.par_iter().map(|d| engine.replay(d, mode, opts)).collect::<Result<_>>()?;
    let scored: Vec<ScoredDialogue> = dialogues.iter().zip(&sessions).map(|(d, s)| ScoredDialogue::new(d, s)).collect::<Result<_>>()?;
    let mut report = evaluate(&scored, mode, kb, &model.ontology)?;
    if !opts.respond {
        for r in std::iter::once(&mut report.overall)
            .chain(report.per_domain.iter_mut())
            .chain([&mut report.single_domain, &mut report.multi_domain])
        {
            r.inform = None;
            r.success = None;
            r.bleu = None;
        }
        report.bleu_by_turn.clear();
    }
    Ok((report, sessions))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

impl EvalReport {
    /// Headline metric names and values for the mode.
    pub fn headline(&self) -> Vec<(&'static str, f64)> {
        let o = &self.overall;
        [
            ("joint", o.joint),
            ("slot", o.slot),
            ("inform", o.inform),
            ("success", o.success),
            ("bleu", o.bleu),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }

    fn rows(&self) -> Vec<&MetricRow> {
        let mut rows = vec![&self.overall];
        rows.extend(&self.per_domain);
        rows.push(&self.single_domain);
        rows.push(&self.multi_domain);
        rows
    }

    /// Aligned plain-text table (percentages).
    pub fn table(&self) -> String {
        let mut out = format!("mode: {}\n", self.mode);
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "slice", "dialogues", "turns", "joint", "slot", "inform", "success", "bleu"
        );
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{:<16} {:>9} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8}",
                r.name,
                r.dialogues,
                r.turns,
                cell(r.joint),
                cell(r.slot),
                cell(r.inform),
                cell(r.success),
                cell(r.bleu)
            );
        }
        if let Some(f) = self.request_f1 {
            let _ = writeln!(out, "request F1: {:.2}", 100.0 * f);
        }
        if let Some(a) = self.act_exact_match {
            let _ = writeln!(out, "act exact match: {:.2}", 100.0 * a);
        }
        if self.excluded > 0 {
            let _ = writeln!(out, "dialogues without a goal (excluded from inform/success): {}", self.excluded);
        }
        out
    }

    /// Tab-delimited rows with raw rates; empty cells do not apply.
    pub fn tsv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("slice\tdialogues\tturns\tjoint\tslot\tinform\tsuccess\tbleu\n");
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.name,
                r.dialogues,
                r.turns,
                f(r.joint),
                f(r.slot),
                f(r.inform),
                f(r.success),
                f(r.bleu)
            );
        }
        out
    }

    /// Two-column `turn value` series for plotting.
    pub fn curve(points: &[(usize, f64)]) -> String {
        points.iter().map(|(t, v)| format!("{t}\t{v:.6}\n")).collect()
    }
}
