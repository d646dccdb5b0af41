#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use uniconv::corpus::Goal;
use uniconv::kb::KnowledgeBase;
use uniconv::metrics::ScoredDialogue;
use uniconv::ontology::{DialogueState, Ontology, SlotKind};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Scalar BLEU-4 written from the textbook definition.
pub fn dual_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let (mut c, mut r) = (0.0, 0.0);
    let mut num = [0.0f64; 4];
    let mut den = [0.0f64; 4];
    for (cand, rf) in cands.iter().zip(refs) {
        c += cand.len() as f64;
        r += rf.len() as f64;
        for n in 1..=4usize {
            let count = |s: &[String]| {
                let mut m: BTreeMap<String, f64> = BTreeMap::new();
                let mut i = 0;
                while i + n <= s.len() {
                    *m.entry(s[i..i + n].join("\u{1}")).or_default() += 1.0;
                    i += 1;
                }
                m
            };
            let (cc, rc) = (count(cand), count(rf));
            for (g, k) in &cc {
                num[n - 1] += k.min(*rc.get(g).unwrap_or(&0.0));
                den[n - 1] += k;
            }
        }
    }
    if c == 0.0 || num.contains(&0.0) {
        return 0.0;
    }
    let p: f64 = (0..4).map(|i| num[i] / den[i]).product();
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * p.powf(0.25)
}

fn row_matches(kb: &KnowledgeBase, domain: &str, row: usize, constraints: &[(String, String)]) -> bool {
    let t = kb.table(domain).unwrap();
    constraints.iter().all(|(s, v)| match t.value(row, s) {
        Some(x) => x == v,
        None => true,
    })
}

/// Inform and Success checked by scanning the table rows directly.
pub fn check_dialogue(goal: &Goal, states: &[DialogueState], responses: &[Vec<String>], kb: &KnowledgeBase) -> (bool, bool) {
    let mut inform = true;
    let mut success = true;
    for (domain, dg) in &goal.domains {
        if !dg.inform.is_empty() && kb.table(domain).is_some() {
            let mut offered_turn = None;
            for (t, r) in responses.iter().enumerate() {
                if r.iter().any(|w| *w == format!("{domain}_name") || *w == format!("{domain}_id")) {
                    offered_turn = Some(t);
                }
            }
            let ok = offered_turn.is_some_and(|t| {
                let mut cons = Vec::new();
                if let Some(ds) = states[t].domains.get(domain) {
                    for (s, v) in &ds.inform {
                        let v = v.join(" ");
                        if v != "dontcare" {
                            cons.push((s.clone(), v));
                        }
                    }
                }
                let first = (0..kb.table(domain).unwrap().rows.len()).find(|&r| row_matches(kb, domain, r, &cons));
                let goal_c: Vec<(String, String)> = dg
                    .inform
                    .iter()
                    .filter(|(_, v)| *v != "dontcare")
                    .map(|(s, v)| (s.clone(), v.clone()))
                    .collect();
                first.is_some_and(|r| row_matches(kb, domain, r, &goal_c))
            });
            if !ok {
                inform = false;
            }
        }
        for slot in &dg.request {
            let tag = format!("{domain}_{slot}");
            if !responses.iter().flatten().any(|w| *w == tag) {
                success = false;
            }
        }
    }
    (inform, inform && success)
}

/// Randomly damages predicted states and responses of a gold transcript.
pub fn perturb(d: &ScoredDialogue, ont: &Ontology, rng: &mut impl Rng) -> ScoredDialogue {
    let mut out = d.clone();
    let pairs = ont.pairs_of_kind(SlotKind::Inform);
    let words = ["north", "south", "cheap", "thai", "dontcare", "yes", "three"];
    for s in &mut out.pred_states {
        if rng.gen_bool(0.4) {
            let (di, si) = ont.pairs()[*pairs.choose(rng).unwrap()];
            let (dn, sn) = (ont.domains()[di].clone(), ont.slots()[si].name.clone());
            if rng.gen_bool(0.5) {
                if let Some(ds) = s.domains.get_mut(&dn) {
                    ds.inform.remove(&sn);
                    if ds.is_empty() {
                        s.domains.remove(&dn);
                    }
                }
            } else {
                s.set_inform(&dn, &sn, vec![words.choose(rng).unwrap().to_string()]);
            }
        }
    }
    for r in &mut out.pred_delex {
        if rng.gen_bool(0.3) && !r.is_empty() {
            let i = rng.gen_range(0..r.len());
            r.remove(i);
        }
        if rng.gen_bool(0.1) {
            r.push(format!("{}_name", ont.domains().choose(rng).unwrap()));
        }
    }
    out
}
