use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniconv::config::{ModelConfig, TaskMode};
use uniconv::corpus::Dataset;
use uniconv::inference::{beam_search, lexicalize, Engine, Session, StepOptions};
use uniconv::kb::{EntityTable, KnowledgeBase};
use uniconv::model::{Level, UniConv};
use uniconv::ontology::DialogueState;
use uniconv::synth::{generate, SyntheticSpec};

const BOS: usize = 0;
const EOS: usize = 1;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Bigram model over {bos, eos, a, b}: row = previous token.
fn bigram(table: [[f64; 4]; 4]) -> impl FnMut(&[usize]) -> uniconv::error::Result<Vec<f64>> {
    move |prefix: &[usize]| Ok(table[*prefix.last().unwrap()].iter().map(|p| p.ln()).collect())
}

fn greedy(table: &[[f64; 4]; 4], max_len: usize) -> Vec<usize> {
    let mut out = vec![];
    let mut last = BOS;
    for _ in 0..max_len {
        let row = &table[last];
        let mut best = 0;
        for t in 1..4 {
            if row[t] > row[best] {
                best = t;
            }
        }
        out.push(best);
        if best == EOS {
            break;
        }
        last = best;
    }
    out
}

/// Best finished sequence by exhaustive enumeration.
fn exhaustive(table: &[[f64; 4]; 4], max_len: usize, alpha: f64) -> (Vec<usize>, f64) {
    let mut best = (vec![], f64::NEG_INFINITY);
    let mut stack = vec![(vec![], 0.0f64, BOS)];
    while let Some((seq, lp, last)) = stack.pop() {
        for t in 1..4 {
            let p = table[last][t];
            if p <= 0.0 {
                continue;
            }
            let mut s = seq.clone();
            s.push(t);
            let l = lp + p.ln();
            if t == EOS {
                let sc = l / (s.len() as f64).powf(alpha);
                if sc > best.1 {
                    best = (s, sc);
                }
            } else if s.len() < max_len {
                stack.push((s, l, t));
            }
        }
    }
    best
}

fn random_table(rng: &mut ChaCha8Rng) -> [[f64; 4]; 4] {
    let mut t = [[0.0; 4]; 4];
    for row in &mut t {
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        row[0] = 1e-12;
        for k in 0..3 {
            row[k + 1] = w[k] / z * (1.0 - 1e-12);
        }
    }
    t
}

#[test]
fn beam_two_finds_the_enumerated_optimum_where_greedy_fails() {
    let t = [
        [1e-12, 1e-12, 0.6, 0.4],
        [1e-12, 1.0, 1e-12, 1e-12],
        [1e-12, 0.3, 0.35, 0.35],
        [1e-12, 0.9, 0.05, 0.05],
    ];
    let (oracle, _) = exhaustive(&t, 5, 0.0);
    assert_eq!(oracle, vec![3, EOS]);
    let r = beam_search(bigram(t), BOS, EOS, 2, 5, 0.0).unwrap();
    assert_eq!(r.tokens, oracle);
    assert!(!r.truncated);
    assert!((r.log_prob - 0.36f64.ln()).abs() < 1e-9);
    let g = beam_search(bigram(t), BOS, EOS, 1, 5, 0.0).unwrap();
    assert_ne!(g.tokens, oracle);
}

#[test]
fn beam_one_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t = random_table(&mut rng);
        let r = beam_search(bigram(t), BOS, EOS, 1, 8, 0.6).unwrap();
        assert_eq!(r.tokens, greedy(&t, 8));
    }
}

#[test]
fn result_ends_with_eos_or_is_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let t = random_table(&mut rng);
        let r = beam_search(bigram(t), BOS, EOS, 1 + i % 4, 1 + i % 6, 0.6).unwrap();
        assert!(r.truncated || r.tokens.last() == Some(&EOS));
        if r.truncated {
            assert!(!r.tokens.contains(&EOS));
        }
    }
    let never_ends = [[1e-12, 1e-12, 0.5, 0.5]; 4];
    let r = beam_search(bigram(never_ends), BOS, EOS, 3, 4, 0.6).unwrap();
    assert!(r.truncated);
    assert_eq!(r.tokens.len(), 4);
    assert!(beam_search(bigram(never_ends), BOS, EOS, 0, 4, 0.6).is_err());
}

#[test]
fn wide_beam_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let t = random_table(&mut rng);
        let (oracle, score) = exhaustive(&t, 4, 0.0);
        let r = beam_search(bigram(t), BOS, EOS, 27, 4, 0.0).unwrap();
        assert_eq!(r.tokens, oracle);
        assert!((r.score - score).abs() < 1e-9);
    }
}

#[test]
fn no_narrow_beam_beats_an_exhaustive_width_beam() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let t = random_table(&mut rng);
        let full = beam_search(bigram(t), BOS, EOS, 3usize.pow(5), 5, 0.6).unwrap();
        assert!(!full.truncated);
        for k in 1..=6 {
            let r = beam_search(bigram(t), BOS, EOS, k, 5, 0.6).unwrap();
            if !r.truncated {
                assert!(r.score <= full.score + 1e-12);
            }
        }
    }
}

fn setup(n_blocks: usize) -> (UniConv, Dataset) {
    let ds = generate(&SyntheticSpec {
        dialogues: 4,
        val_dialogues: 0,
        test_dialogues: 0,
        ..Default::default()
    })
    .unwrap()
    .dataset();
    let cfg = ModelConfig {
        d: 16,
        heads: 2,
        n_dst_slot: n_blocks,
        n_dst_domain: n_blocks,
        n_gen: n_blocks,
        dropout: 0.0,
        max_response_len: 8,
        beam_size: 2,
        ..Default::default()
    };
    let m = UniConv::for_dataset(cfg, &ds, 1, 11).unwrap();
    (m, ds)
}

#[test]
fn lexicalize_uses_the_single_matching_row_then_state_then_placeholder() {
    let (m, _) = setup(1);
    let cols = ["name", "area", "food", "pricerange", "phone", "address"].map(String::from).to_vec();
    let row = ["bluebell kitchen", "north", "thai", "cheap", "0123", "1 high street"]
        .map(String::from)
        .to_vec();
    let kb = KnowledgeBase::new([EntityTable::new("eatery", cols, vec![row]).unwrap()]);
    let mut state = DialogueState::new();
    state.set_inform("eatery", "food", toks("thai"));
    let out = lexicalize(&m, &kb, &toks("eatery_name is in the eatery_area"), &state);
    assert_eq!(out, toks("bluebell kitchen is in the north"));

    let plain = toks("anything else ?");
    assert_eq!(lexicalize(&m, &kb, &plain, &state), plain);

    let empty = KnowledgeBase::new([]);
    let out = lexicalize(&m, &empty, &toks("eatery_name is in the eatery_area"), &DialogueState::new());
    assert_eq!(out, toks("[name] is in the [area]"));

    let out = lexicalize(&m, &empty, &toks("the eatery_area"), &state_with("eatery", "area", "south"));
    assert_eq!(out, toks("the south"));
}

fn state_with(d: &str, s: &str, v: &str) -> DialogueState {
    let mut st = DialogueState::new();
    st.set_inform(d, s, toks(v));
    st
}

#[test]
fn state_threads_from_turn_to_turn_and_decoding_is_deterministic() {
    let (m, ds) = setup(1);
    let e = Engine::new(&m, &ds.kb);
    let d = &ds.corpus.train[0];
    let a = e.replay(d, TaskMode::E2e, StepOptions::default()).unwrap();
    let b = e.replay(d, TaskMode::E2e, StepOptions::default()).unwrap();
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.transcript.len(), d.turns.len());
    let mut prev = DialogueState::new();
    for (i, r) in a.transcript.iter().enumerate() {
        assert_eq!(r.turn, i + 1);
        assert_eq!(r.input_state, prev);
        r.state.validate(&m.ontology).unwrap();
        assert!(r.response_truncated || !r.delex.is_empty() || r.delex.is_empty());
        prev = r.state.clone();
    }
}

#[test]
fn c2t_uses_the_given_state_and_requires_it() {
    let (m, ds) = setup(1);
    let e = Engine::new(&m, &ds.kb);
    let d = &ds.corpus.train[0];
    let s = e.replay(d, TaskMode::C2t, StepOptions::default()).unwrap();
    for (r, t) in s.transcript.iter().zip(&d.turns) {
        assert_eq!(r.state, t.state);
    }
    let mut fresh = Session::new("x", TaskMode::C2t, 5);
    assert!(e.step_turn(&mut fresh, &toks("hello"), None, StepOptions::default()).is_err());
    assert!(fresh.transcript.is_empty());
}

#[test]
fn dst_mode_produces_no_response() {
    let (m, ds) = setup(1);
    let e = Engine::new(&m, &ds.kb);
    let s = e.replay(&ds.corpus.train[0], TaskMode::Dst, StepOptions::default()).unwrap();
    assert!(s.transcript.iter().all(|r| r.delex.is_empty() && r.acts.is_empty()));
}

#[test]
fn session_turn_limit_is_enforced() {
    let (m, ds) = setup(1);
    let e = Engine::new(&m, &ds.kb);
    let mut s = Session::new("x", TaskMode::E2e, 2);
    let opts = StepOptions {
        respond: false,
        ..Default::default()
    };
    e.step_turn(&mut s, &toks("hello"), None, opts).unwrap();
    e.step_turn(&mut s, &toks("hello"), None, opts).unwrap();
    assert!(e.step_turn(&mut s, &toks("hello"), None, opts).is_err());
    assert_eq!(s.transcript.len(), 2);
}

#[test]
fn trace_structure_follows_the_block_count() {
    let (m, ds) = setup(2);
    let e = Engine::new(&m, &ds.kb);
    let mut s = Session::new("t", TaskMode::E2e, 5);
    let opts = StepOptions {
        trace: true,
        ..Default::default()
    };
    let utt = toks("i want a cheap eatery");
    let rec = e.step_turn(&mut s, &utt, None, opts).unwrap();
    let tr = s.export_trace(1).unwrap();
    assert!(s.export_trace(2).is_err());
    for level in [Level::Slot, Level::Domain, Level::Generator] {
        let blocks: BTreeSet<usize> = tr.entries.iter().filter(|x| x.level == level).map(|x| x.block).collect();
        assert_eq!(blocks, BTreeSet::from([0, 1]), "{level:?}");
    }
    for entry in &tr.entries {
        assert_eq!(entry.weights.len(), m.config.heads);
        for head in &entry.weights {
            assert_eq!(head.len(), entry.queries.len());
            for row in head {
                assert_eq!(row.len(), entry.keys.len());
                let sum: f64 = row.iter().sum();
                if entry.level == Level::Fusion {
                    assert!(sum.abs() < 1e-9 || (sum - 1.0).abs() < 1e-5);
                } else {
                    assert!((sum - 1.0).abs() < 1e-5, "{:?} {} sums to {sum}", entry.level, entry.sublayer);
                }
            }
        }
        if entry.sublayer == "utterance" {
            assert_eq!(entry.keys, utt);
        }
        if entry.level == Level::Generator {
            assert_eq!(entry.queries.len(), rec.delex.len() + 2);
            assert_eq!(&entry.queries[2..], &rec.delex[..]);
        }
    }
    let fusion = tr.entries.iter().find(|x| x.level == Level::Fusion).unwrap();
    let ont = &m.ontology;
    let ns = ont.slots().len();
    let valid: BTreeSet<usize> = ont.pairs().iter().map(|&(d, s)| d * ns + s).collect();
    for head in &fusion.weights {
        for (q, row) in head.iter().enumerate() {
            for (k, &w) in row.iter().enumerate() {
                if !valid.contains(&q) || !valid.contains(&k) {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }
}

#[test]
fn transcript_lines_carry_the_exported_fields() {
    let (m, ds) = setup(1);
    let e = Engine::new(&m, &ds.kb);
    let s = e.replay(&ds.corpus.train[1], TaskMode::E2e, StepOptions::default()).unwrap();
    let mut buf = Vec::new();
    s.write_transcript(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), s.transcript.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for f in ["utterance", "state", "acts", "delex", "lexical"] {
            assert!(v.get(f).is_some(), "missing {f}");
        }
    }
}
