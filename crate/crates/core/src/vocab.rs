use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::ontology::{Ontology, DONTCARE_VALUE, NONE_VALUE};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
/// First input of the slot-value decoder.
pub const VALUE_BOS: &str = "<val>";
/// Separates inform slots from requested slots in a serialised state.
pub const REQ: &str = "<req>";
/// Marks the next serialised state token as part of a value.
pub const LIT: &str = "<lit>";
/// Stands in for an empty context or an empty state.
pub const EMPTY: &str = "<empty>";
pub const USER_SEP: &str = "<usr>";
pub const SYSTEM_SEP: &str = "<sys>";

pub const RESERVED: &[&str] = &[PAD, UNK, BOS, EOS, VALUE_BOS, REQ, LIT, EMPTY, USER_SEP, SYSTEM_SEP];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const VALUE_BOS_ID: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// A vocabulary holding only the reserved tokens.
    pub fn reserved() -> Self {
        Self::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    pub fn insert(&mut self, tok: &str) -> usize {
        if let Some(&i) = self.index.get(tok) {
            return i;
        }
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    /// Index of `tok`, or the unknown index.
    pub fn id(&self, tok: &str) -> usize {
        self.get(tok).unwrap_or(UNK_ID)
    }

    pub fn ids(&self, toks: &[String]) -> Vec<usize> {
        toks.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.index.contains_key(tok)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

/// Tokens every source vocabulary carries regardless of corpus content.
pub fn ontology_tokens(ont: &Ontology) -> Vec<String> {
    let mut out: Vec<String> = ont.domains().to_vec();
    out.extend(ont.slots().iter().map(|s| s.token()));
    out.extend(ont.slots().iter().map(|s| s.name.clone()));
    out.push(NONE_VALUE.into());
    out.push(DONTCARE_VALUE.into());
    out
}

/// Builds the shared source vocabulary (context, utterance, state tokens and
/// ontology tokens) and the separate response vocabulary (delexicalised
/// responses plus every tag in `tags`). Tokens seen fewer than `min_count`
/// times are left out and map to the unknown index.
pub fn build_vocab(dialogues: &[Dialogue], ont: &Ontology, tags: &[String], min_count: usize) -> (Vocab, Vocab) {
    let mut src = Counter::default();
    let mut res = Counter::default();
    for d in dialogues {
        for t in &d.turns {
            src.add_all(t.user.iter().chain(&t.system));
            src.add_all(&t.state.serialize(ont).unwrap_or_default());
            res.add_all(&t.delex);
        }
    }
    let mut src_vocab = Vocab::reserved();
    for t in ontology_tokens(ont) {
        src_vocab.insert(&t);
    }
    src.fill(&mut src_vocab, min_count);
    let mut res_vocab = Vocab::reserved();
    for t in tags {
        res_vocab.insert(t);
    }
    res.fill(&mut res_vocab, min_count);
    (src_vocab, res_vocab)
}

/// Token counts in first-seen order.
#[derive(Default)]
struct Counter {
    counts: HashMap<String, usize>,
    order: Vec<String>,
}

impl Counter {
    fn add_all<'a>(&mut self, toks: impl IntoIterator<Item = &'a String>) {
        for t in toks {
            let c = self.counts.entry(t.clone()).or_insert(0);
            if *c == 0 {
                self.order.push(t.clone());
            }
            *c += 1;
        }
    }

    fn fill(&self, vocab: &mut Vocab, min_count: usize) {
        for t in &self.order {
            if self.counts[t] >= min_count {
                vocab.insert(t);
            }
        }
    }
}
