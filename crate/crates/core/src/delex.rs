//! Replacement of database attribute values in responses by `domain_slot`
//! tags.

use std::collections::{BTreeSet, HashMap};

use crate::kb::KnowledgeBase;
use crate::text::tokenize;

/// Column names never used for delexicalisation in MultiWOZ databases.
pub const MULTIWOZ_SKIP_COLUMNS: &[&str] = &[
    "introduction",
    "signature",
    "location",
    "openhours",
    "takesbookings",
    "single",
    "double",
    "family",
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    tag: String,
    domain: String,
}

/// Longest-match delexicaliser built from the database values.
#[derive(Debug, Clone, Default)]
pub struct Delexicalizer {
    /// First token to candidate token sequences.
    by_first: HashMap<String, Vec<(Vec<String>, Vec<Entry>)>>,
    tags: BTreeSet<String>,
}

/// The tag naming a column of a domain, e.g. `restaurant_phone`.
pub fn tag_for(domain: &str, column: &str) -> String {
    format!("{domain}_{column}")
}

impl Delexicalizer {
    /// Every column of every table except those in `skip` and
    /// `(domain, column)` pairs in `skip_pairs`.
    pub fn new(kb: &KnowledgeBase, skip: &[&str], skip_pairs: &[(&str, &str)]) -> Self {
        let mut out = Self::default();
        for table in kb.tables.values() {
            for (c, col) in table.columns.iter().enumerate() {
                if skip.contains(&col.as_str()) || skip_pairs.contains(&(table.domain.as_str(), col.as_str())) {
                    continue;
                }
                let tag = tag_for(&table.domain, col);
                out.tags.insert(tag.clone());
                for row in &table.rows {
                    out.add(tokenize(&row[c]), &tag, &table.domain);
                }
            }
        }
        out
    }

    /// Delexicaliser for MultiWOZ databases.
    pub fn multiwoz(kb: &KnowledgeBase) -> Self {
        let skip_pairs: Vec<(&str, &str)> = kb
            .tables
            .keys()
            .filter(|d| d.as_str() != "train")
            .map(|d| (d.as_str(), "id"))
            .chain([("restaurant", "type"), ("hotel", "type"), ("hotel", "price")])
            .collect();
        Self::new(kb, MULTIWOZ_SKIP_COLUMNS, &skip_pairs)
    }

    /// Registers `value` as an instance of `tag`.
    pub fn add(&mut self, value: Vec<String>, tag: &str, domain: &str) {
        if value.is_empty() || value.iter().any(|t| self.tags.contains(t)) {
            return;
        }
        if value.len() == 1 && !value[0].chars().any(char::is_alphanumeric) {
            return;
        }
        self.tags.insert(tag.to_string());
        let entry = Entry {
            tag: tag.to_string(),
            domain: domain.to_string(),
        };
        let bucket = self.by_first.entry(value[0].clone()).or_default();
        match bucket.iter_mut().find(|(v, _)| *v == value) {
            Some((_, entries)) => {
                if !entries.contains(&entry) {
                    entries.push(entry);
                }
            }
            None => bucket.push((value, vec![entry])),
        }
    }

    /// Every tag this delexicaliser can emit.
    pub fn tags(&self) -> &BTreeSet<String> {
        &self.tags
    }

    pub fn is_tag(&self, tok: &str) -> bool {
        self.tags.contains(tok)
    }

    /// Replaces, left to right, the longest value starting at each position
    /// with its tag. When a value belongs to several tags the first one of
    /// `prefer` wins, otherwise the first registered.
    pub fn delexicalize(&self, tokens: &[String], prefer: Option<&str>) -> Vec<String> {
        self.delexicalize_with(tokens, prefer, &[])
    }

    /// As [`Delexicalizer::delexicalize`], with extra `(value, tag)` entries
    /// for this call only (booking references and the like).
    pub fn delexicalize_with(&self, tokens: &[String], prefer: Option<&str>, extra: &[(Vec<String>, String)]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let rest = &tokens[i..];
            let best = self
                .by_first
                .get(&tokens[i])
                .and_then(|cands| cands.iter().filter(|(v, _)| rest.starts_with(v)).max_by_key(|(v, _)| v.len()));
            let best_extra = extra.iter().filter(|(v, _)| !v.is_empty() && rest.starts_with(v)).max_by_key(|(v, _)| v.len());
            let base_len = best.map_or(0, |(v, _)| v.len());
            match (best, best_extra) {
                (_, Some((v, tag))) if v.len() > base_len => {
                    out.push(tag.clone());
                    i += v.len();
                }
                (Some((v, entries)), _) => {
                    let e = prefer.and_then(|p| entries.iter().find(|e| e.domain == p)).unwrap_or(&entries[0]);
                    out.push(e.tag.clone());
                    i += v.len();
                }
                _ => {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}
