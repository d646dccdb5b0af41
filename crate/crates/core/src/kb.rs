//! Entity tables, constraint queries and the binned match-count vector fed to
//! the response generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{DialogueState, Ontology, SlotKind, DONTCARE_VALUE, NONE_VALUE};
use crate::text::normalize_value;

pub const NUM_BINS: usize = 6;

/// Bin index for a match count: {0}, {1}, {2-3}, {4-5}, {6-10}, {>10}.
pub fn count_bin(count: usize) -> usize {
    match count {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        4..=5 => 3,
        6..=10 => 4,
        _ => 5,
    }
}

pub fn one_hot(bin: usize) -> [f64; NUM_BINS] {
    let mut v = [0.0; NUM_BINS];
    v[bin] = 1.0;
    v
}

/// Rows of one domain. Every value is stored normalised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTable {
    pub domain: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl EntityTable {
    pub fn new(domain: &str, columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Data(format!(
                "{domain} table row {bad} has {} fields for {} columns",
                rows[bad].len(),
                columns.len()
            )));
        }
        let rows = rows.into_iter().map(|r| r.iter().map(|v| normalize_value(v)).collect()).collect();
        Ok(Self {
            domain: domain.to_string(),
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, row: usize, column: &str) -> Option<&str> {
        self.column(column).map(|c| self.rows[row][c].as_str())
    }

    /// Tab-separated form: a header of column names, then one row per line.
    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(domain: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let Some(header) = lines.next() else {
            return Self::new(domain, Vec::new(), Vec::new());
        };
        let columns = header.split('\t').map(|c| c.trim().to_lowercase()).collect();
        let rows = lines.map(|l| l.split('\t').map(str::to_string).collect()).collect();
        Self::new(domain, columns, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryResult {
    pub rows: Vec<usize>,
    /// The domain has no database; `rows` is empty.
    pub no_db: bool,
}

/// Binned per-domain match counts, one bin per ontology domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbVector {
    pub bins: Vec<usize>,
    pub counts: Vec<usize>,
}

impl DbVector {
    /// Concatenated one-hot blocks, `6 * |D|` entries.
    pub fn one_hot(&self) -> Vec<f64> {
        self.bins.iter().flat_map(|&b| one_hot(b)).collect()
    }
}

/// All entity tables, keyed by domain. Domains of the ontology without a
/// table have no database.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub tables: BTreeMap<String, EntityTable>,
}

impl KnowledgeBase {
    pub fn new(tables: impl IntoIterator<Item = EntityTable>) -> Self {
        Self {
            tables: tables.into_iter().map(|t| (t.domain.clone(), t)).collect(),
        }
    }

    pub fn table(&self, domain: &str) -> Option<&EntityTable> {
        self.tables.get(domain)
    }

    /// Rows whose columns equal every constraint after normalisation.
    /// `dontcare` and `none` constraints, and constraints naming a slot with
    /// no column, are ignored.
    pub fn query(&self, ont: &Ontology, domain: &str, constraints: &[(String, String)]) -> Result<QueryResult> {
        if ont.domain_index(domain).is_none() {
            return Err(Error::Query(format!("unknown domain {domain}")));
        }
        let Some(table) = self.tables.get(domain) else {
            return Ok(QueryResult { rows: Vec::new(), no_db: true });
        };
        let mut active = Vec::new();
        for (slot, value) in constraints {
            let v = normalize_value(value);
            if v == DONTCARE_VALUE || v == NONE_VALUE {
                continue;
            }
            if let Some(c) = table.column(slot) {
                active.push((c, v));
            }
        }
        let rows = (0..table.rows.len()).filter(|&r| active.iter().all(|(c, v)| &table.rows[r][*c] == v)).collect();
        Ok(QueryResult { rows, no_db: false })
    }

    /// Query using the inform constraints of `domain` in `state`.
    pub fn query_state(&self, ont: &Ontology, domain: &str, state: &DialogueState) -> Result<QueryResult> {
        self.query(ont, domain, &constraints_of(state, domain))
    }

    pub fn db_vector(&self, ont: &Ontology, state: &DialogueState) -> DbVector {
        let mut bins = Vec::with_capacity(ont.domains().len());
        let mut counts = Vec::with_capacity(ont.domains().len());
        for d in ont.domains() {
            let n = self.query_state(ont, d, state).map(|q| q.rows.len()).unwrap_or_default();
            counts.push(n);
            bins.push(count_bin(n));
        }
        DbVector { bins, counts }
    }

    /// Reads every `<domain>.tsv` in `dir` for the ontology's domains.
    pub fn load_tsv_dir(dir: &Path, ont: &Ontology) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Data(format!("database directory {} not found", dir.display())));
        }
        let mut tables = Vec::new();
        for d in ont.domains() {
            let path = dir.join(format!("{d}.tsv"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                tables.push(EntityTable::from_tsv(d, &text)?);
            }
        }
        Ok(Self::new(tables))
    }

    pub fn write_tsv_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in self.tables.values() {
            let path = dir.join(format!("{}.tsv", t.domain));
            fs::write(&path, t.to_tsv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// (slot, value) inform constraints of one domain.
pub fn constraints_of(state: &DialogueState, domain: &str) -> Vec<(String, String)> {
    state
        .domains
        .get(domain)
        .map(|ds| ds.inform.iter().map(|(s, v)| (s.clone(), v.join(" "))).collect())
        .unwrap_or_default()
}

/// Inform slots of `domain` that have a database column.
pub fn searchable_slots(kb: &KnowledgeBase, ont: &Ontology, domain: &str) -> Vec<String> {
    let (Some(di), Some(t)) = (ont.domain_index(domain), kb.table(domain)) else {
        return Vec::new();
    };
    ont.domain_slots(di, SlotKind::Inform)
        .into_iter()
        .map(|s| ont.slots()[s].name.clone())
        .filter(|s| t.column(s).is_some())
        .collect()
}
