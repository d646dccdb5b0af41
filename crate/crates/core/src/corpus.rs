//! Dialogue records, MultiWOZ-layout ingestion, and the preprocessed cache.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::delex::Delexicalizer;
use crate::error::{Error, Result};
use crate::kb::{EntityTable, KnowledgeBase};
use crate::ontology::{DialogueState, Ontology, SlotKind};
use crate::text::{normalize_value, tokenize, value_tokens};
use crate::vocab::{Vocab, EMPTY, SYSTEM_SEP, USER_SEP};

/// Domains whose MultiWOZ database files are used.
pub const MULTIWOZ_DB_DOMAINS: &[&str] = &["restaurant", "hotel", "attraction", "train"];

/// Goal request slots that count towards Success.
pub const SUCCESS_SLOTS: &[&str] = &["phone", "address", "postcode", "reference", "id"];

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    /// Slot to normalised value.
    pub inform: BTreeMap<String, String>,
    /// Slots whose values the user must be given.
    pub request: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub domains: BTreeMap<String, DomainGoal>,
}

/// One user turn and the system reply that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub dialogue_id: String,
    /// 1-based.
    pub index: usize,
    pub user: Vec<String>,
    /// System response of the previous turn; empty at turn 1.
    pub prev_response: Vec<String>,
    /// Earlier turns as `<usr> U <sys> R ...`.
    pub history: Vec<String>,
    pub prev_state: DialogueState,
    pub state: DialogueState,
    pub acts: Vec<String>,
    pub system: Vec<String>,
    pub delex: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<DialogueTurn>,
    pub goal: Option<Goal>,
    /// Domains the dialogue is about, in ontology order.
    pub domains: Vec<String>,
}

impl Dialogue {
    /// Builds a dialogue from raw turns `(user, state, acts, system, delex)`,
    /// filling in previous responses, histories and previous states.
    pub fn assemble(id: &str, raw: Vec<(Vec<String>, DialogueState, Vec<String>, Vec<String>, Vec<String>)>, goal: Option<Goal>, ont: &Ontology) -> Self {
        let mut turns: Vec<DialogueTurn> = Vec::with_capacity(raw.len());
        let mut history = Vec::new();
        for (i, (user, state, acts, system, delex)) in raw.into_iter().enumerate() {
            let (prev_response, prev_state) = match turns.last() {
                Some(p) => (p.system.clone(), p.state.clone()),
                None => (Vec::new(), DialogueState::new()),
            };
            turns.push(DialogueTurn {
                dialogue_id: id.to_string(),
                index: i + 1,
                user: user.clone(),
                prev_response,
                history: history.clone(),
                prev_state,
                state,
                acts,
                system: system.clone(),
                delex,
            });
            history.push(USER_SEP.to_string());
            history.extend(user);
            history.push(SYSTEM_SEP.to_string());
            history.extend(system);
        }
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        match &goal {
            Some(g) if !g.domains.is_empty() => {
                seen.extend(g.domains.keys().filter_map(|d| ont.domain_index(d)));
            }
            _ => {
                for t in &turns {
                    seen.extend(t.state.domains.keys().filter_map(|d| ont.domain_index(d)));
                }
            }
        }
        Self {
            id: id.to_string(),
            turns,
            goal,
            domains: seen.into_iter().map(|i| ont.domains()[i].clone()).collect(),
        }
    }

    pub fn is_multi_domain(&self) -> bool {
        self.domains.len() > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// Only the previous system response.
    #[default]
    LastResponse,
    /// Every earlier user and system utterance.
    FullHistory,
}

impl std::str::FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-response" => Ok(Self::LastResponse),
            "full-history" => Ok(Self::FullHistory),
            _ => Err(Error::Config(format!("unknown context mode {s}"))),
        }
    }
}

/// Context tokens of a turn; an empty context is the placeholder token.
pub fn make_context(turn: &DialogueTurn, mode: ContextMode) -> Vec<String> {
    context_tokens(mode, &turn.prev_response, &turn.history)
}

/// Context tokens from the previous response and the full history.
pub fn context_tokens(mode: ContextMode, prev_response: &[String], history: &[String]) -> Vec<String> {
    let ctx = match mode {
        ContextMode::LastResponse => prev_response,
        ContextMode::FullHistory => history,
    };
    if ctx.is_empty() {
        vec![EMPTY.to_string()]
    } else {
        ctx.to_vec()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<Dialogue>,
    pub val: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Dialogue]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!("unknown split {name}"))),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Dialogue> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Dialogues skipped while loading, with reasons.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub skipped: Vec<(String, String)>,
}

/// Everything loaded from a corpus directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ontology: Ontology,
    pub kb: KnowledgeBase,
    pub delex: Delexicalizer,
    pub corpus: Corpus,
    pub report: LoadReport,
    /// Hash of every input file read.
    pub fingerprint: String,
}

/// Canonical slot name of a MultiWOZ state or goal key.
pub fn canonical_slot(raw: &str) -> String {
    let s: String = raw.to_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
    match s.as_str() {
        "leaveat" | "leave" => "leaveat".into(),
        "arriveby" | "arrive" => "arriveby".into(),
        "depart" => "departure".into(),
        "dest" => "destination".into(),
        "addr" => "address".into(),
        "post" => "postcode".into(),
        "ref" => "reference".into(),
        "fee" => "entrancefee".into(),
        "trainid" => "id".into(),
        "price" => "price".into(),
        _ => s,
    }
}

/// Canonical name of a booking slot, e.g. `people` to `bookpeople`.
pub fn canonical_book_slot(raw: &str) -> String {
    format!("book{}", canonical_slot(raw))
}

fn request_slot(raw: &str) -> String {
    match canonical_slot(raw).as_str() {
        "time" => "duration".into(),
        s => s.to_string(),
    }
}

/// Act label `acttype-slot` (or `acttype` when there is no slot).
pub fn act_label(intent: &str, slot: &str) -> String {
    let act = intent.rsplit('-').next().unwrap_or(intent).to_lowercase();
    let slot = slot.to_lowercase();
    if slot.is_empty() || slot == "none" {
        act
    } else {
        format!("{act}-{}", canonical_slot(&slot))
    }
}

fn read_json(path: &Path) -> Result<Option<Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    serde_json::from_str(&text).map(Some).map_err(|e| Error::json(path, e))
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&text) {
        return Ok(items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect());
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn dialog_acts(v: Option<&Value>) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    if let Some(Value::Object(map)) = v {
        for (intent, pairs) in map {
            let domain = intent.split('-').next().unwrap_or("").to_lowercase();
            match pairs {
                Value::Array(ps) => {
                    for p in ps {
                        let slot = p.get(0).and_then(Value::as_str).unwrap_or("none");
                        out.push((domain.clone(), intent.clone(), slot.to_string()));
                    }
                }
                _ => out.push((domain.clone(), intent.clone(), "none".into())),
            }
        }
    }
    out
}

fn value_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(if *b { "yes" } else { "no" }.into()),
        _ => None,
    }
}

fn state_from_metadata(meta: &Value, ont: &Ontology) -> (DialogueState, Vec<(Vec<String>, String)>) {
    let mut state = DialogueState::new();
    let mut refs = Vec::new();
    let Some(map) = meta.as_object() else {
        return (state, refs);
    };
    for (raw_domain, content) in map {
        let domain = raw_domain.to_lowercase();
        if ont.domain_index(&domain).is_none() {
            continue;
        }
        let mut set = |slot: String, raw: &Value| {
            let Some(v) = value_string(raw) else { return };
            if ont.is_valid(&domain, &slot, SlotKind::Inform) {
                state.set_inform(&domain, &slot, value_tokens(&v));
            }
        };
        if let Some(Value::Object(semi)) = content.get("semi") {
            for (k, v) in semi {
                set(canonical_slot(k), v);
            }
        }
        if let Some(Value::Object(book)) = content.get("book") {
            for (k, v) in book {
                if k == "booked" {
                    for b in v.as_array().into_iter().flatten() {
                        if let Some(r) = b.get("reference").and_then(Value::as_str) {
                            refs.push((tokenize(r), format!("{domain}_reference")));
                        }
                    }
                    continue;
                }
                set(canonical_book_slot(k), v);
            }
        }
    }
    (state, refs)
}

fn goal_from_json(v: &Value, ont: &Ontology) -> Goal {
    let mut goal = Goal::default();
    let Some(map) = v.as_object() else { return goal };
    for (raw_domain, g) in map {
        let domain = raw_domain.to_lowercase();
        if ont.domain_index(&domain).is_none() || g.as_object().is_none_or(|o| o.is_empty()) {
            continue;
        }
        let mut dg = DomainGoal::default();
        if let Some(Value::Object(info)) = g.get("info") {
            for (k, v) in info {
                if let Some(s) = value_string(v) {
                    dg.inform.insert(canonical_slot(k), normalize_value(&s));
                }
            }
        }
        if let Some(Value::Array(reqt)) = g.get("reqt") {
            for r in reqt.iter().filter_map(Value::as_str) {
                let s = canonical_slot(r);
                if SUCCESS_SLOTS.contains(&s.as_str()) && !dg.request.contains(&s) {
                    dg.request.push(s);
                }
            }
        }
        if g.get("book").and_then(Value::as_object).is_some_and(|b| !b.is_empty()) && !dg.request.iter().any(|r| r == "reference") {
            dg.request.push("reference".into());
        }
        goal.domains.insert(domain, dg);
    }
    goal
}

/// Parses one dialogue of a MultiWOZ-layout `data.json`.
pub fn parse_dialogue(id: &str, v: &Value, system_acts: Option<&Value>, ont: &Ontology, delex: &Delexicalizer) -> std::result::Result<Dialogue, String> {
    let log = v.get("log").and_then(Value::as_array).ok_or("missing log")?;
    if log.len() % 2 != 0 {
        return Err(format!("odd number of log entries ({})", log.len()));
    }
    let mut raw = Vec::with_capacity(log.len() / 2);
    let mut prev_state = DialogueState::new();
    for (t, pair) in log.chunks(2).enumerate() {
        let (u, s) = (&pair[0], &pair[1]);
        let utext = u.get("text").and_then(Value::as_str).ok_or("user entry without text")?;
        let stext = s.get("text").and_then(Value::as_str).ok_or("system entry without text")?;
        let meta = s.get("metadata").ok_or("system entry without metadata")?;
        let (mut state, refs) = state_from_metadata(meta, ont);
        for (domain, intent, slot) in dialog_acts(u.get("dialog_act")) {
            if intent.to_lowercase().ends_with("-request") {
                let slot = request_slot(&slot);
                if ont.is_valid(&domain, &slot, SlotKind::Request) {
                    state.add_request(&domain, &slot);
                }
            }
        }
        let acts_src = match s.get("dialog_act") {
            Some(a) if a.as_object().is_some_and(|o| !o.is_empty()) => Some(a),
            _ => system_acts.and_then(|m| m.get((t + 1).to_string())),
        };
        let mut acts = Vec::new();
        let mut act_domain = None;
        for (domain, intent, slot) in dialog_acts(acts_src) {
            let label = act_label(&intent, &slot);
            if ont.act_index(&label).is_none() {
                return Err(format!("turn {}: act {label} is not in the ontology", t + 1));
            }
            if !acts.contains(&label) {
                acts.push(label);
            }
            if act_domain.is_none() && ont.domain_index(&domain).is_some() {
                act_domain = Some(domain);
            }
        }
        let prefer = act_domain.or_else(|| changed_domain(&prev_state, &state, ont));
        let system = tokenize(stext);
        let dl = delex.delexicalize_with(&system, prefer.as_deref(), &refs);
        prev_state = state.clone();
        raw.push((tokenize(utext), state, acts, system, dl));
    }
    let goal = v.get("goal").map(|g| goal_from_json(g, ont));
    Ok(Dialogue::assemble(id, raw, goal, ont))
}

/// Domain of the slots that changed between two states, last in ontology
/// order; falls back to the last non-empty domain of `now`.
pub fn changed_domain(before: &DialogueState, now: &DialogueState, ont: &Ontology) -> Option<String> {
    let changed = ont
        .domains()
        .iter()
        .rev()
        .find(|d| now.domains.get(*d) != before.domains.get(*d) && now.domains.contains_key(*d));
    changed.or_else(|| ont.domains().iter().rev().find(|d| now.domains.contains_key(*d))).cloned()
}

/// Act labels used anywhere in a MultiWOZ-layout directory, sorted.
pub fn scan_acts(dir: &Path) -> Result<Vec<String>> {
    let mut acts = BTreeSet::new();
    let data_path = dir.join("data.json");
    if let Some(Value::Object(data)) = read_json(&data_path)? {
        for d in data.values() {
            for (i, e) in d.get("log").and_then(Value::as_array).into_iter().flatten().enumerate() {
                if i % 2 == 1 {
                    for (_, intent, slot) in dialog_acts(e.get("dialog_act")) {
                        acts.insert(act_label(&intent, &slot));
                    }
                }
            }
        }
    }
    let acts_path = dir.join("dialogue_acts.json");
    if acts_path.exists() {
        if let Some(Value::Object(all)) = read_json(&acts_path)? {
            for turns in all.values() {
                for a in turns.as_object().into_iter().flat_map(|o| o.values()) {
                    for (_, intent, slot) in dialog_acts(Some(a)) {
                        acts.insert(act_label(&intent, &slot));
                    }
                }
            }
        }
    }
    Ok(acts.into_iter().collect())
}

/// Reads MultiWOZ `<domain>_db.json` files (for [`MULTIWOZ_DB_DOMAINS`]) and
/// toy `<domain>.tsv` files from `dir`.
pub fn load_db_dir(dir: &Path, ont: &Ontology) -> Result<KnowledgeBase> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("database directory {} not found", dir.display())));
    }
    let mut tables = Vec::new();
    for d in ont.domains() {
        let tsv = dir.join(format!("{d}.tsv"));
        let json = dir.join(format!("{d}_db.json"));
        if tsv.exists() {
            let text = fs::read_to_string(&tsv).map_err(|e| Error::io(&tsv, e))?;
            tables.push(EntityTable::from_tsv(d, &text)?);
        } else if json.exists() && MULTIWOZ_DB_DOMAINS.contains(&d.as_str()) {
            let Some(Value::Array(rows)) = read_json(&json)? else { continue };
            let mut columns: Vec<String> = Vec::new();
            let mut records: Vec<BTreeMap<String, String>> = Vec::new();
            for r in &rows {
                let mut rec = BTreeMap::new();
                for (k, v) in r.as_object().into_iter().flatten() {
                    let Some(s) = value_string(v) else { continue };
                    let c = canonical_slot(k);
                    if !columns.contains(&c) {
                        columns.push(c.clone());
                    }
                    rec.insert(c, s);
                }
                records.push(rec);
            }
            let rows = records
                .into_iter()
                .map(|rec| columns.iter().map(|c| rec.get(c).cloned().unwrap_or_default()).collect())
                .collect();
            tables.push(EntityTable::new(d, columns, rows)?);
        }
    }
    Ok(KnowledgeBase::new(tables))
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    if path.exists() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        h.update(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Input files of a corpus directory that determine its content.
fn input_files(dir: &Path, db_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = ["data.json", "valListFile.json", "testListFile.json", "dialogue_acts.json", "ontology.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let mut dbs: Vec<PathBuf> = fs::read_dir(db_dir)
        .map_err(|e| Error::io(db_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            n.ends_with(".tsv") || n.ends_with("_db.json")
        })
        .collect();
    dbs.sort();
    files.extend(dbs);
    Ok(files)
}

/// Loads a MultiWOZ-layout corpus directory.
///
/// The directory holds `data.json`, optional `valListFile.json` and
/// `testListFile.json`, optionally `dialogue_acts.json`, and databases either
/// in `db/` or alongside. An `ontology.json` overrides the built-in MultiWOZ
/// ontology (whose act inventory is scanned from the data).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let data_path = dir.join("data.json");
    if !data_path.exists() {
        return Err(Error::Data(format!("{} not found", data_path.display())));
    }
    let ont_path = dir.join("ontology.json");
    let custom = ont_path.exists();
    let ontology: Ontology = if custom {
        let text = fs::read_to_string(&ont_path).map_err(|e| Error::io(&ont_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&ont_path, e))?
    } else {
        Ontology::multiwoz(scan_acts(dir)?)
    };
    let db_dir = if dir.join("db").is_dir() { dir.join("db") } else { dir.to_path_buf() };
    let kb = load_db_dir(&db_dir, &ontology)?;
    let delex = if custom {
        Delexicalizer::new(&kb, &[], &[])
    } else {
        Delexicalizer::multiwoz(&kb)
    };
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    for f in input_files(dir, &db_dir)? {
        hash_file(&mut h, &f)?;
    }
    let fingerprint = hex(&h.finalize());
    let (corpus, report) = load_corpus(dir, &ontology, &delex)?;
    Ok(Dataset {
        ontology,
        kb,
        delex,
        corpus,
        report,
        fingerprint,
    })
}

/// Reads and splits the dialogues of a MultiWOZ-layout directory.
/// Malformed dialogues are skipped and reported.
pub fn load_corpus(dir: &Path, ont: &Ontology, delex: &Delexicalizer) -> Result<(Corpus, LoadReport)> {
    let data_path = dir.join("data.json");
    let mut corpus = Corpus::default();
    let mut report = LoadReport::default();
    let Some(data) = read_json(&data_path)? else {
        return Ok((corpus, report));
    };
    let data = data
        .as_object()
        .ok_or_else(|| Error::Data(format!("{} is not an object", data_path.display())))?;
    let val = read_id_list(&dir.join("valListFile.json"))?;
    let test = read_id_list(&dir.join("testListFile.json"))?;
    let acts_path = dir.join("dialogue_acts.json");
    let all_acts = if acts_path.exists() { read_json(&acts_path)? } else { None };
    let mut ids: Vec<&String> = data.keys().collect();
    ids.sort();
    for id in ids {
        let sys = all_acts
            .as_ref()
            .and_then(|a| a.get(id.trim_end_matches(".json")).or_else(|| a.get(id.as_str())));
        match parse_dialogue(id, &data[id], sys, ont, delex) {
            Ok(d) => {
                if val.contains(id) {
                    corpus.val.push(d);
                } else if test.contains(id) {
                    corpus.test.push(d);
                } else {
                    corpus.train.push(d);
                }
            }
            Err(reason) => {
                warn!("skipping dialogue {id}: {reason}");
                report.skipped.push((id.clone(), reason));
            }
        }
    }
    info!(
        "loaded {} train, {} val, {} test dialogues ({} skipped)",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        report.skipped.len()
    );
    Ok((corpus, report))
}

/// Header of a preprocessed cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    pub fingerprint: String,
    pub ontology: Ontology,
    pub src_vocab: Vocab,
    pub res_vocab: Vocab,
    pub kb: KnowledgeBase,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TurnRecord {
    split: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    goal: Option<Goal>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    domains: Option<Vec<String>>,
    turn: DialogueTurn,
}

/// Writes `manifest.json` and `turns.jsonl` (one turn per line) into `dir`.
pub fn write_cache(dir: &Path, manifest: &CacheManifest, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let turns_path = dir.join("turns.jsonl");
    let tmp = dir.join("turns.jsonl.tmp");
    {
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = std::io::BufWriter::new(f);
        for (split, dialogues) in [("train", &corpus.train), ("val", &corpus.val), ("test", &corpus.test)] {
            for d in dialogues {
                for (i, t) in d.turns.iter().enumerate() {
                    let rec = TurnRecord {
                        split: split.into(),
                        goal: if i == 0 { d.goal.clone() } else { None },
                        domains: (i == 0).then(|| d.domains.clone()),
                        turn: t.clone(),
                    };
                    let line = serde_json::to_string(&rec).map_err(|e| Error::json(&tmp, e))?;
                    writeln!(w, "{line}").map_err(|e| Error::io(&tmp, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &turns_path).map_err(|e| Error::io(&turns_path, e))?;
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(&mpath, e))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn read_manifest(dir: &Path) -> Result<CacheManifest> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: CacheManifest = serde_json::from_str(&text).map_err(|e| Error::json(&mpath, e))?;
    if m.version != CACHE_VERSION {
        return Err(Error::Data(format!("cache version {} is not the supported version {CACHE_VERSION}", m.version)));
    }
    Ok(m)
}

pub fn read_cache(dir: &Path) -> Result<(CacheManifest, Corpus)> {
    let manifest = read_manifest(dir)?;
    let path = dir.join("turns.jsonl");
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut corpus = Corpus::default();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TurnRecord = serde_json::from_str(&line).map_err(|e| Error::json(&path, e))?;
        let split = match rec.split.as_str() {
            "train" => &mut corpus.train,
            "val" => &mut corpus.val,
            "test" => &mut corpus.test,
            s => return Err(Error::Data(format!("unknown split {s} in cache"))),
        };
        if rec.turn.index == 1 {
            split.push(Dialogue {
                id: rec.turn.dialogue_id.clone(),
                turns: Vec::new(),
                goal: rec.goal,
                domains: rec.domains.unwrap_or_default(),
            });
        }
        let d = split
            .last_mut()
            .filter(|d| d.id == rec.turn.dialogue_id)
            .ok_or_else(|| Error::Data(format!("cache turn of {} out of order", rec.turn.dialogue_id)))?;
        d.turns.push(rec.turn);
    }
    Ok((manifest, corpus))
}
