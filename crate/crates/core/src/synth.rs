//! Templated multi-domain dialogues over toy databases, written in the same
//! layout as MultiWOZ so the regular loader reads them back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{act_label, hex, Corpus, Dataset, Dialogue, DomainGoal, Goal, LoadReport};
use crate::delex::{tag_for, Delexicalizer};
use crate::error::{Error, Result};
use crate::kb::{EntityTable, KnowledgeBase};
use crate::ontology::{DialogueState, Ontology, Slot, SlotKind, DONTCARE_VALUE};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// 1 to 3.
    pub domains: usize,
    /// Inform slots per domain, 1 to 3.
    pub slots_per_domain: usize,
    pub db_rows: usize,
    pub dialogues: usize,
    pub val_dialogues: usize,
    pub test_dialogues: usize,
    /// Upper bound on turns per dialogue.
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            domains: 2,
            slots_per_domain: 3,
            db_rows: 12,
            dialogues: 30,
            val_dialogues: 5,
            test_dialogues: 5,
            max_turns: 12,
            seed: 7,
        }
    }
}

struct DomainDef {
    name: &'static str,
    noun: &'static str,
    suffixes: &'static [&'static str],
    inform: &'static [(&'static str, &'static [&'static str])],
    request: &'static [&'static str],
}

const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];

const DOMAINS: &[DomainDef] = &[
    DomainDef {
        name: "eatery",
        noun: "place to eat",
        suffixes: &["kitchen", "bistro"],
        inform: &[
            ("area", AREAS),
            ("food", &["italian", "chinese", "indian", "thai", "french"]),
            ("pricerange", &["cheap", "moderate", "expensive"]),
        ],
        request: &["phone", "address"],
    },
    DomainDef {
        name: "venue",
        noun: "place to visit",
        suffixes: &["hall", "gardens"],
        inform: &[
            ("area", AREAS),
            ("type", &["museum", "park", "theatre", "gallery", "cinema"]),
            ("admission", &["free", "low", "high"]),
        ],
        request: &["phone", "postcode"],
    },
    DomainDef {
        name: "lodging",
        noun: "place to stay",
        suffixes: &["lodge", "inn"],
        inform: &[("area", AREAS), ("stars", &["two", "three", "four", "five"]), ("parking", &["yes", "no"])],
        request: &["phone", "address"],
    },
];

const PREFIXES: &[&str] = &[
    "amber", "birch", "cedar", "delta", "ember", "falcon", "garnet", "harbor", "indigo", "juniper", "kestrel", "lumen", "maple", "nimbus", "onyx", "pebble",
    "quartz", "raven", "saffron", "tundra",
];

const STREETS: &[&str] = &["mill road", "king street", "regent way", "castle hill", "park lane", "station road"];

/// Generated corpus with everything needed to train and score on it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub ontology: Ontology,
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    /// MultiWOZ-layout `data.json` content.
    pub data: Value,
}

fn slot_phrase(slot: &str, value: &str) -> String {
    if value == DONTCARE_VALUE {
        return format!("i do not mind about the {slot}");
    }
    match slot {
        "area" => format!("in the {value}"),
        "food" => format!("serving {value} food"),
        "pricerange" => format!("in the {value} price range"),
        "type" => format!("that is a {value}"),
        "admission" => format!("with {value} admission"),
        "stars" => format!("with {value} stars"),
        "parking" => format!("with parking {value}"),
        _ => format!("with {slot} {value}"),
    }
}

fn request_phrase(slot: &str) -> &'static str {
    match slot {
        "phone" => "phone number",
        "address" => "address",
        _ => "postcode",
    }
}

fn title(domain: &str) -> String {
    let mut c = domain.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

struct Builder<'a> {
    spec: &'a SyntheticSpec,
    defs: Vec<&'static DomainDef>,
    kb: KnowledgeBase,
    ontology: Ontology,
}

enum SystemMove {
    Request(String),
    Recommend(usize),
}

impl Builder<'_> {
    fn inform_slots(&self, def: &DomainDef) -> Vec<&'static str> {
        def.inform.iter().take(self.spec.slots_per_domain).map(|(s, _)| *s).collect()
    }

    fn policy(&self, def: &DomainDef, state: &DialogueState) -> Result<SystemMove> {
        let rows = self.kb.query_state(&self.ontology, def.name, state)?.rows;
        let missing = self.inform_slots(def).into_iter().find(|s| state.inform(def.name, s).is_none());
        match (rows.len(), missing) {
            (n, Some(slot)) if n > 1 => Ok(SystemMove::Request(slot.to_string())),
            (0, _) => Err(Error::Data(format!("synthetic goal for {} matches no entity", def.name))),
            _ => Ok(SystemMove::Recommend(rows[0])),
        }
    }

    fn dialogue(&self, id: &str, rng: &mut ChaCha8Rng) -> Result<(Dialogue, Value)> {
        let ont = &self.ontology;
        let n_domains = if self.defs.len() > 1 && rng.gen_bool(0.5) { 2 } else { 1 };
        let mut order: Vec<usize> = (0..self.defs.len()).collect();
        order.shuffle(rng);
        order.truncate(n_domains);

        let mut goal = Goal::default();
        let mut goal_json = Map::new();
        let mut plans = Vec::new();
        for &di in &order {
            let def = self.defs[di];
            let table = self.kb.table(def.name).expect("table per domain");
            let target = rng.gen_range(0..table.rows.len());
            let mut slots = self.inform_slots(def);
            slots.shuffle(rng);
            let k = rng.gen_range(1..=slots.len());
            let mut dg = DomainGoal::default();
            for s in &slots[..k] {
                dg.inform.insert(s.to_string(), table.value(target, s).unwrap_or_default().to_string());
            }
            let mut reqs: Vec<&str> = def.request.to_vec();
            reqs.shuffle(rng);
            reqs.truncate(rng.gen_range(0..=reqs.len()));
            reqs.sort_by_key(|r| def.request.iter().position(|x| x == r));
            dg.request = reqs.iter().map(|s| s.to_string()).collect();
            let reveal = rng.gen_range(1..=k);
            plans.push((def, slots[..reveal].to_vec(), dg.clone()));
            goal_json.insert(def.name.to_string(), json!({"info": dg.inform, "reqt": dg.request}));
            goal.domains.insert(def.name.to_string(), dg);
        }

        let mut state = DialogueState::new();
        let mut log: Vec<Value> = Vec::new();
        let mut raw = Vec::new();
        let mut push_turn = |user: String,
                             user_acts: Value,
                             state: &DialogueState,
                             sys_lex: String,
                             sys_delex: String,
                             sys_acts: Vec<(String, Vec<(String, String)>)>,
                             log: &mut Vec<Value>| {
            let mut acts_json = Map::new();
            let mut labels = Vec::new();
            for (intent, pairs) in &sys_acts {
                let arr: Vec<Value> = pairs.iter().map(|(s, v)| json!([s, v])).collect();
                for (s, _) in pairs {
                    let l = act_label(intent, s);
                    if !labels.contains(&l) {
                        labels.push(l);
                    }
                }
                acts_json.insert(intent.clone(), Value::Array(arr));
            }
            log.push(json!({"text": user, "metadata": {}, "dialog_act": user_acts}));
            log.push(json!({"text": sys_lex, "metadata": metadata(state), "dialog_act": acts_json}));
            raw.push((tokenize(&user), state.clone(), labels, tokenize(&sys_lex), tokenize(&sys_delex)));
        };

        for (pi, (def, reveal, dg)) in plans.iter().enumerate() {
            let t = title(def.name);
            let table = self.kb.table(def.name).expect("table per domain");
            let lead = if pi == 0 { "i am looking for a" } else { "thanks . i also need a" };
            let phrases: Vec<String> = reveal.iter().map(|s| slot_phrase(s, &dg.inform[*s])).collect();
            let mut user = format!("{lead} {} {} .", def.noun, phrases.join(" and "));
            let mut user_acts = json!({ format!("{}-Inform", t) : reveal.iter().map(|s| json!([s, dg.inform[*s]])).collect::<Vec<_>>() });
            for s in reveal {
                state.set_inform(def.name, s, tokenize(&dg.inform[*s]));
            }
            loop {
                match self.policy(def, &state)? {
                    SystemMove::Request(slot) => {
                        let text = format!("what {slot} would you like ?");
                        push_turn(
                            user,
                            user_acts,
                            &state,
                            text.clone(),
                            text,
                            vec![(format!("{}-Request", t), vec![(slot.clone(), "?".into())])],
                            &mut log,
                        );
                        let value = dg.inform.get(&slot).cloned().unwrap_or_else(|| DONTCARE_VALUE.to_string());
                        user = format!("{} please .", slot_phrase(&slot, &value));
                        user_acts = json!({ format!("{}-Inform", t): [[slot, value]] });
                        state.set_inform(def.name, &slot, tokenize(&value));
                    }
                    SystemMove::Recommend(row) => {
                        let name = table.value(row, "name").unwrap_or_default();
                        let area = table.value(row, "area").unwrap_or_default();
                        let lex = format!("how about {name} ? it is in the {area} .");
                        let delex = format!("how about {} ? it is in the {} .", tag_for(def.name, "name"), tag_for(def.name, "area"));
                        push_turn(
                            user,
                            user_acts,
                            &state,
                            lex,
                            delex,
                            vec![(format!("{}-Recommend", t), vec![("name".into(), name.into()), ("area".into(), area.into())])],
                            &mut log,
                        );
                        if !dg.request.is_empty() {
                            let asked: Vec<&str> = dg.request.iter().map(|r| request_phrase(r)).collect();
                            let user = format!("what is the {} ?", asked.join(" and the "));
                            let user_acts = json!({ format!("{}-Request", t): dg.request.iter().map(|r| json!([r, "?"])).collect::<Vec<_>>() });
                            let mut with_req = state.clone();
                            for r in &dg.request {
                                with_req.add_request(def.name, r);
                            }
                            let lex: Vec<String> = dg
                                .request
                                .iter()
                                .map(|r| format!("the {} is {}", request_phrase(r), table.value(row, r).unwrap_or_default()))
                                .collect();
                            let delex: Vec<String> = dg
                                .request
                                .iter()
                                .map(|r| format!("the {} is {}", request_phrase(r), tag_for(def.name, r)))
                                .collect();
                            push_turn(
                                user,
                                user_acts,
                                &with_req,
                                format!("{} .", lex.join(" and ")),
                                format!("{} .", delex.join(" and ")),
                                vec![(
                                    format!("{}-Inform", t),
                                    dg.request
                                        .iter()
                                        .map(|r| (r.clone(), table.value(row, r).unwrap_or_default().to_string()))
                                        .collect(),
                                )],
                                &mut log,
                            );
                        }
                        break;
                    }
                }
            }
        }
        let bye = "you are welcome . goodbye .".to_string();
        push_turn(
            "thank you , that is all .".into(),
            json!({}),
            &state,
            bye.clone(),
            bye,
            vec![("general-bye".into(), vec![("none".into(), "none".into())])],
            &mut log,
        );
        if raw.len() > self.spec.max_turns {
            return Err(Error::Data(format!("{id}: {} turns exceeds the limit of {}", raw.len(), self.spec.max_turns)));
        }
        let data = json!({"goal": goal_json, "log": log});
        Ok((Dialogue::assemble(id, raw, Some(goal), ont), data))
    }
}

fn metadata(state: &DialogueState) -> Value {
    let mut m = Map::new();
    for (d, ds) in &state.domains {
        let semi: Map<String, Value> = ds.inform.iter().map(|(s, v)| (s.clone(), Value::String(v.join(" ")))).collect();
        m.insert(d.clone(), json!({"semi": semi, "book": {"booked": []}}));
    }
    Value::Object(m)
}

/// Generates a corpus. The same spec always yields the same output.
pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if !(1..=DOMAINS.len()).contains(&spec.domains) {
        return Err(Error::Config(format!("synthetic corpus supports 1 to {} domains", DOMAINS.len())));
    }
    if !(1..=3).contains(&spec.slots_per_domain) {
        return Err(Error::Config("slots_per_domain must be 1 to 3".into()));
    }
    if spec.db_rows == 0 || spec.db_rows > PREFIXES.len() * 2 {
        return Err(Error::Config(format!("db_rows must be 1 to {}", PREFIXES.len() * 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let defs: Vec<&'static DomainDef> = DOMAINS.iter().take(spec.domains).collect();

    let mut tables = Vec::new();
    for def in &defs {
        let mut columns = vec!["name".to_string()];
        let inform: Vec<_> = def.inform.iter().take(spec.slots_per_domain).collect();
        columns.extend(inform.iter().map(|(s, _)| s.to_string()));
        columns.extend(def.request.iter().map(|s| s.to_string()));
        let mut names: Vec<String> = PREFIXES.iter().flat_map(|p| def.suffixes.iter().map(move |s| format!("{p} {s}"))).collect();
        names.shuffle(&mut rng);
        let mut rows = Vec::with_capacity(spec.db_rows);
        for name in names.into_iter().take(spec.db_rows) {
            let mut row = vec![name];
            for (_, values) in &inform {
                row.push(values.choose(&mut rng).expect("values").to_string());
            }
            for r in def.request {
                row.push(match *r {
                    "phone" => format!("01223 {:06}", rng.gen_range(100000..1000000)),
                    "address" => format!("{} {}", rng.gen_range(10..100), STREETS.choose(&mut rng).expect("streets")),
                    _ => format!(
                        "cb{} {}{}",
                        rng.gen_range(1..10),
                        rng.gen_range(1..10),
                        ["aa", "bd", "ez", "qr"].choose(&mut rng).expect("codes")
                    ),
                });
            }
            rows.push(row);
        }
        tables.push(EntityTable::new(def.name, columns, rows)?);
    }
    let kb = KnowledgeBase::new(tables);

    let mut slots: Vec<Slot> = Vec::new();
    let mut pairs = Vec::new();
    let mut acts = vec!["bye".to_string()];
    for def in &defs {
        for (s, _) in def.inform.iter().take(spec.slots_per_domain) {
            if !slots.contains(&Slot::inform(s)) {
                slots.push(Slot::inform(s));
            }
            pairs.push((def.name.to_string(), s.to_string(), SlotKind::Inform));
            acts.push(format!("request-{s}"));
        }
        for r in def.request {
            if !slots.contains(&Slot::request(r)) {
                slots.push(Slot::request(r));
            }
            pairs.push((def.name.to_string(), r.to_string(), SlotKind::Request));
            acts.push(format!("inform-{r}"));
        }
    }
    acts.extend(["recommend-name".to_string(), "recommend-area".to_string()]);
    acts.sort();
    acts.dedup();
    let domains = defs.iter().map(|d| d.name.to_string()).collect();
    let ontology = Ontology::new(domains, slots, &pairs, acts)?;

    let builder = Builder { spec, defs, kb, ontology };
    let mut corpus = Corpus::default();
    let mut data = Map::new();
    let total = spec.dialogues + spec.val_dialogues + spec.test_dialogues;
    for i in 0..total {
        let id = format!("SYN{i:04}.json");
        let (d, v) = builder.dialogue(&id, &mut rng)?;
        data.insert(id, v);
        if i < spec.dialogues {
            corpus.train.push(d);
        } else if i < spec.dialogues + spec.val_dialogues {
            corpus.val.push(d);
        } else {
            corpus.test.push(d);
        }
    }
    Ok(Synthetic {
        ontology: builder.ontology,
        kb: builder.kb,
        corpus,
        data: Value::Object(data),
    })
}

impl Synthetic {
    /// Writes `data.json`, the split lists, `ontology.json` and `db/*.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("json serialises");
        write("data.json", pretty(&self.data))?;
        let ids = |ds: &[Dialogue]| ds.iter().map(|d| d.id.clone()).collect::<Vec<_>>().join("\n") + "\n";
        write("valListFile.json", ids(&self.corpus.val))?;
        write("testListFile.json", ids(&self.corpus.test))?;
        write("ontology.json", serde_json::to_string_pretty(&self.ontology).expect("ontology serialises"))?;
        self.kb.write_tsv_dir(&dir.join("db"))
    }

    /// The corpus as if loaded from disk.
    pub fn dataset(&self) -> Dataset {
        let text = serde_json::to_string(&self.data).expect("json serialises");
        Dataset {
            ontology: self.ontology.clone(),
            kb: self.kb.clone(),
            delex: Delexicalizer::new(&self.kb, &[], &[]),
            corpus: self.corpus.clone(),
            report: LoadReport::default(),
            fingerprint: hex(&Sha256::digest(text.as_bytes())),
        }
    }

    /// Dialogue count per number of domains.
    pub fn domain_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for d in self.corpus.all() {
            *h.entry(d.domains.len()).or_insert(0) += 1;
        }
        h
    }
}
