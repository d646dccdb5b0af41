//! Domains, slots, acts, and the dialogue state with its canonical flat text
//! form.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{LIT, REQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Inform,
    Request,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
}

impl Slot {
    pub fn inform(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: SlotKind::Inform,
        }
    }

    pub fn request(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: SlotKind::Request,
        }
    }

    /// Dedicated vocabulary token for this slot, e.g. `inf_area`.
    pub fn token(&self) -> String {
        match self.kind {
            SlotKind::Inform => format!("inf_{}", self.name),
            SlotKind::Request => format!("req_{}", self.name),
        }
    }
}

/// Fixed orderings of domains, slots, valid (domain, slot) pairs and acts.
/// Every model output index refers to these orderings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OntologySpec", into = "OntologySpec")]
pub struct Ontology {
    domains: Vec<String>,
    slots: Vec<Slot>,
    pairs: Vec<(usize, usize)>,
    acts: Vec<String>,
    pair_index: HashMap<(usize, usize), usize>,
    domain_index: HashMap<String, usize>,
    act_index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OntologySpec {
    domains: Vec<String>,
    slots: Vec<Slot>,
    /// (domain, slot name, kind)
    pairs: Vec<(String, String, SlotKind)>,
    acts: Vec<String>,
}

impl TryFrom<OntologySpec> for Ontology {
    type Error = Error;
    fn try_from(s: OntologySpec) -> Result<Self> {
        Ontology::new(s.domains, s.slots, &s.pairs, s.acts)
    }
}

impl From<Ontology> for OntologySpec {
    fn from(o: Ontology) -> Self {
        let pairs = o
            .pairs
            .iter()
            .map(|&(d, s)| (o.domains[d].clone(), o.slots[s].name.clone(), o.slots[s].kind))
            .collect();
        OntologySpec {
            domains: o.domains,
            slots: o.slots,
            pairs,
            acts: o.acts,
        }
    }
}

impl Ontology {
    pub fn new(domains: Vec<String>, slots: Vec<Slot>, pairs: &[(String, String, SlotKind)], acts: Vec<String>) -> Result<Self> {
        let domain_index: HashMap<String, usize> = domains.iter().enumerate().map(|(i, d)| (d.clone(), i)).collect();
        if domain_index.len() != domains.len() {
            return Err(Error::Ontology("duplicate domain".into()));
        }
        let slot_index: HashMap<(String, SlotKind), usize> = slots.iter().enumerate().map(|(i, s)| ((s.name.clone(), s.kind), i)).collect();
        if slot_index.len() != slots.len() {
            return Err(Error::Ontology("duplicate slot".into()));
        }
        let mut idx = Vec::with_capacity(pairs.len());
        for (d, s, k) in pairs {
            let di = *domain_index.get(d).ok_or_else(|| Error::Ontology(format!("pair names unknown domain {d}")))?;
            let si = *slot_index
                .get(&(s.clone(), *k))
                .ok_or_else(|| Error::Ontology(format!("pair names unknown slot {s}")))?;
            idx.push((di, si));
        }
        idx.sort_unstable();
        idx.dedup();
        let pair_index = idx.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let act_index: HashMap<String, usize> = acts.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        if act_index.len() != acts.len() {
            return Err(Error::Ontology("duplicate act".into()));
        }
        Ok(Self {
            domains,
            slots,
            pairs: idx,
            acts,
            pair_index,
            domain_index,
            act_index,
        })
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Valid (domain index, slot index) pairs, sorted.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn acts(&self) -> &[String] {
        &self.acts
    }

    pub fn domain_index(&self, d: &str) -> Option<usize> {
        self.domain_index.get(d).copied()
    }

    pub fn act_index(&self, a: &str) -> Option<usize> {
        self.act_index.get(a).copied()
    }

    pub fn slot_index(&self, name: &str, kind: SlotKind) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name && s.kind == kind)
    }

    pub fn pair_index(&self, domain: usize, slot: usize) -> Option<usize> {
        self.pair_index.get(&(domain, slot)).copied()
    }

    pub fn is_valid(&self, domain: &str, slot: &str, kind: SlotKind) -> bool {
        match (self.domain_index(domain), self.slot_index(slot, kind)) {
            (Some(d), Some(s)) => self.pair_index.contains_key(&(d, s)),
            _ => false,
        }
    }

    /// Pair indices whose slot has the given kind.
    pub fn pairs_of_kind(&self, kind: SlotKind) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.slots[self.pairs[i].1].kind == kind).collect()
    }

    /// Slot indices of one kind valid for `domain`, in ontology order.
    pub fn domain_slots(&self, domain: usize, kind: SlotKind) -> Vec<usize> {
        self.pairs
            .iter()
            .filter(|&&(d, s)| d == domain && self.slots[s].kind == kind)
            .map(|&(_, s)| s)
            .collect()
    }

    pub fn count(&self, kind: SlotKind) -> usize {
        self.slots.iter().filter(|s| s.kind == kind).count()
    }

    /// Multi-hot vector over acts. Unknown labels are an error.
    pub fn act_vector(&self, labels: &[String]) -> Result<Vec<bool>> {
        let mut v = vec![false; self.acts.len()];
        for l in labels {
            let i = self.act_index(l).ok_or_else(|| Error::Ontology(format!("unknown act {l}")))?;
            v[i] = true;
        }
        Ok(v)
    }

    pub fn act_labels(&self, hot: &[bool]) -> Vec<String> {
        hot.iter().zip(&self.acts).filter(|(h, _)| **h).map(|(_, a)| a.clone()).collect()
    }

    /// Ontology of the MultiWOZ benchmark as listed per domain in its slot
    /// table: 7 domains, 18 distinct inform slot names and 11 request slots.
    /// Acts are corpus-derived and passed in.
    pub fn multiwoz(acts: Vec<String>) -> Self {
        const INFORM: &[&str] = &[
            "pricerange",
            "area",
            "name",
            "food",
            "type",
            "internet",
            "parking",
            "stars",
            "day",
            "departure",
            "destination",
            "arriveby",
            "leaveat",
            "department",
            "bookday",
            "bookpeople",
            "booktime",
            "bookstay",
        ];
        const REQUEST: &[&str] = &[
            "address", "area", "food", "phone", "postcode", "internet", "parking", "stars", "type", "duration", "price",
        ];
        let domain_slots: &[(&str, &[&str], &[&str])] = &[
            (
                "restaurant",
                &["pricerange", "area", "name", "food", "bookday", "bookpeople", "booktime"],
                &["address", "area", "food", "phone", "postcode"],
            ),
            (
                "hotel",
                &[
                    "pricerange",
                    "area",
                    "name",
                    "type",
                    "internet",
                    "parking",
                    "stars",
                    "bookday",
                    "bookpeople",
                    "bookstay",
                ],
                &["address", "area", "internet", "parking", "phone", "postcode", "stars", "type"],
            ),
            ("attraction", &["area", "name", "type"], &["address", "area", "phone", "postcode", "type"]),
            (
                "train",
                &["day", "departure", "destination", "arriveby", "leaveat", "bookpeople"],
                &["duration", "price"],
            ),
            ("taxi", &["departure", "destination", "arriveby", "leaveat"], &["phone"]),
            ("police", &["department"], &["address", "phone", "postcode"]),
            ("hospital", &[], &["address", "phone", "postcode"]),
        ];
        let mut slots: Vec<Slot> = INFORM.iter().map(|s| Slot::inform(s)).collect();
        slots.extend(REQUEST.iter().map(|s| Slot::request(s)));
        let mut pairs = Vec::new();
        for (d, inf, req) in domain_slots {
            pairs.extend(inf.iter().map(|s| (d.to_string(), s.to_string(), SlotKind::Inform)));
            pairs.extend(req.iter().map(|s| (d.to_string(), s.to_string(), SlotKind::Request)));
        }
        let domains = domain_slots.iter().map(|(d, _, _)| d.to_string()).collect();
        Self::new(domains, slots, &pairs, acts).expect("static ontology is consistent")
    }
}

/// State of one domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainState {
    /// Inform slot name to value tokens.
    pub inform: BTreeMap<String, Vec<String>>,
    /// Requested slot names.
    pub request: BTreeSet<String>,
}

impl DomainState {
    pub fn is_empty(&self) -> bool {
        self.inform.is_empty() && self.request.is_empty()
    }
}

/// Per-domain inform values and requested slots. An absent inform slot means
/// the value `none`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub domains: BTreeMap<String, DomainState>,
}

pub const NONE_VALUE: &str = "none";
pub const DONTCARE_VALUE: &str = "dontcare";

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.values().all(DomainState::is_empty)
    }

    /// Sets an inform value; `none` (or an empty value) removes the slot.
    pub fn set_inform(&mut self, domain: &str, slot: &str, value: Vec<String>) {
        if value.is_empty() || value == [NONE_VALUE] {
            if let Some(ds) = self.domains.get_mut(domain) {
                ds.inform.remove(slot);
                if ds.is_empty() {
                    self.domains.remove(domain);
                }
            }
            return;
        }
        self.domains.entry(domain.to_string()).or_default().inform.insert(slot.to_string(), value);
    }

    pub fn add_request(&mut self, domain: &str, slot: &str) {
        self.domains.entry(domain.to_string()).or_default().request.insert(slot.to_string());
    }

    pub fn inform(&self, domain: &str, slot: &str) -> Option<&[String]> {
        self.domains.get(domain).and_then(|d| d.inform.get(slot)).map(Vec::as_slice)
    }

    /// Value of an inform slot with absence reported as `["none"]`.
    pub fn inform_or_none(&self, domain: &str, slot: &str) -> Vec<String> {
        self.inform(domain, slot)
            .map(<[String]>::to_vec)
            .unwrap_or_else(|| vec![NONE_VALUE.to_string()])
    }

    /// The same state with request slots dropped.
    pub fn without_requests(&self) -> Self {
        let mut out = Self::new();
        for (d, ds) in &self.domains {
            for (s, v) in &ds.inform {
                out.set_inform(d, s, v.clone());
            }
        }
        out
    }

    /// Set of (domain, slot, value) triples over inform slots.
    pub fn inform_triples(&self) -> BTreeSet<(String, String, String)> {
        self.domains
            .iter()
            .flat_map(|(d, ds)| ds.inform.iter().map(move |(s, v)| (d.clone(), s.clone(), v.join(" "))))
            .collect()
    }

    pub fn validate(&self, ont: &Ontology) -> Result<()> {
        for (d, ds) in &self.domains {
            for (s, v) in &ds.inform {
                if !ont.is_valid(d, s, SlotKind::Inform) {
                    return Err(Error::InvalidState(format!("({d}, {s}) is not a valid inform pair")));
                }
                if v.is_empty() || v.iter().any(String::is_empty) {
                    return Err(Error::InvalidState(format!("empty value for ({d}, {s})")));
                }
            }
            for s in &ds.request {
                if !ont.is_valid(d, s, SlotKind::Request) {
                    return Err(Error::InvalidState(format!("({d}, {s}) is not a valid request pair")));
                }
            }
        }
        Ok(())
    }

    /// Canonical flat token form.
    ///
    /// For each non-empty domain in ontology order: the domain token, then
    /// every inform slot in ontology order as `slot value...`, then `<req>`
    /// followed by requested slot names. A value token that the parser would
    /// otherwise read as structure is preceded by `<lit>`.
    pub fn serialize(&self, ont: &Ontology) -> Result<Vec<String>> {
        self.validate(ont)?;
        let mut out = Vec::new();
        for (di, dname) in ont.domains().iter().enumerate() {
            let Some(ds) = self.domains.get(dname) else { continue };
            if ds.is_empty() {
                continue;
            }
            out.push(dname.clone());
            let inform_slots = ont.domain_slots(di, SlotKind::Inform);
            for (pos, &si) in inform_slots.iter().enumerate() {
                let sname = &ont.slots()[si].name;
                let Some(value) = ds.inform.get(sname) else { continue };
                out.push(sname.clone());
                for tok in value {
                    let structural = tok == REQ
                        || tok == LIT
                        || ont.domain_index(tok).is_some_and(|x| x > di)
                        || inform_slots[pos + 1..].iter().any(|&s| &ont.slots()[s].name == tok);
                    if structural {
                        out.push(LIT.to_string());
                    }
                    out.push(tok.clone());
                }
            }
            if !ds.request.is_empty() {
                out.push(REQ.to_string());
                for si in ont.domain_slots(di, SlotKind::Request) {
                    let sname = &ont.slots()[si].name;
                    if ds.request.contains(sname) {
                        out.push(sname.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Best-effort inverse of [`DialogueState::serialize`]. Never fails;
    /// tokens that do not fit the grammar are dropped.
    pub fn parse(tokens: &[String], ont: &Ontology) -> Self {
        let mut state = Self::new();
        let mut domain: Option<usize> = None;
        let mut in_request = false;
        // (position among the domain's inform slots, slot name, value)
        let mut open: Option<(usize, String, Vec<String>)> = None;
        let mut inform_slots: Vec<usize> = Vec::new();
        let mut literal = false;

        let close = |state: &mut Self, domain: Option<usize>, open: &mut Option<(usize, String, Vec<String>)>| {
            if let (Some(d), Some((_, s, v))) = (domain, open.take()) {
                if !v.is_empty() && v != [NONE_VALUE] {
                    state.set_inform(&ont.domains()[d], &s, v);
                }
            }
        };

        for tok in tokens {
            if literal {
                literal = false;
                if let Some((_, _, v)) = open.as_mut() {
                    v.push(tok.clone());
                }
                continue;
            }
            if let Some(di) = ont.domain_index(tok) {
                if domain.is_none_or(|cur| di > cur) {
                    close(&mut state, domain, &mut open);
                    domain = Some(di);
                    in_request = false;
                    inform_slots = ont.domain_slots(di, SlotKind::Inform);
                    continue;
                }
            }
            let Some(di) = domain else { continue };
            if tok == LIT {
                literal = !in_request && open.is_some();
                continue;
            }
            if tok == REQ {
                close(&mut state, domain, &mut open);
                in_request = true;
                continue;
            }
            if in_request {
                if ont.is_valid(&ont.domains()[di], tok, SlotKind::Request) {
                    state.add_request(&ont.domains()[di], tok);
                }
                continue;
            }
            let after = open.as_ref().map_or(0, |(p, _, _)| p + 1);
            let next_slot = inform_slots[after.min(inform_slots.len())..]
                .iter()
                .position(|&s| &ont.slots()[s].name == tok)
                .map(|off| after + off);
            match next_slot {
                Some(pos) => {
                    close(&mut state, domain, &mut open);
                    open = Some((pos, tok.clone(), Vec::new()));
                }
                None => {
                    if let Some((_, _, v)) = open.as_mut() {
                        v.push(tok.clone());
                    }
                }
            }
        }
        close(&mut state, domain, &mut open);
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn table1_state() -> DialogueState {
        let mut b = DialogueState::new();
        b.set_inform("restaurant", "pricerange", toks("expensive"));
        b.set_inform("restaurant", "area", toks("centre"));
        b.set_inform("restaurant", "name", toks("fizbillies restaurant"));
        b.add_request("restaurant", "address");
        b.set_inform("attraction", "name", toks("kings hedges learner pool"));
        b.add_request("attraction", "phone");
        b
    }

    #[test]
    fn multiwoz_counts() {
        let o = Ontology::multiwoz(vec![]);
        assert_eq!(o.domains().len(), 7);
        assert_eq!(o.slots().len(), 29);
        assert_eq!(o.count(SlotKind::Inform), 18);
        assert_eq!(o.count(SlotKind::Request), 11);
        assert!(o.pairs().len() <= 7 * 30);
    }

    #[test]
    fn table1_state_serializes_canonically() {
        let o = Ontology::multiwoz(vec![]);
        let out = table1_state().serialize(&o).unwrap().join(" ");
        assert_eq!(
            out,
            "restaurant pricerange expensive area centre name fizbillies restaurant <req> address \
             attraction name kings hedges learner pool <req> phone"
        );
    }

    #[test]
    fn empty_state_serializes_to_nothing() {
        let o = Ontology::multiwoz(vec![]);
        assert!(DialogueState::new().serialize(&o).unwrap().is_empty());
        assert_eq!(DialogueState::parse(&[], &o), DialogueState::new());
    }

    #[test]
    fn roundtrip_table1() {
        let o = Ontology::multiwoz(vec![]);
        let b = table1_state();
        assert_eq!(DialogueState::parse(&b.serialize(&o).unwrap(), &o), b);
    }

    #[test]
    fn invalid_pair_is_rejected_on_serialize_and_dropped_on_parse() {
        let o = Ontology::multiwoz(vec![]);
        let mut b = DialogueState::new();
        b.set_inform("taxi", "food", toks("thai"));
        assert!(matches!(b.serialize(&o), Err(Error::InvalidState(_))));
        let parsed = DialogueState::parse(&toks("taxi food thai departure cambridge"), &o);
        let mut expect = DialogueState::new();
        expect.set_inform("taxi", "departure", toks("cambridge"));
        // `food` is not a taxi slot, so "food thai" is read as noise before the first slot
        assert_eq!(parsed, expect);
    }

    #[test]
    fn structural_words_inside_values_are_escaped() {
        let o = Ontology::multiwoz(vec![]);
        let mut b = DialogueState::new();
        b.set_inform("restaurant", "pricerange", toks("cheap area"));
        b.set_inform("restaurant", "name", toks("hotel du vin <req>"));
        let s = b.serialize(&o).unwrap();
        assert!(s.contains(&LIT.to_string()));
        assert_eq!(DialogueState::parse(&s, &o), b);
    }

    #[test]
    fn none_removes_slot() {
        let mut b = table1_state();
        b.set_inform("attraction", "name", toks("none"));
        assert!(b.inform("attraction", "name").is_none());
        assert_eq!(b.inform_or_none("attraction", "name"), toks("none"));
    }
}
