//! Tokenisation and value normalisation shared by every module that compares
//! slot values (corpus loading, database matching, metrics).

/// Case-folds and splits on whitespace and punctuation. Alphanumeric runs are
/// tokens; underscores and apostrophes stay inside a word so delexicalisation
/// tags such as `train_id` survive; every other symbol is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        let joiner = match c {
            '_' | '\'' => !cur.is_empty() && next_alnum,
            ':' => cur.ends_with(|p: char| p.is_ascii_digit()) && chars.get(i + 1).is_some_and(char::is_ascii_digit),
            _ => false,
        };
        if c.is_alphanumeric() || joiner {
            cur.push(c);
            i += 1;
            continue;
        }
        flush(&mut cur, &mut out);
        // reserved markers such as <req> stay whole
        if c == '<' {
            if let Some(len) = marker_len(&chars[i..]) {
                out.push(chars[i..i + len].iter().collect());
                i += len;
                continue;
            }
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
        i += 1;
    }
    flush(&mut cur, &mut out);
    out
}

fn marker_len(chars: &[char]) -> Option<usize> {
    let end = chars.iter().position(|&x| x == '>')?;
    let inner = &chars[1..end];
    (!inner.is_empty() && inner.iter().all(|x| x.is_alphanumeric() || *x == '_')).then_some(end + 1)
}

fn flush(cur: &mut String, out: &mut Vec<String>) {
    if !cur.is_empty() {
        out.push(std::mem::take(cur));
    }
}

pub fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Canonical spelling of known value variants.
const SYNONYMS: &[(&str, &str)] = &[
    ("center", "centre"),
    ("dont care", "dontcare"),
    ("don't care", "dontcare"),
    ("do n't care", "dontcare"),
    ("does not care", "dontcare"),
    ("any", "dontcare"),
    ("moderately", "moderate"),
    ("guesthouse", "guest house"),
    ("guesthouses", "guest house"),
    ("concerthall", "concert hall"),
    ("nightclub", "night club"),
    ("mutiple sports", "multiple sports"),
    ("swimmingpool", "swimming pool"),
    ("not mentioned", "none"),
    ("", "none"),
];

/// Normalises a slot or database value: case-fold, strip punctuation,
/// collapse whitespace, map known synonyms.
pub fn normalize_value(raw: &str) -> String {
    let words: Vec<String> = tokenize(raw).into_iter().filter(|t| t.chars().any(char::is_alphanumeric)).collect();
    let collapsed = words.join(" ");
    for &(from, to) in SYNONYMS {
        if collapsed == from {
            return to.to_string();
        }
    }
    collapsed
}

/// Value tokens as they appear in a serialised state.
pub fn value_tokens(raw: &str) -> Vec<String> {
    let n = normalize_value(raw);
    n.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_folds_case() {
        assert_eq!(
            tokenize("The Train ID is TR8259, departing!"),
            vec!["the", "train", "id", "is", "tr8259", ",", "departing", "!"]
        );
    }

    #[test]
    fn keeps_tags_and_markers() {
        assert_eq!(tokenize("call train_id <req> now"), vec!["call", "train_id", "<req>", "now"]);
        assert_eq!(tokenize("a < b"), vec!["a", "<", "b"]);
        assert_eq!(tokenize("don't"), vec!["don't"]);
    }

    #[test]
    fn normalizes_synonyms() {
        assert_eq!(normalize_value("Center"), "centre");
        assert_eq!(normalize_value("don't care"), "dontcare");
        assert_eq!(normalize_value(" Pizza  Hut,"), "pizza hut");
        assert_eq!(normalize_value(""), "none");
        assert_eq!(normalize_value("10:15"), "10:15");
    }
}
