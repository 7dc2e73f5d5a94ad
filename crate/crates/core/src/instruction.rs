//! Instruction parsing: free-form text to `(landmark, attribute)` directives.
//!
//! Two routes produce the same [`LandmarkDirective`] list. The built-in
//! parser matches verb phrases from a [`VerbLexicon`] and takes the head noun
//! of the phrase that follows. The remote route sends the extraction prompt to
//! a large language model through a [`ModelClient`] and parses its
//! `label and 0|1` reply.
//!
//! Whenever one label is mentioned with both a traversal and an avoidance
//! phrase the label is reported untraversable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Extraction prompt with the `{instruction}` placeholder.
pub const PROMPT_TEMPLATE: &str = include_str!("../assets/extraction_prompt.txt");

const DEFAULT_LEXICON: &str = include_str!("../assets/default_lexicon.json");

const CONJUNCTIONS: &[&str] = &[
    "and", "but", "or", "then", "while", "so", "because", "before", "after", "until", "nor", "yet",
    "also",
];

const PREPOSITIONS: &[&str] = &[
    "in",
    "on",
    "at",
    "of",
    "to",
    "for",
    "with",
    "by",
    "from",
    "near",
    "behind",
    "into",
    "onto",
    "toward",
    "towards",
    "over",
    "under",
    "beside",
    "next",
    "across",
    "around",
    "between",
    "inside",
    "outside",
    "past",
    "through",
    "along",
    "please",
    "when",
    "if",
    "as",
    "carefully",
    "slowly",
    "quickly",
    "first",
];

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "my", "your", "our", "their", "his", "her",
    "its", "some", "any", "all",
];

const PRONOUNS: &[&str] = &[
    "it", "them", "me", "you", "him", "her", "us", "this", "that", "there", "here",
];

/// The raw instruction text `T_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
}

impl Instruction {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl From<&str> for Instruction {
    fn from(text: &str) -> Self {
        Self::new(text)
    }
}

/// Action-aware attribute of a landmark: may it be traversed under the
/// requested action?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Attribute {
    Untraversable = 0,
    Traversable = 1,
}

impl Attribute {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_traversable(self) -> bool {
        self == Attribute::Traversable
    }
}

impl From<Attribute> for u8 {
    fn from(a: Attribute) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Attribute {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Attribute::Untraversable),
            1 => Ok(Attribute::Traversable),
            other => Err(format!("attribute must be 0 or 1, got {other}")),
        }
    }
}

/// A landmark label with its attribute and the verb phrase that set it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkDirective {
    pub label: String,
    pub attribute: Attribute,
    pub source_action: String,
}

impl LandmarkDirective {
    pub fn new(label: impl Into<String>, attribute: Attribute, action: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            attribute,
            source_action: action.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexiconError {
    #[error("lexicon needs at least one traversal and one avoidance phrase")]
    Incomplete,
    #[error("lexicon phrase is empty")]
    EmptyPhrase,
    #[error("invalid lexicon file: {0}")]
    Parse(String),
}

/// Verb phrases that grant or deny traversal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbLexicon {
    pub traversal: Vec<String>,
    pub avoidance: Vec<String>,
}

impl Default for VerbLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl VerbLexicon {
    pub fn new(traversal: Vec<String>, avoidance: Vec<String>) -> Result<Self, LexiconError> {
        let lex = Self {
            traversal,
            avoidance,
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let lex: VerbLexicon =
            serde_json::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), LexiconError> {
        if self.traversal.is_empty() || self.avoidance.is_empty() {
            return Err(LexiconError::Incomplete);
        }
        if self
            .traversal
            .iter()
            .chain(&self.avoidance)
            .any(|p| words(p).is_empty())
        {
            return Err(LexiconError::EmptyPhrase);
        }
        Ok(())
    }

    /// Phrases as word sequences, longest first so "watch out for" beats
    /// "watch out".
    fn compiled(&self) -> Vec<(Vec<String>, Attribute, String)> {
        let mut out: Vec<_> = self
            .traversal
            .iter()
            .map(|p| (words(p), Attribute::Traversable, p.trim().to_lowercase()))
            .chain(
                self.avoidance
                    .iter()
                    .map(|p| (words(p), Attribute::Untraversable, p.trim().to_lowercase())),
            )
            .collect();
        out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.2.cmp(&b.2)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Punct,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(Token::Word(std::mem::take(&mut cur)));
            }
            if !ch.is_whitespace() {
                out.push(Token::Punct);
            }
        }
    }
    if !cur.is_empty() {
        out.push(Token::Word(cur));
    }
    out
}

fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter_map(|t| match t {
            Token::Word(w) => Some(w),
            Token::Punct => None,
        })
        .collect()
}

fn singular(word: &str) -> String {
    if word.len() > 4 && word.ends_with("ies") {
        format!("{}y", &word[..word.len() - 3])
    } else if word.len() > 3
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        word[..word.len() - 1].to_string()
    } else {
        word.to_string()
    }
}

fn match_at(
    tokens: &[Token],
    i: usize,
    phrases: &[(Vec<String>, Attribute, String)],
) -> Option<usize> {
    phrases.iter().position(|(ws, _, _)| {
        ws.len() <= tokens.len() - i
            && ws
                .iter()
                .zip(&tokens[i..])
                .all(|(w, t)| matches!(t, Token::Word(tw) if tw == w))
    })
}

/// Merges mentions into unique labels in order of first mention; an
/// untraversable mention always wins.
fn resolve(mentions: Vec<LandmarkDirective>) -> Vec<LandmarkDirective> {
    let mut order: Vec<String> = Vec::new();
    let mut by_label: BTreeMap<String, LandmarkDirective> = BTreeMap::new();
    for m in mentions {
        match by_label.get_mut(&m.label) {
            None => {
                order.push(m.label.clone());
                by_label.insert(m.label.clone(), m);
            }
            Some(existing) => {
                if m.attribute < existing.attribute {
                    *existing = m;
                }
            }
        }
    }
    order
        .into_iter()
        .filter_map(|l| by_label.remove(&l))
        .collect()
}

/// Deterministic rule-based extraction of landmark directives.
///
/// Each lexicon verb phrase governs the noun phrase that follows it, up to
/// punctuation, a conjunction, a preposition or the next verb phrase. The
/// label is the singular head noun of that phrase with determiners removed.
/// Text without a governing verb yields nothing.
pub fn parse_instruction(instr: &Instruction, lexicon: &VerbLexicon) -> Vec<LandmarkDirective> {
    let tokens = tokenize(&instr.text);
    let phrases = lexicon.compiled();
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some(pi) = match_at(&tokens, i, &phrases) else {
            i += 1;
            continue;
        };
        let (ws, attribute, action) = &phrases[pi];
        let mut j = i + ws.len();
        let mut np: Vec<&str> = Vec::new();
        while j < tokens.len() {
            let Token::Word(w) = &tokens[j] else { break };
            if CONJUNCTIONS.contains(&w.as_str())
                || PREPOSITIONS.contains(&w.as_str())
                || match_at(&tokens, j, &phrases).is_some()
            {
                break;
            }
            if !DETERMINERS.contains(&w.as_str()) {
                np.push(w);
            }
            j += 1;
        }
        if let Some(head) = np.last().filter(|h| !PRONOUNS.contains(h)) {
            mentions.push(LandmarkDirective::new(
                singular(head),
                *attribute,
                action.clone(),
            ));
        }
        i = j.max(i + ws.len());
    }
    resolve(mentions)
}

/// Text completion endpoint of a large language model.
pub trait ModelClient {
    fn complete(&self, prompt: &str) -> Result<String, TransportError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteExtractError {
    #[error("model request failed: {message}")]
    Transport { message: String },
    #[error("malformed model response: {raw:?}")]
    Malformed { raw: String },
}

/// Fills the extraction prompt with the user instruction.
pub fn build_prompt(instr: &Instruction) -> String {
    PROMPT_TEMPLATE
        .trim_end()
        .replace("{instruction}", instr.text.trim())
}

fn strip_label(part: &str) -> &str {
    let part = part.trim();
    // keep only the last quoted span when the model echoes surrounding prose
    let quoted: Vec<usize> = part.match_indices('"').map(|(i, _)| i).collect();
    if quoted.len() >= 2 {
        let (a, b) = (quoted[quoted.len() - 2], quoted[quoted.len() - 1]);
        return part[a + 1..b].trim();
    }
    part.trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace())
}

/// Parses replies of the form `curtain and 1; chair and 0`, with or without
/// quotes around each token.
pub fn parse_model_response(raw: &str) -> Result<Vec<LandmarkDirective>, RemoteExtractError> {
    let malformed = || RemoteExtractError::Malformed {
        raw: raw.to_string(),
    };
    let parts: Vec<&str> = raw
        .split([';', '\n'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        return Err(malformed());
    }
    let mut mentions = Vec::with_capacity(parts.len());
    for part in parts {
        let lower = part.to_lowercase();
        let idx = lower.rfind(" and ").ok_or_else(malformed)?;
        let label = strip_label(&lower[..idx]).to_string();
        let token = lower[idx + 5..]
            .trim()
            .trim_end_matches(['.', ','])
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace());
        let attribute = match token {
            "0" => Attribute::Untraversable,
            "1" => Attribute::Traversable,
            _ => return Err(malformed()),
        };
        if label.is_empty() {
            return Err(malformed());
        }
        mentions.push(LandmarkDirective::new(label, attribute, "model"));
    }
    Ok(resolve(mentions))
}

/// Extracts directives with a remote model. The caller decides whether to
/// fall back to [`parse_instruction`] on error.
pub fn remote_extract(
    instr: &Instruction,
    client: &dyn ModelClient,
) -> Result<Vec<LandmarkDirective>, RemoteExtractError> {
    let raw = client
        .complete(&build_prompt(instr))
        .map_err(|e| RemoteExtractError::Transport { message: e.0 })?;
    parse_model_response(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Attribute::{Traversable as T, Untraversable as U};

    fn parse(text: &str) -> Vec<(String, Attribute)> {
        parse_instruction(&Instruction::new(text), &VerbLexicon::default())
            .into_iter()
            .map(|d| (d.label, d.attribute))
            .collect()
    }

    fn pairs(items: &[(&str, Attribute)]) -> Vec<(String, Attribute)> {
        items.iter().map(|(l, a)| (l.to_string(), *a)).collect()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(
            parse("Go through the curtain, and watch out the chair."),
            pairs(&[("curtain", T), ("chair", U)])
        );
        assert_eq!(
            parse("Please go through the curtain and watch out for the medicine trolley"),
            pairs(&[("curtain", T), ("trolley", U)])
        );
        assert_eq!(
            parse("Please pass through the curtain but be careful of the table in the middle of the room"),
            pairs(&[("curtain", T), ("table", U)])
        );
    }

    #[test]
    fn empty_and_unmatched() {
        assert!(parse("").is_empty());
        assert!(parse("   ").is_empty());
        assert!(parse("Deliver the medicine to me.").is_empty());
        assert!(parse("avoid it").is_empty());
    }

    #[test]
    fn conflict_prefers_untraversable() {
        assert_eq!(
            parse("Go through the curtain but avoid the curtain"),
            pairs(&[("curtain", U)])
        );
        let d = parse_instruction(
            &"Go through the curtain but avoid the curtain".into(),
            &VerbLexicon::default(),
        );
        assert_eq!(d[0].source_action, "avoid");
    }

    #[test]
    fn longer_instructions() {
        assert_eq!(
            parse("Deliver the medicine to me. By the way, you can go through the curtain and watch out the warning sign."),
            pairs(&[("curtain", T), ("sign", U)])
        );
        assert_eq!(
            parse("Can you pass through the curtains to deliver medicines to me?"),
            pairs(&[("curtain", T)])
        );
        assert_eq!(
            parse("Go through the grass and watch out the chair."),
            pairs(&[("grass", T), ("chair", U)])
        );
        assert_eq!(
            parse("Go through the orange wooden wall"),
            pairs(&[("wall", T)])
        );
    }

    #[test]
    fn lexicon_validation() {
        assert_eq!(
            VerbLexicon::new(vec!["cross".into()], vec![]),
            Err(LexiconError::Incomplete)
        );
        assert_eq!(
            VerbLexicon::new(vec!["  ".into()], vec!["avoid".into()]),
            Err(LexiconError::EmptyPhrase)
        );
        let lex =
            VerbLexicon::from_json(r#"{"traversal":["push past"],"avoidance":["steer clear of"]}"#)
                .unwrap();
        let d = parse_instruction(&"push past the door, steer clear of the lamp".into(), &lex);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].label.as_str(), d[0].attribute), ("door", T));
        assert_eq!((d[1].label.as_str(), d[1].attribute), ("lamp", U));
    }

    #[test]
    fn model_response_parsing() {
        let d = parse_model_response("curtain and 1; chair and 0").unwrap();
        assert_eq!(
            d.iter()
                .map(|d| (d.label.as_str(), d.attribute))
                .collect::<Vec<_>>(),
            vec![("curtain", T), ("chair", U)]
        );
        let quoted = parse_model_response(r#""curtain" and "1"; "trolley" and "0"."#).unwrap();
        assert_eq!(quoted[1].label, "trolley");
        assert!(matches!(
            parse_model_response(""),
            Err(RemoteExtractError::Malformed { raw }) if raw.is_empty()
        ));
        assert!(matches!(
            parse_model_response("table and 2"),
            Err(RemoteExtractError::Malformed { raw }) if raw == "table and 2"
        ));
        assert!(parse_model_response("just some words").is_err());
    }

    struct Canned(Result<String, TransportError>, std::cell::RefCell<String>);

    impl ModelClient for Canned {
        fn complete(&self, prompt: &str) -> Result<String, TransportError> {
            *self.1.borrow_mut() = prompt.to_string();
            self.0.clone()
        }
    }

    #[test]
    fn remote_route() {
        let client = Canned(Ok("curtain and 1; chair and 0".into()), Default::default());
        let instr = Instruction::new("Go through the curtain, and watch out the chair.");
        let d = remote_extract(&instr, &client).unwrap();
        assert_eq!(d.len(), 2);
        let prompt = client.1.borrow().clone();
        assert!(prompt.starts_with("Example 1: I ask:"));
        assert!(prompt.ends_with(
            "I ask: \"Go through the curtain, and watch out the chair.\". You should respond"
        ));

        let down = Canned(Err(TransportError("refused".into())), Default::default());
        assert_eq!(
            remote_extract(&instr, &down),
            Err(RemoteExtractError::Transport {
                message: "refused".into()
            })
        );
    }

    fn fragment() -> impl Strategy<Value = String> {
        let verbs = prop::sample::select(vec![
            "go through",
            "pass through",
            "cross",
            "watch out for",
            "avoid",
            "mind",
            "deliver",
        ]);
        let nouns = prop::sample::select(vec![
            "curtain", "chair", "grass", "wall", "table", "trolley", "sign",
        ]);
        let seps = prop::sample::select(vec![" and ", ", ", " but ", ". ", " then "]);
        (verbs, nouns, seps).prop_map(|(v, n, s)| format!("{v} the {n}{s}"))
    }

    proptest! {
        #[test]
        fn deterministic_and_closed(frags in prop::collection::vec(fragment(), 0..8)) {
            let text = frags.concat();
            let a = parse(&text);
            prop_assert_eq!(&a, &parse(&text));
            let mut seen = std::collections::BTreeSet::new();
            for (label, _) in &a {
                prop_assert!(!label.is_empty());
                prop_assert!(seen.insert(label.clone()));
            }
        }

        #[test]
        fn avoidance_never_promotes(
            frags in prop::collection::vec(fragment(), 0..8),
            noun in prop::sample::select(vec!["curtain", "chair", "grass", "wall"]),
            at_front in any::<bool>(),
        ) {
            let text = frags.concat();
            let extra = format!("avoid the {noun}. ");
            let extended = if at_front { format!("{extra}{text}") } else { format!("{text} {extra}") };
            let after = parse(&extended);
            let attr = after.iter().find(|(l, _)| l == noun).map(|(_, a)| *a);
            prop_assert_eq!(attr, Some(U));
        }
    }
}
