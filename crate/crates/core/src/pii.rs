//! PII sequences: extraction from text and the normalized sets the metrics
//! compare.
//!
//! Two taggers are available. The rule tagger is deterministic and needs
//! nothing outside the process: regexes for numeric and temporal classes plus
//! gazetteers for names. The external tagger posts text to an HTTP NER
//! service and maps its labels onto [`PiiClass`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiClass {
    Cardinal,
    Date,
    Event,
    Fac,
    Gpe,
    Language,
    Law,
    Loc,
    Money,
    Norp,
    Ordinal,
    Org,
    Percent,
    Person,
    Product,
    Quantity,
    Time,
    WorkOfArt,
}

impl PiiClass {
    pub const ALL: [PiiClass; 18] = [
        PiiClass::Cardinal,
        PiiClass::Date,
        PiiClass::Event,
        PiiClass::Fac,
        PiiClass::Gpe,
        PiiClass::Language,
        PiiClass::Law,
        PiiClass::Loc,
        PiiClass::Money,
        PiiClass::Norp,
        PiiClass::Ordinal,
        PiiClass::Org,
        PiiClass::Percent,
        PiiClass::Person,
        PiiClass::Product,
        PiiClass::Quantity,
        PiiClass::Time,
        PiiClass::WorkOfArt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PiiClass::Cardinal => "cardinal",
            PiiClass::Date => "date",
            PiiClass::Event => "event",
            PiiClass::Fac => "fac",
            PiiClass::Gpe => "gpe",
            PiiClass::Language => "language",
            PiiClass::Law => "law",
            PiiClass::Loc => "loc",
            PiiClass::Money => "money",
            PiiClass::Norp => "norp",
            PiiClass::Ordinal => "ordinal",
            PiiClass::Org => "org",
            PiiClass::Percent => "percent",
            PiiClass::Person => "person",
            PiiClass::Product => "product",
            PiiClass::Quantity => "quantity",
            PiiClass::Time => "time",
            PiiClass::WorkOfArt => "work_of_art",
        }
    }
}

impl fmt::Display for PiiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PiiClass {
    type Err = String;

    /// Accepts our names and the usual upper-case NER labels (`WORK_OF_ART`,
    /// `GPE`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        PiiClass::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| format!("unknown PII class {s:?}"))
    }
}

/// A tagged span. Offsets count characters, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSpan {
    pub surface: String,
    pub class: PiiClass,
    pub start: usize,
    pub end: usize,
}

/// Kept at the span edges by normalization; everything else punctuation-like
/// is trimmed.
fn is_strippable(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '.' | ',' | ';' | ':' | '!' | '?' | '\'' | '"' | '(' | ')' | '[' | ']' | '{' | '}'
                | '<' | '>' | '-' | '_' | '/' | '\\' | '*' | '`' | '~' | '|'
                | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}'
                | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00BF}' | '\u{00A1}' | '\u{00B7}'
        )
}

/// NFKC, lowercase, single spaces, edge punctuation trimmed.
pub fn normalize_surface(surface: &str) -> String {
    let folded: String = surface.nfkc().collect::<String>().to_lowercase().nfkc().collect();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_matches(is_strippable).to_string()
}

pub fn normalize_pii(span: &PiiSpan) -> (PiiClass, String) {
    (span.class, normalize_surface(&span.surface))
}

/// Set of `(class, normalized surface)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiiSet(BTreeSet<(PiiClass, String)>);

impl PiiSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spans<'a>(spans: impl IntoIterator<Item = &'a PiiSpan>) -> Self {
        let mut set = PiiSet::new();
        for s in spans {
            set.insert(s.class, &s.surface);
        }
        set
    }

    /// Inserts after normalization; empty normal forms are skipped.
    pub fn insert(&mut self, class: PiiClass, surface: &str) -> bool {
        let norm = normalize_surface(surface);
        if norm.is_empty() {
            return false;
        }
        self.0.insert((class, norm))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: PiiClass, normalized: &str) -> bool {
        self.0.contains(&(class, normalized.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(PiiClass, String)> {
        self.0.iter()
    }

    pub fn classes(&self) -> BTreeSet<PiiClass> {
        self.0.iter().map(|(c, _)| *c).collect()
    }

    pub fn restrict(&self, class: PiiClass) -> PiiSet {
        PiiSet(self.0.iter().filter(|(c, _)| *c == class).cloned().collect())
    }

    pub fn intersection(&self, other: &PiiSet) -> PiiSet {
        PiiSet(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn difference(&self, other: &PiiSet) -> PiiSet {
        PiiSet(self.0.difference(&other.0).cloned().collect())
    }
}

impl FromIterator<(PiiClass, String)> for PiiSet {
    fn from_iter<I: IntoIterator<Item = (PiiClass, String)>>(iter: I) -> Self {
        let mut set = PiiSet::new();
        for (c, s) in iter {
            set.insert(c, &s);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaggerError {
    #[error("NER service transport failure: {0}")]
    Transport(String),
    #[error("NER service mapping failure: {0}")]
    Mapping(String),
    #[error("tagger configuration: {0}")]
    Config(String),
}

/// Gazetteer: class -> phrases matched case-insensitively on word boundaries.
pub type Gazetteer = BTreeMap<PiiClass, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaggerConfig {
    BuiltinRules {
        #[serde(default)]
        gazetteer: Gazetteer,
    },
    ExternalService {
        url: String,
        /// service label -> class; defaults to the upper-case class names
        #[serde(default)]
        label_map: BTreeMap<String, PiiClass>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig::BuiltinRules {
            gazetteer: Gazetteer::new(),
        }
    }
}

impl TaggerConfig {
    /// Stable digest of the configuration, for manifests.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("tagger config serializes");
        hex::encode(Sha256::digest(&body))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub spans: Vec<PiiSpan>,
    /// external-service entities whose label had no class mapping
    pub dropped_unknown: usize,
}

#[derive(Clone)]
pub enum Tagger {
    Builtin(Arc<RuleTagger>),
    External(Arc<ExternalTagger>),
}

impl Tagger {
    pub fn from_config(config: &TaggerConfig) -> Result<Self, TaggerError> {
        match config {
            TaggerConfig::BuiltinRules { gazetteer } => {
                Ok(Tagger::Builtin(Arc::new(RuleTagger::new(gazetteer)?)))
            }
            TaggerConfig::ExternalService {
                url,
                label_map,
                timeout_ms,
            } => {
                let transport = HttpNerTransport::new(url, Duration::from_millis(*timeout_ms));
                Ok(Tagger::External(Arc::new(ExternalTagger::new(
                    Arc::new(transport),
                    label_map.clone(),
                ))))
            }
        }
    }

    pub fn builtin(gazetteer: &Gazetteer) -> Self {
        Tagger::Builtin(Arc::new(
            RuleTagger::new(gazetteer).expect("escaped gazetteer patterns compile"),
        ))
    }

    pub fn extract(&self, text: &str) -> Result<Extraction, TaggerError> {
        match self {
            Tagger::Builtin(t) => Ok(Extraction {
                spans: t.extract(text),
                dropped_unknown: 0,
            }),
            Tagger::External(t) => t.extract(text),
        }
    }

    pub fn pii_set(&self, text: &str) -> Result<PiiSet, TaggerError> {
        Ok(PiiSet::from_spans(&self.extract(text)?.spans))
    }
}

pub fn extract_pii(text: &str, tagger: &Tagger) -> Result<Vec<PiiSpan>, TaggerError> {
    tagger.extract(text).map(|e| e.spans)
}

const MONTHS: &str = "january|february|march|april|may|june|july|august|september|october|november|december|jan\\.?|feb\\.?|mar\\.?|apr\\.?|jun\\.?|jul\\.?|aug\\.?|sept?\\.?|oct\\.?|nov\\.?|dec\\.?";

fn rule_patterns() -> Vec<(PiiClass, String)> {
    let m = MONTHS;
    let num = r"\d[\d,]*(?:\.\d+)?";
    vec![
        (PiiClass::Date, format!(r"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:of\s+)?(?:{m})\s+\d{{4}}\b")),
        (PiiClass::Date, format!(r"\b(?:{m})\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?\b")),
        (PiiClass::Date, format!(r"\b(?:{m})\s+\d{{4}}\b")),
        (PiiClass::Date, r"\b\d{4}-\d{2}-\d{2}\b".to_string()),
        (PiiClass::Date, r"\b\d{1,2}/\d{1,2}/\d{2,4}\b".to_string()),
        (PiiClass::Date, r"\b(?:1[5-9]\d{2}|20\d{2})s?\b".to_string()),
        (
            PiiClass::Date,
            r"\b(?:january|february|march|april|june|july|august|september|october|november|december|monday|tuesday|wednesday|thursday|friday|saturday|sunday|yesterday|today|tomorrow)\b".to_string(),
        ),
        (PiiClass::Time, r"\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?[ap]\.?m\b\.?)?".to_string()),
        (PiiClass::Time, r"\b\d{1,2}\s?[ap]\.?m\b\.?".to_string()),
        (PiiClass::Time, r"\b(?:noon|midnight)\b".to_string()),
        (PiiClass::Percent, format!(r"\b{num}\s?(?:%|percent\b|per\s+cent\b)")),
        (
            PiiClass::Money,
            format!(r"[$€£¥]\s?{num}(?:\s?(?:million|billion|thousand|bn|m|k)\b)?"),
        ),
        (
            PiiClass::Money,
            format!(r"\b{num}\s?(?:million\s+|billion\s+)?(?:dollars|euros|pounds sterling|usd|eur|gbp|yen)\b"),
        ),
        (
            PiiClass::Quantity,
            format!(r"\b{num}\s?(?:metres|meters|kilometres|kilometers|km|miles|kg|kilograms|grams|lbs|tons|tonnes|feet|ft|inches|cm|mm|litres|liters|acres|hectares|square\s+miles)\b"),
        ),
        (PiiClass::Ordinal, r"\b\d+(?:st|nd|rd|th)\b".to_string()),
        (
            PiiClass::Ordinal,
            r"\b(?:first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|eleventh|twelfth|twentieth|hundredth)\b".to_string(),
        ),
        (PiiClass::Cardinal, format!(r"\b{num}\b")),
        (
            PiiClass::Cardinal,
            r"\b(?:two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|dozens?|hundreds?|thousands?|millions?|billions?)\b".to_string(),
        ),
    ]
}

struct Candidate {
    start: usize,
    end: usize,
    class: PiiClass,
    rank: usize,
}

/// Leftmost-longest selection of non-overlapping candidates, lower rank
/// winning exact ties.
fn select(mut cands: Vec<Candidate>, taken: &mut Vec<(usize, usize)>) -> Vec<Candidate> {
    cands.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then((b.end - b.start).cmp(&(a.end - a.start)))
            .then(a.rank.cmp(&b.rank))
    });
    let mut out = Vec::new();
    for c in cands {
        if taken.iter().any(|&(s, e)| c.start < e && s < c.end) {
            continue;
        }
        taken.push((c.start, c.end));
        out.push(c);
    }
    out
}

/// Deterministic tagger: gazetteer phrases first, then numeric and temporal
/// rules over whatever text the gazetteer left untagged.
pub struct RuleTagger {
    gazetteer: Vec<(PiiClass, Regex)>,
    rules: Vec<(PiiClass, Regex)>,
}

fn build(pattern: &str) -> Result<Regex, TaggerError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .size_limit(1 << 26)
        .build()
        .map_err(|e| TaggerError::Config(e.to_string()))
}

fn phrase_pattern(phrase: &str) -> Option<String> {
    let words: Vec<String> = phrase.split_whitespace().map(regex::escape).collect();
    if words.is_empty() {
        return None;
    }
    let first = phrase.trim().chars().next()?;
    let last = phrase.trim().chars().last()?;
    let pre = if first.is_alphanumeric() { r"\b" } else { "" };
    let post = if last.is_alphanumeric() { r"\b" } else { "" };
    Some(format!("{pre}{}{post}", words.join(r"\s+")))
}

impl RuleTagger {
    pub fn new(gazetteer: &Gazetteer) -> Result<Self, TaggerError> {
        let mut gaz = Vec::new();
        for (&class, phrases) in gazetteer {
            let mut pats: Vec<(usize, String)> = phrases
                .iter()
                .filter_map(|p| phrase_pattern(p).map(|pat| (p.len(), pat)))
                .collect();
            if pats.is_empty() {
                continue;
            }
            pats.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            pats.dedup_by(|a, b| a.1 == b.1);
            let alternation = pats.into_iter().map(|(_, p)| p).collect::<Vec<_>>().join("|");
            gaz.push((class, build(&format!("(?:{alternation})"))?));
        }
        let rules = rule_patterns()
            .into_iter()
            .map(|(c, p)| build(&p).map(|r| (c, r)))
            .collect::<Result<_, _>>()?;
        Ok(RuleTagger {
            gazetteer: gaz,
            rules,
        })
    }

    pub fn extract(&self, text: &str) -> Vec<PiiSpan> {
        let mut taken = Vec::new();
        let collect = |set: &[(PiiClass, Regex)]| -> Vec<Candidate> {
            let mut cands = Vec::new();
            for (rank, (class, re)) in set.iter().enumerate() {
                // overlapping starts matter across phrases, so scan from every match start
                let mut at = 0;
                while let Some(m) = re.find_at(text, at) {
                    if m.end() > m.start() {
                        cands.push(Candidate {
                            start: m.start(),
                            end: m.end(),
                            class: *class,
                            rank,
                        });
                    }
                    let step = text[m.start()..].chars().next().map_or(1, char::len_utf8);
                    at = m.start() + step;
                    if at > text.len() {
                        break;
                    }
                }
            }
            cands
        };
        let mut chosen = select(collect(&self.gazetteer), &mut taken);
        chosen.extend(select(collect(&self.rules), &mut taken));
        chosen.sort_by_key(|c| c.start);
        let offsets = CharOffsets::new(text);
        chosen
            .into_iter()
            .map(|c| PiiSpan {
                surface: text[c.start..c.end].to_string(),
                class: c.class,
                start: offsets.char_at(c.start),
                end: offsets.char_at(c.end),
            })
            .collect()
    }
}

struct CharOffsets(Vec<usize>);

impl CharOffsets {
    fn new(text: &str) -> Self {
        CharOffsets(text.char_indices().map(|(b, _)| b).collect())
    }

    fn char_at(&self, byte: usize) -> usize {
        self.0.partition_point(|&b| b < byte)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerEntity {
    pub text: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerResponse {
    pub entities: Vec<NerEntity>,
}

/// Wire access to an NER service: `POST {"text": ...}` -> [`NerResponse`].
pub trait NerTransport: Send + Sync {
    fn tag(&self, text: &str) -> Result<NerResponse, TaggerError>;
}

pub struct HttpNerTransport {
    agent: ureq::Agent,
    url: String,
}

impl HttpNerTransport {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpNerTransport {
            agent,
            url: url.to_string(),
        }
    }
}

impl NerTransport for HttpNerTransport {
    fn tag(&self, text: &str) -> Result<NerResponse, TaggerError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(serde_json::json!({ "text": text }))
            .map_err(|e| TaggerError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TaggerError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TaggerError::Transport(format!("status {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| TaggerError::Mapping(format!("bad body: {e}")))
    }
}

pub struct ExternalTagger {
    transport: Arc<dyn NerTransport>,
    label_map: HashMap<String, PiiClass>,
}

impl ExternalTagger {
    /// `overrides` take precedence over the default identity mapping from
    /// upper-case class names (`PERSON`, `WORK_OF_ART`, ...).
    pub fn new(transport: Arc<dyn NerTransport>, overrides: BTreeMap<String, PiiClass>) -> Self {
        let mut label_map: HashMap<String, PiiClass> = PiiClass::ALL
            .into_iter()
            .map(|c| (c.as_str().to_uppercase(), c))
            .collect();
        for (label, class) in overrides {
            label_map.insert(label.to_uppercase(), class);
        }
        ExternalTagger {
            transport,
            label_map,
        }
    }

    pub fn extract(&self, text: &str) -> Result<Extraction, TaggerError> {
        let resp = self.transport.tag(text)?;
        let chars: Vec<char> = text.chars().collect();
        let mut dropped = 0;
        let mut cands = Vec::new();
        for ent in resp.entities {
            let Some(&class) = self.label_map.get(&ent.label.to_uppercase()) else {
                tracing::warn!(label = %ent.label, "unmapped NER label; span dropped");
                dropped += 1;
                continue;
            };
            if ent.start >= ent.end || ent.end > chars.len() {
                return Err(TaggerError::Mapping(format!(
                    "entity {:?} has offsets {}..{} outside text of {} chars",
                    ent.text,
                    ent.start,
                    ent.end,
                    chars.len()
                )));
            }
            let surface: String = chars[ent.start..ent.end].iter().collect();
            if surface != ent.text {
                return Err(TaggerError::Mapping(format!(
                    "entity text {:?} does not match offsets {}..{} ({surface:?})",
                    ent.text, ent.start, ent.end
                )));
            }
            cands.push(Candidate {
                start: ent.start,
                end: ent.end,
                class,
                rank: 0,
            });
        }
        let mut taken = Vec::new();
        let mut spans: Vec<PiiSpan> = select(cands, &mut taken)
            .into_iter()
            .map(|c| PiiSpan {
                surface: chars[c.start..c.end].iter().collect(),
                class: c.class,
                start: c.start,
                end: c.end,
            })
            .collect();
        spans.sort_by_key(|s| s.start);
        Ok(Extraction {
            spans,
            dropped_unknown: dropped,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn gaz(entries: &[(PiiClass, &[&str])]) -> Gazetteer {
        entries
            .iter()
            .map(|(c, v)| (*c, v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn pairs(spans: &[PiiSpan]) -> Vec<(PiiClass, &str)> {
        spans.iter().map(|s| (s.class, s.surface.as_str())).collect()
    }

    #[test]
    fn gazetteer_places() {
        let t = Tagger::builtin(&gaz(&[(PiiClass::Gpe, &["Copenhagen", "Denmark"])]));
        let spans = extract_pii("Copenhagen, Denmark", &t).unwrap();
        assert_eq!(
            pairs(&spans),
            [(PiiClass::Gpe, "Copenhagen"), (PiiClass::Gpe, "Denmark")]
        );
        assert_eq!((spans[1].start, spans[1].end), (12, 19));
    }

    #[test]
    fn rule_classes() {
        let t = Tagger::builtin(&Gazetteer::new());
        let cases: &[(&str, PiiClass, &str)] = &[
            ("rose 42.1% overall", PiiClass::Percent, "42.1%"),
            ("on 8 July 2014 in", PiiClass::Date, "8 July 2014"),
            ("in 2014", PiiClass::Date, "2014"),
            ("at 2:02:57 sharp", PiiClass::Time, "2:02:57"),
            ("cost €375 total", PiiClass::Money, "€375"),
            ("ran 82 metres", PiiClass::Quantity, "82 metres"),
            ("the 51st contest", PiiClass::Ordinal, "51st"),
            ("the second time", PiiClass::Ordinal, "second"),
            ("got 181 points", PiiClass::Cardinal, "181"),
        ];
        for (text, class, surface) in cases {
            let spans = extract_pii(text, &t).unwrap();
            assert_eq!(pairs(&spans), [(*class, *surface)], "{text}");
        }
        assert!(extract_pii("", &t).unwrap().is_empty());
    }

    #[test]
    fn gazetteer_wins_over_rules_and_is_case_insensitive() {
        let t = Tagger::builtin(&gaz(&[(PiiClass::WorkOfArt, &["The BRW Rich 200, 2014"])]));
        let spans = extract_pii("listed in the brw rich 200, 2014 here", &t).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].class, PiiClass::WorkOfArt);
        assert_eq!(spans[0].surface, "the brw rich 200, 2014");
    }

    #[test]
    fn longest_gazetteer_phrase_wins() {
        let t = Tagger::builtin(&gaz(&[
            (PiiClass::Person, &["Emmelie de Forest"]),
            (PiiClass::Loc, &["Forest"]),
        ]));
        let spans = extract_pii("winner Emmelie  de Forest sang", &t).unwrap();
        assert_eq!(pairs(&spans), [(PiiClass::Person, "Emmelie  de Forest")]);
    }

    #[test]
    fn normalization_examples() {
        let span = |class, s: &str| PiiSpan {
            surface: s.into(),
            class,
            start: 0,
            end: s.chars().count(),
        };
        assert_eq!(
            normalize_pii(&span(PiiClass::Person, "Emmelie de  Forest")),
            (PiiClass::Person, "emmelie de forest".to_string())
        );
        assert_eq!(
            normalize_pii(&span(PiiClass::Date, "2014")),
            (PiiClass::Date, "2014".to_string())
        );
        assert_eq!(
            normalize_pii(&span(PiiClass::Org, "EBU)")),
            (PiiClass::Org, "ebu".to_string())
        );
        assert_eq!(normalize_surface("42.1%"), "42.1%");
        assert_eq!(normalize_surface("\u{FF21}BC"), "abc");
    }

    #[test]
    fn class_names_round_trip() {
        for c in PiiClass::ALL {
            assert_eq!(c.as_str().parse::<PiiClass>().unwrap(), c);
            assert_eq!(c.as_str().to_uppercase().parse::<PiiClass>().unwrap(), c);
        }
        assert_eq!("work of art".parse::<PiiClass>().unwrap(), PiiClass::WorkOfArt);
        assert!("misc".parse::<PiiClass>().is_err());
    }

    struct Canned(Result<NerResponse, TaggerError>);

    impl NerTransport for Canned {
        fn tag(&self, _: &str) -> Result<NerResponse, TaggerError> {
            self.0.clone()
        }
    }

    fn ent(text: &str, label: &str, start: usize, end: usize) -> NerEntity {
        NerEntity {
            text: text.into(),
            label: label.into(),
            start,
            end,
        }
    }

    #[test]
    fn external_maps_labels_and_counts_unknown() {
        let resp = NerResponse {
            entities: vec![
                ent("Emmelie", "PER", 0, 7),
                ent("Denmark", "GPE", 17, 24),
                ent("thing", "MISC", 8, 13),
            ],
        };
        let mut overrides = BTreeMap::new();
        overrides.insert("PER".to_string(), PiiClass::Person);
        let t = ExternalTagger::new(Arc::new(Canned(Ok(resp))), overrides);
        let ex = t.extract("Emmelie thing in Denmark").unwrap();
        assert_eq!(
            pairs(&ex.spans),
            [(PiiClass::Person, "Emmelie"), (PiiClass::Gpe, "Denmark")]
        );
        assert_eq!(ex.dropped_unknown, 1);
    }

    #[test]
    fn external_errors_are_distinguished() {
        let down = ExternalTagger::new(
            Arc::new(Canned(Err(TaggerError::Transport("refused".into())))),
            BTreeMap::new(),
        );
        assert!(matches!(down.extract("x"), Err(TaggerError::Transport(_))));

        let bad = NerResponse {
            entities: vec![ent("Denmark", "GPE", 0, 40)],
        };
        let t = ExternalTagger::new(Arc::new(Canned(Ok(bad))), BTreeMap::new());
        assert!(matches!(t.extract("Denmark"), Err(TaggerError::Mapping(_))));
    }

    #[test]
    fn unreachable_http_service_is_a_transport_error() {
        let cfg = TaggerConfig::ExternalService {
            url: "http://127.0.0.1:9/ner".into(),
            label_map: BTreeMap::new(),
            timeout_ms: 2000,
        };
        let t = Tagger::from_config(&cfg).unwrap();
        assert!(matches!(t.extract("x"), Err(TaggerError::Transport(_))));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_surface(&s);
            prop_assert_eq!(normalize_surface(&once), once);
        }

        #[test]
        fn gazetteer_entries_are_always_found(
            picks in proptest::collection::vec(0usize..6, 1..5),
            filler in proptest::collection::vec("[a-z]{3,7}", 1..6),
        ) {
            let names = ["Emmelie de Forest", "Copenhagen", "Taichung", "Only Teardrops", "Steven J Kean", "Jeff Dasovich"];
            let g = gaz(&[(PiiClass::Person, &names)]);
            let t = Tagger::builtin(&g);
            let mut text = String::new();
            for (i, p) in picks.iter().enumerate() {
                text.push_str(&filler[i % filler.len()]);
                text.push(' ');
                text.push_str(names[*p]);
                text.push_str(", ");
            }
            let set = t.pii_set(&text).unwrap();
            for p in &picks {
                prop_assert!(set.contains(PiiClass::Person, &normalize_surface(names[*p])));
            }
        }

        #[test]
        fn extraction_is_deterministic(s in "[A-Za-z0-9 ,.%$]{0,60}") {
            let t = Tagger::builtin(&gaz(&[(PiiClass::Gpe, &["Denmark"])]));
            prop_assert_eq!(t.pii_set(&s).unwrap(), t.pii_set(&s).unwrap());
            for span in t.extract(&s).unwrap().spans {
                let sub: String = s.chars().skip(span.start).take(span.end - span.start).collect();
                prop_assert!(span.start < span.end);
                prop_assert_eq!(sub, span.surface);
            }
        }
    }
}
