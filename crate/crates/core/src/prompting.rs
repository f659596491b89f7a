//! Prompt construction, token budget checks and output parsing.
//!
//! Templates are plain text with `{key}` placeholders. `{context}` is special:
//! it expands to one `- key: value` line per context entry (or nothing). Any
//! other placeholder must be supplied by the caller.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const VERBOSE_V1: &str = include_str!("../templates/verbose_v1.txt");
const PRUNED_V1: &str = include_str!("../templates/pruned_v1.txt");
const MINIMAL_V1: &str = include_str!("../templates/minimal_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTier {
    Verbose,
    Pruned,
    Minimal,
}

impl PromptTier {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptTier::Verbose => "verbose",
            PromptTier::Pruned => "pruned",
            PromptTier::Minimal => "minimal",
        }
    }

    pub fn default_max_new_tokens(self) -> u32 {
        match self {
            PromptTier::Verbose => 256,
            PromptTier::Pruned => 128,
            PromptTier::Minimal => 3,
        }
    }

    pub fn output_format(self) -> OutputFormat {
        match self {
            PromptTier::Verbose | PromptTier::Pruned => OutputFormat::XmlThinkAnswer,
            PromptTier::Minimal => OutputFormat::BareWord,
        }
    }
}

impl fmt::Display for PromptTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptTier {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "verbose" => Ok(PromptTier::Verbose),
            "pruned" => Ok(PromptTier::Pruned),
            "minimal" => Ok(PromptTier::Minimal),
            _ => Err(PromptError::UnknownTier(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    BareWord,
    XmlThinkAnswer,
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt tier {0:?}")]
    UnknownTier(String),
    #[error("template references {{{0}}} but the context has no such key")]
    MissingContextKey(String),
    #[error("max_new_tokens must be at least 1")]
    ZeroTokenBudget,
    #[error("prompt template is empty")]
    EmptyTemplate,
    #[error("minimal prompts must use the bare_word output format")]
    MinimalNeedsBareWord,
    #[error("failed to read template {path}: {detail}")]
    Io { path: String, detail: String },
}

/// Lowercase hex SHA-256 of the template bytes.
pub fn template_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A versioned prompt template.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub tier: PromptTier,
    pub text: String,
    pub hash: String,
}

impl PromptTemplate {
    pub fn builtin(tier: PromptTier) -> Self {
        let text = match tier {
            PromptTier::Verbose => VERBOSE_V1,
            PromptTier::Pruned => PRUNED_V1,
            PromptTier::Minimal => MINIMAL_V1,
        };
        Self::new(tier, text.to_string())
    }

    pub fn new(tier: PromptTier, text: String) -> Self {
        let hash = template_hash(text.as_bytes());
        PromptTemplate { tier, text, hash }
    }

    pub fn from_file(tier: PromptTier, path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(Self::new(tier, text))
    }

    /// Fills placeholders from `context`. Text that is not a `{identifier}`
    /// is copied verbatim.
    pub fn render(&self, context: &BTreeMap<String, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let key_len = after
                .find('}')
                .filter(|&end| end > 0 && after[..end].chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            match key_len {
                Some(end) => {
                    let key = &after[..end];
                    if key == "context" {
                        out.push_str(&render_context(context));
                    } else {
                        let value = context
                            .get(key)
                            .ok_or_else(|| PromptError::MissingContextKey(key.to_string()))?;
                        out.push_str(value);
                    }
                    rest = &after[end + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn render_context(context: &BTreeMap<String, String>) -> String {
    if context.is_empty() {
        return String::new();
    }
    let mut block = String::from("Driving context:");
    for (k, v) in context {
        block.push_str(&format!("\n- {k}: {v}"));
    }
    block
}

fn default_allowed_answers() -> Vec<String> {
    ["Anomaly", "Normal", "Unknown"].iter().map(|s| s.to_string()).collect()
}

/// The prompt actually sent to the model, with its token budget and the
/// output format the parser will expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub tier: PromptTier,
    pub text: String,
    pub max_new_tokens: u32,
    pub expected_format: OutputFormat,
    #[serde(default = "default_allowed_answers")]
    pub allowed_answers: Vec<String>,
    /// Hash of the template this prompt was rendered from.
    pub template_hash: String,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.text.trim().is_empty() {
            return Err(PromptError::EmptyTemplate);
        }
        if self.max_new_tokens == 0 {
            return Err(PromptError::ZeroTokenBudget);
        }
        if self.tier == PromptTier::Minimal && self.expected_format != OutputFormat::BareWord {
            return Err(PromptError::MinimalNeedsBareWord);
        }
        Ok(())
    }

    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Result<Self, PromptError> {
        self.max_new_tokens = max_new_tokens;
        self.validate()?;
        Ok(self)
    }

    /// Wraps a committed answer the way a compliant model would emit it.
    pub fn format_answer(&self, answer: &str, rationale: Option<&str>) -> String {
        match self.expected_format {
            OutputFormat::BareWord => answer.to_string(),
            OutputFormat::XmlThinkAnswer => match rationale {
                Some(r) => format!("<think>{r}</think><answer>{answer}</answer>"),
                None => format!("<answer>{answer}</answer>"),
            },
        }
    }
}

/// Renders the built-in template for `tier`.
pub fn build_prompt(tier: PromptTier, context: &BTreeMap<String, String>) -> Result<PromptSpec, PromptError> {
    build_prompt_from(&PromptTemplate::builtin(tier), context)
}

pub fn build_prompt_from(
    template: &PromptTemplate,
    context: &BTreeMap<String, String>,
) -> Result<PromptSpec, PromptError> {
    let spec = PromptSpec {
        tier: template.tier,
        text: template.render(context)?,
        max_new_tokens: template.tier.default_max_new_tokens(),
        expected_format: template.tier.output_format(),
        allowed_answers: default_allowed_answers(),
        template_hash: template.hash.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Anomaly,
    Normal,
    Unknown,
    Unparseable,
}

impl Answer {
    fn from_word(word: &str) -> Option<Self> {
        [Answer::Anomaly, Answer::Normal, Answer::Unknown]
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(word))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Anomaly => "Anomaly",
            Answer::Normal => "Normal",
            Answer::Unknown => "Unknown",
            Answer::Unparseable => "Unparseable",
        }
    }
}

/// Parsed model output. `violation()` is 1 exactly when the answer is
/// `Anomaly`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedVerdict {
    pub answer: Answer,
    pub think_text: Option<String>,
    pub tokens_generated: u32,
}

impl ParsedVerdict {
    pub fn violation(&self) -> u8 {
        u8::from(self.answer == Answer::Anomaly)
    }

    fn unparseable() -> Self {
        ParsedVerdict {
            answer: Answer::Unparseable,
            think_text: None,
            tokens_generated: 0,
        }
    }
}

fn strip_word(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
}

fn match_allowed(word: &str, spec: &PromptSpec) -> Option<Answer> {
    let word = strip_word(word);
    spec.allowed_answers
        .iter()
        .find(|a| a.eq_ignore_ascii_case(word))
        .and_then(|a| Answer::from_word(a))
}

// Byte range of the contents of the last complete `<tag>...</tag>` span in
// `haystack[..limit]`. `lower` is the ASCII-lowercased haystack.
fn last_span(lower: &str, tag: &str, limit: usize) -> Option<(usize, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let close_at = lower[..limit].rfind(&close)?;
    let open_at = lower[..close_at].rfind(&open)?;
    Some((open_at + open.len(), close_at))
}

/// Maps raw model text to a verdict. Never fails: anything that does not
/// match the expected format is `Unparseable`.
pub fn parse_output(raw: &str, spec: &PromptSpec) -> ParsedVerdict {
    match spec.expected_format {
        OutputFormat::BareWord => match match_allowed(raw, spec) {
            Some(answer) => ParsedVerdict {
                answer,
                think_text: None,
                tokens_generated: 0,
            },
            None => ParsedVerdict::unparseable(),
        },
        OutputFormat::XmlThinkAnswer => {
            // ASCII lowercasing keeps byte offsets aligned with `raw`.
            let lower = raw.to_ascii_lowercase();
            let Some((a_start, a_end)) = last_span(&lower, "answer", lower.len()) else {
                return ParsedVerdict::unparseable();
            };
            let Some(answer) = match_allowed(&raw[a_start..a_end], spec) else {
                return ParsedVerdict::unparseable();
            };
            let think_text = last_span(&lower, "think", a_start)
                .map(|(s, e)| raw[s..e].trim().to_string())
                .filter(|t| !t.is_empty());
            ParsedVerdict {
                answer,
                think_text,
                tokens_generated: 0,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetStatus {
    Ok,
    Exceeded { overshoot: u32 },
}

pub fn enforce_budget(spec: &PromptSpec, tokens_generated: u32) -> BudgetStatus {
    if tokens_generated <= spec.max_new_tokens {
        BudgetStatus::Ok
    } else {
        BudgetStatus::Exceeded {
            overshoot: tokens_generated - spec.max_new_tokens,
        }
    }
}

/// Per-window outcome class. `TimedOut` is only ever assigned by the
/// orchestrator's watchdog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionClass {
    Normal,
    Anomaly,
    Unknown,
    Unparseable,
    TimedOut,
}

impl DecisionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionClass::Normal => "Normal",
            DecisionClass::Anomaly => "Anomaly",
            DecisionClass::Unknown => "Unknown",
            DecisionClass::Unparseable => "Unparseable",
            DecisionClass::TimedOut => "TimedOut",
        }
    }
}

/// Binary decision `z` plus the class kept for scoring. Only `Anomaly`
/// produces `z = 1`.
pub fn to_decision(verdict: &ParsedVerdict) -> (u8, DecisionClass) {
    let class = match verdict.answer {
        Answer::Anomaly => DecisionClass::Anomaly,
        Answer::Normal => DecisionClass::Normal,
        Answer::Unknown => DecisionClass::Unknown,
        Answer::Unparseable => DecisionClass::Unparseable,
    };
    (verdict.violation(), class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn no_context() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    #[test]
    fn minimal_prompt_is_the_one_sentence_box() {
        let spec = build_prompt(PromptTier::Minimal, &no_context()).unwrap();
        assert_eq!(
            spec.text,
            "You are an autonomous vehicle. Analyze the scene and determine whether it violates \
             normal driving expectations. Output only one word: 'Anomaly' or 'Normal'."
        );
        assert_eq!(spec.expected_format, OutputFormat::BareWord);
        assert_eq!(spec.max_new_tokens, 3);
    }

    #[test]
    fn verbose_prompt_requires_think_answer_tags() {
        let spec = build_prompt(PromptTier::Verbose, &no_context()).unwrap();
        assert_eq!(spec.expected_format, OutputFormat::XmlThinkAnswer);
        assert!(spec.text.contains("<think>") && spec.text.contains("<answer>"));
        for class in ["longitudinal cracks", "alligator cracking", "potholes"] {
            assert!(spec.text.contains(class), "missing {class}");
        }
        assert!(!spec.text.contains("{context}"));
        assert!(!spec.text.contains("Driving context"));
    }

    #[test]
    fn pruned_prompt_drops_rationale_and_keeps_context() {
        let ctx = BTreeMap::from([("road".to_string(), "urban".to_string())]);
        let pruned = build_prompt(PromptTier::Pruned, &ctx).unwrap();
        let verbose = build_prompt(PromptTier::Verbose, &ctx).unwrap();
        assert!(pruned.text.contains("- road: urban"));
        assert!(!pruned.text.contains("Rationale"));
        assert!(!pruned.text.contains("Severity thresholds"));
        assert!(verbose.text.contains("Rationale"));
        assert!(pruned.text.len() < verbose.text.len());
    }

    #[test]
    fn unknown_tier_and_missing_key() {
        assert_eq!(
            "terse".parse::<PromptTier>(),
            Err(PromptError::UnknownTier("terse".into()))
        );
        let t = PromptTemplate::new(PromptTier::Pruned, "Road is {road_type}.".into());
        assert_eq!(
            t.render(&no_context()),
            Err(PromptError::MissingContextKey("road_type".into()))
        );
        let ctx = BTreeMap::from([("road_type".to_string(), "rural".to_string())]);
        assert_eq!(t.render(&ctx).unwrap(), "Road is rural.");
        // braces that are not placeholders pass through
        let t = PromptTemplate::new(PromptTier::Pruned, "json {\"a\": 1} {}".into());
        assert_eq!(t.render(&no_context()).unwrap(), "json {\"a\": 1} {}");
    }

    #[test]
    fn template_hash_is_lowercase_sha256_of_file_bytes() {
        let t = PromptTemplate::builtin(PromptTier::Minimal);
        assert_eq!(t.hash, template_hash(MINIMAL_V1.as_bytes()));
        assert_eq!(t.hash.len(), 64);
        assert!(t.hash.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        assert_eq!(
            template_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn parses_think_answer_output() {
        let spec = build_prompt(PromptTier::Verbose, &no_context()).unwrap();
        let v = parse_output("<think>pothole ahead</think><answer>Anomaly</answer>", &spec);
        assert_eq!(v.answer, Answer::Anomaly);
        assert_eq!(v.violation(), 1);
        assert_eq!(v.think_text.as_deref(), Some("pothole ahead"));
    }

    #[test]
    fn last_answer_tag_wins_and_matching_is_lenient() {
        let spec = build_prompt(PromptTier::Verbose, &no_context()).unwrap();
        let raw = "<think>format is <answer>Anomaly</answer></think>\n<ANSWER> normal. </Answer>";
        let v = parse_output(raw, &spec);
        assert_eq!(v.answer, Answer::Normal);
        assert_eq!(v.violation(), 0);
    }

    #[test]
    fn bare_word_parsing() {
        let spec = build_prompt(PromptTier::Minimal, &no_context()).unwrap();
        assert_eq!(parse_output("Normal", &spec).answer, Answer::Normal);
        assert_eq!(parse_output("  'anomaly'\n", &spec).answer, Answer::Anomaly);
        assert_eq!(parse_output("Unknown", &spec).answer, Answer::Unknown);
        let v = parse_output("The scene looks fine overall.", &spec);
        assert_eq!(v.answer, Answer::Unparseable);
        assert_eq!(v.think_text, None);
        assert_eq!(parse_output("", &spec).answer, Answer::Unparseable);
        assert_eq!(
            parse_output("<answer>Normal</answer>", &spec).answer,
            Answer::Unparseable
        );
    }

    #[test]
    fn xml_output_without_tags_is_unparseable() {
        let spec = build_prompt(PromptTier::Verbose, &no_context()).unwrap();
        assert_eq!(parse_output("Anomaly", &spec).answer, Answer::Unparseable);
        assert_eq!(parse_output("<answer>Anomaly", &spec).answer, Answer::Unparseable);
        assert_eq!(
            parse_output("<answer>Classification: Anomaly</answer>", &spec).answer,
            Answer::Unparseable
        );
    }

    #[test]
    fn restricted_allowed_answers() {
        let mut spec = build_prompt(PromptTier::Minimal, &no_context()).unwrap();
        spec.allowed_answers = vec!["Anomaly".into(), "Normal".into()];
        assert_eq!(parse_output("Unknown", &spec).answer, Answer::Unparseable);
    }

    #[test]
    fn budget_enforcement() {
        let spec = build_prompt(PromptTier::Minimal, &no_context()).unwrap();
        assert_eq!(spec.max_new_tokens, 3);
        assert_eq!(enforce_budget(&spec, 3), BudgetStatus::Ok);
        assert_eq!(enforce_budget(&spec, 7), BudgetStatus::Exceeded { overshoot: 4 });
        assert_eq!(enforce_budget(&spec, 0), BudgetStatus::Ok);
        assert_eq!(spec.with_max_new_tokens(0), Err(PromptError::ZeroTokenBudget));
    }

    #[test]
    fn minimal_tier_must_be_bare_word() {
        let mut spec = build_prompt(PromptTier::Minimal, &no_context()).unwrap();
        spec.expected_format = OutputFormat::XmlThinkAnswer;
        assert_eq!(spec.validate(), Err(PromptError::MinimalNeedsBareWord));
    }

    #[test]
    fn decisions() {
        let mk = |answer| ParsedVerdict {
            answer,
            think_text: None,
            tokens_generated: 1,
        };
        assert_eq!(to_decision(&mk(Answer::Anomaly)), (1, DecisionClass::Anomaly));
        assert_eq!(to_decision(&mk(Answer::Normal)), (0, DecisionClass::Normal));
        assert_eq!(to_decision(&mk(Answer::Unknown)), (0, DecisionClass::Unknown));
        assert_eq!(
            to_decision(&mk(Answer::Unparseable)),
            (0, DecisionClass::Unparseable)
        );
    }

    proptest! {
        #[test]
        fn answer_round_trip(idx in 0usize..3, pad in "[ \t\n]{0,3}") {
            let spec = build_prompt(PromptTier::Verbose, &BTreeMap::new()).unwrap();
            let a = spec.allowed_answers[idx].clone();
            let v = parse_output(&format!("<answer>{pad}{a}{pad}</answer>"), &spec);
            prop_assert_eq!(v.answer.as_str(), a.as_str());
        }

        #[test]
        fn parser_is_total_and_only_anomaly_is_positive(raw in any::<String>(), bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let lossy = String::from_utf8_lossy(&bytes).into_owned();
            for tier in [PromptTier::Verbose, PromptTier::Minimal] {
                let spec = build_prompt(tier, &BTreeMap::new()).unwrap();
                for input in [&raw, &lossy] {
                    let v = parse_output(input, &spec);
                    let (z, class) = to_decision(&v);
                    prop_assert_eq!(z == 1, v.answer == Answer::Anomaly);
                    prop_assert_eq!(z == 1, class == DecisionClass::Anomaly);
                    if v.answer == Answer::Unparseable {
                        prop_assert!(v.think_text.is_none());
                    }
                }
            }
        }
    }
}
