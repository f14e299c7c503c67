//! Instruction templates, the paraphrase corpus, and paraphrase expansion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Task;

pub const OBJECT: &str = "object";
pub const COLOR: &str = "color";

const BUNDLED_CORPUS: &str = include_str!("../assets/instructions.json");

/// Colors that may be bound to `{color}`, with their exact RGB values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedColor {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
    White,
}

impl NamedColor {
    pub const ALL: [NamedColor; 7] = [
        NamedColor::Red,
        NamedColor::Green,
        NamedColor::Blue,
        NamedColor::Yellow,
        NamedColor::Magenta,
        NamedColor::Cyan,
        NamedColor::White,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            NamedColor::Red => [255, 0, 0],
            NamedColor::Green => [0, 255, 0],
            NamedColor::Blue => [0, 0, 255],
            NamedColor::Yellow => [255, 255, 0],
            NamedColor::Magenta => [255, 0, 255],
            NamedColor::Cyan => [0, 255, 255],
            NamedColor::White => [255, 255, 255],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedColor::Red => "red",
            NamedColor::Green => "green",
            NamedColor::Blue => "blue",
            NamedColor::Yellow => "yellow",
            NamedColor::Magenta => "magenta",
            NamedColor::Cyan => "cyan",
            NamedColor::White => "white",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        NamedColor::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// The placeholder set a task's instructions must contain.
pub fn required_placeholders(task: Task) -> BTreeSet<&'static str> {
    match task {
        Task::Res => [OBJECT, COLOR].into(),
        Task::Rec => [OBJECT].into(),
        Task::Semseg | Task::Caption => BTreeSet::new(),
    }
}

/// Names of every `{name}` occurrence in `text`.
pub fn placeholders(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.insert(after[..close].to_string());
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

fn has_exact_placeholders(text: &str, task: Task) -> bool {
    let found = placeholders(text);
    let want = required_placeholders(task);
    found.len() == want.len() && want.iter().all(|p| found.contains(*p))
}

/// Literal substitution of every placeholder.
pub fn render(text: &str, bindings: &BTreeMap<&str, &str>) -> Result<String> {
    let names = placeholders(text);
    for name in &names {
        if !bindings.contains_key(name.as_str()) {
            return Err(Error::invalid(format!("no binding for placeholder {{{name}}} in {text:?}")));
        }
    }
    let mut out = text.to_string();
    for (name, value) in bindings {
        if !names.contains(*name) {
            return Err(Error::invalid(format!("binding {name:?} has no placeholder in {text:?}")));
        }
        out = out.replace(&format!("{{{name}}}"), value);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

/// Which variants `sample_instruction` may return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitFilter {
    Train,
    Heldout,
    All,
    /// Only the canonical template text (the fixed-template training regime).
    Template,
}

impl SplitFilter {
    fn admits(self, split: Split) -> bool {
        match self {
            SplitFilter::Train => split == Split::Train,
            SplitFilter::Heldout => split == Split::Heldout,
            SplitFilter::All => true,
            SplitFilter::Template => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionTemplate {
    pub id: String,
    pub task: Task,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub template_id: String,
    pub text: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub templates: Vec<InstructionTemplate>,
    pub variants: Vec<Variant>,
}

impl Corpus {
    pub fn bundled() -> Self {
        let c: Corpus = serde_json::from_str(BUNDLED_CORPUS).expect("bundled corpus parses");
        c.validate().expect("bundled corpus is valid");
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Corpus = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn template(&self, id: &str) -> Option<&InstructionTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Placeholder checks on every template and variant, plus train/heldout disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for t in &self.templates {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::invalid(format!("duplicate template id {:?}", t.id)));
            }
            if !has_exact_placeholders(&t.text, t.task) {
                return Err(Error::invalid(format!("template {:?} has wrong placeholders", t.id)));
            }
        }
        let mut seen: HashSet<(&str, &str)> = HashSet::new();
        let mut splits: BTreeMap<(&str, &str), Split> = BTreeMap::new();
        for v in &self.variants {
            let t = self
                .template(&v.template_id)
                .ok_or_else(|| Error::invalid(format!("variant refers to unknown template {:?}", v.template_id)))?;
            if !has_exact_placeholders(&v.text, t.task) {
                return Err(Error::invalid(format!("variant {:?} has wrong placeholders", v.text)));
            }
            let key = (v.template_id.as_str(), v.text.as_str());
            if let Some(prev) = splits.insert(key, v.split) {
                if prev != v.split {
                    return Err(Error::invalid(format!("variant {:?} is in both splits", v.text)));
                }
            }
            seen.insert(key);
        }
        Ok(())
    }

    /// Texts a task's instructions can be drawn from under `filter`, in corpus order.
    pub fn candidates(&self, task: Task, filter: SplitFilter) -> Vec<&str> {
        if filter == SplitFilter::Template {
            return self.templates.iter().filter(|t| t.task == task).map(|t| t.text.as_str()).collect();
        }
        self.variants
            .iter()
            .filter(|v| filter.admits(v.split))
            .filter(|v| self.template(&v.template_id).is_some_and(|t| t.task == task))
            .map(|v| v.text.as_str())
            .collect()
    }

    /// Uniform draw among the task's variants admitted by `filter`.
    pub fn sample_instruction<R: Rng + ?Sized>(&self, task: Task, rng: &mut R, filter: SplitFilter) -> Result<&str> {
        let c = self.candidates(task, filter);
        if c.is_empty() {
            return Err(Error::invalid(format!("no {task} instruction matches split {filter:?}")));
        }
        Ok(c[rng.gen_range(0..c.len())])
    }

    /// All texts in the corpus, templates included (for tokenizer fitting).
    pub fn all_texts(&self) -> Vec<&str> {
        self.templates.iter().map(|t| t.text.as_str()).chain(self.variants.iter().map(|v| v.text.as_str())).collect()
    }
}

/// Settings for the optional paraphrase expansion endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    pub url: Option<String>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub offline: bool,
    pub timeout_secs: u64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { url: None, api_key_env: "INSTRUCTSEQ_API_KEY".into(), offline: false, timeout_secs: 60 }
    }
}

#[derive(Serialize)]
struct ExpansionRequest<'a> {
    template: &'a str,
    placeholders: Vec<String>,
    n: usize,
}

/// Requests `n` paraphrases of a template and appends the valid ones to
/// `corpus` as training variants. Candidates that do not carry exactly the
/// template's placeholders, or that already exist, are dropped. On any
/// transport failure the corpus is left untouched.
pub fn expand_paraphrases(
    cfg: &ExpansionConfig,
    corpus: &mut Corpus,
    template_id: &str,
    n: usize,
) -> Result<Vec<String>> {
    let template = corpus
        .template(template_id)
        .cloned()
        .ok_or_else(|| Error::invalid(format!("unknown template {template_id:?}")))?;
    if n == 0 {
        return Ok(Vec::new());
    }
    if cfg.offline {
        return Err(Error::config("paraphrase expansion is unavailable in offline mode"));
    }
    let url = cfg.url.as_deref().ok_or_else(|| Error::config("no expansion endpoint configured"))?;

    let body = ExpansionRequest { template: &template.text, placeholders: placeholders(&template.text).into_iter().collect(), n };
    let mut req = ureq::post(url).timeout(std::time::Duration::from_secs(cfg.timeout_secs));
    if let Ok(key) = std::env::var(&cfg.api_key_env) {
        req = req.set("Authorization", &format!("Bearer {key}"));
    }
    let resp = req.send_json(&body).map_err(|e| Error::Network(e.to_string()))?;
    let candidates: Vec<String> =
        resp.into_json().map_err(|e| Error::Network(format!("malformed expansion response: {e}")))?;

    let existing: HashSet<String> =
        corpus.variants.iter().filter(|v| v.template_id == template_id).map(|v| v.text.clone()).collect();
    let mut accepted = Vec::new();
    for c in candidates {
        let c = c.trim().to_string();
        if c.is_empty() || !has_exact_placeholders(&c, template.task) || existing.contains(&c) || accepted.contains(&c) {
            log::debug!("rejected paraphrase candidate {c:?}");
            continue;
        }
        accepted.push(c);
    }
    if accepted.is_empty() {
        log::warn!("every paraphrase candidate for {template_id:?} was rejected");
    }
    for text in &accepted {
        corpus.variants.push(Variant { template_id: template_id.to_string(), text: text.clone(), split: Split::Train });
    }
    Ok(accepted)
}
