//! Prompt templates and context-window budgeting.
//!
//! Three layouts are supported: the Alpaca instruction format, the LLaMA-2
//! chat format, and a raw concatenation. Each layout joins its sections with
//! a single newline; any blank line between sections belongs to the field
//! text itself, which is what lets a transcript prompt be parsed back into a
//! [`PromptSpec`] and re-rendered byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Preamble used when the request carries an input section.
pub const ALPACA_PREAMBLE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";

/// Preamble used when there is no input section.
pub const ALPACA_PREAMBLE_NO_INPUT: &str =
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.";

const INSTRUCTION_HEADER: &str = "### Instruction:";
const INPUT_HEADER: &str = "### Input:";
const RESPONSE_HEADER: &str = "### Response:";

const INST_OPEN: &str = "[INST]";
const INST_CLOSE: &str = "[/INST]";
const SYS_OPEN: &str = "<<SYS>>";
const SYS_CLOSE: &str = "<</SYS>>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("unknown template kind `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Alpaca,
    Llama2Chat,
    Raw,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Alpaca => "alpaca",
            TemplateKind::Llama2Chat => "llama2_chat",
            TemplateKind::Raw => "raw",
        }
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpaca" => Ok(TemplateKind::Alpaca),
            "llama2_chat" => Ok(TemplateKind::Llama2Chat),
            "raw" => Ok(TemplateKind::Raw),
            other => Err(PromptError::UnknownTemplate(other.to_string())),
        }
    }
}

/// A labelled example embedded in the prompt as a fenced YAML block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSnippet {
    pub label: String,
    pub code: String,
}

impl ExampleSnippet {
    pub fn new(label: impl Into<String>, code: impl Into<String>) -> Self {
        Self { label: label.into(), code: code.into() }
    }
}

/// Structured request from which a prompt is rendered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system_text: String,
    pub instruction: String,
    pub input_context: String,
    pub example_snippets: Vec<ExampleSnippet>,
    pub response_header: String,
}

impl PromptSpec {
    pub fn new(instruction: impl Into<String>) -> Self {
        Self { instruction: instruction.into(), ..Self::default() }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_text = system.into();
        self
    }

    pub fn with_input(mut self, input: impl Into<String>) -> Self {
        self.input_context = input.into();
        self
    }

    pub fn with_example(mut self, label: impl Into<String>, code: impl Into<String>) -> Self {
        self.example_snippets.push(ExampleSnippet::new(label, code));
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.instruction.trim().is_empty() {
            return Err(PromptError::InvalidSpec("instruction is empty".into()));
        }
        Ok(())
    }
}

/// Per-model template and window parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub template_kind: TemplateKind,
    pub context_window: usize,
    pub default_reserve_output: usize,
    #[serde(default)]
    pub stop_markers: Vec<String>,
}

impl ModelProfile {
    pub fn new(
        name: impl Into<String>,
        template_kind: TemplateKind,
        context_window: usize,
        default_reserve_output: usize,
    ) -> Result<Self, PromptError> {
        let profile = Self {
            name: name.into(),
            template_kind,
            context_window,
            default_reserve_output,
            stop_markers: Vec::new(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_stop_markers<I, S>(mut self, markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_markers = markers.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let fail = |reason: &str| PromptError::InvalidProfile {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(fail("name is empty"));
        }
        if self.context_window == 0 {
            return Err(fail("context_window must be positive"));
        }
        if self.default_reserve_output >= self.context_window {
            return Err(fail("default_reserve_output must be smaller than context_window"));
        }
        Ok(())
    }

    /// Profiles for the model families exercised by the shipped transcripts.
    ///
    /// `llama2_chat` carries the 4K window LLaMA-2 was trained with; the
    /// first-generation LLaMA/Alpaca profiles use 2K.
    pub fn builtin() -> Vec<ModelProfile> {
        let alpaca_stops = ["### Instruction:", "### Input:"];
        vec![
            Self::fixed("alpaca", TemplateKind::Alpaca, 2048, 512).with_stop_markers(alpaca_stops),
            Self::fixed("llama-7b", TemplateKind::Alpaca, 2048, 512).with_stop_markers(alpaca_stops),
            Self::fixed("llama-13b", TemplateKind::Alpaca, 2048, 512).with_stop_markers(alpaca_stops),
            Self::fixed("alpaca-13b", TemplateKind::Alpaca, 2048, 512).with_stop_markers(alpaca_stops),
            Self::fixed("llama2_chat", TemplateKind::Llama2Chat, 4096, 1024).with_stop_markers(["[INST]"]),
            Self::fixed("codeup-13b", TemplateKind::Alpaca, 4096, 1024).with_stop_markers(alpaca_stops),
            Self::fixed("raw", TemplateKind::Raw, 2048, 512),
        ]
    }

    pub fn builtin_named(name: &str) -> Option<ModelProfile> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }

    fn fixed(name: &str, kind: TemplateKind, window: usize, reserve: usize) -> Self {
        Self {
            name: name.to_string(),
            template_kind: kind,
            context_window: window,
            default_reserve_output: reserve,
            stop_markers: Vec::new(),
        }
    }
}

fn push_examples(out: &mut String, examples: &[ExampleSnippet]) {
    for ex in examples {
        out.push('\n');
        if !ex.label.is_empty() {
            out.push_str(&ex.label);
            out.push('\n');
        }
        out.push_str("```yaml\n");
        out.push_str(&ex.code);
        if !ex.code.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("```");
    }
}

fn fenced_examples(examples: &[ExampleSnippet]) -> Vec<String> {
    examples
        .iter()
        .map(|ex| {
            let mut s = String::new();
            push_examples(&mut s, std::slice::from_ref(ex));
            s.trim_start_matches('\n').to_string()
        })
        .collect()
}

/// Render `spec` in the layout selected by `profile.template_kind`.
pub fn render_prompt(spec: &PromptSpec, profile: &ModelProfile) -> Result<String, PromptError> {
    spec.validate()?;
    let mut out = String::new();
    match profile.template_kind {
        TemplateKind::Alpaca => {
            let has_input = !spec.input_context.is_empty();
            out.push_str(if has_input { ALPACA_PREAMBLE } else { ALPACA_PREAMBLE_NO_INPUT });
            out.push_str("\n\n");
            out.push_str(INSTRUCTION_HEADER);
            out.push('\n');
            out.push_str(&spec.instruction);
            push_examples(&mut out, &spec.example_snippets);
            out.push('\n');
            if has_input {
                out.push_str(INPUT_HEADER);
                out.push('\n');
                out.push_str(&spec.input_context);
                out.push('\n');
            }
            out.push_str(RESPONSE_HEADER);
            if !spec.response_header.is_empty() {
                out.push('\n');
                out.push_str(&spec.response_header);
            }
        }
        TemplateKind::Llama2Chat => {
            out.push_str(INST_OPEN);
            out.push(' ');
            if !spec.system_text.is_empty() {
                out.push_str(SYS_OPEN);
                out.push('\n');
                out.push_str(&spec.system_text);
                out.push('\n');
                out.push_str(SYS_CLOSE);
                out.push_str("\n\n");
            }
            out.push_str(&spec.instruction);
            if !spec.input_context.is_empty() {
                out.push('\n');
                out.push_str(&spec.input_context);
            }
            push_examples(&mut out, &spec.example_snippets);
            out.push(' ');
            out.push_str(INST_CLOSE);
            if !spec.response_header.is_empty() {
                out.push(' ');
                out.push_str(&spec.response_header);
            }
        }
        TemplateKind::Raw => {
            let mut parts: Vec<String> = Vec::new();
            for field in [&spec.system_text, &spec.instruction, &spec.input_context] {
                if !field.is_empty() {
                    parts.push(field.clone());
                }
            }
            parts.extend(fenced_examples(&spec.example_snippets));
            if !spec.response_header.is_empty() {
                parts.push(spec.response_header.clone());
            }
            out = parts.join("\n\n");
        }
    }
    Ok(out)
}

/// Recover a [`PromptSpec`] from text previously produced by [`render_prompt`]
/// (or written by hand in the same layout).
///
/// Example blocks are left inside the instruction: the template gives no
/// marker that separates an example from the instruction text around it.
/// Returns `None` when the text does not follow the layout of `kind`.
pub fn parse_prompt(text: &str, kind: TemplateKind) -> Option<PromptSpec> {
    match kind {
        TemplateKind::Alpaca => parse_alpaca(text),
        TemplateKind::Llama2Chat => parse_llama2(text),
        TemplateKind::Raw => {
            if text.trim().is_empty() {
                None
            } else {
                Some(PromptSpec::new(text))
            }
        }
    }
}

/// Guess the template of a rendered prompt from its opening bytes.
pub fn detect_template(text: &str) -> TemplateKind {
    if text.starts_with(INST_OPEN) {
        TemplateKind::Llama2Chat
    } else if text.starts_with(ALPACA_PREAMBLE) || text.starts_with(ALPACA_PREAMBLE_NO_INPUT) {
        TemplateKind::Alpaca
    } else {
        TemplateKind::Raw
    }
}

fn parse_alpaca(text: &str) -> Option<PromptSpec> {
    let (rest, expect_input) = if let Some(r) = text.strip_prefix(ALPACA_PREAMBLE) {
        (r, true)
    } else {
        (text.strip_prefix(ALPACA_PREAMBLE_NO_INPUT)?, false)
    };
    let rest = rest.strip_prefix("\n\n")?.strip_prefix(INSTRUCTION_HEADER)?.strip_prefix('\n')?;
    let resp_marker = format!("\n{RESPONSE_HEADER}");
    let resp_at = rest.rfind(&resp_marker)?;
    let body = &rest[..resp_at];
    let tail = &rest[resp_at + resp_marker.len()..];
    let response_header = if tail.is_empty() { String::new() } else { tail.strip_prefix('\n')?.to_string() };

    let input_marker = format!("\n{INPUT_HEADER}\n");
    let (instruction, input) = match body.find(&input_marker) {
        Some(at) => (&body[..at], &body[at + input_marker.len()..]),
        None => (body, ""),
    };
    // The preamble is chosen by the presence of input, so a mismatch means the
    // text would not re-render identically.
    if expect_input == input.is_empty() {
        return None;
    }
    let spec = PromptSpec {
        instruction: instruction.to_string(),
        input_context: input.to_string(),
        response_header,
        ..PromptSpec::default()
    };
    spec.validate().ok()?;
    Some(spec)
}

fn parse_llama2(text: &str) -> Option<PromptSpec> {
    let rest = text.strip_prefix(INST_OPEN)?.strip_prefix(' ')?;
    let close = format!(" {INST_CLOSE}");
    let close_at = rest.rfind(&close)?;
    let inner = &rest[..close_at];
    let tail = &rest[close_at + close.len()..];
    let response_header = if tail.is_empty() { String::new() } else { tail.strip_prefix(' ')?.to_string() };

    let (system_text, body) = match inner.strip_prefix(SYS_OPEN) {
        Some(after) => {
            let after = after.strip_prefix('\n')?;
            let end_marker = format!("\n{SYS_CLOSE}\n\n");
            let end = after.find(&end_marker)?;
            // an empty system block is never rendered
            if end == 0 {
                return None;
            }
            (after[..end].to_string(), &after[end + end_marker.len()..])
        }
        None => (String::new(), inner),
    };
    let spec = PromptSpec {
        system_text,
        instruction: body.to_string(),
        response_header,
        ..PromptSpec::default()
    };
    spec.validate().ok()?;
    Some(spec)
}

/// Heuristic token count: one token per four bytes (rounded up) plus one per
/// triple-backtick fence marker.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4) + text.matches("```").count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub prompt_tokens: usize,
    pub window: usize,
    pub reserve: usize,
    pub fits: bool,
    pub overflow: usize,
}

impl BudgetReport {
    pub fn from_counts(prompt_tokens: usize, window: usize, reserve: usize) -> Self {
        let needed = prompt_tokens.saturating_add(reserve);
        Self {
            prompt_tokens,
            window,
            reserve,
            fits: needed <= window,
            overflow: needed.saturating_sub(window),
        }
    }
}

/// Check whether `text` plus `reserve` output tokens fits the profile's window.
pub fn check_budget(text: &str, profile: &ModelProfile, reserve: usize) -> BudgetReport {
    BudgetReport::from_counts(estimate_tokens(text), profile.context_window, reserve)
}
