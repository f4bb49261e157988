//! Per-response quality cards and corpus evaluation over recorded transcripts.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{replay_complete, GenerationRequest, ModelResponse, TranscriptEntry, TranscriptStore};
use crate::extract::{self, CandidatePolicy, DEFAULT_ECHO_THRESHOLD};
use crate::validate::{validate_text, Finding, FindingCode, SchemaCatalog, Severity};

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("composite weights must be finite, non-negative and sum to 1 (got sum {0})")]
    Weights(f64),
    #[error("echo threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

/// Weights of the four composite terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub parse: f64,
    pub errors: f64,
    pub warnings: f64,
    pub echo: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        CompositeWeights { parse: 0.3, errors: 0.4, warnings: 0.2, echo: 0.1 }
    }
}

impl CompositeWeights {
    pub fn from_slice(w: &[f64]) -> Result<Self, ScoreError> {
        let &[parse, errors, warnings, echo] = w else {
            return Err(ScoreError::Weights(w.iter().sum()));
        };
        let weights = CompositeWeights { parse, errors, warnings, echo };
        weights.validate()?;
        Ok(weights)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.parse, self.errors, self.warnings, self.echo]
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let w = self.as_array();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ScoreError::Weights(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub weights: CompositeWeights,
    pub echo_threshold: f64,
    /// Score corpus items on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { weights: CompositeWeights::default(), echo_threshold: DEFAULT_ECHO_THRESHOLD, parallel: true }
    }
}

impl ScoreOptions {
    pub fn validate(&self) -> Result<(), ScoreError> {
        self.weights.validate()?;
        if !(self.echo_threshold > 0.0 && self.echo_threshold <= 1.0) {
            return Err(ScoreError::Threshold(self.echo_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub extraction_success: bool,
    pub parse_success: bool,
    pub structure_errors: usize,
    pub module_errors: usize,
    pub warnings: usize,
    pub echo_flag: bool,
    /// Tasks found in the scored candidate.
    pub tasks: usize,
    pub composite: f64,
    pub findings: Vec<Finding>,
}

impl ScoreCard {
    fn empty() -> Self {
        ScoreCard {
            extraction_success: false,
            parse_success: false,
            structure_errors: 0,
            module_errors: 0,
            warnings: 0,
            echo_flag: false,
            tasks: 0,
            composite: 0.0,
            findings: Vec::new(),
        }
    }

    pub fn errors(&self) -> usize {
        self.structure_errors + self.module_errors
    }
}

/// Whether an error code concerns document shape rather than module grammar.
pub fn is_structural(code: FindingCode) -> bool {
    !matches!(
        code,
        FindingCode::UnknownModule
            | FindingCode::MissingRequired
            | FindingCode::InvalidChoice
            | FindingCode::InvalidType
            | FindingCode::UnknownParam
    )
}

/// `w_p·parse + w_e·(1 − min(1, errors/tasks)) + w_w·(1 − min(1, warnings/tasks)) + w_x·(1 − echo)`,
/// with `tasks` floored at 1 and the sum rounded to 12 decimals.
///
/// ```
/// use yamlsmith::score::{composite, CompositeWeights};
///
/// let w = CompositeWeights::default();
/// assert_eq!(composite(&w, true, 0, 0, 3, false), 1.0);
/// assert_eq!(composite(&w, false, 1, 0, 0, true), 0.2);
/// ```
pub fn composite(
    weights: &CompositeWeights,
    parse_ok: bool,
    errors: usize,
    warnings: usize,
    tasks: usize,
    echo: bool,
) -> f64 {
    let tasks = tasks.max(1) as f64;
    let ratio = |n: usize| 1.0 - (n as f64 / tasks).min(1.0);
    let raw = weights.parse * f64::from(u8::from(parse_ok))
        + weights.errors * ratio(errors)
        + weights.warnings * ratio(warnings)
        + weights.echo * (1.0 - f64::from(u8::from(echo)));
    (raw * 1e12).round() / 1e12
}

/// Extract, select the largest candidate, validate and score one response.
pub fn score_candidate(prompt: &str, response: &ModelResponse, catalog: &SchemaCatalog) -> ScoreCard {
    score_candidate_with(prompt, response, catalog, &ScoreOptions::default())
}

pub fn score_candidate_with(
    prompt: &str,
    response: &ModelResponse,
    catalog: &SchemaCatalog,
    options: &ScoreOptions,
) -> ScoreCard {
    if response.is_error() {
        return ScoreCard::empty();
    }
    let blocks = extract::extract_all(&response.text);
    let Ok(selected) = extract::select_candidates(&blocks, CandidatePolicy::Largest) else {
        return ScoreCard::empty();
    };
    let Some(candidate) = selected.first() else { return ScoreCard::empty() };
    let echo_flag = extract::detect_echo_with(prompt, &blocks, options.echo_threshold).any_echo;
    let v = validate_text(&candidate.content, catalog);
    let errors = |structural: bool| {
        v.findings
            .iter()
            .filter(|f| f.severity == Severity::Error && is_structural(f.code) == structural)
            .count()
    };
    let (structure_errors, module_errors) = (errors(true), errors(false));
    let warnings = v.count(Severity::Warning);
    let composite = composite(
        &options.weights,
        v.parse_ok,
        structure_errors + module_errors,
        warnings,
        v.task_count,
        echo_flag,
    );
    ScoreCard {
        extraction_success: true,
        parse_success: v.parse_ok,
        structure_errors,
        module_errors,
        warnings,
        echo_flag,
        tasks: v.task_count,
        composite,
        findings: v.findings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub fixture: String,
    pub model: String,
    pub card: ScoreCard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub catalog_version: String,
}

impl EvalTable {
    pub fn row(&self, fixture: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.fixture == fixture)
    }

    pub fn composite(&self, fixture: &str) -> Option<f64> {
        self.row(fixture).map(|r| r.card.composite)
    }
}

fn score_entry(entry: &TranscriptEntry, store: &TranscriptStore, catalog: &SchemaCatalog, options: &ScoreOptions) -> EvalRow {
    let mut request = GenerationRequest::new(entry.prompt.clone(), entry.response.model_name.clone());
    request.attempt = Some(entry.tir);
    let response =
        replay_complete(&request, store).unwrap_or_else(|_| ModelResponse::failed(entry.response.model_name.clone()));
    EvalRow {
        fixture: entry.fixture_id(),
        model: entry.response.model_name.clone(),
        card: score_candidate_with(&entry.prompt, &response, catalog, options),
    }
}

/// Replay every transcript, score it, and sort by composite (descending),
/// breaking ties by fixture id.
pub fn run_eval(corpus: &TranscriptStore, catalog: &SchemaCatalog, options: &ScoreOptions) -> Result<EvalTable, ScoreError> {
    options.validate()?;
    if corpus.is_empty() {
        return Err(ScoreError::EmptyCorpus);
    }
    let entries = corpus.entries();
    let mut rows: Vec<EvalRow> = if options.parallel {
        entries.par_iter().map(|e| score_entry(e, corpus, catalog, options)).collect()
    } else {
        entries.iter().map(|e| score_entry(e, corpus, catalog, options)).collect()
    };
    rows.sort_by(|a, b| b.card.composite.total_cmp(&a.card.composite).then_with(|| a.fixture.cmp(&b.fixture)));
    Ok(EvalTable { rows, catalog_version: catalog.version.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn render_report(table: &EvalTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(table).expect("tables serialize");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(table),
    }
}

fn render_text(table: &EvalTable) -> String {
    let header = ["fixture", "model", "extracted", "parsed", "struct_err", "module_err", "warnings", "echo", "composite"];
    let body: Vec<[String; 9]> = table
        .rows
        .iter()
        .map(|r| {
            let c = &r.card;
            [
                r.fixture.clone(),
                r.model.clone(),
                yes_no(c.extraction_success).into(),
                yes_no(c.parse_success).into(),
                c.structure_errors.to_string(),
                c.module_errors.to_string(),
                c.warnings.to_string(),
                yes_no(c.echo_flag).into(),
                format!("{:.3}", c.composite),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            // Text columns align left, counts and scores right.
            if i < 2 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "{cell:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in &body {
        line(row.iter().map(String::as_str).collect());
    }
    if !table.catalog_version.is_empty() {
        let _ = writeln!(out, "catalog {}", table.catalog_version);
    }
    out
}
