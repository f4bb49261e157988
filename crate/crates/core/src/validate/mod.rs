//! Parsing candidate text into a playbook structure and checking it against
//! module grammars.
//!
//! Validation never fails: every problem becomes a [`Finding`] carrying the
//! byte span of the offending fragment, so a report can quote the source.

pub mod ast;
pub mod catalog;
pub mod yaml;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{DocumentKind, Param, Play, PlaybookAst, TaskNode, TaskSection};
pub use catalog::{load_catalog, parse_catalog, CatalogError, ModuleSchema, ParamSchema, Resolution, SchemaCatalog, ValueKind};
pub use yaml::{Node, NodeKind, Pos, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    YamlSyntax,
    DuplicateKey,
    NotAPlaybook,
    MissingHosts,
    MissingModule,
    MultipleModules,
    EmptyTaskList,
    InvalidItem,
    UnknownModule,
    MissingRequired,
    InvalidChoice,
    InvalidType,
    UnknownParam,
}

impl FindingCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingCode::YamlSyntax => "YAML_SYNTAX",
            FindingCode::DuplicateKey => "DUPLICATE_KEY",
            FindingCode::NotAPlaybook => "NOT_A_PLAYBOOK",
            FindingCode::MissingHosts => "MISSING_HOSTS",
            FindingCode::MissingModule => "MISSING_MODULE",
            FindingCode::MultipleModules => "MULTIPLE_MODULES",
            FindingCode::EmptyTaskList => "EMPTY_TASK_LIST",
            FindingCode::InvalidItem => "INVALID_ITEM",
            FindingCode::UnknownModule => "UNKNOWN_MODULE",
            FindingCode::MissingRequired => "MISSING_REQUIRED",
            FindingCode::InvalidChoice => "INVALID_CHOICE",
            FindingCode::InvalidType => "INVALID_TYPE",
            FindingCode::UnknownParam => "UNKNOWN_PARAM",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            FindingCode::UnknownParam | FindingCode::EmptyTaskList => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: FindingCode,
    pub message: String,
    pub span: Span,
}

impl Finding {
    pub fn new(code: FindingCode, span: Span, message: impl Into<String>) -> Self {
        Finding { severity: code.severity(), code, message: message.into(), span }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} {}: {}", self.span.start.line, self.span.start.col, self.severity, self.code, self.message)
    }
}

/// Sort by position, then code, and drop exact repeats.
pub fn sort_findings(findings: &mut Vec<Finding>) {
    findings.sort_by(|a, b| {
        (a.span.start, a.span.end, a.code, &a.message).cmp(&(b.span.start, b.span.end, b.code, &b.message))
    });
    findings.dedup();
}

/// Result of [`parse_playbook`]: an AST, findings, or both.
#[derive(Debug, Clone)]
pub struct ParseOutcome {
    pub ast: Option<PlaybookAst>,
    pub findings: Vec<Finding>,
}

impl ParseOutcome {
    pub fn syntax_ok(&self) -> bool {
        !self.findings.iter().any(|f| f.code == FindingCode::YamlSyntax)
    }
}

/// Parse YAML text and classify it as a play list, task list or other
/// document. Syntax errors leave `ast` empty; duplicate keys are reported but
/// the AST is still built with the last value winning.
pub fn parse_playbook(text: &str) -> ParseOutcome {
    let loaded = yaml::load(text);
    let mut findings = Vec::new();
    if let Some(issue) = loaded.syntax {
        findings.push(Finding::new(FindingCode::YamlSyntax, issue.span, issue.message));
        return ParseOutcome { ast: None, findings };
    }
    for dup in &loaded.duplicates {
        findings.push(Finding::new(
            FindingCode::DuplicateKey,
            dup.duplicate,
            format!("key `{}` repeats the one on line {}", dup.key, dup.first.start.line),
        ));
    }
    sort_findings(&mut findings);
    let end = yaml::Pos { offset: text.len(), line: text.lines().count().max(1), col: 1 };
    let empty = Span::new(yaml::Pos { offset: 0, line: 1, col: 1 }, end);
    let root = loaded.documents.iter().find(|d| !matches!(d.kind, NodeKind::Null));
    ParseOutcome { ast: Some(ast::build_ast(root, empty)), findings }
}

fn task_structure(task: &TaskNode, out: &mut Vec<Finding>) {
    if task.is_block() {
        for child in &task.children {
            task_structure(child, out);
        }
        return;
    }
    match task.module_keys.len() {
        0 => out.push(Finding::new(FindingCode::MissingModule, task.span, "task names no module")),
        1 => {}
        _ => {
            let names: Vec<&str> = task.module_keys.iter().map(|(k, _)| k.as_str()).collect();
            out.push(Finding::new(
                FindingCode::MultipleModules,
                task.module_keys[1].1,
                format!("task names several modules: {}", names.join(", ")),
            ));
        }
    }
}

/// Structural checks: plays have hosts, tasks name exactly one module, task
/// lists are not empty, and the document is a playbook at all.
pub fn validate_structure(ast: &PlaybookAst) -> Vec<Finding> {
    let mut out = Vec::new();
    for span in &ast.stray_items {
        out.push(Finding::new(FindingCode::InvalidItem, *span, "list item is not a mapping"));
    }
    match ast.kind {
        DocumentKind::OtherDocument => {
            let what = match ast.root.as_ref().map(|r| &r.kind) {
                None => "document is empty",
                Some(NodeKind::Map(_)) => "top level is a mapping, not a list of plays or tasks",
                Some(NodeKind::Seq(_)) => "list items are neither plays nor tasks",
                Some(_) => "top level is a scalar, not a list of plays or tasks",
            };
            out.push(Finding::new(FindingCode::NotAPlaybook, ast.span, what));
        }
        DocumentKind::TaskList => {
            if ast.tasks.is_empty() {
                out.push(Finding::new(FindingCode::EmptyTaskList, ast.span, "task list is empty"));
            }
            for task in &ast.tasks {
                task_structure(task, &mut out);
            }
        }
        DocumentKind::PlayList => {
            for play in &ast.plays {
                if play.has_key("import_playbook") {
                    continue;
                }
                if play.hosts.is_none() {
                    out.push(Finding::new(FindingCode::MissingHosts, play.span, "play has no `hosts`"));
                }
                for section in &play.sections {
                    for span in &section.stray_items {
                        out.push(Finding::new(
                            FindingCode::InvalidItem,
                            *span,
                            format!("`{}` must be a list of task mappings", section.key),
                        ));
                    }
                    if section.tasks.is_empty() && section.stray_items.is_empty() {
                        out.push(Finding::new(
                            FindingCode::EmptyTaskList,
                            section.span,
                            format!("`{}` is empty", section.key),
                        ));
                    }
                    for task in &section.tasks {
                        task_structure(task, &mut out);
                    }
                }
            }
        }
    }
    sort_findings(&mut out);
    out
}

/// Whether a scalar is a Jinja expression, which stands in for any value.
pub fn is_templated(node: &Node) -> bool {
    node.scalar_text().is_some_and(|t| t.contains("{{") || t.contains("{%"))
}

fn bool_spelling(text: &str) -> Option<bool> {
    match text.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

fn kind_matches(kind: ValueKind, node: &Node) -> bool {
    match (&node.kind, kind) {
        (NodeKind::Null, _) => true,
        (NodeKind::Map(_), _) => false,
        (NodeKind::Seq(_), ValueKind::List) => true,
        (NodeKind::Seq(_), _) => false,
        (_, ValueKind::String) | (_, ValueKind::Path) | (_, ValueKind::List) => true,
        (NodeKind::Bool(_), ValueKind::Boolean) => true,
        (NodeKind::Int(i), ValueKind::Boolean) => *i == 0 || *i == 1,
        (NodeKind::Str(s), ValueKind::Boolean) => bool_spelling(s).is_some(),
        (NodeKind::Int(_), ValueKind::Integer) => true,
        (NodeKind::Str(s), ValueKind::Integer) => s.trim().parse::<i64>().is_ok(),
        _ => false,
    }
}

fn choice_matches(choices: &[String], node: &Node) -> bool {
    let Some(text) = node.scalar_text() else { return false };
    if choices.iter().any(|c| c == text) {
        return true;
    }
    match node.kind {
        NodeKind::Bool(b) => choices.iter().any(|c| bool_spelling(c) == Some(b)),
        _ => false,
    }
}

fn kind_name(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::String => "a string",
        ValueKind::Boolean => "a boolean",
        ValueKind::Integer => "an integer",
        ValueKind::List => "a list",
        ValueKind::Path => "a path",
    }
}

fn check_task(task: &TaskNode, catalog: &SchemaCatalog, out: &mut Vec<Finding>) {
    let Some(module_ref) = &task.module_ref else { return };
    let module_span = task.module_span();
    let schema = match catalog.resolve(module_ref) {
        Resolution::Found(schema) => schema,
        Resolution::Ambiguous(candidates) => {
            out.push(Finding::new(
                FindingCode::UnknownModule,
                module_span,
                format!("module `{module_ref}` is ambiguous; candidates: {}", candidates.join(", ")),
            ));
            return;
        }
        Resolution::Unknown => {
            out.push(Finding::new(FindingCode::UnknownModule, module_span, format!("module `{module_ref}` does not exist")));
            return;
        }
    };
    let mut present: Vec<&str> = Vec::new();
    for param in &task.params {
        let lookup = if param.name == "_raw_params" { "free_form" } else { param.name.as_str() };
        let Some(spec) = schema.param(lookup) else {
            let message = if param.name == "_raw_params" {
                format!("{} takes no free-form argument", schema.fqcn)
            } else {
                format!("{} has no parameter `{}`", schema.fqcn, param.name)
            };
            out.push(Finding::new(FindingCode::UnknownParam, param.name_span, message));
            continue;
        };
        if !matches!(param.value.kind, NodeKind::Null) {
            present.push(spec.name.as_str());
        }
        if is_templated(&param.value) || matches!(param.value.kind, NodeKind::Null) {
            continue;
        }
        if !kind_matches(spec.value_kind, &param.value) {
            out.push(Finding::new(
                FindingCode::InvalidType,
                param.value.span,
                format!("`{}` of {} must be {}", param.name, schema.fqcn, kind_name(spec.value_kind)),
            ));
            continue;
        }
        if let Some(choices) = &spec.choices {
            if !choice_matches(choices, &param.value) {
                out.push(Finding::new(
                    FindingCode::InvalidChoice,
                    param.value.span,
                    format!(
                        "`{}: {}` is not one of {}",
                        param.name,
                        param.value.scalar_text().unwrap_or("<collection>"),
                        choices.join(", ")
                    ),
                ));
            }
        }
    }
    for spec in schema.params.iter().filter(|p| p.required) {
        if !present.contains(&spec.name.as_str()) {
            out.push(Finding::new(
                FindingCode::MissingRequired,
                module_span,
                format!("{} requires `{}`", schema.fqcn, spec.name),
            ));
        }
    }
}

/// Check every task's module and parameters against the catalog.
pub fn validate_modules(ast: &PlaybookAst, catalog: &SchemaCatalog) -> Vec<Finding> {
    let mut out = Vec::new();
    for task in ast.all_tasks() {
        check_task(task, catalog, &mut out);
    }
    sort_findings(&mut out);
    out
}

/// Everything known about one candidate after parsing and validation.
#[derive(Debug, Clone)]
pub struct Validation {
    pub ast: Option<PlaybookAst>,
    pub findings: Vec<Finding>,
    pub parse_ok: bool,
    /// Tasks that name a module (block wrappers excluded).
    pub task_count: usize,
}

impl Validation {
    pub fn count(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }
}

/// Parse, then run the structural and module checks.
pub fn validate_text(text: &str, catalog: &SchemaCatalog) -> Validation {
    let outcome = parse_playbook(text);
    let parse_ok = outcome.syntax_ok();
    let mut findings = outcome.findings;
    let mut task_count = 0;
    if let Some(ast) = &outcome.ast {
        findings.extend(validate_structure(ast));
        findings.extend(validate_modules(ast, catalog));
        task_count = ast.all_tasks().iter().filter(|t| !t.is_block()).count();
    }
    sort_findings(&mut findings);
    Validation { ast: outcome.ast, findings, parse_ok, task_count }
}
