//! Playbook structure recovered from a YAML node tree.

use super::yaml::{Node, NodeKind, Span};

/// Keys a task may carry besides its module invocation.
pub const TASK_KEYWORDS: &[&str] = &[
    "action",
    "always",
    "any_errors_fatal",
    "args",
    "async",
    "become",
    "become_exe",
    "become_flags",
    "become_method",
    "become_user",
    "block",
    "changed_when",
    "check_mode",
    "collections",
    "connection",
    "debugger",
    "delay",
    "delegate_facts",
    "delegate_to",
    "diff",
    "environment",
    "failed_when",
    "ignore_errors",
    "ignore_unreachable",
    "listen",
    "local_action",
    "loop",
    "loop_control",
    "module_defaults",
    "name",
    "no_log",
    "notify",
    "poll",
    "port",
    "register",
    "remote_user",
    "rescue",
    "retries",
    "run_once",
    "tags",
    "throttle",
    "timeout",
    "until",
    "vars",
    "when",
];

/// Play keys holding task lists.
pub const TASK_SECTIONS: &[&str] = &["pre_tasks", "tasks", "post_tasks", "handlers"];

pub fn is_task_keyword(key: &str) -> bool {
    TASK_KEYWORDS.contains(&key) || key.starts_with("with_")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DocumentKind {
    PlayList,
    TaskList,
    OtherDocument,
}

impl DocumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::PlayList => "play_list",
            DocumentKind::TaskList => "task_list",
            DocumentKind::OtherDocument => "other_document",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub name_span: Span,
    pub value: Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub name: Option<String>,
    /// The module as written, when the task names exactly one.
    pub module_ref: Option<String>,
    /// Every key that was taken to be a module invocation.
    pub module_keys: Vec<(String, Span)>,
    pub params: Vec<Param>,
    pub extra_keys: Vec<(String, Node)>,
    /// Tasks nested under `block`, `rescue` or `always`.
    pub children: Vec<TaskNode>,
    pub span: Span,
}

impl TaskNode {
    pub fn module_span(&self) -> Span {
        self.module_keys.first().map_or(self.span, |(_, s)| *s)
    }

    pub fn is_block(&self) -> bool {
        self.extra_keys.iter().any(|(k, _)| matches!(k.as_str(), "block" | "rescue" | "always"))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().rev().find(|p| p.name == name)
    }

    /// This task followed by every nested task, depth first.
    pub fn walk(&self) -> Vec<&TaskNode> {
        let mut out = vec![self];
        for child in &self.children {
            out.extend(child.walk());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub key: String,
    pub span: Span,
    pub tasks: Vec<TaskNode>,
    /// Spans of section items that are not mappings (or of a section value
    /// that is not a list).
    pub stray_items: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Play {
    pub name: Option<String>,
    pub hosts: Option<Node>,
    pub sections: Vec<TaskSection>,
    pub keys: Vec<(String, Node)>,
    pub span: Span,
}

impl Play {
    pub fn tasks(&self) -> impl Iterator<Item = &TaskNode> {
        self.sections.iter().flat_map(|s| s.tasks.iter())
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.keys.iter().any(|(k, _)| k == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaybookAst {
    pub kind: DocumentKind,
    pub plays: Vec<Play>,
    /// Top-level tasks of a task list. For other documents, mapping entries
    /// salvaged as task-like module invocations.
    pub tasks: Vec<TaskNode>,
    /// Top-level list items that are not mappings.
    pub stray_items: Vec<Span>,
    pub root: Option<Node>,
    pub span: Span,
}

impl PlaybookAst {
    /// Every task in the document, including nested block tasks.
    pub fn all_tasks(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        for play in &self.plays {
            for task in play.tasks() {
                out.extend(task.walk());
            }
        }
        for task in &self.tasks {
            out.extend(task.walk());
        }
        out
    }
}

fn key_text(node: &Node) -> String {
    node.scalar_text().map(str::to_string).unwrap_or_default()
}

/// Keep only the last value of each key, at the position of that last value.
fn dedup_last(entries: &[(Node, Node)]) -> Vec<&(Node, Node)> {
    let mut out: Vec<&(Node, Node)> = Vec::new();
    for entry in entries {
        let key = key_text(&entry.0);
        out.retain(|e| key_text(&e.0) != key);
        out.push(entry);
    }
    out.sort_by_key(|e| e.0.span.start);
    out
}

/// Parse `k=v k2=v2` shorthand; anything else is a free-form argument.
fn inline_params(value: &Node) -> Vec<Param> {
    let Some(text) = value.as_str() else {
        return vec![Param { name: "_raw_params".into(), name_span: value.span, value: value.clone() }];
    };
    let words: Vec<&str> = text.split_whitespace().collect();
    let all_kv = !words.is_empty()
        && words.iter().all(|w| {
            w.split_once('=')
                .is_some_and(|(k, _)| !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
        });
    if !all_kv {
        return vec![Param { name: "_raw_params".into(), name_span: value.span, value: value.clone() }];
    }
    words
        .iter()
        .map(|w| {
            let (k, v) = w.split_once('=').expect("checked above");
            Param {
                name: k.to_string(),
                name_span: value.span,
                value: Node { kind: NodeKind::Str(v.to_string()), span: value.span, raw: v.to_string(), quoted: false },
            }
        })
        .collect()
}

fn params_from(value: &Node) -> Vec<Param> {
    match &value.kind {
        NodeKind::Map(entries) => dedup_last(entries)
            .into_iter()
            .map(|(k, v)| Param { name: key_text(k), name_span: k.span, value: v.clone() })
            .collect(),
        NodeKind::Null => Vec::new(),
        _ => inline_params(value),
    }
}

pub(crate) fn build_task(node: &Node) -> TaskNode {
    let mut task = TaskNode {
        name: None,
        module_ref: None,
        module_keys: Vec::new(),
        params: Vec::new(),
        extra_keys: Vec::new(),
        children: Vec::new(),
        span: node.span,
    };
    let entries = node.as_map().unwrap_or(&[]);
    let mut module_value: Option<&Node> = None;
    let mut extra_args: Vec<Param> = Vec::new();
    for (k, v) in dedup_last(entries) {
        let key = key_text(k);
        match key.as_str() {
            "name" => task.name = v.scalar_text().map(str::to_string),
            "args" => extra_args.extend(params_from(v)),
            "action" | "local_action" => {
                if let Some(text) = v.as_str() {
                    let mut parts = text.splitn(2, char::is_whitespace);
                    let module = parts.next().unwrap_or("").to_string();
                    let rest = parts.next().unwrap_or("").trim().to_string();
                    if !module.is_empty() {
                        task.module_keys.push((module, v.span));
                        if !rest.is_empty() {
                            let rest_node = Node { kind: NodeKind::Str(rest.clone()), span: v.span, raw: rest, quoted: false };
                            extra_args.extend(inline_params(&rest_node));
                        }
                    }
                } else if let Some(module) = v.get("module").and_then(Node::scalar_text) {
                    task.module_keys.push((module.to_string(), v.span));
                    extra_args.extend(params_from(v).into_iter().filter(|p| p.name != "module"));
                }
                task.extra_keys.push((key, v.clone()));
                continue;
            }
            _ => {}
        }
        if matches!(key.as_str(), "block" | "rescue" | "always") {
            if let Some(items) = v.as_seq() {
                task.children.extend(items.iter().filter(|n| n.as_map().is_some()).map(build_task));
            }
        }
        if is_task_keyword(&key) {
            task.extra_keys.push((key, v.clone()));
        } else {
            task.module_keys.push((key, k.span));
            if module_value.is_none() {
                module_value = Some(v);
            }
        }
    }
    if task.module_keys.len() == 1 {
        task.module_ref = Some(task.module_keys[0].0.clone());
        if let Some(v) = module_value {
            task.params = params_from(v);
        }
        task.params.extend(extra_args);
    }
    task
}

fn is_module_bearing(node: &Node) -> bool {
    node.as_map().is_some_and(|entries| {
        entries.iter().any(|(k, _)| {
            let key = key_text(k);
            !is_task_keyword(&key) || matches!(key.as_str(), "block" | "action" | "local_action")
        })
    })
}

fn build_section(key: &str, value: &Node) -> TaskSection {
    let mut section = TaskSection { key: key.to_string(), span: value.span, tasks: Vec::new(), stray_items: Vec::new() };
    match &value.kind {
        NodeKind::Seq(items) => {
            for item in items {
                if item.as_map().is_some() {
                    section.tasks.push(build_task(item));
                } else {
                    section.stray_items.push(item.span);
                }
            }
        }
        NodeKind::Null => {}
        _ => section.stray_items.push(value.span),
    }
    section
}

fn build_play(node: &Node) -> Play {
    let mut play = Play { name: None, hosts: None, sections: Vec::new(), keys: Vec::new(), span: node.span };
    for (k, v) in dedup_last(node.as_map().unwrap_or(&[])) {
        let key = key_text(k);
        match key.as_str() {
            "name" => play.name = v.scalar_text().map(str::to_string),
            "hosts" => play.hosts = Some(v.clone()),
            s if TASK_SECTIONS.contains(&s) => {
                let mut section = build_section(s, v);
                section.span = k.span.cover(&v.span);
                play.sections.push(section);
            }
            _ => {}
        }
        play.keys.push((key, v.clone()));
    }
    play
}

/// Entries of the innermost multi-key mapping reached through single-key
/// wrappers, read as `module: args` invocations.
fn salvage_tasks(root: &Node) -> Vec<TaskNode> {
    let mut current = root;
    loop {
        match current.as_map() {
            Some([(_, inner)]) if inner.as_map().is_some() => current = inner,
            Some(_) => break,
            None => return Vec::new(),
        }
    }
    let entries = current.as_map().unwrap_or(&[]);
    dedup_last(entries)
        .into_iter()
        .filter(|(k, _)| !is_task_keyword(&key_text(k)))
        .map(|(k, v)| TaskNode {
            name: None,
            module_ref: Some(key_text(k)),
            module_keys: vec![(key_text(k), k.span)],
            params: if v.as_map().is_some() { params_from(v) } else { Vec::new() },
            extra_keys: Vec::new(),
            children: Vec::new(),
            span: k.span.cover(&v.span),
        })
        .collect()
}

/// Classify a document and build its playbook structure.
pub fn build_ast(root: Option<&Node>, empty_span: Span) -> PlaybookAst {
    let mut ast = PlaybookAst {
        kind: DocumentKind::OtherDocument,
        plays: Vec::new(),
        tasks: Vec::new(),
        stray_items: Vec::new(),
        root: root.cloned(),
        span: root.map_or(empty_span, |r| r.span),
    };
    let Some(root) = root else { return ast };
    match &root.kind {
        NodeKind::Seq(items) => {
            let is_play = |n: &Node| n.get("hosts").is_some() || n.get("import_playbook").is_some();
            if items.iter().any(is_play) {
                ast.kind = DocumentKind::PlayList;
                for item in items {
                    if item.as_map().is_some() {
                        ast.plays.push(build_play(item));
                    } else {
                        ast.stray_items.push(item.span);
                    }
                }
            } else if items.is_empty() || (items.iter().all(|n| n.as_map().is_some()) && items.iter().any(is_module_bearing)) {
                ast.kind = DocumentKind::TaskList;
                ast.tasks = items.iter().map(build_task).collect();
            }
        }
        NodeKind::Map(_) => ast.tasks = salvage_tasks(root),
        _ => {}
    }
    ast
}
