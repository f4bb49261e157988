//! A YAML loader that keeps source positions for every node.
//!
//! Tokenizing and event parsing are delegated to `yaml-rust2`; this module
//! builds its own node tree from the event stream so that each node carries
//! a byte/line/column span, duplicate mapping keys are observed instead of
//! silently merged, and scalars are resolved with the YAML 1.1 booleans
//! Ansible content relies on.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

/// Nesting deeper than this is rejected rather than built.
pub const MAX_DEPTH: usize = 256;
/// Upper bound on nodes materialized through alias expansion.
const MAX_ALIAS_NODES: usize = 100_000;

/// A position in the source. `offset` is in bytes; `line` and `col` are
/// 1-based, with `col` counted in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub offset: usize,
    pub line: usize,
    pub col: usize,
}

/// Half-open byte range `[start.offset, end.offset)` with line/column ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: Pos,
    pub end: Pos,
}

impl Span {
    pub fn new(start: Pos, end: Pos) -> Self {
        if end < start {
            Span { start, end: start }
        } else {
            Span { start, end }
        }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start.offset <= other.start.offset && other.end.offset <= self.end.offset
    }

    pub fn cover(&self, other: &Span) -> Span {
        Span { start: self.start.min(other.start), end: self.end.max(other.end) }
    }

    /// The source fragment this span covers.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        text.get(self.start.offset..self.end.offset).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Seq(Vec<Node>),
    /// Entries in source order, duplicates included.
    Map(Vec<(Node, Node)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub span: Span,
    /// Scalar text as written (after unquoting); empty for collections.
    pub raw: String,
    pub quoted: bool,
}

impl Node {
    pub fn is_scalar(&self) -> bool {
        !matches!(self.kind, NodeKind::Seq(_) | NodeKind::Map(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Text of a scalar node as written; `None` for collections.
    pub fn scalar_text(&self) -> Option<&str> {
        if self.is_scalar() {
            Some(&self.raw)
        } else {
            None
        }
    }

    pub fn as_map(&self) -> Option<&[(Node, Node)]> {
        match &self.kind {
            NodeKind::Map(entries) => Some(entries),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Node]> {
        match &self.kind {
            NodeKind::Seq(items) => Some(items),
            _ => None,
        }
    }

    /// Last value stored under `key`, matching how duplicate keys load.
    pub fn get(&self, key: &str) -> Option<&Node> {
        self.as_map()?
            .iter()
            .rev()
            .find(|(k, _)| k.scalar_text() == Some(key))
            .map(|(_, v)| v)
    }

    /// Span-free view, used to compare documents structurally.
    pub fn to_value(&self) -> Value {
        match &self.kind {
            NodeKind::Null => Value::Null,
            NodeKind::Bool(b) => Value::Bool(*b),
            NodeKind::Int(i) => Value::Int(*i),
            NodeKind::Float(f) => Value::Float(*f),
            NodeKind::Str(s) => Value::Str(s.clone()),
            NodeKind::Seq(items) => Value::Seq(items.iter().map(Node::to_value).collect()),
            NodeKind::Map(entries) => Value::Map(entries.iter().map(|(k, v)| (k.to_value(), v.to_value())).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Seq(Vec<Value>),
    Map(Vec<(Value, Value)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxIssue {
    pub message: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateKey {
    pub key: String,
    pub first: Span,
    pub duplicate: Span,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub documents: Vec<Node>,
    pub syntax: Option<SyntaxIssue>,
    pub duplicates: Vec<DuplicateKey>,
}

impl Loaded {
    pub fn is_ok(&self) -> bool {
        self.syntax.is_none()
    }
}

/// Maps the parser's character-based markers to byte positions.
struct Locator<'a> {
    text: &'a str,
    line_starts: Vec<usize>,
}

impl<'a> Locator<'a> {
    fn new(text: &'a str) -> Self {
        let mut line_starts = vec![0];
        line_starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        Self { text, line_starts }
    }

    fn line_end(&self, line_idx: usize) -> usize {
        self.line_starts.get(line_idx + 1).map(|&s| s - 1).unwrap_or(self.text.len())
    }

    fn pos_of_marker(&self, m: &Marker) -> Pos {
        let line_idx = m.line().saturating_sub(1).min(self.line_starts.len() - 1);
        let start = self.line_starts[line_idx];
        let end = self.line_end(line_idx);
        let mut offset = end;
        for (n, (i, _)) in self.text[start..end].char_indices().enumerate() {
            if n == m.col() {
                offset = start + i;
                break;
            }
        }
        self.pos_at(offset)
    }

    fn pos_at(&self, offset: usize) -> Pos {
        let mut offset = offset.min(self.text.len());
        while !self.text.is_char_boundary(offset) {
            offset -= 1;
        }
        let line_idx = match self.line_starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let col = self.text[self.line_starts[line_idx]..offset].chars().count() + 1;
        Pos { offset, line: line_idx + 1, col }
    }

    /// Step back from `offset` over whitespace.
    fn trim_back(&self, offset: usize, floor: usize) -> usize {
        let bytes = self.text.as_bytes();
        let mut o = offset.min(bytes.len());
        while o > floor && bytes[o - 1].is_ascii_whitespace() {
            o -= 1;
        }
        o
    }

    fn end_of_line(&self, pos: Pos) -> Pos {
        let end = self.line_end(pos.line - 1);
        self.pos_at(end.max(pos.offset))
    }

    fn quoted_end(&self, start: usize, quote: u8) -> Option<usize> {
        let bytes = self.text.as_bytes();
        let mut i = start + 1;
        while i < bytes.len() {
            let b = bytes[i];
            if quote == b'"' && b == b'\\' {
                i += 2;
                continue;
            }
            if b == quote {
                if quote == b'\'' && bytes.get(i + 1) == Some(&b'\'') {
                    i += 2;
                    continue;
                }
                return Some(i + 1);
            }
            i += 1;
        }
        None
    }
}

struct Collector {
    events: Vec<(Event, Marker)>,
}

impl MarkedEventReceiver for Collector {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        self.events.push((ev, mark));
    }
}

enum Frame {
    Seq { start: Pos, flow: bool, anchor: usize, items: Vec<Node> },
    Map { start: Pos, flow: bool, anchor: usize, entries: Vec<(Node, Node)>, key: Option<Node> },
}

fn resolve_plain(raw: &str) -> NodeKind {
    match raw {
        "" | "~" | "null" | "Null" | "NULL" => return NodeKind::Null,
        "true" | "True" | "TRUE" | "yes" | "Yes" | "YES" => return NodeKind::Bool(true),
        "false" | "False" | "FALSE" | "no" | "No" | "NO" => return NodeKind::Bool(false),
        ".inf" | ".Inf" | ".INF" | "+.inf" => return NodeKind::Float(f64::INFINITY),
        "-.inf" | "-.Inf" | "-.INF" => return NodeKind::Float(f64::NEG_INFINITY),
        ".nan" | ".NaN" | ".NAN" => return NodeKind::Float(f64::NAN),
        _ => {}
    }
    let digits = raw.strip_prefix(['-', '+']).unwrap_or(raw);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(i) = raw.parse::<i64>() {
            return NodeKind::Int(i);
        }
    }
    if let Some(hex) = raw.strip_prefix("0x") {
        if let Ok(i) = i64::from_str_radix(hex, 16) {
            return NodeKind::Int(i);
        }
    }
    if let Some(oct) = raw.strip_prefix("0o") {
        if let Ok(i) = i64::from_str_radix(oct, 8) {
            return NodeKind::Int(i);
        }
    }
    let looks_numeric = digits.starts_with(|c: char| c.is_ascii_digit() || c == '.')
        && digits.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'-' | b'+'))
        && digits.bytes().any(|b| b.is_ascii_digit());
    if looks_numeric {
        if let Ok(f) = raw.parse::<f64>() {
            return NodeKind::Float(f);
        }
    }
    NodeKind::Str(raw.to_string())
}

struct Builder<'a> {
    loc: Locator<'a>,
    stack: Vec<Frame>,
    documents: Vec<Node>,
    anchors: HashMap<usize, Node>,
    duplicates: Vec<DuplicateKey>,
    alias_budget: usize,
}

impl<'a> Builder<'a> {
    fn attach(&mut self, node: Node) {
        match self.stack.last_mut() {
            None => self.documents.push(node),
            Some(Frame::Seq { items, .. }) => items.push(node),
            Some(Frame::Map { entries, key, .. }) => match key.take() {
                None => *key = Some(node),
                Some(k) => {
                    if let Some(name) = k.scalar_text() {
                        if let Some((first, _)) = entries.iter().find(|(ek, _)| ek.scalar_text() == Some(name)) {
                            self.duplicates.push(DuplicateKey {
                                key: name.to_string(),
                                first: first.span,
                                duplicate: k.span,
                            });
                        }
                    }
                    entries.push((k, node));
                }
            },
        }
    }

    fn scalar_span(&self, value: &str, style: TScalarStyle, start: Pos, next: Option<&Marker>) -> Span {
        let text = self.loc.text;
        let fallback = || {
            let limit = next.map(|m| self.loc.pos_of_marker(m).offset).unwrap_or(text.len());
            let end = self.loc.trim_back(limit, start.offset);
            self.loc.pos_at(end)
        };
        let end = match style {
            TScalarStyle::Plain => {
                if text[start.offset..].starts_with(value) {
                    self.loc.pos_at(start.offset + value.len())
                } else {
                    fallback()
                }
            }
            TScalarStyle::SingleQuoted | TScalarStyle::DoubleQuoted => {
                let quote = if matches!(style, TScalarStyle::SingleQuoted) { b'\'' } else { b'"' };
                if text.as_bytes().get(start.offset) == Some(&quote) {
                    match self.loc.quoted_end(start.offset, quote) {
                        Some(e) => self.loc.pos_at(e),
                        None => fallback(),
                    }
                } else {
                    fallback()
                }
            }
            _ => fallback(),
        };
        Span::new(start, end)
    }

    fn build(&mut self, events: &[(Event, Marker)]) -> Result<(), SyntaxIssue> {
        for (idx, (event, mark)) in events.iter().enumerate() {
            let pos = self.loc.pos_of_marker(mark);
            let next = events.get(idx + 1).map(|(_, m)| m);
            match event {
                Event::Scalar(value, style, anchor, _) => {
                    let span = self.scalar_span(value, *style, pos, next);
                    let quoted = !matches!(style, TScalarStyle::Plain);
                    let kind = if quoted { NodeKind::Str(value.clone()) } else { resolve_plain(value) };
                    let node = Node { kind, span, raw: value.clone(), quoted };
                    if *anchor > 0 {
                        self.anchors.insert(*anchor, node.clone());
                    }
                    self.attach(node);
                }
                Event::Alias(id) => {
                    let node = match self.anchors.get(id) {
                        Some(target) => {
                            let size = node_count(target);
                            if size > self.alias_budget {
                                return Err(SyntaxIssue {
                                    message: "alias expansion exceeds size limit".into(),
                                    span: Span::new(pos, self.loc.end_of_line(pos)),
                                });
                            }
                            self.alias_budget -= size;
                            let mut n = target.clone();
                            n.span = Span::new(pos, self.loc.end_of_line(pos));
                            n
                        }
                        None => {
                            return Err(SyntaxIssue {
                                message: "alias refers to an unknown anchor".into(),
                                span: Span::new(pos, self.loc.end_of_line(pos)),
                            })
                        }
                    };
                    self.attach(node);
                }
                Event::SequenceStart(anchor, _) | Event::MappingStart(anchor, _) => {
                    if self.stack.len() >= MAX_DEPTH {
                        return Err(SyntaxIssue {
                            message: format!("nesting deeper than {MAX_DEPTH} levels"),
                            span: Span::new(pos, self.loc.end_of_line(pos)),
                        });
                    }
                    let flow_char = if matches!(event, Event::SequenceStart(..)) { b'[' } else { b'{' };
                    let flow = self.loc.text.as_bytes().get(pos.offset) == Some(&flow_char);
                    let frame = if matches!(event, Event::SequenceStart(..)) {
                        Frame::Seq { start: pos, flow, anchor: *anchor, items: Vec::new() }
                    } else {
                        Frame::Map { start: pos, flow, anchor: *anchor, entries: Vec::new(), key: None }
                    };
                    self.stack.push(frame);
                }
                Event::SequenceEnd | Event::MappingEnd => {
                    let Some(frame) = self.stack.pop() else { continue };
                    let (kind, start, flow, anchor, first, last) = match frame {
                        Frame::Seq { start, flow, anchor, items } => {
                            let first = items.first().map(|n| n.span.start);
                            let last = items.last().map(|n| n.span.end);
                            (NodeKind::Seq(items), start, flow, anchor, first, last)
                        }
                        Frame::Map { start, flow, anchor, entries, .. } => {
                            let first = entries.first().map(|(k, _)| k.span.start);
                            let last = entries.last().map(|(k, v)| k.span.end.max(v.span.end));
                            (NodeKind::Map(entries), start, flow, anchor, first, last)
                        }
                    };
                    let start = if flow { start } else { first.map_or(start, |f| f.min(start)) };
                    let end = if flow {
                        self.loc.pos_at(pos.offset + 1)
                    } else {
                        last.map_or(start, |l| l.max(start))
                    };
                    let node = Node { kind, span: Span::new(start, end), raw: String::new(), quoted: false };
                    if anchor > 0 {
                        self.anchors.insert(anchor, node.clone());
                    }
                    self.attach(node);
                }
                Event::DocumentStart => self.anchors.clear(),
                _ => {}
            }
        }
        Ok(())
    }
}

fn node_count(node: &Node) -> usize {
    match &node.kind {
        NodeKind::Seq(items) => 1 + items.iter().map(node_count).sum::<usize>(),
        NodeKind::Map(entries) => 1 + entries.iter().map(|(k, v)| node_count(k) + node_count(v)).sum::<usize>(),
        _ => 1,
    }
}

/// A scan error message with the position the scanner reported, if any.
type ScanFailure = (String, Option<Marker>);

fn collect_events(text: &str) -> (Vec<(Event, Marker)>, Option<ScanFailure>) {
    let mut collector = Collector { events: Vec::new() };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let mut parser = Parser::new_from_str(text);
        let res = parser.load(&mut collector, true);
        (collector, res)
    }));
    match outcome {
        Ok((collector, Ok(()))) => (collector.events, None),
        Ok((collector, Err(e))) => (collector.events, Some((e.info().to_string(), Some(*e.marker())))),
        Err(_) => (Vec::new(), Some(("parser failed on malformed input".to_string(), None))),
    }
}

/// Load every document in `text`.
///
/// Scanning stops at the first syntax error, which is reported with its
/// position; documents completed before it are not returned.
pub fn load(text: &str) -> Loaded {
    let loc = Locator::new(text);
    let (events, error) = collect_events(text);
    if let Some((message, marker)) = error {
        let pos = marker.map_or_else(|| loc.pos_at(0), |m| loc.pos_of_marker(&m));
        let span = Span::new(pos, loc.end_of_line(pos));
        return Loaded { documents: Vec::new(), syntax: Some(SyntaxIssue { message, span }), duplicates: Vec::new() };
    }
    let mut builder = Builder {
        loc,
        stack: Vec::new(),
        documents: Vec::new(),
        anchors: HashMap::new(),
        duplicates: Vec::new(),
        alias_budget: MAX_ALIAS_NODES,
    };
    match builder.build(&events) {
        Ok(()) => Loaded { documents: builder.documents, syntax: None, duplicates: builder.duplicates },
        Err(issue) => Loaded { documents: Vec::new(), syntax: Some(issue), duplicates: builder.duplicates },
    }
}

/// True when `text` scans and parses as YAML.
pub fn is_well_formed(text: &str) -> bool {
    load(text).is_ok()
}

fn needs_quotes(s: &str) -> bool {
    if s.is_empty() || s != s.trim() {
        return true;
    }
    if !matches!(resolve_plain(s), NodeKind::Str(_)) {
        return true;
    }
    let first = s.chars().next().unwrap_or(' ');
    if "-?:,[]{}#&*!|>'\"%@`~".contains(first) {
        return true;
    }
    s.contains(": ")
        || s.contains(" #")
        || s.ends_with(':')
        || s.chars().any(|c| c.is_control() || matches!(c, '\u{85}' | '\u{2028}' | '\u{2029}' | '\u{feff}'))
        || s.contains(['[', ']', '{', '}', ','])
}

fn emit_scalar(node: &Node, out: &mut String) {
    match &node.kind {
        NodeKind::Null => out.push_str("null"),
        NodeKind::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        NodeKind::Int(i) => {
            let _ = write!(out, "{i}");
        }
        NodeKind::Float(f) => {
            if f.is_nan() {
                out.push_str(".nan");
            } else if f.is_infinite() {
                out.push_str(if *f > 0.0 { ".inf" } else { "-.inf" });
            } else {
                let _ = write!(out, "{f:?}");
            }
        }
        NodeKind::Str(s) => {
            if needs_quotes(s) {
                out.push_str(&serde_json::to_string(s).expect("string serializes"));
            } else {
                out.push_str(s);
            }
        }
        NodeKind::Seq(_) | NodeKind::Map(_) => emit_flow(node, out),
    }
}

fn emit_flow(node: &Node, out: &mut String) {
    match &node.kind {
        NodeKind::Seq(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit_flow(item, out);
            }
            out.push(']');
        }
        NodeKind::Map(entries) => {
            out.push('{');
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit_flow(k, out);
                out.push_str(": ");
                emit_flow(v, out);
            }
            out.push('}');
        }
        _ => {
            // JSON-style quoting keeps flow context unambiguous
            if let NodeKind::Str(s) = &node.kind {
                out.push_str(&serde_json::to_string(s).expect("string serializes"));
            } else {
                emit_scalar(node, out);
            }
        }
    }
}

fn is_block_collection(node: &Node) -> bool {
    match &node.kind {
        NodeKind::Seq(items) => !items.is_empty(),
        NodeKind::Map(entries) => !entries.is_empty(),
        _ => false,
    }
}

fn emit_block(node: &Node, indent: usize, lines: &mut Vec<String>) {
    let pad = " ".repeat(indent);
    match &node.kind {
        NodeKind::Seq(items) if !items.is_empty() => {
            for item in items {
                if is_block_collection(item) {
                    let mut inner = Vec::new();
                    emit_block(item, indent + 2, &mut inner);
                    let first = inner.remove(0);
                    lines.push(format!("{pad}- {}", &first[indent + 2..]));
                    lines.extend(inner);
                } else {
                    let mut s = String::new();
                    emit_scalar(item, &mut s);
                    lines.push(format!("{pad}- {s}"));
                }
            }
        }
        NodeKind::Map(entries) if !entries.is_empty() => {
            for (k, v) in entries {
                let mut key = String::new();
                if k.is_scalar() {
                    emit_scalar(k, &mut key);
                } else {
                    emit_flow(k, &mut key);
                }
                if is_block_collection(v) {
                    lines.push(format!("{pad}{key}:"));
                    emit_block(v, indent + 2, lines);
                } else {
                    let mut s = String::new();
                    emit_scalar(v, &mut s);
                    lines.push(format!("{pad}{key}: {s}"));
                }
            }
        }
        _ => {
            let mut s = String::new();
            emit_scalar(node, &mut s);
            lines.push(format!("{pad}{s}"));
        }
    }
}

/// Serialize a node tree as block-style YAML.
pub fn to_yaml(node: &Node) -> String {
    let mut lines = Vec::new();
    emit_block(node, 0, &mut lines);
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
