//! Module grammars: which parameters each Ansible module accepts.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::yaml::{self, Node, NodeKind};

/// The catalog compiled into the binary.
pub const SHIPPED_CATALOG: &str = include_str!("../../catalog/ansible.yaml");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog is not valid YAML (line {line}): {message}")]
    Syntax { line: usize, message: String },
    #[error("catalog: {0}")]
    Shape(String),
    #[error("catalog entry {entry}: {reason}")]
    Entry { entry: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    String,
    Boolean,
    Integer,
    List,
    Path,
}

impl std::str::FromStr for ValueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "string" => ValueKind::String,
            "boolean" => ValueKind::Boolean,
            "integer" => ValueKind::Integer,
            "list" => ValueKind::List,
            "path" => ValueKind::Path,
            other => return Err(format!("unknown value_kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub name: String,
    pub required: bool,
    pub value_kind: ValueKind,
    pub choices: Option<Vec<String>>,
    pub aliases: Vec<String>,
}

impl ParamSchema {
    pub fn answers_to(&self, name: &str) -> bool {
        self.name == name || self.aliases.iter().any(|a| a == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSchema {
    pub fqcn: String,
    pub short_names: Vec<String>,
    pub params: Vec<ParamSchema>,
}

impl ModuleSchema {
    pub fn param(&self, name: &str) -> Option<&ParamSchema> {
        self.params.iter().find(|p| p.answers_to(name))
    }

    /// Whether the module takes a free-form argument (`command: ls -l`).
    pub fn takes_free_form(&self) -> bool {
        self.param("free_form").is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution<'a> {
    Found(&'a ModuleSchema),
    Ambiguous(Vec<String>),
    Unknown,
}

#[derive(Debug, Clone, Default)]
pub struct SchemaCatalog {
    pub version: String,
    modules: BTreeMap<String, ModuleSchema>,
    short: HashMap<String, Vec<String>>,
}

impl SchemaCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn shipped() -> Self {
        parse_catalog(SHIPPED_CATALOG).expect("shipped catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn modules(&self) -> impl Iterator<Item = &ModuleSchema> {
        self.modules.values()
    }

    pub fn insert(&mut self, schema: ModuleSchema) {
        for name in &schema.short_names {
            let fqcns = self.short.entry(name.clone()).or_default();
            if !fqcns.contains(&schema.fqcn) {
                fqcns.push(schema.fqcn.clone());
                fqcns.sort();
            }
        }
        self.modules.insert(schema.fqcn.clone(), schema);
    }

    /// Merge `other` into this catalog; entries with the same FQCN replace ours.
    pub fn extend(&mut self, other: SchemaCatalog) {
        for (_, schema) in other.modules {
            self.insert(schema);
        }
        if !other.version.is_empty() {
            self.version = format!("{}+{}", self.version, other.version);
        }
    }

    pub fn resolve(&self, module_ref: &str) -> Resolution<'_> {
        if let Some(schema) = self.modules.get(module_ref) {
            return Resolution::Found(schema);
        }
        let name = module_ref.strip_prefix("ansible.legacy.").unwrap_or(module_ref);
        match self.short.get(name).map(Vec::as_slice) {
            Some([one]) => Resolution::Found(&self.modules[one]),
            Some(many) if many.len() > 1 => Resolution::Ambiguous(many.to_vec()),
            _ => Resolution::Unknown,
        }
    }

    pub fn lookup(&self, module_ref: &str) -> Option<&ModuleSchema> {
        match self.resolve(module_ref) {
            Resolution::Found(s) => Some(s),
            _ => None,
        }
    }
}

fn str_list(node: Option<&Node>, what: &str) -> Result<Vec<String>, String> {
    match node {
        None => Ok(Vec::new()),
        Some(n) if matches!(n.kind, NodeKind::Null) => Ok(Vec::new()),
        Some(n) => n
            .as_seq()
            .ok_or_else(|| format!("`{what}` must be a list"))?
            .iter()
            .map(|item| item.scalar_text().map(str::to_string).ok_or_else(|| format!("`{what}` items must be scalars")))
            .collect(),
    }
}

/// Reject keys outside `allowed`, so a misspelt field fails loudly instead of
/// silently falling back to a default.
fn known_keys(node: &Node, allowed: &[&str], what: &str) -> Result<(), String> {
    let entries = node.as_map().ok_or_else(|| format!("{what} must be a mapping"))?;
    for (k, _) in entries {
        let key = k.scalar_text().unwrap_or_default();
        if !allowed.contains(&key) {
            return Err(format!("unknown {what} field `{key}`"));
        }
    }
    Ok(())
}

fn parse_param(node: &Node) -> Result<ParamSchema, String> {
    known_keys(node, &["name", "required", "value_kind", "choices", "default", "aliases"], "parameter")?;
    let name = node
        .get("name")
        .and_then(Node::as_str)
        .filter(|s| !s.is_empty())
        .ok_or("parameter without a name")?
        .to_string();
    let err = |m: String| format!("parameter `{name}`: {m}");
    let required = match node.get("required").map(|n| &n.kind) {
        None | Some(NodeKind::Null) => false,
        Some(NodeKind::Bool(b)) => *b,
        Some(_) => return Err(err("`required` must be a boolean".into())),
    };
    let value_kind = node
        .get("value_kind")
        .and_then(Node::as_str)
        .unwrap_or("string")
        .parse::<ValueKind>()
        .map_err(err)?;
    let choices = match node.get("choices") {
        None => None,
        Some(n) => {
            let list = str_list(Some(n), "choices").map_err(err)?;
            if list.is_empty() {
                return Err(err("choices must be non-empty when present".into()));
            }
            Some(list)
        }
    };
    if node.get("default").is_some() && required {
        return Err(err("required parameters cannot have a default".into()));
    }
    let aliases = str_list(node.get("aliases"), "aliases").map_err(err)?;
    Ok(ParamSchema { name, required, value_kind, choices, aliases })
}

fn parse_module(node: &Node) -> Result<ModuleSchema, String> {
    known_keys(node, &["fqcn", "short_names", "params"], "module")?;
    let fqcn = node
        .get("fqcn")
        .and_then(Node::as_str)
        .filter(|s| !s.is_empty())
        .ok_or("missing `fqcn`")?
        .to_string();
    let short_names = str_list(node.get("short_names"), "short_names")?;
    let mut params = Vec::new();
    if let Some(p) = node.get("params") {
        if !matches!(p.kind, NodeKind::Null) {
            for item in p.as_seq().ok_or("`params` must be a list")? {
                params.push(parse_param(item)?);
            }
        }
    }
    for (i, p) in params.iter().enumerate() {
        for name in std::iter::once(&p.name).chain(&p.aliases) {
            if params[..i].iter().any(|q| q.answers_to(name)) {
                return Err(format!("parameter name `{name}` declared twice"));
            }
        }
    }
    Ok(ModuleSchema { fqcn, short_names, params })
}

/// Parse catalog YAML text.
pub fn parse_catalog(text: &str) -> Result<SchemaCatalog, CatalogError> {
    let loaded = yaml::load(text);
    if let Some(issue) = loaded.syntax {
        return Err(CatalogError::Syntax { line: issue.span.start.line, message: issue.message });
    }
    let mut catalog = SchemaCatalog::empty();
    let Some(root) = loaded.documents.first() else { return Ok(catalog) };
    if matches!(root.kind, NodeKind::Null) {
        return Ok(catalog);
    }
    if root.as_map().is_none() {
        return Err(CatalogError::Shape("top level must be a mapping with a `modules` list".into()));
    }
    known_keys(root, &["catalog_version", "modules"], "top-level").map_err(CatalogError::Shape)?;
    if let Some(v) = root.get("catalog_version").and_then(Node::scalar_text) {
        catalog.version = v.to_string();
    }
    let modules = match root.get("modules") {
        None => return Err(CatalogError::Shape("missing `modules` list".into())),
        Some(n) if matches!(n.kind, NodeKind::Null) => return Ok(catalog),
        Some(n) => n.as_seq().ok_or_else(|| CatalogError::Shape("`modules` must be a list".into()))?,
    };
    for (i, entry) in modules.iter().enumerate() {
        let label = entry
            .get("fqcn")
            .and_then(Node::scalar_text)
            .map(|f| format!("#{i} ({f})"))
            .unwrap_or_else(|| format!("#{i}"));
        let schema = parse_module(entry).map_err(|reason| CatalogError::Entry { entry: label.clone(), reason })?;
        if catalog.modules.contains_key(&schema.fqcn) {
            return Err(CatalogError::Entry { entry: label, reason: "duplicate fqcn".into() });
        }
        catalog.insert(schema);
    }
    Ok(catalog)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<SchemaCatalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io { path: path.to_path_buf(), source })?;
    parse_catalog(&text)
}
