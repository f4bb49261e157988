//! The `yamlsmith` command line.
//!
//! Exit status: 0 clean, 1 operational failure, 2 findings, 3 prompt over
//! budget, 64 usage error. Reports go to standard output, diagnostics to
//! standard error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backend::{self, GenerationRequest, HttpBackend, TranscriptStore, DEFAULT_ENDPOINT, ENDPOINT_ENV};
use crate::extract::{self, CandidatePolicy, CodeBlock, DEFAULT_ECHO_THRESHOLD};
use crate::prompt::{self, ModelProfile, PromptSpec};
use crate::quant::{self, AttentionProbe, Matrix, QuantMode};
use crate::score::{self, CompositeWeights, ReportFormat, ScoreOptions};
use crate::validate::{self, yaml, Finding, NodeKind, SchemaCatalog, Severity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_FINDINGS: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const CONFIG_ENV: &str = "YAMLSMITH_CONFIG";
pub const DEFAULT_PROFILE: &str = "llama2_chat";

/// The transcripts compiled into the binary, used when `eval` gets no path.
pub const SHIPPED_CORPUS: &str = include_str!("../fixtures/annexes.jsonl");

#[derive(Debug, Parser)]
#[command(name = "yamlsmith", version, about = "Generate, lint and evaluate LLM-written Ansible playbooks")]
pub struct Cli {
    /// YAML configuration file (falls back to $YAMLSMITH_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prompt a model for a playbook, then extract and validate it.
    Generate(GenerateArgs),
    /// Validate a playbook or task file.
    Lint(LintArgs),
    /// Score recorded transcripts and rank them.
    Eval(EvalArgs),
    /// Measure int4/int8 round-trip error on a seeded random matrix.
    QuantBench(QuantBenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// What the playbook should do.
    #[arg(conflicts_with = "prompt_file")]
    pub description: Option<String>,
    /// A prompt already in the profile's template, or a file holding the description.
    #[arg(long, value_name = "PATH")]
    pub prompt_file: Option<PathBuf>,
    /// Answer from a transcript file instead of a live server.
    #[arg(long, value_name = "PATH")]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Model name sent to the backend and matched against transcripts.
    #[arg(long)]
    pub model: Option<String>,
    /// Which recorded attempt to replay when several share a prompt.
    #[arg(long)]
    pub attempt: Option<u32>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Extra module grammars merged over the shipped catalog.
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    /// Tokens kept free for the answer (defaults to the profile's reserve).
    #[arg(long)]
    pub reserve: Option<usize>,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<CandidatePolicy>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Where to write the selected playbook (standard output if omitted).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    pub path: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Transcript file (JSON Lines); the bundled corpus if omitted.
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Require an ordering such as `annexe1<annexe4.tir2`; repeatable.
    #[arg(long, value_name = "EXPR")]
    pub assert_order: Vec<String>,
    /// Score transcripts one at a time instead of in parallel.
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Args)]
pub struct QuantBenchArgs {
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..=4096))]
    pub size: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "4,8", value_parser = parse_bits)]
    pub bits: Vec<u32>,
    /// Side of the attention probe; 0 disables it.
    #[arg(long, default_value_t = 16)]
    pub probe: usize,
    /// Fixed `MIN,MAX` range (static mode) instead of the matrix's own.
    #[arg(long, value_name = "MIN,MAX", value_parser = parse_range)]
    pub range: Option<(f32, f32)>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Text,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

fn parse_policy(s: &str) -> Result<CandidatePolicy, String> {
    s.parse()
}

fn parse_bits(s: &str) -> Result<u32, String> {
    match s.trim().parse::<u32>() {
        Ok(b) if quant::SUPPORTED_BITS.contains(&b) => Ok(b),
        _ => Err(format!("unsupported bit width `{s}`; use 4 or 8")),
    }
}

fn parse_range(s: &str) -> Result<(f32, f32), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo: f32 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f32 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err("MIN and MAX must be finite with MIN <= MAX".into());
    }
    Ok((lo, hi))
}

/// Settings read from the YAML configuration file. Flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub endpoint: Option<String>,
    pub profile: Option<String>,
    pub catalog_path: Option<PathBuf>,
    pub candidate_policy: Option<CandidatePolicy>,
    pub composite_weights: Option<Vec<f64>>,
    pub echo_threshold: Option<f64>,
    #[serde(default)]
    pub profiles: Vec<ModelProfile>,
}

/// A failure that ends the command with a given exit status.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Exit {
    fn usage(message: impl Into<String>) -> Self {
        Exit { code: EXIT_USAGE, message: message.into() }
    }

    fn failure(message: impl Into<String>) -> Self {
        Exit { code: EXIT_FAILURE, message: message.into() }
    }
}

type CmdResult = Result<i32, Exit>;

/// Convert a YAML node into JSON so serde can deserialize it.
pub fn node_to_json(node: &yaml::Node) -> serde_json::Value {
    use serde_json::Value;
    match &node.kind {
        NodeKind::Null => Value::Null,
        NodeKind::Bool(b) => Value::Bool(*b),
        NodeKind::Int(i) => Value::from(*i),
        NodeKind::Float(f) => serde_json::Number::from_f64(*f).map_or(Value::Null, Value::Number),
        NodeKind::Str(s) => Value::String(s.clone()),
        NodeKind::Seq(items) => Value::Array(items.iter().map(node_to_json).collect()),
        NodeKind::Map(entries) => Value::Object(
            entries
                .iter()
                .map(|(k, v)| (k.scalar_text().unwrap_or_default().to_string(), node_to_json(v)))
                .collect(),
        ),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let loaded = yaml::load(text);
        if let Some(issue) = loaded.syntax {
            return Err(format!("line {}: {}", issue.span.start.line, issue.message));
        }
        if let Some(dup) = loaded.duplicates.first() {
            return Err(format!("line {}: duplicate key `{}`", dup.duplicate.start.line, dup.key));
        }
        let config: Config = match loaded.documents.first() {
            None => Config::default(),
            Some(n) if matches!(n.kind, NodeKind::Null) => Config::default(),
            Some(n) => serde_json::from_value(node_to_json(n)).map_err(|e| e.to_string())?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(w) = &self.composite_weights {
            CompositeWeights::from_slice(w).map_err(|e| e.to_string())?;
        }
        if let Some(t) = self.echo_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(format!("echo_threshold must lie in (0, 1], got {t}"));
            }
        }
        for p in &self.profiles {
            p.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn score_options(&self) -> ScoreOptions {
        let mut options = ScoreOptions::default();
        if let Some(w) = &self.composite_weights {
            options.weights = CompositeWeights::from_slice(w).expect("validated on load");
        }
        options.echo_threshold = self.echo_threshold.unwrap_or(DEFAULT_ECHO_THRESHOLD);
        options
    }

    /// Profiles from the file first, then the built-in ones.
    pub fn find_profile(&self, name: &str) -> Option<ModelProfile> {
        self.profiles.iter().find(|p| p.name == name).cloned().or_else(|| ModelProfile::builtin_named(name))
    }
}

fn load_config(flag: Option<&Path>) -> Result<Config, Exit> {
    let env_path = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match flag.map(Path::to_path_buf).or(env_path) {
        Some(path) => Config::load(&path).map_err(|e| Exit::usage(format!("invalid config: {e}"))),
        None => Ok(Config::default()),
    }
}

fn load_catalog(flag: Option<&Path>, config: &Config) -> Result<SchemaCatalog, Exit> {
    let mut catalog = SchemaCatalog::shipped();
    if let Some(path) = flag.or(config.catalog_path.as_deref()) {
        let extra = validate::load_catalog(path).map_err(|e| Exit::failure(e.to_string()))?;
        catalog.extend(extra);
    }
    Ok(catalog)
}

fn findings_text(label: &str, findings: &[Finding]) -> String {
    let mut out = String::new();
    for f in findings {
        out.push_str(&format!("{label}:{f}\n"));
    }
    let errors = findings.iter().filter(|f| f.severity == Severity::Error).count();
    let warnings = findings.iter().filter(|f| f.severity == Severity::Warning).count();
    out.push_str(&format!("{label}: {errors} error(s), {warnings} warning(s)\n"));
    out
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn status_for(findings: &[Finding]) -> i32 {
    if findings.iter().any(|f| f.severity == Severity::Error) {
        EXIT_FINDINGS
    } else {
        EXIT_OK
    }
}

#[derive(Serialize)]
struct LintReport<'a> {
    path: String,
    kind: Option<&'static str>,
    findings: &'a [Finding],
}

fn cmd_lint(args: &LintArgs, config: &Config, out: &mut dyn Write) -> CmdResult {
    let catalog = load_catalog(args.catalog.as_deref(), config)?;
    let text = std::fs::read_to_string(&args.path)
        .map_err(|e| Exit::failure(format!("cannot read {}: {e}", args.path.display())))?;
    let v = validate::validate_text(&text, &catalog);
    let label = args.path.display().to_string();
    let report = match args.format {
        FormatArg::Json => json_line(&LintReport {
            path: label,
            kind: v.ast.as_ref().map(|a| a.kind.as_str()),
            findings: &v.findings,
        }),
        FormatArg::Text => findings_text(&label, &v.findings),
    };
    write_out(out, &report)?;
    Ok(status_for(&v.findings))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Exit> {
    out.write_all(text.as_bytes()).map_err(|e| Exit::failure(format!("cannot write report: {e}")))
}

/// Parse `a<b<c`, expanding `annexeN` to `annexeN.tir1`.
pub fn parse_order(expr: &str) -> Result<Vec<String>, String> {
    let ids: Vec<String> = expr
        .split('<')
        .map(|part| {
            let id = part.trim();
            if id.contains('.') {
                id.to_string()
            } else {
                format!("{id}.tir1")
            }
        })
        .collect();
    if ids.len() < 2 || ids.iter().any(|id| id == ".tir1" || id.starts_with('.') || id.ends_with('.')) {
        return Err(format!("expected `fixture<fixture`, got `{expr}`"));
    }
    Ok(ids)
}

fn cmd_eval(args: &EvalArgs, config: &Config, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let orders = args
        .assert_order
        .iter()
        .map(|e| parse_order(e))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Exit::usage)?;
    let catalog = load_catalog(args.catalog.as_deref(), config)?;
    let store = match &args.corpus {
        Some(path) => backend::load_transcripts(path).map_err(|e| Exit::failure(e.to_string()))?,
        None => backend::parse_transcripts(SHIPPED_CORPUS, Path::new("<bundled>")).expect("bundled corpus parses"),
    };
    let mut options = config.score_options();
    options.parallel = !args.serial;
    let table = score::run_eval(&store, &catalog, &options).map_err(|e| Exit::failure(e.to_string()))?;
    write_out(out, &score::render_report(&table, args.format.into()))?;
    let mut status = EXIT_OK;
    for ids in &orders {
        let scores = ids
            .iter()
            .map(|id| table.composite(id).ok_or_else(|| Exit::usage(format!("no fixture `{id}` in corpus"))))
            .collect::<Result<Vec<_>, _>>()?;
        for (pair, ids) in scores.windows(2).zip(ids.windows(2)) {
            if pair[0] >= pair[1] {
                let _ = writeln!(err, "order violated: {} ({:.3}) is not below {} ({:.3})", ids[0], pair[0], ids[1], pair[1]);
                status = EXIT_FINDINGS;
            }
        }
    }
    Ok(status)
}

fn cmd_quant_bench(args: &QuantBenchArgs, out: &mut dyn Write) -> CmdResult {
    let n = args.size as usize;
    let w = Matrix::random(n, n, -1.0, 1.0, args.seed);
    let probe = (args.probe > 0).then(|| AttentionProbe::random(args.probe, args.seed.wrapping_add(1)));
    let mode = match args.range {
        Some((w_min, w_max)) => QuantMode::Static { w_min, w_max },
        None => QuantMode::Dynamic,
    };
    let report = quant::quant_error_report(&w, &args.bits, probe.as_ref(), mode).map_err(|e| Exit::usage(e.to_string()))?;
    let text = match args.format {
        FormatArg::Json => json_line(&report),
        FormatArg::Text => report.to_text(),
    };
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GenerateReport<'a> {
    profile: &'a str,
    model: &'a str,
    budget: prompt::BudgetReport,
    candidate: Option<CandidateInfo>,
    echo: bool,
    findings: &'a [Finding],
}

#[derive(Serialize)]
struct CandidateInfo {
    start_line: usize,
    end_line: usize,
    origin: extract::BlockOrigin,
}

fn build_spec(args: &GenerateArgs, profile: &ModelProfile) -> Result<PromptSpec, Exit> {
    let description = match (&args.prompt_file, &args.description) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Exit::failure(format!("cannot read {}: {e}", path.display())))?;
            for candidate in [text.as_str(), text.trim_end_matches(['\n', '\r'])] {
                if let Some(spec) = prompt::parse_prompt(candidate, profile.template_kind) {
                    return Ok(spec);
                }
            }
            text
        }
        (None, Some(d)) => d.clone(),
        (None, None) => String::new(),
    };
    let description = description.trim();
    if description.is_empty() {
        return Err(Exit::usage("generate needs a description or --prompt-file"));
    }
    Ok(PromptSpec::new(description))
}

fn pick_candidate(blocks: &[CodeBlock], policy: CandidatePolicy, catalog: &SchemaCatalog) -> Option<(CodeBlock, validate::Validation)> {
    let selected = extract::select_candidates(blocks, policy).ok()?;
    selected
        .into_iter()
        .map(|b| {
            let v = validate::validate_text(&b.content, catalog);
            (b, v)
        })
        .min_by_key(|(_, v)| v.count(Severity::Error))
}

fn cmd_generate(args: &GenerateArgs, config: &Config, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let profile_name = args.profile.clone().or_else(|| config.profile.clone()).unwrap_or_else(|| DEFAULT_PROFILE.into());
    let profile = config.find_profile(&profile_name).ok_or_else(|| Exit::usage(format!("unknown profile `{profile_name}`")))?;
    let spec = build_spec(args, &profile)?;
    let catalog = load_catalog(args.catalog.as_deref(), config)?;
    let text = prompt::render_prompt(&spec, &profile).map_err(|e| Exit::usage(e.to_string()))?;
    let reserve = args.reserve.unwrap_or(profile.default_reserve_output);
    let budget = prompt::check_budget(&text, &profile, reserve);
    let model = args.model.clone().unwrap_or_else(|| profile.name.clone());
    if !budget.fits {
        let report = match args.format {
            FormatArg::Json => json_line(&budget),
            FormatArg::Text => format!(
                "prompt needs {} tokens plus {} reserved, window is {} (over by {})\n",
                budget.prompt_tokens, budget.reserve, budget.window, budget.overflow
            ),
        };
        write_out(out, &report)?;
        return Ok(EXIT_BUDGET);
    }

    let mut request = GenerationRequest::new(text.clone(), model.clone());
    request.max_new_tokens = reserve.max(1);
    request.stop_markers = profile.stop_markers.clone();
    request.attempt = args.attempt;
    if let Some(t) = args.temperature {
        request.temperature = t;
    }
    let response = match &args.replay {
        Some(path) => {
            let store: TranscriptStore = backend::load_transcripts(path).map_err(|e| Exit::failure(e.to_string()))?;
            backend::replay_complete(&request, &store)
        }
        None => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
                .or_else(|| config.endpoint.clone())
                .unwrap_or_else(|| DEFAULT_ENDPOINT.into());
            HttpBackend::new(endpoint, backend::DEFAULT_TIMEOUT).complete(&request)
        }
    }
    .map_err(|e| Exit::failure(e.to_string()))?;

    let blocks = extract::extract_all(&response.text);
    let policy = args.policy.or(config.candidate_policy).unwrap_or(CandidatePolicy::Largest);
    let threshold = config.echo_threshold.unwrap_or(DEFAULT_ECHO_THRESHOLD);
    let echo = extract::detect_echo_with(&text, &blocks, threshold);
    for m in &echo.echoed_blocks {
        let _ = writeln!(err, "warning: block {} repeats prompt example `{}` ({:.0}% overlap)", m.block_index + 1, m.snippet_label, m.ratio * 100.0);
    }
    let Some((block, validation)) = pick_candidate(&blocks, policy, &catalog) else {
        return Err(Exit::failure("the response contains no YAML candidate"));
    };

    let mut playbook = block.content.clone();
    if !playbook.ends_with('\n') {
        playbook.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, &playbook)
            .map_err(|e| Exit::failure(format!("cannot write {}: {e}", path.display())))?,
        None => write_out(out, &playbook)?,
    }
    let report = match args.format {
        FormatArg::Json => json_line(&GenerateReport {
            profile: &profile.name,
            model: &model,
            budget,
            candidate: Some(CandidateInfo { start_line: block.start_line, end_line: block.end_line, origin: block.origin }),
            echo: echo.any_echo,
            findings: &validation.findings,
        }),
        FormatArg::Text => {
            let label = args.out.as_ref().map_or_else(|| "<candidate>".to_string(), |p| p.display().to_string());
            findings_text(&label, &validation.findings)
        }
    };
    let _ = err.write_all(report.as_bytes());
    Ok(status_for(&validation.findings))
}

/// Run the CLI with explicit arguments and output streams; returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
            } else {
                let _ = out.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = load_config(cli.config.as_deref()).and_then(|config| match &cli.command {
        Command::Generate(a) => cmd_generate(a, &config, out, err),
        Command::Lint(a) => cmd_lint(a, &config, out),
        Command::Eval(a) => cmd_eval(a, &config, out, err),
        Command::QuantBench(a) => cmd_quant_bench(a, out),
    });
    match result {
        Ok(code) => code,
        Err(exit) => {
            let _ = writeln!(err, "yamlsmith: {}", exit.message);
            exit.code
        }
    }
}
