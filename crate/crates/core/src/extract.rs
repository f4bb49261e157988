//! Locating code in free-form model output.
//!
//! Models wrap YAML in triple-backtick fences most of the time, but not
//! always: some answers inline a playbook between prose paragraphs. Fenced
//! regions are found first; the remaining lines are scanned for runs that
//! look like YAML. Both kinds of block are de-indented so that a response
//! quoted with a uniform margin still parses.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of a prompt example's 8-grams a block must reproduce to count as echo.
pub const DEFAULT_ECHO_THRESHOLD: f64 = 0.8;
/// Character n-gram length used by echo detection.
pub const ECHO_NGRAM: usize = 8;
/// Minimum number of YAML-looking lines for an unfenced block.
pub const MIN_UNFENCED_LINES: usize = 3;
const MAX_FENCE_INDENT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no candidate code block")]
    NoCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrigin {
    Fenced,
    Unfenced,
}

/// A candidate code region. Line numbers are 1-based and inclusive, and
/// refer to the text the block was extracted from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub content: String,
    pub start_line: usize,
    pub end_line: usize,
    pub origin: BlockOrigin,
    pub language_tag: String,
    /// Set when the block was recovered from malformed input, e.g. a fence
    /// that is never closed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CodeBlock {
    pub fn line_count(&self) -> usize {
        self.end_line + 1 - self.start_line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    First,
    Largest,
    AllParseable,
}

impl std::str::FromStr for CandidatePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(CandidatePolicy::First),
            "largest" => Ok(CandidatePolicy::Largest),
            "all_parseable" => Ok(CandidatePolicy::AllParseable),
            other => Err(format!("unknown candidate policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoMatch {
    pub block_index: usize,
    pub snippet_label: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EchoReport {
    pub echoed_blocks: Vec<EchoMatch>,
    pub any_echo: bool,
}

fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect()
}

fn leading_spaces(line: &str) -> usize {
    line.bytes().take_while(|&b| b == b' ').count()
}

/// Opening fence: returns (indent, language tag).
fn opening_fence(line: &str) -> Option<(usize, &str)> {
    let indent = leading_spaces(line);
    if indent > MAX_FENCE_INDENT {
        return None;
    }
    let rest = line[indent..].strip_prefix("```")?;
    if rest.starts_with('`') {
        return None;
    }
    let tag = rest.trim();
    if tag.contains('`') || tag.contains(' ') {
        return None;
    }
    Some((indent, tag))
}

fn closing_fence(line: &str) -> bool {
    leading_spaces(line) <= MAX_FENCE_INDENT && line.trim() == "```"
}

fn strip_indent(line: &str, n: usize) -> &str {
    let k = leading_spaces(line).min(n);
    &line[k..]
}

struct FenceScan {
    blocks: Vec<CodeBlock>,
    /// Inclusive 1-based line ranges covered by fenced regions, fence lines included.
    regions: Vec<(usize, usize)>,
}

fn scan_fences(lines: &[&str]) -> FenceScan {
    let mut blocks = Vec::new();
    let mut regions = Vec::new();
    let mut open: Option<(usize, usize, String)> = None; // (line index, indent, tag)
    for (i, line) in lines.iter().enumerate() {
        match &open {
            None => {
                if let Some((indent, tag)) = opening_fence(line) {
                    open = Some((i, indent, tag.to_string()));
                }
            }
            Some((start, indent, tag)) => {
                if closing_fence(line) {
                    let body: Vec<&str> = lines[start + 1..i].iter().map(|l| strip_indent(l, *indent)).collect();
                    let (s, e) = if i > start + 1 { (start + 2, i) } else { (i + 1, i + 1) };
                    blocks.push(CodeBlock {
                        content: body.join("\n"),
                        start_line: s,
                        end_line: e,
                        origin: BlockOrigin::Fenced,
                        language_tag: tag.clone(),
                        note: None,
                    });
                    regions.push((start + 1, i + 1));
                    open = None;
                }
            }
        }
    }
    if let Some((start, indent, tag)) = open {
        let body: Vec<&str> = lines[start + 1..].iter().map(|l| strip_indent(l, indent)).collect();
        let (s, e) = if lines.len() > start + 1 { (start + 2, lines.len()) } else { (start + 1, start + 1) };
        blocks.push(CodeBlock {
            content: body.join("\n"),
            start_line: s,
            end_line: e,
            origin: BlockOrigin::Fenced,
            language_tag: tag,
            note: Some(format!("fence opened on line {} is never closed", start + 1)),
        });
        regions.push((start + 1, lines.len()));
    }
    FenceScan { blocks, regions }
}

/// Every fenced region in `text`, in order of appearance.
pub fn extract_fenced(text: &str) -> Vec<CodeBlock> {
    scan_fences(&split_lines(text)).blocks
}

fn is_key_token(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '/'))
}

/// `token:` followed by end of line or whitespace.
fn is_key_line(s: &str) -> bool {
    match s.find(':') {
        Some(at) => {
            let after = &s[at + 1..];
            is_key_token(&s[..at]) && (after.is_empty() || after.starts_with([' ', '\t']))
        }
        None => false,
    }
}

/// Whether a single line looks like YAML rather than prose.
pub fn is_yaml_like_line(line: &str) -> bool {
    let trimmed = line.trim_start_matches([' ', '\t']);
    let indent = line.len() - trimmed.len();
    let t = trimmed.trim_end();
    if t.is_empty() {
        return false;
    }
    if t == "---" || t.starts_with('#') {
        return true;
    }
    if let Some(item) = t.strip_prefix("- ") {
        if is_key_line(item.trim_start()) || indent > 0 {
            return true;
        }
    }
    if t == "-" && indent > 0 {
        return true;
    }
    is_key_line(t)
}

/// Runs of YAML-looking lines outside fenced regions.
pub fn extract_unfenced(text: &str) -> Vec<CodeBlock> {
    let lines = split_lines(text);
    let scan = scan_fences(&lines);
    let mut fenced = vec![false; lines.len()];
    for &(s, e) in &scan.regions {
        for flag in &mut fenced[s - 1..e] {
            *flag = true;
        }
    }
    let yamlish = |i: usize| !fenced[i] && is_yaml_like_line(lines[i]);
    let blank = |i: usize| !fenced[i] && lines[i].trim().is_empty();

    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !yamlish(i) {
            i += 1;
            continue;
        }
        let start = i;
        let mut last = i;
        let mut count = 1;
        let mut j = i + 1;
        while j < lines.len() {
            if yamlish(j) {
                last = j;
                count += 1;
                j += 1;
            } else if blank(j) {
                let mut k = j;
                while k < lines.len() && blank(k) {
                    k += 1;
                }
                if k < lines.len() && yamlish(k) {
                    j = k;
                } else {
                    break;
                }
            } else {
                break;
            }
        }
        if count >= MIN_UNFENCED_LINES {
            let body = &lines[start..=last];
            let margin = body
                .iter()
                .filter(|l| !l.trim().is_empty())
                .map(|l| leading_spaces(l))
                .min()
                .unwrap_or(0);
            let content: Vec<&str> =
                body.iter().map(|l| if l.trim().is_empty() { "" } else { strip_indent(l, margin) }).collect();
            blocks.push(CodeBlock {
                content: content.join("\n"),
                start_line: start + 1,
                end_line: last + 1,
                origin: BlockOrigin::Unfenced,
                language_tag: String::new(),
                note: None,
            });
        }
        i = last + 1;
    }
    blocks
}

/// Fenced and unfenced blocks together, ordered by position.
pub fn extract_all(text: &str) -> Vec<CodeBlock> {
    let mut blocks = extract_fenced(text);
    blocks.extend(extract_unfenced(text));
    blocks.sort_by_key(|b| (b.start_line, b.end_line));
    blocks
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Distinct character n-grams of the whitespace-normalized text. Texts shorter
/// than `n` contribute themselves as a single gram.
pub fn char_ngrams(text: &str, n: usize) -> HashSet<String> {
    let chars: Vec<char> = normalize_ws(text).chars().collect();
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < n {
        return HashSet::from([chars.iter().collect()]);
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// |shared n-grams| / |n-grams of the snippet|.
pub fn overlap_ratio(snippet: &str, block: &str, n: usize) -> f64 {
    let snip = char_ngrams(snippet, n);
    if snip.is_empty() {
        return 0.0;
    }
    let other = char_ngrams(block, n);
    snip.intersection(&other).count() as f64 / snip.len() as f64
}

/// Fenced examples inside a prompt, labelled by the nearest non-blank line
/// above each fence.
pub fn prompt_examples(prompt: &str) -> Vec<(String, String)> {
    let lines = split_lines(prompt);
    extract_fenced(prompt)
        .into_iter()
        .enumerate()
        .map(|(i, block)| {
            // start_line is the first line after the fence, so the fence sits
            // at 0-based index start_line - 2.
            let fence_idx = block.start_line.saturating_sub(2);
            let label = lines[..fence_idx.min(lines.len())]
                .iter()
                .rev()
                .map(|l| l.trim())
                .find(|l| !l.is_empty())
                .map(str::to_string)
                .unwrap_or_else(|| format!("example {}", i + 1));
            (label, block.content)
        })
        .collect()
}

pub fn detect_echo(prompt: &str, blocks: &[CodeBlock]) -> EchoReport {
    detect_echo_with(prompt, blocks, DEFAULT_ECHO_THRESHOLD)
}

/// Flag blocks that reproduce a fenced example from the prompt. Each block is
/// reported at most once, against the example it overlaps most.
pub fn detect_echo_with(prompt: &str, blocks: &[CodeBlock], threshold: f64) -> EchoReport {
    let examples: Vec<(String, HashSet<String>)> = prompt_examples(prompt)
        .into_iter()
        .map(|(label, code)| (label, char_ngrams(&code, ECHO_NGRAM)))
        .filter(|(_, grams)| !grams.is_empty())
        .collect();
    let mut echoed = Vec::new();
    if !examples.is_empty() {
        for (idx, block) in blocks.iter().enumerate() {
            let grams = char_ngrams(&block.content, ECHO_NGRAM);
            let best = examples
                .iter()
                .map(|(label, snip)| (label, snip.intersection(&grams).count() as f64 / snip.len() as f64))
                .fold(None::<(&String, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((label, ratio)) = best {
                if ratio >= threshold {
                    echoed.push(EchoMatch { block_index: idx, snippet_label: label.clone(), ratio });
                }
            }
        }
    }
    EchoReport { any_echo: !echoed.is_empty(), echoed_blocks: echoed }
}

/// Narrow a block list according to `policy`.
pub fn select_candidates(blocks: &[CodeBlock], policy: CandidatePolicy) -> Result<Vec<CodeBlock>, ExtractError> {
    match policy {
        CandidatePolicy::First => blocks.first().cloned().map(|b| vec![b]).ok_or(ExtractError::NoCandidate),
        CandidatePolicy::Largest => {
            let mut best: Option<&CodeBlock> = None;
            for b in blocks {
                if best.is_none_or(|cur| b.line_count() > cur.line_count()) {
                    best = Some(b);
                }
            }
            best.cloned().map(|b| vec![b]).ok_or(ExtractError::NoCandidate)
        }
        CandidatePolicy::AllParseable => Ok(blocks
            .iter()
            .filter(|b| crate::validate::yaml::is_well_formed(&b.content))
            .cloned()
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_fence() {
        let text = "intro\n```yaml\na: 1\nb: 2\n```\noutro\n";
        let blocks = extract_fenced(text);
        assert_eq!(blocks.len(), 1);
        let b = &blocks[0];
        assert_eq!(b.content, "a: 1\nb: 2");
        assert_eq!((b.start_line, b.end_line), (3, 4));
        assert_eq!(b.language_tag, "yaml");
        assert_eq!(b.note, None);
    }

    #[test]
    fn indented_fence_is_dedented() {
        let text = "    ```yaml\n    - name: x\n      ping:\n    ```";
        let blocks = extract_fenced(text);
        assert_eq!(blocks[0].content, "- name: x\n  ping:");
    }

    #[test]
    fn deep_indent_is_not_a_fence() {
        assert!(extract_fenced("      ```\n a\n      ```").is_empty());
        assert!(extract_fenced("````\na\n````").is_empty());
    }

    #[test]
    fn unterminated_fence_runs_to_end() {
        let blocks = extract_fenced("text\n```\na: 1\nb: 2");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].content, "a: 1\nb: 2");
        assert_eq!((blocks[0].start_line, blocks[0].end_line), (3, 4));
        assert!(blocks[0].note.is_some());
    }

    #[test]
    fn empty_fenced_block() {
        let blocks = extract_fenced("```\n```");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].content, "");
        assert!(blocks[0].start_line <= blocks[0].end_line);
    }

    #[test]
    fn prose_yields_nothing() {
        let prose = "This is a paragraph of prose.\nIt explains things at length.\nNothing here is code.";
        assert!(extract_fenced(prose).is_empty());
        assert!(extract_unfenced(prose).is_empty());
    }

    #[test]
    fn numbered_lists_are_prose() {
        let text = "1. Remount: does a thing.\n2. Reload sysctl: reloads.\n3. Restart auditd: restarts.";
        assert!(extract_unfenced(text).is_empty());
    }

    #[test]
    fn unfenced_run_crosses_blank_lines() {
        let text = "Here it is:\n---\n- name: a\n  ping:\n\n- name: b\n  ping:\n\nThat was it.";
        let blocks = extract_unfenced(text);
        assert_eq!(blocks.len(), 1);
        assert_eq!((blocks[0].start_line, blocks[0].end_line), (2, 7));
        assert!(blocks[0].content.starts_with("---\n"));
    }

    #[test]
    fn unfenced_skips_fenced_regions() {
        let text = "```\na: 1\nb: 2\nc: 3\n```\n";
        assert!(extract_unfenced(text).is_empty());
    }

    #[test]
    fn line_heuristic() {
        assert!(is_yaml_like_line("---"));
        assert!(is_yaml_like_line("  state: absent"));
        assert!(is_yaml_like_line("- name: x"));
        assert!(is_yaml_like_line("    - anything"));
        assert!(is_yaml_like_line("# comment"));
        assert!(is_yaml_like_line("role_anssi_linux:"));
        assert!(!is_yaml_like_line("- plain bullet"));
        assert!(!is_yaml_like_line("Here is the file:"));
        assert!(!is_yaml_like_line("url:http"));
        assert!(!is_yaml_like_line("* ansible.builtin.mount:"));
    }

    #[test]
    fn echo_needs_examples() {
        let blocks = extract_fenced("```\n- name: x\n  ping:\n```");
        let report = detect_echo("Write a playbook.", &blocks);
        assert!(!report.any_echo);
        assert!(report.echoed_blocks.is_empty());
    }

    #[test]
    fn echo_fires_on_verbatim_copy() {
        let prompt = "Example:\n```yaml\n- name: remove packages\n  ansible.builtin.package:\n    state: absent\n```";
        let blocks = extract_fenced("```yaml\n- name: remove packages\n  ansible.builtin.package:\n    state: absent\n```");
        let report = detect_echo(prompt, &blocks);
        assert!(report.any_echo);
        assert_eq!(report.echoed_blocks[0].snippet_label, "Example:");
        assert_eq!(report.echoed_blocks[0].ratio, 1.0);
    }

    #[test]
    fn overlap_of_short_texts() {
        assert_eq!(overlap_ratio("", "abc", 8), 0.0);
        assert_eq!(overlap_ratio("abc", "xxabcxx", 8), 0.0);
        assert_eq!(overlap_ratio("abc", "abc", 8), 1.0);
        assert_eq!(overlap_ratio("a  b\n c", "a b c", 3), 1.0);
    }

    fn block(lines: usize, at: usize) -> CodeBlock {
        CodeBlock {
            content: vec!["a: 1"; lines].join("\n"),
            start_line: at,
            end_line: at + lines - 1,
            origin: BlockOrigin::Fenced,
            language_tag: String::new(),
            note: None,
        }
    }

    #[test]
    fn selection_policies() {
        let blocks = vec![block(2, 1), block(5, 10), block(5, 20)];
        assert_eq!(select_candidates(&blocks, CandidatePolicy::First).unwrap()[0].start_line, 1);
        assert_eq!(select_candidates(&blocks, CandidatePolicy::Largest).unwrap()[0].start_line, 10);
        assert_eq!(select_candidates(&[], CandidatePolicy::First), Err(ExtractError::NoCandidate));
        assert_eq!(select_candidates(&[], CandidatePolicy::Largest), Err(ExtractError::NoCandidate));
        assert!(select_candidates(&[], CandidatePolicy::AllParseable).unwrap().is_empty());
        let mut bad = block(1, 30);
        bad.content = "a: [1, 2".into();
        let mixed = vec![block(1, 1), bad];
        let kept = select_candidates(&mixed, CandidatePolicy::AllParseable).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].start_line, 1);
    }

    #[test]
    fn single_block_any_policy() {
        let one = vec![block(3, 4)];
        for policy in [CandidatePolicy::First, CandidatePolicy::Largest, CandidatePolicy::AllParseable] {
            assert_eq!(select_candidates(&one, policy).unwrap(), one);
        }
    }
}
