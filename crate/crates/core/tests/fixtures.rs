mod common;

use std::collections::BTreeMap;

use common::*;
use serde::Deserialize;
use yamlsmith::backend::{replay_complete, GenerationRequest};
use yamlsmith::extract::{self, BlockOrigin, CandidatePolicy};
use yamlsmith::prompt::{self, ModelProfile, TemplateKind};
use yamlsmith::validate::{self, DocumentKind, FindingCode, SchemaCatalog};

#[derive(Deserialize)]
struct Golden {
    fenced: usize,
    unfenced: usize,
    prompt_tokens: usize,
}

fn goldens() -> BTreeMap<String, Golden> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn store_has_one_entry_per_tir() {
    let store = store();
    assert_eq!(store.len(), 8);
    let per_annexe = |a| store.entries().iter().filter(|e| e.annexe == a).count();
    assert_eq!([1, 2, 3, 4, 5].map(per_annexe), [1, 1, 2, 3, 1]);
}

#[test]
fn extraction_matches_goldens() {
    let goldens = goldens();
    assert_eq!(goldens.len(), 8);
    for e in store().entries() {
        let g = &goldens[&e.fixture_id()];
        assert_eq!(extract::extract_fenced(&e.response.text).len(), g.fenced, "{}", e.fixture_id());
        assert_eq!(extract::extract_unfenced(&e.response.text).len(), g.unfenced, "{}", e.fixture_id());
        assert_eq!(prompt::estimate_tokens(&e.prompt), g.prompt_tokens, "{}", e.fixture_id());
    }
}

#[test]
fn annexe4_fences_are_yaml() {
    let blocks = fenced("annexe4.tir1");
    assert_eq!(blocks.len(), 9);
    assert!(blocks.iter().all(|b| b.language_tag == "yaml" && b.origin == BlockOrigin::Fenced));
    let largest = extract::select_candidates(&blocks, CandidatePolicy::Largest).unwrap();
    assert_eq!(largest, vec![blocks[0].clone()]);
    assert!(largest[0].content.starts_with("---\n- name: Configure unsecure packages"));
}

#[test]
fn unfenced_blocks_start_where_expected() {
    let tir3 = unfenced("annexe4.tir3");
    assert!(tir3[0].content.starts_with("---\n"));
    assert!(tir3[0].content.contains("Remount all file systems read-only"));
    let a32 = unfenced("annexe3.tir2");
    assert_eq!(a32.len(), 1);
    assert!(a32[0].content.starts_with("role_anssi_linux:"));
}

#[test]
fn surrounding_text_only_shifts_lines() {
    let text = response("annexe5.tir1");
    let wrapped = format!("Preface line.\n\nAnother.\n{text}\n\nThe end.\n");
    let (a, b) = (extract::extract_all(&text), extract::extract_all(&wrapped));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.content, y.content);
        assert_eq!(x.start_line + 3, y.start_line);
    }
}

#[test]
fn prompts_round_trip_through_their_template() {
    for e in store().entries() {
        let kind = prompt::detect_template(&e.prompt);
        let spec = prompt::parse_prompt(&e.prompt, kind).unwrap_or_else(|| panic!("{} does not parse", e.fixture_id()));
        let profile = ModelProfile::builtin().into_iter().find(|p| p.template_kind == kind).unwrap();
        assert_eq!(prompt::render_prompt(&spec, &profile).unwrap(), e.prompt, "{}", e.fixture_id());
    }
}

#[test]
fn template_shapes() {
    let a3 = entry("annexe3.tir1").prompt;
    assert!(a3.starts_with("Below is an instruction that describes a task, paired with an input"));
    assert_eq!(prompt::detect_template(&a3), TemplateKind::Alpaca);
    let a4 = entry("annexe4.tir1").prompt;
    assert!(a4.starts_with("[INST] <<SYS>>") && a4.ends_with("[/INST]"));
    assert_eq!(prompt::detect_template(&a4), TemplateKind::Llama2Chat);
}

#[test]
fn budget_on_a_small_window() {
    let a1 = entry("annexe1.tir1").prompt;
    let small = ModelProfile::new("small", TemplateKind::Alpaca, 512, 256).unwrap();
    let report = prompt::check_budget(&a1, &small, 256);
    assert_eq!(report.prompt_tokens, prompt::estimate_tokens(&a1));
    assert_eq!(report.fits, report.prompt_tokens + 256 <= 512);
}

#[test]
fn replay_is_verbatim_and_repeatable() {
    let store = store();
    let e = entry("annexe3.tir1");
    let request = GenerationRequest::new(e.prompt.clone(), "alpaca-13b");
    let first = replay_complete(&request, &store).unwrap();
    assert_eq!(first.text, e.response.text);
    assert_eq!(replay_complete(&request, &store).unwrap(), first);
    assert!(!first.text.contains("\\'"));
}

#[test]
fn restart_auditd_block_is_one_service_task() {
    let block = block_containing("annexe5.tir1", "Restart auditd");
    let outcome = validate::parse_playbook(&block.content);
    let ast = outcome.ast.unwrap();
    assert_eq!(ast.kind, DocumentKind::TaskList);
    assert_eq!(ast.tasks.len(), 1);
    assert_eq!(ast.tasks[0].module_ref.as_deref(), Some("ansible.builtin.service"));
}

#[test]
fn repeated_tasks_key_is_flagged() {
    let block = &unfenced("annexe4.tir3")[0];
    let outcome = validate::parse_playbook(&block.content);
    let dups: Vec<_> = outcome.findings.iter().filter(|f| f.code == FindingCode::DuplicateKey).collect();
    assert_eq!(dups.len(), 3);
    assert!(dups.iter().all(|f| f.span.slice(&block.content) == "tasks"));
}

#[test]
fn package_task_with_name_and_state_is_clean() {
    let block = block_containing("annexe4.tir1", "unistall unsecure packages");
    let v = validate::validate_text(&block.content, &SchemaCatalog::shipped());
    assert!(v.findings.is_empty(), "{:?}", v.findings);
}

#[test]
fn finding_spans_slice_the_candidate() {
    let catalog = SchemaCatalog::shipped();
    for e in store().entries() {
        for block in extract::extract_all(&e.response.text) {
            for f in validate::validate_text(&block.content, &catalog).findings {
                assert!(f.span.end.offset <= block.content.len());
                assert!(block.content.is_char_boundary(f.span.start.offset));
                let _ = f.span.slice(&block.content);
            }
        }
    }
}
