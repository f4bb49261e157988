use proptest::prelude::*;

use yamlsmith::extract::{self, CodeBlock};
use yamlsmith::prompt::{self, ModelProfile, PromptSpec, TemplateKind};
use yamlsmith::quant::{dequantize, quantize, Matrix};
use yamlsmith::score::{composite, CompositeWeights};
use yamlsmith::validate::{self, yaml, FindingCode, SchemaCatalog};

fn kinds() -> impl Strategy<Value = TemplateKind> {
    prop_oneof![Just(TemplateKind::Alpaca), Just(TemplateKind::Llama2Chat), Just(TemplateKind::Raw)]
}

fn profile(kind: TemplateKind) -> ModelProfile {
    ModelProfile::new("p", kind, 4096, 512).unwrap()
}

/// A task the shipped catalog accepts without findings.
fn clean_task() -> impl Strategy<Value = String> {
    let name = "[A-Za-z0-9 :#'\"{}\\[\\],&*!|>%@`-]{1,24}";
    prop_oneof![
        (name, "[a-z][a-z0-9_-]{0,10}", prop::sample::select(vec!["present", "absent", "latest"])).prop_map(
            |(n, pkg, state)| format!(
                "- name: {}\n  ansible.builtin.package:\n    name: {pkg}\n    state: {state}\n",
                serde_json::to_string(&n).unwrap()
            )
        ),
        (name, prop::sample::select(vec!["started", "stopped", "restarted", "reloaded"]), any::<bool>()).prop_map(
            |(n, state, enabled)| format!(
                "- name: {}\n  service:\n    name: sshd\n    state: {state}\n    enabled: {enabled}\n",
                serde_json::to_string(&n).unwrap()
            )
        ),
        ("/[a-z]{1,8}(/[a-z]{1,8}){0,3}", prop::sample::select(vec!["directory", "file", "touch", "absent"]))
            .prop_map(|(path, state)| format!("- file:\n    path: {path}\n    state: {state}\n    mode: \"0644\"\n")),
        ("[a-z ]{1,20}").prop_map(|cmd| format!("- ansible.builtin.command: echo {cmd}\n  changed_when: false\n")),
    ]
}

proptest! {
    #[test]
    fn render_is_injective_in_instruction(kind in kinds(), a in "[A-Za-z ]{1,40}", b in "[A-Za-z ]{1,40}") {
        prop_assume!(a.trim() != b.trim() && !a.trim().is_empty() && !b.trim().is_empty());
        let p = profile(kind);
        let ra = prompt::render_prompt(&PromptSpec::new(a.trim()), &p).unwrap();
        let rb = prompt::render_prompt(&PromptSpec::new(b.trim()), &p).unwrap();
        prop_assert_ne!(ra, rb);
    }

    #[test]
    fn render_is_deterministic(kind in kinds(), instr in "[a-z ]{1,30}", code in "[a-z: -]{0,30}") {
        prop_assume!(!instr.trim().is_empty());
        let spec = PromptSpec::new(instr.trim()).with_example("Example:", code);
        let p = profile(kind);
        prop_assert_eq!(prompt::render_prompt(&spec, &p).unwrap(), prompt::render_prompt(&spec, &p).unwrap());
    }

    #[test]
    fn estimate_is_monotone_under_concatenation(a in ".{0,200}", b in ".{0,200}") {
        prop_assert!(prompt::estimate_tokens(&(a.clone() + &b)) >= prompt::estimate_tokens(&a));
    }

    #[test]
    fn fits_is_antitone_in_reserve(text in ".{0,400}", r1 in 0usize..5000, r2 in 0usize..5000) {
        let p = profile(TemplateKind::Raw);
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        let (a, b) = (prompt::check_budget(&text, &p, lo), prompt::check_budget(&text, &p, hi));
        prop_assert!(!b.fits || a.fits);
        prop_assert!(b.overflow >= a.overflow);
    }

    #[test]
    fn quantization_codes_and_error_bound(values in prop::collection::vec(-1e6f32..1e6, 1..64), wide in any::<bool>()) {
        let bits = if wide { 8 } else { 4 };
        let w = Matrix::new(1, values.len(), values).unwrap();
        let q = quantize(&w, bits).unwrap();
        prop_assert!(q.codes.iter().all(|&c| u32::from(c) < (1 << bits)));
        let half = q.step() / 2.0;
        for (a, b) in w.values().iter().zip(dequantize(&q).values()) {
            let err = (f64::from(*a) - f64::from(*b)).abs();
            // Slack covers the final rounding to f32.
            prop_assert!(err <= half + f64::from(a.abs().max(1.0)) * 1e-6, "{} > {}", err, half);
        }
    }

    #[test]
    fn echo_is_symmetric_under_block_order(seed in 0u64..1000) {
        let store = yamlsmith::backend::load_transcripts(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/annexes.jsonl")).unwrap();
        let entry = &store.entries()[(seed % store.len() as u64) as usize];
        let blocks = extract::extract_all(&entry.response.text);
        let mut shuffled: Vec<CodeBlock> = blocks.clone();
        let n = shuffled.len().max(1);
        shuffled.rotate_left((seed as usize) % n);
        shuffled.reverse();
        let key = |bs: &[CodeBlock]| {
            let report = extract::detect_echo(&entry.prompt, bs);
            let mut set: Vec<(String, String)> = report
                .echoed_blocks
                .iter()
                .map(|m| (m.snippet_label.clone(), bs[m.block_index].content.clone()))
                .collect();
            set.sort();
            (report.any_echo, set)
        };
        prop_assert_eq!(key(&blocks), key(&shuffled));
    }

    #[test]
    fn empty_catalog_flags_every_task(tasks in prop::collection::vec(clean_task(), 1..6)) {
        let text = tasks.concat();
        let ast = validate::parse_playbook(&text).ast.unwrap();
        let findings = validate::validate_modules(&ast, &SchemaCatalog::empty());
        prop_assert_eq!(findings.len(), tasks.len());
        prop_assert!(findings.iter().all(|f| f.code == FindingCode::UnknownModule));
    }

    #[test]
    fn clean_task_lists_reserialize(tasks in prop::collection::vec(clean_task(), 1..6)) {
        let text = tasks.concat();
        let v = validate::validate_text(&text, &SchemaCatalog::shipped());
        prop_assert!(v.findings.is_empty(), "{:?}\n{}", v.findings, text);
        let root = v.ast.unwrap().root.unwrap();
        let emitted = yaml::to_yaml(&root);
        let again = validate::parse_playbook(&emitted);
        prop_assert!(again.findings.is_empty(), "{:?}\n{}", again.findings, emitted);
        prop_assert_eq!(again.ast.unwrap().root.unwrap().to_value(), root.to_value());
    }

    #[test]
    fn composite_is_antitone(
        parse in any::<bool>(), echo in any::<bool>(),
        errors in 0usize..20, warnings in 0usize..20, tasks in 0usize..20, extra in 1usize..5,
    ) {
        let w = CompositeWeights::default();
        let base = composite(&w, parse, errors, warnings, tasks, echo);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(composite(&w, parse, errors + extra, warnings, tasks, echo) <= base);
        prop_assert!(composite(&w, parse, errors, warnings + extra, tasks, echo) <= base);
        prop_assert!(composite(&w, parse, errors, warnings, tasks, true) <= base);
        prop_assert!(composite(&w, false, errors, warnings, tasks, echo) <= base);
    }

    #[test]
    fn parsing_arbitrary_text_never_panics(text in ".{0,300}") {
        let outcome = validate::parse_playbook(&text);
        prop_assert!(outcome.ast.is_some() || !outcome.findings.is_empty());
        for f in &outcome.findings {
            prop_assert!(f.span.end.offset <= text.len());
        }
        let _ = extract::extract_all(&text);
    }

    #[test]
    fn extraction_ranges_do_not_overlap(lines in prop::collection::vec(
        prop_oneof![
            Just("```yaml".to_string()), Just("```".to_string()), Just("---".to_string()),
            Just("- name: x".to_string()), Just("  key: v".to_string()), Just(String::new()),
            "[A-Za-z ]{1,20}".prop_map(|s| s), Just("# note".to_string()),
        ], 0..40)) {
        let text = lines.join("\n");
        let mut ranges: Vec<(usize, usize)> = extract::extract_all(&text).iter().map(|b| (b.start_line, b.end_line)).collect();
        ranges.sort();
        for pair in ranges.windows(2) {
            prop_assert!(pair[0].1 < pair[1].0, "{:?}", ranges);
        }
    }
}
