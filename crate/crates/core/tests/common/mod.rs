#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use yamlsmith::backend::{load_transcripts, TranscriptEntry, TranscriptStore};
use yamlsmith::extract::{self, CodeBlock};

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/annexes.jsonl")
}

pub fn store() -> TranscriptStore {
    load_transcripts(fixture_path()).expect("shipped fixtures load")
}

pub fn entry(id: &str) -> TranscriptEntry {
    store().get(id).unwrap_or_else(|| panic!("no fixture {id}")).clone()
}

pub fn response(id: &str) -> String {
    entry(id).response.text
}

pub fn fenced(id: &str) -> Vec<CodeBlock> {
    extract::extract_fenced(&response(id))
}

pub fn unfenced(id: &str) -> Vec<CodeBlock> {
    extract::extract_unfenced(&response(id))
}

/// The first fenced block of `id` whose content contains `needle`.
pub fn block_containing(id: &str, needle: &str) -> CodeBlock {
    fenced(id)
        .into_iter()
        .find(|b| b.content.contains(needle))
        .unwrap_or_else(|| panic!("no block in {id} contains {needle:?}"))
}
