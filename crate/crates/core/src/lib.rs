//! Generate Ansible playbooks with a local language model and check what it
//! wrote without running it.
//!
//! The modules follow the pipeline order:
//!
//! - [`prompt`] renders instruction templates and checks the token budget;
//! - [`backend`] talks to a completion server or replays recorded transcripts;
//! - [`extract`] finds YAML blocks in free-form output and flags prompt echo;
//! - [`validate`] parses with source spans and checks tasks against a module catalog;
//! - [`score`] turns findings into a composite score and evaluates a corpus;
//! - [`cli`] wires it all into the `yamlsmith` binary.
//!
//! [`quant`] stands apart: reference attention, neural-memory and int4/int8
//! quantization code with an error report.
//!
//! ```
//! use yamlsmith::validate::{validate_text, FindingCode, SchemaCatalog};
//!
//! let v = validate_text("- ansible.builtin.service:\n    name: sshd\n    state: restart\n", &SchemaCatalog::shipped());
//! assert!(v.has(FindingCode::InvalidChoice));
//! ```

pub mod prompt;
pub mod backend;
pub mod extract;
pub mod validate;
pub mod score;
pub mod quant;
pub mod cli;

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/extraction.md")]
    mod extraction {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
