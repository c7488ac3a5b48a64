//! Cascaded speech translation toolkit: long-form ASR, LLM refinement of
//! N-best lists, rule-based sentence segmentation, MT, document-level
//! post-editing, fine-tuning data synthesis and evaluation.

pub mod backends;
pub mod config;
pub mod corpus;
pub mod docape;
pub mod error;
pub mod fixtures;
pub mod guard;
pub mod longform;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod refine;
pub mod sentseg;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use model::{Hypothesis, NBestList, SentenceRecord, Talk};
