//! Zero-shot next-POI forecasting with a two-stage LLM planner/selector and
//! a reflective retrieval memory.
//!
//! The crate is split along the data flow:
//!
//! - [`corpus`]: check-in ingestion, sparse filtering, trajectory
//!   segmentation, chronological splits and user cohorts.
//! - [`features`]: behavioral summaries rendered into prompts, plus the
//!   distance-ordered candidate set.
//! - [`memory`]: embeddings, cosine top-n retrieval and the reflection stores.
//! - [`llm`]: chat-completion backends (live and scripted) and output parsing.
//! - [`pipeline`]: prompt assembly and the activity -> location orchestration.
//! - [`eval`]: Acc@k / MRR, aggregation and report rendering.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod llm;
pub mod memory;
pub mod pipeline;

/// Stable short digest used to tag configs and corpora in run artifacts.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let hash = Sha256::digest(bytes);
    hex::encode(&hash[..8])
}
