//! Claim verification over knowledge graphs built from a claim and its
//! reports.
//!
//! The pipeline extracts a graph ([`extraction`]), turns claim triples into
//! contrastive why-questions ranked by maximal marginal relevance
//! ([`contrastive`]), answers and summarises them ([`reasoning`]) and
//! classifies the claim from the summary ([`verification`]). Every model call
//! goes through [`gateway::Gateway`], which caches, retries and can record or
//! replay traffic.

pub mod contrastive;
pub mod corpus;
pub mod extraction;
pub mod gateway;
pub mod kg;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod reasoning;
pub mod text;
pub mod verification;

pub use contrastive::{
    formulate, generate_candidates, mmr_rank, select_initial_query, ContrastiveQuestion, RankingTrace, Side,
};
pub use corpus::{dataset_stats, load_dataset, ClaimCase, DatasetStats, Report, Split};
pub use extraction::{extract_case, extract_graph, ExtractionConfig, ExtractionError};
pub use gateway::{Gateway, GatewayError, QuestionEmbedding, StageModel};
pub use kg::{merge, Entity, EntityClass, EntityId, GraphBuilder, KnowledgeGraph, Provenance, Relation, Triple};
pub use metrics::{distance_weight, prf, weighted_alignscore, weighted_rquge, DistanceWeight, ExternalScore};
pub use pipeline::{Mode, Pipeline, PipelineRecord, RunConfig, Stage};
pub use prompts::PromptSet;
pub use reasoning::{ContrastiveSummary, QAPair};
pub use verification::{map_binary, LabelScheme, Verdict};
