//! Summarisation-fidelity toolkit for multi-speaker debates: corpus ingestion,
//! an LLM gateway with caching, summary generation strategies, token-level
//! fidelity scoring and beta-regression bias analysis.

pub mod analysis;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompts;

pub use analysis::{
    AnalysisError, Coefficient, MarginalMean, ModelKind, RegressionFit, ScoreRecord,
};
pub use corpus::{Debate, Intervention, PartyLayout, Speaker};
pub use gateway::{BackendConfig, BackendKind, Gateway, GatewayError};
pub use metrics::{EmbeddingConfig, EmbeddingProvider, FidelityScore, RatioReport, StubEmbeddings};
pub use pipeline::{DebateSummary, Method, Pipeline, PipelineError, StructuredSummary};
pub use prompts::PromptSet;
