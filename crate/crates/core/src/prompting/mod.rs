//! Prompt rendering, embedding providers and the on-disk embedding cache.

pub mod cache;
mod embed;
mod template;

pub use cache::EmbeddingCache;
pub use embed::{
    embed, embed_all, ContextEmbedding, EmbeddingKey, EmbeddingProvider, RemoteEmbedder, StubEmbedder,
};
pub use template::{build_prompt, PromptInputs, PromptTemplate, DEFAULT_TEMPLATE, MISSING_TOKEN, NO_POIS};
