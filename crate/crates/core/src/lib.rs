pub mod graph;
pub mod layout;
pub mod llm;
pub mod model;
pub mod canonical;
pub mod analysis;
pub mod pipeline;
pub mod eval;
