//! Composite distances, K-medoids clustering and the strategy memory.

mod build;
mod distance;
mod kmedoids;
mod store;

pub use build::{
    assemble, best_candidate, build_strategy_memory, entry_from, exploration_schedules, explore_instance,
    initial_plan, BuildReport, Candidate, SkippedInstance,
};
pub use distance::{
    composite_distance, distance_terms, dtw_distance, similarity, DistanceConfig, DistanceTerms, ZScored,
};
pub use kmedoids::{k_medoids, Clustering, DistanceMatrix, KMedoidsConfig, MedoidInit};
pub use store::{
    MemoryConfig, MemoryEntry, RetrievalHit, RetrievalResult, StoredTrajectory, StrategyMemory, UpdateOutcome,
    UpdatePolicy, ENTRIES_FILE, MANIFEST_FILE, MEMORY_SCHEMA_VERSION,
};
