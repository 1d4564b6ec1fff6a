//! Anytime worst-case optimal join engine.
//!
//! Conjunctive queries run as a leapfrog triejoin that is sliced into
//! episodes of bounded cursor work. Each episode uses one attribute order,
//! chosen by a UCT search over order prefixes, and a task manager splits the
//! attribute-value space into disjoint hypercubes so no value combination is
//! joined twice, regardless of order switches or thread count.

pub mod catalog;
pub mod cli;
pub mod cube;
pub mod engine;
pub mod learner;
pub mod lftj;
pub mod oracle;
pub mod query;
pub mod trieiter;

pub use catalog::{Catalog, ColumnTable, CompareOp, UnaryPredicate, Value};
pub use engine::{execute, EngineConfig, EngineError, QueryResult};
pub use query::{parse_query, Aggregate, AttrId, AttributeOrder, Query};
