//! An embeddable, concurrent locality-sensitive-hashing store for
//! online nearest-neighbor query and update.
//!
//! Records live in a MainTable (vectors keyed by ID) plus L LSHTables
//! (IDs keyed by compound sign-projection hashes). Each table is split
//! into partition arenas holding adaptive hash trees; over-threshold
//! arenas seal into immutable on-disk snapshots summarized by bloom
//! filters. Requests are dispatched actor-style: one exclusive owner
//! per partition arena, no cross-owner synchronization on the data
//! path.

pub mod arena;
pub mod bloom;
pub mod dispatch;
pub mod error;
pub mod hashing;
pub mod route;
pub mod snapshot;
pub mod store;
pub mod tree;

pub use error::{Error, Result};
pub use hashing::{CompoundHashKey, SparseVector};
pub use route::{TableConfig, TreeLocator};
pub use store::{Neighbor, QueryMode, QueryResult, Store, StoreConfig};

