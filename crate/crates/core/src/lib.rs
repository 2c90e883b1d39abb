//! Exact reverse nearest neighbor queries over static point sets.
//!
//! Each point owns an empty ball reaching its nearest neighbor. The balls are
//! stored in a compressed quadtree whose cells keep short candidate lists, so a
//! query locates its leaf (through a finger tree) and scans one list.
//!
//! ```
//! use rnnq::{PointSet, RnnIndex};
//!
//! let pts = PointSet::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
//! let index = RnnIndex::build(&pts).unwrap();
//! assert_eq!(index.query(&[2.0]), vec![1, 2]);
//! ```

pub mod allnn;
pub mod cli;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod oracle;
pub mod quadtree;
pub mod rnn_index;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geometry::{PointSet, QtBox, Transform};
pub use rnn_index::{IndexStats, QueryTrace, RnnIndex};
