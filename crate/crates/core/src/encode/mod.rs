//! Local-descriptor encoders, sequence pooling, power normalization and
//! RBF positional embeddings.

mod pn;
mod pooling;
mod rbf;
mod words;

pub use pn::{PnKind, PnOperator, PN_EPS};
pub use pooling::{l2_normalize, pool_avg, IntegralPool, POOL_EPS};
pub use rbf::PivotSet;
pub use words::{bow_encode, fv_encode, fv_encode_split};
