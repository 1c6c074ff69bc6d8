//! Network building blocks: permutation-equivariant MLPs, the dual-MLP
//! aggregation block (order 2 and order n) and the broadcast block.
//!
//! Every block consumes a batch of `B` sets stacked along the row axis, so a
//! batch is a `(B·N)×p` matrix plus the set size `N`. Row-wise layers treat
//! rows independently; set-wise operations (`softmax_set`, aggregation) act
//! within each block of `N` consecutive rows.

pub mod activation;
pub mod aggregation;
pub mod batchnorm;
pub mod broadcast;
pub mod mlp;
pub mod params;
pub mod pass;

pub use activation::{relu, set_softmax, squashing, Activation};
pub use aggregation::{AggregationBlock, OrderNAggregation};
pub use batchnorm::{batchnorm, BatchNormLayer, BatchNormState, BN_EPS, BN_MOMENTUM};
pub use broadcast::BroadcastBlock;
pub use mlp::{Linear, Mlp, MlpSpec};
pub use params::{BufferId, ParamId, ParamStore};
pub use pass::{Mode, Pass};
