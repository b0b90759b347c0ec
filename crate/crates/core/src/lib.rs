//! Copula-aided fast fluid-antenna multiple access.

pub mod channel;
pub mod container;
pub mod copula;
pub mod dsf;
pub mod encoding;
pub mod eval;
pub mod linalg;
pub mod marginal;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod tensor;
pub mod train;
