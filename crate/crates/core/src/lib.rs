//! Interactive constraint acquisition: learning a constraint network from
//! yes/no answers on partial assignments.

pub mod error;
pub mod model;
pub mod oracle;
pub mod qgen;
pub mod bias;
pub mod solver;
pub mod acquisition;
pub mod benchmarks;
