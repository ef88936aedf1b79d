pub mod corpus;
pub mod crdop;
pub mod expr;
pub mod fracnum;
pub mod funcalg;
pub mod invariance;
pub mod report;
pub mod solutions;
pub mod specfun;
pub mod subspace;
