pub mod cutloop;
pub mod envelopes;
pub mod instances;
pub mod linalg;
pub mod master;
pub mod projlp;
pub mod separation;
