pub mod apportion;
pub mod commit;
pub mod corpus;
pub mod model;
pub mod pretrain;
pub mod sequence;
pub mod synth;
pub mod tasks;
pub mod train;
