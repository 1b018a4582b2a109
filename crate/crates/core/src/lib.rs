pub mod bnb;
pub mod cart;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod formulation;
pub mod lp;
pub mod textfmt;
pub mod topology;
