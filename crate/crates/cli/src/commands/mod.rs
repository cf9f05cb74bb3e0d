pub mod analyze;
pub mod baseline;
pub mod dataset;
pub mod fixture;
pub mod generate;
pub mod rate;
pub mod score;
pub mod serve;
pub mod tile;
