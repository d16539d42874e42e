pub mod geometry;
pub mod labeling;
pub mod losses;
pub mod model;
pub mod training;
pub mod gradcheck;
pub mod cli;
