pub mod numerics;
pub mod model;
pub mod likelihood;
pub mod estimation;
pub mod datagen;
pub mod testing;
pub mod simharness;
pub mod casestudy;
pub mod cli;
