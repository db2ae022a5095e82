pub mod al;
pub mod gen;
pub mod novelty;
pub mod pseudo;
