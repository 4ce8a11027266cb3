pub mod bounds;
pub mod gen;
pub mod gradcheck;
pub mod mrd;
pub mod probe;
pub mod train;
