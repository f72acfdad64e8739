pub mod analysis;
pub mod dist;
pub mod est;
pub mod gwi;
pub mod limit;
pub mod mc;
pub mod numeric;
