pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod inference;
pub mod model;
pub mod par;
pub mod sim;
pub mod train;
pub mod util;
