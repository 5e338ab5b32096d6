pub mod compare;
pub mod eval;
pub mod forward;
pub mod infer;
pub mod invert;
pub mod phantom;
pub mod train;
pub mod validate;
