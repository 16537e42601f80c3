pub mod compare;
pub mod diagnose;
pub mod exceedance;
pub mod fetch;
pub mod fit;
pub mod inspect;
pub mod simulate;
pub mod train;
