pub mod data;
pub mod estimators;
pub mod gqda;
pub mod numerics;
pub mod simulate;
