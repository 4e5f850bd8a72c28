pub mod decompose;
pub mod diagnose;
pub mod doublewell;
pub mod fpk;
pub mod simulate;
pub mod spectrum;
