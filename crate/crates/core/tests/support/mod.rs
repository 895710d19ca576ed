pub mod nets;
pub mod oracles;
pub mod reference;
