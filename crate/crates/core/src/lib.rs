pub mod cli;
pub mod engine;
pub mod model;
pub mod remote;
pub mod script;
pub mod storage;
pub mod value;
