pub mod certify;
pub mod cli;
pub mod cone;
pub mod config;
pub mod controller;
pub mod decomposition;
pub mod plants;
pub mod registry;
pub mod sign;
pub mod sim;
