pub mod config;
pub mod expr;
pub mod mesh_io;
pub mod output;
pub mod parallel;
pub mod presets;
pub mod run;
