pub mod config;
pub mod constraint;
pub mod entity;
pub mod geometry;
pub mod rng;
pub mod world;
pub mod skills;
pub mod detector;
pub mod planner;
pub mod executive;
pub mod harness;
pub mod trace;
pub mod calibrate;
pub mod protocol;
