//! Tree diffusion over context-free program grammars: grammars and syntax
//! trees, forward mutation noise, reverse edit paths, rendering, policies,
//! search and dataset tooling.

pub mod data_harness;
pub mod env;
pub mod geometry;
pub mod grammar;
pub mod mutation;
pub mod policy;
pub mod render;
pub mod search;
pub mod tree_path;

pub type Point = geometry::Point<f64>;
pub type Circle = geometry::Circle<f64>;
pub type Quad = geometry::Quad<f64>;
pub type Rect = geometry::Rect<f64>;
