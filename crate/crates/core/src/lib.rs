//! Catalog-driven robot co-design as binary linear programming.
//!
//! A design picks one component per module from feature catalogs. Problems
//! are written as feature expressions, lowered to a binary linear program and
//! solved with a block branch-and-bound search that understands the one-hot
//! structure of the design vector.

pub mod blp;
pub mod catalog;
pub mod expr;
pub mod lex;
pub mod lower;
pub mod problem_file;
pub mod problems;
pub mod solution;
