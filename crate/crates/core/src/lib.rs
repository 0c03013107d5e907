pub mod backend;
pub mod bench_io;
pub mod experiment;
pub mod grid;
pub mod prompting;
pub mod search;
pub mod solver_loop;
pub mod validator;

pub use grid::{Action, Coord, GridMap, Instance};
