//! Interpreter for the Distributed Java Calculus on a simulated
//! non-cache-coherent many-core machine.

pub mod context;
pub mod machine;
pub mod step;
pub mod syntax;
pub mod trace;
pub mod run;
pub mod check;
pub mod exec;
pub mod explore;
pub mod syncmgr;
pub mod policy;
pub mod mutate;
pub mod gen;
