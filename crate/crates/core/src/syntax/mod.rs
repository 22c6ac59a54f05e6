//! Abstract syntax, surface parser, printer and static validation.

mod ast;
mod parse;
mod print;
mod subst;
mod validate;

pub use ast::*;
pub use parse::{parse_expr, parse_program, ParseError};
pub use print::{expr_to_string, program_to_string, write_expr};
pub use subst::{substitute, substitute_one};
pub use validate::{lookup_method, validate_program, Issue, LookupError, ValidationReport, RESERVED_METHODS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid program:\n{0}")]
    Invalid(ValidationReport),
}

/// Parses and validates.
pub fn load(src: &str) -> Result<Program, LoadError> {
    let p = parse_program(src)?;
    let report = validate_program(&p);
    if report.is_ok() {
        Ok(p)
    } else {
        Err(LoadError::Invalid(report))
    }
}
