//! A small expression language for user-defined vector fields `f(x, t)`.
//!
//! Grammar (whitespace-insensitive, no implicit multiplication):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?        exponent must fold to an integer constant
//! primary := number | 'pi' | 'x<k>' | 't' | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos tan tanh sech exp log sqrt abs arctan`.

mod diff;
mod expr;
mod field;
mod parse;

pub use diff::differentiate;
pub use expr::{BinOp, Expr, Func, Var};
pub use field::ExprField;
pub use parse::parse;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("variable `{name}` at byte {offset} is out of range for d={dim}")]
    VariableRange {
        name: String,
        offset: usize,
        dim: usize,
    },

    #[error("function `{name}` at byte {offset} takes 1 argument, got {found}")]
    Arity {
        name: String,
        offset: usize,
        found: usize,
    },

    #[error("unexpected trailing input at byte {offset}")]
    Trailing { offset: usize },

    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },

    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<ExprError>,
    },

    #[error("field definition: {0}")]
    FieldFile(String),
}

impl ExprError {
    /// Byte offset of a syntax-level error, when it has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Syntax { offset, .. }
            | ExprError::UnknownIdentifier { offset, .. }
            | ExprError::VariableRange { offset, .. }
            | ExprError::Arity { offset, .. }
            | ExprError::Trailing { offset } => Some(*offset),
            ExprError::Line { source, .. } => source.offset(),
            _ => None,
        }
    }
}
