//! Arithmetic expressions over `(t, x1..xn, y, z1..zd, u1..uk)`.
//!
//! Coefficients of a problem are declared as strings in the problem
//! document. [`Expression::parse`] builds a spanned syntax tree and compiles
//! it into a flat postfix program so evaluation in path loops stays cheap.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          (right associative)
//! primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

mod ast;
mod parser;
mod program;

use std::fmt;

use thiserror::Error;

pub use ast::{BinOp, Func, Node, NodeKind, Span, Var};
pub use program::Program;

/// Number of state, Brownian and control coordinates a problem declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(n: usize, d: usize, k: usize) -> Self {
        Self { n, d, k }
    }
}

/// A full variable binding.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub u: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("expr: syntax error at offset {offset}: expected one of {expected:?}, found {found}")]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("expr: unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("expr: unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("expr: `{name}` takes {expected} argument(s), {found} given at offset {offset}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("expr: `{name}` at offset {offset} exceeds declared dimension {limit}")]
    Dimension {
        name: String,
        index: usize,
        limit: usize,
        offset: usize,
    },
    #[error("expr: nesting deeper than {limit} at offset {offset}")]
    TooDeep { offset: usize, limit: usize },
    #[error("expr: domain error in {op} at {span} (`{snippet}`)")]
    Domain {
        op: &'static str,
        span: Span,
        snippet: String,
    },
}

impl ExprError {
    pub fn is_parse_error(&self) -> bool {
        !matches!(self, ExprError::Domain { .. })
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            ExprError::Syntax { .. } => "syntax",
            ExprError::UnknownVariable { .. } => "unknown_variable",
            ExprError::UnknownFunction { .. } => "unknown_function",
            ExprError::Arity { .. } => "arity",
            ExprError::Dimension { .. } => "dimension",
            ExprError::TooDeep { .. } => "too_deep",
            ExprError::Domain { .. } => "domain",
        }
    }

    /// Byte offset for parse errors.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Syntax { offset, .. }
            | ExprError::UnknownVariable { offset, .. }
            | ExprError::UnknownFunction { offset, .. }
            | ExprError::Arity { offset, .. }
            | ExprError::Dimension { offset, .. }
            | ExprError::TooDeep { offset, .. } => Some(*offset),
            ExprError::Domain { .. } => None,
        }
    }
}

/// A parsed and compiled scalar expression.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    ast: Node,
    program: Program,
    vars: Vec<Var>,
}

impl Expression {
    pub fn parse(source: &str, dims: Dims) -> Result<Self, ExprError> {
        let ast = parser::parse(source, dims)?;
        let program = Program::compile(&ast);
        let mut vars = Vec::new();
        ast.collect_vars(&mut vars);
        vars.sort();
        vars.dedup();
        Ok(Self {
            source: source.to_string(),
            ast,
            program,
            vars,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Node {
        &self.ast
    }

    /// Free variables, sorted and deduplicated.
    pub fn variables(&self) -> &[Var] {
        &self.vars
    }

    pub fn uses_t(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::T))
    }

    pub fn uses_x(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::X(_)))
    }

    pub fn uses_y(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::Y))
    }

    pub fn uses_z(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::Z(_)))
    }

    pub fn uses_u(&self) -> bool {
        self.vars.iter().any(|v| matches!(v, Var::U(_)))
    }

    pub fn evaluate(&self, point: &Point<'_>) -> Result<f64, ExprError> {
        self.program.run(point).map_err(|(op, span)| ExprError::Domain {
            op,
            span,
            snippet: self.source.get(span.start..span.end).unwrap_or("").to_string(),
        })
    }
}

impl fmt::Display for Expression {
    /// Fully parenthesised rendering; reparsing yields an equal tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> Dims {
        Dims::new(1, 1, 1)
    }

    fn eval(src: &str, t: f64, x: f64, y: f64, z: f64, u: f64) -> f64 {
        let e = Expression::parse(src, one()).unwrap();
        e.evaluate(&Point {
            t,
            x: &[x],
            y,
            z: &[z],
            u: &[u],
        })
        .unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("1+2*3", 0.0, 0.0, 0.0, 0.0, 0.0), 7.0);
        assert_eq!(eval("-2^2", 0.0, 0.0, 0.0, 0.0, 0.0), -4.0);
        assert_eq!(eval("2^3^2", 0.0, 0.0, 0.0, 0.0, 0.0), 512.0);
        assert_eq!(eval("8/4/2", 0.0, 0.0, 0.0, 0.0, 0.0), 1.0);
        assert_eq!(eval("2^-1", 0.0, 0.0, 0.0, 0.0, 0.0), 0.5);
    }

    #[test]
    fn spec_examples() {
        let v = eval("tanh(x1)+0.5*z1", 0.0, 0.3, 0.0, 0.2, 0.0);
        // tanh(0.3) + 0.1 to 20 digits, from an arbitrary precision evaluator
        assert!((v - 0.391_312_612_451_590_906).abs() < 1e-15, "{v}");
        assert_eq!(eval("y", 0.0, 0.0, -1.0, 0.0, 0.0), -1.0);
        assert_eq!(eval("min(u1, 1)", 0.0, 0.0, 0.0, 0.0, 3.0), 1.0);
        let v = eval("exp(-t)*x1", 1.0, 2.0, 0.0, 0.0, 0.0);
        assert!((v - 0.735_759).abs() < 1e-6, "{v}");
    }

    #[test]
    fn truncated_input() {
        let err = Expression::parse("x1 +", one()).unwrap_err();
        assert_eq!(err.offset(), Some(4));
        assert!(matches!(err, ExprError::Syntax { .. }));
    }

    #[test]
    fn unknown_and_dimension() {
        assert!(matches!(
            Expression::parse("w + 1", one()),
            Err(ExprError::UnknownVariable { offset: 0, .. })
        ));
        assert!(matches!(
            Expression::parse("1 + x2", one()),
            Err(ExprError::Dimension { index: 2, limit: 1, offset: 4, .. })
        ));
        assert!(matches!(
            Expression::parse("foo(1)", one()),
            Err(ExprError::UnknownFunction { .. })
        ));
        assert!(matches!(
            Expression::parse("min(1)", one()),
            Err(ExprError::Arity { expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn domain_errors_carry_location() {
        let e = Expression::parse("1 + log(x1)", one()).unwrap();
        let err = e
            .evaluate(&Point {
                t: 0.0,
                x: &[-1.0],
                y: 0.0,
                z: &[0.0],
                u: &[0.0],
            })
            .unwrap_err();
        match err {
            ExprError::Domain { op, span, snippet } => {
                assert_eq!(op, "log");
                assert_eq!(span.start, 4);
                assert_eq!(snippet, "log(x1)");
            }
            other => panic!("{other:?}"),
        }
        let e = Expression::parse("y / (x1 - x1)", one()).unwrap();
        assert!(e
            .evaluate(&Point {
                t: 0.0,
                x: &[1.0],
                y: 1.0,
                z: &[0.0],
                u: &[0.0],
            })
            .is_err());
    }

    #[test]
    fn variable_metadata() {
        let e = Expression::parse("y + 0.5*z1 + u1", one()).unwrap();
        assert!(e.uses_y() && e.uses_z() && e.uses_u());
        assert!(!e.uses_x() && !e.uses_t());
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashing() {
        let src = format!("{}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(matches!(
            Expression::parse(&src, one()),
            Err(ExprError::TooDeep { .. })
        ));
        let src = "-".repeat(10_000) + "1";
        assert!(Expression::parse(&src, one()).is_err());
    }
}
