//! The state scripting language: a small deterministic language in which execution states
//! define their forward behaviour and, optionally, a backward behaviour used by step-back.
//!
//! ```
//! use orc::script::{parse, print_program};
//! let program = parse("x = 1 + 2 * 3\nreturn \"done\"").unwrap();
//! assert_eq!(print_program(&program), "x = 1 + 2 * 3\nreturn \"done\"\n");
//! ```

pub mod ast;
mod check;
mod eval;
mod lexer;
mod parser;
mod printer;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use check::{check, Interface, ScriptFinding, Severity};
pub use eval::{
    evaluate, DetachedHost, EvalError, RuntimeErrorKind, ScriptContext, ScriptFailure, ScriptHost, ScriptResult,
    BUILTINS, DEFAULT_STEP_BUDGET,
};
pub use parser::parse;
pub use printer::{print_expr, print_program, quote};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("parse error at {line}:{column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    pub expected: String,
    pub found: String,
}

type Compiled = Arc<Result<ast::Program, ParseError>>;

/// Forward and optional backward source of an execution state, with their parsed trees.
///
/// The trees are rebuilt whenever a source changes, so they always match the stored text.
#[derive(Clone)]
pub struct Script {
    forward: String,
    backward: Option<String>,
    forward_ast: Compiled,
    backward_ast: Option<Compiled>,
}

impl Script {
    pub fn new(forward: impl Into<String>, backward: Option<String>) -> Self {
        let forward = forward.into();
        let forward_ast = Arc::new(parse(&forward));
        let backward_ast = backward.as_deref().map(|b| Arc::new(parse(b)));
        Script { forward, backward, forward_ast, backward_ast }
    }

    pub fn forward(source: impl Into<String>) -> Self {
        Script::new(source, None)
    }

    pub fn with_backward(mut self, source: impl Into<String>) -> Self {
        let source = source.into();
        self.backward_ast = Some(Arc::new(parse(&source)));
        self.backward = Some(source);
        self
    }

    pub fn forward_source(&self) -> &str {
        &self.forward
    }

    pub fn backward_source(&self) -> Option<&str> {
        self.backward.as_deref()
    }

    pub fn forward_program(&self) -> Result<&ast::Program, &ParseError> {
        self.forward_ast.as_ref().as_ref()
    }

    pub fn backward_program(&self) -> Option<Result<&ast::Program, &ParseError>> {
        self.backward_ast.as_ref().map(|c| c.as_ref().as_ref())
    }
}

impl PartialEq for Script {
    fn eq(&self, other: &Self) -> bool {
        self.forward == other.forward && self.backward == other.backward
    }
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Script").field("forward", &self.forward).field("backward", &self.backward).finish()
    }
}

#[derive(Serialize, Deserialize)]
struct ScriptRepr {
    forward: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backward: Option<String>,
}

impl Serialize for Script {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScriptRepr { forward: self.forward.clone(), backward: self.backward.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ScriptRepr::deserialize(d)?;
        Ok(Script::new(r.forward, r.backward))
    }
}
