//! Canonical source rendering of a syntax tree. Parentheses are inserted only where
//! precedence requires them, so `parse(print(ast)) == ast`.

use std::fmt::Write;

use super::ast::{prec, Else, Expr, ExprKind, Program, Stmt, StmtKind, UnaryOp};

pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    for stmt in &program.stmts {
        print_stmt(&mut out, stmt, 0);
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn print_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    if stmts.is_empty() {
        out.push_str("{ }");
        return;
    }
    out.push_str("{\n");
    for s in stmts {
        print_stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

fn print_if(out: &mut String, stmt: &Stmt, depth: usize) {
    let StmtKind::If { cond, then, otherwise } = &stmt.kind else { unreachable!() };
    out.push_str("if ");
    out.push_str(&print_expr(cond));
    out.push(' ');
    print_block(out, then, depth);
    match otherwise {
        None => {}
        Some(Else::Block(b)) => {
            out.push_str(" else ");
            print_block(out, b, depth);
        }
        Some(Else::If(inner)) => {
            out.push_str(" else ");
            print_if(out, inner, depth);
        }
    }
}

fn print_stmt(out: &mut String, stmt: &Stmt, depth: usize) {
    indent(out, depth);
    match &stmt.kind {
        StmtKind::Assign { name, value } => {
            let _ = write!(out, "{name} = {}", print_expr(value));
        }
        StmtKind::If { .. } => print_if(out, stmt, depth),
        StmtKind::While { cond, body } => {
            out.push_str("while ");
            out.push_str(&print_expr(cond));
            out.push(' ');
            print_block(out, body, depth);
        }
        StmtKind::Return(e) => {
            out.push_str("return ");
            out.push_str(&print_expr(e));
        }
        StmtKind::Expr(e) => out.push_str(&print_expr(e)),
    }
    out.push('\n');
}

pub fn print_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr, 0);
    out
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '\0' => out.push_str("\\0"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes `expr`, parenthesised if it binds looser than `min_prec`.
fn write_expr(out: &mut String, expr: &Expr, min_prec: u8) {
    let own = expr.kind.precedence();
    let wrap = own < min_prec;
    if wrap {
        out.push('(');
    }
    match &expr.kind {
        ExprKind::Int(i) => {
            let _ = write!(out, "{i}");
        }
        ExprKind::Float(x) => {
            let _ = write!(out, "{x:?}");
        }
        ExprKind::Str(s) => out.push_str(&quote(s)),
        ExprKind::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        ExprKind::Ident(name) => out.push_str(name),
        ExprKind::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, item, 0);
            }
            out.push(']');
        }
        ExprKind::Map(entries) => {
            out.push_str("#{");
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&quote(k));
                out.push_str(": ");
                write_expr(out, v, 0);
            }
            out.push('}');
        }
        ExprKind::Unary { op: UnaryOp::Not, operand } => {
            out.push_str("not ");
            write_expr(out, operand, prec::NOT);
        }
        ExprKind::Unary { op: UnaryOp::Neg, operand } => {
            out.push('-');
            write_expr(out, operand, prec::UNARY);
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            // Comparisons do not chain, so both sides must bind tighter.
            let lhs_min = if p == prec::CMP { p + 1 } else { p };
            write_expr(out, lhs, lhs_min);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, rhs, p + 1);
        }
        ExprKind::Index { target, index } => {
            write_expr(out, target, prec::POSTFIX);
            out.push('[');
            write_expr(out, index, 0);
            out.push(']');
        }
        ExprKind::Call { callee, args } => {
            write_expr(out, callee, prec::POSTFIX);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a, 0);
            }
            out.push(')');
        }
    }
    if wrap {
        out.push(')');
    }
}
