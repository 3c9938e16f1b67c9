//! Recursive descent parser. One function per grammar rule, lowest precedence first.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

pub fn parse(source: &str) -> Result<Program, ParseError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, at: 0 };
    let mut stmts = Vec::new();
    while p.peek() != &Tok::Eof {
        stmts.push(p.stmt()?);
    }
    Ok(Program { stmts })
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        let t = &self.tokens[self.at];
        Err(ParseError {
            line: t.pos.line,
            column: t.pos.column,
            expected: expected.to_string(),
            found: t.tok.describe(),
        })
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if self.peek() == &tok {
            Ok(self.advance())
        } else {
            self.fail(expected)
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        let kind = match self.peek() {
            Tok::If => return self.if_stmt(),
            Tok::While => {
                self.advance();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Return => {
                self.advance();
                StmtKind::Return(self.expr()?)
            }
            Tok::Ident(name) if self.peek_at(1) == &Tok::Assign => {
                let name = name.clone();
                self.advance();
                self.advance();
                StmtKind::Assign { name, value: self.expr()? }
            }
            _ => StmtKind::Expr(self.expr()?),
        };
        Ok(Stmt { kind, pos })
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        let pos = self.pos();
        self.expect(Tok::If, "`if`")?;
        let cond = self.expr()?;
        let then = self.block()?;
        let otherwise = if self.eat(&Tok::Else) {
            if self.peek() == &Tok::If {
                Some(Else::If(Box::new(self.if_stmt()?)))
            } else {
                Some(Else::Block(self.block()?))
            }
        } else {
            None
        };
        Ok(Stmt { kind: StmtKind::If { cond, then, otherwise }, pos })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.peek() == &Tok::Eof {
                return self.fail("`}`");
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or()
    }

    fn left_assoc(
        &mut self,
        next: fn(&mut Self) -> Result<Expr, ParseError>,
        op_of: fn(&Tok) -> Option<BinaryOp>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        while let Some(op) = op_of(self.peek()) {
            let pos = self.pos();
            self.advance();
            let rhs = next(self)?;
            lhs = Expr::new(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, pos);
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(Self::and, |t| (t == &Tok::Or).then_some(BinaryOp::Or))
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(Self::not, |t| (t == &Tok::And).then_some(BinaryOp::And))
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == &Tok::Not {
            let pos = self.pos();
            self.advance();
            let operand = self.not()?;
            return Ok(Expr::new(ExprKind::Unary { op: UnaryOp::Not, operand: Box::new(operand) }, pos));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add()?;
        let op = match self.peek() {
            Tok::EqEq => BinaryOp::Eq,
            Tok::NotEq => BinaryOp::Ne,
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            _ => return Ok(lhs),
        };
        let pos = self.pos();
        self.advance();
        let rhs = self.add()?;
        Ok(Expr::new(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }, pos))
    }

    fn add(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(Self::mul, |t| match t {
            Tok::Plus => Some(BinaryOp::Add),
            Tok::Minus => Some(BinaryOp::Sub),
            _ => None,
        })
    }

    fn mul(&mut self) -> Result<Expr, ParseError> {
        self.left_assoc(Self::unary, |t| match t {
            Tok::Star => Some(BinaryOp::Mul),
            Tok::Slash => Some(BinaryOp::Div),
            Tok::Percent => Some(BinaryOp::Rem),
            _ => None,
        })
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == &Tok::Minus {
            let pos = self.pos();
            self.advance();
            let operand = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary { op: UnaryOp::Neg, operand: Box::new(operand) }, pos));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            let pos = self.pos();
            if self.eat(&Tok::LBracket) {
                let index = self.expr()?;
                self.expect(Tok::RBracket, "`]`")?;
                e = Expr::new(ExprKind::Index { target: Box::new(e), index: Box::new(index) }, pos);
            } else if self.eat(&Tok::LParen) {
                let args = self.comma_list(Tok::RParen, "`)`")?;
                e = Expr::new(ExprKind::Call { callee: Box::new(e), args }, pos);
            } else {
                return Ok(e);
            }
        }
    }

    fn comma_list(&mut self, close: Tok, expected: &str) -> Result<Vec<Expr>, ParseError> {
        let mut items = Vec::new();
        if self.eat(&close) {
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            if self.eat(&close) {
                return Ok(items);
            }
            if !self.eat(&Tok::Comma) {
                return self.fail(&format!("`,` or {expected}"));
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::Int(i) => {
                self.advance();
                ExprKind::Int(i)
            }
            Tok::Float(x) => {
                self.advance();
                ExprKind::Float(x)
            }
            Tok::Str(s) => {
                self.advance();
                ExprKind::Str(s)
            }
            Tok::True => {
                self.advance();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.advance();
                ExprKind::Bool(false)
            }
            Tok::Ident(name) => {
                self.advance();
                ExprKind::Ident(name)
            }
            Tok::LBracket => {
                self.advance();
                ExprKind::List(self.comma_list(Tok::RBracket, "`]`")?)
            }
            Tok::MapOpen => {
                self.advance();
                let mut entries = Vec::new();
                if !self.eat(&Tok::RBrace) {
                    loop {
                        let key = match self.peek().clone() {
                            Tok::Str(s) => {
                                self.advance();
                                s
                            }
                            _ => return self.fail("a string key"),
                        };
                        self.expect(Tok::Colon, "`:`")?;
                        entries.push((key, self.expr()?));
                        if self.eat(&Tok::RBrace) {
                            break;
                        }
                        if !self.eat(&Tok::Comma) {
                            return self.fail("`,` or `}`");
                        }
                    }
                }
                ExprKind::Map(entries)
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(inner);
            }
            _ => return self.fail("an expression"),
        };
        Ok(Expr::new(kind, pos))
    }
}
