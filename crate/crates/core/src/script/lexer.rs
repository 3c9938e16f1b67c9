use super::ast::Pos;
use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    If,
    Else,
    While,
    Return,
    True,
    False,
    And,
    Or,
    Not,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    MapOpen,
    Comma,
    Colon,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Int(i) => format!("integer {i}"),
            Tok::Float(x) => format!("float {x:?}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::If => "if",
            Tok::Else => "else",
            Tok::While => "while",
            Tok::Return => "return",
            Tok::True => "true",
            Tok::False => "false",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::Assign => "=",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::MapOpen => "#{",
            Tok::Comma => ",",
            Tok::Colon => ":",
            _ => "?",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let mut lx = Lexer { chars: source.chars().peekable(), line: 1, column: 1 };
    let mut out = Vec::new();
    loop {
        let token = lx.next_token()?;
        let done = token.tok == Tok::Eof;
        out.push(token);
        if done {
            return Ok(out);
        }
    }
}

impl Lexer<'_> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos::new(self.line, self.column)
    }

    fn error(&self, pos: Pos, expected: &str, found: impl Into<String>) -> ParseError {
        ParseError { line: pos.line, column: pos.column, expected: expected.to_string(), found: found.into() }
    }

    fn next_token(&mut self) -> Result<Token, ParseError> {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    let pos = self.pos();
                    self.bump();
                    if self.chars.peek() == Some(&'{') {
                        self.bump();
                        return Ok(Token { tok: Tok::MapOpen, pos });
                    }
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        let pos = self.pos();
        let Some(c) = self.bump() else {
            return Ok(Token { tok: Tok::Eof, pos });
        };
        let tok = match c {
            '0'..='9' => self.number(c, pos)?,
            '"' => self.string(pos)?,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::from(c);
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        ident.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                match ident.as_str() {
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "while" => Tok::While,
                    "return" => Tok::Return,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Ident(ident),
                }
            }
            '=' => self.pair('=', Tok::EqEq, Tok::Assign),
            '<' => self.pair('=', Tok::Le, Tok::Lt),
            '>' => self.pair('=', Tok::Ge, Tok::Gt),
            '!' => {
                if self.chars.peek() == Some(&'=') {
                    self.bump();
                    Tok::NotEq
                } else {
                    return Err(self.error(pos, "`!=`", "`!`"));
                }
            }
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '%' => Tok::Percent,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            other => return Err(self.error(pos, "a token", format!("character {other:?}"))),
        };
        Ok(Token { tok, pos })
    }

    fn pair(&mut self, next: char, yes: Tok, no: Tok) -> Tok {
        if self.chars.peek() == Some(&next) {
            self.bump();
            yes
        } else {
            no
        }
    }

    fn digits(&mut self, text: &mut String) {
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
    }

    fn number(&mut self, first: char, pos: Pos) -> Result<Tok, ParseError> {
        let mut text = String::from(first);
        self.digits(&mut text);
        let mut is_float = false;
        if self.chars.peek() == Some(&'.') {
            // A fraction needs a digit after the dot.
            let mut ahead = self.chars.clone();
            ahead.next();
            if matches!(ahead.peek(), Some(c) if c.is_ascii_digit()) {
                is_float = true;
                text.push('.');
                self.bump();
                self.digits(&mut text);
            }
        }
        if matches!(self.chars.peek(), Some('e') | Some('E')) {
            let mut ahead = self.chars.clone();
            ahead.next();
            let signed = matches!(ahead.peek(), Some('+') | Some('-'));
            if signed {
                ahead.next();
            }
            if matches!(ahead.peek(), Some(c) if c.is_ascii_digit()) {
                is_float = true;
                text.push('e');
                self.bump();
                if signed {
                    text.push(self.bump().unwrap_or('+'));
                }
                self.digits(&mut text);
            }
        }
        if is_float {
            text.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Tok::Float)
                .ok_or_else(|| self.error(pos, "a finite float literal", text))
        } else {
            text.parse::<i64>().map(Tok::Int).map_err(|_| self.error(pos, "a 64-bit integer literal", text))
        }
    }

    fn string(&mut self, pos: Pos) -> Result<Tok, ParseError> {
        let mut s = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.error(pos, "closing `\"`", "end of input"));
            };
            match c {
                '"' => return Ok(Tok::Str(s)),
                '\\' => {
                    let esc_pos = self.pos();
                    match self.bump() {
                        Some('n') => s.push('\n'),
                        Some('t') => s.push('\t'),
                        Some('r') => s.push('\r'),
                        Some('0') => s.push('\0'),
                        Some('\\') => s.push('\\'),
                        Some('"') => s.push('"'),
                        Some('u') => {
                            if self.bump() != Some('{') {
                                return Err(self.error(esc_pos, "`{` after \\u", "other"));
                            }
                            let mut hex = String::new();
                            loop {
                                match self.bump() {
                                    Some('}') => break,
                                    Some(h) if h.is_ascii_hexdigit() && hex.len() < 6 => hex.push(h),
                                    _ => return Err(self.error(esc_pos, "hex digits and `}`", "other")),
                                }
                            }
                            let ch = u32::from_str_radix(&hex, 16)
                                .ok()
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.error(esc_pos, "a unicode scalar value", hex.clone()))?;
                            s.push(ch);
                        }
                        other => {
                            return Err(self.error(esc_pos, "an escape sequence", format!("{other:?}")));
                        }
                    }
                }
                other => s.push(other),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn map_open_versus_comment() {
        assert_eq!(toks("#{ # note\n}"), vec![Tok::MapOpen, Tok::RBrace, Tok::Eof]);
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("1 2.5 1e3 7e-1"), vec![Tok::Int(1), Tok::Float(2.5), Tok::Float(1000.0), Tok::Float(0.7), Tok::Eof]);
        assert!(tokenize("3.x").is_err());
    }

    #[test]
    fn integer_overflow_is_an_error() {
        assert!(tokenize("9223372036854775808").is_err());
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""a\n\"\u{41}""#), vec![Tok::Str("a\n\"A".into()), Tok::Eof]);
    }
}
