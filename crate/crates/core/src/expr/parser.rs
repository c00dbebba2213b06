use super::{BinOp, Expr, Func};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UndeclaredIdentifier(String),
    UnknownFunction(String),
}

/// Parse failure with a byte offset into the source text.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{} at offset {offset}", describe(kind))]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax(m) => m.clone(),
        ParseErrorKind::UndeclaredIdentifier(n) => format!("undeclared identifier `{n}`"),
        ParseErrorKind::UnknownFunction(n) => format!("unknown function `{n}`"),
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn syntax(offset: usize, msg: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        kind: ParseErrorKind::Syntax(msg.into()),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
            out.push(Token {
                tok: Tok::Num(v),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    let ch = src[start..].chars().next().unwrap_or(c);
                    return Err(syntax(start, format!("unexpected character `{ch}`")));
                }
            };
            i += 1;
            out.push(Token { tok, offset: start });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    vars: &'a [String],
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.offset)
    }

    /// Error for a missing operand: at end of input it points at the
    /// dangling token that demanded the operand.
    fn missing_operand(&self) -> ParseError {
        match self.toks.get(self.pos) {
            Some(t) => syntax(t.offset, format!("expected operand, found {}", show(&t.tok))),
            None => match self.pos.checked_sub(1).and_then(|p| self.toks.get(p)) {
                Some(prev) => syntax(prev.offset, format!("expected operand after {}", show(&prev.tok))),
                None => syntax(0, "empty expression"),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.toks.get(self.pos).cloned() else {
            return Err(self.missing_operand());
        };
        match tok.tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or(ParseError {
                        offset: tok.offset,
                        kind: ParseErrorKind::UnknownFunction(name.clone()),
                    })?;
                    let open = self.offset();
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.close_paren(open)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(index) => Ok(Expr::Var { index, name }),
                    None => Err(ParseError {
                        offset: tok.offset,
                        kind: ParseErrorKind::UndeclaredIdentifier(name),
                    }),
                }
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.close_paren(tok.offset)?;
                Ok(inner)
            }
            Tok::Op(_) | Tok::RParen => Err(self.missing_operand()),
        }
    }

    fn close_paren(&mut self, open: usize) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(syntax(self.offset(), format!("expected `)`, found {}", show(t)))),
            None => Err(syntax(open, "unclosed `(`")),
        }
    }
}

fn show(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Op(c) => format!("`{c}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
    }
}

/// Parses `src`, resolving identifiers against `vars` (state variable names).
pub fn parse(src: &str, vars: &[String]) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        vars,
        len: src.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.toks.get(p.pos) {
        return Err(syntax(t.offset, format!("unexpected {}", show(&t.tok))));
    }
    Ok(e)
}
