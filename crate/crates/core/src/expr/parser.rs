use super::ast::{BinOp, Func, Node, NodeKind, Span, Var};
use super::{Dims, ExprError};

const MAX_DEPTH: usize = 256;
// long flat sums build tall trees without nesting; cap them so later
// recursive passes stay well inside the stack
const MAX_HEIGHT: usize = 4096;

const OPERAND: &[&str] = &["number", "variable", "function", "(", "-"];

pub(super) fn parse(src: &str, dims: Dims) -> Result<Node, ExprError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        depth: 0,
        dims,
    };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.unexpected(&["operator", "end of input"]));
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
    dims: Dims,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn unexpected(&self, expected: &[&'static str]) -> ExprError {
        let found = match self.src.get(self.pos) {
            None => "end of input".to_string(),
            Some(b) if b.is_ascii_graphic() => format!("`{}`", *b as char),
            Some(b) => format!("byte 0x{b:02x}"),
        };
        ExprError::Syntax {
            offset: self.pos,
            expected: expected.to_vec(),
            found,
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ExprError::TooDeep {
                offset: self.pos,
                limit: MAX_DEPTH,
            });
        }
        Ok(())
    }

    fn check_height(&self, node: &Node) -> Result<(), ExprError> {
        if node.height() > MAX_HEIGHT {
            return Err(ExprError::TooDeep {
                offset: self.pos,
                limit: MAX_HEIGHT,
            });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            let span = Span::new(lhs.span.start, rhs.span.end);
            lhs = Node::new(NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)), span);
            self.check_height(&lhs)?;
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            let span = Span::new(lhs.span.start, rhs.span.end);
            lhs = Node::new(NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)), span);
            self.check_height(&lhs)?;
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            let start = self.pos;
            self.pos += 1;
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            let span = Span::new(start, inner.span.end);
            return Ok(Node::new(NodeKind::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.enter()?;
            let exp = self.unary()?;
            self.depth -= 1;
            let span = Span::new(base.span.start, exp.span.end);
            return Ok(Node::new(
                NodeKind::Bin(BinOp::Pow, Box::new(base), Box::new(exp)),
                span,
            ));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                let start = self.pos;
                self.pos += 1;
                let mut inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.unexpected(&["operator", ")"]));
                }
                self.pos += 1;
                // the parenthesised span covers the brackets so that domain
                // errors point at the whole group
                inner.span = Span::new(start, self.pos);
                Ok(inner)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number(),
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.name(),
            _ => Err(self.unexpected(OPERAND)),
        }
    }

    fn digits(&mut self) -> usize {
        let s = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        self.pos - s
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let int = self.digits();
        let mut frac = 0;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac = self.digits();
        }
        if int + frac == 0 {
            self.pos = start + 1;
            return Err(self.unexpected(&["digit"]));
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return Err(self.unexpected(&["digit"]));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            expected: vec!["number"],
            found: format!("`{text}`"),
        })?;
        if !value.is_finite() {
            return Err(ExprError::Syntax {
                offset: start,
                expected: vec!["finite number"],
                found: format!("`{text}`"),
            });
        }
        Ok(Node::new(NodeKind::Num(value), Span::new(start, self.pos)))
    }

    fn name(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_string();
        if self.peek() == Some(b'(') {
            return self.call(name, start);
        }
        let var = self.variable(&name, start)?;
        Ok(Node::new(NodeKind::Var(var), Span::new(start, self.pos)))
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Var, ExprError> {
        match name {
            "t" => return Ok(Var::T),
            "y" => return Ok(Var::Y),
            _ => {}
        }
        let unknown = || ExprError::UnknownVariable {
            name: name.to_string(),
            offset,
        };
        let (head, rest) = name.split_at(1);
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(unknown());
        }
        let limit = match head {
            "x" => self.dims.n,
            "z" => self.dims.d,
            "u" => self.dims.k,
            _ => return Err(unknown()),
        };
        let index: usize = rest.parse().unwrap_or(usize::MAX);
        if index == 0 || index > limit {
            return Err(ExprError::Dimension {
                name: name.to_string(),
                index,
                limit,
                offset,
            });
        }
        Ok(match head {
            "x" => Var::X(index - 1),
            "z" => Var::Z(index - 1),
            _ => Var::U(index - 1),
        })
    }

    fn call(&mut self, name: String, start: usize) -> Result<Node, ExprError> {
        let func = Func::lookup(&name).ok_or_else(|| ExprError::UnknownFunction {
            name: name.clone(),
            offset: start,
        })?;
        // consume '('
        self.pos += 1;
        let mut args = vec![self.expr()?];
        loop {
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.unexpected(&["operator", ",", ")"])),
            }
        }
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                name,
                expected: func.arity(),
                found: args.len(),
                offset: start,
            });
        }
        Ok(Node::new(NodeKind::Call(func, args), Span::new(start, self.pos)))
    }
}
