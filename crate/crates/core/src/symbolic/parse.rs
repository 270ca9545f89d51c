use super::{ExprTree, Func, Node, SymbolicError, Terminal};

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SymbolicError> {
        Err(SymbolicError::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        if self.pos < self.src.len() && self.src[self.pos] == b'-' {
            self.pos += 1;
        }
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn expect(&mut self, c: u8) -> Result<(), SymbolicError> {
        self.skip_ws();
        if self.pos < self.src.len() && self.src[self.pos] == c {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{}`", c as char))
        }
    }

    fn expr(&mut self) -> Result<(), SymbolicError> {
        let tok = self.token();
        let term = match tok {
            "y" => Some(Terminal::Y),
            "f" => Some(Terminal::F),
            "1" => Some(Terminal::One),
            "-1" => Some(Terminal::NegOne),
            _ => None,
        };
        if let Some(t) = term {
            self.nodes.push(Node::Term(t));
            return Ok(());
        }
        let Some(func) = Func::from_name(tok) else {
            return self.err(format!("unknown symbol `{tok}`"));
        };
        self.nodes.push(Node::Func(func));
        self.expect(b'(')?;
        self.expr()?;
        if func.arity() == 2 {
            self.expect(b',')?;
            self.expr()?;
        }
        self.expect(b')')
    }
}

pub(super) fn parse(s: &str) -> Result<ExprTree, SymbolicError> {
    let mut p = Parser {
        src: s.as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return p.err("trailing input");
    }
    Ok(ExprTree { nodes: p.nodes })
}

/// Parse an expression that may be wrapped in a root `softplus(...)`.
/// Returns the inner tree and whether the wrapper was present.
pub fn parse_with_wrapper(s: &str) -> Result<(ExprTree, bool), SymbolicError> {
    let trimmed = s.trim();
    if let Some(inner) = trimmed
        .strip_prefix("softplus(")
        .and_then(|r| r.strip_suffix(')'))
    {
        return Ok((parse(inner)?, true));
    }
    Ok((parse(trimmed)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapper_is_detected() {
        let (t, nonneg) = parse_with_wrapper("softplus(mul(y, log(mul(y, f))))").unwrap();
        assert!(nonneg);
        assert_eq!(t.to_string(), "mul(y, log(mul(y, f)))");
        assert!(!parse_with_wrapper("add(y, f)").unwrap().1);
    }

    #[test]
    fn errors_carry_position() {
        assert!(matches!(
            parse("add(y f)"),
            Err(SymbolicError::Parse { pos: 6, .. })
        ));
        assert!(parse("cosh(y)").is_err());
        assert!(parse("y y").is_err());
        assert!(parse("square(y, f)").is_err());
    }
}
