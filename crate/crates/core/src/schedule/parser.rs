//! Recursive-descent parser for the history notation.
//!
//! ```text
//! txn A iso=rc mode=LSCC delta=-100
//! rA(x) rB(x) wA(x) wB(x) cA cB      # comment
//! ```
//!
//! Operations are separated by whitespace or commas and may span lines. A line
//! whose first word is `txn` is a header. Errors carry a 1-based line and column.

use std::fmt;

use thiserror::Error;

use super::history::{History, IllFormed, Operation, TxnDecl};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    /// Byte offset into the input.
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: Option<char>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: expected ", self.line, self.column)?;
        for (i, e) in self.expected.iter().enumerate() {
            if i > 0 {
                f.write_str(if i + 1 == self.expected.len() { " or " } else { ", " })?;
            }
            f.write_str(e)?;
        }
        match self.found {
            Some(c) => write!(f, ", found {c:?}"),
            None => f.write_str(", found end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    /// Parsed, but structurally invalid; positioned at the offending operation or
    /// header (end of input for an empty history).
    #[error("ill-formed history at line {line}, column {column}: {error}")]
    IllFormed { line: usize, column: usize, error: IllFormed },
}

impl HistoryError {
    /// 1-based (line, column) of the error.
    pub fn position(&self) -> (usize, usize) {
        match self {
            HistoryError::Parse(e) => (e.line, e.column),
            HistoryError::IllFormed { line, column, .. } => (*line, *column),
        }
    }

    pub fn ill_formed(&self) -> Option<&IllFormed> {
        match self {
            HistoryError::IllFormed { error, .. } => Some(error),
            HistoryError::Parse(_) => None,
        }
    }
}

pub fn parse_history(text: &str) -> Result<History, HistoryError> {
    let mut p = Parser { text, pos: 0, op_offsets: Vec::new() };
    let history = p.history()?;
    if let Err(error) = history.check() {
        p.pos = error.op_index().map_or(text.len(), |i| p.op_offsets[i]);
        return Err(p.ill_formed(error));
    }
    Ok(history)
}

/// Parses raw bytes; invalid UTF-8 is reported at the first offending byte.
pub fn parse_history_bytes(bytes: &[u8]) -> Result<History, HistoryError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_history(text),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default();
            let p = Parser { text: valid, pos: valid.len(), op_offsets: Vec::new() };
            Err(p.error(&["valid UTF-8"]).into())
        }
    }
}

struct Parser<'txt> {
    text: &'txt str,
    pos: usize,
    /// Byte offset where each parsed operation starts.
    op_offsets: Vec<usize>,
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

fn is_item(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '-')
}

fn is_separator(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | ',')
}

impl<'txt> Parser<'txt> {
    fn rest(&self) -> &'txt str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let before = &self.text[..self.pos];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        let column = self.text[line_start..self.pos].chars().count() + 1;
        ParseError {
            line,
            column,
            offset: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek(),
        }
    }

    fn ill_formed(&self, error: IllFormed) -> HistoryError {
        let ParseError { line, column, .. } = self.error(&[]);
        HistoryError::IllFormed { line, column, error }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{c}`")]))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'txt str {
        let start = self.pos;
        while self.peek().is_some_and(&f) {
            self.bump();
        }
        &self.text[start..self.pos]
    }

    fn word(&mut self, f: impl Fn(char) -> bool, what: &str) -> Result<&'txt str, ParseError> {
        let w = self.take_while(f);
        if w.is_empty() {
            Err(self.error(&[what]))
        } else {
            Ok(w)
        }
    }

    fn skip_blank(&mut self) {
        self.take_while(|c| matches!(c, ' ' | '\t' | '\r'));
    }

    fn skip_comment(&mut self) {
        if self.peek() == Some('#') {
            self.take_while(|c| c != '\n');
        }
    }

    fn at_line_start(&self) -> bool {
        self.text[..self.pos].rsplit('\n').next().is_some_and(|l| l.chars().all(|c| c == ' ' || c == '\t'))
    }

    fn history(&mut self) -> Result<History, HistoryError> {
        let mut history = History::default();
        loop {
            self.take_while(|c| is_separator(c) || c == '\n');
            self.skip_comment();
            let Some(c) = self.peek() else { break };
            if c == '\n' || c == '#' {
                continue;
            }
            if self.at_line_start() && self.rest().starts_with("txn") && self.header_follows() {
                let at = self.pos;
                let (txn, decl) = self.header()?;
                if history.decls.insert(txn.clone(), decl).is_some() {
                    self.pos = at;
                    return Err(self.ill_formed(IllFormed::DuplicateDecl(txn)));
                }
                continue;
            }
            self.op_offsets.push(self.pos);
            let op = self.operation()?;
            history.ops.push(op);
            match self.peek() {
                None | Some('\n') | Some('#') => {}
                Some(c) if is_separator(c) => {}
                Some(_) => return Err(self.error(&["separator", "end of line"]).into()),
            }
        }
        Ok(history)
    }

    fn header_follows(&self) -> bool {
        self.rest()[3..].chars().next().is_some_and(|c| c == ' ' || c == '\t')
    }

    fn header(&mut self) -> Result<(String, TxnDecl), ParseError> {
        self.pos += "txn".len();
        self.skip_blank();
        let txn = self.word(is_ident, "transaction id")?.to_string();
        let mut decl = TxnDecl::default();
        loop {
            let before = self.pos;
            self.skip_blank();
            self.skip_comment();
            match self.peek() {
                None | Some('\n') => break,
                _ if self.pos == before => return Err(self.error(&["whitespace"])),
                _ => {}
            }
            let key_at = self.pos;
            let key = self.word(|c| c.is_ascii_alphabetic(), "attribute")?;
            if key == "occ" {
                decl.occ = true;
                continue;
            }
            if !matches!(key, "iso" | "mode" | "delta" | "write") {
                self.pos = key_at;
                return Err(self.error(&["`iso=`", "`mode=`", "`delta=`", "`write=`", "`occ`"]));
            }
            self.expect('=')?;
            let value_at = self.pos;
            let value = self.take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
            let invalid = |p: &mut Self, what: &str| {
                p.pos = value_at;
                p.error(&[what])
            };
            match key {
                "iso" => decl.isolation = Some(value.parse().map_err(|_| invalid(self, "isolation level"))?),
                "mode" => decl.mode = Some(value.parse().map_err(|_| invalid(self, "`LSCC` or `MVCC`"))?),
                "delta" => decl.delta = Some(value.parse().map_err(|_| invalid(self, "integer"))?),
                _ => decl.write = Some(value.parse().map_err(|_| invalid(self, "`blind` or `sensitive`"))?),
            }
        }
        Ok((txn, decl))
    }

    fn operation(&mut self) -> Result<Operation, ParseError> {
        let rest = self.rest();
        if rest.starts_with("tick") {
            self.pos += 4;
            return Ok(Operation::Tick);
        }
        if rest.starts_with("val") {
            self.pos += 3;
            let txn = self.word(is_ident, "transaction id")?;
            return Ok(Operation::validate(txn));
        }
        match self.peek() {
            Some('c') => {
                self.bump();
                Ok(Operation::commit(self.word(is_ident, "transaction id")?))
            }
            Some('a') => {
                self.bump();
                Ok(Operation::abort(self.word(is_ident, "transaction id")?))
            }
            Some('r') => {
                self.bump();
                let txn = self.word(is_ident, "transaction id")?;
                self.expect('(')?;
                let item = self.word(is_item, "item")?;
                self.expect(')')?;
                Ok(Operation::read(txn, item))
            }
            Some('w') => {
                self.bump();
                let txn = self.word(is_ident, "transaction id")?;
                self.expect('(')?;
                let item = self.word(is_item, "item")?;
                if self.peek() == Some(',') {
                    self.bump();
                    let cond = self.word(|c| is_ident(c) || c == '_', "condition name")?;
                    self.expect(')')?;
                    return Ok(Operation::cond_write(txn, item, cond));
                }
                match self.peek() {
                    Some(')') => {
                        self.bump();
                        Ok(Operation::write(txn, item))
                    }
                    _ => Err(self.error(&["`)`", "`,`"])),
                }
            }
            _ => Err(self.error(&["`r`", "`w`", "`val`", "`c`", "`a`", "`tick`", "`txn` header"])),
        }
    }
}
