//! Newick reading and writing.
//!
//! Grammar accepted by the parser:
//!
//! ```text
//! tree     -> subtree ';'
//! subtree  -> '(' subtree (',' subtree)* ')' label? length?
//!           | label length?
//! length   -> ':' number
//! ```
//!
//! Branch lengths are mandatory on every non-root edge. Labels may be bare or
//! single-quoted; `[...]` comments are skipped. Ages are recovered from the
//! root-to-node path lengths, taking the deepest leaf as the present.

use std::fmt::Write;

use thiserror::Error;

use super::{Clade, Tree, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum NewickError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("invalid tree structure: {0}")]
    Structure(#[from] TreeError),
}

/// Leaves within this fraction of the tree depth of the deepest leaf are
/// treated as extant.
const ULTRAMETRIC_TOLERANCE: f64 = 1e-6;

struct RawNode {
    label: Option<String>,
    length: Option<f64>,
    children: Vec<RawNode>,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error<T>(&self, msg: impl Into<String>) -> Result<T, NewickError> {
        Err(NewickError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        loop {
            match self.src.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    while let Some(&b) = self.src.get(self.pos) {
                        self.pos += 1;
                        if b == b']' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), NewickError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected '{}'", byte as char))
        }
    }

    fn subtree(&mut self, is_root: bool) -> Result<RawNode, NewickError> {
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree(false)?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.error("expected ',' or ')'"),
                }
            }
        }
        let label = self.label()?;
        let length = if self.peek() == Some(b':') {
            self.pos += 1;
            Some(self.number()?)
        } else {
            None
        };
        if length.is_none() && !is_root {
            return self.error("missing branch length");
        }
        Ok(RawNode {
            label,
            length,
            children,
        })
    }

    fn label(&mut self) -> Result<Option<String>, NewickError> {
        match self.peek() {
            Some(b'\'') => {
                self.pos += 1;
                let mut out = Vec::new();
                loop {
                    match self.src.get(self.pos) {
                        None => return self.error("unterminated quoted label"),
                        Some(b'\'') if self.src.get(self.pos + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&b) => {
                            out.push(b);
                            self.pos += 1;
                        }
                    }
                }
                Ok(Some(String::from_utf8_lossy(&out).into_owned()))
            }
            _ => {
                let start = self.pos;
                while let Some(&b) = self.src.get(self.pos) {
                    if b"(),:;[]'".contains(&b) || b.is_ascii_whitespace() {
                        break;
                    }
                    self.pos += 1;
                }
                if self.pos == start {
                    Ok(None)
                } else {
                    Ok(Some(
                        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned(),
                    ))
                }
            }
        }
    }

    fn number(&mut self) -> Result<f64, NewickError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&b) = self.src.get(self.pos) {
            if b.is_ascii_digit() || b"+-.eE".contains(&b) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => {
                self.pos = start;
                self.error(format!("invalid branch length {text:?}"))
            }
        }
    }
}

/// Parses a single rooted Newick tree.
pub fn parse_newick(text: &str) -> Result<Tree, NewickError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let raw = p.subtree(true)?;
    p.expect(b';')?;
    if p.peek().is_some() {
        return p.error("trailing input after ';'");
    }
    if raw.children.is_empty() {
        return Err(TreeError::BadRoot(0).into());
    }

    let mut depth_max: f64 = 0.0;
    max_depth(&raw, 0.0, &mut depth_max);
    let snap = ULTRAMETRIC_TOLERANCE * depth_max;
    let clade = to_clade(&raw, 0.0, depth_max, snap);
    Ok(Tree::from_clade(&clade)?)
}

fn max_depth(node: &RawNode, depth: f64, out: &mut f64) {
    if node.children.is_empty() {
        *out = out.max(depth);
    }
    for c in &node.children {
        max_depth(c, depth + c.length.unwrap_or(0.0), out);
    }
}

fn to_clade(node: &RawNode, depth: f64, root_age: f64, snap: f64) -> Clade {
    let mut age = root_age - depth;
    if node.children.is_empty() && age <= snap {
        age = 0.0;
    }
    Clade {
        age,
        label: node.label.clone(),
        tip_state: None,
        children: node
            .children
            .iter()
            .map(|c| to_clade(c, depth + c.length.unwrap_or(0.0), root_age, snap))
            .collect(),
    }
}

/// Serialises a tree as Newick with shortest round-trip branch lengths.
pub fn write_newick(tree: &Tree) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out.push(';');
    out
}

fn write_node(tree: &Tree, id: usize, out: &mut String) {
    let node = tree.node(id);
    if !node.children.is_empty() {
        out.push('(');
        for (i, &c) in node.children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(tree, c, out);
        }
        out.push(')');
    }
    if let Some(label) = &node.label {
        write_label(label, out);
    }
    if node.parent.is_some() {
        let _ = write!(out, ":{}", tree.branch_length(id));
    }
}

fn write_label(label: &str, out: &mut String) {
    let needs_quotes = label.is_empty()
        || label
            .bytes()
            .any(|b| b"(),:;[]'".contains(&b) || b.is_ascii_whitespace());
    if needs_quotes {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(label);
    }
}
