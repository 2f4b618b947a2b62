//! Penn-style bracketed treebank reading, normalization and writing.

use std::fmt::Write as _;

use thiserror::Error;

use crate::category::Category;

/// POS tag of PTB null elements.
pub const NULL_TAG: &str = "-NONE-";

/// Labels that begin with a dash and must never be cut at it.
const RESERVED_MARKERS: &[&str] = &["-NONE-", "-LRB-", "-RRB-", "-NULL-"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreebankError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
}

impl TreebankError {
    fn at(pos: Pos, message: impl Into<String>) -> Self {
        TreebankError::Syntax {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    pub fn line(&self) -> usize {
        match self {
            TreebankError::Syntax { line, .. } => *line,
        }
    }
}

/// End-exclusive token interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub word: String,
    pub pos: Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    /// Preterminal: the tree's label is the POS tag of this word.
    Leaf(String),
    Phrase(Vec<Tree>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub label: Category,
    pub span: Span,
    pub node: Node,
}

impl Tree {
    pub fn preterminal(pos: Category, word: impl Into<String>) -> Tree {
        Tree {
            label: pos,
            span: Span::new(0, 1),
            node: Node::Leaf(word.into()),
        }
    }

    /// Builds a phrasal node, renumbering the children's spans so that the
    /// new tree starts at token 0.
    pub fn phrase(label: Category, children: Vec<Tree>) -> Tree {
        let mut tree = Tree {
            label,
            span: Span::new(0, 0),
            node: Node::Phrase(children),
        };
        tree.renumber(0);
        tree
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self.node, Node::Leaf(_))
    }

    pub fn children(&self) -> &[Tree] {
        match &self.node {
            Node::Leaf(_) => &[],
            Node::Phrase(children) => children,
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.span.len()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(Tree::node_count).sum::<usize>()
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.num_tokens());
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<Token>) {
        match &self.node {
            Node::Leaf(word) => out.push(Token {
                word: word.clone(),
                pos: self.label,
            }),
            Node::Phrase(children) => children.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    pub fn pos_tags(&self) -> Vec<Category> {
        self.tokens().into_iter().map(|t| t.pos).collect()
    }

    /// Reassigns spans left to right starting at `start`; returns the end.
    pub fn renumber(&mut self, start: usize) -> usize {
        let end = match &mut self.node {
            Node::Leaf(_) => start + 1,
            Node::Phrase(children) => children
                .iter_mut()
                .fold(start, |next, child| child.renumber(next)),
        };
        self.span = Span::new(start, end);
        end
    }

    /// Pre-order traversal of every node.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Tree)) {
        f(self);
        for child in self.children() {
            child.walk(f);
        }
    }
}

// ---------------------------------------------------------------------------
// Reading

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme {
    Open,
    Close,
    Atom(String),
}

fn lex(text: &str) -> (Vec<(Lexeme, Pos)>, Pos) {
    let mut out = Vec::new();
    let mut last = Pos { line: 1, column: 1 };
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim_start().starts_with('#') {
            last = Pos {
                line: line_no,
                column: line.chars().count() + 1,
            };
            continue;
        }
        let mut atom = String::new();
        let mut atom_pos = Pos {
            line: line_no,
            column: 1,
        };
        for (col, ch) in line.chars().enumerate() {
            let pos = Pos {
                line: line_no,
                column: col + 1,
            };
            if ch == '(' || ch == ')' || ch.is_whitespace() {
                if !atom.is_empty() {
                    out.push((Lexeme::Atom(std::mem::take(&mut atom)), atom_pos));
                }
                match ch {
                    '(' => out.push((Lexeme::Open, pos)),
                    ')' => out.push((Lexeme::Close, pos)),
                    _ => {}
                }
            } else {
                if atom.is_empty() {
                    atom_pos = pos;
                }
                atom.push(ch);
            }
        }
        if !atom.is_empty() {
            out.push((Lexeme::Atom(atom), atom_pos));
        }
        last = Pos {
            line: line_no,
            column: line.chars().count() + 1,
        };
    }
    (out, last)
}

struct Reader {
    lexemes: Vec<(Lexeme, Pos)>,
    at: usize,
    eof: Pos,
    tokens: usize,
}

impl Reader {
    fn peek(&self) -> Option<&(Lexeme, Pos)> {
        self.lexemes.get(self.at)
    }

    fn next(&mut self) -> Result<(Lexeme, Pos), TreebankError> {
        let item = self
            .lexemes
            .get(self.at)
            .cloned()
            .ok_or_else(|| TreebankError::at(self.eof, "unexpected end of input"))?;
        self.at += 1;
        Ok(item)
    }

    /// Parses the remainder of a node whose `(` has been consumed.
    fn node(&mut self, open: Pos) -> Result<Tree, TreebankError> {
        let start = self.tokens;
        let (lexeme, pos) = self.next()?;
        let label = match lexeme {
            Lexeme::Close => return Err(TreebankError::at(pos, "empty brackets")),
            Lexeme::Open => {
                // unlabeled wrapper: `( (S ...) )`
                self.at -= 1;
                Category::top()
            }
            Lexeme::Atom(label) => Category::new(label.trim()),
        };
        if let Some((Lexeme::Atom(word), _)) = self.peek() {
            let word = word.clone();
            self.at += 1;
            let (lexeme, pos) = self.next()?;
            if lexeme != Lexeme::Close {
                return Err(TreebankError::at(
                    pos,
                    format!("preterminal {label} must dominate exactly one word"),
                ));
            }
            self.tokens += 1;
            return Ok(Tree {
                label,
                span: Span::new(start, self.tokens),
                node: Node::Leaf(word),
            });
        }
        let mut children = Vec::new();
        loop {
            let (lexeme, pos) = self.next()?;
            match lexeme {
                Lexeme::Open => children.push(self.node(pos)?),
                Lexeme::Close => break,
                Lexeme::Atom(word) => {
                    return Err(TreebankError::at(
                        pos,
                        format!("unexpected word {word:?} among constituents"),
                    ))
                }
            }
        }
        if children.is_empty() {
            return Err(TreebankError::at(open, format!("constituent {label} has no children")));
        }
        Ok(Tree {
            label,
            span: Span::new(start, self.tokens),
            node: Node::Phrase(children),
        })
    }
}

fn check_balance(lexemes: &[(Lexeme, Pos)], eof: Pos) -> Result<(), TreebankError> {
    let mut depth = 0usize;
    for (lexeme, pos) in lexemes {
        match lexeme {
            Lexeme::Open => depth += 1,
            Lexeme::Close if depth == 0 => {
                return Err(TreebankError::at(*pos, "unbalanced parentheses: unexpected `)`"))
            }
            Lexeme::Close => depth -= 1,
            Lexeme::Atom(word) if depth == 0 => {
                return Err(TreebankError::at(
                    *pos,
                    format!("unexpected {word:?} outside brackets"),
                ))
            }
            Lexeme::Atom(_) => {}
        }
    }
    if depth > 0 {
        return Err(TreebankError::at(
            eof,
            format!("unbalanced parentheses: {depth} unclosed at end of input"),
        ));
    }
    Ok(())
}

/// Reads every top-level bracketed expression in `text`. Spans are numbered
/// per sentence. No normalization is applied.
pub fn read_treebank(text: &str) -> Result<Vec<Tree>, TreebankError> {
    let (lexemes, eof) = lex(text);
    check_balance(&lexemes, eof)?;
    let mut reader = Reader {
        lexemes,
        at: 0,
        eof,
        tokens: 0,
    };
    let mut trees = Vec::new();
    while let Some((_, pos)) = reader.peek().cloned() {
        reader.next()?;
        reader.tokens = 0;
        trees.push(reader.node(pos)?);
    }
    Ok(trees)
}

// ---------------------------------------------------------------------------
// Normalization

/// Strips function tags and coindices: everything from the first `-` or
/// `=` after the first character. Reserved markers are left alone.
pub fn strip_label(label: &str) -> &str {
    if label.starts_with('-') || RESERVED_MARKERS.contains(&label) {
        return label;
    }
    let first = label.chars().next().map_or(0, char::len_utf8);
    match label[first..].find(['-', '=']) {
        Some(at) => &label[..first + at],
        None => label,
    }
}

/// Trace and null pseudo-words: `-NULL-`, `*`, `*T*-1`, `*-2`, `*?*`, ...
pub fn is_null_word(word: &str) -> bool {
    if word == "-NULL-" || word == "-NONE-" {
        return true;
    }
    let Some(rest) = word.strip_prefix('*') else {
        return false;
    };
    let core = match rest.rfind('-') {
        Some(at) if rest[at + 1..].chars().all(|c| c.is_ascii_digit()) && at + 1 < rest.len() => {
            &rest[..at]
        }
        _ => rest,
    };
    core.is_empty()
        || (core.ends_with('*')
            && core[..core.len() - 1]
                .chars()
                .all(|c| c.is_ascii_uppercase() || c == '?'))
}

fn is_null_leaf(pos: Category, word: &str) -> bool {
    pos.name() == NULL_TAG || is_null_word(word)
}

fn normalize_node(tree: &Tree) -> Option<Tree> {
    let label = Category::new(strip_label(tree.label.name()));
    match &tree.node {
        Node::Leaf(word) => {
            if is_null_leaf(tree.label, word) {
                None
            } else {
                Some(Tree {
                    label,
                    span: tree.span,
                    node: Node::Leaf(word.clone()),
                })
            }
        }
        Node::Phrase(children) => {
            let kept: Vec<Tree> = children.iter().filter_map(normalize_node).collect();
            if kept.is_empty() {
                None
            } else {
                Some(Tree {
                    label,
                    span: tree.span,
                    node: Node::Phrase(kept),
                })
            }
        }
    }
}

/// Label cleanup and null-element removal. Returns `None` when nothing but
/// null elements remain.
pub fn normalize(tree: &Tree) -> Option<Tree> {
    let mut out = normalize_node(tree)?;
    out.renumber(0);
    Some(out)
}

// ---------------------------------------------------------------------------
// Writing

/// Single-line bracketed form. The `TOP` wrapper is written unlabeled.
pub fn write_tree(tree: &Tree) -> String {
    let mut out = String::new();
    write_into(tree, &mut out);
    out
}

fn write_into(tree: &Tree, out: &mut String) {
    match &tree.node {
        Node::Leaf(word) => {
            let _ = write!(out, "({} {})", tree.label, word);
        }
        Node::Phrase(children) => {
            out.push('(');
            if !tree.label.is_top() {
                out.push_str(tree.label.name());
            }
            for child in children {
                out.push(' ');
                write_into(child, out);
            }
            out.push(')');
        }
    }
}

/// One tree per line.
pub fn write_treebank(trees: &[Tree]) -> String {
    let mut out = String::new();
    for tree in trees {
        out.push_str(&write_tree(tree));
        out.push('\n');
    }
    out
}
