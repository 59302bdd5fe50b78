//! Tokenizing, parsing and printing programs.
//!
//! The parser is a backtracking recursive descent over the flattened
//! productions. Shipped grammars are parenthesized, so every production is
//! decided within two tokens and the parse is linear in practice. A token
//! sequence with two complete derivations is rejected as ambiguous.

use thiserror::Error;

use super::{Grammar, NodePath, RuleId, Symbol, SyntaxTree, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown token `{text}` at index {index}")]
    UnknownToken { index: usize, text: String },
    #[error("syntax error at token {index}")]
    Syntax { index: usize },
    #[error("ambiguous derivation")]
    Ambiguous,
    #[error("malformed tree: {0}")]
    Structure(String),
}

/// Token span `[start, end)` of a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpan {
    pub path: NodePath,
    pub start: usize,
    pub end: usize,
}

/// A tokenized program with the span of every syntax tree node (preorder).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub spans: Vec<NodeSpan>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self, g: &Grammar) -> Vec<String> {
        self.tokens.iter().map(|&t| g.token_text(t).to_string()).collect()
    }

    pub fn span_of(&self, path: &NodePath) -> Option<&NodeSpan> {
        self.spans.iter().find(|s| &s.path == path)
    }

    /// The outermost node whose span starts at token `pos`.
    pub fn node_at(&self, pos: usize) -> Option<&NodePath> {
        self.spans.iter().find(|s| s.start == pos).map(|s| &s.path)
    }

    /// Printed text plus the character offset of every token.
    pub fn layout(&self, g: &Grammar) -> (String, Vec<usize>) {
        layout_tokens(g, &self.tokens)
    }

    pub fn to_text(&self, g: &Grammar) -> String {
        self.layout(g).0
    }
}

/// Joins tokens with single spaces, omitting the space after `(` and before `)`.
pub(crate) fn layout_tokens(g: &Grammar, tokens: &[TokenId]) -> (String, Vec<usize>) {
    let mut out = String::new();
    let mut offsets = Vec::with_capacity(tokens.len());
    let mut prev: Option<&str> = None;
    for &t in tokens {
        let text = g.token_text(t);
        if let Some(p) = prev {
            if p != "(" && text != ")" {
                out.push(' ');
            }
        }
        offsets.push(out.len());
        out.push_str(text);
        prev = Some(text);
    }
    (out, offsets)
}

struct Parser<'a> {
    g: &'a Grammar,
    tokens: &'a [TokenId],
    furthest: usize,
}

impl<'a> Parser<'a> {
    fn fail_at(&mut self, index: usize) {
        self.furthest = self.furthest.max(index);
    }

    fn rule(&mut self, rule: RuleId, pos: usize) -> Vec<(SyntaxTree, usize)> {
        let mut out = Vec::new();
        for &prod in self.g.productions_of(rule) {
            let p = self.g.production(prod);
            // Partial results: children parsed so far and the next position.
            let mut states: Vec<(Vec<SyntaxTree>, usize)> = vec![(Vec::new(), pos)];
            for sym in &p.symbols {
                let mut next = Vec::new();
                for (children, at) in states {
                    match *sym {
                        Symbol::Token(t) => {
                            if self.tokens.get(at) == Some(&t) {
                                next.push((children, at + 1));
                            } else {
                                self.fail_at(at);
                            }
                        }
                        Symbol::Rule(r) => {
                            for (child, end) in self.rule(r, at) {
                                let mut c = children.clone();
                                c.push(child);
                                next.push((c, end));
                            }
                        }
                    }
                }
                states = next;
                if states.is_empty() {
                    break;
                }
            }
            for (children, end) in states {
                out.push((SyntaxTree::assemble(self.g, prod, children), end));
            }
        }
        out
    }
}

impl Grammar {
    /// Splits program text into tokens. Parentheses need not be separated
    /// by whitespace.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ParseError> {
        let mut out = Vec::new();
        let mut pieces: Vec<&str> = Vec::new();
        for word in text.split_whitespace() {
            let mut rest = word;
            while !rest.is_empty() {
                if let Some(r) = rest.strip_prefix('(') {
                    pieces.push("(");
                    rest = r;
                } else if let Some(r) = rest.strip_prefix(')') {
                    pieces.push(")");
                    rest = r;
                } else {
                    let end = rest.find(['(', ')']).unwrap_or(rest.len());
                    pieces.push(&rest[..end]);
                    rest = &rest[end..];
                }
            }
        }
        for (index, piece) in pieces.into_iter().enumerate() {
            let id = self.token_id(piece).ok_or_else(|| ParseError::UnknownToken {
                index,
                text: piece.to_string(),
            })?;
            out.push(id);
        }
        Ok(out)
    }

    /// Parses a complete program from the start rule.
    pub fn parse(&self, tokens: &[TokenId]) -> Result<SyntaxTree, ParseError> {
        self.parse_rule(self.start(), tokens)
    }

    /// Parses `tokens` as exactly one derivation of `rule`.
    pub fn parse_rule(&self, rule: RuleId, tokens: &[TokenId]) -> Result<SyntaxTree, ParseError> {
        let mut parser = Parser {
            g: self,
            tokens,
            furthest: 0,
        };
        let results = parser.rule(rule, 0);
        let mut complete = Vec::new();
        for (tree, end) in results {
            if end == tokens.len() {
                complete.push(tree);
            } else {
                parser.fail_at(end);
            }
        }
        match complete.len() {
            0 => Err(ParseError::Syntax {
                index: parser.furthest.min(tokens.len()),
            }),
            1 => Ok(complete.pop().unwrap()),
            _ => Err(ParseError::Ambiguous),
        }
    }

    pub fn parse_text(&self, text: &str) -> Result<SyntaxTree, ParseError> {
        self.parse(&self.tokenize(text)?)
    }

    pub fn parse_rule_text(&self, rule: RuleId, text: &str) -> Result<SyntaxTree, ParseError> {
        self.parse_rule(rule, &self.tokenize(text)?)
    }

    /// Flattens a tree into tokens, recording the span of every node.
    pub fn serialize(&self, tree: &SyntaxTree) -> TokenSeq {
        fn walk(g: &Grammar, t: &SyntaxTree, path: &mut Vec<usize>, seq: &mut TokenSeq) {
            let span_index = seq.spans.len();
            seq.spans.push(NodeSpan {
                path: NodePath(path.clone()),
                start: seq.tokens.len(),
                end: 0,
            });
            let mut child = 0;
            for sym in &g.production(t.prod()).symbols {
                match sym {
                    Symbol::Token(tok) => seq.tokens.push(*tok),
                    Symbol::Rule(_) => {
                        path.push(child);
                        walk(g, &t.children()[child], path, seq);
                        path.pop();
                        child += 1;
                    }
                }
            }
            seq.spans[span_index].end = seq.tokens.len();
        }
        let mut seq = TokenSeq::default();
        walk(self, tree, &mut Vec::new(), &mut seq);
        seq
    }

    /// Token ids of a tree without span bookkeeping.
    pub fn tokens_of(&self, tree: &SyntaxTree) -> Vec<TokenId> {
        fn walk(g: &Grammar, t: &SyntaxTree, out: &mut Vec<TokenId>) {
            let mut child = 0;
            for sym in &g.production(t.prod()).symbols {
                match sym {
                    Symbol::Token(tok) => out.push(*tok),
                    Symbol::Rule(_) => {
                        walk(g, &t.children()[child], out);
                        child += 1;
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(self, tree, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACE_START: &str =
        "(+ (+ (+ (Circle A D 4) (Quad F E 4 6 K)) (Quad 3 E C 2 M)) (Circle C 2 1))";

    #[test]
    fn parses_trace_expression() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(+ (Quad 1 0 A 3 H) (Circle 8 2 1))").unwrap();
        assert_eq!(g.head_name(t.prod()), "binop");
        assert_eq!(t.children().len(), 3);
        let prims = t.children().iter().filter(|c| c.is_primitive()).count();
        assert_eq!(prims, 2);
        assert_eq!(t.sigma(), 2);
        assert_eq!(
            t.to_text(&g),
            "(+ (Quad 1 0 A 3 angle_45) (Circle 8 2 1))"
        );
    }

    #[test]
    fn sigma_examples() {
        let g = Grammar::csg2d();
        assert_eq!(g.parse_text("(Circle 8 2 1)").unwrap().sigma(), 1);
        assert_eq!(g.parse_text(TRACE_START).unwrap().sigma(), 4);
    }

    #[test]
    fn arity_violation_reports_index() {
        let g = Grammar::csg2d();
        assert_eq!(g.parse_text("( + )"), Err(ParseError::Syntax { index: 2 }));
        assert_eq!(
            g.parse_text("(Circle 1 2)"),
            Err(ParseError::Syntax { index: 4 })
        );
        assert_eq!(
            g.parse_text("(Circle 1 2 3) (Circle 1 2 3)"),
            Err(ParseError::Syntax { index: 6 })
        );
        assert!(matches!(
            g.parse_text("(Circle 1 2 Z)"),
            Err(ParseError::UnknownToken { index: 4, .. })
        ));
    }

    #[test]
    fn ambiguity_is_rejected() {
        let g = Grammar::load("amb", "s: a | b\na: (X)\nb: (X)\n").unwrap();
        assert_eq!(g.parse_text("(X)"), Err(ParseError::Ambiguous));
    }

    #[test]
    fn spans_nest() {
        let g = Grammar::csg2d();
        let t = g.parse_text(TRACE_START).unwrap();
        let seq = g.serialize(&t);
        assert_eq!(seq.spans.len(), t.size() as usize);
        for outer in &seq.spans {
            for inner in &seq.spans {
                if outer.path != inner.path && outer.path.is_prefix_of(&inner.path) {
                    assert!(outer.start < inner.start || inner.end < outer.end);
                    assert!(outer.start <= inner.start && inner.end <= outer.end);
                }
            }
        }
        assert_eq!(seq.spans[0].start, 0);
        assert_eq!(seq.spans[0].end, seq.len());
    }

    #[test]
    fn token_count_is_terminals_plus_parens() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(Circle 8 2 1)").unwrap();
        let seq = g.serialize(&t);
        assert_eq!(seq.texts(&g), vec!["(", "Circle", "8", "2", "1", ")"]);
        assert_eq!(seq.to_text(&g), "(Circle 8 2 1)");
    }
}
