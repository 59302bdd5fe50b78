//! Context-free grammars for the graphics DSLs.
//!
//! A [`Grammar`] is loaded from a small line-oriented text format (see
//! [`Grammar::load`]) and then frozen. Unit productions such as
//! `s: binop | circle | quad` are flattened at load time, so a syntax tree
//! node for `(Circle 1 2 3)` appearing in an `s` position is a single node
//! whose production context is `s` and whose head is `circle`.

mod continuation;
mod load;
mod parse;
mod sample;
mod sigma;
mod tree;

use std::collections::HashMap;
use std::fmt;

pub use continuation::Continuation;
pub use load::GrammarError;
pub use parse::{NodeSpan, ParseError, TokenSeq};
pub use sample::SampleError;
pub use sigma::SigmaSet;
pub use tree::{NodePath, SyntaxTree};

/// Index of a rule (nonterminal) in a grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u16);

/// Index of a terminal token in the grammar vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u16);

/// Index of a flattened production.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProdId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Token(TokenId),
    Rule(RuleId),
}

/// A rule as written in the grammar file.
#[derive(Debug, Clone)]
pub struct Rule {
    pub name: String,
    /// Alternatives exactly as written (unit alternatives not yet inlined).
    pub alternatives: Vec<Vec<Symbol>>,
    /// Flattened productions usable in a position expecting this rule.
    pub productions: Vec<ProdId>,
}

/// A flattened production: the derivation chain from the context rule down
/// through unit alternatives, and the symbols of the final alternative.
#[derive(Debug, Clone)]
pub struct Production {
    pub context: RuleId,
    /// `(rule, alternative index)` pairs from `context` to the head rule.
    pub chain: Vec<(RuleId, usize)>,
    pub symbols: Vec<Symbol>,
    /// Rule-typed child slots of `symbols`, in order.
    pub child_rules: Vec<RuleId>,
    pub primitive: bool,
}

impl Production {
    /// The rule whose alternative is actually expanded (last link of the chain).
    pub fn head(&self) -> RuleId {
        self.chain.last().map(|&(r, _)| r).unwrap_or(self.context)
    }
}

/// An immutable context-free grammar with primitive annotations.
#[derive(Debug, Clone)]
pub struct Grammar {
    name: String,
    rules: Vec<Rule>,
    productions: Vec<Production>,
    start: RuleId,
    vocabulary: Vec<String>,
    token_index: HashMap<String, TokenId>,
    aliases: HashMap<String, TokenId>,
    rule_index: HashMap<String, RuleId>,
    primitive_heads: Vec<String>,
    rule_sigma: Vec<SigmaSet>,
    prod_sigma: Vec<SigmaSet>,
    multi_valued: Vec<bool>,
}

impl Grammar {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start(&self) -> RuleId {
        self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.0 as usize]
    }

    pub fn rule_name(&self, id: RuleId) -> &str {
        &self.rules[id.0 as usize].name
    }

    pub fn rule_id(&self, name: &str) -> Option<RuleId> {
        self.rule_index.get(name).copied()
    }

    pub fn production(&self, id: ProdId) -> &Production {
        &self.productions[id.0 as usize]
    }

    pub fn productions_of(&self, rule: RuleId) -> &[ProdId] {
        &self.rules[rule.0 as usize].productions
    }

    /// Terminal tokens in order of first appearance in the grammar file.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn token_text(&self, id: TokenId) -> &str {
        &self.vocabulary[id.0 as usize]
    }

    /// Resolves a token spelling, accepting declared aliases.
    pub fn token_id(&self, text: &str) -> Option<TokenId> {
        self.token_index
            .get(text)
            .or_else(|| self.aliases.get(text))
            .copied()
    }

    pub fn primitive_heads(&self) -> &[String] {
        &self.primitive_heads
    }

    /// Achievable primitive counts for subtrees derived from `rule`.
    pub fn rule_sigma(&self, rule: RuleId) -> SigmaSet {
        self.rule_sigma[rule.0 as usize]
    }

    pub fn production_sigma(&self, prod: ProdId) -> SigmaSet {
        self.prod_sigma[prod.0 as usize]
    }

    /// Whether `rule` derives at least two distinct subtrees. Only such
    /// positions can host a mutation.
    pub fn is_mutable(&self, rule: RuleId) -> bool {
        self.multi_valued[rule.0 as usize]
    }

    /// Text of a single-terminal leaf, `None` for compound nodes.
    pub fn leaf_text(&self, t: &SyntaxTree) -> Option<&str> {
        match self.production(t.prod()).symbols.as_slice() {
            [Symbol::Token(tok)] => Some(self.token_text(*tok)),
            _ => None,
        }
    }

    /// Numeric value of a range leaf: a base-36 digit or a `<rule>_<n>`
    /// spelling.
    pub fn leaf_value(&self, t: &SyntaxTree) -> Option<u32> {
        let text = self.leaf_text(t)?;
        if let Some((_, n)) = text.rsplit_once('_') {
            return n.parse().ok();
        }
        let mut chars = text.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => c.to_digit(36),
            _ => None,
        }
    }

    /// Name of the head of a production: the rule name for compound
    /// productions, the token text for single-terminal leaves.
    pub fn head_name(&self, prod: ProdId) -> &str {
        let p = self.production(prod);
        match p.symbols.as_slice() {
            [Symbol::Token(t)] => self.token_text(*t),
            _ => self.rule_name(p.head()),
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            write!(f, "{}:", rule.name)?;
            for (i, alt) in rule.alternatives.iter().enumerate() {
                if i > 0 {
                    write!(f, " |")?;
                }
                for sym in alt {
                    match sym {
                        Symbol::Token(t) => write!(f, " {}", self.token_text(*t))?,
                        Symbol::Rule(r) => write!(f, " {}", self.rule_name(*r))?,
                    }
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// The grammar files shipped with the crate.
pub mod shipped {
    pub const CSG2D: &str = include_str!("../../../../grammars/csg2d.grammar");
    pub const TINYSVG: &str = include_str!("../../../../grammars/tinysvg.grammar");
    pub const RAINBOW: &str = include_str!("../../../../grammars/rainbow.grammar");
}
