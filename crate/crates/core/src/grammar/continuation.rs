//! Next-token masks for grammar-constrained decoding.

use std::collections::{BTreeSet, HashSet};

use super::{Grammar, ParseError, RuleId, Symbol, TokenId};

/// A legal next step after a partial replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Continuation {
    Token(TokenId),
    /// The partial sequence is already a complete derivation.
    End,
}

type Stack = Vec<Symbol>;

impl Grammar {
    /// Expands nonterminals on top of each stack until every stack is empty
    /// or has a terminal on top. Terminates because the grammar has no left
    /// recursion and no empty alternatives.
    fn settle(&self, stacks: Vec<Stack>) -> HashSet<Stack> {
        let mut done = HashSet::new();
        let mut work = stacks;
        while let Some(mut stack) = work.pop() {
            match stack.pop() {
                Some(Symbol::Rule(r)) => {
                    for alt in &self.rule(r).alternatives {
                        let mut next = stack.clone();
                        next.extend(alt.iter().rev().copied());
                        work.push(next);
                    }
                }
                Some(tok @ Symbol::Token(_)) => {
                    stack.push(tok);
                    done.insert(stack);
                }
                None => {
                    done.insert(stack);
                }
            }
        }
        done
    }

    /// Set of tokens that can follow `partial` inside a derivation of
    /// `context`, plus [`Continuation::End`] if `partial` is already complete.
    ///
    /// Every rule is productive, so each surviving parser state can be
    /// completed; the result is therefore exact.
    pub fn legal_continuations(
        &self,
        context: RuleId,
        partial: &[TokenId],
    ) -> Result<BTreeSet<Continuation>, ParseError> {
        let mut stacks = self.settle(vec![vec![Symbol::Rule(context)]]);
        for (index, &tok) in partial.iter().enumerate() {
            let advanced: Vec<Stack> = stacks
                .into_iter()
                .filter_map(|mut s| match s.last() {
                    Some(Symbol::Token(t)) if *t == tok => {
                        s.pop();
                        Some(s)
                    }
                    _ => None,
                })
                .collect();
            if advanced.is_empty() {
                return Err(ParseError::Syntax { index });
            }
            stacks = self.settle(advanced);
        }
        Ok(stacks
            .iter()
            .map(|s| match s.last() {
                Some(Symbol::Token(t)) => Continuation::Token(*t),
                Some(Symbol::Rule(_)) => unreachable!("settled stacks have a terminal on top"),
                None => Continuation::End,
            })
            .collect())
    }
}
