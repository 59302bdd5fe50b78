//! Grammar file format.
//!
//! ```text
//! // comment
//! %start s
//! %primitives Circle Quad
//! %alias H angle_45
//! s: binop | circle | quad
//! binop: (op s s)
//! number: [0 to 15]
//! angle: [0 to 315 by 45]
//! circle: (Circle r=number x=number y=number)
//! ```
//!
//! One rule per line. Parentheses are always terminals. `label=name` is a
//! labeled reference to rule `name`. In a multi-symbol alternative a bare
//! lowercase identifier must name a rule; capitalized words and punctuation
//! are terminals. A single-word alternative is a rule reference if such a
//! rule exists; otherwise it is a terminal, unless a sibling alternative of
//! the same rule is a reference, in which case it is reported as undefined.
//!
//! Ranges `[a to b]` (or `[a - b]`, optionally `by step`) expand to one
//! terminal per value. When every value fits in one base-36 digit the
//! tokens are the digits themselves (`0`..`9`, `A`..`F`); otherwise they
//! are spelled `<rule>_<value>`.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{Grammar, ProdId, Production, Rule, RuleId, SigmaSet, Symbol, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("line {line}: undefined rule `{name}`")]
    UndefinedRule { name: String, line: usize },
    #[error("line {line}: duplicate rule `{name}`")]
    DuplicateRule { name: String, line: usize },
    #[error("line {line}: empty alternative")]
    EmptyAlternative { line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unit productions form a cycle through `{0}`")]
    UnitCycle(String),
    #[error("rule `{0}` is left-recursive")]
    LeftRecursive(String),
    #[error("rule `{0}` derives no finite program")]
    Unproductive(String),
    #[error("primitive `{0}` is neither a rule nor a terminal")]
    UnknownPrimitive(String),
    #[error("start rule `{0}` is not defined")]
    UnknownStart(String),
    #[error("grammar defines no rules")]
    NoRules,
}

#[derive(Debug)]
enum RawSym {
    Word { text: String, labeled: bool },
    Paren(char),
}

#[derive(Debug)]
struct RawRule {
    name: String,
    line: usize,
    /// `(alternative, from_range)`
    alternatives: Vec<(Vec<RawSym>, bool)>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_lower_identifier(s: &str) -> bool {
    is_identifier(s) && s.starts_with(|c: char| c.is_ascii_lowercase() || c == '_')
}

fn split_words(text: &str) -> Vec<RawSym> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while let Some(stripped) = rest.strip_prefix('(') {
            out.push(RawSym::Paren('('));
            rest = stripped;
        }
        let mut closing = 0;
        while let Some(stripped) = rest.strip_suffix(')') {
            closing += 1;
            rest = stripped;
        }
        if !rest.is_empty() {
            match rest.split_once('=') {
                Some((label, target)) if is_identifier(label) && !target.is_empty() => {
                    out.push(RawSym::Word {
                        text: target.to_string(),
                        labeled: true,
                    })
                }
                _ => out.push(RawSym::Word {
                    text: rest.to_string(),
                    labeled: false,
                }),
            }
        }
        for _ in 0..closing {
            out.push(RawSym::Paren(')'));
        }
    }
    out
}

fn parse_range(rule: &str, body: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let syntax = |message: &str| GrammarError::Syntax {
        line,
        message: message.to_string(),
    };
    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| syntax("malformed range"))?;
    let words: Vec<&str> = inner.split_whitespace().collect();
    let (lo, hi, step) = match words.as_slice() {
        [lo, "to" | "-", hi] => (*lo, *hi, "1"),
        [lo, "to" | "-", hi, "by", step] => (*lo, *hi, *step),
        _ => return Err(syntax("range must read `[lo to hi]` or `[lo to hi by step]`")),
    };
    let parse = |s: &str| s.parse::<u32>().map_err(|_| syntax("range bound is not an integer"));
    let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
    if step == 0 || lo > hi {
        return Err(syntax("empty range"));
    }
    let values: Vec<u32> = (lo..=hi).step_by(step as usize).collect();
    let digits = values.iter().all(|&v| v < 36);
    Ok(values
        .into_iter()
        .map(|v| {
            if digits {
                char::from_digit(v, 36).unwrap().to_ascii_uppercase().to_string()
            } else {
                format!("{rule}_{v}")
            }
        })
        .collect())
}

fn strip_comment(line: &str) -> &str {
    match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    }
}

impl Grammar {
    /// Loads a grammar from its text specification.
    pub fn load(name: &str, spec_text: &str) -> Result<Grammar, GrammarError> {
        let mut raw_rules: Vec<RawRule> = Vec::new();
        let mut start_name: Option<String> = None;
        let mut primitive_heads: Vec<String> = Vec::new();
        let mut raw_aliases: Vec<(String, String, usize)> = Vec::new();

        for (idx, full_line) in spec_text.lines().enumerate() {
            let line = idx + 1;
            let text = strip_comment(full_line).trim();
            if text.is_empty() {
                continue;
            }
            if let Some(directive) = text.strip_prefix('%') {
                let mut words = directive.split_whitespace();
                match words.next() {
                    Some("start") => match (words.next(), words.next()) {
                        (Some(s), None) => start_name = Some(s.to_string()),
                        _ => {
                            return Err(GrammarError::Syntax {
                                line,
                                message: "%start takes one rule name".into(),
                            })
                        }
                    },
                    Some("primitives") => primitive_heads.extend(words.map(str::to_string)),
                    Some("alias") => match (words.next(), words.next(), words.next()) {
                        (Some(a), Some(t), None) => {
                            raw_aliases.push((a.to_string(), t.to_string(), line))
                        }
                        _ => {
                            return Err(GrammarError::Syntax {
                                line,
                                message: "%alias takes a spelling and a token".into(),
                            })
                        }
                    },
                    other => {
                        return Err(GrammarError::Syntax {
                            line,
                            message: format!("unknown directive {:?}", other.unwrap_or("")),
                        })
                    }
                }
                continue;
            }
            let (name, body) = text.split_once(':').ok_or_else(|| GrammarError::Syntax {
                line,
                message: "expected `name: alternatives`".into(),
            })?;
            let name = name.trim();
            if !is_identifier(name) {
                return Err(GrammarError::Syntax {
                    line,
                    message: format!("invalid rule name `{name}`"),
                });
            }
            if raw_rules.iter().any(|r| r.name == name) {
                return Err(GrammarError::DuplicateRule {
                    name: name.to_string(),
                    line,
                });
            }
            let mut alternatives = Vec::new();
            for alt in body.split('|') {
                let alt = alt.trim();
                if alt.is_empty() {
                    return Err(GrammarError::EmptyAlternative { line });
                }
                if alt.starts_with('[') {
                    for token in parse_range(name, alt, line)? {
                        alternatives.push((
                            vec![RawSym::Word {
                                text: token,
                                labeled: false,
                            }],
                            true,
                        ));
                    }
                } else {
                    alternatives.push((split_words(alt), false));
                }
            }
            raw_rules.push(RawRule {
                name: name.to_string(),
                line,
                alternatives,
            });
        }

        if raw_rules.is_empty() {
            return Err(GrammarError::NoRules);
        }

        let rule_index: HashMap<String, RuleId> = raw_rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), RuleId(i as u16)))
            .collect();

        let mut vocabulary: Vec<String> = Vec::new();
        let mut token_index: HashMap<String, TokenId> = HashMap::new();
        let mut intern = |text: &str| -> TokenId {
            if let Some(&id) = token_index.get(text) {
                return id;
            }
            let id = TokenId(vocabulary.len() as u16);
            vocabulary.push(text.to_string());
            token_index.insert(text.to_string(), id);
            id
        };

        let mut rules: Vec<Rule> = Vec::with_capacity(raw_rules.len());
        for raw in &raw_rules {
            let has_single_reference = raw.alternatives.iter().any(|(alt, ranged)| {
                !ranged
                    && matches!(alt.as_slice(), [RawSym::Word { text, .. }] if rule_index.contains_key(text))
            });
            let mut alternatives = Vec::with_capacity(raw.alternatives.len());
            for (alt, ranged) in &raw.alternatives {
                let single = alt.len() == 1;
                let mut symbols = Vec::with_capacity(alt.len());
                for sym in alt {
                    let resolved = match sym {
                        RawSym::Paren(c) => Symbol::Token(intern(&c.to_string())),
                        RawSym::Word { text, .. } if *ranged => Symbol::Token(intern(text)),
                        RawSym::Word { text, labeled } => {
                            if let Some(&r) = rule_index.get(text) {
                                Symbol::Rule(r)
                            } else if *labeled
                                || (single && has_single_reference)
                                || (!single && is_lower_identifier(text))
                            {
                                return Err(GrammarError::UndefinedRule {
                                    name: text.clone(),
                                    line: raw.line,
                                });
                            } else {
                                Symbol::Token(intern(text))
                            }
                        }
                    };
                    symbols.push(resolved);
                }
                alternatives.push(symbols);
            }
            rules.push(Rule {
                name: raw.name.clone(),
                alternatives,
                productions: Vec::new(),
            });
        }

        let start = match &start_name {
            Some(s) => *rule_index
                .get(s)
                .ok_or_else(|| GrammarError::UnknownStart(s.clone()))?,
            None => RuleId(0),
        };

        for head in &primitive_heads {
            if !rule_index.contains_key(head) && !token_index.contains_key(head) {
                return Err(GrammarError::UnknownPrimitive(head.clone()));
            }
        }

        let mut aliases = HashMap::new();
        for (spelling, target, line) in raw_aliases {
            let id = *token_index.get(&target).ok_or_else(|| GrammarError::Syntax {
                line,
                message: format!("alias target `{target}` is not a terminal"),
            })?;
            if token_index.contains_key(&spelling) {
                return Err(GrammarError::Syntax {
                    line,
                    message: format!("alias `{spelling}` shadows a terminal"),
                });
            }
            aliases.insert(spelling, id);
        }

        check_left_recursion(&rules)?;

        let primitive_set: HashSet<&str> = primitive_heads.iter().map(String::as_str).collect();
        let mut productions: Vec<Production> = Vec::new();
        for r in 0..rules.len() {
            let mut flat = Vec::new();
            let mut visiting = vec![RuleId(r as u16)];
            flatten(&rules, RuleId(r as u16), &mut Vec::new(), &mut visiting, &mut flat)?;
            let mut ids = Vec::with_capacity(flat.len());
            for (chain, symbols) in flat {
                let primitive = chain
                    .iter()
                    .any(|&(rr, _)| primitive_set.contains(rules[rr.0 as usize].name.as_str()))
                    || symbols.iter().any(|s| match s {
                        Symbol::Token(t) => primitive_set.contains(vocabulary[t.0 as usize].as_str()),
                        Symbol::Rule(_) => false,
                    });
                let child_rules = symbols
                    .iter()
                    .filter_map(|s| match s {
                        Symbol::Rule(r) => Some(*r),
                        Symbol::Token(_) => None,
                    })
                    .collect();
                ids.push(ProdId(productions.len() as u32));
                productions.push(Production {
                    context: RuleId(r as u16),
                    chain,
                    symbols,
                    child_rules,
                    primitive,
                });
            }
            rules[r].productions = ids;
        }

        let (rule_sigma, prod_sigma) = sigma_fixpoint(&rules, &productions);
        for (i, set) in rule_sigma.iter().enumerate() {
            if set.is_empty() {
                return Err(GrammarError::Unproductive(rules[i].name.clone()));
            }
        }
        let multi_valued = multi_valued_fixpoint(&rules, &productions);

        Ok(Grammar {
            name: name.to_string(),
            rules,
            productions,
            start,
            vocabulary,
            token_index,
            aliases,
            rule_index,
            primitive_heads,
            rule_sigma,
            prod_sigma,
            multi_valued,
        })
    }

    pub fn csg2d() -> Grammar {
        Grammar::load("csg2d", super::shipped::CSG2D).expect("shipped csg2d grammar")
    }

    pub fn tinysvg() -> Grammar {
        Grammar::load("tinysvg", super::shipped::TINYSVG).expect("shipped tinysvg grammar")
    }

    pub fn rainbow() -> Grammar {
        Grammar::load("rainbow", super::shipped::RAINBOW).expect("shipped rainbow grammar")
    }
}

type FlatAlt = (Vec<(RuleId, usize)>, Vec<Symbol>);

fn flatten(
    rules: &[Rule],
    rule: RuleId,
    chain: &mut Vec<(RuleId, usize)>,
    visiting: &mut Vec<RuleId>,
    out: &mut Vec<FlatAlt>,
) -> Result<(), GrammarError> {
    for (ai, alt) in rules[rule.0 as usize].alternatives.iter().enumerate() {
        chain.push((rule, ai));
        match alt.as_slice() {
            [Symbol::Rule(inner)] => {
                if visiting.contains(inner) {
                    return Err(GrammarError::UnitCycle(rules[inner.0 as usize].name.clone()));
                }
                visiting.push(*inner);
                flatten(rules, *inner, chain, visiting, out)?;
                visiting.pop();
            }
            _ => out.push((chain.clone(), alt.clone())),
        }
        chain.pop();
    }
    Ok(())
}

fn check_left_recursion(rules: &[Rule]) -> Result<(), GrammarError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn visit(rules: &[Rule], r: usize, state: &mut [u8]) -> Result<(), GrammarError> {
        state[r] = 1;
        for alt in &rules[r].alternatives {
            if let Some(Symbol::Rule(next)) = alt.first() {
                let n = next.0 as usize;
                match state[n] {
                    1 => {
                        if alt.len() == 1 {
                            return Err(GrammarError::UnitCycle(rules[n].name.clone()));
                        }
                        return Err(GrammarError::LeftRecursive(rules[n].name.clone()));
                    }
                    0 => visit(rules, n, state)?,
                    _ => {}
                }
            }
        }
        state[r] = 2;
        Ok(())
    }
    let mut state = vec![0u8; rules.len()];
    for r in 0..rules.len() {
        if state[r] == 0 {
            visit(rules, r, &mut state)?;
        }
    }
    Ok(())
}

fn sigma_fixpoint(rules: &[Rule], productions: &[Production]) -> (Vec<SigmaSet>, Vec<SigmaSet>) {
    let mut rule_sets = vec![SigmaSet::EMPTY; rules.len()];
    let mut prod_sets = vec![SigmaSet::EMPTY; productions.len()];
    loop {
        let mut changed = false;
        for (pi, p) in productions.iter().enumerate() {
            let mut set = SigmaSet::single(p.primitive as u32);
            for c in &p.child_rules {
                set = set.sum(rule_sets[c.0 as usize]);
            }
            if set != prod_sets[pi] {
                prod_sets[pi] = set;
                changed = true;
            }
        }
        for (ri, r) in rules.iter().enumerate() {
            let set = r
                .productions
                .iter()
                .fold(SigmaSet::EMPTY, |acc, p| acc.union(prod_sets[p.0 as usize]));
            if set != rule_sets[ri] {
                rule_sets[ri] = set;
                changed = true;
            }
        }
        if !changed {
            return (rule_sets, prod_sets);
        }
    }
}

fn multi_valued_fixpoint(rules: &[Rule], productions: &[Production]) -> Vec<bool> {
    let mut multi: Vec<bool> = rules.iter().map(|r| r.productions.len() >= 2).collect();
    loop {
        let mut changed = false;
        for (ri, r) in rules.iter().enumerate() {
            if multi[ri] {
                continue;
            }
            let any = r.productions.iter().any(|p| {
                productions[p.0 as usize]
                    .child_rules
                    .iter()
                    .any(|c| multi[c.0 as usize])
            });
            if any {
                multi[ri] = true;
                changed = true;
            }
        }
        if !changed {
            return multi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_csg2d() {
        let g = Grammar::csg2d();
        let mut names: Vec<&str> = g.rules().iter().map(|r| r.name.as_str()).collect();
        names.sort();
        assert_eq!(names, vec!["angle", "binop", "circle", "number", "op", "quad", "s"]);
        assert_eq!(g.primitive_heads(), &["Circle".to_string(), "Quad".to_string()]);
        assert_eq!(g.rule_name(g.start()), "s");
        let number = g.rule_id("number").unwrap();
        assert_eq!(g.productions_of(number).len(), 16);
        assert!(g.token_id("F").is_some());
        assert!(g.token_id("angle_315").is_some());
        assert_eq!(g.token_id("H"), g.token_id("angle_45"));
        // s flattens into binop, circle, quad
        let s = g.rule_id("s").unwrap();
        let heads: Vec<&str> = g.productions_of(s).iter().map(|&p| g.head_name(p)).collect();
        assert_eq!(heads, vec!["binop", "circle", "quad"]);
    }

    #[test]
    fn vocabulary_has_no_duplicates_and_covers_terminals() {
        for g in [Grammar::csg2d(), Grammar::tinysvg(), Grammar::rainbow()] {
            let set: HashSet<&String> = g.vocabulary().iter().collect();
            assert_eq!(set.len(), g.vocabulary().len());
            for rule in g.rules() {
                for alt in &rule.alternatives {
                    for sym in alt {
                        if let Symbol::Token(t) = sym {
                            assert!((t.0 as usize) < g.vocabulary().len());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rainbow_lacks_move() {
        let g = Grammar::rainbow();
        assert!(g.rule_id("move").is_none());
        assert!(g.token_id("Move").is_none());
        assert!(Grammar::tinysvg().token_id("Move").is_some());
    }

    #[test]
    fn undefined_reference_is_named() {
        let err = Grammar::load("bad", "s: binop | shape\nbinop: (+ s s)\n").unwrap_err();
        assert_eq!(
            err,
            GrammarError::UndefinedRule {
                name: "shape".into(),
                line: 1
            }
        );
        let err = Grammar::load("bad", "s: (Circle r=radius)\n").unwrap_err();
        assert!(matches!(err, GrammarError::UndefinedRule { ref name, .. } if name == "radius"));
        let err = Grammar::load("bad", "s: c | (Arrange dir s s)\nc: (C)\n").unwrap_err();
        assert!(matches!(err, GrammarError::UndefinedRule { ref name, .. } if name == "dir"));
    }

    #[test]
    fn duplicate_and_empty_are_reported_with_line() {
        let err = Grammar::load("bad", "s: a\n\na: x\na: y\n").unwrap_err();
        assert_eq!(
            err,
            GrammarError::DuplicateRule {
                name: "a".into(),
                line: 4
            }
        );
        let err = Grammar::load("bad", "s: (A) | | (B)\n").unwrap_err();
        assert_eq!(err, GrammarError::EmptyAlternative { line: 1 });
    }

    #[test]
    fn rejects_left_recursion_and_unit_cycles() {
        assert!(matches!(
            Grammar::load("bad", "s: s + | x\n"),
            Err(GrammarError::LeftRecursive(_))
        ));
        assert!(matches!(
            Grammar::load("bad", "s: t | (X)\nt: s\n"),
            Err(GrammarError::UnitCycle(_))
        ));
    }

    #[test]
    fn rejects_unproductive_rules() {
        assert!(matches!(
            Grammar::load("bad", "s: (A t)\nt: (B t)\n"),
            Err(GrammarError::Unproductive(_))
        ));
    }

    #[test]
    fn sigma_sets() {
        let g = Grammar::csg2d();
        let s = g.rule_sigma(g.rule_id("s").unwrap());
        assert_eq!(s.min(), Some(1));
        assert!(!s.is_bounded());
        assert!(s.contains(8));
        let n = g.rule_sigma(g.rule_id("number").unwrap());
        assert_eq!(n.iter().collect::<Vec<_>>(), vec![0]);
        assert!(g.is_mutable(g.rule_id("op").unwrap()));
        assert!(g.is_mutable(g.rule_id("circle").unwrap()));
    }

    #[test]
    fn ranges() {
        let g = Grammar::load("r", "n: [0 - 9]\n").unwrap();
        assert_eq!(g.vocabulary().len(), 10);
        let g = Grammar::load("r", "a: [0 to 315 by 45]\n").unwrap();
        assert_eq!(g.vocabulary()[7], "a_315");
        assert!(Grammar::load("r", "a: [5 to 1]\n").is_err());
    }
}
