//! Forward noising: small, grammar-valid replacement mutations.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grammar::{Grammar, NodePath, RuleId, SampleError, SyntaxTree};

/// Largest primitive count a single mutation may introduce.
pub const DEFAULT_SIGMA_SMALL: u32 = 2;

const RESAMPLE_ATTEMPTS: usize = 100;
const ENUMERATION_LIMIT: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutationError {
    #[error("path {0} does not resolve")]
    InvalidPath(NodePath),
    #[error("replacement derives `{found}` but node at {path} expects `{expected}`")]
    ProductionMismatch {
        path: NodePath,
        expected: String,
        found: String,
    },
    #[error("replacement has {sigma} primitives, limit is {limit}")]
    TooLarge { sigma: u32, limit: u32 },
    #[error("replacement at {0} is identical to the original")]
    Unchanged(NodePath),
    #[error("tree has no mutable candidate node")]
    NoCandidates,
    #[error("no alternative value exists for node at {0}")]
    NoAlternative(NodePath),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Replace the node at `target_path` with `replacement`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub target_path: NodePath,
    pub replacement: SyntaxTree,
}

/// Nodes with at most `sigma_small` primitives whose production context
/// admits more than one value, in preorder.
pub fn candidate_nodes(g: &Grammar, t: &SyntaxTree, sigma_small: u32) -> Vec<NodePath> {
    t.nodes()
        .into_iter()
        .filter(|(_, n)| n.sigma() <= sigma_small && g.is_mutable(n.rule()))
        .map(|(p, _)| p)
        .collect()
}

/// Draws a replacement for `original` from its production context, distinct
/// from it, with at most `sigma_small` primitives.
pub fn sample_replacement<R: Rng + ?Sized>(
    g: &Grammar,
    original: &SyntaxTree,
    path: &NodePath,
    sigma_small: u32,
    rng: &mut R,
) -> Result<SyntaxTree, MutationError> {
    let rule = original.rule();
    if g.rule_sigma(rule).window(-1, sigma_small as i32).is_empty() {
        return Err(MutationError::NoAlternative(path.clone()));
    }
    for _ in 0..RESAMPLE_ATTEMPTS {
        let candidate = g.constrained_sample(rule, -1, sigma_small as i32, rng)?;
        if &candidate != original {
            return Ok(candidate);
        }
    }
    let all = g
        .enumerate(rule, sigma_small, ENUMERATION_LIMIT)
        .ok_or_else(|| MutationError::NoAlternative(path.clone()))?;
    let others: Vec<SyntaxTree> = all.into_iter().filter(|c| c != original).collect();
    others
        .choose(rng)
        .cloned()
        .ok_or_else(|| MutationError::NoAlternative(path.clone()))
}

/// Uniform-node mutation: pick a candidate uniformly, then a replacement.
pub fn sample_mutation<R: Rng + ?Sized>(
    g: &Grammar,
    t: &SyntaxTree,
    sigma_small: u32,
    rng: &mut R,
) -> Result<Mutation, MutationError> {
    let candidates = candidate_nodes(g, t, sigma_small);
    let path = candidates.choose(rng).ok_or(MutationError::NoCandidates)?.clone();
    mutate_at(g, t, path, sigma_small, rng)
}

/// Rule-balanced mutation: pick a production context uniformly among those
/// present in the candidate set, then a candidate with that context.
pub fn sample_mutation_balanced<R: Rng + ?Sized>(
    g: &Grammar,
    t: &SyntaxTree,
    sigma_small: u32,
    rng: &mut R,
) -> Result<Mutation, MutationError> {
    let candidates = candidate_nodes(g, t, sigma_small);
    if candidates.is_empty() {
        return Err(MutationError::NoCandidates);
    }
    let rule_of = |p: &NodePath| t.subtree(p).map(|n| n.rule()).expect("candidate path");
    let mut rules: Vec<RuleId> = candidates.iter().map(rule_of).collect();
    rules.sort();
    rules.dedup();
    let rule = *rules.choose(rng).expect("nonempty");
    let matching: Vec<&NodePath> = candidates.iter().filter(|p| rule_of(p) == rule).collect();
    let path = (*matching.choose(rng).expect("nonempty")).clone();
    mutate_at(g, t, path, sigma_small, rng)
}

fn mutate_at<R: Rng + ?Sized>(
    g: &Grammar,
    t: &SyntaxTree,
    path: NodePath,
    sigma_small: u32,
    rng: &mut R,
) -> Result<Mutation, MutationError> {
    let original = t
        .subtree(&path)
        .ok_or_else(|| MutationError::InvalidPath(path.clone()))?;
    let replacement = sample_replacement(g, original, &path, sigma_small, rng)?;
    Ok(Mutation {
        target_path: path,
        replacement,
    })
}

/// Applies a mutation, rebuilding only the path from the root.
pub fn apply(g: &Grammar, t: &SyntaxTree, m: &Mutation) -> Result<SyntaxTree, MutationError> {
    let node = t
        .subtree(&m.target_path)
        .ok_or_else(|| MutationError::InvalidPath(m.target_path.clone()))?;
    if node.rule() != m.replacement.rule() {
        return Err(MutationError::ProductionMismatch {
            path: m.target_path.clone(),
            expected: g.rule_name(node.rule()).to_string(),
            found: g.rule_name(m.replacement.rule()).to_string(),
        });
    }
    t.replace(&m.target_path.0, m.replacement.clone())
        .ok_or_else(|| MutationError::InvalidPath(m.target_path.clone()))
}

/// Checks that `m` lies in the small-mutation action space for `t`.
pub fn validate(g: &Grammar, t: &SyntaxTree, m: &Mutation, sigma_small: u32) -> Result<(), MutationError> {
    let node = t
        .subtree(&m.target_path)
        .ok_or_else(|| MutationError::InvalidPath(m.target_path.clone()))?;
    if node.rule() != m.replacement.rule() {
        return Err(MutationError::ProductionMismatch {
            path: m.target_path.clone(),
            expected: g.rule_name(node.rule()).to_string(),
            found: g.rule_name(m.replacement.rule()).to_string(),
        });
    }
    if m.replacement.sigma() > sigma_small {
        return Err(MutationError::TooLarge {
            sigma: m.replacement.sigma(),
            limit: sigma_small,
        });
    }
    if node == &m.replacement {
        return Err(MutationError::Unchanged(m.target_path.clone()));
    }
    Ok(())
}

/// States `z_0 .. z_s` of a forward noising run.
#[derive(Debug, Clone)]
pub struct NoiseChain {
    pub states: Vec<SyntaxTree>,
    pub mutations: Vec<Mutation>,
    pub seed: u64,
}

impl NoiseChain {
    pub fn last(&self) -> &SyntaxTree {
        self.states.last().expect("chain has z0")
    }
}

/// Applies `steps` balanced mutations to `z0`.
pub fn noise_chain(
    g: &Grammar,
    z0: &SyntaxTree,
    steps: usize,
    sigma_small: u32,
    seed: u64,
) -> Result<NoiseChain, MutationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise_chain_with(g, z0, steps, sigma_small, seed, &mut rng)
}

pub(crate) fn noise_chain_with<R: Rng + ?Sized>(
    g: &Grammar,
    z0: &SyntaxTree,
    steps: usize,
    sigma_small: u32,
    seed: u64,
    rng: &mut R,
) -> Result<NoiseChain, MutationError> {
    let mut states = vec![z0.clone()];
    let mut mutations = Vec::with_capacity(steps);
    for _ in 0..steps {
        let current = states.last().unwrap();
        let m = sample_mutation_balanced(g, current, sigma_small, rng)?;
        let next = apply(g, current, &m)?;
        mutations.push(m);
        states.push(next);
    }
    Ok(NoiseChain {
        states,
        mutations,
        seed,
    })
}

/// Two-line rendering of a mutation: the expression, then a caret
/// underline of the replaced span followed by `--> replacement`.
pub fn trace_lines(g: &Grammar, t: &SyntaxTree, m: &Mutation) -> (String, String) {
    let seq = g.serialize(t);
    let (text, offsets) = seq.layout(g);
    let span = seq.span_of(&m.target_path).expect("mutation path has a span");
    let start = offsets[span.start];
    let last = span.end - 1;
    let end = offsets[last] + g.token_text(seq.tokens[last]).len();
    let underline = format!(
        "{}{} --> {}",
        " ".repeat(start),
        "^".repeat(end - start),
        m.replacement.to_text(g)
    );
    (text, underline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    const OPENING: &str =
        "(+ (+ (+ (Circle A D 4) (Quad F E 4 6 K)) (Quad 3 E C 2 M)) (Circle C 2 1))";

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_primitive_candidates() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(Circle 1 2 3)").unwrap();
        let c = candidate_nodes(&g, &t, 2);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0], NodePath::root());
    }

    #[test]
    fn large_root_is_not_a_candidate() {
        let g = Grammar::csg2d();
        let mut r = rng(5);
        let t = g.constrained_sample(g.start(), 7, 8, &mut r).unwrap();
        let c = candidate_nodes(&g, &t, 2);
        assert!(!c.contains(&NodePath::root()));
        for p in &c {
            assert!(t.subtree(p).unwrap().sigma() <= 2);
        }
    }

    #[test]
    fn figure_style_candidates() {
        // Every leaf plus every subexpression with at most two primitives.
        let g = Grammar::csg2d();
        let t = g.parse_text(OPENING).unwrap();
        let c = candidate_nodes(&g, &t, 2);
        let expected: Vec<NodePath> = t
            .nodes()
            .into_iter()
            .filter(|(_, n)| n.children().is_empty() || n.sigma() <= 2)
            .map(|(p, _)| p)
            .collect();
        assert_eq!(c, expected);
        // root (4), its left child (3) are excluded
        assert!(!c.contains(&NodePath(vec![])));
        assert!(!c.contains(&NodePath(vec![1])));
        assert!(c.contains(&NodePath(vec![1, 1])));
    }

    #[test]
    fn trace_step_radius() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(+ (Quad 1 0 A 3 H) (Circle C 2 1))").unwrap();
        let m = Mutation {
            target_path: NodePath(vec![2, 0]),
            replacement: g.parse_rule_text(g.rule_id("number").unwrap(), "4").unwrap(),
        };
        validate(&g, &t, &m, 2).unwrap();
        let out = apply(&g, &t, &m).unwrap();
        assert_eq!(out.to_text(&g), "(+ (Quad 1 0 A 3 angle_45) (Circle 4 2 1))");
        let (_, underline) = trace_lines(&g, &t, &m);
        assert!(underline.ends_with("^ --> 4"));
    }

    #[test]
    fn apply_trace_subtree() {
        let g = Grammar::csg2d();
        let t = g.parse_text(OPENING).unwrap();
        let m = Mutation {
            target_path: NodePath(vec![1, 1]),
            replacement: g.parse_text("(Circle 0 8 A)").unwrap(),
        };
        let out = apply(&g, &t, &m).unwrap();
        let expected = g
            .parse_text("(+ (+ (Circle 0 8 A) (Quad 3 E C 2 M)) (Circle C 2 1))")
            .unwrap();
        assert_eq!(out, expected);
        assert_eq!(out.sigma(), t.sigma() - 2 + 1);
        let (line, underline) = trace_lines(&g, &t, &m);
        let caret_start = underline.find('^').unwrap();
        assert_eq!(&line[caret_start..caret_start + 1], "(");
        assert!(underline.ends_with("--> (Circle 0 8 A)"));
        // inverse restores
        let back = Mutation {
            target_path: m.target_path.clone(),
            replacement: t.subtree(&m.target_path).unwrap().clone(),
        };
        assert_eq!(apply(&g, &out, &back).unwrap(), t);
    }

    #[test]
    fn apply_rejects_bad_paths_and_mismatches() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(Circle 1 2 3)").unwrap();
        let number = g.parse_rule_text(g.rule_id("number").unwrap(), "4").unwrap();
        let bad_path = Mutation {
            target_path: NodePath(vec![7]),
            replacement: number.clone(),
        };
        assert!(matches!(apply(&g, &t, &bad_path), Err(MutationError::InvalidPath(_))));
        let mismatch = Mutation {
            target_path: NodePath::root(),
            replacement: number,
        };
        assert!(matches!(
            apply(&g, &t, &mismatch),
            Err(MutationError::ProductionMismatch { .. })
        ));
    }

    #[test]
    fn structural_sharing() {
        let g = Grammar::csg2d();
        let t = g.parse_text(OPENING).unwrap();
        let m = Mutation {
            target_path: NodePath(vec![1, 1, 1, 0]),
            replacement: g.parse_rule_text(g.rule_id("number").unwrap(), "7").unwrap(),
        };
        let out = apply(&g, &t, &m).unwrap();
        // siblings along the path are the same allocations
        assert!(out.children()[2].ptr_eq(&t.children()[2]));
        assert!(out.children()[1].children()[2].ptr_eq(&t.children()[1].children()[2]));
        assert!(out.children()[1].children()[1].children()[2]
            .ptr_eq(&t.children()[1].children()[1].children()[2]));
        assert!(out.children()[1].children()[1].children()[1].children()[1]
            .ptr_eq(&t.children()[1].children()[1].children()[1].children()[1]));
        assert!(!out.children()[1].ptr_eq(&t.children()[1]));
    }

    #[test]
    fn mutations_stay_in_action_space() {
        for g in [Grammar::csg2d(), Grammar::tinysvg()] {
            let mut r = rng(9);
            for i in 0..2_000 {
                let t = g.constrained_sample(g.start(), 0, 8, &mut r).unwrap();
                let m = if i % 2 == 0 {
                    sample_mutation(&g, &t, 2, &mut r).unwrap()
                } else {
                    sample_mutation_balanced(&g, &t, 2, &mut r).unwrap()
                };
                validate(&g, &t, &m, 2).unwrap();
                let out = apply(&g, &t, &m).unwrap();
                let reparsed = g.parse(&g.tokens_of(&out)).unwrap();
                assert_eq!(reparsed, out);
            }
        }
    }

    #[test]
    fn uniform_node_selection() {
        // Exact candidate enumeration, then a 3-sigma binomial check per node.
        let g = Grammar::csg2d();
        let t = g.parse_text("(+ (Quad 1 0 A 3 H) (Circle C 2 1))").unwrap();
        let candidates = candidate_nodes(&g, &t, 2);
        let n = 10_000usize;
        let mut counts: HashMap<NodePath, usize> = HashMap::new();
        let mut r = rng(21);
        for _ in 0..n {
            let m = sample_mutation(&g, &t, 2, &mut r).unwrap();
            *counts.entry(m.target_path).or_default() += 1;
        }
        let p = 1.0 / candidates.len() as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in &candidates {
            let k = *counts.get(c).unwrap_or(&0) as f64;
            assert!((k - mean).abs() <= 3.0 * sd, "{c}: {k} vs {mean}±{sd}");
        }
    }

    #[test]
    fn balanced_selection_prefers_rare_rules() {
        // Candidates: one `s` subtree plus number leaves. Rule-first
        // selection picks the `s` node about half the time.
        let g = Grammar::load(
            "t",
            "%primitives P\ns: (P n n n n n n n n n n n n n n n n n n n n)\nn: [0 to 3]\n",
        )
        .unwrap();
        let t = g
            .parse_text("(P 0 1 2 3 0 1 2 3 0 1 2 3 0 1 2 3 0 1 2 3)")
            .unwrap();
        assert_eq!(candidate_nodes(&g, &t, 2).len(), 21);
        let mut r = rng(4);
        let n = 10_000;
        let root = (0..n)
            .filter(|_| sample_mutation_balanced(&g, &t, 2, &mut r).unwrap().target_path.depth() == 0)
            .count();
        let frac = root as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn replacement_fallback_enumerates() {
        // Two-valued rule: resampling succeeds or falls back to the other value.
        let g = Grammar::csg2d();
        let op = g.rule_id("op").unwrap();
        let plus = g.parse_rule_text(op, "+").unwrap();
        let mut r = rng(0);
        for _ in 0..50 {
            let rep = sample_replacement(&g, &plus, &NodePath::root(), 2, &mut r).unwrap();
            assert_eq!(g.token_text(g.tokens_of(&rep)[0]), "-");
        }
    }

    #[test]
    fn chains_are_valid() {
        for g in [Grammar::csg2d(), Grammar::tinysvg()] {
            let mut r = rng(2);
            for seed in 0..300u64 {
                let z0 = g.constrained_sample(g.start(), 0, 8, &mut r).unwrap();
                let steps = 1 + (seed as usize % 10);
                let chain = noise_chain(&g, &z0, steps, 2, seed).unwrap();
                assert_eq!(chain.states.len(), steps + 1);
                for (i, m) in chain.mutations.iter().enumerate() {
                    validate(&g, &chain.states[i], m, 2).unwrap();
                    assert_eq!(apply(&g, &chain.states[i], m).unwrap(), chain.states[i + 1]);
                }
                for s in &chain.states {
                    assert_eq!(&g.parse(&g.tokens_of(s)).unwrap(), s);
                }
            }
        }
    }

    #[test]
    fn single_step_chain_differs() {
        let g = Grammar::csg2d();
        let z0 = g.parse_text(OPENING).unwrap();
        let chain = noise_chain(&g, &z0, 1, 2, 77).unwrap();
        assert_eq!(chain.mutations.len(), 1);
        assert_ne!(chain.states[1], z0);
        let four = noise_chain(&g, &z0, 4, 2, 77).unwrap();
        assert_eq!(four.mutations.len(), 4);
    }
}
