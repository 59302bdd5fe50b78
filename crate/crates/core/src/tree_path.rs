//! Reverse edit paths between programs.
//!
//! `first_step` walks both trees top-down. Where productions agree it
//! recurses into the children; at the first disagreement it emits a single
//! small replacement. A small target is copied verbatim. A large target is
//! approached through a skeleton: a small tree sampled with the target's
//! root production, then tightened toward the target by nested first steps
//! for as long as it stays within the primitive budget.
//!
//! Progress is measured by [`structural_distance`]: the number of target
//! nodes lying under a mismatch. Every emitted mutation removes at least one
//! such node, so a full path never has more steps than the target has nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grammar::{Grammar, NodePath, SampleError, SyntaxTree};
use crate::mutation::{self, Mutation, MutationError};

/// Seed used for the canonical path behind [`edit_distance`].
pub const CANONICAL_SEED: u64 = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("trees derive from different rules (`{source_rule}` vs `{target_rule}`)")]
    ContextMismatch {
        source_rule: String,
        target_rule: String,
    },
    #[error("edit path exceeded {bound} steps")]
    StepBound { bound: usize },
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
}

/// Mutations leading from `source` to `target`.
#[derive(Debug, Clone)]
pub struct EditPath {
    pub steps: Vec<Mutation>,
    pub source: SyntaxTree,
    pub target: SyntaxTree,
    pub seed: u64,
}

impl EditPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Every intermediate tree, starting with `source`.
    pub fn states(&self, g: &Grammar) -> Result<Vec<SyntaxTree>, MutationError> {
        let mut out = vec![self.source.clone()];
        for m in &self.steps {
            let next = mutation::apply(g, out.last().unwrap(), m)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Applies all steps to `source`.
    pub fn replay(&self, g: &Grammar) -> Result<SyntaxTree, MutationError> {
        let mut t = self.source.clone();
        for m in &self.steps {
            t = mutation::apply(g, &t, m)?;
        }
        Ok(t)
    }
}

/// Number of nodes of `b` that sit under a production mismatch when `a` and
/// `b` are walked together from the root. Zero exactly when the trees are
/// equal.
pub fn structural_distance(a: &SyntaxTree, b: &SyntaxTree) -> u32 {
    if a == b {
        0
    } else if a.prod() != b.prod() {
        b.size()
    } else {
        a.children()
            .iter()
            .zip(b.children())
            .map(|(x, y)| structural_distance(x, y))
            .sum()
    }
}

struct Differ<'a, R: Rng + ?Sized> {
    g: &'a Grammar,
    small: u32,
    rng: &'a mut R,
    visits: usize,
}

impl<R: Rng + ?Sized> Differ<'_, R> {
    fn diff(&mut self, a: &SyntaxTree, b: &SyntaxTree, path: &mut Vec<usize>, out: &mut Vec<Mutation>) -> Result<(), PathError> {
        self.visits += 1;
        if a == b {
            return Ok(());
        }
        let both_small = a.sigma() <= self.small && b.sigma() <= self.small;
        if a.prod() == b.prod() {
            let differing = a.children().iter().zip(b.children()).filter(|(x, y)| x != y).count();
            // Several edits inside one small node collapse into one replacement.
            if !(both_small && differing > 1) {
                for (i, (x, y)) in a.children().iter().zip(b.children()).enumerate() {
                    path.push(i);
                    self.diff(x, y, path, out)?;
                    path.pop();
                }
                return Ok(());
            }
        }
        let replacement = if b.sigma() <= self.small {
            b.clone()
        } else {
            self.skeleton(b)?
        };
        out.push(Mutation {
            target_path: NodePath(path.clone()),
            replacement,
        });
        Ok(())
    }

    /// A tree with `b`'s root production and at most `small` primitives,
    /// moved toward `b` as far as the budget allows.
    fn skeleton(&mut self, b: &SyntaxTree) -> Result<SyntaxTree, PathError> {
        let mut skel = self
            .g
            .constrained_sample_production(b.prod(), -1, self.small as i32, self.rng)?;
        let mut tightening = Vec::new();
        self.diff(&skel, b, &mut Vec::new(), &mut tightening)?;
        for m in tightening {
            let old = skel.subtree(&m.target_path).expect("diff paths resolve").sigma();
            if skel.sigma() - old + m.replacement.sigma() > self.small {
                continue;
            }
            skel = mutation::apply(self.g, &skel, &m)?;
        }
        Ok(skel)
    }
}

fn check_context(g: &Grammar, a: &SyntaxTree, b: &SyntaxTree) -> Result<(), PathError> {
    if a.rule() != b.rule() {
        return Err(PathError::ContextMismatch {
            source_rule: g.rule_name(a.rule()).to_string(),
            target_rule: g.rule_name(b.rule()).to_string(),
        });
    }
    Ok(())
}

/// First set of mutations moving `a` toward `b`, at disjoint paths. Empty
/// when the trees are equal.
pub fn first_step<R: Rng + ?Sized>(
    g: &Grammar,
    a: &SyntaxTree,
    b: &SyntaxTree,
    sigma_small: u32,
    rng: &mut R,
) -> Result<Vec<Mutation>, PathError> {
    first_step_counted(g, a, b, sigma_small, rng).map(|(m, _)| m)
}

/// [`first_step`] together with the number of node pairs visited.
pub fn first_step_counted<R: Rng + ?Sized>(
    g: &Grammar,
    a: &SyntaxTree,
    b: &SyntaxTree,
    sigma_small: u32,
    rng: &mut R,
) -> Result<(Vec<Mutation>, usize), PathError> {
    check_context(g, a, b)?;
    let mut d = Differ {
        g,
        small: sigma_small,
        rng,
        visits: 0,
    };
    let mut out = Vec::new();
    d.diff(a, b, &mut Vec::new(), &mut out)?;
    Ok((out, d.visits))
}

/// Step bound for [`full_path`].
pub fn step_bound(a: &SyntaxTree, b: &SyntaxTree) -> usize {
    4 * (a.size() as usize + b.size() as usize)
}

/// Complete path from `a` to `b`, built by repeating [`first_step`].
pub fn full_path(g: &Grammar, a: &SyntaxTree, b: &SyntaxTree, sigma_small: u32, seed: u64) -> Result<EditPath, PathError> {
    check_context(g, a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = step_bound(a, b);
    let mut steps = Vec::new();
    let mut cur = a.clone();
    while cur != *b {
        let batch = first_step(g, &cur, b, sigma_small, &mut rng)?;
        debug_assert!(!batch.is_empty());
        for m in batch {
            cur = mutation::apply(g, &cur, &m)?;
            steps.push(m);
        }
        if steps.len() > bound {
            return Err(PathError::StepBound { bound });
        }
    }
    Ok(EditPath {
        steps,
        source: a.clone(),
        target: b.clone(),
        seed,
    })
}

/// Length of the canonical path from `a` to `b`.
pub fn edit_distance(g: &Grammar, a: &SyntaxTree, b: &SyntaxTree, sigma_small: u32) -> Result<usize, PathError> {
    full_path(g, a, b, sigma_small, CANONICAL_SEED).map(|p| p.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{noise_chain, validate, DEFAULT_SIGMA_SMALL};

    const SMALL: u32 = DEFAULT_SIGMA_SMALL;

    #[test]
    fn identical_trees() {
        let g = Grammar::csg2d();
        let t = g.parse_text("(+ (Circle 1 2 3) (Quad 1 2 3 4 H))").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(first_step(&g, &t, &t, SMALL, &mut rng).unwrap().is_empty());
        assert_eq!(edit_distance(&g, &t, &t, SMALL).unwrap(), 0);
        assert_eq!(structural_distance(&t, &t), 0);
    }

    #[test]
    fn directed_toward_original_value() {
        let g = Grammar::rainbow();
        let red = g.parse_text("(Rectangle 1 2 red black 1)").unwrap();
        let green = g.parse_text("(Rectangle 1 2 green black 1)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let steps = first_step(&g, &green, &red, SMALL, &mut rng).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].target_path, NodePath(vec![2]));
        assert_eq!(steps[0].replacement.to_text(&g), "red");
    }

    #[test]
    fn context_mismatch_is_an_error() {
        let g = Grammar::csg2d();
        let a = g.parse_text("(Circle 1 2 3)").unwrap();
        let b = g.parse_rule_text(g.rule_id("number").unwrap(), "4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            first_step(&g, &a, &b, SMALL, &mut rng),
            Err(PathError::ContextMismatch { .. })
        ));
    }

    #[test]
    fn large_target_goes_through_a_small_skeleton() {
        let g = Grammar::csg2d();
        let a = g.parse_text("(Circle 1 2 3)").unwrap();
        let b = g
            .parse_text("(- (+ (Circle 1 1 1) (Circle 2 2 2)) (+ (Circle 3 3 3) (Quad 1 2 3 4 H)))")
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let steps = first_step(&g, &a, &b, SMALL, &mut rng).unwrap();
        assert_eq!(steps.len(), 1);
        let m = &steps[0];
        validate(&g, &a, m, SMALL).unwrap();
        assert_eq!(m.replacement.prod(), b.prod());
        let next = mutation::apply(&g, &a, m).unwrap();
        assert!(structural_distance(&next, &b) < structural_distance(&a, &b));
        let path = full_path(&g, &a, &b, SMALL, 3).unwrap();
        assert_eq!(path.replay(&g).unwrap(), b);
    }

    #[test]
    fn single_chain_step_inverts_in_one() {
        let g = Grammar::csg2d();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..300 {
            let z0 = g.constrained_sample(g.start(), 0, 6, &mut rng).unwrap();
            let chain = noise_chain(&g, &z0, 1, SMALL, seed).unwrap();
            let m = &chain.mutations[0];
            let original = z0.subtree(&m.target_path).unwrap();
            if original.sigma() > SMALL {
                continue;
            }
            let p = full_path(&g, chain.last(), &z0, SMALL, seed).unwrap();
            assert_eq!(p.len(), 1, "seed {seed}");
            assert_eq!(mutation::apply(&g, chain.last(), &p.steps[0]).unwrap(), z0);
        }
    }

    #[test]
    fn paths_replay_within_action_space() {
        for g in [Grammar::csg2d(), Grammar::tinysvg(), Grammar::rainbow()] {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            for seed in 0..1_000 {
                let a = g.constrained_sample(g.start(), 0, 8, &mut rng).unwrap();
                let b = g.constrained_sample(g.start(), 0, 8, &mut rng).unwrap();
                let p = full_path(&g, &a, &b, SMALL, seed).unwrap();
                let states = p.states(&g).unwrap();
                for (t, m) in states.iter().zip(&p.steps) {
                    validate(&g, t, m, SMALL).unwrap();
                }
                assert_eq!(states.last().unwrap(), &b);
                assert!(p.len() <= 2 * b.size() as usize);
            }
        }
    }

    #[test]
    fn each_batch_reduces_distance() {
        let g = Grammar::tinysvg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let a = g.constrained_sample(g.start(), 0, 8, &mut rng).unwrap();
            let b = g.constrained_sample(g.start(), 0, 8, &mut rng).unwrap();
            let steps = first_step(&g, &a, &b, SMALL, &mut rng).unwrap();
            let mut t = a.clone();
            for m in &steps {
                t = mutation::apply(&g, &t, m).unwrap();
            }
            if a != b {
                assert!(structural_distance(&t, &b) < structural_distance(&a, &b));
            }
        }
    }

    #[test]
    fn visits_are_linear() {
        let g = Grammar::csg2d();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let a = g.constrained_sample(g.start(), 0, 30, &mut rng).unwrap();
            let b = g.constrained_sample(g.start(), 0, 30, &mut rng).unwrap();
            let (_, visits) = first_step_counted(&g, &a, &b, SMALL, &mut rng).unwrap();
            assert!(visits <= 3 * (a.size() + b.size()) as usize);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = Grammar::csg2d();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = g.constrained_sample(g.start(), 4, 8, &mut rng).unwrap();
        let b = g.constrained_sample(g.start(), 4, 8, &mut rng).unwrap();
        let p1 = full_path(&g, &a, &b, SMALL, 17).unwrap();
        let p2 = full_path(&g, &a, &b, SMALL, 17).unwrap();
        assert_eq!(p1.steps, p2.steps);
    }
}
