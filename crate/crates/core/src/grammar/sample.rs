//! Sampling programs under exact primitive-count constraints.
//!
//! Bounds follow the `(sigma_min, sigma_max]` convention: the lower bound is
//! exclusive, so rules that never produce primitives are sampled with
//! `(-1, n]`. At each node the sampler keeps the productions whose
//! achievable counts meet the window, picks one uniformly, then splits the
//! remaining count across the children uniformly over all feasible
//! allocation vectors.

use rand::Rng;
use thiserror::Error;

use super::{Grammar, ProdId, RuleId, SigmaSet, SyntaxTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("rule `{rule}` cannot derive a program with {lo} < sigma <= {hi}")]
    Unsatisfiable { rule: String, lo: i32, hi: i32 },
    #[error("invalid sigma bounds ({lo}, {hi}]")]
    InvalidBounds { lo: i32, hi: i32 },
}

impl Grammar {
    /// Samples a tree derived from `rule` with `sigma_min < sigma <= sigma_max`.
    pub fn constrained_sample<R: Rng + ?Sized>(
        &self,
        rule: RuleId,
        sigma_min: i32,
        sigma_max: i32,
        rng: &mut R,
    ) -> Result<SyntaxTree, SampleError> {
        if sigma_min < -1 || sigma_min >= sigma_max || sigma_max > SigmaSet::CAP as i32 {
            return Err(SampleError::InvalidBounds {
                lo: sigma_min,
                hi: sigma_max,
            });
        }
        if self.rule_sigma(rule).window(sigma_min, sigma_max).is_empty() {
            return Err(SampleError::Unsatisfiable {
                rule: self.rule_name(rule).to_string(),
                lo: sigma_min,
                hi: sigma_max,
            });
        }
        Ok(self.sample_rule(rule, sigma_min, sigma_max, rng))
    }

    /// Samples with the production at the root fixed to `prod`.
    pub fn constrained_sample_production<R: Rng + ?Sized>(
        &self,
        prod: ProdId,
        sigma_min: i32,
        sigma_max: i32,
        rng: &mut R,
    ) -> Result<SyntaxTree, SampleError> {
        if sigma_min < -1 || sigma_min >= sigma_max || sigma_max > SigmaSet::CAP as i32 {
            return Err(SampleError::InvalidBounds {
                lo: sigma_min,
                hi: sigma_max,
            });
        }
        if self.production_sigma(prod).window(sigma_min, sigma_max).is_empty() {
            return Err(SampleError::Unsatisfiable {
                rule: self.head_name(prod).to_string(),
                lo: sigma_min,
                hi: sigma_max,
            });
        }
        Ok(self.sample_prod(prod, sigma_min, sigma_max, rng))
    }

    fn sample_rule<R: Rng + ?Sized>(&self, rule: RuleId, lo: i32, hi: i32, rng: &mut R) -> SyntaxTree {
        let survivors: Vec<ProdId> = self
            .productions_of(rule)
            .iter()
            .copied()
            .filter(|&p| !self.production_sigma(p).window(lo, hi).is_empty())
            .collect();
        debug_assert!(!survivors.is_empty());
        let prod = survivors[rng.random_range(0..survivors.len())];
        self.sample_prod(prod, lo, hi, rng)
    }

    fn sample_prod<R: Rng + ?Sized>(&self, prod: ProdId, lo: i32, hi: i32, rng: &mut R) -> SyntaxTree {
        let p = self.production(prod);
        let own = p.primitive as i32;
        // Children must sum into (lo - own, hi - own].
        let (lo, hi) = (lo - own, hi - own);
        let k = p.child_rules.len();
        if k == 0 {
            return SyntaxTree::assemble(self, prod, Vec::new());
        }
        let top = hi.max(0) as usize;
        let sets: Vec<SigmaSet> = p.child_rules.iter().map(|&r| self.rule_sigma(r)).collect();
        // ways[i][s]: allocations of children i.. summing to exactly s.
        let mut ways = vec![vec![0f64; top + 1]; k + 1];
        ways[k][0] = 1.0;
        for i in (0..k).rev() {
            for s in 0..=top {
                let mut total = 0.0;
                for c in sets[i].window(-1, s as i32).iter() {
                    total += ways[i + 1][s - c as usize];
                }
                ways[i][s] = total;
            }
        }
        let mut children = Vec::with_capacity(k);
        let mut used = 0i32;
        for i in 0..k {
            let options: Vec<(u32, f64)> = sets[i]
                .window(-1, hi - used)
                .iter()
                .map(|c| {
                    let rest_lo = lo - used - c as i32;
                    let rest_hi = hi - used - c as i32;
                    let weight: f64 = ((rest_lo + 1).max(0)..=rest_hi)
                        .map(|s| ways[i + 1][s as usize])
                        .sum();
                    (c, weight)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = options.iter().map(|o| o.1).sum();
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = options[options.len() - 1].0;
            for &(c, w) in &options {
                if pick < w {
                    chosen = c;
                    break;
                }
                pick -= w;
            }
            used += chosen as i32;
            let c = chosen as i32;
            children.push(self.sample_rule(p.child_rules[i], c - 1, c, rng));
        }
        SyntaxTree::assemble(self, prod, children)
    }

    /// All trees derivable from `rule` with at most `sigma_max` primitives,
    /// or `None` if there are more than `limit` of them.
    pub fn enumerate(&self, rule: RuleId, sigma_max: u32, limit: usize) -> Option<Vec<SyntaxTree>> {
        self.enumerate_rule(rule, sigma_max, limit, 0)
    }

    fn enumerate_rule(&self, rule: RuleId, budget: u32, limit: usize, depth: usize) -> Option<Vec<SyntaxTree>> {
        if depth > 64 {
            return None;
        }
        let mut out = Vec::new();
        for &prod in self.productions_of(rule) {
            let p = self.production(prod);
            let own = p.primitive as u32;
            if own > budget || self.production_sigma(prod).window(-1, budget as i32).is_empty() {
                continue;
            }
            // Partial child lists with their running sigma.
            // Primitives later siblings need at minimum.
            let mut reserve: Vec<u32> = p
                .child_rules
                .iter()
                .map(|&r| self.rule_sigma(r).min().unwrap_or(0))
                .collect();
            let mut acc = 0;
            for r in reserve.iter_mut().rev() {
                let m = *r;
                *r = acc;
                acc += m;
            }
            let mut partial: Vec<(Vec<SyntaxTree>, u32)> = vec![(Vec::new(), own)];
            for (i, &child_rule) in p.child_rules.iter().enumerate() {
                let mut next = Vec::new();
                for (kids, used) in partial {
                    let Some(room) = budget.checked_sub(used + reserve[i]) else {
                        continue;
                    };
                    for child in self.enumerate_rule(child_rule, room, limit, depth + 1)? {
                        let mut k = kids.clone();
                        let s = used + child.sigma();
                        k.push(child);
                        next.push((k, s));
                        if next.len() > limit {
                            return None;
                        }
                    }
                }
                partial = next;
            }
            for (kids, _) in partial {
                out.push(SyntaxTree::assemble(self, prod, kids));
                if out.len() > limit {
                    return None;
                }
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn respects_bounds() {
        let g = Grammar::csg2d();
        let s = g.start();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let t = g.constrained_sample(s, 0, 2, &mut rng).unwrap();
            assert!((1..=2).contains(&t.sigma()));
        }
        for _ in 0..2_000 {
            let t = g.constrained_sample(s, 3, 8, &mut rng).unwrap();
            assert!((4..=8).contains(&t.sigma()));
            assert_eq!(t.recount_sigma(&g), t.sigma());
        }
    }

    #[test]
    fn leaf_rules_use_minus_one_convention() {
        let g = Grammar::csg2d();
        let angle = g.rule_id("angle").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = g.constrained_sample(angle, -1, 0, &mut rng).unwrap();
        assert_eq!(t.sigma(), 0);
        assert!(g.token_text(g.tokens_of(&t)[0]).starts_with("angle_"));
        assert!(matches!(
            g.constrained_sample(angle, 0, 2, &mut rng),
            Err(SampleError::Unsatisfiable { .. })
        ));
    }

    #[test]
    fn unsatisfiable_is_an_error() {
        let g = Grammar::csg2d();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            g.constrained_sample(g.start(), -1, 0, &mut rng),
            Err(SampleError::Unsatisfiable { .. })
        ));
        assert!(matches!(
            g.constrained_sample(g.start(), 3, 3, &mut rng),
            Err(SampleError::InvalidBounds { .. })
        ));
        // A rule that can only yield even counts.
        let even = Grammar::load("even", "%primitives P\ns: (D p p)\np: (P)\n").unwrap();
        assert!(even.constrained_sample(even.start(), 2, 3, &mut rng).is_err());
        assert_eq!(even.constrained_sample(even.start(), 1, 3, &mut rng).unwrap().sigma(), 2);
    }

    #[test]
    fn every_alternative_appears() {
        let g = Grammar::csg2d();
        let s = g.start();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = HashSet::new();
        for _ in 0..1_000 {
            seen.insert(g.constrained_sample(s, 0, 8, &mut rng).unwrap().prod());
        }
        assert_eq!(seen.len(), g.productions_of(s).len());
    }

    #[test]
    fn deterministic_given_seed() {
        let g = Grammar::tinysvg();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| g.constrained_sample(g.start(), 0, 8, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn enumerate_small_rules() {
        let g = Grammar::csg2d();
        assert_eq!(g.enumerate(g.rule_id("op").unwrap(), 0, 100).unwrap().len(), 2);
        assert_eq!(g.enumerate(g.rule_id("number").unwrap(), 0, 100).unwrap().len(), 16);
        assert_eq!(g.enumerate(g.rule_id("circle").unwrap(), 1, 10_000).unwrap().len(), 4096);
        assert!(g.enumerate(g.start(), 2, 10_000).is_none());
    }
}
