//! Edit proposers and distance estimators consumed by search.

pub mod external;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::Env;
use crate::grammar::{Grammar, NodePath, ParseError, SyntaxTree, TokenSeq};
use crate::mutation::{self, Mutation, MutationError};
use crate::render::{Canvas, RenderError};
use crate::tree_path::{self, PathError};

pub use external::{Endpoint, ExternalClient, ExternalError, ExternalPolicy, ExternalStats, ExternalValue};

/// A proposed replacement of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct EditProposal {
    pub target_path: NodePath,
    pub replacement: SyntaxTree,
    /// Higher is better.
    pub score: f64,
}

impl EditProposal {
    pub fn from_mutation(m: Mutation, score: f64) -> Self {
        EditProposal {
            target_path: m.target_path,
            replacement: m.replacement,
            score,
        }
    }

    pub fn mutation(&self) -> Mutation {
        Mutation {
            target_path: self.target_path.clone(),
            replacement: self.replacement.clone(),
        }
    }

    pub fn replacement_tokens(&self, g: &Grammar) -> TokenSeq {
        g.serialize(&self.replacement)
    }

    /// Token index where the edited node starts in `program`.
    pub fn position(&self, g: &Grammar, program: &SyntaxTree) -> Option<usize> {
        g.serialize(program).span_of(&self.target_path).map(|s| s.start)
    }
}

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("no syntax tree node starts at token {0}")]
    NoNodeAt(usize),
    #[error("replacement does not parse in any node starting at token {pos}: {source}")]
    Unparseable { pos: usize, source: ParseError },
    #[error(transparent)]
    Invalid(#[from] MutationError),
}

/// Checks a proposal against the small-mutation action space.
pub fn validate_proposal(g: &Grammar, program: &SyntaxTree, p: &EditProposal, sigma_small: u32) -> Result<(), MutationError> {
    mutation::validate(g, program, &p.mutation(), sigma_small)
}

/// Resolves a position-and-tokens edit into a proposal. Several nodes can
/// start at one token; they are tried outermost first and the first whose
/// production context parses the replacement wins.
pub fn resolve_edit(
    g: &Grammar,
    program: &SyntaxTree,
    pos: usize,
    replacement: &[String],
    score: f64,
    sigma_small: u32,
) -> Result<EditProposal, ProposalError> {
    let seq = g.serialize(program);
    let mut tokens = Vec::with_capacity(replacement.len());
    for (index, text) in replacement.iter().enumerate() {
        let id = g.token_id(text).ok_or_else(|| ProposalError::Unparseable {
            pos,
            source: ParseError::UnknownToken {
                index,
                text: text.clone(),
            },
        })?;
        tokens.push(id);
    }
    let mut last_err = None;
    let mut any = false;
    for span in seq.spans.iter().filter(|s| s.start == pos) {
        any = true;
        let node = program.subtree(&span.path).expect("span paths resolve");
        match g.parse_rule(node.rule(), &tokens) {
            Ok(tree) => {
                let p = EditProposal {
                    target_path: span.path.clone(),
                    replacement: tree,
                    score,
                };
                match validate_proposal(g, program, &p, sigma_small) {
                    Ok(()) => return Ok(p),
                    Err(e) => last_err = Some(ProposalError::Invalid(e)),
                }
            }
            Err(source) => {
                if last_err.is_none() {
                    last_err = Some(ProposalError::Unparseable { pos, source });
                }
            }
        }
    }
    if !any {
        return Err(ProposalError::NoNodeAt(pos));
    }
    Err(last_err.expect("at least one span was tried"))
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("program already equals the target")]
    AlreadySolved,
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    External(#[from] ExternalError),
}

/// Everything a policy may look at.
pub struct PolicyQuery<'a> {
    pub env: Env,
    pub grammar: &'a Grammar,
    pub program: &'a SyntaxTree,
    pub image: &'a Canvas,
    pub target: &'a Canvas,
    pub k: usize,
    pub sigma_small: u32,
}

pub struct ValueQuery<'a> {
    pub env: Env,
    pub grammar: &'a Grammar,
    pub program: &'a SyntaxTree,
    pub image: &'a Canvas,
    pub target: &'a Canvas,
}

/// Rendering as seen by a policy; every new program counts as an
/// expansion. `None` means the budget is spent or the program failed to
/// render.
pub trait Render {
    fn render(&mut self, t: &SyntaxTree) -> Option<Canvas>;
}

pub trait Policy: Sync {
    fn propose(
        &self,
        q: &PolicyQuery<'_>,
        render: &mut dyn Render,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EditProposal>, PolicyError>;

    fn stats(&self) -> Option<ExternalStats> {
        None
    }
}

/// Estimated edit distance to the target; lower is better.
pub trait Value: Sync {
    fn estimate(&self, q: &ValueQuery<'_>) -> Result<f64, PolicyError>;
}

/// Follows the canonical reverse path toward a known program.
pub struct OraclePolicy {
    pub truth: SyntaxTree,
}

impl Policy for OraclePolicy {
    fn propose(
        &self,
        q: &PolicyQuery<'_>,
        _render: &mut dyn Render,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EditProposal>, PolicyError> {
        if *q.program == self.truth {
            return Err(PolicyError::AlreadySolved);
        }
        let steps = tree_path::first_step(q.grammar, q.program, &self.truth, q.sigma_small, rng)?;
        Ok(steps
            .into_iter()
            .take(1)
            .map(|m| EditProposal::from_mutation(m, 0.0))
            .collect())
    }
}

/// Random balanced mutations ranked by how close their rendering gets.
pub struct HillclimbPolicy {
    /// Candidates sampled per requested proposal.
    pub oversample: usize,
}

impl Default for HillclimbPolicy {
    fn default() -> Self {
        HillclimbPolicy { oversample: 4 }
    }
}

impl Policy for HillclimbPolicy {
    fn propose(
        &self,
        q: &PolicyQuery<'_>,
        render: &mut dyn Render,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EditProposal>, PolicyError> {
        let want = q.k.max(1) * self.oversample.max(1);
        let mut scored = Vec::with_capacity(want);
        for _ in 0..want {
            let m = mutation::sample_mutation_balanced(q.grammar, q.program, q.sigma_small, rng)?;
            let next = mutation::apply(q.grammar, q.program, &m)?;
            let Some(image) = render.render(&next) else {
                break;
            };
            let loss = q.env.loss(&image, q.target)?;
            scored.push(EditProposal::from_mutation(m, -loss));
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        scored.truncate(q.k.max(1));
        Ok(scored)
    }
}

/// Canonical edit distance to a known program.
pub struct OracleValue {
    pub truth: SyntaxTree,
    pub sigma_small: u32,
}

impl Value for OracleValue {
    fn estimate(&self, q: &ValueQuery<'_>) -> Result<f64, PolicyError> {
        Ok(tree_path::edit_distance(q.grammar, q.program, &self.truth, self.sigma_small)? as f64)
    }
}

/// Image loss against the target.
pub struct PixelValue;

impl Value for PixelValue {
    fn estimate(&self, q: &ValueQuery<'_>) -> Result<f64, PolicyError> {
        Ok(q.env.loss(q.image, q.target)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::{noise_chain, DEFAULT_SIGMA_SMALL};
    use rand::SeedableRng;

    struct Direct<'a>(Env, &'a Grammar);

    impl Render for Direct<'_> {
        fn render(&mut self, t: &SyntaxTree) -> Option<Canvas> {
            self.0.render(self.1, t).ok()
        }
    }

    fn query<'a>(env: Env, g: &'a Grammar, program: &'a SyntaxTree, image: &'a Canvas, target: &'a Canvas) -> PolicyQuery<'a> {
        PolicyQuery {
            env,
            grammar: g,
            program,
            image,
            target,
            k: 4,
            sigma_small: DEFAULT_SIGMA_SMALL,
        }
    }

    #[test]
    fn oracle_inverts_single_mutation() {
        let env = Env::Csg2d;
        let g = env.grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..200 {
            let z0 = g.constrained_sample(g.start(), 0, 6, &mut rng).unwrap();
            let chain = noise_chain(g, &z0, 1, DEFAULT_SIGMA_SMALL, seed).unwrap();
            if z0.subtree(&chain.mutations[0].target_path).unwrap().sigma() > DEFAULT_SIGMA_SMALL {
                continue;
            }
            let z1 = chain.last();
            let img = env.render(g, z1).unwrap();
            let tgt = env.render(g, &z0).unwrap();
            let policy = OraclePolicy { truth: z0.clone() };
            let props = policy
                .propose(&query(env, g, z1, &img, &tgt), &mut Direct(env, g), &mut rng)
                .unwrap();
            assert_eq!(props.len(), 1);
            validate_proposal(g, z1, &props[0], DEFAULT_SIGMA_SMALL).unwrap();
            assert_eq!(mutation::apply(g, z1, &props[0].mutation()).unwrap(), z0);
        }
    }

    #[test]
    fn oracle_refuses_solved_program() {
        let env = Env::Rainbow;
        let g = env.grammar();
        let z = g.parse_text("(Rectangle 1 2 red black 1)").unwrap();
        let img = env.render(g, &z).unwrap();
        let policy = OraclePolicy { truth: z.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            policy.propose(&query(env, g, &z, &img, &img), &mut Direct(env, g), &mut rng),
            Err(PolicyError::AlreadySolved)
        ));
    }

    #[test]
    fn hillclimb_proposals_are_valid_and_sorted() {
        let env = Env::Csg2d;
        let g = env.grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = g.parse_text("(+ (Circle 3 4 4) (Quad 9 9 4 4 angle_0))").unwrap();
        let target = env.render(g, &g.parse_text("(Circle 3 5 4)").unwrap()).unwrap();
        let img = env.render(g, &z).unwrap();
        let props = HillclimbPolicy::default()
            .propose(&query(env, g, &z, &img, &target), &mut Direct(env, g), &mut rng)
            .unwrap();
        assert_eq!(props.len(), 4);
        for w in props.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for p in &props {
            validate_proposal(g, &z, p, DEFAULT_SIGMA_SMALL).unwrap();
            assert!(p.score <= 0.0);
        }
    }

    #[test]
    fn values_vanish_on_identity() {
        let env = Env::TinySvg;
        let g = env.grammar();
        let z = g.parse_text("(Move (Ellipse 3 3 red none 0) + 1 - 1)").unwrap();
        let img = env.render(g, &z).unwrap();
        let q = ValueQuery {
            env,
            grammar: g,
            program: &z,
            image: &img,
            target: &img,
        };
        assert_eq!(PixelValue.estimate(&q).unwrap(), 0.0);
        let oracle = OracleValue {
            truth: z.clone(),
            sigma_small: DEFAULT_SIGMA_SMALL,
        };
        assert_eq!(oracle.estimate(&q).unwrap(), 0.0);
    }

    #[test]
    fn resolve_prefers_node_that_parses() {
        let g = Grammar::csg2d();
        let z = g.parse_text("(+ (Circle 1 2 3) (Circle 4 5 6))").unwrap();
        let texts = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let p = resolve_edit(&g, &z, 2, &texts("( Quad 1 1 1 1 angle_0 )"), 0.0, 2).unwrap();
        assert_eq!(p.target_path, NodePath(vec![1]));
        let p = resolve_edit(&g, &z, 4, &texts("7"), 0.0, 2).unwrap();
        assert_eq!(p.target_path, NodePath(vec![1, 0]));
        assert!(matches!(
            resolve_edit(&g, &z, 1, &texts("-"), 0.0, 2).map(|p| p.target_path),
            Ok(NodePath(ref v)) if v == &vec![0]
        ));
        assert!(matches!(resolve_edit(&g, &z, 2, &texts("7"), 0.0, 2), Err(ProposalError::Unparseable { .. })));
        assert!(matches!(resolve_edit(&g, &z, 3, &texts("7"), 0.0, 2), Err(ProposalError::NoNodeAt(3))));
        assert!(matches!(resolve_edit(&g, &z, 99, &texts("7"), 0.0, 2), Err(ProposalError::NoNodeAt(99))));
        assert!(matches!(
            resolve_edit(&g, &z, 4, &texts("1"), 0.0, 2),
            Err(ProposalError::Invalid(MutationError::Unchanged(_)))
        ));
        let big = "( + ( Circle 1 1 1 ) ( + ( Circle 1 1 1 ) ( Circle 2 2 2 ) ) )";
        assert!(matches!(
            resolve_edit(&g, &z, 2, &texts(big), 0.0, 2),
            Err(ProposalError::Invalid(MutationError::TooLarge { .. }))
        ));
    }
}
