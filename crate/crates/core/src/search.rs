//! Denoising as search: greedy policy rollouts and value-guided beam search.
//!
//! Cost is counted in node expansions: every distinct program that gets
//! rendered, whether it becomes a search node or is only looked at inside a
//! policy, costs one expansion. Renders are cached per search, so a program
//! is paid for once.
//!
//! Each beam iteration runs the policy for every frontier node on the
//! worker pool against a read-only snapshot of the cache, then merges the
//! results sequentially in frontier order. Randomness is drawn from a
//! per-node ChaCha stream, so results do not depend on the thread count.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Env;
use crate::grammar::{Grammar, SyntaxTree};
use crate::mutation::{self, DEFAULT_SIGMA_SMALL};
use crate::policy::{
    validate_proposal, EditProposal, ExternalClient, ExternalStats, Policy, PolicyQuery, Render, Value, ValueQuery,
};
use crate::render::{Canvas, RenderError};

/// Stream reserved for random initialization.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub beam_size: usize,
    pub expansion_budget: usize,
    /// Proposals requested per expanded node.
    pub k: usize,
    pub init_sigma_max: u32,
    /// Programs above this many primitives are discarded.
    pub sigma_cap: u32,
    pub sigma_small: u32,
    pub max_rollout_steps: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beam_size: 64,
            expansion_budget: 5000,
            k: 4,
            init_sigma_max: 8,
            sigma_cap: 12,
            sigma_small: DEFAULT_SIGMA_SMALL,
            max_rollout_steps: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("target image is {found:?}, environment renders {expected:?}")]
    TargetShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let positive = [
            ("beam_size", self.beam_size),
            ("expansion_budget", self.expansion_budget),
            ("k", self.k),
            ("init_sigma_max", self.init_sigma_max as usize),
            ("sigma_cap", self.sigma_cap as usize),
            ("sigma_small", self.sigma_small as usize),
            ("max_rollout_steps", self.max_rollout_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SearchError::Config(format!("{name} must be positive")));
        }
        if self.beam_size > self.expansion_budget {
            return Err(SearchError::Config(format!(
                "beam_size {} exceeds expansion_budget {}",
                self.beam_size, self.expansion_budget
            )));
        }
        if self.init_sigma_max > self.sigma_cap {
            return Err(SearchError::Config(format!(
                "init_sigma_max {} exceeds sigma_cap {}",
                self.init_sigma_max, self.sigma_cap
            )));
        }
        Ok(())
    }
}

/// A target image and how candidates are observed.
pub struct SearchProblem<'g> {
    pub env: Env,
    pub grammar: &'g Grammar,
    pub target: Canvas,
    /// Seed of the sketch drawn for every candidate in the sketch
    /// environment; ignored elsewhere.
    pub observation_seed: u64,
    render_calls: AtomicUsize,
}

impl<'g> SearchProblem<'g> {
    pub fn new(env: Env, grammar: &'g Grammar, target: Canvas, observation_seed: u64) -> Result<Self, SearchError> {
        let expected = (crate::render::WIDTH, crate::render::HEIGHT, env.channels());
        if target.shape() != expected {
            return Err(SearchError::TargetShape {
                expected,
                found: target.shape(),
            });
        }
        Ok(SearchProblem {
            env,
            grammar,
            target,
            observation_seed,
            render_calls: AtomicUsize::new(0),
        })
    }

    /// The problem of recovering `truth` from its own observation.
    pub fn from_program(env: Env, grammar: &'g Grammar, truth: &SyntaxTree, observation_seed: u64) -> Result<Self, RenderError> {
        let target = env.observe(grammar, truth, observation_seed)?;
        Ok(Self::new(env, grammar, target, observation_seed).expect("rendered targets have the env shape"))
    }

    pub fn observe(&self, t: &SyntaxTree) -> Result<Canvas, RenderError> {
        self.render_calls.fetch_add(1, Ordering::Relaxed);
        self.env.observe(self.grammar, t, self.observation_seed)
    }

    /// Renderer invocations so far, including ones whose result was not
    /// charged (duplicated across workers or past the budget).
    pub fn render_calls(&self) -> usize {
        self.render_calls.load(Ordering::Relaxed)
    }

    pub fn is_solved(&self, image: &Canvas) -> bool {
        self.env.is_solved(image, &self.target)
    }
}

/// Where the first beam comes from.
pub enum InitSource {
    Random,
    Programs(Vec<SyntaxTree>),
    /// Asks the endpoint for programs given a blank canvas; the call costs
    /// one expansion on top of the renders.
    External(Arc<ExternalClient>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub program: SyntaxTree,
    pub image: Arc<Canvas>,
    /// Estimated distance to the target; lower is better.
    pub value: f64,
    pub parent: Option<usize>,
    pub depth: usize,
    pub expansions_at_creation: usize,
    /// Policy score of the proposal that produced this node.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub expansions: usize,
    pub program: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub tree_nodes: usize,
    pub policy_queries: usize,
    pub policy_failures: usize,
    pub value_failures: usize,
    pub invalid_proposals: usize,
    pub oversize_discarded: usize,
    pub duplicates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_program: String,
    pub solved: bool,
    pub nodes_expanded: usize,
    pub best_similarity: f64,
    /// Best-so-far programs in order of discovery.
    pub trajectory: Vec<TrajectoryPoint>,
    pub stats: SearchStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Kept out of serialized results so they stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub tree: Vec<SearchNode>,
}

/// Per-node random stream.
fn node_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Cache, budget and best-so-far bookkeeping.
struct Ledger<'p, 'g> {
    problem: &'p SearchProblem<'g>,
    cache: HashMap<SyntaxTree, Arc<Canvas>>,
    charged: usize,
    budget: usize,
    best: Option<(SyntaxTree, f64)>,
    trajectory: Vec<TrajectoryPoint>,
    solved: bool,
    exhausted: bool,
}

impl<'p, 'g> Ledger<'p, 'g> {
    fn new(problem: &'p SearchProblem<'g>, budget: usize) -> Self {
        Ledger {
            problem,
            cache: HashMap::new(),
            charged: 0,
            budget,
            best: None,
            trajectory: Vec::new(),
            solved: false,
            exhausted: false,
        }
    }

    fn remaining(&self) -> usize {
        self.budget - self.charged
    }

    /// Charge for a program; the extra unit is for non-render queries.
    fn charge_query(&mut self) -> bool {
        if self.charged >= self.budget {
            self.exhausted = true;
            return false;
        }
        self.charged += 1;
        true
    }

    /// Records a render done elsewhere, or performs it. `None` when the
    /// budget is spent or the program cannot be rendered.
    fn materialize(&mut self, t: &SyntaxTree, rendered: Option<Arc<Canvas>>) -> Option<Arc<Canvas>> {
        if let Some(img) = self.cache.get(t) {
            return Some(img.clone());
        }
        if self.charged >= self.budget {
            self.exhausted = true;
            return None;
        }
        let img = match rendered {
            Some(img) => img,
            None => Arc::new(self.problem.observe(t).ok()?),
        };
        self.charged += 1;
        self.cache.insert(t.clone(), img.clone());
        let sim = self
            .problem
            .env
            .similarity(&img, &self.problem.target)
            .unwrap_or(0.0);
        if self.best.as_ref().is_none_or(|(_, b)| sim > *b) {
            self.best = Some((t.clone(), sim));
            self.trajectory.push(TrajectoryPoint {
                expansions: self.charged,
                program: t.to_text(self.problem.grammar),
                similarity: sim,
            });
        }
        if self.problem.is_solved(&img) {
            self.solved = true;
        }
        Some(img)
    }

    fn done(&self) -> bool {
        self.solved || self.exhausted
    }

    fn finish(self, stats: SearchStats, warnings: Vec<String>, error: Option<String>, start: Instant, tree: Vec<SearchNode>) -> SearchResult {
        let (best_program, best_similarity) = match &self.best {
            Some((t, s)) => (t.to_text(self.problem.grammar), *s),
            None => (String::new(), 0.0),
        };
        SearchResult {
            best_program,
            solved: self.solved,
            nodes_expanded: self.charged,
            best_similarity,
            trajectory: self.trajectory,
            stats: SearchStats {
                tree_nodes: tree.len(),
                ..stats
            },
            warnings,
            error,
            wall_time_s: start.elapsed().as_secs_f64(),
            tree,
        }
    }
}

/// Renderer handed to policies during the parallel phase: reads the shared
/// cache and keeps its own renders for the merge.
struct Scratch<'a, 'g> {
    problem: &'a SearchProblem<'g>,
    snapshot: &'a HashMap<SyntaxTree, Arc<Canvas>>,
    limit: usize,
    rendered: Vec<(SyntaxTree, Arc<Canvas>)>,
    local: HashMap<SyntaxTree, usize>,
}

impl<'a, 'g> Scratch<'a, 'g> {
    fn new(problem: &'a SearchProblem<'g>, snapshot: &'a HashMap<SyntaxTree, Arc<Canvas>>, limit: usize) -> Self {
        Scratch {
            problem,
            snapshot,
            limit,
            rendered: Vec::new(),
            local: HashMap::new(),
        }
    }
}

impl Render for Scratch<'_, '_> {
    fn render(&mut self, t: &SyntaxTree) -> Option<Canvas> {
        if let Some(img) = self.snapshot.get(t) {
            return Some((**img).clone());
        }
        if let Some(&i) = self.local.get(t) {
            return Some((*self.rendered[i].1).clone());
        }
        if self.rendered.len() >= self.limit {
            return None;
        }
        let img = self.problem.observe(t).ok()?;
        self.local.insert(t.clone(), self.rendered.len());
        self.rendered.push((t.clone(), Arc::new(img.clone())));
        Some(img)
    }
}

/// Sequential renderer charging the ledger directly.
struct Direct<'l, 'p, 'g>(&'l mut Ledger<'p, 'g>);

impl Render for Direct<'_, '_, '_> {
    fn render(&mut self, t: &SyntaxTree) -> Option<Canvas> {
        if self.0.solved {
            return None;
        }
        self.0.materialize(t, None).map(|img| (*img).clone())
    }
}

fn estimate(problem: &SearchProblem<'_>, value: &dyn Value, program: &SyntaxTree, image: &Canvas) -> Option<f64> {
    let q = ValueQuery {
        env: problem.env,
        grammar: problem.grammar,
        program,
        image,
        target: &problem.target,
    };
    value.estimate(&q).ok().filter(|v| v.is_finite())
}

/// Ranking: value, then depth, then policy score, then creation order.
fn rank(nodes: &[SearchNode], ids: &mut [usize]) {
    ids.sort_by(|&a, &b| {
        let (x, y) = (&nodes[a], &nodes[b]);
        x.value
            .total_cmp(&y.value)
            .then(x.depth.cmp(&y.depth))
            .then(y.score.total_cmp(&x.score))
            .then(a.cmp(&b))
    });
}

struct Search<'p, 'g> {
    problem: &'p SearchProblem<'g>,
    cfg: &'p SearchConfig,
    ledger: Ledger<'p, 'g>,
    nodes: Vec<SearchNode>,
    seen: HashSet<SyntaxTree>,
    stats: SearchStats,
    warnings: Vec<String>,
    error: Option<String>,
}

impl<'p, 'g> Search<'p, 'g> {
    fn new(problem: &'p SearchProblem<'g>, cfg: &'p SearchConfig) -> Self {
        Search {
            problem,
            cfg,
            ledger: Ledger::new(problem, cfg.expansion_budget),
            nodes: Vec::new(),
            seen: HashSet::new(),
            stats: SearchStats::default(),
            warnings: Vec::new(),
            error: None,
        }
    }

    fn note_error(&mut self, e: impl ToString) {
        if self.error.is_none() {
            self.error = Some(e.to_string());
        }
    }

    /// Applies a proposal and materializes the result; `None` if it is
    /// rejected, a duplicate, or the budget ran out.
    fn child_program(&mut self, parent: &SyntaxTree, p: &EditProposal) -> Option<(SyntaxTree, Arc<Canvas>)> {
        let g = self.problem.grammar;
        if validate_proposal(g, parent, p, self.cfg.sigma_small).is_err() {
            self.stats.invalid_proposals += 1;
            return None;
        }
        let Ok(program) = mutation::apply(g, parent, &p.mutation()) else {
            self.stats.invalid_proposals += 1;
            return None;
        };
        if program.sigma() > self.cfg.sigma_cap {
            self.stats.oversize_discarded += 1;
            return None;
        }
        if self.seen.contains(&program) {
            self.stats.duplicates += 1;
            return None;
        }
        let image = self.ledger.materialize(&program, None)?;
        Some((program, image))
    }

    fn push_node(&mut self, program: SyntaxTree, image: Arc<Canvas>, value: f64, parent: Option<usize>, score: f64) -> usize {
        let depth = parent.map_or(0, |p| self.nodes[p].depth + 1);
        self.seen.insert(program.clone());
        self.nodes.push(SearchNode {
            program,
            image,
            value,
            parent,
            depth,
            expansions_at_creation: self.ledger.charged,
            score,
        });
        self.nodes.len() - 1
    }

    /// Values for freshly materialized programs, in parallel.
    fn values(&mut self, value: &dyn Value, fresh: &[(SyntaxTree, Arc<Canvas>)]) -> Vec<f64> {
        let problem = self.problem;
        let out: Vec<Option<f64>> = fresh
            .par_iter()
            .map(|(t, img)| estimate(problem, value, t, img))
            .collect();
        out.into_iter()
            .map(|v| {
                v.unwrap_or_else(|| {
                    self.stats.value_failures += 1;
                    f64::MAX
                })
            })
            .collect()
    }

    fn random_programs(&mut self) -> Vec<SyntaxTree> {
        let g = self.problem.grammar;
        let mut rng = node_rng(self.cfg.seed, INIT_STREAM);
        (0..self.cfg.beam_size)
            .filter_map(|_| g.constrained_sample(g.start(), 0, self.cfg.init_sigma_max as i32, &mut rng).ok())
            .collect()
    }

    fn init(&mut self, source: InitSource, value: &dyn Value) -> Vec<usize> {
        let programs = match source {
            InitSource::Random => self.random_programs(),
            InitSource::Programs(ps) => ps,
            InitSource::External(client) => {
                self.ledger.charge_query();
                let blank = self.problem.env.blank();
                match client.initial_programs(self.problem.grammar, &blank, &self.problem.target, self.cfg.beam_size) {
                    Ok(ps) if !ps.is_empty() => ps,
                    Ok(_) => {
                        self.warnings.push("external init returned no programs; using random init".into());
                        self.random_programs()
                    }
                    Err(e) => {
                        self.warnings.push(format!("external init failed ({e}); using random init"));
                        self.random_programs()
                    }
                }
            }
        };
        let mut fresh = Vec::new();
        for t in programs {
            if self.ledger.done() {
                break;
            }
            if t.sigma() > self.cfg.sigma_cap {
                self.stats.oversize_discarded += 1;
                continue;
            }
            if !self.seen.insert(t.clone()) {
                self.stats.duplicates += 1;
                continue;
            }
            if let Some(img) = self.ledger.materialize(&t, None) {
                fresh.push((t, img));
            }
        }
        let values = self.values(value, &fresh);
        let mut ids: Vec<usize> = fresh
            .into_iter()
            .zip(values)
            .map(|((t, img), v)| self.push_node(t, img, v, None, 0.0))
            .collect();
        rank(&self.nodes, &mut ids);
        ids
    }

    fn beam(&mut self, policy: &dyn Policy, value: &dyn Value, source: InitSource) {
        // Unexpanded nodes; each iteration expands the best of them.
        let mut open = self.init(source, value);
        while !self.ledger.done() {
            rank(&self.nodes, &mut open);
            let frontier: Vec<usize> = open.drain(..open.len().min(self.cfg.beam_size)).collect();
            if frontier.is_empty() {
                break;
            }
            self.stats.iterations += 1;

            let outputs = self.propose_all(policy, &frontier);
            let mut fresh = Vec::new();
            let mut lineage = Vec::new();
            'merge: for (&parent, (rendered, proposals)) in frontier.iter().zip(outputs) {
                self.stats.policy_queries += 1;
                for (t, img) in rendered {
                    self.ledger.materialize(&t, Some(img));
                    if self.ledger.done() {
                        break 'merge;
                    }
                }
                let proposals = match proposals {
                    Ok(p) => p,
                    Err(e) => {
                        self.stats.policy_failures += 1;
                        self.note_error(e);
                        continue;
                    }
                };
                let parent_program = self.nodes[parent].program.clone();
                for p in proposals.iter().take(self.cfg.k) {
                    if let Some((t, img)) = self.child_program(&parent_program, p) {
                        self.seen.insert(t.clone());
                        fresh.push((t, img));
                        lineage.push((parent, p.score));
                    }
                    if self.ledger.done() {
                        break 'merge;
                    }
                }
            }
            let values = self.values(value, &fresh);
            let children: Vec<usize> = fresh
                .into_iter()
                .zip(values)
                .zip(lineage)
                .map(|(((t, img), v), (parent, score))| self.push_node(t, img, v, Some(parent), score))
                .collect();
            open.extend(children);
        }
    }

    fn propose_all(
        &self,
        policy: &dyn Policy,
        frontier: &[usize],
    ) -> Vec<(Vec<(SyntaxTree, Arc<Canvas>)>, Result<Vec<EditProposal>, String>)> {
        let limit = self.ledger.remaining();
        let snapshot = &self.ledger.cache;
        frontier
            .par_iter()
            .map(|&id| {
                let node = &self.nodes[id];
                let mut scratch = Scratch::new(self.problem, snapshot, limit);
                let mut rng = node_rng(self.cfg.seed, id as u64);
                let q = PolicyQuery {
                    env: self.problem.env,
                    grammar: self.problem.grammar,
                    program: &node.program,
                    image: &node.image,
                    target: &self.problem.target,
                    k: self.cfg.k,
                    sigma_small: self.cfg.sigma_small,
                };
                let proposals = policy.propose(&q, &mut scratch, &mut rng).map_err(|e| e.to_string());
                (scratch.rendered, proposals)
            })
            .collect()
    }

    fn finish(self, policy: &dyn Policy, start: Instant) -> SearchResult {
        let stats = SearchStats {
            external: policy.stats(),
            ..self.stats
        };
        self.ledger.finish(stats, self.warnings, self.error, start, self.nodes)
    }
}

/// Value-guided beam search. Each iteration takes the `beam_size` best
/// nodes that have not been expanded yet, asks the policy for `k`
/// proposals apiece and adds the new children to the pool. No node is
/// expanded twice; the best program seen is tracked throughout.
pub fn beam_search(
    problem: &SearchProblem<'_>,
    policy: &dyn Policy,
    value: &dyn Value,
    init: InitSource,
    cfg: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut search = Search::new(problem, cfg);
    search.beam(policy, value, init);
    Ok(search.finish(policy, start))
}

/// Follows the policy's top proposal from `init` until the target is
/// reproduced, the step limit or budget is hit, or the policy stalls on a
/// program it has already visited.
pub fn rollout(
    problem: &SearchProblem<'_>,
    policy: &dyn Policy,
    init: &SyntaxTree,
    cfg: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut s = Search::new(problem, cfg);
    let Some(image) = s.ledger.materialize(init, None) else {
        s.note_error("initial program failed to render");
        return Ok(s.finish(policy, start));
    };
    let mut current = s.push_node(init.clone(), image, 0.0, None, 0.0);
    for _ in 0..cfg.max_rollout_steps {
        if s.ledger.done() {
            break;
        }
        s.stats.iterations += 1;
        s.stats.policy_queries += 1;
        let mut rng = node_rng(cfg.seed, current as u64);
        let node = s.nodes[current].clone();
        let q = PolicyQuery {
            env: problem.env,
            grammar: problem.grammar,
            program: &node.program,
            image: &node.image,
            target: &problem.target,
            k: 1,
            sigma_small: cfg.sigma_small,
        };
        let proposals = match policy.propose(&q, &mut Direct(&mut s.ledger), &mut rng) {
            Ok(p) => p,
            Err(e) => {
                s.stats.policy_failures += 1;
                s.note_error(e);
                break;
            }
        };
        if s.ledger.done() {
            break;
        }
        let Some(p) = proposals.first() else { break };
        let Some((t, img)) = s.child_program(&node.program, p) else {
            break;
        };
        current = s.push_node(t, img, 0.0, Some(current), p.score);
    }
    Ok(s.finish(policy, start))
}
