//! Training data, complexity-filtered test sets and the evaluation protocol.
//!
//! Everything here is indexed: record or instance `i` draws from its own
//! ChaCha stream of the run seed, so output does not depend on how work is
//! spread over threads.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Env;
use crate::grammar::{Grammar, SyntaxTree};
use crate::mutation::{self, Mutation, DEFAULT_SIGMA_SMALL};
use crate::policy::{
    resolve_edit, ExternalClient, ExternalPolicy, ExternalValue, HillclimbPolicy, OraclePolicy, OracleValue, PixelValue,
    Policy, Value,
};
use crate::render::{Canvas, RenderError};
use crate::search::{beam_search, InitSource, SearchConfig, SearchError, SearchProblem, SearchResult};
use crate::tree_path::{self, CANONICAL_SEED};

pub const MANIFEST: &str = "manifest.ndjson";
pub const INSTANCES: &str = "instances.ndjson";
pub const IMAGES: &str = "images";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad record in {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("only {eligible} of {pool} pooled programs clear the {percentile}th percentile, {wanted} requested; raise the pool multiplier")]
    TooFewSurvivors {
        eligible: usize,
        pool: usize,
        percentile: f64,
        wanted: usize,
    },
    #[error("instance {index}: {message}")]
    Instance { index: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Independent stream `index` of `seed`.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub sigma_max: u32,
    pub s_max: usize,
    /// Probability of drawing the mutated program fresh instead of noising.
    pub rho: f64,
    pub sigma_small: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sigma_max: 8,
            s_max: 5,
            rho: 0.2,
            sigma_small: DEFAULT_SIGMA_SMALL,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.sigma_max == 0 || self.s_max == 0 || self.sigma_small == 0 {
            return Err(HarnessError::Param("sigma_max, s_max and sigma_small must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(HarnessError::Param(format!("rho {} is outside [0, 1]", self.rho)));
        }
        Ok(())
    }
}

/// One training example before it is written out.
#[derive(Debug, Clone)]
pub struct RecordDraft {
    pub target: SyntaxTree,
    pub mutated: SyntaxTree,
    /// First step of the canonical path from `mutated` to `target`.
    pub edit: Mutation,
    pub edit_pos: usize,
    pub value_target: usize,
    pub s: usize,
    pub from_random_init: bool,
    pub observation_seed: u64,
}

/// Draws a target, corrupts it and labels the corruption with the first
/// reverse-path edit. Draws where the corruption undoes itself are redrawn.
pub fn gen_training_record<R: Rng + ?Sized>(env: Env, rng: &mut R, cfg: &DatasetConfig) -> RecordDraft {
    let g = env.grammar();
    let hi = cfg.sigma_max as i32;
    loop {
        let target = g
            .constrained_sample(g.start(), 0, hi, rng)
            .expect("start rule admits 1..sigma_max primitives");
        let from_random_init = rng.random_bool(cfg.rho);
        let (mutated, s) = if from_random_init {
            let t = g.constrained_sample(g.start(), 0, hi, rng).expect("as above");
            (t, 0)
        } else {
            let s = rng.random_range(1..=cfg.s_max);
            let chain = mutation::noise_chain_with(g, &target, s, cfg.sigma_small, 0, rng).expect("csg-style grammars always admit a mutation");
            (chain.last().clone(), s)
        };
        if mutated == target {
            continue;
        }
        let path = tree_path::full_path(g, &mutated, &target, cfg.sigma_small, CANONICAL_SEED).expect("paths between start-rule trees exist");
        let edit = path.steps[0].clone();
        let edit_pos = g
            .serialize(&mutated)
            .span_of(&edit.target_path)
            .expect("edit path lies in the mutated tree")
            .start;
        let observation_seed = rng.random();
        return RecordDraft {
            target,
            mutated,
            edit,
            edit_pos,
            value_target: path.len(),
            s,
            from_random_init,
            observation_seed,
        };
    }
}

/// A line of `manifest.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub target_tokens: Vec<String>,
    pub mutated_tokens: Vec<String>,
    pub target_image: String,
    pub mutated_image: String,
    pub edit_pos: usize,
    pub replacement_tokens: Vec<String>,
    pub value_target: usize,
    pub s: usize,
    pub from_random_init: bool,
    pub observation_seed: u64,
}

impl TrainingRecord {
    pub fn from_draft(g: &Grammar, d: &RecordDraft, index: usize) -> Self {
        TrainingRecord {
            target_tokens: g.serialize(&d.target).texts(g),
            mutated_tokens: g.serialize(&d.mutated).texts(g),
            target_image: format!("{IMAGES}/{index:06}_target.png"),
            mutated_image: format!("{IMAGES}/{index:06}_mutated.png"),
            edit_pos: d.edit_pos,
            replacement_tokens: g.serialize(&d.edit.replacement).texts(g),
            value_target: d.value_target,
            s: d.s,
            from_random_init: d.from_random_init,
            observation_seed: d.observation_seed,
        }
    }

    pub fn target(&self, g: &Grammar) -> Result<SyntaxTree, String> {
        parse_tokens(g, &self.target_tokens)
    }

    pub fn mutated(&self, g: &Grammar) -> Result<SyntaxTree, String> {
        parse_tokens(g, &self.mutated_tokens)
    }

    /// The labelled edit applied to the mutated program.
    pub fn apply_edit(&self, g: &Grammar, sigma_small: u32) -> Result<SyntaxTree, String> {
        let mutated = self.mutated(g)?;
        let p = resolve_edit(g, &mutated, self.edit_pos, &self.replacement_tokens, 0.0, sigma_small).map_err(|e| e.to_string())?;
        mutation::apply(g, &mutated, &p.mutation()).map_err(|e| e.to_string())
    }
}

pub fn parse_tokens(g: &Grammar, tokens: &[String]) -> Result<SyntaxTree, String> {
    g.parse_text(&tokens.join(" ")).map_err(|e| e.to_string())
}

/// Writes `n` records and their images under `out`. Work runs on the
/// current rayon pool; the manifest is written in index order.
pub fn gen_dataset(env: Env, cfg: &DatasetConfig, n: usize, seed: u64, out: &Path) -> Result<Vec<TrainingRecord>, HarnessError> {
    cfg.validate()?;
    let g = env.grammar();
    let images = out.join(IMAGES);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let records: Vec<TrainingRecord> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = gen_training_record(env, &mut indexed_rng(seed, i as u64), cfg);
            let rec = TrainingRecord::from_draft(g, &d, i);
            for (rel, t) in [(&rec.target_image, &d.target), (&rec.mutated_image, &d.mutated)] {
                let path = out.join(rel);
                let bytes = env.observe(g, t, d.observation_seed)?.to_png();
                fs::write(&path, bytes).map_err(io_err(&path))?;
            }
            Ok(rec)
        })
        .collect::<Result<_, HarnessError>>()?;
    write_ndjson(&out.join(MANIFEST), &records)?;
    Ok(records)
}

fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// A line of `instances.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInstance {
    pub program_tokens: Vec<String>,
    pub image: String,
    /// LZ4 frame size of the raw 8-bit pixel buffer.
    pub compressed_size: usize,
    pub observation_seed: u64,
}

impl TestInstance {
    pub fn program(&self, g: &Grammar) -> Result<SyntaxTree, String> {
        parse_tokens(g, &self.program_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetConfig {
    pub n: usize,
    pub pool_multiplier: usize,
    pub percentile: f64,
    pub sigma_max: u32,
}

impl Default for TestSetConfig {
    fn default() -> Self {
        TestSetConfig {
            n: 256,
            pool_multiplier: 20,
            percentile: 95.0,
            sigma_max: 8,
        }
    }
}

/// Number of pool entries at or above `percentile`: `⌈(1 − p/100)·pool⌉`.
pub fn eligible_count(pool: usize, percentile: f64) -> usize {
    // Work in integer hundredths so 95 of 5120 is exactly 256.
    let keep = (10_000.0 - (percentile * 100.0).round()).max(0.0) as usize;
    (pool * keep).div_ceil(10_000)
}

/// Indices of the `eligible_count` largest sizes, ties broken by lower
/// index, returned in ascending index order.
pub fn select_by_percentile(sizes: &[usize], percentile: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    order.truncate(eligible_count(sizes.len(), percentile));
    order.sort_unstable();
    order
}

pub struct TestPoolEntry {
    pub program: SyntaxTree,
    pub image: Canvas,
    pub compressed_size: usize,
    pub observation_seed: u64,
}

/// Renders a random pool of `n · pool_multiplier` programs.
pub fn test_pool(env: Env, cfg: &TestSetConfig, seed: u64) -> Result<Vec<TestPoolEntry>, HarnessError> {
    let g = env.grammar();
    (0..cfg.n * cfg.pool_multiplier)
        .into_par_iter()
        .map(|i| {
            let mut rng = indexed_rng(seed, i as u64);
            let program = g
                .constrained_sample(g.start(), 0, cfg.sigma_max as i32, &mut rng)
                .map_err(|e| HarnessError::Param(e.to_string()))?;
            let observation_seed = rng.random();
            let image = env.observe(g, &program, observation_seed)?;
            Ok(TestPoolEntry {
                compressed_size: image.compressed_size(),
                program,
                image,
                observation_seed,
            })
        })
        .collect()
}

/// Keeps the hardest-to-compress pool entries and returns the first `n`.
pub fn gen_test_set(env: Env, cfg: &TestSetConfig, seed: u64) -> Result<Vec<TestPoolEntry>, HarnessError> {
    if cfg.n == 0 || cfg.pool_multiplier < 20 {
        return Err(HarnessError::Param(format!(
            "need n > 0 and pool multiplier >= 20 (got n = {}, multiplier = {})",
            cfg.n, cfg.pool_multiplier
        )));
    }
    if !(0.0..100.0).contains(&cfg.percentile) {
        return Err(HarnessError::Param(format!("percentile {} is outside [0, 100)", cfg.percentile)));
    }
    let pool = test_pool(env, cfg, seed)?;
    let sizes: Vec<usize> = pool.iter().map(|e| e.compressed_size).collect();
    let keep = select_by_percentile(&sizes, cfg.percentile);
    if keep.len() < cfg.n {
        return Err(HarnessError::TooFewSurvivors {
            eligible: keep.len(),
            pool: pool.len(),
            percentile: cfg.percentile,
            wanted: cfg.n,
        });
    }
    let mut wanted: Vec<bool> = vec![false; pool.len()];
    for &i in keep.iter().take(cfg.n) {
        wanted[i] = true;
    }
    Ok(pool.into_iter().zip(wanted).filter_map(|(e, w)| w.then_some(e)).collect())
}

pub fn write_test_set(env: Env, entries: &[TestPoolEntry], out: &Path) -> Result<Vec<TestInstance>, HarnessError> {
    let g = env.grammar();
    let images = out.join(IMAGES);
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let instances: Vec<TestInstance> = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let rel = format!("{IMAGES}/{i:06}.png");
            let path = out.join(&rel);
            fs::write(&path, e.image.to_png()).map_err(io_err(&path))?;
            Ok(TestInstance {
                program_tokens: g.serialize(&e.program).texts(g),
                image: rel,
                compressed_size: e.compressed_size,
                observation_seed: e.observation_seed,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    write_ndjson(&out.join(INSTANCES), &instances)?;
    Ok(instances)
}

pub fn read_test_set(dir: &Path) -> Result<Vec<TestInstance>, HarnessError> {
    read_ndjson(&dir.join(INSTANCES))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Oracle,
    Hillclimb,
    External,
}

/// Policy, value and initialization for one search.
#[derive(Clone)]
pub struct Solver {
    pub policy: PolicyKind,
    /// Serves external policy, value and initialization when present.
    pub client: Option<Arc<ExternalClient>>,
    /// Rank children by oracle edit distance when the truth is known.
    pub oracle_value: bool,
}

impl Solver {
    pub fn new(policy: PolicyKind, client: Option<Arc<ExternalClient>>) -> Self {
        Solver {
            policy,
            client,
            oracle_value: policy == PolicyKind::Oracle,
        }
    }

    /// Runs beam search on `problem`; `truth` is needed by oracle parts.
    pub fn solve(&self, problem: &SearchProblem<'_>, truth: Option<&SyntaxTree>, cfg: &SearchConfig) -> Result<SearchResult, HarnessError> {
        let need_truth = || {
            truth
                .cloned()
                .ok_or_else(|| HarnessError::Param("the oracle needs the true program".into()))
        };
        let need_client = || {
            self.client
                .clone()
                .ok_or_else(|| HarnessError::Param("the external policy needs an endpoint".into()))
        };
        let policy: Box<dyn Policy> = match self.policy {
            PolicyKind::Oracle => Box::new(OraclePolicy { truth: need_truth()? }),
            PolicyKind::Hillclimb => Box::new(HillclimbPolicy::default()),
            PolicyKind::External => Box::new(ExternalPolicy { client: need_client()? }),
        };
        let value: Box<dyn Value> = if self.oracle_value {
            Box::new(OracleValue {
                truth: need_truth()?,
                sigma_small: cfg.sigma_small,
            })
        } else if let (PolicyKind::External, Some(client)) = (self.policy, &self.client) {
            Box::new(ExternalValue { client: client.clone() })
        } else {
            Box::new(PixelValue)
        };
        let init = match (&self.policy, &self.client) {
            (PolicyKind::External, Some(c)) => InitSource::External(c.clone()),
            _ => InitSource::Random,
        };
        Ok(beam_search(problem, policy.as_ref(), value.as_ref(), init, cfg)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance: usize,
    pub solved: bool,
    pub nodes_expanded: usize,
    pub best_program: String,
    pub best_similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub solved: usize,
    pub outcomes: Vec<InstanceOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: Env,
    pub policy: PolicyKind,
    pub instances: usize,
    pub config: SearchConfig,
    pub runs: Vec<SeedRun>,
    /// Fraction solved within each budget, mean and standard deviation
    /// over seeds.
    pub curve: Vec<CurvePoint>,
}

impl EvalReport {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("budget,mean,std\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{}\n", p.budget, p.mean, p.std));
        }
        s
    }
}

/// Budgets at which the curve is reported.
pub fn budget_grid(budget: usize) -> Vec<usize> {
    let step = (budget / 50).max(1);
    let mut grid: Vec<usize> = (1..=budget / step).map(|i| i * step).collect();
    if grid.last() != Some(&budget) {
        grid.push(budget);
    }
    grid
}

/// Solve fraction at each budget: solved within `b` expansions.
pub fn solve_curve(expansions: &[Option<usize>], grid: &[usize]) -> Vec<f64> {
    let n = expansions.len().max(1) as f64;
    grid.iter()
        .map(|&b| expansions.iter().filter(|e| e.is_some_and(|e| e <= b)).count() as f64 / n)
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Search seed of one instance in one run.
pub fn instance_seed(run_seed: u64, instance: usize) -> u64 {
    indexed_rng(run_seed, instance as u64).random()
}

/// Runs the solver on every instance once per seed.
pub fn evaluate(
    env: Env,
    solver: &Solver,
    instances: &[(SyntaxTree, Canvas, u64)],
    cfg: &SearchConfig,
    seeds: &[u64],
) -> Result<EvalReport, HarnessError> {
    if instances.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Param("evaluation needs instances and seeds".into()));
    }
    cfg.validate()?;
    let g = env.grammar();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let outcomes: Vec<InstanceOutcome> = instances
            .par_iter()
            .enumerate()
            .map(|(i, (truth, target, obs))| {
                let problem = SearchProblem::new(env, g, target.clone(), *obs)?;
                let c = SearchConfig {
                    seed: instance_seed(seed, i),
                    ..cfg.clone()
                };
                let r = solver.solve(&problem, Some(truth), &c)?;
                Ok(InstanceOutcome {
                    instance: i,
                    solved: r.solved,
                    nodes_expanded: r.nodes_expanded,
                    best_program: r.best_program,
                    best_similarity: r.best_similarity,
                    error: r.error,
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        runs.push(SeedRun {
            seed,
            solved: outcomes.iter().filter(|o| o.solved).count(),
            outcomes,
        });
    }
    let grid = budget_grid(cfg.expansion_budget);
    let per_seed: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let e: Vec<Option<usize>> = r.outcomes.iter().map(|o| o.solved.then_some(o.nodes_expanded)).collect();
            solve_curve(&e, &grid)
        })
        .collect();
    let curve = grid
        .iter()
        .enumerate()
        .map(|(j, &budget)| {
            let xs: Vec<f64> = per_seed.iter().map(|c| c[j]).collect();
            let (mean, std) = mean_std(&xs);
            CurvePoint { budget, mean, std }
        })
        .collect();
    Ok(EvalReport {
        env,
        policy: solver.policy,
        instances: instances.len(),
        config: cfg.clone(),
        runs,
        curve,
    })
}

/// Loads a test set directory as (program, target image, observation seed).
pub fn load_instances(env: Env, dir: &Path) -> Result<Vec<(SyntaxTree, Canvas, u64)>, HarnessError> {
    let g = env.grammar();
    read_test_set(dir)?
        .into_iter()
        .enumerate()
        .map(|(index, inst)| {
            let program = inst.program(g).map_err(|message| HarnessError::Instance { index, message })?;
            let image = Canvas::read_png(dir.join(&inst.image))?;
            Ok((program, image, inst.observation_seed))
        })
        .collect()
}
