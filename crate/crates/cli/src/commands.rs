use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use treediff::data_harness::{self, DatasetConfig, PolicyKind, Solver, TestSetConfig};
use treediff::env::Env;
use treediff::grammar::{Grammar, NodePath, SyntaxTree};
use treediff::mutation::{noise_chain, trace_lines, DEFAULT_SIGMA_SMALL};
use treediff::policy::external::DEFAULT_TIMEOUT;
use treediff::policy::{Endpoint, ExternalClient};
use treediff::render::{sketch_render, Canvas};
use treediff::search::{SearchConfig, SearchProblem};
use treediff::tree_path::full_path;

use crate::CliError;

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    match s {
        "oracle" => Ok(PolicyKind::Oracle),
        "hillclimb" => Ok(PolicyKind::Hillclimb),
        "external" => Ok(PolicyKind::External),
        _ => Err(format!("unknown policy `{s}` (expected oracle, hillclimb or external)")),
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn need_seed(v: Option<u64>) -> Result<u64, CliError> {
    v.ok_or_else(|| CliError::Usage("--seed is required for randomized commands".into()))
}

fn internal(e: impl ToString) -> CliError {
    CliError::Internal(e.to_string())
}

fn grammar(env: Env, path: Option<&Path>) -> Result<Grammar, CliError> {
    match path {
        None => Ok(env.grammar().clone()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read grammar {}: {e}", p.display())))?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("grammar");
            Grammar::load(name, &text).map_err(|e| CliError::Usage(format!("grammar {}: {e}", p.display())))
        }
    }
}

fn parse_program(g: &Grammar, text: &str, flag: &str) -> Result<SyntaxTree, CliError> {
    g.parse_text(text).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| internal(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SampleArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Grammar file to use instead of the environment's
    #[arg(long, value_name = "FILE")]
    grammar: Option<PathBuf>,
    /// Largest number of primitives (default 8)
    #[arg(long, value_name = "N")]
    sigma_max: Option<u32>,
    /// Random seed (required)
    #[arg(long)]
    seed: Option<u64>,
}

pub fn sample(a: SampleArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let seed = need_seed(a.seed)?;
    let g = grammar(env, a.grammar.as_deref())?;
    let hi = a.sigma_max.unwrap_or(8) as i32;
    let t = g
        .constrained_sample(g.start(), 0, hi, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{}", t.to_text(&g));
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MutateArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Grammar file to use instead of the environment's
    #[arg(long, value_name = "FILE")]
    grammar: Option<PathBuf>,
    /// Starting program (default: sampled from the seed)
    #[arg(long, value_name = "PROGRAM")]
    program: Option<String>,
    /// Primitive bound for the sampled starting program (default 8)
    #[arg(long, value_name = "N")]
    sigma_max: Option<u32>,
    /// Number of mutations (default 1)
    #[arg(long, value_name = "S")]
    steps: Option<usize>,
    /// Largest primitive count a mutation may introduce (default 2)
    #[arg(long, value_name = "N")]
    sigma_small: Option<u32>,
    /// Random seed (required)
    #[arg(long)]
    seed: Option<u64>,
    /// Print every step with the replaced span underlined
    #[arg(long)]
    trace: bool,
}

pub fn mutate(a: MutateArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let seed = need_seed(a.seed)?;
    let g = grammar(env, a.grammar.as_deref())?;
    let z0 = match &a.program {
        Some(p) => parse_program(&g, p, "program")?,
        None => g
            .constrained_sample(g.start(), 0, a.sigma_max.unwrap_or(8) as i32, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let small = a.sigma_small.unwrap_or(DEFAULT_SIGMA_SMALL);
    let chain = noise_chain(&g, &z0, a.steps.unwrap_or(1), small, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.trace {
        for (t, m) in chain.states.iter().zip(&chain.mutations) {
            let (line, underline) = trace_lines(&g, t, m);
            println!("{line}");
            println!("{underline}");
        }
    }
    println!("{}", chain.last().to_text(&g));
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PathArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Grammar file to use instead of the environment's
    #[arg(long, value_name = "FILE")]
    grammar: Option<PathBuf>,
    /// Source program
    #[arg(long, value_name = "PROGRAM")]
    from: Option<String>,
    /// Target program
    #[arg(long, value_name = "PROGRAM")]
    to: Option<String>,
    /// Largest primitive count per edit (default 2)
    #[arg(long, value_name = "N")]
    sigma_small: Option<u32>,
    /// Random seed for skeleton sampling (required)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct PathStep {
    path: NodePath,
    pos: usize,
    replacement: String,
    result: String,
}

#[derive(Serialize)]
struct PathOut {
    source: String,
    target: String,
    seed: u64,
    sigma_small: u32,
    length: usize,
    steps: Vec<PathStep>,
}

pub fn path(a: PathArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let seed = need_seed(a.seed)?;
    let g = grammar(env, a.grammar.as_deref())?;
    let from = parse_program(&g, &need(a.from, "from")?, "from")?;
    let to = parse_program(&g, &need(a.to, "to")?, "to")?;
    let small = a.sigma_small.unwrap_or(DEFAULT_SIGMA_SMALL);
    let p = full_path(&g, &from, &to, small, seed).map_err(internal)?;
    let states = p.states(&g).map_err(internal)?;
    let steps = p
        .steps
        .iter()
        .zip(states.windows(2))
        .map(|(m, w)| PathStep {
            path: m.target_path.clone(),
            pos: g.serialize(&w[0]).span_of(&m.target_path).map_or(0, |s| s.start),
            replacement: m.replacement.to_text(&g),
            result: w[1].to_text(&g),
        })
        .collect();
    let out = PathOut {
        source: from.to_text(&g),
        target: to.to_text(&g),
        seed,
        sigma_small: small,
        length: p.len(),
        steps,
    };
    print!("{}", to_json(&out));
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RenderArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Program text
    #[arg(long, value_name = "PROGRAM")]
    program: Option<String>,
    /// Output PNG
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Draw a hand-drawn style sketch (CSG environments; needs --seed)
    #[arg(long)]
    sketch: bool,
    /// Sketch seed
    #[arg(long)]
    seed: Option<u64>,
}

pub fn render(a: RenderArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let g = env.grammar();
    let t = parse_program(g, &need(a.program, "program")?, "program")?;
    let out = need(a.out, "out")?;
    let sketch = a.sketch || env == Env::Csg2dSketch;
    let img = if sketch {
        if !env.is_csg() {
            return Err(CliError::Usage(format!("--sketch needs a CSG environment, not {env}")));
        }
        sketch_render(g, &t, need_seed(a.seed)?)
    } else {
        env.render(g, &t)
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write_file(&out, &img.to_png())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenDatasetArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Number of records
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of records whose corrupted program is drawn fresh (default 0.2)
    #[arg(long)]
    rho: Option<f64>,
    /// Most noise steps per record (default 5)
    #[arg(long, value_name = "S")]
    s_max: Option<usize>,
    /// Largest number of primitives in a target (default 8)
    #[arg(long, value_name = "N")]
    sigma_max: Option<u32>,
    /// Largest primitive count per edit (default 2)
    #[arg(long, value_name = "N")]
    sigma_small: Option<u32>,
    /// Random seed (required)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

pub fn gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let n = need(a.n, "n")?;
    let seed = need_seed(a.seed)?;
    let out = need(a.out, "out")?;
    let d = DatasetConfig::default();
    let cfg = DatasetConfig {
        sigma_max: a.sigma_max.unwrap_or(d.sigma_max),
        s_max: a.s_max.unwrap_or(d.s_max),
        rho: a.rho.unwrap_or(d.rho),
        sigma_small: a.sigma_small.unwrap_or(d.sigma_small),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = data_harness::gen_dataset(env, &cfg, n, seed, &out).map_err(internal)?;
    let random = records.iter().filter(|r| r.from_random_init).count();
    println!("wrote {} records ({random} from random init) to {}", records.len(), out.display());
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenTestsetArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Number of instances (default 256)
    #[arg(long)]
    n: Option<usize>,
    /// Keep images at or above this percentile of LZ4 compressed size (default 95)
    #[arg(long)]
    percentile: Option<f64>,
    /// Pool size as a multiple of n, at least 20 (default 20)
    #[arg(long, value_name = "M")]
    pool_mult: Option<usize>,
    /// Largest number of primitives (default 8)
    #[arg(long, value_name = "N")]
    sigma_max: Option<u32>,
    /// Random seed (required)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

pub fn gen_testset(a: GenTestsetArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let seed = need_seed(a.seed)?;
    let out = need(a.out, "out")?;
    let d = TestSetConfig::default();
    let cfg = TestSetConfig {
        n: a.n.unwrap_or(d.n),
        pool_multiplier: a.pool_mult.unwrap_or(d.pool_multiplier),
        percentile: a.percentile.unwrap_or(d.percentile),
        sigma_max: a.sigma_max.unwrap_or(d.sigma_max),
    };
    let entries = data_harness::gen_test_set(env, &cfg, seed).map_err(|e| match e {
        data_harness::HarnessError::Param(_) => CliError::Usage(e.to_string()),
        other => internal(other),
    })?;
    let written = data_harness::write_test_set(env, &entries, &out).map_err(internal)?;
    println!("wrote {} instances to {}", written.len(), out.display());
    Ok(())
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SearchArgs {
    /// Proposal source: oracle, hillclimb or external
    #[arg(long, value_parser = parse_policy)]
    policy: Option<PolicyKind>,
    /// Policy server for --policy external: host:port or stdio:<command>
    #[arg(long, value_name = "ADDR")]
    endpoint: Option<String>,
    /// Beam width (default 64)
    #[arg(long)]
    beam: Option<usize>,
    /// Node expansion budget (default 5000)
    #[arg(long)]
    budget: Option<usize>,
    /// Proposals per expanded node (default 4)
    #[arg(long)]
    k: Option<usize>,
    /// Largest number of primitives in random initial programs (default 8)
    #[arg(long, value_name = "N")]
    init_sigma_max: Option<u32>,
    /// Programs above this many primitives are discarded (default 12)
    #[arg(long, value_name = "N")]
    sigma_cap: Option<u32>,
    /// Random seed (required)
    #[arg(long)]
    seed: Option<u64>,
}

impl SearchArgs {
    fn config(&self) -> Result<SearchConfig, CliError> {
        let d = SearchConfig::default();
        let cfg = SearchConfig {
            beam_size: self.beam.unwrap_or(d.beam_size),
            expansion_budget: self.budget.unwrap_or(d.expansion_budget),
            k: self.k.unwrap_or(d.k),
            init_sigma_max: self.init_sigma_max.unwrap_or(d.init_sigma_max),
            sigma_cap: self.sigma_cap.unwrap_or(d.sigma_cap),
            seed: need_seed(self.seed)?,
            ..d
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn solver(&self, env: Env) -> Result<Solver, CliError> {
        let policy = need(self.policy, "policy")?;
        let client = match (policy, &self.endpoint) {
            (PolicyKind::External, None) => return Err(CliError::Usage("--policy external needs --endpoint".into())),
            (PolicyKind::External, Some(addr)) => {
                let ep: Endpoint = addr.parse().map_err(|e: treediff::policy::ExternalError| CliError::Usage(e.to_string()))?;
                let c = ExternalClient::connect(&ep, env, DEFAULT_SIGMA_SMALL, DEFAULT_TIMEOUT).map_err(internal)?;
                Some(Arc::new(c))
            }
            _ => None,
        };
        Ok(Solver::new(policy, client))
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolveArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Target image (PNG)
    #[arg(long, value_name = "FILE")]
    target: Option<PathBuf>,
    /// True program, required by --policy oracle
    #[arg(long, value_name = "PROGRAM")]
    truth: Option<String>,
    /// Seed the target sketch was drawn with (csg2d-sketch; default 0)
    #[arg(long, value_name = "SEED")]
    observation_seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    search: SearchArgs,
    /// Write the full result as JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Directory for one PNG per best-so-far program
    #[arg(long, value_name = "DIR")]
    frames: Option<PathBuf>,
}

pub fn solve(a: SolveArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let g = env.grammar();
    let target_path = need(a.target, "target")?;
    let cfg = a.search.config()?;
    let truth = a.truth.as_deref().map(|t| parse_program(g, t, "truth")).transpose()?;
    let target = Canvas::read_png(&target_path).map_err(|e| CliError::Usage(format!("--target {}: {e}", target_path.display())))?;
    let problem = SearchProblem::new(env, g, target, a.observation_seed.unwrap_or(0)).map_err(|e| CliError::Usage(e.to_string()))?;
    let solver = a.search.solver(env)?;
    let result = solver.solve(&problem, truth.as_ref(), &cfg).map_err(|e| match e {
        data_harness::HarnessError::Param(m) => CliError::Usage(m),
        other => internal(other),
    })?;
    if let Some(out) = &a.out {
        write_file(out, to_json(&result).as_bytes())?;
    }
    if let Some(dir) = &a.frames {
        for (i, p) in result.trajectory.iter().enumerate() {
            let t = parse_program(g, &p.program, "frames")?;
            let img = problem.observe(&t).map_err(internal)?;
            write_file(&dir.join(format!("{i:04}.png")), &img.to_png())?;
        }
    }
    println!(
        "solved={} nodes_expanded={} best={}",
        result.solved, result.nodes_expanded, result.best_program
    );
    if result.solved {
        Ok(())
    } else {
        Err(CliError::Unsolved(format!(
            "no program reached the solve threshold within {} expansions",
            cfg.expansion_budget
        )))
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Environment: csg2d, csg2d-sketch, tinysvg or rainbow
    #[arg(long)]
    env: Option<Env>,
    /// Test set directory written by gen-testset
    #[arg(long, value_name = "DIR")]
    testset: Option<PathBuf>,
    /// Number of seeds, starting at --seed (default 5)
    #[arg(long)]
    seeds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    search: SearchArgs,
    /// Report directory (report.json, curve.csv)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let env = need(a.env, "env")?;
    let dir = need(a.testset, "testset")?;
    let out = need(a.out, "out")?;
    let cfg = a.search.config()?;
    let n_seeds = a.seeds.unwrap_or(5);
    if n_seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let instances = data_harness::load_instances(env, &dir).map_err(|e| CliError::Usage(e.to_string()))?;
    let solver = a.search.solver(env)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let report = data_harness::evaluate(env, &solver, &instances, &cfg, &seeds).map_err(internal)?;
    write_file(&out.join("report.json"), to_json(&report).as_bytes())?;
    write_file(&out.join("curve.csv"), report.curve_csv().as_bytes())?;
    let last = report.curve.last().expect("curve has the full budget");
    println!(
        "{} instances, {} seeds: solved fraction at {} expansions = {:.4} ± {:.4}",
        report.instances, n_seeds, last.budget, last.mean, last.std
    );
    Ok(())
}
