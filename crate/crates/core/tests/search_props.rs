use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treediff::env::Env;
use treediff::grammar::SyntaxTree;
use treediff::mutation::{noise_chain, DEFAULT_SIGMA_SMALL};
use treediff::policy::{Endpoint, ExternalClient, HillclimbPolicy, OraclePolicy, OracleValue, PixelValue};
use treediff::search::{beam_search, rollout, InitSource, SearchConfig, SearchProblem, SearchResult};
use treediff::tree_path::step_bound;

fn cfg(beam: usize, budget: usize, k: usize, seed: u64) -> SearchConfig {
    SearchConfig {
        beam_size: beam,
        expansion_budget: budget,
        k,
        seed,
        ..SearchConfig::default()
    }
}

fn sample(env: Env, seed: u64, sigma_max: i32) -> SyntaxTree {
    let g = env.grammar();
    g.constrained_sample(g.start(), 0, sigma_max, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
}

fn json(r: &SearchResult) -> String {
    serde_json::to_string(r).unwrap()
}

#[test]
fn unit_beam_is_greedy_rollout() {
    for env in [Env::Csg2d, Env::Rainbow] {
        let g = env.grammar();
        for seed in 0..6 {
            let truth = sample(env, seed, 4);
            let init = sample(env, seed + 100, 4);
            let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
            let c = cfg(1, 300, 1, seed);
            let hill = HillclimbPolicy::default();
            let oracle = OraclePolicy { truth: truth.clone() };
            let value = OracleValue {
                truth: truth.clone(),
                sigma_small: DEFAULT_SIGMA_SMALL,
            };
            for policy in [&hill as &dyn treediff::policy::Policy, &oracle] {
                let a = rollout(&problem, policy, &init, &c).unwrap();
                let b = beam_search(&problem, policy, &value, InitSource::Programs(vec![init.clone()]), &c).unwrap();
                assert_eq!(a.trajectory, b.trajectory);
                assert_eq!((a.solved, a.nodes_expanded), (b.solved, b.nodes_expanded));
                let chain = |r: &SearchResult| r.tree.iter().map(|n| n.program.clone()).collect::<Vec<_>>();
                assert_eq!(chain(&a), chain(&b));
            }
        }
    }
}

#[test]
fn oracle_rollout_from_noised_state() {
    let env = Env::Csg2d;
    let g = env.grammar();
    for seed in 0..40 {
        let truth = sample(env, seed, 8);
        let noised = noise_chain(g, &truth, 5, DEFAULT_SIGMA_SMALL, seed).unwrap();
        let init = noised.last().clone();
        let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
        let r = rollout(&problem, &OraclePolicy { truth: truth.clone() }, &init, &cfg(1, 5000, 1, seed)).unwrap();
        assert!(r.solved, "seed {seed}: {r:?}");
        assert!(r.nodes_expanded <= step_bound(&init, &truth) + 1);
        // Every rollout step is one admissible small edit.
        for w in r.tree.windows(2) {
            assert_eq!(w[1].parent, Some(w[0].depth));
        }
    }
}

#[test]
fn deterministic_across_thread_counts() {
    let env = Env::Csg2d;
    let g = env.grammar();
    let truth = sample(env, 7, 6);
    let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
    let run = |threads: usize, hill: bool| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let c = cfg(8, 400, 3, 11);
            if hill {
                json(&beam_search(&problem, &HillclimbPolicy::default(), &PixelValue, InitSource::Random, &c).unwrap())
            } else {
                let v = OracleValue {
                    truth: truth.clone(),
                    sigma_small: DEFAULT_SIGMA_SMALL,
                };
                json(&beam_search(&problem, &OraclePolicy { truth: truth.clone() }, &v, InitSource::Random, &c).unwrap())
            }
        })
    };
    for hill in [true, false] {
        let one = run(1, hill);
        assert_eq!(one, run(4, hill));
        assert_eq!(one, run(3, hill));
    }
}

#[test]
fn budget_monotone_and_never_exceeded() {
    let env = Env::Csg2d;
    let g = env.grammar();
    let (mut small, mut large) = (0, 0);
    for seed in 0..12 {
        let truth = sample(env, 300 + seed, 2);
        let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
        let policy = HillclimbPolicy::default();
        let a = beam_search(&problem, &policy, &PixelValue, InitSource::Random, &cfg(4, 100, 2, seed)).unwrap();
        let b = beam_search(&problem, &policy, &PixelValue, InitSource::Random, &cfg(4, 800, 2, seed)).unwrap();
        assert!(a.nodes_expanded <= 100 && b.nodes_expanded <= 800);
        if a.solved {
            assert!(b.solved);
            assert_eq!(a.nodes_expanded, b.nodes_expanded);
        }
        small += a.solved as usize;
        large += b.solved as usize;
        for n in a.tree.iter().chain(&b.tree) {
            assert!(n.program.sigma() <= 12);
            assert_eq!(g.parse_text(&n.program.to_text(g)).unwrap(), n.program);
        }
    }
    assert!(small <= large);
}

#[test]
fn solved_results_reproduce_the_target() {
    for env in [Env::Csg2d, Env::Csg2dSketch, Env::TinySvg] {
        let g = env.grammar();
        let truth = sample(env, 21, 5);
        let problem = SearchProblem::from_program(env, g, &truth, 9).unwrap();
        let v = OracleValue {
            truth: truth.clone(),
            sigma_small: DEFAULT_SIGMA_SMALL,
        };
        let r = beam_search(&problem, &OraclePolicy { truth: truth.clone() }, &v, InitSource::Random, &cfg(16, 2000, 4, 2)).unwrap();
        assert!(r.solved, "{env}");
        let best = g.parse_text(&r.best_program).unwrap();
        let img = env.observe(g, &best, 9).unwrap();
        assert!(env.is_solved(&img, &problem.target));
    }
}

#[test]
fn duplicate_init_programs_are_dropped() {
    let env = Env::Csg2d;
    let g = env.grammar();
    let truth = g.parse_text("(Circle 3 8 8)").unwrap();
    let a = g.parse_text("(Circle 1 1 1)").unwrap();
    let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
    let init = InitSource::Programs(vec![a.clone(), a.clone(), a]);
    let c = SearchConfig {
        expansion_budget: 3,
        ..cfg(3, 3, 1, 0)
    };
    let r = beam_search(&problem, &OraclePolicy { truth }, &PixelValue, init, &c).unwrap();
    assert_eq!(r.stats.duplicates, 2);
    assert!(r.nodes_expanded <= 3);
}

#[test]
fn external_init_costs_one_plus_renders() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut w = stream.try_clone().unwrap();
        for line in BufReader::new(stream).lines() {
            let line = line.unwrap();
            let reply = if line.contains("\"hello\"") {
                r#"{"type":"ready"}"#.to_string()
            } else {
                assert!(line.contains(r#""tokens":[]"#));
                let p = |t: &str| {
                    let toks: Vec<String> = t.replace('(', "( ").replace(')', " )").split_whitespace().map(String::from).collect();
                    format!(r#"{{"pos":0,"replacement":{},"score":0}}"#, serde_json::to_string(&toks).unwrap())
                };
                format!(
                    r#"{{"type":"proposals","items":[{},{},{}]}}"#,
                    p("(Circle 1 1 1)"),
                    p("(Circle 2 2 2)"),
                    p("(Circle 1 1 1)")
                )
            };
            writeln!(w, "{reply}").unwrap();
        }
    });
    let env = Env::Csg2d;
    let g = env.grammar();
    let client = ExternalClient::connect(&Endpoint::Tcp(addr), env, 2, Duration::from_secs(10)).unwrap();
    let truth = g.parse_text("(Quad 8 8 6 6 angle_0)").unwrap();
    let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
    let c = SearchConfig {
        expansion_budget: 3,
        ..cfg(3, 3, 1, 0)
    };
    let r = beam_search(&problem, &OraclePolicy { truth }, &PixelValue, InitSource::External(Arc::new(client)), &c).unwrap();
    assert_eq!(r.nodes_expanded, 3);
    assert!(r.warnings.is_empty());
    assert_eq!(r.tree.len(), 2);
}

#[test]
fn unreachable_external_falls_back_to_random() {
    let env = Env::Csg2d;
    let g = env.grammar();
    let script = r#"read l; echo '{"type":"ready"}'; read l; echo garbage"#;
    let ep = Endpoint::Command(vec!["sh".into(), "-c".into(), script.into()]);
    let client = ExternalClient::connect(&ep, env, 2, Duration::from_secs(10)).unwrap();
    let truth = g.parse_text("(Circle 3 8 8)").unwrap();
    let problem = SearchProblem::from_program(env, g, &truth, 0).unwrap();
    let r = beam_search(&problem, &HillclimbPolicy::default(), &PixelValue, InitSource::External(Arc::new(client)), &cfg(4, 50, 1, 0)).unwrap();
    assert_eq!(r.warnings.len(), 1);
    assert!(r.tree.len() >= 4);
}
