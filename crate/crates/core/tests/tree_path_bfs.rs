//! Checks canonical paths against breadth-first search over the full
//! small-mutation space of a tiny grammar.

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treediff::grammar::{Grammar, NodePath, SyntaxTree};
use treediff::mutation::{apply, validate, Mutation};
use treediff::tree_path::{edit_distance, first_step, full_path, structural_distance};

const TINY: &str = "\
%primitives D
s: pair | dot
pair: (P s s)
dot: (D color)
color: r | g
";
const SMALL: u32 = 2;
const CAP: u32 = 4;

fn neighbours(g: &Grammar, t: &SyntaxTree) -> Vec<SyntaxTree> {
    let mut out = Vec::new();
    for (path, node) in t.nodes() {
        let options = g.enumerate(node.rule(), SMALL, 10_000).unwrap();
        for r in options {
            let m = Mutation {
                target_path: path.clone(),
                replacement: r,
            };
            if validate(g, t, &m, SMALL).is_err() {
                continue;
            }
            let next = apply(g, t, &m).unwrap();
            if next.sigma() <= CAP {
                out.push(next);
            }
        }
    }
    out
}

fn bfs(g: &Grammar, from: &SyntaxTree) -> HashMap<SyntaxTree, usize> {
    let mut dist = HashMap::from([(from.clone(), 0)]);
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(t) = queue.pop_front() {
        let d = dist[&t];
        for n in neighbours(g, &t) {
            if !dist.contains_key(&n) {
                dist.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

#[test]
fn canonical_paths_are_valid_and_never_beat_bfs() {
    let g = Grammar::load("tiny", TINY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    for round in 0..200 {
        let a = g.constrained_sample(g.start(), 0, 3, &mut rng).unwrap();
        let b = g.constrained_sample(g.start(), 0, 3, &mut rng).unwrap();
        let steps = first_step(&g, &a, &b, SMALL, &mut rng).unwrap();
        let mut t = a.clone();
        for m in &steps {
            validate(&g, &t, m, SMALL).unwrap();
            t = apply(&g, &t, m).unwrap();
        }
        if a != b {
            assert!(structural_distance(&t, &b) < structural_distance(&a, &b));
        }

        let path = full_path(&g, &a, &b, SMALL, round).unwrap();
        let states = path.states(&g).unwrap();
        assert_eq!(states.last().unwrap(), &b);
        assert!(states.iter().all(|s| s.sigma() <= CAP));
        let optimal = bfs(&g, &a)[&b];
        let ours = edit_distance(&g, &a, &b, SMALL).unwrap();
        assert!(ours >= optimal, "{} -> {}", a.to_text(&g), b.to_text(&g));
        assert_eq!(ours == 0, optimal == 0);
        checked += 1;
    }
    assert_eq!(checked, 200);
}

#[test]
fn one_leaf_differences_are_optimal() {
    let g = Grammar::load("tiny", TINY).unwrap();
    let a = g.parse_text("(P (D r) (P (D g) (D r)))").unwrap();
    let b = g.parse_text("(P (D r) (P (D r) (D r)))").unwrap();
    assert_eq!(bfs(&g, &a)[&b], 1);
    assert_eq!(edit_distance(&g, &a, &b, SMALL).unwrap(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let steps = first_step(&g, &a, &b, SMALL, &mut rng).unwrap();
    assert_eq!(steps[0].target_path, NodePath(vec![1, 0, 0]));
}
