//! Hand-drawn observation model for CSG2D.
//!
//! The outline of every primitive is walked densely and only the stretches
//! lying on the boundary of the composite shape are kept. Straight
//! stretches become a spline through jittered endpoints and jittered points
//! near 50% and 75% of the way along; arcs become a spline through jittered
//! points at regular intervals. A full circle starts at a random angle and
//! over- or under-shoots its end like a lifted pen. Each stroke has its own
//! random thickness.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{catmull_rom, Point};
use crate::grammar::{Grammar, SyntaxTree};

use super::csg::{CsgScene, CsgShape};
use super::{Canvas, RenderError, HEIGHT, WIDTH};

const POINT_JITTER: f64 = 1.0;
const ALONG_JITTER: f64 = 0.05;
const ARC_SPACING: f64 = 6.0;
const PEN_LIFT: f64 = 0.35;
const BOUNDARY_PROBE: f64 = 0.75;
const SPLINE_SAMPLES: usize = 8;
const THICKNESS: (f64, f64) = (0.5, 1.5);

struct Run {
    points: Vec<Point<f64>>,
    curved: bool,
    /// Covers a whole circle.
    full: Option<(Point<f64>, f64)>,
}

/// Dense outline samples with outward normals.
fn outline(shape: &CsgShape) -> Vec<(Vec<(Point<f64>, Point<f64>)>, bool, bool)> {
    match shape {
        CsgShape::Circle(c) if c.radius > 0.0 => {
            let n = ((TAU * c.radius).ceil() as usize).max(16);
            let pts = (0..n)
                .map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    let dir = Point::new(a.cos(), a.sin());
                    (c.center + dir * c.radius, dir)
                })
                .collect();
            vec![(pts, true, true)]
        }
        CsgShape::Quad(q) if q.half.x > 0.0 && q.half.y > 0.0 => {
            let corners = q.corners();
            (0..4)
                .map(|i| {
                    let (a, b) = (corners[i], corners[(i + 1) % 4]);
                    let len = a.dist(b);
                    let edge = (b - a) * (1.0 / len);
                    let normal = Point::new(edge.y, -edge.x);
                    let n = (len.ceil() as usize).max(2);
                    let pts = (0..=n).map(|k| (a.lerp(b, k as f64 / n as f64), normal)).collect();
                    (pts, false, false)
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn boundary_runs(scene: &CsgScene) -> Vec<Run> {
    let mut runs = Vec::new();
    for shape in scene.shapes() {
        for (samples, closed, curved) in outline(shape) {
            let kept: Vec<bool> = samples
                .iter()
                .map(|&(p, n)| scene.contains(p - n * BOUNDARY_PROBE) != scene.contains(p + n * BOUNDARY_PROBE))
                .collect();
            if kept.iter().all(|&k| k) && closed {
                let CsgShape::Circle(c) = shape else { unreachable!() };
                runs.push(Run {
                    points: Vec::new(),
                    curved,
                    full: Some((c.center, c.radius)),
                });
                continue;
            }
            // Start after a gap so closed outlines do not split a run.
            let start = if closed {
                kept.iter().position(|&k| !k).map(|i| i + 1).unwrap_or(0)
            } else {
                0
            };
            let mut current = Vec::new();
            for i in 0..samples.len() {
                let j = (start + i) % samples.len();
                if kept[j] {
                    current.push(samples[j].0);
                } else if !current.is_empty() {
                    runs.push(Run {
                        points: std::mem::take(&mut current),
                        curved,
                        full: None,
                    });
                }
            }
            if !current.is_empty() {
                runs.push(Run {
                    points: current,
                    curved,
                    full: None,
                });
            }
        }
    }
    runs
}

fn stamp_segment(canvas: &mut Canvas, a: Point<f64>, b: Point<f64>, radius: f64) {
    let lo_x = (a.x.min(b.x) - radius).floor().max(0.0) as usize;
    let hi_x = ((a.x.max(b.x) + radius).ceil().max(0.0) as usize).min(WIDTH);
    let lo_y = (a.y.min(b.y) - radius).floor().max(0.0) as usize;
    let hi_y = ((a.y.max(b.y) + radius).ceil().max(0.0) as usize).min(HEIGHT);
    let ab = b - a;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let ap = p - a;
            let t = if len2 > 0.0 {
                ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            if p.dist(a + ab * t) <= radius {
                canvas.set(x, y, &[1.0]);
            }
        }
    }
}

/// Stochastic stroke rendering of a CSG2D program's outline.
pub fn sketch_render(g: &Grammar, t: &SyntaxTree, seed: u64) -> Result<Canvas, RenderError> {
    let scene = CsgScene::compile(g, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, POINT_JITTER).expect("positive sigma");
    let along = Normal::new(0.0, ALONG_JITTER).expect("positive sigma");
    let mut canvas = Canvas::gray();
    for run in boundary_runs(&scene) {
        let mut controls: Vec<Point<f64>> = if let Some((center, radius)) = run.full {
            let start = rng.random_range(0.0..TAU);
            let sweep = TAU + rng.random_range(-PEN_LIFT..PEN_LIFT);
            let n = ((sweep * radius / ARC_SPACING).ceil() as usize).max(6);
            (0..=n)
                .map(|i| {
                    let a = start + sweep * i as f64 / n as f64;
                    center + Point::new(a.cos(), a.sin()) * radius
                })
                .collect()
        } else if run.curved {
            let step = (ARC_SPACING as usize).max(1);
            let mut v: Vec<_> = run.points.iter().copied().step_by(step).collect();
            if run.points.len() > 1 && (run.points.len() - 1) % step != 0 {
                v.push(*run.points.last().unwrap());
            }
            v
        } else {
            let (a, b) = (run.points[0], *run.points.last().unwrap());
            let t1 = 0.5 + along.sample(&mut rng);
            let t2 = 0.75 + along.sample(&mut rng);
            vec![a, a.lerp(b, t1), a.lerp(b, t2), b]
        };
        for p in controls.iter_mut() {
            *p = *p + Point::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
        }
        let radius = rng.random_range(THICKNESS.0..THICKNESS.1);
        let curve = catmull_rom(&controls, SPLINE_SAMPLES);
        if curve.len() == 1 {
            stamp_segment(&mut canvas, curve[0], curve[0], radius);
        }
        for w in curve.windows(2) {
            stamp_segment(&mut canvas, w[0], w[1], radius);
        }
    }
    Ok(canvas)
}
