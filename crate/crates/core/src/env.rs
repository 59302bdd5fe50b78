//! The four environments: grammar, observation model and solve criterion.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::grammar::{Grammar, SyntaxTree};
use crate::render::{
    iou, pixel_match_fraction, render_csg2d, render_tinysvg, sketch_render, Canvas, RenderError, PIXEL_TOLERANCE,
    SOLVE_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Env {
    Csg2d,
    Csg2dSketch,
    #[serde(rename = "tinysvg")]
    TinySvg,
    Rainbow,
}

impl Env {
    pub const ALL: [Env; 4] = [Env::Csg2d, Env::Csg2dSketch, Env::TinySvg, Env::Rainbow];

    pub fn name(self) -> &'static str {
        match self {
            Env::Csg2d => "csg2d",
            Env::Csg2dSketch => "csg2d-sketch",
            Env::TinySvg => "tinysvg",
            Env::Rainbow => "rainbow",
        }
    }

    /// The shipped grammar, loaded once per process.
    pub fn grammar(self) -> &'static Grammar {
        static CSG: OnceLock<Grammar> = OnceLock::new();
        static SVG: OnceLock<Grammar> = OnceLock::new();
        static RAINBOW: OnceLock<Grammar> = OnceLock::new();
        match self {
            Env::Csg2d | Env::Csg2dSketch => CSG.get_or_init(Grammar::csg2d),
            Env::TinySvg => SVG.get_or_init(Grammar::tinysvg),
            Env::Rainbow => RAINBOW.get_or_init(Grammar::rainbow),
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Env::Csg2d | Env::Csg2dSketch => 1,
            Env::TinySvg | Env::Rainbow => 3,
        }
    }

    pub fn is_csg(self) -> bool {
        matches!(self, Env::Csg2d | Env::Csg2dSketch)
    }

    /// The empty scene's rendering.
    pub fn blank(self) -> Canvas {
        if self.is_csg() {
            Canvas::gray()
        } else {
            Canvas::white_rgb()
        }
    }

    /// Noise-free rendering.
    pub fn render(self, g: &Grammar, t: &SyntaxTree) -> Result<Canvas, RenderError> {
        if self.is_csg() {
            render_csg2d(g, t)
        } else {
            render_tinysvg(g, t)
        }
    }

    /// What a solver sees: the clean rendering, or a sketch drawn with
    /// `observation_seed` in the sketch environment.
    pub fn observe(self, g: &Grammar, t: &SyntaxTree, observation_seed: u64) -> Result<Canvas, RenderError> {
        match self {
            Env::Csg2dSketch => sketch_render(g, t, observation_seed),
            _ => self.render(g, t),
        }
    }

    /// Similarity in `[0, 1]`: IoU for CSG2D, pixel agreement otherwise.
    pub fn similarity(self, a: &Canvas, b: &Canvas) -> Result<f64, RenderError> {
        if self.is_csg() {
            iou(a, b)
        } else {
            pixel_match_fraction(a, b, PIXEL_TOLERANCE)
        }
    }

    /// `1 − similarity`; zero for identical images.
    pub fn loss(self, a: &Canvas, b: &Canvas) -> Result<f64, RenderError> {
        Ok(1.0 - self.similarity(a, b)?)
    }

    pub fn is_solved(self, candidate: &Canvas, target: &Canvas) -> bool {
        self.similarity(candidate, target)
            .map(|s| s >= SOLVE_THRESHOLD)
            .unwrap_or(false)
    }
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Env {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Env::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown environment `{s}` (expected csg2d, csg2d-sketch, tinysvg or rainbow)"))
    }
}
