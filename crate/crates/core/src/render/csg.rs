//! Hard-edged rasterization of CSG2D scenes.

use crate::geometry::{Circle, Point, Quad};
use crate::grammar::{Grammar, SyntaxTree};

use super::{Canvas, RenderError, HEIGHT, WIDTH};

/// Pixels per grammar unit.
pub const CSG_SCALE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub enum CsgShape {
    Circle(Circle<f64>),
    Quad(Quad<f64>),
}

impl CsgShape {
    pub fn contains(&self, p: Point<f64>) -> bool {
        match self {
            CsgShape::Circle(c) => c.contains(p),
            CsgShape::Quad(q) => q.contains(p),
        }
    }
}

/// A CSG2D program in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum CsgScene {
    Shape(CsgShape),
    Union(Box<CsgScene>, Box<CsgScene>),
    Difference(Box<CsgScene>, Box<CsgScene>),
}

fn bad(t: &SyntaxTree, g: &Grammar, why: &str) -> RenderError {
    RenderError::Program("CSG2D", format!("{why} in `{}`", t.to_text(g)))
}

impl CsgScene {
    pub fn compile(g: &Grammar, t: &SyntaxTree) -> Result<Self, RenderError> {
        let num = |i: usize| -> Result<f64, RenderError> {
            t.children()
                .get(i)
                .and_then(|c| g.leaf_value(c))
                .map(f64::from)
                .ok_or_else(|| bad(t, g, "missing numeric field"))
        };
        match g.head_name(t.prod()) {
            "binop" => {
                let [op, a, b] = t.children() else {
                    return Err(bad(t, g, "binop arity"));
                };
                let (a, b) = (Self::compile(g, a)?, Self::compile(g, b)?);
                match g.leaf_text(op) {
                    Some("+") => Ok(CsgScene::Union(Box::new(a), Box::new(b))),
                    Some("-") => Ok(CsgScene::Difference(Box::new(a), Box::new(b))),
                    _ => Err(bad(t, g, "unknown operator")),
                }
            }
            "circle" => Ok(CsgScene::Shape(CsgShape::Circle(Circle {
                radius: num(0)? * CSG_SCALE,
                center: Point::new(num(1)? * CSG_SCALE, num(2)? * CSG_SCALE),
            }))),
            "quad" => Ok(CsgScene::Shape(CsgShape::Quad(Quad {
                center: Point::new(num(0)? * CSG_SCALE, num(1)? * CSG_SCALE),
                half: Point::new(num(2)? * CSG_SCALE / 2.0, num(3)? * CSG_SCALE / 2.0),
                theta: num(4)?.to_radians(),
            }))),
            other => Err(bad(t, g, &format!("unexpected node `{other}`"))),
        }
    }

    pub fn contains(&self, p: Point<f64>) -> bool {
        match self {
            CsgScene::Shape(s) => s.contains(p),
            CsgScene::Union(a, b) => a.contains(p) || b.contains(p),
            CsgScene::Difference(a, b) => a.contains(p) && !b.contains(p),
        }
    }

    /// Primitives in left-to-right order.
    pub fn shapes(&self) -> Vec<&CsgShape> {
        match self {
            CsgScene::Shape(s) => vec![s],
            CsgScene::Union(a, b) | CsgScene::Difference(a, b) => {
                let mut v = a.shapes();
                v.extend(b.shapes());
                v
            }
        }
    }

    /// Occupancy sampled at pixel centers.
    pub fn rasterize(&self) -> Canvas {
        let mut c = Canvas::gray();
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                if self.contains(Point::new(x as f64 + 0.5, y as f64 + 0.5)) {
                    c.set(x, y, &[1.0]);
                }
            }
        }
        c
    }
}

/// Binary occupancy canvas of a CSG2D program.
pub fn render_csg2d(g: &Grammar, t: &SyntaxTree) -> Result<Canvas, RenderError> {
    Ok(CsgScene::compile(g, t)?.rasterize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(text: &str) -> Canvas {
        let g = Grammar::csg2d();
        render_csg2d(&g, &g.parse_text(text).unwrap()).unwrap()
    }

    #[test]
    fn self_difference_is_empty() {
        assert_eq!(render("(- (Circle 4 8 8) (Circle 4 8 8))").count_nonzero(), 0);
    }

    #[test]
    fn centered_disk() {
        let c = render("(Circle 4 8 8)");
        let area = std::f64::consts::PI * 32.0 * 32.0;
        let n = c.count_nonzero() as f64;
        assert!((n - area).abs() / area < 0.01, "{n} vs {area}");
        assert_eq!(c.pixel(64, 64), &[1.0]);
        assert_eq!(c.pixel(64, 64 - 33), &[0.0]);
    }

    #[test]
    fn rotated_quad_is_symmetric() {
        let a = render("(Quad 8 8 6 2 angle_90)");
        let b = render("(Quad 8 8 2 6 angle_0)");
        assert_eq!(a.count_nonzero(), b.count_nonzero());
        let diag = render("(Quad 8 8 4 4 angle_45)");
        let n = diag.count_nonzero() as f64;
        assert!((n - 32.0 * 32.0).abs() / (32.0 * 32.0) < 0.03);
    }

    #[test]
    fn zero_size_renders_empty() {
        assert_eq!(render("(Circle 0 5 5)").count_nonzero(), 0);
        assert_eq!(render("(Quad 5 5 0 4 angle_0)").count_nonzero(), 0);
    }

    #[test]
    fn values_are_binary() {
        let c = render("(+ (Circle 3 4 4) (- (Quad 8 8 9 5 angle_135) (Circle 2 8 8)))");
        assert!(c.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
