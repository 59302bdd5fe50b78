//! Box layout and painting for TinySVG and Rainbow.
//!
//! Layout is bottom-up. A primitive occupies a `w × h` box; `Arrange`
//! places its first child then its second along the direction, separated
//! by the gap, each centered across the other axis; `Move` shifts its
//! content without changing the box it reserves. The finished scene is
//! centered on the canvas and painted in program order.

use crate::geometry::{Point, Rect};
use crate::grammar::{Grammar, SyntaxTree};

use super::{Canvas, RenderError, HEIGHT, WIDTH};

/// Pixels per grammar unit for sizes, gaps and offsets.
pub const SVG_SCALE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Color {
    pub name: &'static str,
    /// `None` is transparent.
    pub rgb: Option<[f32; 3]>,
}

const fn byte(v: u8) -> f32 {
    v as f32 / 255.0
}

const fn rgb(r: u8, g: u8, b: u8) -> Option<[f32; 3]> {
    Some([byte(r), byte(g), byte(b)])
}

/// Color tokens with 8-bit sRGB values.
pub const PALETTE: [Color; 9] = [
    Color { name: "red", rgb: rgb(255, 0, 0) },
    Color { name: "green", rgb: rgb(0, 128, 0) },
    Color { name: "blue", rgb: rgb(0, 0, 255) },
    Color { name: "yellow", rgb: rgb(255, 255, 0) },
    Color { name: "purple", rgb: rgb(128, 0, 128) },
    Color { name: "orange", rgb: rgb(255, 166, 0) },
    Color { name: "black", rgb: rgb(0, 0, 0) },
    Color { name: "white", rgb: rgb(255, 255, 255) },
    Color { name: "none", rgb: None },
];

impl Color {
    pub fn by_name(name: &str) -> Option<Color> {
        PALETTE.iter().copied().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
struct Paint {
    kind: Kind,
    bounds: Rect<f64>,
    fill: Option<[f32; 3]>,
    stroke: Option<[f32; 3]>,
    border: f64,
}

struct Laid {
    width: f64,
    height: f64,
    /// Paint operations relative to the top-left of the reserved box.
    ops: Vec<Paint>,
}

fn bad(t: &SyntaxTree, g: &Grammar, why: &str) -> RenderError {
    RenderError::Program("TinySVG", format!("{why} in `{}`", t.to_text(g)))
}

fn layout(g: &Grammar, t: &SyntaxTree) -> Result<Laid, RenderError> {
    let kids = t.children();
    let num = |i: usize| -> Result<f64, RenderError> {
        kids.get(i)
            .and_then(|c| g.leaf_value(c))
            .map(f64::from)
            .ok_or_else(|| bad(t, g, "missing numeric field"))
    };
    let color = |i: usize| -> Result<Option<[f32; 3]>, RenderError> {
        kids.get(i)
            .and_then(|c| g.leaf_text(c))
            .and_then(Color::by_name)
            .map(|c| c.rgb)
            .ok_or_else(|| bad(t, g, "missing color field"))
    };
    let sign = |i: usize| -> Result<f64, RenderError> {
        match kids.get(i).and_then(|c| g.leaf_text(c)) {
            Some("+") => Ok(1.0),
            Some("-") => Ok(-1.0),
            _ => Err(bad(t, g, "missing sign")),
        }
    };
    let head = g.head_name(t.prod());
    match head {
        "rect" | "ellipse" => {
            let (w, h) = (num(0)? * SVG_SCALE, num(1)? * SVG_SCALE);
            Ok(Laid {
                width: w,
                height: h,
                ops: vec![Paint {
                    kind: if head == "rect" { Kind::Rectangle } else { Kind::Ellipse },
                    bounds: Rect::from_size(0.0, 0.0, w, h),
                    fill: color(2)?,
                    stroke: color(3)?,
                    border: num(4)?,
                }],
            })
        }
        "arrange" => {
            let horizontal = match kids.first().and_then(|c| g.leaf_text(c)) {
                Some("h") => true,
                Some("v") => false,
                _ => return Err(bad(t, g, "missing direction")),
            };
            let a = layout(g, &kids[1])?;
            let b = layout(g, &kids[2])?;
            let gap = num(3)? * SVG_SCALE;
            let (width, height, da, db) = if horizontal {
                let h = a.height.max(b.height);
                (
                    a.width + gap + b.width,
                    h,
                    Point::new(0.0, (h - a.height) / 2.0),
                    Point::new(a.width + gap, (h - b.height) / 2.0),
                )
            } else {
                let w = a.width.max(b.width);
                (
                    w,
                    a.height + gap + b.height,
                    Point::new((w - a.width) / 2.0, 0.0),
                    Point::new((w - b.width) / 2.0, a.height + gap),
                )
            };
            let mut ops = shifted(a.ops, da);
            ops.extend(shifted(b.ops, db));
            Ok(Laid { width, height, ops })
        }
        "move" => {
            let inner = layout(g, &kids[0])?;
            let d = Point::new(sign(1)? * num(2)? * SVG_SCALE, sign(3)? * num(4)? * SVG_SCALE);
            Ok(Laid {
                ops: shifted(inner.ops, d),
                ..inner
            })
        }
        other => Err(bad(t, g, &format!("unexpected node `{other}`"))),
    }
}

fn shifted(ops: Vec<Paint>, d: Point<f64>) -> Vec<Paint> {
    ops.into_iter()
        .map(|mut p| {
            p.bounds = p.bounds.translate(d);
            p
        })
        .collect()
}

fn paint(canvas: &mut Canvas, op: &Paint) {
    let b = op.bounds;
    if b.is_empty() {
        return;
    }
    let inner = b.inset(op.border);
    let clip = |lo: f64, hi: f64, max: usize| {
        let lo = lo.floor().max(0.0) as usize;
        let hi = (hi.ceil().max(0.0) as usize).min(max);
        lo..hi
    };
    for y in clip(b.y0, b.y1, HEIGHT) {
        for x in clip(b.x0, b.x1, WIDTH) {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let (outer_hit, inner_hit) = match op.kind {
                Kind::Rectangle => (b.contains(p), inner.contains(p)),
                Kind::Ellipse => (b.ellipse_contains(p), inner.ellipse_contains(p)),
            };
            if !outer_hit {
                continue;
            }
            let color = match op.stroke {
                Some(s) if !inner_hit => Some(s),
                _ => op.fill,
            };
            if let Some(c) = color {
                canvas.set(x, y, &c);
            }
        }
    }
}

/// RGB canvas of a TinySVG or Rainbow program on a white background.
pub fn render_tinysvg(g: &Grammar, t: &SyntaxTree) -> Result<Canvas, RenderError> {
    let laid = layout(g, t)?;
    let origin = Point::new((WIDTH as f64 - laid.width) / 2.0, (HEIGHT as f64 - laid.height) / 2.0);
    let mut canvas = Canvas::white_rgb();
    for op in shifted(laid.ops, origin) {
        paint(&mut canvas, &op);
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(g: &Grammar, text: &str) -> Canvas {
        render_tinysvg(g, &g.parse_text(text).unwrap()).unwrap()
    }

    #[test]
    fn centered_red_square() {
        let g = Grammar::tinysvg();
        let c = render(&g, "(Rectangle 9 9 red none 0)");
        let red = PALETTE[0].rgb.unwrap();
        let mut hits = 0;
        for y in 28..100 {
            for x in 28..100 {
                hits += (c.pixel(x, y) == red) as usize;
            }
        }
        assert_eq!(hits, 72 * 72);
        assert_eq!(c.pixel(27, 64), &[1.0, 1.0, 1.0]);
        assert_eq!(c.pixel(100, 64), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn border_uses_stroke_color() {
        let g = Grammar::tinysvg();
        let c = render(&g, "(Rectangle 4 4 blue black 2)");
        assert_eq!(c.pixel(48, 48), &[0.0, 0.0, 0.0]);
        assert_eq!(c.pixel(49, 60), &[0.0, 0.0, 0.0]);
        assert_eq!(c.pixel(50, 50), &PALETTE[2].rgb.unwrap());
    }

    #[test]
    fn zero_move_is_identity() {
        let g = Grammar::tinysvg();
        let x = "(Arrange v (Ellipse 3 5 green red 1) (Rectangle 2 2 orange none 0) 1)";
        assert_eq!(render(&g, &format!("(Move {x} + 0 + 0)")), render(&g, x));
        assert_eq!(render(&g, &format!("(Move {x} - 0 + 0)")), render(&g, x));
    }

    #[test]
    fn arrange_mirrors() {
        let g = Grammar::tinysvg();
        let a = "(Rectangle 3 5 red none 0)";
        let b = "(Ellipse 4 4 blue none 0)";
        let ab = render(&g, &format!("(Arrange h {a} {b} 2)"));
        let ba = render(&g, &format!("(Arrange h {b} {a} 2)"));
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                assert_eq!(ab.pixel(x, y), ba.pixel(WIDTH - 1 - x, y));
            }
        }
    }

    #[test]
    fn rainbow_matches_tinysvg() {
        let r = Grammar::rainbow();
        let t = Grammar::tinysvg();
        let text = "(Arrange h (Rectangle 3 3 purple yellow 1) (Ellipse 2 6 none black 1) 0)";
        assert_eq!(render(&r, text), render(&t, text));
    }

    #[test]
    fn oversized_content_is_clipped() {
        let g = Grammar::tinysvg();
        let c = render(&g, "(Move (Rectangle 9 9 red none 0) + 9 - 9)");
        assert!(c.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
