//! Planar primitives shared by the rasterizers and the sketch model.

use std::ops::{Add, Mul, Sub};

use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Float> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Self) -> T {
        (self - other).norm()
    }

    /// Rotates counter-clockwise (in a y-down frame: clockwise on screen) by `theta` radians.
    pub fn rotate(self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        self + (other - self) * t
    }
}

impl<T: Float> Add for Point<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Float> Sub for Point<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Float> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Point::new(self.x * k, self.y * k)
    }
}

/// Closed disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle<T> {
    pub center: Point<T>,
    pub radius: T,
}

impl<T: Float> Circle<T> {
    pub fn contains(&self, p: Point<T>) -> bool {
        let d = p - self.center;
        self.radius > T::zero() && d.x * d.x + d.y * d.y <= self.radius * self.radius
    }
}

/// Rectangle of size `2·half` centered at `center`, rotated by `theta`
/// radians about its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad<T> {
    pub center: Point<T>,
    pub half: Point<T>,
    pub theta: T,
}

impl<T: Float> Quad<T> {
    pub fn contains(&self, p: Point<T>) -> bool {
        if self.half.x <= T::zero() || self.half.y <= T::zero() {
            return false;
        }
        let local = (p - self.center).rotate(-self.theta);
        local.x.abs() <= self.half.x && local.y.abs() <= self.half.y
    }

    /// Corners in drawing order.
    pub fn corners(&self) -> [Point<T>; 4] {
        let (hx, hy) = (self.half.x, self.half.y);
        [
            Point::new(-hx, -hy),
            Point::new(hx, -hy),
            Point::new(hx, hy),
            Point::new(-hx, hy),
        ]
        .map(|c| self.center + c.rotate(self.theta))
    }
}

/// Axis-aligned box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Float> Rect<T> {
    pub fn from_size(x0: T, y0: T, w: T, h: T) -> Self {
        Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        }
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point<T> {
        let two = T::one() + T::one();
        Point::new((self.x0 + self.x1) / two, (self.y0 + self.y1) / two)
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    pub fn translate(&self, d: Point<T>) -> Self {
        Rect {
            x0: self.x0 + d.x,
            y0: self.y0 + d.y,
            x1: self.x1 + d.x,
            y1: self.y1 + d.y,
        }
    }

    /// Shrinks every side by `by`; may become empty.
    pub fn inset(&self, by: T) -> Self {
        Rect {
            x0: self.x0 + by,
            y0: self.y0 + by,
            x1: self.x1 - by,
            y1: self.y1 - by,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    /// Whether `p` lies in the ellipse inscribed in this box.
    pub fn ellipse_contains(&self, p: Point<T>) -> bool {
        if self.is_empty() {
            return false;
        }
        let two = T::one() + T::one();
        let c = self.center();
        let (a, b) = (self.width() / two, self.height() / two);
        let (dx, dy) = ((p.x - c.x) / a, (p.y - c.y) / b);
        dx * dx + dy * dy <= T::one()
    }
}

/// Uniform Catmull-Rom spline through `points`, `per_segment` samples per
/// span, endpoints duplicated so the curve passes through every point.
pub fn catmull_rom<T: Float>(points: &[Point<T>], per_segment: usize) -> Vec<Point<T>> {
    if points.len() < 2 || per_segment == 0 {
        return points.to_vec();
    }
    let half = T::from(0.5).unwrap();
    let two = T::one() + T::one();
    let three = two + T::one();
    let four = two + two;
    let five = four + T::one();
    let at = |i: isize| points[i.clamp(0, points.len() as isize - 1) as usize];
    let mut out = Vec::with_capacity((points.len() - 1) * per_segment + 1);
    for i in 0..points.len() as isize - 1 {
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        for step in 0..per_segment {
            let t = T::from(step).unwrap() / T::from(per_segment).unwrap();
            let (t2, t3) = (t * t, t * t * t);
            let c = |a: T, b: T, c: T, d: T| {
                half * (two * b
                    + (c - a) * t
                    + (two * a - five * b + four * c - d) * t2
                    + (three * b - a - three * c + d) * t3)
            };
            out.push(Point::new(c(p0.x, p1.x, p2.x, p3.x), c(p0.y, p1.y, p2.y, p3.y)));
        }
    }
    out.push(*points.last().unwrap());
    out
}
