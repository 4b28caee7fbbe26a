//! Scene records: the exact geometric state every sample is generated from
//! and graded against.
//!
//! Coordinates are pixels with y growing downward. Headings are radians with
//! direction (cos h, sin h); a negative heading rate therefore turns the
//! agent to its left when facing +x. Agents move along constant-curvature
//! arcs, which keeps every future position in closed form.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
}

impl ColorName {
    pub fn name(&self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        match self {
            ColorName::Red => [220, 50, 40],
            ColorName::Green => [60, 180, 75],
            ColorName::Blue => [0, 110, 220],
            ColorName::Yellow => [240, 200, 40],
        }
    }

    pub const ALL: [ColorName; 4] = [
        ColorName::Red,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Yellow,
    ];
}

/// Motion attached to an object. Static objects never move; agents follow a
/// constant speed and heading rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectKind {
    Static,
    Agent {
        heading: f64,
        /// Pixels per second.
        speed: f64,
        /// Radians per second; 0 keeps the heading.
        heading_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: ColorName,
    pub cx: f64,
    pub cy: f64,
    /// Circumradius in pixels; squares and triangles are inscribed.
    pub radius: f64,
    pub kind: ObjectKind,
}

impl SceneObject {
    pub fn descriptor(&self) -> String {
        format!("{} {}", self.color.name(), self.shape.name())
    }

    /// Orientation used for triangle vertices: agents point along their
    /// heading, static triangles point up.
    fn orientation(&self) -> f64 {
        match self.kind {
            ObjectKind::Agent { heading, .. } => heading,
            ObjectKind::Static => -std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn triangle_vertices(&self) -> [(f64, f64); 3] {
        let o = self.orientation();
        let mut out = [(0.0, 0.0); 3];
        for (i, v) in out.iter_mut().enumerate() {
            let a = o + i as f64 * std::f64::consts::TAU / 3.0;
            *v = (self.cx + self.radius * a.cos(), self.cy + self.radius * a.sin());
        }
        out
    }

    /// Pixel-center containment; the single rasterization convention used by
    /// both rendering and masks.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= self.radius * self.radius,
            Shape::Square => {
                let s = self.radius / std::f64::consts::SQRT_2;
                dx.abs() <= s && dy.abs() <= s
            }
            Shape::Triangle => {
                let v = self.triangle_vertices();
                let side = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let d0 = side(v[0], v[1]);
                let d1 = side(v[1], v[2]);
                let d2 = side(v[2], v[0]);
                let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    /// Tight axis-aligned bounding box in pixels.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        match self.shape {
            Shape::Circle => (
                self.cx - self.radius,
                self.cy - self.radius,
                self.cx + self.radius,
                self.cy + self.radius,
            ),
            Shape::Square => {
                let s = self.radius / std::f64::consts::SQRT_2;
                (self.cx - s, self.cy - s, self.cx + s, self.cy + s)
            }
            Shape::Triangle => {
                let v = self.triangle_vertices();
                let xs = [v[0].0, v[1].0, v[2].0];
                let ys = [v[0].1, v[1].1, v[2].1];
                let min = |a: &[f64]| a.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = |a: &[f64]| a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (min(&xs), min(&ys), max(&xs), max(&ys))
            }
        }
    }

    /// Agent state advanced by `dt` seconds along its arc. Static objects
    /// return themselves unchanged.
    pub fn at_time(&self, dt: f64) -> SceneObject {
        let ObjectKind::Agent {
            heading,
            speed,
            heading_rate,
        } = self.kind
        else {
            return self.clone();
        };
        let (x, y, h) = arc_position(self.cx, self.cy, heading, speed, heading_rate, dt);
        SceneObject {
            cx: x,
            cy: y,
            kind: ObjectKind::Agent {
                heading: h,
                speed,
                heading_rate,
            },
            ..self.clone()
        }
    }
}

/// Closed-form constant-curvature motion: returns (x, y, heading) after `dt`
/// seconds starting at (x0, y0) with the given heading, speed (px/s), and
/// heading rate (rad/s).
pub fn arc_position(x0: f64, y0: f64, heading: f64, speed: f64, rate: f64, dt: f64) -> (f64, f64, f64) {
    if rate.abs() < 1e-12 {
        (
            x0 + speed * dt * heading.cos(),
            y0 + speed * dt * heading.sin(),
            heading,
        )
    } else {
        let h = heading + rate * dt;
        let r = speed / rate;
        (
            x0 + r * (h.sin() - heading.sin()),
            y0 - r * (h.cos() - heading.cos()),
            h,
        )
    }
}

/// Axis-aligned drivable band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Lane {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Pixels per second.
    pub speed: f64,
    /// 1/pixels; heading rate is `speed * curvature`.
    pub curvature: f64,
    pub radius: f64,
}

impl EgoState {
    pub fn position_at(&self, t: f64) -> (f64, f64, f64) {
        arc_position(self.x, self.y, self.heading, self.speed, self.speed * self.curvature, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Canvas side in pixels.
    pub extent: usize,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub ego: Option<EgoState>,
}

impl Scene {
    pub fn drivable(&self, x: f64, y: f64) -> bool {
        self.lanes.iter().any(|l| l.contains(x, y))
    }

    /// Whether any object interior contains the point.
    pub fn occupied(&self, x: f64, y: f64) -> bool {
        self.objects.iter().any(|o| o.contains(x, y))
    }

    /// Generator invariants: objects fully inside the canvas, interiors
    /// disjoint (by circumradius), at most one ego.
    pub fn check_invariants(&self) -> Result<(), String> {
        let e = self.extent as f64;
        for (i, o) in self.objects.iter().enumerate() {
            if o.cx - o.radius < 0.0 || o.cy - o.radius < 0.0 || o.cx + o.radius > e || o.cy + o.radius > e {
                return Err(format!("object {i} leaves the canvas"));
            }
            for (j, p) in self.objects.iter().enumerate().skip(i + 1) {
                let d = ((o.cx - p.cx).powi(2) + (o.cy - p.cy).powi(2)).sqrt();
                if d < o.radius + p.radius {
                    return Err(format!("objects {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_containment_and_bbox() {
        let o = SceneObject {
            shape: Shape::Circle,
            color: ColorName::Red,
            cx: 10.0,
            cy: 10.0,
            radius: 3.0,
            kind: ObjectKind::Static,
        };
        assert!(o.contains(10.0, 12.9));
        assert!(!o.contains(10.0, 13.1));
        assert_eq!(o.bbox(), (7.0, 7.0, 13.0, 13.0));
    }

    #[test]
    fn triangle_centroid_inside() {
        let o = SceneObject {
            shape: Shape::Triangle,
            color: ColorName::Blue,
            cx: 16.0,
            cy: 16.0,
            radius: 5.0,
            kind: ObjectKind::Static,
        };
        assert!(o.contains(16.0, 16.0));
        assert!(!o.contains(16.0, 22.0));
    }

    #[test]
    fn straight_motion_closed_form() {
        let (x, y, h) = arc_position(2.0, 3.0, 0.0, 4.0, 0.0, 1.5);
        assert!((x - 8.0).abs() < 1e-12);
        assert!((y - 3.0).abs() < 1e-12);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn arc_motion_matches_numeric_integration() {
        // Independent route: integrate dx = v cos h, dy = v sin h, dh = w dt
        // with small explicit steps.
        let (x0, y0, h0, v, w) = (5.0, 7.0, 0.3, 4.0, -0.6);
        let (mut x, mut y, mut h) = (x0, y0, h0);
        let steps = 4_000_000;
        let dt = 1.5 / steps as f64;
        for _ in 0..steps {
            // Midpoint rule keeps the error far below the tolerance.
            let hm = h + 0.5 * w * dt;
            x += v * hm.cos() * dt;
            y += v * hm.sin() * dt;
            h += w * dt;
        }
        let (cx, cy, ch) = arc_position(x0, y0, h0, v, w, 1.5);
        assert!((x - cx).abs() < 1e-9, "{x} vs {cx}");
        assert!((y - cy).abs() < 1e-9, "{y} vs {cy}");
        assert!((h - ch).abs() < 1e-9);
    }

    #[test]
    fn overlap_invariant_detected() {
        let mk = |cx: f64| SceneObject {
            shape: Shape::Circle,
            color: ColorName::Red,
            cx,
            cy: 10.0,
            radius: 3.0,
            kind: ObjectKind::Static,
        };
        let scene = Scene {
            extent: 32,
            objects: vec![mk(10.0), mk(14.0)],
            lanes: vec![],
            ego: None,
        };
        assert!(scene.check_invariants().is_err());
        let scene = Scene {
            extent: 32,
            objects: vec![mk(10.0), mk(18.0)],
            lanes: vec![],
            ego: None,
        };
        assert!(scene.check_invariants().is_ok());
    }
}
