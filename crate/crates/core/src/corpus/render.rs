//! Deterministic scene rasterization.
//!
//! A pixel belongs to a primitive iff its center lies inside the analytic
//! shape; no anti-aliasing. Draw order: background, lane bands, objects, ego.

use super::scene::{Scene, SceneObject};
use crate::img::RgbImage;

pub const BACKGROUND: [u8; 3] = [24, 24, 28];
pub const LANE_COLOR: [u8; 3] = [70, 70, 76];
pub const EGO_COLOR: [u8; 3] = [245, 245, 245];

/// Renders the scene as of "now".
pub fn render_scene(scene: &Scene) -> RgbImage {
    render_scene_at(scene, 0.0)
}

/// Renders the scene with every agent and the ego advanced by `dt` seconds
/// (negative values rewind).
pub fn render_scene_at(scene: &Scene, dt: f64) -> RgbImage {
    let size = scene.extent;
    let mut img = RgbImage::filled(size, BACKGROUND);
    for y in 0..size {
        for x in 0..size {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            if scene.drivable(px, py) {
                img.put(x, y, LANE_COLOR);
            }
        }
    }
    let moved: Vec<SceneObject> = scene.objects.iter().map(|o| o.at_time(dt)).collect();
    for y in 0..size {
        for x in 0..size {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            for o in &moved {
                if o.contains(px, py) {
                    img.put(x, y, o.color.rgb());
                    break;
                }
            }
        }
    }
    if let Some(ego) = scene.ego {
        let (ex, ey, eh) = ego.position_at(dt);
        let marker = SceneObject {
            shape: super::scene::Shape::Triangle,
            color: super::scene::ColorName::Red, // color unused; painted EGO_COLOR
            cx: ex,
            cy: ey,
            radius: ego.radius,
            kind: super::scene::ObjectKind::Agent {
                heading: eh,
                speed: ego.speed,
                heading_rate: 0.0,
            },
        };
        for y in 0..size {
            for x in 0..size {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                if marker.contains(px, py) {
                    img.put(x, y, EGO_COLOR);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::scene::{ColorName, ObjectKind, Shape};

    #[test]
    fn empty_scene_is_uniform_background() {
        let scene = Scene {
            extent: 16,
            objects: vec![],
            lanes: vec![],
            ego: None,
        };
        let img = render_scene(&scene);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(img.get(x, y), BACKGROUND);
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let scene = Scene {
            extent: 32,
            objects: vec![SceneObject {
                shape: Shape::Circle,
                color: ColorName::Green,
                cx: 10.0,
                cy: 12.0,
                radius: 5.0,
                kind: ObjectKind::Static,
            }],
            lanes: vec![],
            ego: None,
        };
        assert_eq!(render_scene(&scene), render_scene(&scene));
    }

    #[test]
    fn object_pixels_match_containment() {
        let o = SceneObject {
            shape: Shape::Square,
            color: ColorName::Blue,
            cx: 16.0,
            cy: 16.0,
            radius: 6.0,
            kind: ObjectKind::Static,
        };
        let scene = Scene {
            extent: 32,
            objects: vec![o.clone()],
            lanes: vec![],
            ego: None,
        };
        let img = render_scene(&scene);
        for y in 0..32 {
            for x in 0..32 {
                let inside = o.contains(x as f64 + 0.5, y as f64 + 0.5);
                let painted = img.get(x, y) == ColorName::Blue.rgb();
                assert_eq!(inside, painted, "pixel ({x},{y})");
            }
        }
    }
}
