//! Procedural sample generators with machine-checkable ground truth.
//!
//! Every generator is a pure function of (seed, n): sample `i` draws from an
//! rng seeded by `derive_seed(seed, corpus, i)`, so shards can run in
//! parallel and concatenation order is fixed. Generators retry scene
//! construction until the stated truth conditions hold exactly; the truth is
//! always recomputable from the stored [`Scene`].

use super::mask::Mask;
use super::render::{render_scene, render_scene_at};
use super::sample::{Domain, GroundTruth, Sample, TaskKind, CORPUS_FORMAT_VERSION};
use super::scene::{ColorName, EgoState, Lane, ObjectKind, Scene, SceneObject, Shape};
use crate::par;
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXTENT: usize = 32;
/// Meta-action rule: stop when something sits in the ego corridor within
/// this many pixels ahead.
pub const STOP_DISTANCE: f64 = 10.0;
/// Corridor half-width for the stop rule.
pub const CORRIDOR_HALF: f64 = 3.0;
/// Intent rule: heading change (rad) over the lookahead below this counts
/// as going straight.
pub const TURN_THRESHOLD: f64 = 0.15;
/// Seconds of future motion the intent label integrates over.
pub const INTENT_LOOKAHEAD: f64 = 1.5;
/// Trajectory protocol: 3 seconds at 2 Hz.
pub const TRAJ_HORIZON_S: f64 = 3.0;
pub const TRAJ_HZ: f64 = 2.0;
pub const TRAJ_POINTS: usize = 6;
/// Gap between the two frames of prediction samples.
pub const FRAME_GAP_S: f64 = 1.0;

fn sample_rng(seed: u64, corpus: &str, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, corpus, i as u64))
}

fn gen_many(
    corpus: &'static str,
    seed: u64,
    n: usize,
    f: impl Fn(&mut ChaCha8Rng) -> Sample + Sync + Send,
) -> Vec<Sample> {
    par::map_indexed(n, |i| {
        let mut rng = sample_rng(seed, corpus, i);
        let mut s = f(&mut rng);
        s.id = format!("{corpus}-{seed}-{i:05}");
        s.format_version = CORPUS_FORMAT_VERSION;
        debug_assert!(s.validate().is_ok(), "{:?}", s.validate());
        s
    })
}

// ---------------------------------------------------------------------------
// Scene construction helpers
// ---------------------------------------------------------------------------

/// Places `count` static objects with pairwise-distinct descriptors, fully
/// inside the canvas and non-overlapping. A dense partial layout can leave
/// no room for the remaining objects, so placement restarts from scratch
/// after a bounded number of rejected positions.
fn place_unique_objects(rng: &mut ChaCha8Rng, count: usize, r_lo: f64, r_hi: f64) -> Vec<SceneObject> {
    let mut combos: Vec<(ColorName, Shape)> = ColorName::ALL
        .iter()
        .flat_map(|c| Shape::ALL.iter().map(move |s| (*c, *s)))
        .collect();
    combos.shuffle(rng);
    'layout: loop {
        let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
        for &(color, shape) in combos.iter().take(count) {
            let mut placed = false;
            for _attempt in 0..60 {
                let radius = rng.gen_range(r_lo..r_hi);
                let cx = rng.gen_range(radius + 1.0..EXTENT as f64 - radius - 1.0);
                let cy = rng.gen_range(radius + 1.0..EXTENT as f64 - radius - 1.0);
                let ok = objects.iter().all(|o| {
                    let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                    d >= o.radius + radius + 1.0
                });
                if ok {
                    objects.push(SceneObject {
                        shape,
                        color,
                        cx,
                        cy,
                        radius,
                        kind: ObjectKind::Static,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'layout;
            }
        }
        return objects;
    }
}

fn embodied_scene(rng: &mut ChaCha8Rng, count: usize) -> Scene {
    // Radii shrink with object count so dense layouts stay feasible.
    let (r_lo, r_hi) = match count {
        0..=2 => (4.5, 6.0),
        3 => (4.0, 5.5),
        4 => (3.5, 5.0),
        _ => (3.0, 4.2),
    };
    Scene {
        extent: EXTENT,
        objects: place_unique_objects(rng, count, r_lo, r_hi),
        lanes: vec![],
        ego: None,
    }
}

/// Options with the gold answer at a random letter. Distractors must be
/// pre-deduplicated and never equal the answer.
fn shuffle_options(rng: &mut ChaCha8Rng, correct: String, distractors: Vec<String>) -> (char, Vec<String>) {
    debug_assert!(!distractors.contains(&correct));
    let mut options = distractors;
    let idx = rng.gen_range(0..=options.len());
    options.insert(idx, correct);
    let letter = (b'A' + idx as u8) as char;
    (letter, options)
}

fn options_text(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{} {}", (b'A' + i as u8) as char, o))
        .collect::<Vec<_>>()
        .join(" ")
}

fn object_mask(target: &SceneObject) -> Mask {
    Mask::from_fn(EXTENT, |x, y| {
        target.contains(x as f64 + 0.5, y as f64 + 0.5)
    })
}

pub const DIRECTIONS: [&str; 4] = ["left of", "right of", "above", "below"];

/// Free-space mask: pixels strictly beyond the target's bounding box in the
/// given direction and not inside any object.
pub fn free_space_mask(scene: &Scene, target: &SceneObject, dir: &str) -> Mask {
    let (bx0, by0, bx1, by1) = target.bbox();
    Mask::from_fn(scene.extent, |x, y| {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let directional = match dir {
            "left of" => px < bx0,
            "right of" => px > bx1,
            "above" => py < by0,
            "below" => py > by1,
            _ => unreachable!(),
        };
        directional && !scene.occupied(px, py)
    })
}

fn norm(v: f64) -> f64 {
    v / EXTENT as f64
}

// ---------------------------------------------------------------------------
// Embodied generators
// ---------------------------------------------------------------------------

/// Pointing and grounding over object regions and constrained free space.
pub fn gen_embodied_affordance(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("emb_aff", seed, n, |rng| loop {
        let count = rng.gen_range(2..=4);
        let scene = embodied_scene(rng, count);
        let target = scene.objects[rng.gen_range(0..scene.objects.len())].clone();
        let variant = rng.gen_range(0..10);
        let (prompt, task_kind, truth) = if variant < 4 {
            (
                format!("point to the {}", target.descriptor()),
                TaskKind::Pointing,
                GroundTruth::PointMask {
                    mask: object_mask(&target),
                },
            )
        } else if variant < 7 {
            let dir = DIRECTIONS[rng.gen_range(0..4)];
            let mask = free_space_mask(&scene, &target, dir);
            if mask.count() < 4 {
                continue;
            }
            (
                format!("point to free space {} the {}", dir, target.descriptor()),
                TaskKind::Pointing,
                GroundTruth::PointMask { mask },
            )
        } else {
            let (x0, y0, x1, y1) = target.bbox();
            (
                format!("box the {}", target.descriptor()),
                TaskKind::Grounding,
                GroundTruth::Box {
                    x0: norm(x0),
                    y0: norm(y0),
                    x1: norm(x1),
                    y1: norm(y1),
                },
            )
        };
        let images = vec![render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Embodied,
            task_kind,
            prompt,
            truth,
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    })
}

/// The spatial-relation label rules, shared by the generator and usable by
/// oracles: nearest object strictly in the given direction of the target.
pub fn nearest_in_direction<'a>(
    scene: &'a Scene,
    target: &SceneObject,
    dir: &str,
) -> Option<&'a SceneObject> {
    let candidates: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| (o.cx, o.cy) != (target.cx, target.cy))
        .filter(|o| match dir {
            "left of" => o.cx < target.cx - 1.0,
            "right of" => o.cx > target.cx + 1.0,
            "above" => o.cy < target.cy - 1.0,
            "below" => o.cy > target.cy + 1.0,
            _ => unreachable!(),
        })
        .collect();
    let dist = |o: &SceneObject| ((o.cx - target.cx).powi(2) + (o.cy - target.cy).powi(2)).sqrt();
    let best = candidates.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))?;
    // Unique winner by 0.5 px margin, otherwise ambiguous.
    if candidates
        .iter()
        .filter(|o| dist(o) < dist(best) + 0.5)
        .count()
        > 1
    {
        return None;
    }
    Some(*best)
}

/// Closest object to the named canvas edge with a 1 px margin.
pub fn closest_to_edge<'a>(scene: &'a Scene, edge: &str) -> Option<&'a SceneObject> {
    let dist = |o: &SceneObject| match edge {
        "top" => o.cy,
        "bottom" => scene.extent as f64 - o.cy,
        "left" => o.cx,
        "right" => scene.extent as f64 - o.cx,
        _ => unreachable!(),
    };
    let best = scene.objects.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))?;
    if scene
        .objects
        .iter()
        .filter(|o| dist(o) < dist(best) + 1.0)
        .count()
        > 1
    {
        return None;
    }
    Some(best)
}

pub const EDGES: [&str; 4] = ["top", "bottom", "left", "right"];

/// Spatial-relation and counting MCQs over embodied scenes.
pub fn gen_embodied_spatial(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("emb_spat", seed, n, |rng| loop {
        let count = rng.gen_range(3..=5);
        let scene = embodied_scene(rng, count);
        let kind = rng.gen_range(0..6);
        let (question, correct, distractors) = match kind {
            0 => {
                // Count a shape.
                let shape = Shape::ALL[rng.gen_range(0..3)];
                let count = scene.objects.iter().filter(|o| o.shape == shape).count();
                let mut pool: Vec<usize> = (0..=5).filter(|&c| c != count).collect();
                pool.shuffle(rng);
                (
                    format!("count {}s?", shape.name()),
                    count.to_string(),
                    pool[..3].iter().map(|c| c.to_string()).collect(),
                )
            }
            1..=4 => {
                let dir = DIRECTIONS[kind - 1];
                let target = &scene.objects[rng.gen_range(0..scene.objects.len())];
                let Some(answer) = nearest_in_direction(&scene, target, dir) else {
                    continue;
                };
                let correct = answer.descriptor();
                let mut pool: Vec<String> = scene
                    .objects
                    .iter()
                    .map(|o| o.descriptor())
                    .filter(|d| *d != correct && *d != target.descriptor())
                    .collect();
                let mut fabricated: Vec<String> = ColorName::ALL
                    .iter()
                    .flat_map(|c| Shape::ALL.iter().map(move |s| format!("{} {}", c.name(), s.name())))
                    .filter(|d| !scene.objects.iter().any(|o| o.descriptor() == *d))
                    .collect();
                fabricated.shuffle(rng);
                pool.extend(fabricated);
                if pool.len() < 3 {
                    continue;
                }
                (
                    format!("what is {} the {}?", dir, target.descriptor()),
                    correct,
                    pool[..3].to_vec(),
                )
            }
            _ => {
                let edge = EDGES[rng.gen_range(0..4)];
                let Some(answer) = closest_to_edge(&scene, edge) else {
                    continue;
                };
                let correct = answer.descriptor();
                let mut pool: Vec<String> = scene
                    .objects
                    .iter()
                    .map(|o| o.descriptor())
                    .filter(|d| *d != correct)
                    .collect();
                pool.shuffle(rng);
                if pool.len() < 3 {
                    continue;
                }
                (
                    format!("closest to the {edge} edge?"),
                    correct,
                    pool[..3].to_vec(),
                )
            }
        };
        let (letter, options) = shuffle_options(rng, correct, distractors);
        let prompt = format!("{question} {}", options_text(&options));
        let images = vec![render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Embodied,
            task_kind: TaskKind::Mcq,
            prompt,
            truth: GroundTruth::Choice { letter, options },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    })
}

/// The scripted pick-and-place plan for a (source, destination) pair.
pub fn plan_script(a: &str, b: &str) -> Vec<String> {
    vec![
        format!("go to the {a}"),
        format!("pick up the {a}"),
        format!("go to the {b}"),
        format!("place on the {b}"),
    ]
}

/// Next-step MCQs over scripted pick-and-place tasks.
pub fn gen_embodied_planning(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("emb_plan", seed, n, |rng| {
        let count = rng.gen_range(3..=4);
        let scene = embodied_scene(rng, count);
        let mut idx: Vec<usize> = (0..scene.objects.len()).collect();
        idx.shuffle(rng);
        let a = scene.objects[idx[0]].descriptor();
        let b = scene.objects[idx[1]].descriptor();
        let steps = plan_script(&a, &b);
        let done = rng.gen_range(0..steps.len());
        let correct = steps[done].clone();
        let distractors: Vec<String> = steps
            .iter()
            .filter(|s| **s != correct)
            .cloned()
            .collect();
        let (letter, options) = shuffle_options(rng, correct, distractors);
        let history = if done == 0 {
            "none".to_string()
        } else {
            steps[..done].join(", ")
        };
        let prompt = format!(
            "task: move the {a} onto the {b}. done: {history}. next? {}",
            options_text(&options)
        );
        let images = vec![render_scene(&scene)];
        Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Embodied,
            task_kind: TaskKind::Mcq,
            prompt,
            truth: GroundTruth::Choice { letter, options },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        }
    })
}

// ---------------------------------------------------------------------------
// Driving generators
// ---------------------------------------------------------------------------

pub const EGO_RADIUS: f64 = 2.0;

struct RoadLayout {
    road_y: f64,
    road_x: Option<f64>,
}

const ROAD_HALF: f64 = 5.0;

fn road_scene(rng: &mut ChaCha8Rng, with_cross: bool) -> (Scene, RoadLayout) {
    let road_y = rng.gen_range(12..=18) as f64;
    let mut lanes = vec![Lane {
        x0: 0.0,
        y0: road_y - ROAD_HALF,
        x1: EXTENT as f64,
        y1: road_y + ROAD_HALF,
    }];
    let road_x = if with_cross {
        let road_x = rng.gen_range(16..=22) as f64;
        lanes.push(Lane {
            x0: road_x - ROAD_HALF,
            y0: 0.0,
            x1: road_x + ROAD_HALF,
            y1: EXTENT as f64,
        });
        Some(road_x)
    } else {
        None
    };
    let ego = EgoState {
        x: rng.gen_range(3..=7) as f64,
        y: road_y + 2.5,
        heading: 0.0,
        speed: rng.gen_range(4..=10) as f64 * 0.5,
        curvature: 0.0,
        radius: EGO_RADIUS,
    };
    (
        Scene {
            extent: EXTENT,
            objects: vec![],
            lanes,
            ego: Some(ego),
        },
        RoadLayout { road_y, road_x },
    )
}

/// Adds `count` agent cars with distinct colors on the horizontal road,
/// keeping clear of the ego and each other.
fn add_agents(
    rng: &mut ChaCha8Rng,
    scene: &mut Scene,
    layout: &RoadLayout,
    count: usize,
    radius_range: (f64, f64),
) {
    let mut colors = ColorName::ALL.to_vec();
    colors.shuffle(rng);
    let ego = scene.ego.unwrap();
    for &color in colors.iter().take(count) {
        for _attempt in 0..200 {
            let oncoming = rng.gen_bool(0.5);
            let cy = if oncoming {
                layout.road_y - 2.5
            } else {
                layout.road_y + 2.5
            };
            let radius = rng.gen_range(radius_range.0..radius_range.1);
            let cx = rng.gen_range(radius + 1.0..EXTENT as f64 - radius - 1.0);
            let heading = if oncoming { std::f64::consts::PI } else { 0.0 };
            let clear_of_ego = ((cx - ego.x).powi(2) + (cy - ego.y).powi(2)).sqrt()
                >= radius + ego.radius + 2.0;
            let clear_of_rest = scene.objects.iter().all(|o| {
                ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt() >= o.radius + radius + 1.0
            });
            if clear_of_ego && clear_of_rest {
                scene.objects.push(SceneObject {
                    shape: Shape::Triangle,
                    color,
                    cx,
                    cy,
                    radius,
                    kind: ObjectKind::Agent {
                        heading,
                        speed: rng.gen_range(4..=10) as f64 * 0.5,
                        heading_rate: 0.0,
                    },
                });
                break;
            }
        }
    }
}

/// Relative position of an object from the ego (heading +x, y down):
/// whichever axis dominates wins; ties retried by the generator.
pub fn side_of_ego(ego: &EgoState, o: &SceneObject) -> Option<&'static str> {
    let dx = o.cx - ego.x;
    let dy = o.cy - ego.y;
    if (dx.abs() - dy.abs()).abs() < 1.0 {
        return None;
    }
    Some(if dx.abs() > dy.abs() {
        if dx > 0.0 {
            "ahead"
        } else {
            "behind"
        }
    } else if dy < 0.0 {
        "left"
    } else {
        "right"
    })
}

/// The agent nearest the ego, unique by 0.5 px.
pub fn nearest_agent<'a>(scene: &'a Scene) -> Option<&'a SceneObject> {
    let ego = scene.ego.as_ref()?;
    let dist = |o: &SceneObject| ((o.cx - ego.x).powi(2) + (o.cy - ego.y).powi(2)).sqrt();
    let agents: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| matches!(o.kind, ObjectKind::Agent { .. }))
        .collect();
    let best = agents.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)))?;
    if agents.iter().filter(|o| dist(o) < dist(best) + 0.5).count() > 1 {
        return None;
    }
    Some(*best)
}

/// Counting, color, and relative-position MCQs over driving scenes.
pub fn gen_drive_perception(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("drv_per", seed, n, |rng| loop {
        let (mut scene, layout) = road_scene(rng, false);
        let agent_count = rng.gen_range(1..=4);
        add_agents(rng, &mut scene, &layout, agent_count, (2.0, 2.6));
        if scene.objects.len() != agent_count || scene.check_invariants().is_err() {
            continue;
        }
        let kind = rng.gen_range(0..3);
        let (question, correct, distractors) = match kind {
            0 => {
                let mut pool: Vec<usize> = (0..=5).filter(|&c| c != agent_count).collect();
                pool.shuffle(rng);
                (
                    "count cars?".to_string(),
                    agent_count.to_string(),
                    pool[..3].iter().map(|c| c.to_string()).collect(),
                )
            }
            1 => {
                let Some(nearest) = nearest_agent(&scene) else {
                    continue;
                };
                let correct = nearest.color.name().to_string();
                let distractors: Vec<String> = ColorName::ALL
                    .iter()
                    .map(|c| c.name().to_string())
                    .filter(|c| *c != correct)
                    .collect();
                ("color of nearest car?".to_string(), correct, distractors)
            }
            _ => {
                let target = &scene.objects[rng.gen_range(0..scene.objects.len())];
                let Some(side) = side_of_ego(&scene.ego.unwrap(), target) else {
                    continue;
                };
                let distractors: Vec<String> = ["ahead", "behind", "left", "right"]
                    .iter()
                    .map(|s| s.to_string())
                    .filter(|s| s != side)
                    .collect();
                (
                    format!("the {} car is:", target.color.name()),
                    side.to_string(),
                    distractors,
                )
            }
        };
        let (letter, options) = shuffle_options(rng, correct, distractors);
        let prompt = format!("{question} {}", options_text(&options));
        let images = vec![render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Driving,
            task_kind: TaskKind::Mcq,
            prompt,
            truth: GroundTruth::Choice { letter, options },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    })
}

/// Intent label from the scripted heading rate: heading change over the
/// lookahead window against the turn threshold, sign gives the side.
pub fn intent_label(heading_rate: f64) -> &'static str {
    let dtheta = heading_rate * INTENT_LOOKAHEAD;
    if dtheta.abs() < TURN_THRESHOLD {
        "straight"
    } else if dtheta < 0.0 {
        "left"
    } else {
        "right"
    }
}

/// Two-frame agent-intent MCQs; truth integrates the scripted heading rate.
pub fn gen_drive_prediction(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("drv_pre", seed, n, |rng| loop {
        let (mut scene, layout) = road_scene(rng, false);
        let agent_count = rng.gen_range(1..=3);
        add_agents(rng, &mut scene, &layout, agent_count, (2.6, 3.2));
        if scene.objects.len() != agent_count || scene.check_invariants().is_err() {
            continue;
        }
        let focal = rng.gen_range(0..scene.objects.len());
        let rate = match rng.gen_range(0..3) {
            0 => 0.0,
            1 => -rng.gen_range(0.4..0.7),
            _ => rng.gen_range(0.4..0.7),
        };
        {
            let o = &mut scene.objects[focal];
            let ObjectKind::Agent { heading, speed, .. } = o.kind else {
                unreachable!()
            };
            o.kind = ObjectKind::Agent {
                heading,
                speed,
                heading_rate: rate,
            };
        }
        // Both rendered instants must keep every agent on the canvas.
        let visible = scene.objects.iter().all(|o| {
            let past = o.at_time(-FRAME_GAP_S);
            let e = EXTENT as f64;
            past.cx - past.radius >= 0.0
                && past.cy - past.radius >= 0.0
                && past.cx + past.radius <= e
                && past.cy + past.radius <= e
        });
        if !visible {
            continue;
        }
        let color = scene.objects[focal].color;
        let correct = intent_label(rate).to_string();
        let distractors: Vec<String> = ["straight", "left", "right"]
            .iter()
            .map(|s| s.to_string())
            .filter(|s| *s != correct)
            .collect();
        let (letter, options) = shuffle_options(rng, correct, distractors);
        let prompt = format!(
            "the {} car will go: {}",
            color.name(),
            options_text(&options)
        );
        let images = vec![render_scene_at(&scene, -FRAME_GAP_S), render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Driving,
            task_kind: TaskKind::Mcq,
            prompt,
            truth: GroundTruth::Choice { letter, options },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    })
}

/// Meta-action rule shared with oracles: stop when blocked, otherwise follow
/// the goal.
pub fn meta_action(scene: &Scene, goal: &str) -> &'static str {
    let ego = scene.ego.expect("driving scene has an ego");
    let blocked = scene.objects.iter().any(|o| {
        let dx = o.cx - ego.x;
        (o.cy - ego.y).abs() <= CORRIDOR_HALF && dx > 0.0 && dx <= STOP_DISTANCE
    });
    if blocked {
        "stop"
    } else {
        match goal {
            "continue" => "keep",
            "left" => "left",
            "right" => "right",
            _ => unreachable!(),
        }
    }
}

/// Expert waypoints: constant-curvature arc sampled at 2 Hz for 3 s,
/// normalized to the canvas.
pub fn expert_waypoints(ego: &EgoState) -> Vec<(f64, f64)> {
    (1..=TRAJ_POINTS)
        .map(|k| {
            let t = k as f64 / TRAJ_HZ;
            let (x, y, _) = ego.position_at(t);
            (norm(x), norm(y))
        })
        .collect()
}

fn waypoints_valid(scene: &Scene) -> bool {
    let ego = scene.ego.unwrap();
    for k in 1..=TRAJ_POINTS {
        let t = k as f64 / TRAJ_HZ;
        let (x, y, _) = ego.position_at(t);
        if !(0.0..=EXTENT as f64).contains(&x) || !(0.0..=EXTENT as f64).contains(&y) {
            return false;
        }
        if !scene.drivable(x, y) {
            return false;
        }
        // Conservative clearance: farther than the sum of radii plus one
        // second of closing speed from every object, at matching times.
        for o in &scene.objects {
            let ot = o.at_time(t);
            let d = ((ot.cx - x).powi(2) + (ot.cy - y).powi(2)).sqrt();
            let closing = match o.kind {
                ObjectKind::Agent { speed, .. } => ego.speed + speed,
                ObjectKind::Static => ego.speed,
            };
            if d < o.radius + ego.radius + closing {
                return false;
            }
        }
    }
    true
}

/// Meta-action MCQs and expert-trajectory regression targets.
pub fn gen_drive_planning(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("drv_pla", seed, n, |rng| {
        if rng.gen_bool(0.5) {
            gen_meta_action(rng)
        } else {
            gen_trajectory(rng)
        }
    })
}

fn gen_meta_action(rng: &mut ChaCha8Rng) -> Sample {
    loop {
        let want_cross = rng.gen_bool(0.5);
        let (mut scene, layout) = road_scene(rng, want_cross);
        let goal = if want_cross {
            ["continue", "left", "right"][rng.gen_range(0..3)]
        } else {
            "continue"
        };
        let ego = scene.ego.unwrap();
        if rng.gen_bool(0.5) {
            // Blocking obstacle inside the stop corridor.
            let dx = rng.gen_range(EGO_RADIUS + 3.0..STOP_DISTANCE);
            let cy = ego.y + rng.gen_range(-1.0..1.0);
            let radius = rng.gen_range(1.8..2.4);
            let cx = ego.x + dx;
            if cx + radius > EXTENT as f64 - 1.0 {
                continue;
            }
            scene.objects.push(SceneObject {
                shape: Shape::Square,
                color: ColorName::ALL[rng.gen_range(0..4)],
                cx,
                cy,
                radius,
                kind: ObjectKind::Static,
            });
        } else if rng.gen_bool(0.5) {
            // Distractor traffic outside the corridor.
            let extra = rng.gen_range(1..=2);
            add_agents(rng, &mut scene, &layout, extra, (2.0, 2.4));
            let ego = scene.ego.unwrap();
            let in_corridor = |o: &SceneObject| {
                let dx = o.cx - ego.x;
                (o.cy - ego.y).abs() <= CORRIDOR_HALF && dx > 0.0 && dx <= STOP_DISTANCE
            };
            scene.objects.retain(|o| !in_corridor(o));
        }
        if scene.check_invariants().is_err() {
            continue;
        }
        let correct = meta_action(&scene, goal).to_string();
        let distractors: Vec<String> = ["stop", "keep", "left", "right"]
            .iter()
            .map(|s| s.to_string())
            .filter(|s| *s != correct)
            .collect();
        let (letter, options) = shuffle_options(rng, correct.clone(), distractors);
        let prompt = format!("goal {goal}. action? {}", options_text(&options));
        let images = vec![render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Driving,
            task_kind: TaskKind::Mcq,
            prompt,
            truth: GroundTruth::Choice { letter, options },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    }
}

fn gen_trajectory(rng: &mut ChaCha8Rng) -> Sample {
    loop {
        let goal = ["continue", "left", "right"][rng.gen_range(0..3)];
        let (mut scene, layout) = road_scene(rng, goal != "continue");
        {
            let ego = scene.ego.as_mut().unwrap();
            ego.speed = rng.gen_range(4..=10) as f64 * 0.5;
            ego.curvature = match goal {
                "continue" => 0.0,
                "left" => -[0.06, 0.08, 0.10][rng.gen_range(0..3)],
                "right" => [0.06, 0.08, 0.10][rng.gen_range(0..3)],
                _ => unreachable!(),
            };
        }
        if rng.gen_bool(0.4) {
            add_agents(rng, &mut scene, &layout, 1, (2.0, 2.4));
        }
        if scene.check_invariants().is_err() || !waypoints_valid(&scene) {
            continue;
        }
        let ego = scene.ego.unwrap();
        let waypoints = expert_waypoints(&ego);
        let prompt = format!("v {:.1} goal {goal}. plan 3s", ego.speed);
        let images = vec![render_scene(&scene)];
        return Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::Driving,
            task_kind: TaskKind::Trajectory,
            prompt,
            truth: GroundTruth::Trajectory { waypoints },
            scene,
            image_paths: vec![],
            cot: false,
            images,
        };
    }
}

// ---------------------------------------------------------------------------
// General-domain generator
// ---------------------------------------------------------------------------

/// Shape/color VQA, single-object grounding, and a slice of free-text naming.
pub fn gen_general(seed: u64, n: usize) -> Vec<Sample> {
    gen_many("general", seed, n, |rng| {
        let scene = embodied_scene(rng, 1);
        let obj = scene.objects[0].clone();
        let variant = rng.gen_range(0..10);
        let (prompt, task_kind, truth) = if variant < 4 {
            let correct = obj.shape.name().to_string();
            let distractors: Vec<String> = Shape::ALL
                .iter()
                .map(|s| s.name().to_string())
                .filter(|s| *s != correct)
                .chain(std::iter::once("star".to_string()))
                .collect();
            let (letter, options) = shuffle_options(rng, correct, distractors);
            (
                format!("what shape? {}", options_text(&options)),
                TaskKind::Mcq,
                GroundTruth::Choice { letter, options },
            )
        } else if variant < 7 {
            let correct = obj.color.name().to_string();
            let distractors: Vec<String> = ColorName::ALL
                .iter()
                .map(|c| c.name().to_string())
                .filter(|c| *c != correct)
                .collect();
            let (letter, options) = shuffle_options(rng, correct, distractors);
            (
                format!("what color? {}", options_text(&options)),
                TaskKind::Mcq,
                GroundTruth::Choice { letter, options },
            )
        } else if variant < 9 {
            let (x0, y0, x1, y1) = obj.bbox();
            (
                "box the object".to_string(),
                TaskKind::Grounding,
                GroundTruth::Box {
                    x0: norm(x0),
                    y0: norm(y0),
                    x1: norm(x1),
                    y1: norm(y1),
                },
            )
        } else {
            (
                "name the object".to_string(),
                TaskKind::Freetext,
                GroundTruth::Text {
                    text: obj.descriptor(),
                },
            )
        };
        let images = vec![render_scene(&scene)];
        Sample {
            format_version: CORPUS_FORMAT_VERSION,
            id: String::new(),
            domain: Domain::General,
            task_kind,
            prompt,
            truth,
            scene,
            image_paths: vec![],
            cot: false,
            images,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affordance_masks_non_empty_and_deterministic() {
        let a = gen_embodied_affordance(7, 50);
        assert_eq!(a.len(), 50);
        for s in &a {
            if let GroundTruth::PointMask { mask } = &s.truth {
                assert!(!mask.is_empty());
            }
            s.validate().unwrap();
        }
        let b = gen_embodied_affordance(7, 50);
        assert_eq!(a, b);
    }

    #[test]
    fn spatial_options_unique() {
        for s in gen_embodied_spatial(3, 60) {
            let GroundTruth::Choice { letter, options } = &s.truth else {
                panic!()
            };
            let idx = (*letter as u8 - b'A') as usize;
            for (i, o) in options.iter().enumerate() {
                if i != idx {
                    assert_ne!(o, &options[idx], "duplicate option in {}", s.prompt);
                }
            }
        }
    }

    #[test]
    fn planning_history_boundaries() {
        let samples = gen_embodied_planning(5, 80);
        let mut saw_first = false;
        let mut saw_last = false;
        for s in &samples {
            let GroundTruth::Choice { letter, options } = &s.truth else {
                panic!()
            };
            let answer = &options[(*letter as u8 - b'A') as usize];
            if s.prompt.contains("done: none") {
                assert!(answer.starts_with("go to the "), "{}", s.prompt);
                saw_first = true;
            }
            if s.prompt.matches(", ").count() >= 2 && s.prompt.contains("go to the") {
                saw_last |= answer.starts_with("place on");
            }
        }
        assert!(saw_first && saw_last);
    }

    #[test]
    fn intent_rule_thresholds() {
        assert_eq!(intent_label(0.0), "straight");
        assert_eq!(intent_label(-0.5), "left");
        assert_eq!(intent_label(0.5), "right");
        assert_eq!(intent_label(0.05), "straight");
    }

    #[test]
    fn prediction_sample_has_two_frames() {
        let s = &gen_drive_prediction(11, 5)[0];
        assert_eq!(s.images.len(), 2);
    }

    #[test]
    fn trajectory_samples_have_six_waypoints() {
        for s in gen_drive_planning(13, 40) {
            if let GroundTruth::Trajectory { waypoints } = &s.truth {
                assert_eq!(waypoints.len(), TRAJ_POINTS);
                for (x, y) in waypoints {
                    assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
                }
            }
        }
    }

    #[test]
    fn zero_curvature_waypoints_collinear() {
        let ego = EgoState {
            x: 4.0,
            y: 16.0,
            heading: 0.0,
            speed: 4.0,
            curvature: 0.0,
            radius: 2.0,
        };
        let wps = expert_waypoints(&ego);
        for (k, (x, y)) in wps.iter().enumerate() {
            let t = (k + 1) as f64 * 0.5;
            assert!((x * 32.0 - (4.0 + 4.0 * t)).abs() < 1e-12);
            assert!((y * 32.0 - 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_action_stop_rule() {
        let mut scene = Scene {
            extent: EXTENT,
            objects: vec![],
            lanes: vec![],
            ego: Some(EgoState {
                x: 5.0,
                y: 16.0,
                heading: 0.0,
                speed: 4.0,
                curvature: 0.0,
                radius: 2.0,
            }),
        };
        assert_eq!(meta_action(&scene, "continue"), "keep");
        scene.objects.push(SceneObject {
            shape: Shape::Square,
            color: ColorName::Red,
            cx: 12.0,
            cy: 16.5,
            radius: 2.0,
            kind: ObjectKind::Static,
        });
        assert_eq!(meta_action(&scene, "continue"), "stop");
        assert_eq!(meta_action(&scene, "left"), "stop");
    }

    #[test]
    fn general_covers_all_kinds() {
        let samples = gen_general(1, 200);
        let kinds: std::collections::HashSet<TaskKind> =
            samples.iter().map(|s| s.task_kind).collect();
        assert!(kinds.contains(&TaskKind::Mcq));
        assert!(kinds.contains(&TaskKind::Grounding));
        assert!(kinds.contains(&TaskKind::Freetext));
    }
}
