//! Reasoning-trace augmentation and the think/answer template.
//!
//! Traces are template-filled from the scene record, never model-generated,
//! so the final answer is correct by construction. The template grammar is
//! the single convention shared with the reward engine:
//! `<think>` CHARS `</think>` WS `<answer>` PAYLOAD `</answer>`, one segment
//! each, no nesting, nothing outside the markers.

use crate::corpus::{GroundTruth, Sample, TaskKind};
use crate::corpus::sample::fmt_coord;

const MARKERS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

/// An ordered reasoning trace; at least two steps, the last naming the
/// answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningTrace {
    pub steps: Vec<String>,
}

impl ReasoningTrace {
    pub fn render(&self) -> String {
        self.steps.join(". ")
    }
}

/// A sample paired with its full stage-3 target text.
#[derive(Debug, Clone)]
pub struct CotSample {
    pub base: Sample,
    pub target_text: String,
}

/// Splits a strict template into (think, answer) contents. `None` when the
/// text is not exactly one think segment followed by one answer segment.
pub fn parse_template(text: &str) -> Option<(&str, &str)> {
    let t = text.trim();
    let rest = t.strip_prefix("<think>")?;
    let (think, rest) = rest.split_once("</think>")?;
    let rest = rest.trim_start();
    let rest = rest.strip_prefix("<answer>")?;
    let (answer, tail) = rest.split_once("</answer>")?;
    if !tail.trim().is_empty() {
        return None;
    }
    for seg in [think, answer] {
        if MARKERS.iter().any(|m| seg.contains(m)) {
            return None;
        }
    }
    Some((think, answer))
}

/// Content of the answer segment if the template parses, otherwise the raw
/// text unchanged.
pub fn strip_think(text: &str) -> &str {
    match parse_template(text) {
        Some((_, answer)) => answer,
        None => text,
    }
}

fn scene_inventory(sample: &Sample) -> String {
    let descs: Vec<String> = sample
        .scene
        .objects
        .iter()
        .map(|o| o.descriptor())
        .collect();
    if descs.is_empty() {
        "scene: empty road".to_string()
    } else {
        format!("scene: {}", descs.join(", "))
    }
}

/// Deterministic scene-grounded trace for MCQ, pointing, and grounding
/// samples; other task kinds signal skip with `None`.
pub fn augment_with_cot(sample: &Sample) -> Option<CotSample> {
    let trace = match (&sample.task_kind, &sample.truth) {
        (TaskKind::Mcq, GroundTruth::Choice { letter, options }) => {
            let idx = (*letter as u8 - b'A') as usize;
            let listed: Vec<String> = options
                .iter()
                .enumerate()
                .map(|(i, o)| format!("{} {}", (b'A' + i as u8) as char, o))
                .collect();
            ReasoningTrace {
                steps: vec![
                    scene_inventory(sample),
                    format!("options: {}", listed.join(", ")),
                    format!("match: {}", options[idx]),
                    format!("answer: {letter}"),
                ],
            }
        }
        (TaskKind::Pointing, GroundTruth::PointMask { mask }) => {
            let (x, y) = mask.representative_point()?;
            ReasoningTrace {
                steps: vec![
                    scene_inventory(sample),
                    format!(
                        "target region center near ({}, {})",
                        fmt_coord(x),
                        fmt_coord(y)
                    ),
                    format!("answer: ({}, {})", fmt_coord(x), fmt_coord(y)),
                ],
            }
        }
        (TaskKind::Grounding, GroundTruth::Box { x0, y0, x1, y1 }) => ReasoningTrace {
            steps: vec![
                scene_inventory(sample),
                format!(
                    "target spans x {}..{} y {}..{}",
                    fmt_coord(*x0),
                    fmt_coord(*x1),
                    fmt_coord(*y0),
                    fmt_coord(*y1)
                ),
                format!("answer: {}", sample.truth.answer_text()),
            ],
        },
        _ => return None,
    };
    let target_text = format!(
        "<think>{}</think><answer>{}</answer>",
        trace.render(),
        sample.truth.answer_text()
    );
    let mut base = sample.clone();
    base.cot = true;
    Some(CotSample { base, target_text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_drive_planning, gen_embodied_affordance, gen_embodied_spatial};

    #[test]
    fn strip_basic_and_passthrough() {
        assert_eq!(strip_think("<think>x</think><answer>B</answer>"), "B");
        assert_eq!(strip_think("B"), "B");
        assert_eq!(strip_think(""), "");
    }

    #[test]
    fn malformed_templates_pass_through() {
        for bad in [
            "<think>x</think><answer>B",
            "<think>x<answer>B</answer>",
            "<think>a</think><answer>B</answer> extra",
            "<think><think>a</think></think><answer>B</answer>",
            "<answer>B</answer><think>x</think>",
            "<think>a</think><answer>B</answer><answer>C</answer>",
        ] {
            assert_eq!(strip_think(bad), bad, "{bad}");
        }
    }

    #[test]
    fn augment_round_trips_answer() {
        for s in gen_embodied_spatial(21, 40) {
            let cot = augment_with_cot(&s).expect("mcq supported");
            let (_, answer) = parse_template(&cot.target_text).expect("template valid");
            assert_eq!(answer, s.truth.answer_text());
            assert!(cot.base.cot);
        }
    }

    #[test]
    fn augment_deterministic() {
        let s = &gen_embodied_affordance(3, 1)[0];
        let a = augment_with_cot(s).unwrap();
        let b = augment_with_cot(s).unwrap();
        assert_eq!(a.target_text, b.target_text);
    }

    #[test]
    fn trajectory_samples_skip() {
        let any_skip = gen_drive_planning(9, 30)
            .iter()
            .filter(|s| s.task_kind == crate::corpus::TaskKind::Trajectory)
            .all(|s| augment_with_cot(s).is_none());
        assert!(any_skip);
    }

    #[test]
    fn trace_has_at_least_two_steps_and_names_answer() {
        for s in gen_embodied_spatial(5, 20) {
            let cot = augment_with_cot(&s).unwrap();
            let (think, answer) = parse_template(&cot.target_text).unwrap();
            assert!(think.matches(". ").count() >= 1);
            assert!(think.ends_with(&format!("answer: {answer}")));
        }
    }
}
