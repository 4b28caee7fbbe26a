//! Sample records and ground-truth variants.

use super::mask::Mask;
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::img::RgbImage;
use serde::{Deserialize, Serialize};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    General,
    Embodied,
    Driving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mcq,
    Pointing,
    Grounding,
    Trajectory,
    Freetext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroundTruth {
    Choice {
        letter: char,
        options: Vec<String>,
    },
    PointMask {
        mask: Mask,
    },
    Box {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Trajectory {
        /// Normalized (x, y) waypoints at 2 Hz.
        waypoints: Vec<(f64, f64)>,
    },
    Text {
        text: String,
    },
}

/// Fixed 3-decimal coordinate rendering: each axis is a 0-999 grid.
pub fn fmt_coord(v: f64) -> String {
    format!("{:.3}", v.clamp(0.0, 1.0))
}

impl GroundTruth {
    pub fn matches_kind(&self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (GroundTruth::Choice { .. }, TaskKind::Mcq)
                | (GroundTruth::PointMask { .. }, TaskKind::Pointing)
                | (GroundTruth::Box { .. }, TaskKind::Grounding)
                | (GroundTruth::Trajectory { .. }, TaskKind::Trajectory)
                | (GroundTruth::Text { .. }, TaskKind::Freetext)
        )
    }

    /// The canonical answer string a perfect responder would emit inside the
    /// answer segment.
    pub fn answer_text(&self) -> String {
        match self {
            GroundTruth::Choice { letter, .. } => letter.to_string(),
            GroundTruth::PointMask { mask } => {
                let (x, y) = mask
                    .representative_point()
                    .expect("ground-truth masks are non-empty");
                format!("({}, {})", fmt_coord(x), fmt_coord(y))
            }
            GroundTruth::Box { x0, y0, x1, y1 } => format!(
                "({}, {}, {}, {})",
                fmt_coord(*x0),
                fmt_coord(*y0),
                fmt_coord(*x1),
                fmt_coord(*y1)
            ),
            GroundTruth::Trajectory { waypoints } => {
                let pts: Vec<String> = waypoints
                    .iter()
                    .map(|(x, y)| format!("({}, {})", fmt_coord(*x), fmt_coord(*y)))
                    .collect();
                format!("[{}]", pts.join("; "))
            }
            GroundTruth::Text { text } => text.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GroundTruth::Choice { letter, options } => {
                if !('A'..='D').contains(letter) {
                    return Err(Error::Corpus(format!("choice letter {letter} out of A-D")));
                }
                let idx = (*letter as u8 - b'A') as usize;
                if idx >= options.len() {
                    return Err(Error::Corpus("choice letter beyond options".into()));
                }
            }
            GroundTruth::PointMask { mask } => {
                if mask.is_empty() {
                    return Err(Error::Corpus("empty point mask".into()));
                }
            }
            GroundTruth::Box { x0, y0, x1, y1 } => {
                let ok = *x0 >= 0.0 && *y0 >= 0.0 && *x1 <= 1.0 && *y1 <= 1.0 && x0 < x1 && y0 < y1;
                if !ok {
                    return Err(Error::Corpus(format!(
                        "malformed box ({x0},{y0},{x1},{y1})"
                    )));
                }
            }
            GroundTruth::Trajectory { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Corpus("empty trajectory".into()));
                }
            }
            GroundTruth::Text { text } => {
                if text.is_empty() {
                    return Err(Error::Corpus("empty text truth".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub id: String,
    pub domain: Domain,
    pub task_kind: TaskKind,
    pub prompt: String,
    pub truth: GroundTruth,
    pub scene: Scene,
    /// Sidecar image files relative to the corpus directory; populated on
    /// write, resolved on read.
    #[serde(default)]
    pub image_paths: Vec<String>,
    /// Render stage-3 style (think + answer) when true.
    #[serde(default)]
    pub cot: bool,
    /// Rendered frames; carried in memory, stored as PNG sidecars.
    #[serde(skip)]
    pub images: Vec<RgbImage>,
}

fn default_version() -> u32 {
    CORPUS_FORMAT_VERSION
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if !self.truth.matches_kind(self.task_kind) {
            return Err(Error::Corpus(format!(
                "sample {}: truth variant does not match task kind",
                self.id
            )));
        }
        self.truth.validate()?;
        self.scene
            .check_invariants()
            .map_err(|e| Error::Corpus(format!("sample {}: {e}", self.id)))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_format_is_three_decimals() {
        assert_eq!(fmt_coord(0.5), "0.500");
        assert_eq!(fmt_coord(1.2), "1.000");
        assert_eq!(fmt_coord(-0.1), "0.000");
    }

    #[test]
    fn trajectory_answer_text_layout() {
        let t = GroundTruth::Trajectory {
            waypoints: vec![(0.1, 0.2), (0.3, 0.4)],
        };
        assert_eq!(t.answer_text(), "[(0.100, 0.200); (0.300, 0.400)]");
    }

    #[test]
    fn box_validation() {
        let bad = GroundTruth::Box {
            x0: 0.5,
            y0: 0.1,
            x1: 0.4,
            y1: 0.9,
        };
        assert!(bad.validate().is_err());
    }
}
