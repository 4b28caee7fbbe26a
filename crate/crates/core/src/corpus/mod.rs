//! Synthetic multi-domain corpus: scenes, rendering, generators, and the
//! JSON-Lines + PNG-sidecar serialization.

pub mod generators;
pub mod mask;
pub mod render;
pub mod sample;
pub mod scene;

pub use generators::{
    gen_drive_perception, gen_drive_planning, gen_drive_prediction, gen_embodied_affordance,
    gen_embodied_planning, gen_embodied_spatial, gen_general,
};
pub use mask::Mask;
pub use render::{render_scene, render_scene_at};
pub use sample::{Domain, GroundTruth, Sample, TaskKind};
pub use scene::{arc_position, ColorName, EgoState, Lane, ObjectKind, Scene, SceneObject, Shape};

use crate::error::{Error, Result};
use crate::img::RgbImage;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// Canonical training-corpus names, in curriculum order of first use.
pub const GENERAL: &str = "general";
pub const EMB_AFFORDANCE: &str = "emb_affordance";
pub const EMB_SPATIAL: &str = "emb_spatial";
pub const EMB_PLANNING: &str = "emb_planning";
pub const DRIVE_PERCEPTION: &str = "drive_perception";
pub const DRIVE_PREDICTION: &str = "drive_prediction";
pub const DRIVE_PLANNING: &str = "drive_planning";
pub const COT: &str = "cot";
pub const RL: &str = "rl";

/// Writes `name.jsonl` plus a `name/` directory of PNG frames. Returns the
/// SHA-256 of the JSONL bytes.
pub fn write_corpus(dir: &Path, name: &str, samples: &[Sample]) -> Result<String> {
    let img_dir = dir.join(name);
    std::fs::create_dir_all(&img_dir)?;
    let mut jsonl = Vec::new();
    for s in samples {
        let mut rec = s.clone();
        rec.image_paths = s
            .images
            .iter()
            .enumerate()
            .map(|(k, _)| format!("{name}/{}_{k}.png", s.id))
            .collect();
        for (rel, img) in rec.image_paths.iter().zip(&s.images) {
            img.write_png(&dir.join(rel))?;
        }
        serde_json::to_writer(&mut jsonl, &rec)?;
        jsonl.push(b'\n');
    }
    std::fs::write(dir.join(format!("{name}.jsonl")), &jsonl)?;
    Ok(crate::util::sha256_hex(&jsonl))
}

/// Reads a corpus back, resolving PNG sidecars into memory.
pub fn read_corpus(dir: &Path, name: &str) -> Result<Vec<Sample>> {
    let path = dir.join(format!("{name}.jsonl"));
    let file = std::fs::File::open(&path).map_err(|e| {
        Error::Corpus(format!("cannot open corpus {}: {e}", path.display()))
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("{name}.jsonl line {}: {e}", lineno + 1)))?;
        if s.format_version != sample::CORPUS_FORMAT_VERSION {
            return Err(Error::Corpus(format!(
                "unsupported corpus format version {}",
                s.format_version
            )));
        }
        s.images = s
            .image_paths
            .iter()
            .map(|rel| RgbImage::read_png(&dir.join(rel)))
            .collect::<Result<Vec<_>>>()?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

/// Named in-memory corpora for the trainer and suite builders.
#[derive(Debug, Default, Clone)]
pub struct CorpusRegistry {
    corpora: BTreeMap<String, Vec<Sample>>,
}

impl CorpusRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, samples: Vec<Sample>) {
        self.corpora.insert(name.to_string(), samples);
    }

    pub fn get(&self, name: &str) -> Result<&[Sample]> {
        self.corpora
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Config(format!("corpus '{name}' not in registry")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.corpora.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.corpora.keys().map(|s| s.as_str()).collect()
    }

    pub fn all_ids(&self) -> Vec<&str> {
        self.corpora
            .values()
            .flat_map(|v| v.iter().map(|s| s.id.as_str()))
            .collect()
    }
}

/// Standard corpus sizes used by generation commands.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSizes {
    pub general: usize,
    pub emb_affordance: usize,
    pub emb_spatial: usize,
    pub emb_planning: usize,
    pub drive_perception: usize,
    pub drive_prediction: usize,
    pub drive_planning: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes {
            general: 1500,
            emb_affordance: 2000,
            emb_spatial: 2000,
            emb_planning: 1200,
            drive_perception: 1500,
            drive_prediction: 1200,
            drive_planning: 1200,
        }
    }
}

/// Generates the seven base corpora (CoT and RL sets are built separately).
pub fn generate_base_corpora(seed: u64, sizes: &CorpusSizes) -> CorpusRegistry {
    let mut reg = CorpusRegistry::new();
    reg.insert(GENERAL, gen_general(seed, sizes.general));
    reg.insert(EMB_AFFORDANCE, gen_embodied_affordance(seed, sizes.emb_affordance));
    reg.insert(EMB_SPATIAL, gen_embodied_spatial(seed, sizes.emb_spatial));
    reg.insert(EMB_PLANNING, gen_embodied_planning(seed, sizes.emb_planning));
    reg.insert(DRIVE_PERCEPTION, gen_drive_perception(seed, sizes.drive_perception));
    reg.insert(DRIVE_PREDICTION, gen_drive_prediction(seed, sizes.drive_prediction));
    reg.insert(DRIVE_PLANNING, gen_drive_planning(seed, sizes.drive_planning));
    reg
}
