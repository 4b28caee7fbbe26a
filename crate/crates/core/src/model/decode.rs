//! Incremental sampling with per-layer KV caches, plus teacher-forced
//! scoring of existing responses.
//!
//! Generation restricts sampling to tokens that can appear in a response
//! (EOS, the think/answer markers, and the byte range); PAD/BOS/IMG and ids
//! past the byte range are masked out. Scoring applies the same mask and
//! temperature so recorded log-probabilities always refer to the actual
//! sampling distribution. The cache path reproduces the training-graph
//! logits to ~1e-12; an equality test guards the two implementations.

use super::config::ModelConfig;
use super::forward::{encode_image_graph, project_graph, sequence_logits_graph};
use super::params::Parameters;
use super::tokenizer::{self, TokenSequence};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::img::RgbImage;
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub max_new: usize,
    /// 0.0 selects greedy argmax decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_new: 48,
            temperature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenOutput {
    pub text: String,
    /// Sampled ids, EOS included when generation stopped on it.
    pub new_ids: Vec<u32>,
    /// Log-probability of each sampled id under the masked sampling
    /// distribution; all zero for greedy decoding.
    pub logprobs: Vec<f64>,
}

/// Whether a token id may be sampled in a response.
pub fn allowed_token(id: u32, vocab_size: usize) -> bool {
    if id as usize >= vocab_size {
        return false;
    }
    match id {
        tokenizer::PAD | tokenizer::BOS | tokenizer::IMG => false,
        tokenizer::EOS
        | tokenizer::THINK_OPEN
        | tokenizer::THINK_CLOSE
        | tokenizer::ANS_OPEN
        | tokenizer::ANS_CLOSE => true,
        id => (id as usize) < (tokenizer::BYTE_OFFSET as usize + 256).min(vocab_size),
    }
}

/// Additive logit mask: 0 for allowed ids, a large negative value otherwise.
pub fn policy_mask_row(vocab_size: usize) -> Vec<f64> {
    (0..vocab_size as u32)
        .map(|id| if allowed_token(id, vocab_size) { 0.0 } else { -1e30 })
        .collect()
}

struct LayerCache {
    k: Vec<f64>,
    v: Vec<f64>,
    len: usize,
}

/// Incremental decoder over embedding rows.
struct DecoderState<'a> {
    cfg: &'a ModelConfig,
    params: &'a Parameters,
    caches: Vec<LayerCache>,
    pos: usize,
}

fn ln_row(x: &[f64], gamma: &Tensor, beta: &Tensor) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * gamma.data[i] + beta.data[i])
        .collect()
}

fn linear_row(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data.clone();
    for (i, &xi) in x.iter().enumerate() {
        let row = w.row(i);
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

fn gelu_row(x: &mut [f64]) {
    const C: f64 = 0.797_884_560_802_865_4;
    for v in x.iter_mut() {
        *v = 0.5 * *v * (1.0 + (C * (*v + 0.044715 * *v * *v * *v)).tanh());
    }
}

impl<'a> DecoderState<'a> {
    fn new(cfg: &'a ModelConfig, params: &'a Parameters) -> Self {
        let caches = (0..cfg.decoder_layers)
            .map(|_| LayerCache {
                k: Vec::new(),
                v: Vec::new(),
                len: 0,
            })
            .collect();
        DecoderState {
            cfg,
            params,
            caches,
            pos: 0,
        }
    }

    /// Feeds one embedding row (pre-positional) and returns the logits row.
    fn step(&mut self, emb: &[f64]) -> Vec<f64> {
        let p = self.params;
        let d = self.cfg.decoder_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let pos_row = p.get("dec.pos").row(self.pos);
        let mut x: Vec<f64> = emb.iter().zip(pos_row).map(|(a, b)| a + b).collect();

        for l in 0..self.cfg.decoder_layers {
            let prefix = format!("dec.l{l}");
            let a = ln_row(
                &x,
                p.get(&format!("{prefix}.ln1.g")),
                p.get(&format!("{prefix}.ln1.b")),
            );
            let q = linear_row(&a, p.get(&format!("{prefix}.attn.wq")), p.get(&format!("{prefix}.attn.bq")));
            let k = linear_row(&a, p.get(&format!("{prefix}.attn.wk")), p.get(&format!("{prefix}.attn.bk")));
            let v = linear_row(&a, p.get(&format!("{prefix}.attn.wv")), p.get(&format!("{prefix}.attn.bv")));
            let cache = &mut self.caches[l];
            cache.k.extend_from_slice(&k);
            cache.v.extend_from_slice(&v);
            cache.len += 1;

            let t = cache.len;
            let mut ctx = vec![0.0; d];
            for h in 0..heads {
                let off = h * dh;
                // Scores over all cached positions for this head.
                let mut scores = Vec::with_capacity(t);
                for ti in 0..t {
                    let krow = &cache.k[ti * d + off..ti * d + off + dh];
                    let mut s = 0.0;
                    for j in 0..dh {
                        s += q[off + j] * krow[j];
                    }
                    scores.push(s * scale);
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                for (ti, s) in scores.iter().enumerate() {
                    let w = s / denom;
                    let vrow = &cache.v[ti * d + off..ti * d + off + dh];
                    for j in 0..dh {
                        ctx[off + j] += w * vrow[j];
                    }
                }
            }
            let att = linear_row(&ctx, p.get(&format!("{prefix}.attn.wo")), p.get(&format!("{prefix}.attn.bo")));
            for (xi, ai) in x.iter_mut().zip(&att) {
                *xi += ai;
            }
            let m = ln_row(
                &x,
                p.get(&format!("{prefix}.ln2.g")),
                p.get(&format!("{prefix}.ln2.b")),
            );
            let mut h1 = linear_row(&m, p.get(&format!("{prefix}.mlp.w1")), p.get(&format!("{prefix}.mlp.b1")));
            gelu_row(&mut h1);
            let ff = linear_row(&h1, p.get(&format!("{prefix}.mlp.w2")), p.get(&format!("{prefix}.mlp.b2")));
            for (xi, fi) in x.iter_mut().zip(&ff) {
                *xi += fi;
            }
        }

        let final_x = ln_row(&x, p.get("dec.ln_out.g"), p.get("dec.ln_out.b"));
        let logits = linear_row(&final_x, p.get("dec.head.w"), p.get("dec.head.b"));
        self.pos += 1;
        logits
    }
}

/// Embedding rows for the prompt: token embeddings with projected visual
/// tokens spliced over the IMG region.
fn prompt_embeddings(
    cfg: &ModelConfig,
    params: &Parameters,
    prompt: &TokenSequence,
    images: &[RgbImage],
) -> Result<Vec<Vec<f64>>> {
    prompt.validate(cfg.vocab_size, cfg.max_seq_len)?;
    let tok_emb = params.get("dec.tok_emb");
    let mut rows: Vec<Vec<f64>> = prompt
        .ids
        .iter()
        .map(|&id| tok_emb.row(id as usize).to_vec())
        .collect();
    if let Some((start, len)) = prompt.img_region {
        if images.len() * cfg.patch_count() != len {
            return Err(Error::Argument(format!(
                "IMG region holds {len} tokens but {} image(s) produce {}",
                images.len(),
                images.len() * cfg.patch_count()
            )));
        }
        let mut at = start;
        for image in images {
            let mut g = Graph::new(params.tensors());
            let vis = encode_image_graph(&mut g, cfg, params, image)?;
            let proj = project_graph(&mut g, params, vis);
            let t = g.val(proj);
            for r in 0..t.rows {
                rows[at] = t.row(r).to_vec();
                at += 1;
            }
        }
    } else if !images.is_empty() {
        return Err(Error::Argument(
            "images supplied but prompt has no IMG region".into(),
        ));
    }
    Ok(rows)
}

fn masked_log_softmax(logits: &[f64], temperature: f64, vocab: usize) -> Vec<f64> {
    let t = temperature.max(1e-12);
    let mut scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(id, &l)| {
            if allowed_token(id as u32, vocab) {
                l / t
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + scaled
            .iter()
            .map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 })
            .sum::<f64>()
            .ln();
    for s in scaled.iter_mut() {
        *s -= lse;
    }
    scaled
}

fn greedy_pick(logits: &[f64], vocab: usize) -> u32 {
    let mut best = None::<(usize, f64)>;
    for (id, &l) in logits.iter().enumerate() {
        if !allowed_token(id as u32, vocab) {
            continue;
        }
        match best {
            Some((_, bl)) if l <= bl => {}
            _ => best = Some((id, l)),
        }
    }
    best.expect("at least one allowed token").0 as u32
}

fn sample_pick(logprobs: &[f64], vocab: usize, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cum = 0.0;
    let mut last = tokenizer::EOS;
    for (id, &lp) in logprobs.iter().enumerate() {
        if !allowed_token(id as u32, vocab) {
            continue;
        }
        last = id as u32;
        cum += lp.exp();
        if u < cum {
            return id as u32;
        }
    }
    last
}

/// Samples a continuation of `prompt`. Terminates at EOS, `max_new`, or the
/// model's context limit; temperature 0 is deterministic greedy.
pub fn generate(
    cfg: &ModelConfig,
    params: &Parameters,
    prompt: &TokenSequence,
    images: &[RgbImage],
    decode: &DecodeConfig,
) -> Result<GenOutput> {
    if decode.temperature < 0.0 {
        return Err(Error::Argument("temperature must be >= 0".into()));
    }
    let rows = prompt_embeddings(cfg, params, prompt, images)?;
    let mut state = DecoderState::new(cfg, params);
    let mut logits = vec![0.0; cfg.vocab_size];
    for row in &rows {
        logits = state.step(row);
    }

    let budget = decode
        .max_new
        .min(cfg.max_seq_len.saturating_sub(prompt.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(decode.seed);
    let tok_emb = params.get("dec.tok_emb");
    let mut new_ids = Vec::new();
    let mut logprobs = Vec::new();
    for _ in 0..budget {
        let (id, lp) = if decode.temperature == 0.0 {
            (greedy_pick(&logits, cfg.vocab_size), 0.0)
        } else {
            let lps = masked_log_softmax(&logits, decode.temperature, cfg.vocab_size);
            let id = sample_pick(&lps, cfg.vocab_size, &mut rng);
            (id, lps[id as usize])
        };
        new_ids.push(id);
        logprobs.push(lp);
        if id == tokenizer::EOS {
            break;
        }
        logits = state.step(&tok_emb.row(id as usize).to_vec());
    }

    Ok(GenOutput {
        text: tokenizer::decode(&new_ids),
        new_ids,
        logprobs,
    })
}

/// Teacher-forced log-probabilities of `seq[span]` under the masked sampling
/// distribution at `temperature`. Used for reference-policy scoring.
pub fn score_response(
    cfg: &ModelConfig,
    params: &Parameters,
    seq: &TokenSequence,
    images: &[RgbImage],
    span: (usize, usize),
    temperature: f64,
) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(Error::Argument("scoring needs temperature > 0".into()));
    }
    let (start, len) = span;
    if start == 0 || start + len > seq.len() {
        return Err(Error::Argument("span outside sequence".into()));
    }
    let mut g = Graph::new(params.tensors());
    let logits = sequence_logits_graph(&mut g, cfg, params, seq, images)?;
    let lt = g.val(logits);
    let mut out = Vec::with_capacity(len);
    for t in start..start + len {
        let lps = masked_log_softmax(lt.row(t - 1), temperature, cfg.vocab_size);
        out.push(lps[seq.ids[t] as usize]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::micro_config;

    fn text_config() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 8,
            vision_dim: 8,
            vision_layers: 1,
            decoder_dim: 16,
            decoder_layers: 2,
            heads: 2,
            vocab_size: 300,
            max_seq_len: 48,
            seed: 11,
        }
    }

    #[test]
    fn cache_path_matches_graph_forward() {
        let cfg = text_config();
        let params = Parameters::init(&cfg).unwrap();
        let mut seq = TokenSequence::with_image("ab c", cfg.patch_count());
        seq.push_response("xy");
        let image = RgbImage::filled(cfg.image_size, [40, 90, 200]);
        let full = crate::model::forward::forward(&cfg, &params, &seq, &[image.clone()]).unwrap();

        let rows = prompt_embeddings(&cfg, &params, &seq, &[image]).unwrap();
        let mut state = DecoderState::new(&cfg, &params);
        for (t, row) in rows.iter().enumerate() {
            let logits = state.step(row);
            for c in 0..cfg.vocab_size {
                assert!(
                    (logits[c] - full.at(t, c)).abs() < 1e-9,
                    "row {t} col {c}: {} vs {}",
                    logits[c],
                    full.at(t, c)
                );
            }
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let cfg = text_config();
        let params = Parameters::init(&cfg).unwrap();
        let prompt = TokenSequence::text_only("q:");
        let d = DecodeConfig {
            max_new: 8,
            temperature: 0.0,
            seed: 99,
        };
        let a = generate(&cfg, &params, &prompt, &[], &d).unwrap();
        let b = generate(&cfg, &params, &prompt, &[], &d).unwrap();
        assert_eq!(a.new_ids, b.new_ids);
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let cfg = text_config();
        let params = Parameters::init(&cfg).unwrap();
        let prompt = TokenSequence::text_only("q:");
        let d = DecodeConfig {
            max_new: 12,
            temperature: 1.0,
            seed: 5,
        };
        let a = generate(&cfg, &params, &prompt, &[], &d).unwrap();
        let b = generate(&cfg, &params, &prompt, &[], &d).unwrap();
        assert_eq!(a.new_ids, b.new_ids);
        let c = generate(
            &cfg,
            &params,
            &prompt,
            &[],
            &DecodeConfig { seed: 6, ..d },
        )
        .unwrap();
        // Different seed nearly always diverges on an untrained model.
        assert!(a.new_ids != c.new_ids || a.new_ids.len() <= 1);
    }

    #[test]
    fn max_new_zero_yields_empty() {
        let cfg = text_config();
        let params = Parameters::init(&cfg).unwrap();
        let prompt = TokenSequence::text_only("q:");
        let out = generate(
            &cfg,
            &params,
            &prompt,
            &[],
            &DecodeConfig {
                max_new: 0,
                temperature: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        assert!(out.text.is_empty());
        assert!(out.new_ids.is_empty());
    }

    #[test]
    fn sampling_logprobs_match_scoring() {
        let cfg = text_config();
        let params = Parameters::init(&cfg).unwrap();
        let prompt = TokenSequence::text_only("q:");
        let d = DecodeConfig {
            max_new: 10,
            temperature: 0.8,
            seed: 3,
        };
        let out = generate(&cfg, &params, &prompt, &[], &d).unwrap();
        assert!(!out.new_ids.is_empty());
        let mut seq = prompt.clone();
        let start = seq.len();
        seq.ids.extend_from_slice(&out.new_ids);
        let scored =
            score_response(&cfg, &params, &seq, &[], (start, out.new_ids.len()), 0.8).unwrap();
        for (a, b) in out.logprobs.iter().zip(&scored) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn micro_config_generates() {
        // Vocab below the byte range still generates (ids just decode to "").
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let prompt = TokenSequence {
            ids: vec![tokenizer::BOS, 9, 10],
            img_region: None,
        };
        let out = generate(
            &cfg,
            &params,
            &prompt,
            &[],
            &DecodeConfig {
                max_new: 4,
                temperature: 1.0,
                seed: 1,
            },
        )
        .unwrap();
        assert!(out.new_ids.len() <= 4);
    }
}
