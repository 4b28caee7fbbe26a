//! Graph construction for the three-component model and the batched
//! training objective.
//!
//! Layout: image -> non-overlapping patches -> linear patch embedding ->
//! bidirectional transformer blocks (vision tower); a two-layer perceptron
//! lifts visual tokens into the decoder width; the decoder embeds the token
//! sequence, splices projected visual tokens over the IMG placeholder run,
//! and applies causal pre-norm transformer blocks followed by a vocabulary
//! head. Everything runs in f64.

use super::config::ModelConfig;
use super::params::Parameters;
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::img::RgbImage;
use crate::par;
use crate::tensor::Tensor;

/// One supervised example: a full sequence (prompt + response), its images,
/// and the token span the loss covers.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub seq: TokenSequence,
    pub images: Vec<RgbImage>,
    /// (start, len) of response tokens inside `seq`, EOS included.
    pub target_span: (usize, usize),
}

/// Flattens an image into (patch_count, patch_dim) rows, scanning patches
/// row-major and pixels row-major within each patch, channels interleaved.
pub fn patchify(cfg: &ModelConfig, image: &RgbImage) -> Result<Tensor> {
    if image.size != cfg.image_size {
        return Err(Error::Config(format!(
            "image size {} does not match configured {}",
            image.size, cfg.image_size
        )));
    }
    let ps = cfg.patch_size;
    let side = cfg.patches_per_side();
    let mut out = Tensor::zeros(cfg.patch_count(), cfg.patch_dim());
    let norm = image.to_f64();
    for py in 0..side {
        for px in 0..side {
            let row = py * side + px;
            let mut k = 0;
            for dy in 0..ps {
                for dx in 0..ps {
                    let x = px * ps + dx;
                    let y = py * ps + dy;
                    let base = (y * image.size + x) * 3;
                    for c in 0..3 {
                        *out.at_mut(row, k) = norm[base + c];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn attention(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    x: Var,
    heads: usize,
    causal: bool,
) -> Var {
    let dim = g.val(x).cols;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let wq = g.param(params.idx(&format!("{prefix}.attn.wq")));
    let wk = g.param(params.idx(&format!("{prefix}.attn.wk")));
    let wv = g.param(params.idx(&format!("{prefix}.attn.wv")));
    let wo = g.param(params.idx(&format!("{prefix}.attn.wo")));
    let bq = g.param(params.idx(&format!("{prefix}.attn.bq")));
    let bk = g.param(params.idx(&format!("{prefix}.attn.bk")));
    let bv = g.param(params.idx(&format!("{prefix}.attn.bv")));
    let bo = g.param(params.idx(&format!("{prefix}.attn.bo")));
    let q = g.matmul(x, wq);
    let q = g.add_row(q, bq);
    let k = g.matmul(x, wk);
    let k = g.add_row(k, bk);
    let v = g.matmul(x, wv);
    let v = g.add_row(v, bv);
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, scale);
        let probs = if causal {
            g.causal_softmax_rows(scores)
        } else {
            g.softmax_rows(scores)
        };
        ctx.push(g.matmul(probs, vh));
    }
    let joined = g.concat_cols(&ctx);
    let out = g.matmul(joined, wo);
    g.add_row(out, bo)
}

fn mlp(g: &mut Graph, params: &Parameters, prefix: &str, x: Var) -> Var {
    let w1 = g.param(params.idx(&format!("{prefix}.mlp.w1")));
    let b1 = g.param(params.idx(&format!("{prefix}.mlp.b1")));
    let w2 = g.param(params.idx(&format!("{prefix}.mlp.w2")));
    let b2 = g.param(params.idx(&format!("{prefix}.mlp.b2")));
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let out = g.matmul(h, w2);
    g.add_row(out, b2)
}

fn layer_norm(g: &mut Graph, params: &Parameters, name: &str, x: Var) -> Var {
    let gamma = g.param(params.idx(&format!("{name}.g")));
    let beta = g.param(params.idx(&format!("{name}.b")));
    g.layer_norm(x, gamma, beta)
}

fn transformer_block(
    g: &mut Graph,
    params: &Parameters,
    prefix: &str,
    x: Var,
    heads: usize,
    causal: bool,
) -> Var {
    let normed = layer_norm(g, params, &format!("{prefix}.ln1"), x);
    let att = attention(g, params, prefix, normed, heads, causal);
    let x = g.add(x, att);
    let normed = layer_norm(g, params, &format!("{prefix}.ln2"), x);
    let ff = mlp(g, params, prefix, normed);
    g.add(x, ff)
}

/// Vision tower: patches -> (patch_count, vision_dim) visual tokens.
pub fn encode_image_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &Parameters,
    image: &RgbImage,
) -> Result<Var> {
    let patches = patchify(cfg, image)?;
    let p = g.input(patches);
    let w = g.param(params.idx("vision.patch_embed.w"));
    let b = g.param(params.idx("vision.patch_embed.b"));
    let x = g.matmul(p, w);
    let x = g.add_row(x, b);
    let pos = g.param(params.idx("vision.pos"));
    let mut x = g.add(x, pos);
    for i in 0..cfg.vision_layers {
        x = transformer_block(g, params, &format!("vision.l{i}"), x, cfg.heads, false);
    }
    Ok(layer_norm(g, params, "vision.ln_out", x))
}

/// Perceptron projector: (P, vision_dim) -> (P, decoder_dim).
pub fn project_graph(g: &mut Graph, params: &Parameters, visual: Var) -> Var {
    let w1 = g.param(params.idx("proj.w1"));
    let b1 = g.param(params.idx("proj.b1"));
    let w2 = g.param(params.idx("proj.w2"));
    let b2 = g.param(params.idx("proj.b2"));
    let h = g.matmul(visual, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let out = g.matmul(h, w2);
    g.add_row(out, b2)
}

/// Full decoder pass producing (T, vocab) logits.
pub fn sequence_logits_graph(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &Parameters,
    seq: &TokenSequence,
    images: &[RgbImage],
) -> Result<Var> {
    seq.validate(cfg.vocab_size, cfg.max_seq_len)?;
    let expected_img_tokens = images.len() * cfg.patch_count();
    match seq.img_region {
        None if images.is_empty() => {}
        None => {
            return Err(Error::Argument(
                "images supplied but sequence has no IMG region".into(),
            ))
        }
        Some((_, len)) => {
            if len != expected_img_tokens {
                return Err(Error::Argument(format!(
                    "IMG region holds {len} tokens but {} image(s) produce {expected_img_tokens}",
                    images.len()
                )));
            }
        }
    }

    let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
    let tok_emb = g.param(params.idx("dec.tok_emb"));
    let mut x = g.gather_rows(tok_emb, &ids);

    if let Some((start, _)) = seq.img_region {
        let mut projected = Vec::with_capacity(images.len());
        for image in images {
            let vis = encode_image_graph(g, cfg, params, image)?;
            projected.push(project_graph(g, params, vis));
        }
        let joined = if projected.len() == 1 {
            projected[0]
        } else {
            g.concat_rows(&projected)
        };
        x = g.splice_rows(x, joined, start);
    }

    let pos_full = g.param(params.idx("dec.pos"));
    let pos = g.slice_rows(pos_full, 0, ids.len());
    let mut x = g.add(x, pos);
    for i in 0..cfg.decoder_layers {
        x = transformer_block(g, params, &format!("dec.l{i}"), x, cfg.heads, true);
    }
    let x = layer_norm(g, params, "dec.ln_out", x);
    let hw = g.param(params.idx("dec.head.w"));
    let hb = g.param(params.idx("dec.head.b"));
    let logits = g.matmul(x, hw);
    Ok(g.add_row(logits, hb))
}

/// Forward-only image encoding; returns (patch_count, vision_dim).
pub fn encode_image(cfg: &ModelConfig, params: &Parameters, image: &RgbImage) -> Result<Tensor> {
    let mut g = Graph::new(params.tensors());
    let v = encode_image_graph(&mut g, cfg, params, image)?;
    Ok(g.val(v).clone())
}

/// Forward-only projection of visual tokens.
pub fn project(params: &Parameters, visual: &Tensor) -> Result<Tensor> {
    if visual.cols != params.config().vision_dim {
        return Err(Error::Argument(format!(
            "visual tokens have width {}, expected vision_dim {}",
            visual.cols,
            params.config().vision_dim
        )));
    }
    let mut g = Graph::new(params.tensors());
    let v = g.input(visual.clone());
    let out = project_graph(&mut g, params, v);
    Ok(g.val(out).clone())
}

/// Forward-only logits for a sequence.
pub fn forward(
    cfg: &ModelConfig,
    params: &Parameters,
    seq: &TokenSequence,
    images: &[RgbImage],
) -> Result<Tensor> {
    let mut g = Graph::new(params.tensors());
    let v = sequence_logits_graph(&mut g, cfg, params, seq, images)?;
    Ok(g.val(v).clone())
}

fn item_loss(cfg: &ModelConfig, params: &Parameters, item: &BatchItem) -> Result<(f64, Vec<Option<Tensor>>, usize)> {
    let (start, len) = item.target_span;
    let t = item.seq.len();
    if len == 0 || start == 0 || start + len > t {
        return Err(Error::Argument(format!(
            "target span ({start},{len}) outside sequence of length {t}"
        )));
    }
    let mut g = Graph::new(params.tensors());
    let logits = sequence_logits_graph(&mut g, cfg, params, &item.seq, &item.images)?;
    // Row t predicts token t+1; mask selects rows whose next token is in span.
    let mut targets = vec![0usize; t];
    let mut mask = vec![0.0; t];
    for row in 0..t - 1 {
        targets[row] = item.seq.ids[row + 1] as usize;
        if row + 1 >= start && row + 1 < start + len {
            mask[row] = 1.0;
        }
    }
    let loss = g.mean_masked_ce(logits, &targets, &mask);
    let value = g.val(loss).data[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss = {value}")));
    }
    let grads = g.backward(loss);
    Ok((value, grads, len))
}

/// Mean next-token cross-entropy over response spans with gradients.
///
/// Per-sample losses are token-mean; the batch recombines them into a global
/// per-token mean, so the returned gradient matches `loss`. Also returns the
/// number of loss tokens for budget accounting. Samples are processed in
/// parallel and reduced in index order, keeping results bit-stable.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &Parameters,
    batch: &[BatchItem],
) -> Result<(f64, Vec<Tensor>, usize)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let results = par::map_slice(batch, |item| item_loss(cfg, params, item));
    let mut per_item = Vec::with_capacity(results.len());
    for r in results {
        per_item.push(r?);
    }
    let total_tokens: usize = per_item.iter().map(|(_, _, n)| *n).sum();
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.rows, t.cols))
        .collect();
    for (value, item_grads, n) in per_item {
        let w = n as f64 / total_tokens as f64;
        loss += w * value;
        for (slot, g) in grads.iter_mut().zip(item_grads) {
            if let Some(g) = g {
                slot.axpy(w, &g);
            }
        }
    }
    Ok((loss, grads, total_tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::micro_config;

    /// Full-model analytic gradient vs central finite differences on the
    /// sub-1k-parameter config, image path included.
    #[test]
    fn batch_gradients_match_finite_differences() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let mut img = RgbImage::filled(cfg.image_size, [30, 60, 90]);
        img.put(1, 2, [250, 10, 120]);
        let seq_img = TokenSequence {
            ids: vec![1, 3, 9, 10, 11, 2],
            img_region: Some((1, 1)),
        };
        let seq_txt = TokenSequence {
            ids: vec![1, 10, 9, 11, 9, 2],
            img_region: None,
        };
        let batch = vec![
            BatchItem {
                seq: seq_img,
                images: vec![img],
                target_span: (3, 3),
            },
            BatchItem {
                seq: seq_txt,
                images: vec![],
                target_span: (2, 4),
            },
        ];

        let (_, grads, _) = loss_and_grads(&cfg, &params, &batch).unwrap();

        let eps = 1e-5;
        let mut work = params.clone();
        let mut checked = 0usize;
        let mut max_rel = 0.0f64;
        for pi in 0..params.len() {
            for k in 0..params.tensors()[pi].len() {
                let orig = params.tensors()[pi].data[k];
                work.tensors_mut()[pi].data[k] = orig + eps;
                let (up, _, _) = loss_and_grads(&cfg, &work, &batch).unwrap();
                work.tensors_mut()[pi].data[k] = orig - eps;
                let (down, _, _) = loss_and_grads(&cfg, &work, &batch).unwrap();
                work.tensors_mut()[pi].data[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads[pi].data[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                let rel = (numeric - analytic).abs() / denom;
                max_rel = max_rel.max(rel);
                assert!(
                    rel < 1e-4,
                    "param {} [{k}]: analytic {analytic} vs numeric {numeric}",
                    params.names()[pi]
                );
                checked += 1;
            }
        }
        assert!(checked <= 1000, "micro config grew past 1k params");
        assert!(max_rel < 1e-4);
    }
}
