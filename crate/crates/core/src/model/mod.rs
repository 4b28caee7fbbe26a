//! The three-component model: vision encoder, projector, causal decoder.

pub mod config;
pub mod decode;
pub mod forward;
pub mod params;
pub mod tokenizer;

pub use config::{micro_config, ModelConfig};
pub use decode::{allowed_token, generate, score_response, DecodeConfig, GenOutput};
pub use forward::{encode_image, forward, loss_and_grads, project, BatchItem};
pub use params::Parameters;
pub use tokenizer::TokenSequence;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::RgbImage;
    use crate::tensor::Tensor;

    #[test]
    fn encode_image_shapes_and_finiteness() {
        let cfg = ModelConfig::default();
        let params = Parameters::init(&cfg).unwrap();
        let img = RgbImage::filled(32, [0, 0, 0]);
        let tokens = encode_image(&cfg, &params, &img).unwrap();
        assert_eq!(tokens.shape(), (16, 64));
        assert!(tokens.is_finite());
    }

    #[test]
    fn encode_image_rejects_wrong_size() {
        let cfg = ModelConfig::default();
        let params = Parameters::init(&cfg).unwrap();
        let img = RgbImage::filled(16, [0, 0, 0]);
        let err = encode_image(&cfg, &params, &img).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn encode_image_deterministic() {
        let cfg = ModelConfig::default();
        let params = Parameters::init(&cfg).unwrap();
        let mut img = RgbImage::filled(32, [10, 200, 60]);
        img.put(5, 9, [255, 0, 0]);
        let a = encode_image(&cfg, &params, &img).unwrap();
        let b = encode_image(&cfg, &params, &img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn project_preserves_token_count() {
        let cfg = ModelConfig::default();
        let params = Parameters::init(&cfg).unwrap();
        let vis = Tensor::zeros(16, 64);
        let out = project(&params, &vis).unwrap();
        assert_eq!(out.shape(), (16, 128));
    }

    #[test]
    fn project_matches_dense_oracle() {
        // Independent dense-math route: explicit loops against the stored
        // weights, compared to the graph path.
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let vis = Tensor::from_vec(
            cfg.patch_count(),
            cfg.vision_dim,
            (0..cfg.patch_count() * cfg.vision_dim)
                .map(|i| (i as f64 * 0.37).sin())
                .collect(),
        );
        let got = project(&params, &vis).unwrap();

        let w1 = params.get("proj.w1");
        let b1 = params.get("proj.b1");
        let w2 = params.get("proj.w2");
        let b2 = params.get("proj.b2");
        const C: f64 = 0.797_884_560_802_865_4;
        for r in 0..vis.rows {
            let mut h = vec![0.0; cfg.decoder_dim];
            for (j, hv) in h.iter_mut().enumerate() {
                let mut s = b1.data[j];
                for k in 0..cfg.vision_dim {
                    s += vis.at(r, k) * w1.at(k, j);
                }
                *hv = 0.5 * s * (1.0 + (C * (s + 0.044715 * s * s * s)).tanh());
            }
            for j in 0..cfg.decoder_dim {
                let mut s = b2.data[j];
                for (k, hv) in h.iter().enumerate() {
                    s += hv * w2.at(k, j);
                }
                assert!((got.at(r, j) - s).abs() < 1e-6, "row {r} col {j}");
            }
        }
    }

    #[test]
    fn causality_prefix_invariant_under_suffix_permutation() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let seq_a = TokenSequence {
            ids: vec![1, 9, 10, 11, 9, 10],
            img_region: None,
        };
        let seq_b = TokenSequence {
            ids: vec![1, 9, 10, 10, 9, 11],
            img_region: None,
        };
        let la = forward(&cfg, &params, &seq_a, &[]).unwrap();
        let lb = forward(&cfg, &params, &seq_b, &[]).unwrap();
        // Positions 0..=2 share a prefix; their logits must agree exactly.
        for t in 0..3 {
            for c in 0..cfg.vocab_size {
                assert_eq!(la.at(t, c), lb.at(t, c), "position {t}");
            }
        }
        assert!((0..cfg.vocab_size).any(|c| la.at(4, c) != lb.at(4, c)));
    }

    #[test]
    fn single_token_prompt_logits() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let seq = TokenSequence {
            ids: vec![1],
            img_region: None,
        };
        let l = forward(&cfg, &params, &seq, &[]).unwrap();
        assert_eq!(l.shape(), (1, cfg.vocab_size));
    }

    #[test]
    fn sequence_too_long_rejected() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let seq = TokenSequence {
            ids: vec![9; cfg.max_seq_len + 1],
            img_region: None,
        };
        assert!(matches!(
            forward(&cfg, &params, &seq, &[]),
            Err(crate::error::Error::SequenceTooLong { .. })
        ));
    }

    /// BOS + IMG placeholders + raw trailing ids; usable at micro vocab.
    fn raw_image_seq(img_tokens: usize, tail: &[u32]) -> TokenSequence {
        let mut ids = vec![1u32];
        ids.extend(std::iter::repeat(3).take(img_tokens));
        ids.extend_from_slice(tail);
        TokenSequence {
            ids,
            img_region: Some((1, img_tokens)),
        }
    }

    #[test]
    fn logits_finite_over_seeds() {
        let mut cfg = micro_config();
        for seed in 0..100 {
            cfg.seed = seed;
            let params = Parameters::init(&cfg).unwrap();
            let img = RgbImage::filled(cfg.image_size, [seed as u8, 128, 7]);
            let seq = raw_image_seq(cfg.patch_count(), &[9, 10, 2]);
            let l = forward(&cfg, &params, &seq, &[img.clone()]).unwrap();
            assert!(l.is_finite(), "seed {seed}");
        }
    }

    #[test]
    fn multi_image_splice() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let imgs = vec![
            RgbImage::filled(cfg.image_size, [255, 0, 0]),
            RgbImage::filled(cfg.image_size, [0, 0, 255]),
        ];
        let seq = raw_image_seq(2 * cfg.patch_count(), &[9]);
        let l = forward(&cfg, &params, &seq, &imgs).unwrap();
        assert_eq!(l.rows, seq.len());
        // Region length must match the image count.
        let bad = raw_image_seq(cfg.patch_count(), &[9]);
        assert!(forward(&cfg, &params, &bad, &imgs).is_err());
    }

    #[test]
    fn empty_batch_is_an_error() {
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        assert!(loss_and_grads(&cfg, &params, &[]).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        // Zeroing the head weight and bias leaves logits exactly uniform, so
        // the per-token loss must be ln(vocab).
        let cfg = micro_config();
        let mut params = Parameters::init(&cfg).unwrap();
        let head_w = params.idx("dec.head.w");
        let head_b = params.idx("dec.head.b");
        for t in [head_w, head_b] {
            for v in params.tensors_mut()[t].data.iter_mut() {
                *v = 0.0;
            }
        }
        let seq = TokenSequence {
            ids: vec![1, 9, 10, 11, 9, 2],
            img_region: None,
        };
        let item = BatchItem {
            seq,
            images: vec![],
            target_span: (3, 3),
        };
        let (loss, _, tokens) = loss_and_grads(&cfg, &params, &[item]).unwrap();
        assert_eq!(tokens, 3);
        assert!((loss - (cfg.vocab_size as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_approaches_zero_when_target_dominates() {
        // Push the head bias toward a one-hot on the target tokens: loss -> 0.
        let cfg = micro_config();
        let mut params = Parameters::init(&cfg).unwrap();
        let seq = TokenSequence {
            ids: vec![1, 9, 9, 9],
            img_region: None,
        };
        let head_w = params.idx("dec.head.w");
        let head_b = params.idx("dec.head.b");
        for v in params.tensors_mut()[head_w].data.iter_mut() {
            *v = 0.0;
        }
        for v in params.tensors_mut()[head_b].data.iter_mut() {
            *v = 0.0;
        }
        params.tensors_mut()[head_b].data[9] = 60.0;
        let item = BatchItem {
            seq,
            images: vec![],
            target_span: (1, 3),
        };
        let (loss, _, _) = loss_and_grads(&cfg, &params, &[item]).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn loss_excludes_prompt_positions() {
        // Two sequences differing only in a masked target position give the
        // same loss; changing a token inside the span changes it.
        let cfg = micro_config();
        let params = Parameters::init(&cfg).unwrap();
        let mk = |ids: Vec<u32>, span: (usize, usize)| BatchItem {
            seq: TokenSequence {
                ids,
                img_region: None,
            },
            images: vec![],
            target_span: span,
        };
        let (a, _, _) =
            loss_and_grads(&cfg, &params, &[mk(vec![1, 9, 10, 11], (3, 1))]).unwrap();
        let (b, _, _) =
            loss_and_grads(&cfg, &params, &[mk(vec![1, 9, 10, 11], (2, 2))]).unwrap();
        assert_ne!(a, b);
        // Span (3,1) only scores position 3; prompt token at index 1 matters
        // for conditioning but its prediction is excluded.
        let (c, _, _) =
            loss_and_grads(&cfg, &params, &[mk(vec![1, 9, 10, 11], (3, 1))]).unwrap();
        assert_eq!(a, c);
    }
}
