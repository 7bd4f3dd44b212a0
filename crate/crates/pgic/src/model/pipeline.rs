//! Image-level orchestration: padding, full encode to a PGIC stream, and
//! staged decoding back to pixels.

use crate::bitstream::{self, BitstreamHeader};
use crate::metrics;
use crate::rvq::RvqStack;
use crate::tensor::{Tape, Tensor};

use super::{Model, ModelError, ModelResult};

/// Replicate-pad the right and bottom edges to the next multiples of `f`.
/// Returns the padded tensor and the original (width, height).
pub fn pad_to_multiple(x: &Tensor, f: usize) -> ModelResult<(Tensor, (usize, usize))> {
    let (c, h, w) = x.dims3("pad_to_multiple")?;
    let ph = h.div_ceil(f) * f;
    let pw = w.div_ceil(f) * f;
    if ph == h && pw == w {
        return Ok((x.clone(), (w, h)));
    }
    let src = x.data();
    let mut data = vec![0.0f32; c * ph * pw];
    for ci in 0..c {
        for y in 0..ph {
            let sy = y.min(h - 1);
            for xx in 0..pw {
                let sx = xx.min(w - 1);
                data[ci * ph * pw + y * pw + xx] = src[ci * h * w + sy * w + sx];
            }
        }
    }
    Ok((Tensor::new(vec![c, ph, pw], data)?, (w, h)))
}

/// Undo `pad_to_multiple`: crop back to the original width and height.
pub fn crop_to_original(x: &Tensor, orig_w: usize, orig_h: usize) -> ModelResult<Tensor> {
    let (c, h, w) = x.dims3("crop_to_original")?;
    if orig_h == h && orig_w == w {
        return Ok(x.clone());
    }
    assert!(orig_h <= h && orig_w <= w, "crop cannot grow the image");
    let src = x.data();
    let mut data = vec![0.0f32; c * orig_h * orig_w];
    for ci in 0..c {
        for y in 0..orig_h {
            let row = &src[ci * h * w + y * w..ci * h * w + y * w + orig_w];
            data[ci * orig_h * orig_w + y * orig_w..ci * orig_h * orig_w + (y + 1) * orig_w]
                .copy_from_slice(row);
        }
    }
    Ok(Tensor::new(vec![c, orig_h, orig_w], data)?)
}

/// Encode an image tensor (3xHxW, [0, 1]) into a complete PGIC stream with
/// the requested number of stages.
pub fn encode_to_stream_bytes(
    model: &Model,
    stack: &RvqStack,
    image: &Tensor,
    stages: usize,
) -> ModelResult<Vec<u8>> {
    let cfg = &model.config;
    let n = cfg.n_stages as usize;
    if stages == 0 || stages > n {
        return Err(ModelError::StageOutOfRange { stage: stages, n });
    }
    let f = cfg.total_downsample as usize;
    let (padded, (orig_w, orig_h)) = pad_to_multiple(image, f)?;
    let mut tape = Tape::new();
    let xt = tape.constant(padded);
    let y = model.analysis_forward(&mut tape, xt)?;
    let encoding = stack.encode(tape.value(y), stages)?;
    let header = BitstreamHeader {
        orig_width: orig_w as u16,
        orig_height: orig_h as u16,
        n_total: cfg.n_stages as u8,
        l_bits: cfg.l_bits as u8,
        downsample_f: cfg.total_downsample as u8,
        stages_present: stages as u8,
    };
    bitstream::serialize(&header, &encoding.indices)
        .map_err(|e| ModelError::Io(format!("serialize: {e}")))
}

/// Decode a stream with up to `max_stages` of the stages it carries.
/// Returns the image tensor and the stage count actually used.
pub fn decode_stream_bytes(
    model: &Model,
    stack: &RvqStack,
    bytes: &[u8],
    max_stages: Option<usize>,
) -> ModelResult<(Tensor, usize)> {
    let decoded =
        bitstream::deserialize(bytes).map_err(|e| ModelError::Io(format!("deserialize: {e}")))?;
    let available = decoded.stages.len();
    let use_stages = max_stages.map_or(available, |k| k.min(available)).max(1);
    let y_hat = stack.decode(&decoded.stages[..use_stages])?;
    let mut tape = Tape::new();
    let yt = tape.constant(y_hat);
    let out = model.synthesis_forward(&mut tape, yt, use_stages)?;
    let cropped = crop_to_original(
        tape.value(out),
        decoded.header.orig_width as usize,
        decoded.header.orig_height as usize,
    )?;
    Ok((cropped, use_stages))
}

/// Reconstructions of one image at every stage 1..=n, plus per-stage MSE
/// against the original. Used for previews and evaluation.
pub fn stage_reconstructions(
    model: &Model,
    stack: &RvqStack,
    image: &Tensor,
) -> ModelResult<Vec<(Tensor, f64)>> {
    let cfg = &model.config;
    let n = cfg.n_stages as usize;
    let f = cfg.total_downsample as usize;
    let (padded, (orig_w, orig_h)) = pad_to_multiple(image, f)?;
    let mut tape = Tape::new();
    let xt = tape.constant(padded);
    let y = model.analysis_forward(&mut tape, xt)?;
    let encoding = stack.encode(tape.value(y), n)?;
    let partials = stack.partial_reconstructions(&encoding.indices)?;
    let mut out = Vec::with_capacity(n);
    for (i, partial) in partials.into_iter().enumerate() {
        let mut stage_tape = Tape::new();
        let yt = stage_tape.constant(partial);
        let xhat = model.synthesis_forward(&mut stage_tape, yt, i + 1)?;
        let cropped = crop_to_original(stage_tape.value(xhat), orig_w, orig_h)?;
        let err = metrics::mse(image, &cropped);
        out.push((cropped, err));
    }
    Ok(out)
}

/// Mean per-stage MSE over an evaluation set.
pub fn eval_stage_mse(
    model: &Model,
    stack: &RvqStack,
    images: &[Tensor],
) -> ModelResult<Vec<f64>> {
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n = model.config.n_stages as usize;
    let mut sums = vec![0.0f64; n];
    for img in images {
        for (i, (_, err)) in stage_reconstructions(model, stack, img)?.iter().enumerate() {
            sums[i] += err;
        }
    }
    for s in sums.iter_mut() {
        *s /= images.len() as f64;
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transform::tiny_test_config;
    use crate::rvq::Codebook;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn tiny_stack(seed: u64, n: usize, k: usize, d: usize) -> RvqStack {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        RvqStack::new(
            (0..n)
                .map(|_| {
                    Codebook::new(
                        k,
                        d,
                        (0..k * d).map(|_| rng.random::<f32>() - 0.5).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Tensor::new(
            vec![3, h, w],
            (0..3 * h * w).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn aligned_image_pads_to_itself() {
        let x = random_image(1, 8, 8);
        let (p, (w, h)) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p, x);
        assert_eq!((w, h), (8, 8));
        let c = crop_to_original(&p, 8, 8).unwrap();
        assert_eq!(c, x);
    }

    #[test]
    fn five_by_seven_pads_to_eight() {
        let x = random_image(2, 5, 7);
        let (p, (w, h)) = pad_to_multiple(&x, 4).unwrap();
        assert_eq!(p.shape(), &[3, 8, 8]);
        assert_eq!((w, h), (7, 5));
        // Replicated edge: padded row 5..8 equals row 4.
        let d = p.data();
        for c in 0..3 {
            for y in 5..8 {
                for xx in 0..7 {
                    assert_eq!(d[c * 64 + y * 8 + xx], d[c * 64 + 4 * 8 + xx]);
                }
            }
            for y in 0..8 {
                assert_eq!(d[c * 64 + y * 8 + 7], d[c * 64 + y * 8 + 6]);
            }
        }
        let back = crop_to_original(&p, 7, 5).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn crop_of_pad_is_identity_for_random_sizes() {
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        for _ in 0..12 {
            let h = rng.random_range(1..=20);
            let w = rng.random_range(1..=20);
            let f = [2usize, 4, 8][rng.random_range(0..3)];
            let x = random_image(rng.random(), h, w);
            let (p, (ow, oh)) = pad_to_multiple(&x, f).unwrap();
            assert_eq!(p.shape()[1] % f, 0);
            assert_eq!(p.shape()[2] % f, 0);
            assert_eq!(crop_to_original(&p, ow, oh).unwrap(), x);
        }
    }

    #[test]
    fn encode_decode_roundtrip_shapes() {
        let cfg = tiny_test_config();
        let model = Model::init(cfg, 3).unwrap();
        let stack = tiny_stack(4, 3, 16, 4);
        let img = random_image(5, 10, 13);
        let bytes = encode_to_stream_bytes(&model, &stack, &img, 3).unwrap();
        let (out, used) = decode_stream_bytes(&model, &stack, &bytes, None).unwrap();
        assert_eq!(used, 3);
        assert_eq!(out.shape(), &[3, 10, 13]);
        let (out1, used1) = decode_stream_bytes(&model, &stack, &bytes, Some(1)).unwrap();
        assert_eq!(used1, 1);
        assert_eq!(out1.shape(), &[3, 10, 13]);
    }

    #[test]
    fn stage_reconstruction_count_matches_n() {
        let cfg = tiny_test_config();
        let model = Model::init(cfg, 3).unwrap();
        let stack = tiny_stack(4, 3, 16, 4);
        let img = random_image(6, 8, 8);
        let recs = stage_reconstructions(&model, &stack, &img).unwrap();
        assert_eq!(recs.len(), 3);
        for (t, e) in &recs {
            assert_eq!(t.shape(), &[3, 8, 8]);
            assert!(e.is_finite());
        }
    }
}
