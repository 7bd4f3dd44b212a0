//! Model persistence. The file layout is documented in FORMAT.md: magic,
//! version, the fixed-order config fields, every transform parameter in
//! canonical visit order, then per-stage codebook state. All multi-byte
//! values are little-endian; save/load round-trips are byte-identical.

use std::fs;
use std::path::Path;

use crate::rvq::{Codebook, RvqStack};

use super::{Model, ModelConfig, ModelError, ModelResult};

pub const MODEL_MAGIC: &[u8; 7] = b"PGICMDL";
pub const MODEL_VERSION: u8 = 1;

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, vs: &[f32]) {
        self.bytes.reserve(vs.len() * 4);
        for &v in vs {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> ModelResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::TruncatedFile);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> ModelResult<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn f32(&mut self) -> ModelResult<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn f32_vec(&mut self, n: usize) -> ModelResult<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn write_config(w: &mut Writer, cfg: &ModelConfig) {
    w.u32(cfg.c1);
    w.u32(cfg.c2);
    w.u32(cfg.m_enc);
    w.u32(cfg.m_dec);
    w.u32(cfg.n_stages);
    w.u32(cfg.l_bits);
    w.u32(cfg.ffn_expansion);
    w.u32(cfg.unshuffle_factor);
    w.u32(cfg.total_downsample);
    w.f32(cfg.p_weight);
    w.f32(cfg.lr);
    w.f32(cfg.beta1);
    w.f32(cfg.beta2);
    w.u32(cfg.batch);
    w.u32(cfg.crop);
}

fn read_config(r: &mut Reader) -> ModelResult<ModelConfig> {
    Ok(ModelConfig {
        c1: r.u32()?,
        c2: r.u32()?,
        m_enc: r.u32()?,
        m_dec: r.u32()?,
        n_stages: r.u32()?,
        l_bits: r.u32()?,
        ffn_expansion: r.u32()?,
        unshuffle_factor: r.u32()?,
        total_downsample: r.u32()?,
        p_weight: r.f32()?,
        lr: r.f32()?,
        beta1: r.f32()?,
        beta2: r.f32()?,
        batch: r.u32()?,
        crop: r.u32()?,
    })
}

/// Serialize model plus codebook stack to bytes.
pub fn model_to_bytes(model: &Model, stack: &RvqStack) -> ModelResult<Vec<u8>> {
    if stack.stages() != model.config.n_stages as usize
        || stack.dim() != model.config.c2 as usize
        || stack.codebook_size() != model.config.codebook_size()
    {
        return Err(ModelError::FileInconsistent(
            "stack does not match the model config".into(),
        ));
    }
    let mut w = Writer {
        bytes: Vec::with_capacity(64 + model.param_count() * 4),
    };
    w.bytes.extend_from_slice(MODEL_MAGIC);
    w.bytes.push(MODEL_VERSION);
    write_config(&mut w, &model.config);
    model.visit_params(&mut |p| w.f32_slice(p.value.data()));
    for s in 0..stack.stages() {
        let cb = stack.codebook(s);
        w.f32_slice(cb.vectors());
        w.f32_slice(cb.ema_counts());
        w.f32_slice(cb.ema_sums());
    }
    Ok(w.bytes)
}

/// Rebuild model and stack from bytes produced by `model_to_bytes`.
pub fn model_from_bytes(bytes: &[u8]) -> ModelResult<(Model, RvqStack)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(7)? != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.take(1)?[0];
    if version != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let config = read_config(&mut r)?;
    config.validate()?;

    // Build the skeleton, then overwrite every parameter in visit order.
    let mut model = Model::init(config, 0)?;
    let mut failure: Option<ModelError> = None;
    model.visit_params_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        match r.f32_vec(p.value.numel()) {
            Ok(data) => p.value.data_mut().copy_from_slice(&data),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let k = config.codebook_size();
    let d = config.c2 as usize;
    let mut books = Vec::with_capacity(config.n_stages as usize);
    for _ in 0..config.n_stages {
        let vectors = r.f32_vec(k * d)?;
        let counts = r.f32_vec(k)?;
        let sums = r.f32_vec(k * d)?;
        books.push(Codebook::from_parts(k, d, vectors, counts, sums)?);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::FileInconsistent(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((model, RvqStack::new(books)?))
}

pub fn save_model(model: &Model, stack: &RvqStack, path: impl AsRef<Path>) -> ModelResult<()> {
    let bytes = model_to_bytes(model, stack)?;
    fs::write(path, bytes).map_err(|e| ModelError::Io(e.to_string()))
}

pub fn load_model(path: impl AsRef<Path>) -> ModelResult<(Model, RvqStack)> {
    let bytes = fs::read(path).map_err(|e| ModelError::Io(e.to_string()))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::transform::tiny_test_config;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn tiny_pair(seed: u64) -> (Model, RvqStack) {
        let cfg = tiny_test_config();
        let model = Model::init(cfg, seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xABCD);
        let k = cfg.codebook_size();
        let d = cfg.c2 as usize;
        let books = (0..cfg.n_stages as usize)
            .map(|_| {
                Codebook::new(k, d, (0..k * d).map(|_| rng.random::<f32>()).collect()).unwrap()
            })
            .collect();
        (model, RvqStack::new(books).unwrap())
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (model, stack) = tiny_pair(7);
        let a = model_to_bytes(&model, &stack).unwrap();
        let (m2, s2) = model_from_bytes(&a).unwrap();
        let b = model_to_bytes(&m2, &s2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loaded_model_encodes_identically() {
        let (model, stack) = tiny_pair(9);
        let bytes = model_to_bytes(&model, &stack).unwrap();
        let (m2, s2) = model_from_bytes(&bytes).unwrap();
        let img = {
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            crate::tensor::Tensor::new(
                vec![3, 8, 8],
                (0..192).map(|_| rng.random::<f32>()).collect(),
            )
            .unwrap()
        };
        let a = crate::model::encode_to_stream_bytes(&model, &stack, &img, 3).unwrap();
        let b = crate::model::encode_to_stream_bytes(&m2, &s2, &img, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tampered_magic_is_distinct_error() {
        let (model, stack) = tiny_pair(13);
        let mut bytes = model_to_bytes(&model, &stack).unwrap();
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(ModelError::BadMagic)));
    }

    #[test]
    fn bad_version_and_truncation_are_detected() {
        let (model, stack) = tiny_pair(15);
        let good = model_to_bytes(&model, &stack).unwrap();

        let mut bad_version = good.clone();
        bad_version[7] = 42;
        assert!(matches!(
            model_from_bytes(&bad_version),
            Err(ModelError::UnsupportedVersion(42))
        ));

        let truncated = &good[..good.len() - 5];
        assert!(matches!(
            model_from_bytes(truncated),
            Err(ModelError::TruncatedFile)
        ));

        let mut extended = good.clone();
        extended.push(0);
        assert!(matches!(
            model_from_bytes(&extended),
            Err(ModelError::FileInconsistent(_))
        ));
    }

    #[test]
    fn file_roundtrip_through_disk() {
        let (model, stack) = tiny_pair(17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgicmdl");
        save_model(&model, &stack, &path).unwrap();
        let (m2, s2) = load_model(&path).unwrap();
        let again = dir.path().join("m2.pgicmdl");
        save_model(&m2, &s2, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }
}
