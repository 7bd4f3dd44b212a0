//! One learned table of K = 2^L codewords with EMA training state.

use rand::Rng;

use super::{RvqError, RvqResult};

/// Floor for EMA counts when normalizing codewords, so division stays finite.
pub const EPS_COUNT: f32 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    /// K*D row-major codeword matrix.
    vectors: Vec<f32>,
    ema_counts: Vec<f32>,
    ema_sums: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, vectors: Vec<f32>) -> RvqResult<Self> {
        if !k.is_power_of_two() {
            return Err(RvqError::NotPowerOfTwo { k });
        }
        if vectors.len() != k * dim {
            return Err(RvqError::DimensionMismatch {
                expected: k * dim,
                got: vectors.len(),
            });
        }
        Ok(Codebook {
            k,
            dim,
            ema_counts: vec![0.0; k],
            ema_sums: vectors.clone(),
            vectors,
        })
    }

    pub(super) fn with_state(
        k: usize,
        dim: usize,
        vectors: Vec<f32>,
        ema_counts: Vec<f32>,
        ema_sums: Vec<f32>,
    ) -> RvqResult<Self> {
        let mut cb = Codebook::new(k, dim, vectors)?;
        if ema_counts.len() != k || ema_sums.len() != k * dim {
            return Err(RvqError::DimensionMismatch {
                expected: k * dim,
                got: ema_sums.len(),
            });
        }
        cb.ema_counts = ema_counts;
        cb.ema_sums = ema_sums;
        Ok(cb)
    }

    /// Rebuild from raw parts (model file loading).
    pub fn from_parts(
        k: usize,
        dim: usize,
        vectors: Vec<f32>,
        ema_counts: Vec<f32>,
        ema_sums: Vec<f32>,
    ) -> RvqResult<Self> {
        Codebook::with_state(k, dim, vectors, ema_counts, ema_sums)
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, j: usize) -> &[f32] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn ema_counts(&self) -> &[f32] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &[f32] {
        &self.ema_sums
    }

    /// Index and codeword minimizing squared Euclidean distance to `v`.
    /// Ties break toward the lowest index; summation order is fixed so the
    /// winning index is identical on every platform.
    pub fn nearest(&self, v: &[f32]) -> RvqResult<(usize, &[f32])> {
        if v.len() != self.dim {
            return Err(RvqError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut best = f32::INFINITY;
        let mut best_idx = 0usize;
        for j in 0..self.k {
            let cw = &self.vectors[j * self.dim..(j + 1) * self.dim];
            let mut acc = 0.0f32;
            for i in 0..self.dim {
                let d = v[i] - cw[i];
                acc += d * d;
                if acc > best {
                    break;
                }
            }
            if acc < best {
                best = acc;
                best_idx = j;
            }
        }
        Ok((best_idx, self.codeword(best_idx)))
    }

    /// EMA update from one batch of (index, vector) assignments.
    pub fn ema_update(&mut self, assigned: &[(usize, &[f32])], decay: f32) -> RvqResult<()> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(RvqError::InvalidDecay { decay });
        }
        let mut batch_counts = vec![0.0f32; self.k];
        let mut batch_sums = vec![0.0f32; self.k * self.dim];
        for &(j, v) in assigned {
            if j >= self.k {
                return Err(RvqError::IndexOutOfRange { index: j, k: self.k });
            }
            if v.len() != self.dim {
                return Err(RvqError::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
            batch_counts[j] += 1.0;
            let row = &mut batch_sums[j * self.dim..(j + 1) * self.dim];
            for i in 0..self.dim {
                row[i] += v[i];
            }
        }
        for j in 0..self.k {
            self.ema_counts[j] = decay * self.ema_counts[j] + (1.0 - decay) * batch_counts[j];
            let sums = &mut self.ema_sums[j * self.dim..(j + 1) * self.dim];
            let batch = &batch_sums[j * self.dim..(j + 1) * self.dim];
            for i in 0..self.dim {
                sums[i] = decay * sums[i] + (1.0 - decay) * batch[i];
            }
            let denom = self.ema_counts[j].max(EPS_COUNT);
            let vecs = &mut self.vectors[j * self.dim..(j + 1) * self.dim];
            for i in 0..self.dim {
                vecs[i] = sums[i] / denom;
            }
        }
        Ok(())
    }

    /// Replace codewords whose EMA count fell below `usage_threshold` with
    /// random rows of `samples`; returns how many were reseeded.
    pub fn reseed_dead(
        &mut self,
        samples: &[Vec<f32>],
        usage_threshold: f32,
        rng: &mut impl Rng,
    ) -> RvqResult<usize> {
        if samples.is_empty() {
            return Err(RvqError::EmptySamples);
        }
        let mut reseeded = 0;
        for j in 0..self.k {
            if self.ema_counts[j] < usage_threshold {
                let pick = &samples[rng.random_range(0..samples.len())];
                if pick.len() != self.dim {
                    return Err(RvqError::DimensionMismatch {
                        expected: self.dim,
                        got: pick.len(),
                    });
                }
                self.vectors[j * self.dim..(j + 1) * self.dim].copy_from_slice(pick);
                self.ema_sums[j * self.dim..(j + 1) * self.dim].copy_from_slice(pick);
                self.ema_counts[j] = 1.0;
                reseeded += 1;
            }
        }
        Ok(reseeded)
    }
}

/// Shannon entropy in bits of an index histogram.
pub fn index_entropy(histogram: &[u64]) -> RvqResult<f64> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(RvqError::EmptyHistogram);
    }
    let total = total as f64;
    let mut bits = 0.0f64;
    for &count in histogram {
        if count > 0 {
            let p = count as f64 / total;
            bits -= p * p.log2();
        }
    }
    Ok(bits)
}
