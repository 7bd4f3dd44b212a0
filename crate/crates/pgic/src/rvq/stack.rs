//! Ordered codebook stack implementing the residual quantization recursion.

use crate::tensor::Tensor;

use super::{Codebook, RvqError, RvqResult};

/// Per-stage grid of codeword indices at latent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct StageIndices {
    /// 1-based stage number.
    pub stage: usize,
    pub h: usize,
    pub w: usize,
    /// Row-major raster of indices, each < K.
    pub grid: Vec<u16>,
}

impl StageIndices {
    pub fn new(stage: usize, h: usize, w: usize, grid: Vec<u16>) -> RvqResult<Self> {
        if grid.len() != h * w {
            return Err(RvqError::GridShapeMismatch);
        }
        Ok(StageIndices { stage, h, w, grid })
    }
}

/// Result of encoding a latent through the first `stages` codebooks.
#[derive(Clone, Debug)]
pub struct RvqEncoding {
    pub indices: Vec<StageIndices>,
    /// Sum of the selected codewords over all requested stages (bit-exact
    /// match for decoding the same prefix).
    pub y_hat: Tensor,
    /// Mean squared residual norm after each stage.
    pub residual_energy: Vec<f32>,
}

/// N codebooks sharing one size and dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqStack {
    codebooks: Vec<Codebook>,
}

impl RvqStack {
    pub fn new(codebooks: Vec<Codebook>) -> RvqResult<Self> {
        if codebooks.is_empty() {
            return Err(RvqError::MismatchedCodebooks);
        }
        let (k, d) = (codebooks[0].len(), codebooks[0].dim());
        if codebooks.iter().any(|c| c.len() != k || c.dim() != d) {
            return Err(RvqError::MismatchedCodebooks);
        }
        Ok(RvqStack { codebooks })
    }

    pub fn stages(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook(&self, stage_index: usize) -> &Codebook {
        &self.codebooks[stage_index]
    }

    pub fn codebook_mut(&mut self, stage_index: usize) -> &mut Codebook {
        &mut self.codebooks[stage_index]
    }

    pub fn dim(&self) -> usize {
        self.codebooks[0].dim()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks[0].len()
    }

    /// Quantize `y` (DxHxW) through the first `stages` codebooks.
    ///
    /// Each spatial position is quantized independently: stage 1 quantizes
    /// the latent vector, every later stage quantizes what is left. The
    /// reconstruction is the running sum of looked-up codewords, accumulated
    /// in stage order so decoding the same indices reproduces it bit-exactly.
    pub fn encode(&self, y: &Tensor, stages: usize) -> RvqResult<RvqEncoding> {
        let (d, h, w) = y
            .dims3("rvq encode")
            .map_err(|_| RvqError::GridShapeMismatch)?;
        if d != self.dim() {
            return Err(RvqError::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        if stages == 0 || stages > self.stages() {
            return Err(RvqError::StageOutOfRange {
                stage: stages,
                n: self.stages(),
            });
        }
        let positions = h * w;
        let y_rows = rows_from_chw(y.data(), d, positions);
        let mut residual = y_rows.clone();
        let mut recon = vec![0.0f32; positions * d];
        let mut indices = Vec::with_capacity(stages);
        let mut residual_energy = Vec::with_capacity(stages);

        for stage in 0..stages {
            let cb = &self.codebooks[stage];
            let mut grid = vec![0u16; positions];
            let mut energy = 0.0f32;
            for p in 0..positions {
                let row = &mut residual[p * d..(p + 1) * d];
                let (idx, cw) = cb.nearest(row)?;
                grid[p] = idx as u16;
                let rec = &mut recon[p * d..(p + 1) * d];
                let yrow = &y_rows[p * d..(p + 1) * d];
                let mut norm = 0.0f32;
                for i in 0..d {
                    row[i] -= cw[i];
                    rec[i] += cw[i];
                    // Energy in the cumulative form y - recon, so an exact
                    // reconstruction reports exactly zero.
                    let e = yrow[i] - rec[i];
                    norm += e * e;
                }
                energy += norm;
            }
            residual_energy.push(energy / positions as f32);
            indices.push(StageIndices::new(stage + 1, h, w, grid)?);
        }

        let y_hat = Tensor::new(vec![d, h, w], chw_from_rows(&recon, d, positions)).expect("shape");
        Ok(RvqEncoding {
            indices,
            y_hat,
            residual_energy,
        })
    }

    /// Sum the codeword lookups for a contiguous stage prefix 1..=i.
    pub fn decode(&self, indices: &[StageIndices]) -> RvqResult<Tensor> {
        let partials = self.partial_reconstructions(indices)?;
        Ok(partials.into_iter().last().expect("non-empty prefix"))
    }

    /// Cumulative reconstruction after each stage of the prefix; entry i is
    /// the decode of stages 1..=i+1. Summation order matches `encode`.
    pub fn partial_reconstructions(&self, indices: &[StageIndices]) -> RvqResult<Vec<Tensor>> {
        if indices.is_empty() || indices.len() > self.stages() {
            return Err(RvqError::StageOutOfRange {
                stage: indices.len(),
                n: self.stages(),
            });
        }
        let (h, w) = (indices[0].h, indices[0].w);
        let d = self.dim();
        let positions = h * w;
        let mut running = vec![0.0f32; positions * d];
        let mut out = Vec::with_capacity(indices.len());
        for (i, stage) in indices.iter().enumerate() {
            if stage.stage != i + 1 {
                return Err(RvqError::NonContiguousStages {
                    expected: i + 1,
                    got: stage.stage,
                });
            }
            if stage.h != h || stage.w != w || stage.grid.len() != positions {
                return Err(RvqError::GridShapeMismatch);
            }
            let cb = &self.codebooks[i];
            for p in 0..positions {
                let idx = stage.grid[p] as usize;
                if idx >= cb.len() {
                    return Err(RvqError::IndexOutOfRange {
                        index: idx,
                        k: cb.len(),
                    });
                }
                let cw = cb.codeword(idx);
                let row = &mut running[p * d..(p + 1) * d];
                for c in 0..d {
                    row[c] += cw[c];
                }
            }
            out.push(
                Tensor::new(vec![d, h, w], chw_from_rows(&running, d, positions))
                    .expect("shape"),
            );
        }
        Ok(out)
    }

    /// The vector each stage quantized, per position: stage 1 sees `y`,
    /// stage i sees the residual left by stages 1..i-1. Used for EMA
    /// codebook updates during training.
    pub fn stage_inputs(&self, y: &Tensor, indices: &[StageIndices]) -> RvqResult<Vec<Vec<f32>>> {
        let (d, h, w) = y
            .dims3("rvq stage_inputs")
            .map_err(|_| RvqError::GridShapeMismatch)?;
        if d != self.dim() {
            return Err(RvqError::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        let positions = h * w;
        let mut current = rows_from_chw(y.data(), d, positions);
        let mut out = Vec::with_capacity(indices.len());
        for (i, stage) in indices.iter().enumerate() {
            if stage.stage != i + 1 {
                return Err(RvqError::NonContiguousStages {
                    expected: i + 1,
                    got: stage.stage,
                });
            }
            out.push(current.clone());
            let cb = &self.codebooks[i];
            for p in 0..positions {
                let cw = cb.codeword(stage.grid[p] as usize);
                let row = &mut current[p * d..(p + 1) * d];
                for c in 0..d {
                    row[c] -= cw[c];
                }
            }
        }
        Ok(out)
    }
}

/// CxHW channel-major to position-major rows.
fn rows_from_chw(data: &[f32], d: usize, positions: usize) -> Vec<f32> {
    let mut rows = vec![0.0f32; positions * d];
    for c in 0..d {
        for p in 0..positions {
            rows[p * d + c] = data[c * positions + p];
        }
    }
    rows
}

fn chw_from_rows(rows: &[f32], d: usize, positions: usize) -> Vec<f32> {
    let mut chw = vec![0.0f32; positions * d];
    for c in 0..d {
        for p in 0..positions {
            chw[c * positions + p] = rows[p * d + c];
        }
    }
    chw
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn stack2() -> RvqStack {
        let c1 = Codebook::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c2 = Codebook::new(2, 2, vec![-0.1, 0.1, 0.1, -0.1]).unwrap();
        RvqStack::new(vec![c1, c2]).unwrap()
    }

    fn random_stack(rng: &mut ChaCha20Rng, n: usize, k: usize, d: usize) -> RvqStack {
        let books = (0..n)
            .map(|_| {
                let flat: Vec<f32> = (0..k * d).map(|_| rng.random::<f32>() - 0.5).collect();
                Codebook::new(k, d, flat).unwrap()
            })
            .collect();
        RvqStack::new(books).unwrap()
    }

    #[test]
    fn hand_computed_two_stage_encode() {
        // y = (0.9, 0.1): stage 1 picks (1, 0) [index 0], residual (-0.1, 0.1);
        // stage 2 picks (-0.1, 0.1) [index 0], residual exactly zero.
        let stack = stack2();
        let y = Tensor::new(vec![2, 1, 1], vec![0.9, 0.1]).unwrap();
        let enc = stack.encode(&y, 2).unwrap();
        assert_eq!(enc.indices[0].grid, vec![0]);
        assert_eq!(enc.indices[1].grid, vec![0]);
        assert_eq!(enc.y_hat.data(), &[0.9, 0.1]);
        assert_eq!(enc.residual_energy[1], 0.0);
    }

    #[test]
    fn single_stage_equals_plain_vq() {
        let stack = stack2();
        let y = Tensor::new(vec![2, 1, 1], vec![0.2, 0.8]).unwrap();
        let enc = stack.encode(&y, 1).unwrap();
        let (idx, cw) = stack.codebook(0).nearest(&[0.2, 0.8]).unwrap();
        assert_eq!(enc.indices[0].grid, vec![idx as u16]);
        assert_eq!(enc.y_hat.data(), cw);
    }

    #[test]
    fn reconstruction_equals_lookup_sum_bit_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let stack = random_stack(&mut rng, 3, 16, 8);
        let y = Tensor::new(
            vec![8, 4, 4],
            (0..8 * 16).map(|_| rng.random::<f32>() - 0.5).collect(),
        )
        .unwrap();
        let enc = stack.encode(&y, 3).unwrap();
        // Recompute independently from the returned indices.
        let recon = stack.decode(&enc.indices).unwrap();
        assert_eq!(recon.data(), enc.y_hat.data());
    }

    #[test]
    fn decode_constant_grid_replicates_codeword() {
        let stack = stack2();
        let idx = StageIndices::new(1, 2, 2, vec![1, 1, 1, 1]).unwrap();
        let out = stack.decode(&[idx]).unwrap();
        // Codeword 1 of C1 is (0, 1); channel 0 all zeros, channel 1 all ones.
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn prefix_property_holds_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let stack = random_stack(&mut rng, 4, 32, 4);
        let y = Tensor::new(
            vec![4, 3, 3],
            (0..4 * 9).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let enc = stack.encode(&y, 4).unwrap();
        let partials = stack.partial_reconstructions(&enc.indices).unwrap();
        for i in 0..3 {
            let shorter = stack.decode(&enc.indices[..=i]).unwrap();
            assert_eq!(shorter.data(), partials[i].data());
            // decode(prefix i) plus the stage i+1 lookup, added in the same
            // order the running sum used, equals decode(prefix i+1) bit-exact.
            let cb = stack.codebook(i + 1);
            let grid = &enc.indices[i + 1].grid;
            let mut rebuilt = partials[i].data().to_vec();
            for p in 0..9 {
                let cw = cb.codeword(grid[p] as usize);
                for c in 0..4 {
                    rebuilt[c * 9 + p] += cw[c];
                }
            }
            assert_eq!(rebuilt, partials[i + 1].data());
        }
    }

    #[test]
    fn decode_rejects_non_contiguous_prefix() {
        let stack = stack2();
        let s2 = StageIndices::new(2, 1, 1, vec![0]).unwrap();
        assert_eq!(
            stack.decode(&[s2]).unwrap_err(),
            RvqError::NonContiguousStages { expected: 1, got: 2 }
        );
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let stack = stack2();
        let s1 = StageIndices::new(1, 1, 1, vec![7]).unwrap();
        assert_eq!(
            stack.decode(&[s1]).unwrap_err(),
            RvqError::IndexOutOfRange { index: 7, k: 2 }
        );
    }

    #[test]
    fn encode_rejects_bad_stage_count() {
        let stack = stack2();
        let y = Tensor::new(vec![2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert!(stack.encode(&y, 0).is_err());
        assert!(stack.encode(&y, 3).is_err());
    }

    #[test]
    fn stage_inputs_start_at_y_and_shrink() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let stack = random_stack(&mut rng, 3, 64, 4);
        let y = Tensor::new(
            vec![4, 2, 2],
            (0..16).map(|_| rng.random::<f32>() - 0.5).collect(),
        )
        .unwrap();
        let enc = stack.encode(&y, 3).unwrap();
        let inputs = stack.stage_inputs(&y, &enc.indices).unwrap();
        assert_eq!(inputs.len(), 3);
        // Stage 1 input is y in position-major order.
        for p in 0..4 {
            for c in 0..4 {
                assert_eq!(inputs[0][p * 4 + c], y.data()[c * 4 + p]);
            }
        }
    }
}
