//! Deterministic k-means++ seeding plus Lloyd refinement for codebooks.

use rand::Rng;

use super::{Codebook, RvqError, RvqResult};

/// Lloyd iterations run after seeding.
pub const LLOYD_ITERS: usize = 10;

/// Build a codebook of `k` centers from `samples` (flat MxD row-major).
///
/// k-means++ seeding draws each next center weighted by squared distance to
/// the closest chosen one, then `LLOYD_ITERS` rounds of assign/average. EMA
/// counts start at the final cluster sizes and sums at the cluster sums, so
/// training continues from a consistent state.
pub fn kmeans_init(
    samples: &[f32],
    dim: usize,
    k: usize,
    rng: &mut impl Rng,
) -> RvqResult<Codebook> {
    assert!(dim > 0 && samples.len() % dim == 0, "flat MxD sample matrix");
    let m = samples.len() / dim;
    if m < k {
        return Err(RvqError::TooFewSamples { samples: m, k });
    }

    let row = |i: usize| &samples[i * dim..(i + 1) * dim];

    // Seeding: first center uniform, then squared-distance weighted.
    let mut centers = vec![0.0f32; k * dim];
    let first = rng.random_range(0..m);
    centers[..dim].copy_from_slice(row(first));
    let mut min_dist: Vec<f32> = (0..m).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    for c in 1..k {
        let total: f64 = min_dist.iter().map(|&d| d as f64).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0f64;
            let mut chosen = m - 1;
            for (i, &d) in min_dist.iter().enumerate() {
                acc += d as f64;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with chosen centers.
            rng.random_range(0..m)
        };
        centers[c * dim..(c + 1) * dim].copy_from_slice(row(pick));
        let new_center = row(pick).to_vec();
        for i in 0..m {
            let d = sq_dist(row(i), &new_center);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }

    // Lloyd refinement.
    let mut assign = vec![0usize; m];
    let mut counts = vec![0.0f32; k];
    let mut sums = vec![0.0f32; k * dim];
    for _ in 0..LLOYD_ITERS {
        assign_all(samples, dim, &centers, k, &mut assign);
        counts.fill(0.0);
        sums.fill(0.0);
        for i in 0..m {
            let a = assign[i];
            counts[a] += 1.0;
            let s = &mut sums[a * dim..(a + 1) * dim];
            let r = row(i);
            for j in 0..dim {
                s[j] += r[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0.0 {
                let s = &sums[c * dim..(c + 1) * dim];
                let dst = &mut centers[c * dim..(c + 1) * dim];
                for j in 0..dim {
                    dst[j] = s[j] / counts[c];
                }
            }
            // Empty cluster keeps its previous center.
        }
    }

    // Final statistics for the EMA state.
    assign_all(samples, dim, &centers, k, &mut assign);
    counts.fill(0.0);
    sums.fill(0.0);
    for i in 0..m {
        let a = assign[i];
        counts[a] += 1.0;
        let s = &mut sums[a * dim..(a + 1) * dim];
        let r = row(i);
        for j in 0..dim {
            s[j] += r[j];
        }
    }

    Codebook::with_state(k, dim, centers, counts, sums)
}

fn assign_all(samples: &[f32], dim: usize, centers: &[f32], k: usize, out: &mut [usize]) {
    let m = samples.len() / dim;
    for i in 0..m {
        let r = &samples[i * dim..(i + 1) * dim];
        let mut best = f32::INFINITY;
        let mut best_c = 0usize;
        for c in 0..k {
            let d = sq_dist(r, &centers[c * dim..(c + 1) * dim]);
            if d < best {
                best = d;
                best_c = c;
            }
        }
        out[i] = best_c;
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn k_equals_m_reproduces_samples() {
        let samples = vec![0.0f32, 0.0, 10.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let cb = kmeans_init(&samples, 2, 4, &mut rng).unwrap();
        // Every codeword must be one of the samples and all four must appear.
        let rows: Vec<&[f32]> = (0..4).map(|i| &samples[i * 2..(i + 1) * 2]).collect();
        for j in 0..4 {
            assert!(rows.iter().any(|r| *r == cb.codeword(j)));
        }
        for r in rows {
            assert!((0..4).any(|j| cb.codeword(j) == r));
        }
    }

    #[test]
    fn k_one_yields_sample_mean() {
        let samples = vec![1.0f32, 2.0, 3.0, 6.0, 5.0, 4.0];
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let cb = kmeans_init(&samples, 2, 1, &mut rng).unwrap();
        assert!((cb.codeword(0)[0] - 3.0).abs() < 1e-6);
        assert!((cb.codeword(0)[1] - 4.0).abs() < 1e-6);
        assert_eq!(cb.ema_counts()[0], 3.0);
    }

    #[test]
    fn two_blobs_recover_centers() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let mut samples = Vec::new();
        for _ in 0..200 {
            samples.push(-2.0 + 0.02 * (rng.random::<f32>() - 0.5));
            samples.push(1.0 + 0.02 * (rng.random::<f32>() - 0.5));
        }
        for _ in 0..200 {
            samples.push(3.0 + 0.02 * (rng.random::<f32>() - 0.5));
            samples.push(-1.5 + 0.02 * (rng.random::<f32>() - 0.5));
        }
        let cb = kmeans_init(&samples, 2, 2, &mut rng).unwrap();
        let mut found_a = false;
        let mut found_b = false;
        for j in 0..2 {
            let c = cb.codeword(j);
            if (c[0] + 2.0).abs() < 0.1 && (c[1] - 1.0).abs() < 0.1 {
                found_a = true;
            }
            if (c[0] - 3.0).abs() < 0.1 && (c[1] + 1.5).abs() < 0.1 {
                found_b = true;
            }
        }
        assert!(found_a && found_b, "blob centers not recovered");
    }

    #[test]
    fn too_few_samples_is_error() {
        let samples = vec![0.0f32; 6];
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        assert_eq!(
            kmeans_init(&samples, 2, 4, &mut rng).unwrap_err(),
            RvqError::TooFewSamples { samples: 3, k: 4 }
        );
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let mut samples = Vec::new();
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        for _ in 0..300 {
            samples.push(rng.random::<f32>());
            samples.push(rng.random::<f32>());
        }
        let a = kmeans_init(&samples, 2, 8, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = kmeans_init(&samples, 2, 8, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }
}
