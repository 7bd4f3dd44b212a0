//! Seeded synthetic texture generator, so training and the acceptance tests
//! run without any external dataset.
//!
//! Each image blends two or three octaves of bilinear value noise through a
//! random two-color palette, plus a random linear gradient. Everything is
//! drawn from one ChaCha stream per image, so a (seed, index) pair always
//! produces the same pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::tensor::Tensor;

/// One synthetic RGB texture as a 3xHxW tensor of [0, 1] floats.
pub fn texture(seed: u64, width: usize, height: usize) -> Tensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let octaves = rng.random_range(2..=3);
    let mut field = vec![0.0f32; width * height];
    let mut amplitude = 1.0f32;
    let mut total_amp = 0.0f32;
    let mut cell = rng.random_range(12..=32usize);
    for _ in 0..octaves {
        add_value_noise(&mut rng, &mut field, width, height, cell, amplitude);
        total_amp += amplitude;
        amplitude *= 0.5;
        cell = (cell / 2).max(3);
    }
    for v in field.iter_mut() {
        *v /= total_amp;
    }

    // Random gradient direction mixed into the field.
    let gx = rng.random::<f32>() - 0.5;
    let gy = rng.random::<f32>() - 0.5;
    let gradient_strength = rng.random::<f32>() * 0.4;
    for y in 0..height {
        for x in 0..width {
            let g = gx * (x as f32 / width as f32) + gy * (y as f32 / height as f32);
            field[y * width + x] += gradient_strength * g;
        }
    }

    // Two-color palette keeps channels correlated like natural content.
    let color_a: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let color_b: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let mut data = vec![0.0f32; 3 * width * height];
    for p in 0..width * height {
        // Squash into (0.05, 0.95) so textures avoid hard saturation.
        let t = 0.05 + 0.9 / (1.0 + (-4.0 * (field[p] - 0.5)).exp());
        for c in 0..3 {
            data[c * width * height + p] =
                (color_a[c] + (color_b[c] - color_a[c]) * t).clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![3, height, width], data).expect("shape by construction")
}

fn add_value_noise(
    rng: &mut ChaCha20Rng,
    field: &mut [f32],
    width: usize,
    height: usize,
    cell: usize,
    amplitude: f32,
) {
    let gw = width.div_ceil(cell) + 1;
    let gh = height.div_ceil(cell) + 1;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random()).collect();
    for y in 0..height {
        let fy = y as f32 / cell as f32;
        let y0 = fy as usize;
        let ty = smoothstep(fy - y0 as f32);
        for x in 0..width {
            let fx = x as f32 / cell as f32;
            let x0 = fx as usize;
            let tx = smoothstep(fx - x0 as f32);
            let v00 = lattice[y0 * gw + x0];
            let v01 = lattice[y0 * gw + x0 + 1];
            let v10 = lattice[(y0 + 1) * gw + x0];
            let v11 = lattice[(y0 + 1) * gw + x0 + 1];
            let top = v00 + (v01 - v00) * tx;
            let bottom = v10 + (v11 - v10) * tx;
            field[y * width + x] += amplitude * (top + (bottom - top) * ty);
        }
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// A deterministic dataset: image i uses a seed derived from (seed, i).
pub fn dataset(seed: u64, count: usize, width: usize, height: usize) -> Vec<Tensor> {
    (0..count)
        .map(|i| texture(derive_seed(seed, i as u64), width, height))
        .collect()
}

/// Stable sub-seed derivation (splitmix-style mixing).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(tag.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = texture(7, 32, 24);
        let b = texture(7, 32, 24);
        assert_eq!(a, b);
        let c = texture(8, 32, 24);
        assert_ne!(a, c);
    }

    #[test]
    fn values_stay_in_unit_range() {
        for s in 0..4 {
            let t = texture(s, 40, 40);
            assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn dataset_images_differ() {
        let d = dataset(3, 4, 16, 16);
        assert_eq!(d.len(), 4);
        assert_ne!(d[0], d[1]);
        assert_ne!(d[1], d[2]);
    }
}
