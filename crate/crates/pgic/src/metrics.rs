//! Pixel-level quality metrics, computed on [0, 1] floats before any 8-bit
//! quantization.

use crate::tensor::Tensor;

/// Mean squared error between two same-shaped tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse operands must share a shape");
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc / a.numel() as f64
}

/// Peak signal-to-noise ratio in dB for a unit-range signal.
pub fn psnr_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// One row of a progressive quality report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageQuality {
    pub stage: usize,
    pub bpp: f64,
    pub mse: f64,
    pub psnr_db: f64,
}

/// Per-stage quality plus wall-clock timing, ordered by stage.
#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub rows: Vec<StageQuality>,
    pub encode_ms: f64,
    pub decode_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_tensors_have_zero_mse_inf_psnr() {
        let t = Tensor::new(vec![2, 2], vec![0.1, 0.9, 0.5, 0.3]).unwrap();
        assert_eq!(mse(&t, &t), 0.0);
        assert!(psnr_db(0.0).is_infinite());
    }

    #[test]
    fn known_mse_and_psnr() {
        let a = Tensor::new(vec![4], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![4], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let m = mse(&a, &b);
        assert!((m - 0.25).abs() < 1e-12);
        // PSNR of MSE 0.25 on unit range: ~6.0206 dB.
        assert!((psnr_db(m) - 6.0206).abs() < 1e-3);
    }
}
