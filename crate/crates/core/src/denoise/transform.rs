//! Orthonormal transforms used inside 3D groups.

/// Orthonormal DCT-II basis, `basis[k * n + i]` = coefficient of sample `i` in frequency `k`.
#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut basis = vec![0.0; n * n];
        let nf = n as f64;
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                basis[k * n + i] =
                    scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
            }
        }
        Self { n, basis }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Separable forward 2D transform of an `n x n` block, in place.
    pub fn forward_2d(&self, block: &mut [f64], scratch: &mut [f64]) {
        self.apply_2d(block, scratch, false);
    }

    pub fn inverse_2d(&self, block: &mut [f64], scratch: &mut [f64]) {
        self.apply_2d(block, scratch, true);
    }

    fn apply_2d(&self, block: &mut [f64], scratch: &mut [f64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(block.len(), n * n);
        // rows
        for r in 0..n {
            let row = &block[r * n..(r + 1) * n];
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    let b = if inverse { self.basis[i * n + k] } else { self.basis[k * n + i] };
                    acc += b * row[i];
                }
                scratch[r * n + k] = acc;
            }
        }
        // columns
        for c in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    let b = if inverse { self.basis[i * n + k] } else { self.basis[k * n + i] };
                    acc += b * scratch[i * n + c];
                }
                block[k * n + c] = acc;
            }
        }
    }
}

/// Orthonormal Haar transform of a power-of-two length signal, in place.
/// Output order: overall average first, then details from coarse to fine.
pub fn haar_forward(x: &mut [f64], scratch: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut len = n;
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            scratch[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
        }
        x[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
}

pub fn haar_inverse(x: &mut [f64], scratch: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for i in 0..half {
            let (s, d) = (x[i], x[half + i]);
            scratch[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
            scratch[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
        }
        x[..len].copy_from_slice(&scratch[..len]);
        len *= 2;
    }
}
