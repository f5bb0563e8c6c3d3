use rand::Rng;

/// Smoothing width for generator noise vectors.
pub const NOISE_SIGMA: f64 = 3.0;

/// Discrete Gaussian of radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn reflect(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Same-length convolution with a normalized Gaussian, reflecting at the
/// edges so constants are preserved.
pub fn gaussian_smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let n = values.len() as i64;
    (0..n)
        .map(|i| {
            k.iter()
                .enumerate()
                .map(|(j, w)| w * values[reflect(i + j as i64 - r, n)])
                .sum()
        })
        .collect()
}

/// Uniform noise smoothed with a Gaussian and clamped to `[0, 1]`.
pub fn gen_noise<R: Rng>(width: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..width).map(|_| rng.random::<f64>()).collect();
    if raw.is_empty() {
        return raw;
    }
    gaussian_smooth(&raw, sigma)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}
