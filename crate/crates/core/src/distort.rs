//! Seeded image distortion: additive Gaussian noise plus Poisson noise.
//!
//! The default [`NoiseMode::Shot`] treats the Poisson term as signal-dependent
//! photon noise, `(Poisson(lambda * v) - lambda * v) / lambda`, which is mean
//! zero with variance `v / lambda`. [`NoiseMode::Literal`] adds raw
//! `Poisson(lambda)` counts to the [0, 1] intensities; for any realistic
//! `lambda` that saturates the image and is kept only for comparison runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal, Poisson};

use crate::rng;

/// Suffix appended to an image id by [`distort`].
pub const DISTORTED_SUFFIX: &str = ":distorted";

pub const DEFAULT_SIGMA: f64 = 0.07;
pub const DEFAULT_LAMBDA: f64 = 70.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistortError {
    #[error("image dimensions must be positive, got {width}x{height}x{channels}")]
    ZeroDimension {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("expected {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("invalid noise parameters: {0}")]
    Config(&'static str),
}

/// Row-major intensity grid with values in [0, 1].
///
/// The optional id is metadata used by table-driven providers to find the
/// rows that belong to an image; it never affects pixel math.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
    id: Option<String>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, DistortError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(DistortError::ZeroDimension {
                width,
                height,
                channels,
            });
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(DistortError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DistortError::PixelRange { index, value });
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
            id: None,
        })
    }

    pub fn constant(
        width: usize,
        height: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, DistortError> {
        Image::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    /// The id with any distortion suffix removed.
    pub fn base_id(&self) -> Option<&str> {
        self.id
            .as_deref()
            .map(|id| id.strip_suffix(DISTORTED_SUFFIX).unwrap_or(id))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NoiseMode {
    #[default]
    Shot,
    Literal,
}

/// Noise settings. In shot mode `lambda = f64::INFINITY` disables the
/// Poisson term (the large-count limit).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseParams {
    pub sigma: f64,
    pub lambda: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma: DEFAULT_SIGMA,
            lambda: DEFAULT_LAMBDA,
            mode: NoiseMode::Shot,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), DistortError> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(DistortError::Config("sigma must be finite and >= 0"));
        }
        match self.mode {
            NoiseMode::Shot if self.lambda.is_nan() || self.lambda <= 0.0 => {
                Err(DistortError::Config("lambda must be > 0 in shot mode"))
            }
            NoiseMode::Literal if !(self.lambda.is_finite() && self.lambda > 0.0) => Err(
                DistortError::Config("lambda must be finite and > 0 in literal mode"),
            ),
            _ => Ok(()),
        }
    }
}

/// Per-pixel noise offsets before clamping, `V' - V` for unclamped output.
pub fn noise_offsets(v: &Image, p: &NoiseParams) -> Result<Vec<f64>, DistortError> {
    p.validate()?;
    let mut rng = rng::stream(p.seed);
    let gauss = if p.sigma > 0.0 {
        Some(Normal::new(0.0, p.sigma).map_err(|_| DistortError::Config("bad sigma"))?)
    } else {
        None
    };
    let literal = match p.mode {
        NoiseMode::Literal => {
            Some(Poisson::new(p.lambda).map_err(|_| DistortError::Config("bad lambda"))?)
        }
        NoiseMode::Shot => None,
    };
    let shot = p.mode == NoiseMode::Shot && p.lambda.is_finite();

    let mut out = Vec::with_capacity(v.pixels.len());
    for &x in &v.pixels {
        let mut d = gauss.as_ref().map_or(0.0, |g| g.sample(&mut rng));
        if let Some(q) = &literal {
            d += q.sample(&mut rng);
        } else if shot {
            let mean = p.lambda * x;
            if mean > 0.0 {
                let count: f64 = Poisson::new(mean)
                    .map_err(|_| DistortError::Config("bad lambda"))?
                    .sample(&mut rng);
                d += (count - mean) / p.lambda;
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// Produces the distorted image `clamp(V + noise, 0, 1)`.
///
/// Same image and same `p.seed` give bit-identical output. The output id is
/// the input id with [`DISTORTED_SUFFIX`] appended.
pub fn distort(v: &Image, p: &NoiseParams) -> Result<Image, DistortError> {
    let offsets = noise_offsets(v, p)?;
    let pixels = v
        .pixels
        .iter()
        .zip(&offsets)
        .map(|(&x, &d)| (x + d).clamp(0.0, 1.0))
        .collect();
    Ok(Image {
        width: v.width,
        height: v.height,
        channels: v.channels,
        pixels,
        id: v.base_id().map(|id| format!("{id}{DISTORTED_SUFFIX}")),
    })
}

/// Root-mean-square pixel difference.
pub fn noise_energy(v: &Image, v_prime: &Image) -> Result<f64, DistortError> {
    if v.dims() != v_prime.dims() {
        return Err(DistortError::DimensionMismatch(v.dims(), v_prime.dims()));
    }
    let sq: f64 = v
        .pixels
        .iter()
        .zip(&v_prime.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(sq / v.pixels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gradient(w: usize, h: usize) -> Image {
        let n = w * h;
        let px = (0..n)
            .map(|i| 0.2 + 0.6 * i as f64 / (n - 1) as f64)
            .collect();
        Image::new(w, h, 1, px).unwrap()
    }

    fn sample_sd(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn image_invariants() {
        assert!(matches!(
            Image::new(2, 2, 1, vec![0.0; 3]),
            Err(DistortError::PixelCount {
                expected: 4,
                actual: 3
            })
        ));
        assert!(matches!(
            Image::new(1, 1, 1, vec![1.5]),
            Err(DistortError::PixelRange { index: 0, .. })
        ));
        assert!(matches!(
            Image::new(0, 1, 1, vec![]),
            Err(DistortError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = gradient(16, 16);
        let p = NoiseParams {
            sigma: 0.0,
            lambda: f64::INFINITY,
            mode: NoiseMode::Shot,
            seed: 3,
        };
        let out = distort(&v, &p).unwrap();
        assert_eq!(out.pixels(), v.pixels());
    }

    #[test]
    fn shot_noise_sd_on_constant_image() {
        let v = Image::constant(64, 64, 1, 0.5).unwrap();
        let p = NoiseParams {
            seed: 11,
            ..NoiseParams::default()
        };
        let out = distort(&v, &p).unwrap();
        let diff: Vec<f64> = out
            .pixels()
            .iter()
            .zip(v.pixels())
            .map(|(a, b)| a - b)
            .collect();
        let sd = sample_sd(&diff);
        // sqrt(sigma^2 + 0.5 / lambda)
        let predicted = (0.07f64 * 0.07 + 0.5 / 70.0).sqrt();
        assert_abs_diff_eq!(predicted, 0.1097, epsilon = 1e-4);
        // sd of a sample sd over 4096 draws is about predicted / sqrt(8192)
        assert!((sd - predicted).abs() < 0.005, "sd = {sd}");
    }

    #[test]
    fn literal_mode_saturates() {
        let v = gradient(32, 32);
        let p = NoiseParams {
            mode: NoiseMode::Literal,
            seed: 5,
            ..NoiseParams::default()
        };
        let out = distort(&v, &p).unwrap();
        assert!(out.pixels().iter().all(|&x| x == 1.0));
        // P(Poisson(70) < 1) = P(0) = e^-70
        let p_zero = libm::exp(-70.0);
        assert!(p_zero < 1e-30, "{p_zero}");
    }

    #[test]
    fn deterministic_per_seed() {
        let v = gradient(20, 10);
        let p = NoiseParams {
            seed: 99,
            ..NoiseParams::default()
        };
        let a = distort(&v, &p).unwrap();
        let b = distort(&v, &p).unwrap();
        assert_eq!(a, b);
        let c = distort(&v, &NoiseParams { seed: 100, ..p }).unwrap();
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn output_stays_in_range() {
        let v = gradient(40, 40);
        let p = NoiseParams {
            sigma: 0.5,
            lambda: 3.0,
            mode: NoiseMode::Shot,
            seed: 1,
        };
        let out = distort(&v, &p).unwrap();
        assert!(out.pixels().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn shot_term_is_mean_zero() {
        let v = gradient(400, 250);
        let p = NoiseParams {
            sigma: 0.0,
            seed: 2024,
            ..NoiseParams::default()
        };
        let d = noise_offsets(&v, &p).unwrap();
        assert!(d.len() >= 100_000);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() <= 0.003, "mean = {mean}");
    }

    #[test]
    fn distorted_id_tracks_base() {
        let v = gradient(4, 4).with_id("img0");
        let p = NoiseParams::default();
        let d = distort(&v, &p).unwrap();
        assert_eq!(d.id(), Some("img0:distorted"));
        assert_eq!(d.base_id(), Some("img0"));
        let dd = distort(&d, &p).unwrap();
        assert_eq!(dd.id(), Some("img0:distorted"));
    }

    #[test]
    fn invalid_params_rejected() {
        let v = gradient(4, 4);
        for p in [
            NoiseParams {
                sigma: -0.1,
                ..NoiseParams::default()
            },
            NoiseParams {
                lambda: 0.0,
                ..NoiseParams::default()
            },
            NoiseParams {
                lambda: f64::INFINITY,
                mode: NoiseMode::Literal,
                ..NoiseParams::default()
            },
        ] {
            assert!(matches!(distort(&v, &p), Err(DistortError::Config(_))));
        }
    }

    #[test]
    fn noise_energy_examples() {
        let v = gradient(8, 8);
        assert_eq!(noise_energy(&v, &v).unwrap(), 0.0);

        let zeros = Image::constant(3, 3, 3, 0.0).unwrap();
        let ones = Image::constant(3, 3, 3, 1.0).unwrap();
        assert_eq!(noise_energy(&zeros, &ones).unwrap(), 1.0);

        let shifted = Image::new(
            8,
            8,
            1,
            v.pixels()
                .iter()
                .map(|x| (x + 0.1).clamp(0.0, 1.0))
                .collect(),
        )
        .unwrap();
        assert_abs_diff_eq!(noise_energy(&v, &shifted).unwrap(), 0.1, epsilon = 1e-12);

        assert!(matches!(
            noise_energy(&v, &zeros),
            Err(DistortError::DimensionMismatch(..))
        ));
    }
}
