//! Seeded noise models used to degrade inputs and guides.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::image::Image2D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Photon-counting noise; a pixel of value 1 receives `photons_at_white` mean counts.
    Poisson { photons_at_white: f64 },
    /// Additive zero-mean Gaussian noise in intensity units.
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

/// Named Poisson noise levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseLevel {
    Low,
    Medium,
    Strong,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 3] = [NoiseLevel::Low, NoiseLevel::Medium, NoiseLevel::Strong];

    pub fn photons_at_white(self) -> f64 {
        match self {
            NoiseLevel::Low => 4000.0,
            NoiseLevel::Medium => 1000.0,
            NoiseLevel::Strong => 250.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
            NoiseLevel::Strong => "strong",
        }
    }
}

impl NoiseSpec {
    pub fn poisson(photons_at_white: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Poisson { photons_at_white },
            seed,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { sigma },
            seed,
        }
    }

    pub fn level(level: NoiseLevel, seed: u64) -> Self {
        Self::poisson(level.photons_at_white(), seed)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Poisson { photons_at_white } if !(photons_at_white > 0.0 && photons_at_white.is_finite()) => {
                Err(Error::config(format!(
                    "photons_at_white must be positive, got {photons_at_white}"
                )))
            }
            NoiseKind::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config(format!("sigma must be non-negative, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Short tag such as `poisson(1000)` or `gaussian(0.05)`.
    pub fn describe(&self) -> String {
        match self.kind {
            NoiseKind::Poisson { photons_at_white } => format!("poisson({photons_at_white})"),
            NoiseKind::Gaussian { sigma } => format!("gaussian({sigma})"),
        }
    }
}

/// Degrades `image` with the given noise model. Deterministic in `spec.seed`.
pub fn apply_noise(image: &Image2D, spec: &NoiseSpec) -> Result<Image2D> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = image.dims();
    let out: Vec<f64> = match spec.kind {
        NoiseKind::Gaussian { sigma } => {
            if sigma == 0.0 {
                return Ok(image.clone());
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
            image
                .pixels()
                .iter()
                .map(|&v| v + normal.sample(&mut rng))
                .collect()
        }
        NoiseKind::Poisson { photons_at_white } => {
            if let Some(i) = image.pixels().iter().position(|&v| v < 0.0) {
                return Err(Error::contract(format!(
                    "poisson noise needs non-negative pixels, pixel {i} is {}",
                    image.pixels()[i]
                )));
            }
            image
                .pixels()
                .iter()
                .map(|&v| {
                    let lambda = v * photons_at_white;
                    if lambda == 0.0 {
                        0.0
                    } else {
                        let counts: f64 = Poisson::new(lambda)
                            .expect("positive finite rate")
                            .sample(&mut rng);
                        counts / photons_at_white
                    }
                })
                .collect()
        }
    };
    Image2D::new(w, h, out)
}
