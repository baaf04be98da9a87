//! Synthetic identities whose modality images mix a cross-modal content
//! signal with an identity-specific per-modality style.
//!
//! For identity `i` and modality `M` a sample's flattened patch grid is
//!
//! ```text
//! a * W_M (c_i + u) + (1 - a) * S_M (s_iM + v_M) + noise_std * e
//! ```
//!
//! where `a` is `shared_strength`, `c_i` the identity's content latent,
//! `s_iM` its style latent for modality `M`, `u` and `v_M` per-sample jitter
//! with std `intra_class_std` (the content jitter `u` is common to all
//! modalities of a sample), and `e` pixel noise. Each content map is
//! `W_M = sqrt(alignment) W + sqrt(1 - alignment) W'_M`, so `alignment`
//! controls how similarly the modalities render the same content.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GridSample;
use crate::encoder::PatchGrid;
use crate::error::{Error, Result};
use crate::repr::{Modality, NUM_MODALITIES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    /// Identities held out for the test split.
    pub test_identities: usize,
    pub latent_dim: usize,
    pub shared_strength: f64,
    pub noise_std: f64,
    pub intra_class_std: f64,
    pub alignment: f64,
    pub num_cameras: usize,
    pub num_patches: usize,
    pub patch_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_identities: 240,
            samples_per_identity: 8,
            test_identities: 60,
            latent_dim: 16,
            shared_strength: 0.7,
            noise_std: 0.1,
            intra_class_std: 0.6,
            alignment: 0.5,
            num_cameras: 4,
            num_patches: 16,
            patch_dim: 48,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("data: {msg}")));
        if self.num_identities < 2 {
            return bad("num_identities must be at least 2");
        }
        if self.samples_per_identity < 2 {
            return bad("samples_per_identity must be at least 2");
        }
        if self.test_identities == 0 || self.test_identities >= self.num_identities {
            return bad("test_identities must leave at least one identity on each side");
        }
        if self.num_identities - self.test_identities < 2 {
            return bad("the training split needs at least two identities");
        }
        if self.latent_dim == 0 || self.num_cameras == 0 || self.num_patches == 0 || self.patch_dim == 0 {
            return bad("latent_dim, num_cameras, num_patches and patch_dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.shared_strength) || !(0.0..=1.0).contains(&self.alignment) {
            return bad("shared_strength and alignment must lie in [0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.intra_class_std >= 0.0) {
            return bad("noise_std and intra_class_std must be non-negative");
        }
        Ok(())
    }

    pub fn train_identities(&self) -> usize {
        self.num_identities - self.test_identities
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SyntheticConfig,
    /// Identities `0..train_identities`, usable directly as class indices.
    pub train: Vec<GridSample>,
    pub test: Vec<GridSample>,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn gaussian_vector(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels = cfg.num_patches * cfg.patch_dim;
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();

    let common = gaussian_matrix(pixels, cfg.latent_dim, scale, &mut rng);
    let content_maps: Vec<Array2<f64>> = (0..NUM_MODALITIES)
        .map(|_| {
            let own = gaussian_matrix(pixels, cfg.latent_dim, scale, &mut rng);
            &common * cfg.alignment.sqrt() + own * (1.0 - cfg.alignment).sqrt()
        })
        .collect();
    let style_maps: Vec<Array2<f64>> =
        (0..NUM_MODALITIES).map(|_| gaussian_matrix(pixels, cfg.latent_dim, scale, &mut rng)).collect();

    let a = cfg.shared_strength;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for identity in 0..cfg.num_identities {
        let content = gaussian_vector(cfg.latent_dim, 1.0, &mut rng);
        let styles: Vec<Array1<f64>> =
            (0..NUM_MODALITIES).map(|_| gaussian_vector(cfg.latent_dim, 1.0, &mut rng)).collect();
        for j in 0..cfg.samples_per_identity {
            let c = &content + &gaussian_vector(cfg.latent_dim, cfg.intra_class_std, &mut rng);
            let mut grids = Vec::with_capacity(NUM_MODALITIES);
            for m in Modality::ALL {
                let i = m.index();
                let s = &styles[i] + &gaussian_vector(cfg.latent_dim, cfg.intra_class_std, &mut rng);
                let flat = content_maps[i].dot(&c) * a
                    + style_maps[i].dot(&s) * (1.0 - a)
                    + gaussian_vector(pixels, cfg.noise_std, &mut rng);
                let patches = flat.into_shape_with_order((cfg.num_patches, cfg.patch_dim)).expect("pixel count");
                grids.push(PatchGrid::new(m, patches)?);
            }
            let sample = GridSample { identity: identity as u32, camera: (j % cfg.num_cameras) as u32, grids };
            if identity < cfg.train_identities() {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok(Dataset { config: *cfg, train, test })
}
