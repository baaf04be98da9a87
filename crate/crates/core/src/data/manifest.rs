//! Dataset manifest: UTF-8 `key = value` lines recording how a dataset was
//! generated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::SyntheticConfig;
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.grids";
pub const TEST_FILE: &str = "test.grids";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: SyntheticConfig,
    pub train_file: String,
    pub test_file: String,
    pub train_count: usize,
    pub test_count: usize,
}

impl Manifest {
    pub fn render(&self) -> String {
        let c = &self.config;
        let mut s = String::from("# anyreid synthetic dataset\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("format", "anyreid-dataset-v1".into());
        kv("seed", c.seed.to_string());
        kv("num_identities", c.num_identities.to_string());
        kv("samples_per_identity", c.samples_per_identity.to_string());
        kv("test_identities", c.test_identities.to_string());
        kv("latent_dim", c.latent_dim.to_string());
        kv("shared_strength", c.shared_strength.to_string());
        kv("noise_std", c.noise_std.to_string());
        kv("intra_class_std", c.intra_class_std.to_string());
        kv("alignment", c.alignment.to_string());
        kv("num_cameras", c.num_cameras.to_string());
        kv("num_patches", c.num_patches.to_string());
        kv("patch_dim", c.patch_dim.to_string());
        kv("train_file", self.train_file.clone());
        kv("test_file", self.test_file.clone());
        kv("train_count", self.train_count.to_string());
        kv("test_count", self.test_count.to_string());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("manifest line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::Config(format!("manifest missing {key}")))?
                .parse()
                .map_err(|_| Error::Config(format!("manifest: bad value for {key}")))
        }
        if map.get("format").map(String::as_str) != Some("anyreid-dataset-v1") {
            return Err(Error::Config("manifest: unknown format".into()));
        }
        let config = SyntheticConfig {
            seed: get(&map, "seed")?,
            num_identities: get(&map, "num_identities")?,
            samples_per_identity: get(&map, "samples_per_identity")?,
            test_identities: get(&map, "test_identities")?,
            latent_dim: get(&map, "latent_dim")?,
            shared_strength: get(&map, "shared_strength")?,
            noise_std: get(&map, "noise_std")?,
            intra_class_std: get(&map, "intra_class_std")?,
            alignment: get(&map, "alignment")?,
            num_cameras: get(&map, "num_cameras")?,
            num_patches: get(&map, "num_patches")?,
            patch_dim: get(&map, "patch_dim")?,
        };
        Ok(Manifest {
            config,
            train_file: get(&map, "train_file")?,
            test_file: get(&map, "test_file")?,
            train_count: get(&map, "train_count")?,
            test_count: get(&map, "test_count")?,
        })
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest.render())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::parse(&std::fs::read_to_string(path)?)
}
