use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::repr::{LabeledSample, ModalitySet};

/// Query and gallery modality subsets, written like `RT-to-NT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    pub query_modalities: ModalitySet,
    pub gallery_modalities: ModalitySet,
}

impl ScenarioSpec {
    pub fn new(query_modalities: ModalitySet, gallery_modalities: ModalitySet) -> Result<Self> {
        if query_modalities.is_empty() || gallery_modalities.is_empty() {
            return Err(Error::NoModality);
        }
        Ok(ScenarioSpec { query_modalities, gallery_modalities })
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn is_matched(&self) -> bool {
        self.query_modalities == self.gallery_modalities
    }

    /// Query and gallery roles exchanged.
    pub fn swapped(&self) -> Self {
        ScenarioSpec { query_modalities: self.gallery_modalities, gallery_modalities: self.query_modalities }
    }

    /// The eight default settings: six matched / mismatched settings plus
    /// RN-to-RN and R-to-R.
    pub fn default_list() -> Vec<ScenarioSpec> {
        ["RNT-to-RNT", "RT-to-RT", "RT-to-NT", "RT-to-N", "R-to-N", "R-to-NT", "RN-to-RN", "R-to-R"]
            .iter()
            .map(|s| s.parse().expect("valid default scenario"))
            .collect()
    }

    pub fn parse_list(list: &str) -> Result<Vec<ScenarioSpec>> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-to-{}", self.query_modalities, self.gallery_modalities)
    }
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let invalid = || Error::InvalidScenario(s.to_string());
        let (q, g) = s.split_once("-to-").ok_or_else(invalid)?;
        let query = q.parse::<ModalitySet>().map_err(|_| invalid())?;
        let gallery = g.parse::<ModalitySet>().map_err(|_| invalid())?;
        ScenarioSpec::new(query, gallery)
    }
}

/// Drops every modality outside `side` from each sample.
pub fn apply_scenario(samples: &[LabeledSample], side: ModalitySet) -> Result<Vec<LabeledSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(LabeledSample {
                identity: s.identity,
                camera: s.camera,
                representation: s.representation.restrict(side)?,
            })
        })
        .collect()
}
