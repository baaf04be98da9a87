//! Named parameter access shared by the encoder, the classifier heads and the
//! optimizer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Exposes every trainable array under a stable name, in a fixed order.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &[f64])>;
    fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every array into a name-keyed map.
    fn to_gradients(&self) -> Gradients {
        Gradients(self.named_tensors().into_iter().map(|(k, v)| (k, v.to_vec())).collect())
    }
}

/// Gradient arrays keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn insert(&mut self, name: String, values: Vec<f64>) {
        self.0.insert(name, values);
    }

    pub fn extend(&mut self, other: Gradients) {
        self.0.extend(other.0);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().flatten().all(|x| x.is_finite())
    }

    /// Checks that the keys and lengths match `params` exactly.
    pub fn check_against<P: Parameters + ?Sized>(&self, params: &P) -> Result<()> {
        let tensors = params.named_tensors();
        if tensors.len() != self.0.len() {
            return Err(Error::GradientKeys(format!("{} parameters but {} gradients", tensors.len(), self.0.len())));
        }
        for (name, t) in tensors {
            match self.0.get(&name) {
                Some(g) if g.len() == t.len() => {}
                Some(g) => {
                    return Err(Error::GradientKeys(format!("{name}: length {} vs {}", g.len(), t.len())));
                }
                None => return Err(Error::GradientKeys(format!("missing gradient for {name}"))),
            }
        }
        Ok(())
    }
}
