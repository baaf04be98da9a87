//! Modalities, decoupled features and the masked fixed-layout representation.
//!
//! A sample is stored as `2M` slots laid out `[sp_R, sp_N, sp_T, sh_R, sh_N, sh_T]`
//! with a parallel availability mask. Absent modalities occupy zero slots with
//! mask 0 in both their specific and shared position.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const NUM_MODALITIES: usize = 3;
pub const NUM_SLOTS: usize = 2 * NUM_MODALITIES;

/// Masked slots below this L2 norm cannot be normalized.
pub const MIN_SLOT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Rgb,
    Nir,
    Tir,
}

impl Modality {
    pub const ALL: [Modality; NUM_MODALITIES] = [Modality::Rgb, Modality::Nir, Modality::Tir];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Modality> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Rgb => 'R',
            Modality::Nir => 'N',
            Modality::Tir => 'T',
        }
    }

    pub fn from_letter(c: char) -> Option<Modality> {
        match c {
            'R' => Some(Modality::Rgb),
            'N' => Some(Modality::Nir),
            'T' => Some(Modality::Tir),
            _ => None,
        }
    }

    pub fn specific_slot(self) -> usize {
        self.index()
    }

    pub fn shared_slot(self) -> usize {
        NUM_MODALITIES + self.index()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A subset of the modalities, iterated in the fixed R, N, T order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ModalitySet(u8);

impl ModalitySet {
    pub const EMPTY: ModalitySet = ModalitySet(0);
    pub const ALL: ModalitySet = ModalitySet(0b111);

    pub fn single(m: Modality) -> Self {
        ModalitySet(1 << m.index())
    }

    pub fn from_bits(bits: u8) -> Self {
        ModalitySet(bits & Self::ALL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn insert(&mut self, m: Modality) {
        self.0 |= 1 << m.index();
    }

    pub fn with(mut self, m: Modality) -> Self {
        self.insert(m);
        self
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    /// All seven non-empty subsets, ordered by bit pattern.
    pub fn non_empty_subsets() -> impl Iterator<Item = ModalitySet> {
        (1u8..=Self::ALL.0).map(ModalitySet)
    }
}

impl FromIterator<Modality> for ModalitySet {
    fn from_iter<I: IntoIterator<Item = Modality>>(iter: I) -> Self {
        let mut s = ModalitySet::EMPTY;
        for m in iter {
            s.insert(m);
        }
        s
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.iter() {
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    /// Parses letters in canonical order without repeats, e.g. "RT".
    fn from_str(s: &str) -> Result<Self> {
        let mut set = ModalitySet::EMPTY;
        let mut last: Option<Modality> = None;
        for c in s.chars() {
            let m = Modality::from_letter(c).ok_or_else(|| Error::InvalidScenario(s.into()))?;
            if last.is_some_and(|l| l >= m) {
                return Err(Error::InvalidScenario(s.into()));
            }
            set.insert(m);
            last = Some(m);
        }
        if set.is_empty() {
            return Err(Error::InvalidScenario(s.into()));
        }
        Ok(set)
    }
}

/// Encoder output for one modality: a specific and a shared embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledFeature {
    pub modality: Modality,
    pub specific: Array1<f64>,
    pub shared: Array1<f64>,
}

impl DecoupledFeature {
    pub fn new(modality: Modality, specific: Array1<f64>, shared: Array1<f64>) -> Result<Self> {
        if specific.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if specific.len() != shared.len() {
            return Err(Error::DimensionMismatch { expected: specific.len(), found: shared.len() });
        }
        if !specific.iter().chain(shared.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("decoupled feature"));
        }
        Ok(DecoupledFeature { modality, specific, shared })
    }

    pub fn dim(&self) -> usize {
        self.specific.len()
    }
}

/// The `2M`-slot vector plus availability mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRepresentation {
    slots: Array2<f64>,
    mask: [bool; NUM_SLOTS],
    normalized: bool,
}

impl SampleRepresentation {
    /// Builds directly from a `2M x d` slot matrix; rows of absent modalities
    /// are zeroed.
    pub fn from_slots(mut slots: Array2<f64>, modalities: ModalitySet) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::NoModality);
        }
        if slots.nrows() != NUM_SLOTS {
            return Err(Error::Shape(format!("expected {NUM_SLOTS} slots, got {}", slots.nrows())));
        }
        if slots.ncols() == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if !slots.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("slots"));
        }
        let mut mask = [false; NUM_SLOTS];
        for m in Modality::ALL {
            let present = modalities.contains(m);
            mask[m.specific_slot()] = present;
            mask[m.shared_slot()] = present;
            if !present {
                slots.row_mut(m.specific_slot()).fill(0.0);
                slots.row_mut(m.shared_slot()).fill(0.0);
            }
        }
        Ok(SampleRepresentation { slots, mask, normalized: false })
    }

    pub fn dim(&self) -> usize {
        self.slots.ncols()
    }

    pub fn slots(&self) -> ArrayView2<'_, f64> {
        self.slots.view()
    }

    pub fn slot(&self, k: usize) -> ArrayView1<'_, f64> {
        self.slots.row(k)
    }

    pub fn specific(&self, m: Modality) -> ArrayView1<'_, f64> {
        self.slots.row(m.specific_slot())
    }

    pub fn shared(&self, m: Modality) -> ArrayView1<'_, f64> {
        self.slots.row(m.shared_slot())
    }

    pub fn mask(&self) -> [bool; NUM_SLOTS] {
        self.mask
    }

    /// Mask as 0/1 bytes in slot order.
    pub fn mask_bytes(&self) -> [u8; NUM_SLOTS] {
        self.mask.map(u8::from)
    }

    pub fn is_present(&self, m: Modality) -> bool {
        self.mask[m.specific_slot()]
    }

    pub fn modalities(&self) -> ModalitySet {
        Modality::ALL.into_iter().filter(|m| self.is_present(*m)).collect()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Recovers the per-modality features for present modalities.
    pub fn features(&self) -> Vec<DecoupledFeature> {
        self.modalities()
            .iter()
            .map(|m| DecoupledFeature {
                modality: m,
                specific: self.specific(m).to_owned(),
                shared: self.shared(m).to_owned(),
            })
            .collect()
    }

    /// Rescales every masked slot to unit L2 norm.
    pub fn normalize_slots(&self) -> Result<Self> {
        let mut slots = self.slots.clone();
        for (k, present) in self.mask.iter().enumerate() {
            if !present {
                continue;
            }
            let mut row = slots.row_mut(k);
            let norm = row.dot(&row).sqrt();
            if norm < MIN_SLOT_NORM {
                return Err(Error::DegenerateFeature);
            }
            row.mapv_inplace(|x| x / norm);
        }
        Ok(SampleRepresentation { slots, mask: self.mask, normalized: true })
    }

    /// Zeroes every modality outside `keep`, preserving normalization.
    pub fn restrict(&self, keep: ModalitySet) -> Result<Self> {
        let present: ModalitySet = self.modalities().iter().filter(|m| keep.contains(*m)).collect();
        let mut out = SampleRepresentation::from_slots(self.slots.clone(), present)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Marks already-unit slots as normalized after checking them.
    pub fn assume_normalized(mut self) -> Result<Self> {
        for (k, present) in self.mask.iter().enumerate() {
            if *present {
                let row = self.slots.row(k);
                if (row.dot(&row).sqrt() - 1.0).abs() > 1e-6 {
                    return Err(Error::NotNormalized);
                }
            }
        }
        self.normalized = true;
        Ok(self)
    }
}

/// Builds the masked representation from the features of the present modalities.
pub fn build_representation(features: &[DecoupledFeature], modality_set: ModalitySet) -> Result<SampleRepresentation> {
    if modality_set.is_empty() {
        return Err(Error::NoModality);
    }
    let dim = features.first().map(DecoupledFeature::dim).ok_or(Error::NoModality)?;
    let mut seen = ModalitySet::EMPTY;
    let mut slots = Array2::zeros((NUM_SLOTS, dim));
    for f in features {
        if seen.contains(f.modality) {
            return Err(Error::DuplicateModality(f.modality));
        }
        if !modality_set.contains(f.modality) {
            return Err(Error::UnexpectedModality(f.modality));
        }
        if f.specific.len() != dim || f.shared.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: if f.specific.len() != dim { f.specific.len() } else { f.shared.len() },
            });
        }
        seen.insert(f.modality);
        slots.row_mut(f.modality.specific_slot()).assign(&f.specific);
        slots.row_mut(f.modality.shared_slot()).assign(&f.shared);
    }
    if let Some(m) = modality_set.iter().find(|m| !seen.contains(*m)) {
        return Err(Error::MissingModality(m));
    }
    SampleRepresentation::from_slots(slots, modality_set)
}

/// A representation with its identity and camera labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub identity: u32,
    pub camera: u32,
    pub representation: SampleRepresentation,
}
