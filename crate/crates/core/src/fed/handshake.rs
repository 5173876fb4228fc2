//! Feature-availability handshake: shared features are the intersection of client masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::registry::FEATURE_COUNT;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAvailabilityVector {
    pub client_id: String,
    pub mask: Vec<bool>,
}

impl FeatureAvailabilityVector {
    pub fn new(client_id: impl Into<String>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != FEATURE_COUNT {
            return Err(Error::Shape(format!(
                "availability mask has {} entries, registry has {FEATURE_COUNT}",
                mask.len()
            )));
        }
        Ok(Self { client_id: client_id.into(), mask })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// Registry indices available at every client, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedFeatureSet(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub shared: SharedFeatureSet,
    /// Per client, in input order: `(client_id, registry indices outside the shared set)`.
    pub local: Vec<(String, Vec<usize>)>,
}

impl Handshake {
    pub fn local_for(&self, client_id: &str) -> Option<&[usize]> {
        self.local.iter().find(|(id, _)| id == client_id).map(|(_, l)| l.as_slice())
    }
}

pub fn handshake(vectors: &[FeatureAvailabilityVector]) -> Result<Handshake> {
    let first = vectors.first().ok_or_else(|| Error::Config("handshake needs at least one client".into()))?;
    let width = first.mask.len();
    if let Some(v) = vectors.iter().find(|v| v.mask.len() != width) {
        return Err(Error::Shape(format!(
            "client `{}` mask has {} entries, expected {width}",
            v.client_id,
            v.mask.len()
        )));
    }
    let shared: Vec<usize> = (0..width).filter(|&j| vectors.iter().all(|v| v.mask[j])).collect();
    if shared.is_empty() {
        return Err(Error::EmptyIntersection(vectors.len()));
    }
    let local = vectors
        .iter()
        .map(|v| (v.client_id.clone(), v.indices().into_iter().filter(|j| shared.binary_search(j).is_err()).collect()))
        .collect();
    Ok(Handshake { shared: SharedFeatureSet(shared), local })
}
