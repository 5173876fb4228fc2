//! Five-point mood scale to three classes.

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 3;

/// 1–2 → 1 (positive), 3 → 2 (neutral), 4–5 → 3 (negative).
pub fn map_label(raw: i64) -> Result<u8> {
    match raw {
        1 | 2 => Ok(1),
        3 => Ok(2),
        4 | 5 => Ok(3),
        other => Err(Error::RawLabel(other)),
    }
}

/// Zero-based class index of a raw label.
pub fn class_index(raw: i64) -> Result<usize> {
    map_label(raw).map(|c| usize::from(c) - 1)
}
