//! Flat parameter vectors with a named-slice layout manifest.

use std::ops::Range;
use std::sync::Arc;

use crate::{Error, Result};

/// One named slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl LayoutEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Layout manifest mapping names to slices of a flat parameter vector.
///
/// Entries must cover `[0, total_len)` exactly once, in order, with no gaps
/// or overlaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total_len: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out contiguously from 0.
    pub fn from_sizes<S: Into<String>>(sizes: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for (name, len) in sizes {
            let name = name.into();
            if len == 0 {
                return Err(Error::Layout(format!("slice '{name}' has zero length")));
            }
            if entries.iter().any(|e: &LayoutEntry| e.name == name) {
                return Err(Error::Layout(format!("duplicate slice name '{name}'")));
            }
            entries.push(LayoutEntry { name, offset, len });
            offset += len;
        }
        if entries.is_empty() {
            return Err(Error::Layout("layout has no entries".into()));
        }
        Ok(Self { entries, total_len: offset })
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Range of the named slice, or an error naming the missing slice.
    pub fn range_of(&self, name: &str) -> Result<Range<usize>> {
        self.find(name)
            .map(LayoutEntry::range)
            .ok_or_else(|| Error::Layout(format!("no slice named '{name}'")))
    }
}

/// A flat vector of real-valued parameters plus its layout manifest.
///
/// All entries are finite; the layout covers the values exactly.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Layout(format!(
                "value count {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {idx} is not finite")));
        }
        Ok(Self { values, layout })
    }

    /// All-zero vector over the given layout (used for gradient accumulators).
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self { values: vec![0.0; layout.total_len()], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        self.values
            .get(index)
            .copied()
            .ok_or(Error::IndexOutOfRange { index, len: self.values.len() })
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.values[self.layout.range_of(name)?])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let range = self.layout.range_of(name)?;
        Ok(&mut self.values[range])
    }

    /// Verifies every entry is finite (call after in-place updates).
    pub fn check_finite(&self) -> Result<()> {
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {idx} is not finite")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_exactly() {
        let layout = Layout::from_sizes([("a", 3), ("b", 2)]).unwrap();
        assert_eq!(layout.total_len(), 5);
        assert_eq!(layout.range_of("a").unwrap(), 0..3);
        assert_eq!(layout.range_of("b").unwrap(), 3..5);
        assert!(layout.range_of("c").is_err());
    }

    #[test]
    fn rejects_duplicate_and_empty() {
        assert!(Layout::from_sizes([("a", 3), ("a", 2)]).is_err());
        assert!(Layout::from_sizes([("a", 0)]).is_err());
        assert!(Layout::from_sizes(Vec::<(&str, usize)>::new()).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let layout = Arc::new(Layout::from_sizes([("a", 2)]).unwrap());
        assert!(ParamVector::new(vec![1.0, f64::NAN], layout.clone()).is_err());
        assert!(ParamVector::new(vec![1.0, 2.0, 3.0], layout).is_err());
    }

    #[test]
    fn named_slices_index_correctly() {
        let layout = Arc::new(Layout::from_sizes([("a", 2), ("b", 1)]).unwrap());
        let pv = ParamVector::new(vec![1.0, 2.0, 3.0], layout).unwrap();
        assert_eq!(pv.slice("a").unwrap(), &[1.0, 2.0]);
        assert_eq!(pv.slice("b").unwrap(), &[3.0]);
        assert!(pv.get(3).is_err());
    }
}
