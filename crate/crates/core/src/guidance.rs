//! Shadow guidance: splitting a grid into shadow / non-shadow index sets and
//! gathering the feature vectors that sit on them.

use crate::error::{shape, Result};
use crate::tensor::{BinaryMask, FeatureMap, Rows};

/// Strictly increasing linear indices into a grid of `grid_len` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
    grid_len: usize,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, grid_len: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(shape("index set must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i >= grid_len) {
            return Err(shape(format!("index out of range for {grid_len} cells")));
        }
        Ok(Self { indices, grid_len })
    }

    /// Every cell of a grid with `grid_len` cells.
    pub fn full(grid_len: usize) -> Self {
        Self {
            indices: (0..grid_len).collect(),
            grid_len,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn cardinality(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

fn indices_where(mask: &BinaryMask, value: u8) -> IndexSet {
    IndexSet {
        indices: mask
            .data()
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v == value).then_some(i))
            .collect(),
        grid_len: mask.data().len(),
    }
}

/// Cells where the mask is shadow.
pub fn shadow_index_set(mask: &BinaryMask) -> IndexSet {
    indices_where(mask, 1)
}

/// Cells where the mask is not shadow; the complement of [`shadow_index_set`].
pub fn nonshadow_index_set(mask: &BinaryMask) -> IndexSet {
    indices_where(mask, 0)
}

/// `N x D` feature vectors gathered from a map, with the cells they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowFeatureSet {
    features: Vec<f64>,
    dim: usize,
    source_indices: IndexSet,
}

impl ShadowFeatureSet {
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows::new(&self.features, self.dim).expect("dim is positive")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.source_indices.cardinality()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn source_indices(&self) -> &IndexSet {
        &self.source_indices
    }
}

/// Copies the vectors at `idx` out of `features`, preserving index order.
pub fn gather_shadow_features(features: &FeatureMap, idx: &IndexSet) -> Result<ShadowFeatureSet> {
    if idx.grid_len() != features.cells() {
        return Err(shape(format!(
            "index set over {} cells applied to a {}-cell map",
            idx.grid_len(),
            features.cells()
        )));
    }
    let mut out = Vec::with_capacity(idx.cardinality() * features.dim());
    for &i in idx.indices() {
        out.extend_from_slice(features.cell(i));
    }
    Ok(ShadowFeatureSet {
        features: out,
        dim: features.dim(),
        source_indices: idx.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_set_examples() {
        let empty = BinaryMask::zeros(3, 3).unwrap();
        assert!(shadow_index_set(&empty).is_empty());
        assert_eq!(nonshadow_index_set(&empty).cardinality(), 9);

        let diag = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(shadow_index_set(&diag).indices(), &[0, 3]);
        assert_eq!(nonshadow_index_set(&diag).indices(), &[1, 2]);

        let full = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        assert!(nonshadow_index_set(&full).is_empty());
    }

    #[test]
    fn gather_examples() {
        let f = FeatureMap::new(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();

        let none = gather_shadow_features(&f, &IndexSet::new(vec![], 4).unwrap()).unwrap();
        assert!(none.is_empty());
        assert!(none.features().is_empty());

        let idx = IndexSet::new(vec![0, 3], 4).unwrap();
        let g = gather_shadow_features(&f, &idx).unwrap();
        assert_eq!(g.features(), &[0.0, 1.0, 6.0, 7.0]);

        let all = gather_shadow_features(&f, &IndexSet::full(4)).unwrap();
        assert_eq!(all.features(), f.data());
    }

    #[test]
    fn gather_rejects_foreign_index_set() {
        let f = FeatureMap::zeros(2, 2, 1).unwrap();
        assert!(gather_shadow_features(&f, &IndexSet::full(9)).is_err());
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSet::new(vec![1, 1], 4).is_err());
        assert!(IndexSet::new(vec![2, 1], 4).is_err());
        assert!(IndexSet::new(vec![4], 4).is_err());
        assert!(IndexSet::new(vec![0, 3], 4).unwrap().contains(3));
    }
}
