//! Numeric containers and the elementary operations every other module builds on.
//!
//! All matrices are dense, row-major `f64`. Rows are object slots.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on class-probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const ZERO_NORM: f64 = 1e-12;

/// N×C matrix of per-slot embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "feature matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, channel {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != c) {
            return Err(Error::dim(format!(
                "feature row {bad} has {} channels, expected {c}",
                rows[bad].len()
            )));
        }
        Self::new(n, c, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "feature matrix must be non-empty");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix row by row from a closure. Panics on non-finite output.
    pub(crate) fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            f(i, out.row_mut(i));
        }
        debug_assert!(out.data.iter().all(|v| v.is_finite()));
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix whose row `n` is `self.row(index[n])`.
    pub fn select_rows(&self, index: &[usize]) -> Self {
        let mut data = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: index.len(),
            cols: self.cols,
            data,
        }
    }

    pub(crate) fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for FeatureMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<FeatureMatrix> for Vec<Vec<f64>> {
    fn from(m: FeatureMatrix) -> Self {
        m.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

/// N×(K+1) row-stochastic class probabilities; the last column is no-object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ClassProbMatrix {
    rows: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClassProbMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("class probability matrix has no rows"));
        }
        let width = rows[0].len();
        if width < 2 {
            return Err(Error::invalid(
                "class probability rows need at least one class plus no-object",
            ));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::dim(format!(
                    "class row {i} has {} entries, expected {width}",
                    r.len()
                )));
            }
            validate_prob_row(r).map_err(|e| Error::invalid(format!("row {i}: {e}")))?;
        }
        Ok(Self {
            rows: n,
            width,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of foreground classes K.
    pub fn num_classes(&self) -> usize {
        self.width - 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    pub fn select_rows(&self, index: &[usize]) -> Self {
        let mut data = Vec::with_capacity(index.len() * self.width);
        for &i in index {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: index.len(),
            width: self.width,
            data,
        }
    }

    /// Convex mixture of rows: output row n = Σ_j weights[n][j] · row j.
    pub(crate) fn mix(&self, weights: &[Vec<f64>]) -> Self {
        let mut data = vec![0.0; weights.len() * self.width];
        for (n, w) in weights.iter().enumerate() {
            let out = &mut data[n * self.width..(n + 1) * self.width];
            for (j, &wj) in w.iter().enumerate() {
                if wj != 0.0 {
                    for (o, p) in out.iter_mut().zip(self.row(j)) {
                        *o += wj * p;
                    }
                }
            }
        }
        Self {
            rows: weights.len(),
            width: self.width,
            data,
        }
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.iter_rows().map(predicted_class).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ClassProbMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<ClassProbMatrix> for Vec<Vec<f64>> {
    fn from(m: ClassProbMatrix) -> Self {
        m.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

/// N masks on an H×W grid, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskSet {
    pub fn new(count: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != count * height * width {
            return Err(Error::dim(format!(
                "mask set {count}x{height}x{width} needs {} values, got {}",
                count * height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            let cells = height * width;
            return Err(Error::invalid(format!(
                "mask {} cell {} has value {} outside [0,1]",
                pos / cells,
                pos % cells,
                data[pos]
            )));
        }
        Ok(Self {
            count,
            height,
            width,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self, i: usize) -> &[f64] {
        let cells = self.cells();
        &self.data[i * cells..(i + 1) * cells]
    }

    pub fn select(&self, index: &[usize]) -> Self {
        let mut data = Vec::with_capacity(index.len() * self.cells());
        for &i in index {
            data.extend_from_slice(self.mask(i));
        }
        Self {
            count: index.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub(crate) fn mix(&self, weights: &[Vec<f64>]) -> Self {
        let cells = self.cells();
        let mut data = vec![0.0; weights.len() * cells];
        for (n, w) in weights.iter().enumerate() {
            let out = &mut data[n * cells..(n + 1) * cells];
            for (j, &wj) in w.iter().enumerate() {
                if wj != 0.0 {
                    for (o, m) in out.iter_mut().zip(self.mask(j)) {
                        *o += wj * m;
                    }
                }
            }
            // rounding can push a convex mix a hair past 1
            for o in out.iter_mut() {
                *o = o.clamp(0.0, 1.0);
            }
        }
        Self {
            count: weights.len(),
            height: self.height,
            width: self.width,
            data,
        }
    }
}

impl Serialize for MaskSet {
    // Binary cells are written as integers so ground-truth masks stay compact.
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Row<'a>(&'a [f64]);
        impl Serialize for Row<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for &v in self.0 {
                    if v.to_bits() == 0 {
                        seq.serialize_element(&0u8)?;
                    } else if v == 1.0 {
                        seq.serialize_element(&1u8)?;
                    } else {
                        seq.serialize_element(&v)?;
                    }
                }
                seq.end()
            }
        }
        struct Grid<'a>(&'a [f64], usize);
        impl Serialize for Grid<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len() / self.1))?;
                for row in self.0.chunks_exact(self.1) {
                    seq.serialize_element(&Row(row))?;
                }
                seq.end()
            }
        }
        let mut seq = serializer.serialize_seq(Some(self.count))?;
        for i in 0..self.count {
            seq.serialize_element(&Grid(self.mask(i), self.width))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for MaskSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let nested = Vec::<Vec<Vec<f64>>>::deserialize(deserializer)?;
        MaskSet::from_nested(nested).map_err(serde::de::Error::custom)
    }
}

impl MaskSet {
    pub fn from_nested(nested: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let count = nested.len();
        let height = nested.first().map_or(0, Vec::len);
        let width = nested
            .first()
            .and_then(|m| m.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(count * height * width);
        for (i, m) in nested.into_iter().enumerate() {
            if m.len() != height {
                return Err(Error::dim(format!("mask {i} has {} rows, expected {height}", m.len())));
            }
            for (r, row) in m.into_iter().enumerate() {
                if row.len() != width {
                    return Err(Error::dim(format!(
                        "mask {i} row {r} has {} cells, expected {width}",
                        row.len()
                    )));
                }
                data.extend(row);
            }
        }
        Self::new(count, height, width, data)
    }
}

/// Predicted or ground-truth class of one slot. Classes are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Option<usize>", into = "Option<usize>")]
pub enum ClassLabel {
    Class(usize),
    NoObject,
}

impl ClassLabel {
    pub fn is_object(self) -> bool {
        matches!(self, ClassLabel::Class(_))
    }

    /// Column of this label in a probability row with `k` foreground classes.
    pub fn column(self, k: usize) -> usize {
        match self {
            ClassLabel::Class(c) => c - 1,
            ClassLabel::NoObject => k,
        }
    }
}

impl From<Option<usize>> for ClassLabel {
    fn from(v: Option<usize>) -> Self {
        v.map_or(ClassLabel::NoObject, ClassLabel::Class)
    }
}

impl From<ClassLabel> for Option<usize> {
    fn from(l: ClassLabel) -> Self {
        match l {
            ClassLabel::Class(c) => Some(c),
            ClassLabel::NoObject => None,
        }
    }
}

/// Checks entries lie in [0,1] and sum to 1 within [`ROW_SUM_TOLERANCE`].
pub fn validate_prob_row(row: &[f64]) -> Result<()> {
    if row.len() < 2 {
        return Err(Error::invalid("probability row needs K >= 1 classes plus no-object"));
    }
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("probability {v} outside [0,1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::invalid(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, 0 when either vector has (near) zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "cosine similarity of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Probability mass on the K foreground classes.
pub fn foreground_probability(row: &[f64]) -> Result<f64> {
    validate_prob_row(row)?;
    Ok(foreground_unchecked(row))
}

pub(crate) fn foreground_unchecked(row: &[f64]) -> f64 {
    let k = row.len() - 1;
    row[..k].iter().sum::<f64>().clamp(0.0, 1.0)
}

/// Row-wise argmax; the lowest index wins ties, so no-object loses every tie.
pub fn predicted_class(row: &[f64]) -> ClassLabel {
    let k = row.len() - 1;
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    if best == k {
        ClassLabel::NoObject
    } else {
        ClassLabel::Class(best + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn foreground_examples() {
        assert!((foreground_probability(&[0.2, 0.3, 0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(foreground_probability(&[0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(foreground_probability(&[0.6, 0.4, 0.0]).unwrap(), 1.0);
        assert!(foreground_probability(&[0.6, 0.6, 0.0]).is_err());
    }

    #[test]
    fn predicted_class_examples() {
        assert_eq!(predicted_class(&[0.2, 0.3, 0.5]), ClassLabel::NoObject);
        assert_eq!(predicted_class(&[0.7, 0.2, 0.1]), ClassLabel::Class(1));
        assert_eq!(predicted_class(&[0.5, 0.5, 0.0]), ClassLabel::Class(1));
        // no-object loses a tie
        assert_eq!(predicted_class(&[0.0, 0.5, 0.5]), ClassLabel::Class(2));
    }

    #[test]
    fn rejects_non_finite_features() {
        assert!(FeatureMatrix::from_rows(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(FeatureMatrix::from_rows(vec![]).is_err());
        assert!(FeatureMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn mask_serializes_binary_cells_as_integers() {
        let m = MaskSet::new(1, 1, 3, vec![0.0, 1.0, 0.25]).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "[[[0,1,0.25]]]");
        let back: MaskSet = serde_json::from_str("[[[0,1,0.25]]]").unwrap();
        assert_eq!(back, m);
    }

    fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    fn prob_row() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 2..6).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(a in vec_strategy(5), b in vec_strategy(5)) {
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(4), lambda in 1e-3f64..1e3) {
            prop_assume!(norm(&a) > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
            prop_assert!((cosine_similarity(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn foreground_complements_no_object(row in prob_row()) {
            let k = row.len() - 1;
            let p = foreground_probability(&row).unwrap();
            prop_assert!((p + row[k] - 1.0).abs() < 1e-6);
        }

        #[test]
        fn no_object_only_when_strictly_largest(row in prob_row()) {
            let k = row.len() - 1;
            let strictly = row[..k].iter().all(|&v| row[k] > v);
            prop_assert_eq!(predicted_class(&row) == ClassLabel::NoObject, strictly);
        }
    }
}
