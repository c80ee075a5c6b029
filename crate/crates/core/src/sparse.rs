//! Coordinate-format sparse N-dimensional array.
//!
//! Stores only the nonzero entries of an N-dimensional array as
//! `(position, value)` pairs. This is the storage used when assembling
//! the large, structurally sparse gradient matrices of network equilibrium
//! models, where variables and constraints naturally carry three or more
//! indices (supplier, node, arc, year, ...).
//!
//! Two insertion paths are provided, mirroring the usual COO trade-off:
//!
//! * [`SparseNdArray::set_entry`] checks for an existing entry at the
//!   position and overwrites it (slower, always unambiguous);
//! * [`SparseNdArray::add_entry`] appends blindly (fast assembly path) and
//!   may create duplicates, which must be resolved with
//!   [`SparseNdArray::remove_duplicates_with`] before point reads.
//!
//! Reading through a duplicated position is an error rather than a silent
//! sum, so an illegal assembly sequence surfaces instead of corrupting a
//! gradient. Iteration order after deduplication is lexicographic by
//! position, which keeps downstream assembly reproducible.

use crate::error::{Error, Result};

/// Default tolerance below which `flush` discards stored values.
pub const DEFAULT_FLUSH_TOL: f64 = 1e-5;

/// Coordinate-format sparse array of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseNdArray {
    shape: Vec<usize>,
    entries: Vec<(Vec<usize>, f64)>,
    /// Set after `add_entry`; cleared once duplicates are provably resolved.
    maybe_duplicates: bool,
}

impl SparseNdArray {
    /// Create an empty array of the given shape. Every extent must be ≥ 1.
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidShape("shape must have rank ≥ 1".into()));
        }
        if let Some(bad) = shape.iter().find(|&&e| e == 0) {
            return Err(Error::InvalidShape(format!(
                "all extents must be ≥ 1, got {bad} in {shape:?}"
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            entries: Vec::new(),
            maybe_duplicates: false,
        })
    }

    /// Build from a dense row-major buffer, keeping entries with |v| > tol.
    pub fn from_dense(shape: &[usize], dense: &[f64], tol: f64) -> Result<Self> {
        let mut arr = Self::new(shape)?;
        let expected: usize = shape.iter().product();
        if dense.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "dense buffer",
                expected,
                got: dense.len(),
            });
        }
        let mut pos = vec![0usize; shape.len()];
        for &v in dense {
            if v.abs() > tol {
                arr.entries.push((pos.clone(), v));
            }
            // row-major odometer increment
            for axis in (0..shape.len()).rev() {
                pos[axis] += 1;
                if pos[axis] < shape[axis] {
                    break;
                }
                pos[axis] = 0;
            }
        }
        Ok(arr)
    }

    /// Shape of the underlying dense array.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Rank (number of axes).
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of stored entries (including any unresolved duplicates).
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    fn check_position(&self, position: &[usize]) -> Result<()> {
        if position.len() != self.shape.len()
            || position.iter().zip(&self.shape).any(|(&p, &e)| p >= e)
        {
            return Err(Error::IndexOutOfBounds {
                position: position.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Overwrite-or-insert the value at `position`.
    pub fn set_entry(&mut self, position: &[usize], value: f64) -> Result<()> {
        self.check_position(position)?;
        match self.entries.iter_mut().find(|(p, _)| p == position) {
            Some((_, v)) => *v = value,
            None => self.entries.push((position.to_vec(), value)),
        }
        Ok(())
    }

    /// Append an entry without checking for duplicates (fast assembly path).
    pub fn add_entry(&mut self, position: &[usize], value: f64) -> Result<()> {
        self.check_position(position)?;
        self.entries.push((position.to_vec(), value));
        self.maybe_duplicates = true;
        Ok(())
    }

    /// Value at `position`; zero when nothing is stored there.
    ///
    /// Fails with [`Error::DuplicatePosition`] when `add_entry` left more
    /// than one value at the position.
    pub fn get_entry(&self, position: &[usize]) -> Result<f64> {
        self.check_position(position)?;
        let mut found = None;
        for (p, v) in &self.entries {
            if p == position {
                if found.is_some() {
                    return Err(Error::DuplicatePosition(position.to_vec()));
                }
                found = Some(*v);
            }
        }
        Ok(found.unwrap_or(0.0))
    }

    /// Drop entries with |value| ≤ `tol` and sort the remainder.
    ///
    /// Duplicate positions must be resolved first; flushing does not combine
    /// them.
    pub fn flush(&mut self, tol: f64) {
        self.entries.retain(|(_, v)| v.abs() > tol);
        self.sort_entries();
    }

    /// Swap two axes, permuting the shape and every stored position.
    pub fn swapaxes(&mut self, axis_a: usize, axis_b: usize) -> Result<()> {
        let rank = self.rank();
        if axis_a >= rank || axis_b >= rank {
            return Err(Error::InvalidShape(format!(
                "axes ({axis_a},{axis_b}) out of range for rank {rank}"
            )));
        }
        self.shape.swap(axis_a, axis_b);
        for (p, _) in &mut self.entries {
            p.swap(axis_a, axis_b);
        }
        Ok(())
    }

    /// Combine stored duplicates with `combine` (an associative reduction,
    /// e.g. `|a, b| a + b`), then sort entries lexicographically.
    pub fn remove_duplicates_with(&mut self, combine: impl Fn(f64, f64) -> f64) {
        self.sort_entries();
        let mut merged: Vec<(Vec<usize>, f64)> = Vec::with_capacity(self.entries.len());
        for (p, v) in self.entries.drain(..) {
            match merged.last_mut() {
                Some((lp, lv)) if *lp == p => *lv = combine(*lv, v),
                _ => merged.push((p, v)),
            }
        }
        self.entries = merged;
        self.maybe_duplicates = false;
    }

    /// Replace any set of duplicates with the given scalar.
    pub fn remove_duplicates_replace(&mut self, replacement: f64) {
        self.sort_entries();
        let mut merged: Vec<(Vec<usize>, f64)> = Vec::with_capacity(self.entries.len());
        for (p, v) in self.entries.drain(..) {
            match merged.last_mut() {
                Some((lp, lv)) if *lp == p => *lv = replacement,
                _ => merged.push((p, v)),
            }
        }
        self.entries = merged;
        self.maybe_duplicates = false;
    }

    /// Resolve duplicates at one position only, combining with `combine`.
    pub fn remove_duplicates_at(
        &mut self,
        position: &[usize],
        combine: impl Fn(f64, f64) -> f64,
    ) -> Result<()> {
        self.check_position(position)?;
        let mut acc: Option<f64> = None;
        let mut remaining = Vec::with_capacity(self.entries.len());
        for (p, v) in self.entries.drain(..) {
            if p == position {
                acc = Some(match acc {
                    Some(a) => combine(a, v),
                    None => v,
                });
            } else {
                remaining.push((p, v));
            }
        }
        self.entries = remaining;
        if let Some(v) = acc {
            self.entries.push((position.to_vec(), v));
        }
        Ok(())
    }

    /// Materialize as a dense row-major buffer.
    ///
    /// Duplicate positions must be resolved first.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let mut dense = vec![0.0; self.shape.iter().product()];
        let mut seen: Vec<bool> = vec![false; dense.len()];
        for (p, v) in &self.entries {
            let idx = self.linear_index(p);
            if seen[idx] {
                return Err(Error::DuplicatePosition(p.clone()));
            }
            seen[idx] = true;
            dense[idx] = *v;
        }
        Ok(dense)
    }

    /// Row-major linear index of a position (positions are not re-checked).
    pub fn linear_index(&self, position: &[usize]) -> usize {
        let mut idx = 0;
        for (p, e) in position.iter().zip(&self.shape) {
            idx = idx * e + p;
        }
        idx
    }

    /// Iterate over `(position, value)` pairs in storage order.
    ///
    /// The order is deterministic: lexicographic by position once duplicates
    /// have been resolved (which sorts), insertion order before that.
    pub fn iterate(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.entries.iter().map(|(p, v)| (p.as_slice(), *v))
    }

    /// Whether `add_entry` may have left unresolved duplicates.
    pub fn has_possible_duplicates(&self) -> bool {
        self.maybe_duplicates
    }

    /// Text dump: a header line with the shape, then one line per entry as
    /// `i,j,...,k<TAB>value`.
    pub fn write_text_dump<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let shape: Vec<String> = self.shape.iter().map(|e| e.to_string()).collect();
        writeln!(w, "shape\t{}", shape.join(","))?;
        for (p, v) in &self.entries {
            let pos: Vec<String> = p.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{}\t{:.16e}", pos.join(","), v)?;
        }
        Ok(())
    }

    fn sort_entries(&mut self) {
        self.entries.sort_by(|(a, _), (b, _)| a.cmp(b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_empty_has_no_entries() {
        let a = SparseNdArray::new(&[2, 3, 4]).unwrap();
        assert_eq!(a.size(), 0);
        assert_eq!(a.shape(), &[2, 3, 4]);
        // 24 logical zeros
        assert_eq!(a.to_dense().unwrap(), vec![0.0; 24]);
    }

    #[test]
    fn rank_one_singleton() {
        let a = SparseNdArray::new(&[1]).unwrap();
        assert_eq!(a.rank(), 1);
        assert_eq!(a.get_entry(&[0]).unwrap(), 0.0);
    }

    #[test]
    fn gas_model_sized_shape() {
        // nodes × suppliers × years slot of the continental gas model
        let a = SparseNdArray::new(&[17, 13, 7]).unwrap();
        assert_eq!(a.shape(), &[17, 13, 7]);
        assert_eq!(a.size(), 0);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            SparseNdArray::new(&[2, 0, 4]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(SparseNdArray::new(&[]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn set_entry_overwrites() {
        let mut a = SparseNdArray::new(&[2, 2]).unwrap();
        a.set_entry(&[0, 0], 5.0).unwrap();
        a.set_entry(&[0, 0], 7.0).unwrap();
        assert_eq!(a.get_entry(&[0, 0]).unwrap(), 7.0);
        assert_eq!(a.size(), 1);
    }

    #[test]
    fn flush_drops_zeros() {
        let mut a = SparseNdArray::new(&[2, 3]).unwrap();
        a.set_entry(&[1, 2], 0.0).unwrap();
        a.flush(DEFAULT_FLUSH_TOL);
        assert_eq!(a.size(), 0);
    }

    #[test]
    fn distinct_positions_count() {
        let mut a = SparseNdArray::new(&[5, 5]).unwrap();
        for k in 0..5 {
            a.set_entry(&[k, (k + 1) % 5], k as f64 + 1.0).unwrap();
        }
        assert_eq!(a.size(), 5);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let mut a = SparseNdArray::new(&[2, 2]).unwrap();
        assert!(matches!(
            a.set_entry(&[2, 0], 1.0),
            Err(Error::IndexOutOfBounds { .. })
        ));
        assert!(matches!(
            a.set_entry(&[0, 0, 0], 1.0),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn swapaxes_is_involution() {
        let mut a = SparseNdArray::new(&[2, 3, 4]).unwrap();
        a.set_entry(&[1, 2, 3], 6.0).unwrap();
        a.set_entry(&[0, 1, 2], -1.5).unwrap();
        let original = a.clone();
        a.swapaxes(0, 2).unwrap();
        assert_eq!(a.shape(), &[4, 3, 2]);
        assert_eq!(a.get_entry(&[3, 2, 1]).unwrap(), 6.0);
        a.swapaxes(0, 2).unwrap();
        assert_eq!(a, original);
    }

    #[test]
    fn add_entry_then_sum_duplicates() {
        let mut a = SparseNdArray::new(&[2, 2]).unwrap();
        a.add_entry(&[0, 0], 2.0).unwrap();
        a.add_entry(&[0, 0], 2.0).unwrap();
        // ambiguous until resolved
        assert!(matches!(
            a.get_entry(&[0, 0]),
            Err(Error::DuplicatePosition(_))
        ));
        assert!(a.to_dense().is_err());
        a.remove_duplicates_with(|x, y| x + y);
        assert_eq!(a.get_entry(&[0, 0]).unwrap(), 4.0);
        assert!(!a.has_possible_duplicates());
    }

    #[test]
    fn replace_duplicates_with_scalar() {
        let mut a = SparseNdArray::new(&[3]).unwrap();
        a.add_entry(&[1], 2.0).unwrap();
        a.add_entry(&[1], 5.0).unwrap();
        a.remove_duplicates_replace(0.0);
        assert_eq!(a.get_entry(&[1]).unwrap(), 0.0);
    }

    #[test]
    fn remove_duplicates_at_single_position() {
        let mut a = SparseNdArray::new(&[3]).unwrap();
        a.add_entry(&[0], 1.0).unwrap();
        a.add_entry(&[0], 3.0).unwrap();
        a.add_entry(&[2], 7.0).unwrap();
        a.remove_duplicates_at(&[0], |x, y| x + y).unwrap();
        assert_eq!(a.get_entry(&[0]).unwrap(), 4.0);
        assert_eq!(a.get_entry(&[2]).unwrap(), 7.0);
    }

    #[test]
    fn dense_roundtrip_exact() {
        let dense: Vec<f64> = vec![0.0, 1.0, -2.0, 0.0, 3.5, 0.0, 0.25, -0.75];
        let a = SparseNdArray::from_dense(&[2, 2, 2], &dense, 0.0).unwrap();
        assert_eq!(a.to_dense().unwrap(), dense);
        assert_eq!(a.size(), 5);
    }

    #[test]
    fn flush_perturbs_dense_by_at_most_tol() {
        let mut a = SparseNdArray::new(&[4]).unwrap();
        a.set_entry(&[0], 1.0).unwrap();
        a.set_entry(&[1], 9e-6).unwrap();
        a.set_entry(&[2], -9e-6).unwrap();
        let before = a.to_dense().unwrap();
        a.flush(DEFAULT_FLUSH_TOL);
        let after = a.to_dense().unwrap();
        for (b, c) in before.iter().zip(&after) {
            assert!((b - c).abs() <= DEFAULT_FLUSH_TOL);
        }
        assert_eq!(a.size(), 1);
    }

    #[test]
    fn iteration_is_lexicographic_after_dedup() {
        let mut a = SparseNdArray::new(&[3, 3]).unwrap();
        a.add_entry(&[2, 0], 1.0).unwrap();
        a.add_entry(&[0, 1], 2.0).unwrap();
        a.add_entry(&[1, 2], 3.0).unwrap();
        a.remove_duplicates_with(|x, y| x + y);
        let positions: Vec<Vec<usize>> = a.iterate().map(|(p, _)| p.to_vec()).collect();
        assert_eq!(positions, vec![vec![0, 1], vec![1, 2], vec![2, 0]]);
    }

    #[test]
    fn text_dump_format() {
        let mut a = SparseNdArray::new(&[2, 2]).unwrap();
        a.set_entry(&[1, 0], 2.5).unwrap();
        let mut buf = Vec::new();
        a.write_text_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "shape\t2,2");
        let entry = lines.next().unwrap();
        assert!(entry.starts_with("1,0\t2.5"));
    }
}
