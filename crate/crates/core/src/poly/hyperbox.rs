use crate::scalar::Scalar;

use super::{check_unique, PolyError};

/// Axis-aligned box: one closed interval per named variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperbox<T> {
    vars: Vec<String>,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> Hyperbox<T> {
    pub fn new(vars: Vec<String>, lo: Vec<T>, hi: Vec<T>) -> Result<Self, PolyError> {
        check_unique(&vars)?;
        if lo.len() != vars.len() || hi.len() != vars.len() {
            return Err(PolyError::DimensionMismatch {
                expected: vars.len(),
                found: lo.len().max(hi.len()),
            });
        }
        for ((v, &l), &h) in vars.iter().zip(&lo).zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(PolyError::InvalidInterval {
                    var: v.clone(),
                    lo: format!("{l}"),
                    hi: format!("{h}"),
                });
            }
        }
        Ok(Self { vars, lo, hi })
    }

    pub fn from_intervals<'a, I>(intervals: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (&'a str, T, T)>,
    {
        let mut vars = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (v, l, h) in intervals {
            vars.push(v.to_string());
            lo.push(l);
            hi.push(h);
        }
        Self::new(vars, lo, hi)
    }

    /// Zero-dimensional box (no variables).
    pub fn empty() -> Self {
        Self { vars: Vec::new(), lo: Vec::new(), hi: Vec::new() }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn interval(&self, i: usize) -> (T, T) {
        (self.lo[i], self.hi[i])
    }

    pub fn width(&self, i: usize) -> T {
        self.hi[i] - self.lo[i]
    }

    pub fn center(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| l + (h - l) * half).collect()
    }

    pub fn contains_point(&self, p: &[T]) -> bool {
        p.len() == self.dim() && p.iter().zip(&self.lo).zip(&self.hi).all(|((&x, &l), &h)| l <= x && x <= h)
    }

    /// `other ⊆ self`, matching variables by name. Boxes over different
    /// variable sets are never contained in each other.
    pub fn contains_box(&self, other: &Self) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        other.vars.iter().enumerate().all(|(j, v)| match self.vars.iter().position(|s| s == v) {
            Some(i) => self.lo[i] <= other.lo[j] && other.hi[j] <= self.hi[i],
            None => false,
        })
    }

    /// Containment comparing intervals positionally, ignoring variable names.
    pub fn contains_box_positional(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Cartesian product; variable names must be disjoint.
    pub fn product(&self, other: &Self) -> Result<Self, PolyError> {
        let mut vars = self.vars.clone();
        vars.extend(other.vars.iter().cloned());
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        Self::new(vars, lo, hi)
    }

    /// Sub-box over a contiguous range of coordinates, keeping names.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            vars: self.vars[range.clone()].to_vec(),
            lo: self.lo[range.clone()].to_vec(),
            hi: self.hi[range].to_vec(),
        }
    }

    /// Same intervals under new variable names.
    pub fn renamed(&self, vars: Vec<String>) -> Result<Self, PolyError> {
        Self::new(vars, self.lo.clone(), self.hi.clone())
    }

    /// Reorders the box to follow `vars` (a permutation of its own variables).
    pub fn reorder_to(&self, vars: &[String]) -> Result<Self, PolyError> {
        if vars.len() != self.dim() {
            return Err(PolyError::VariableMismatch { left: self.vars.clone(), right: vars.to_vec() });
        }
        let mut lo = Vec::with_capacity(vars.len());
        let mut hi = Vec::with_capacity(vars.len());
        for v in vars {
            let i = self
                .vars
                .iter()
                .position(|s| s == v)
                .ok_or_else(|| PolyError::UnknownVariable(v.clone()))?;
            lo.push(self.lo[i]);
            hi.push(self.hi[i]);
        }
        Self::new(vars.to_vec(), lo, hi)
    }

    /// `max ‖p‖²` over the box.
    pub fn sup_sq_norm(&self) -> T {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l * l).max(h * h)).sum()
    }

    /// All `2^dim` corners, in binary counting order over the coordinates.
    pub fn vertices(&self) -> Vec<Vec<T>> {
        let d = self.dim();
        (0..(1usize << d))
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// Maps unit-cube coordinates `t ∈ [0,1]^d` into the box.
    pub fn from_unit(&self, t: &[T]) -> Vec<T> {
        t.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&ti, (&l, &h))| l + (h - l) * ti)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::var_names;

    #[test]
    fn invalid_intervals_rejected() {
        assert!(Hyperbox::new(var_names(&["x"]), vec![1.0], vec![0.0]).is_err());
        assert!(Hyperbox::new(var_names(&["x"]), vec![f64::NAN], vec![0.0]).is_err());
        assert!(Hyperbox::new(var_names(&["x", "y"]), vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn containment_by_name() {
        let big = Hyperbox::from_intervals([("x", 0.0, 8.0), ("y", -1.0, 1.0)]).unwrap();
        let small = Hyperbox::from_intervals([("y", 0.0, 1.0), ("x", 7.0, 8.0)]).unwrap();
        assert!(big.contains_box(&small));
        assert!(!small.contains_box(&big));
        let other = Hyperbox::from_intervals([("z", 0.0, 1.0), ("x", 7.0, 8.0)]).unwrap();
        assert!(!big.contains_box(&other));
        assert!(big.contains_box_positional(&Hyperbox::from_intervals([("a", 1.0, 2.0), ("b", 0.0, 0.5)]).unwrap()));
    }

    #[test]
    fn sup_norm_and_vertices() {
        let w = Hyperbox::from_intervals([("w1", 0.0, 8.0), ("w2", 0.0, 8.0)]).unwrap();
        assert_eq!(w.sup_sq_norm(), 128.0);
        let v = w.vertices();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], vec![0.0, 0.0]);
        assert_eq!(v[3], vec![8.0, 8.0]);
        let m = Hyperbox::from_intervals([("x", -3.0, 2.0)]).unwrap();
        assert_eq!(m.sup_sq_norm(), 9.0);
    }
}
