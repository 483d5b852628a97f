//! Tensor-product Bernstein coefficients of a polynomial on a box.
//!
//! The range of a polynomial over a box lies between the smallest and largest
//! of its Bernstein coefficients on that box. Bisection uses de Casteljau's
//! algorithm, so children are exact convex re-expansions of the parent.

use std::collections::BTreeMap;

use crate::poly::{Hyperbox, Polynomial};
use crate::scalar::Scalar;

use super::CertifyError;

/// Bernstein expansion of one polynomial on one sub-box.
#[derive(Debug, Clone)]
pub struct BernsteinPatch<T> {
    degrees: Vec<u32>,
    strides: Vec<usize>,
    coeffs: Vec<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    /// Number of bisections applied along each coordinate since the root.
    splits: Vec<u32>,
    depth: u32,
}

fn strides_for(degrees: &[u32]) -> Vec<usize> {
    let mut strides = vec![1usize; degrees.len()];
    for k in (0..degrees.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * (degrees[k + 1] as usize + 1);
    }
    strides
}

/// Visits the starting offset of every fiber along `axis`.
fn fiber_starts(degrees: &[u32], strides: &[usize], axis: usize) -> Vec<usize> {
    let total: usize = degrees.iter().map(|&d| d as usize + 1).product();
    let len = degrees[axis] as usize + 1;
    (0..total)
        .filter(|&i| (i / strides[axis]).is_multiple_of(len))
        .collect()
}

impl<T: Scalar> BernsteinPatch<T> {
    /// Expands `p` on `region`; returns the patch and the floating-point
    /// margin `eps_rel · max|coeff|` of the unit-box power form.
    pub fn new(
        p: &Polynomial<T>,
        region: &Hyperbox<T>,
        eps_rel: T,
        degree_cap: u32,
    ) -> Result<(Self, T), CertifyError> {
        if p.vars() != region.vars() {
            return Err(CertifyError::BoxMismatch {
                poly: p.vars().to_vec(),
                region: region.vars().to_vec(),
            });
        }
        let deg = p.degree();
        if deg > degree_cap {
            return Err(CertifyError::DegreeCap { degree: deg, cap: degree_cap });
        }
        // x_k = lo_k + w_k t_k
        let vars = p.vars().to_vec();
        let mut bindings = BTreeMap::new();
        for (k, v) in vars.iter().enumerate() {
            let (l, h) = region.interval(k);
            let t = Polynomial::variable(vars.clone(), v)?.scale(h - l).add_constant(l);
            bindings.insert(v.clone(), t);
        }
        let unit = p.substitute_into(&bindings, &vars)?;
        let eps = eps_rel * unit.max_abs_coeff();

        let degrees = p.degrees();
        let strides = strides_for(&degrees);
        let total: usize = degrees.iter().map(|&d| d as usize + 1).product();
        let mut coeffs = vec![T::zero(); total];
        for (e, c) in unit.terms() {
            let idx: usize = e.iter().zip(&strides).map(|(&ek, &s)| ek as usize * s).sum();
            coeffs[idx] = c;
        }
        // power -> Bernstein, one axis at a time
        for axis in 0..degrees.len() {
            let d = degrees[axis] as usize;
            if d == 0 {
                continue;
            }
            let binom = binomial_table::<T>(d);
            let s = strides[axis];
            let mut fiber = vec![T::zero(); d + 1];
            for start in fiber_starts(&degrees, &strides, axis) {
                for (i, f) in fiber.iter_mut().enumerate() {
                    *f = coeffs[start + i * s];
                }
                for j in 0..=d {
                    let mut acc = T::zero();
                    for i in 0..=j {
                        acc += binom[j][i] / binom[d][i] * fiber[i];
                    }
                    coeffs[start + j * s] = acc;
                }
            }
        }
        let n = degrees.len();
        Ok((
            Self {
                degrees,
                strides,
                coeffs,
                lo: region.lo().to_vec(),
                hi: region.hi().to_vec(),
                splits: vec![0; n],
                depth: 0,
            },
            eps,
        ))
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    /// `(min, max)` of the Bernstein coefficients, without margin.
    pub fn coefficient_range(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for &c in &self.coeffs {
            lo = lo.min(c);
            hi = hi.max(c);
        }
        (lo, hi)
    }

    pub fn center(&self) -> Vec<T> {
        let half = T::lit(0.5);
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| l + (h - l) * half).collect()
    }

    /// Corner whose Bernstein coefficient is smallest; that coefficient is the
    /// polynomial's value there.
    pub fn lowest_corner(&self) -> Vec<T> {
        let n = self.degrees.len();
        let mut best = None::<(T, usize)>;
        for mask in 0..(1usize << n) {
            let idx: usize = (0..n)
                .map(|k| if mask >> k & 1 == 1 { self.degrees[k] as usize * self.strides[k] } else { 0 })
                .sum();
            let c = self.coeffs[idx];
            if best.is_none_or(|(b, _)| c < b) {
                best = Some((c, mask));
            }
        }
        let mask = best.map_or(0, |(_, m)| m);
        (0..n)
            .map(|k| if mask >> k & 1 == 1 { self.hi[k] } else { self.lo[k] })
            .collect()
    }

    /// Coordinate to bisect: the longest edge relative to the root box, ties
    /// to the lowest index. Coordinates the polynomial does not depend on are
    /// never split. `None` when no coordinate can be split.
    pub fn split_axis(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for k in 0..self.degrees.len() {
            if self.degrees[k] == 0 || self.lo[k] == self.hi[k] {
                continue;
            }
            match best {
                None => best = Some(k),
                Some(b) if self.splits[k] < self.splits[b] => best = Some(k),
                _ => {}
            }
        }
        best
    }

    /// Bisects along `axis` at the midpoint.
    pub fn split(&self, axis: usize) -> (Self, Self) {
        let d = self.degrees[axis] as usize;
        let s = self.strides[axis];
        let mut left = self.clone();
        let mut right = self.clone();
        let half = T::lit(0.5);
        let mut work = vec![T::zero(); d + 1];
        for start in fiber_starts(&self.degrees, &self.strides, axis) {
            for (i, w) in work.iter_mut().enumerate() {
                *w = self.coeffs[start + i * s];
            }
            left.coeffs[start] = work[0];
            right.coeffs[start + d * s] = work[d];
            for r in 1..=d {
                for i in 0..=(d - r) {
                    work[i] = (work[i] + work[i + 1]) * half;
                }
                left.coeffs[start + r * s] = work[0];
                right.coeffs[start + (d - r) * s] = work[d - r];
            }
        }
        let mid = self.lo[axis] + (self.hi[axis] - self.lo[axis]) * half;
        left.hi[axis] = mid;
        right.lo[axis] = mid;
        for child in [&mut left, &mut right] {
            child.splits[axis] += 1;
            child.depth += 1;
        }
        (left, right)
    }
}

fn binomial_table<T: Scalar>(n: usize) -> Vec<Vec<T>> {
    let mut t = vec![vec![T::zero(); n + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = T::one();
        for j in 1..=i {
            t[i][j] = t[i - 1][j - 1] + if j < i { t[i - 1][j] } else { T::zero() };
        }
    }
    t
}
