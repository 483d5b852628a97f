//! Dense multivariate polynomials over named variables.
//!
//! Terms are keyed by exponent tuples in a `BTreeMap`, so iteration order (and
//! hence every floating-point accumulation) is fixed by the lexicographic order
//! of exponents. Zero coefficients are never stored.

mod hyperbox;
mod serde_impl;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

pub use hyperbox::Hyperbox;

/// Exponent tuple, one entry per variable of the owning polynomial.
pub type Exponents = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("point has {found} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("variable lists differ: {left:?} vs {right:?}")]
    VariableMismatch { left: Vec<String>, right: Vec<String> },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` listed more than once")]
    DuplicateVariable(String),
    #[error("exponent tuple has {found} entries, expected {expected}")]
    ExponentLength { expected: usize, found: usize },
    #[error("moment of order {degree} for `{var}` is required but not supplied")]
    MissingMoment { var: String, degree: u32 },
    #[error("non-finite coefficient {0}")]
    NonFinite(String),
    #[error("box bounds for `{var}` are invalid: lo = {lo}, hi = {hi}")]
    InvalidInterval { var: String, lo: String, hi: String },
}

/// Binary ring operation used by [`Polynomial::combine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq)]
pub struct Polynomial<T> {
    vars: Vec<String>,
    terms: BTreeMap<Exponents, T>,
}

pub(crate) fn check_unique(vars: &[String]) -> Result<(), PolyError> {
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(PolyError::DuplicateVariable(v.clone()));
        }
    }
    Ok(())
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(vars: Vec<String>) -> Result<Self, PolyError> {
        check_unique(&vars)?;
        Ok(Self { vars, terms: BTreeMap::new() })
    }

    pub fn constant(vars: Vec<String>, c: T) -> Result<Self, PolyError> {
        let n = vars.len();
        Self::from_terms(vars, [(vec![0; n], c)])
    }

    /// The polynomial `name` over `vars`.
    pub fn variable(vars: Vec<String>, name: &str) -> Result<Self, PolyError> {
        let idx = vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
        let mut e = vec![0; vars.len()];
        e[idx] = 1;
        Self::from_terms(vars, [(e, T::one())])
    }

    /// Builds a normalized polynomial; repeated exponent tuples are summed.
    pub fn from_terms<I>(vars: Vec<String>, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Exponents, T)>,
    {
        check_unique(&vars)?;
        let n = vars.len();
        let mut map: BTreeMap<Exponents, T> = BTreeMap::new();
        for (e, c) in terms {
            if e.len() != n {
                return Err(PolyError::ExponentLength { expected: n, found: e.len() });
            }
            if !c.is_finite() {
                return Err(PolyError::NonFinite(format!("{c}")));
            }
            *map.entry(e).or_insert_with(T::zero) += c;
        }
        Ok(Self { vars, terms: map }.normalized())
    }

    /// Univariate polynomial from coefficients in ascending degree order.
    pub fn univariate(var: &str, ascending: &[T]) -> Self {
        let terms = ascending
            .iter()
            .enumerate()
            .map(|(k, &c)| (vec![k as u32], c));
        Self::from_terms(vec![var.to_string()], terms).expect("single variable")
    }

    /// Drops exactly-zero coefficients.
    pub fn normalized(mut self) -> Self {
        self.terms.retain(|_, c| *c != T::zero());
        self
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, T)> + '_ {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, exps: &[u32]) -> T {
        self.terms.get(exps).copied().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coefficient(&vec![0; self.nvars()])
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// Degree in each variable separately.
    pub fn degrees(&self) -> Vec<u32> {
        let mut d = vec![0; self.nvars()];
        for e in self.terms.keys() {
            for (dk, &ek) in d.iter_mut().zip(e) {
                *dk = (*dk).max(ek);
            }
        }
        d
    }

    pub fn max_abs_coeff(&self) -> T {
        self.terms.values().fold(T::zero(), |m, c| m.max(c.abs()))
    }

    /// Variables that occur with a nonzero exponent in some term.
    pub fn used_vars(&self) -> Vec<String> {
        let d = self.degrees();
        self.vars
            .iter()
            .zip(d)
            .filter(|(_, d)| *d > 0)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn eval(&self, point: &[T]) -> Result<T, PolyError> {
        if point.len() != self.nvars() {
            return Err(PolyError::DimensionMismatch { expected: self.nvars(), found: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    /// Term-wise evaluation; `point` must have one entry per variable.
    pub fn eval_unchecked(&self, point: &[T]) -> T {
        let mut acc = T::zero();
        for (e, &c) in &self.terms {
            let mut t = c;
            for (&x, &k) in point.iter().zip(e) {
                if k > 0 {
                    t *= x.powi(k as i32);
                }
            }
            acc += t;
        }
        acc
    }

    fn same_vars(&self, other: &Self) -> Result<(), PolyError> {
        if self.vars != other.vars {
            return Err(PolyError::VariableMismatch {
                left: self.vars.clone(),
                right: other.vars.clone(),
            });
        }
        Ok(())
    }

    pub fn combine(&self, other: &Self, op: RingOp) -> Result<Self, PolyError> {
        self.same_vars(other)?;
        let mut terms = self.terms.clone();
        match op {
            RingOp::Add | RingOp::Sub => {
                let sign = if op == RingOp::Add { T::one() } else { -T::one() };
                for (e, &c) in &other.terms {
                    *terms.entry(e.clone()).or_insert_with(T::zero) += sign * c;
                }
            }
            RingOp::Mul => {
                terms.clear();
                for (ea, &ca) in &self.terms {
                    for (eb, &cb) in &other.terms {
                        let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                        *terms.entry(e).or_insert_with(T::zero) += ca * cb;
                    }
                }
            }
        }
        Ok(Self { vars: self.vars.clone(), terms }.normalized())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, RingOp::Add)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, RingOp::Sub)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, RingOp::Mul)
    }

    pub fn scale(&self, c: T) -> Self {
        let terms = self.terms.iter().map(|(e, &v)| (e.clone(), v * c)).collect();
        Self { vars: self.vars.clone(), terms }.normalized()
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_constant(&self, c: T) -> Self {
        let mut out = self.clone();
        *out.terms.entry(vec![0; self.nvars()]).or_insert_with(T::zero) += c;
        out.normalized()
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.vars.clone(), T::one()).expect("vars already checked");
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.try_mul(&base).expect("same vars");
            }
            k >>= 1;
            if k > 0 {
                base = base.try_mul(&base).expect("same vars");
            }
        }
        acc
    }

    /// Formal partial derivative with respect to `var`.
    pub fn differentiate(&self, var: &str) -> Result<Self, PolyError> {
        let idx = self
            .var_index(var)
            .ok_or_else(|| PolyError::UnknownVariable(var.to_string()))?;
        let mut terms = BTreeMap::new();
        for (e, &c) in &self.terms {
            let k = e[idx];
            if k == 0 {
                continue;
            }
            let mut de = e.clone();
            de[idx] = k - 1;
            *terms.entry(de).or_insert_with(T::zero) += c * T::lit(k as f64);
        }
        Ok(Self { vars: self.vars.clone(), terms }.normalized())
    }

    /// Re-expresses the polynomial over `target`, which may reorder, add, or
    /// drop variables. Dropping a variable that actually occurs is an error.
    pub fn align_to(&self, target: &[String]) -> Result<Self, PolyError> {
        check_unique(target)?;
        let degrees = self.degrees();
        let mut map = Vec::with_capacity(self.nvars());
        for (v, d) in self.vars.iter().zip(&degrees) {
            match target.iter().position(|t| t == v) {
                Some(j) => map.push(Some(j)),
                None if *d == 0 => map.push(None),
                None => return Err(PolyError::UnknownVariable(v.clone())),
            }
        }
        let terms = self.terms.iter().map(|(e, &c)| {
            let mut ne = vec![0; target.len()];
            for (k, &ek) in e.iter().enumerate() {
                if let Some(j) = map[k] {
                    ne[j] = ek;
                }
            }
            (ne, c)
        });
        Self::from_terms(target.to_vec(), terms)
    }

    /// Polynomial composition. Each bound variable is replaced by its binding;
    /// unbound variables pass through. The result is expressed over the
    /// unbound variables of `self` followed by any new variables introduced by
    /// the bindings, in order of first appearance.
    pub fn substitute(&self, bindings: &BTreeMap<String, Polynomial<T>>) -> Result<Self, PolyError> {
        for name in bindings.keys() {
            if self.var_index(name).is_none() {
                return Err(PolyError::UnknownVariable(name.clone()));
            }
        }
        let mut out_vars: Vec<String> =
            self.vars.iter().filter(|v| !bindings.contains_key(*v)).cloned().collect();
        for v in &self.vars {
            if let Some(b) = bindings.get(v) {
                for bv in b.vars() {
                    if !out_vars.contains(bv) {
                        out_vars.push(bv.clone());
                    }
                }
            }
        }
        self.substitute_into(bindings, &out_vars)
    }

    /// Like [`substitute`](Self::substitute) but with an explicit result
    /// variable list.
    pub fn substitute_into(
        &self,
        bindings: &BTreeMap<String, Polynomial<T>>,
        out_vars: &[String],
    ) -> Result<Self, PolyError> {
        check_unique(out_vars)?;
        let degrees = self.degrees();
        // images[k][e] = (image of variable k)^e over out_vars
        let mut images: Vec<Vec<Polynomial<T>>> = Vec::with_capacity(self.nvars());
        for (k, v) in self.vars.iter().enumerate() {
            let base = match bindings.get(v) {
                Some(b) => b.align_to(out_vars)?,
                None if degrees[k] == 0 => Polynomial::zero(out_vars.to_vec())?,
                None => Polynomial::variable(out_vars.to_vec(), v)?,
            };
            let mut powers = vec![Polynomial::constant(out_vars.to_vec(), T::one())?];
            for _ in 0..degrees[k] {
                let next = powers.last().unwrap().try_mul(&base)?;
                powers.push(next);
            }
            images.push(powers);
        }
        let mut acc = Polynomial::zero(out_vars.to_vec())?;
        for (e, &c) in &self.terms {
            let mut t = Polynomial::constant(out_vars.to_vec(), c)?;
            for (k, &ek) in e.iter().enumerate() {
                if ek > 0 {
                    t = t.try_mul(&images[k][ek as usize])?;
                }
            }
            acc = acc.try_add(&t)?;
        }
        Ok(acc)
    }

    /// Replaces every power `var^k` by `moments[k]` and removes `var`;
    /// the expectation of the polynomial when `var` is a random variable with
    /// the given raw moments and independent of the remaining variables.
    pub fn expect_over(&self, var: &str, moments: &[T]) -> Result<Self, PolyError> {
        let idx = self
            .var_index(var)
            .ok_or_else(|| PolyError::UnknownVariable(var.to_string()))?;
        let mut vars = self.vars.clone();
        vars.remove(idx);
        let mut terms = Vec::with_capacity(self.terms.len());
        for (e, &c) in &self.terms {
            let k = e[idx];
            let m = moments.get(k as usize).copied().ok_or_else(|| PolyError::MissingMoment {
                var: var.to_string(),
                degree: k,
            })?;
            let mut ne = e.clone();
            ne.remove(idx);
            terms.push((ne, c * m));
        }
        Self::from_terms(vars, terms)
    }

    /// `sum of squares of the listed variables` over `vars`.
    pub fn squared_norm(vars: Vec<String>, of: &[String]) -> Result<Self, PolyError> {
        let n = vars.len();
        let mut terms = Vec::with_capacity(of.len());
        for name in of {
            let idx = vars
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| PolyError::UnknownVariable(name.clone()))?;
            let mut e = vec![0; n];
            e[idx] = 2;
            terms.push((e, T::one()));
        }
        Self::from_terms(vars, terms)
    }

    pub fn map_coeffs<U: Scalar>(&self, f: impl Fn(T) -> U) -> Polynomial<U> {
        let terms = self.terms.iter().map(|(e, &c)| (e.clone(), f(c))).collect();
        Polynomial { vars: self.vars.clone(), terms }.normalized()
    }
}

impl<T: Scalar> fmt::Debug for Polynomial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial[{}]({})", self.vars.join(","), self)
    }
}

impl<T: Scalar> fmt::Display for Polynomial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (e, c)) in self.terms.iter().rev().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (v, &k) in self.vars.iter().zip(e) {
                match k {
                    0 => {}
                    1 => write!(f, "*{v}")?,
                    _ => write!(f, "*{v}^{k}")?,
                }
            }
        }
        Ok(())
    }
}

/// Builds a variable-name vector from string slices.
pub fn var_names(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Raw moments `E[Z^k]`, `k = 0..=max_order`, of a standard Gaussian.
pub fn gaussian_moments<T: Scalar>(max_order: u32) -> Vec<T> {
    let mut m = Vec::with_capacity(max_order as usize + 1);
    for k in 0..=max_order {
        let v = if k == 0 {
            T::one()
        } else if k % 2 == 1 {
            T::zero()
        } else {
            // (k-1)!!
            let mut acc = 1.0f64;
            let mut j = k as i64 - 1;
            while j > 1 {
                acc *= j as f64;
                j -= 2;
            }
            T::lit(acc)
        };
        m.push(v);
    }
    m
}
