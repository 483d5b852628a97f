//! JSON shape of polynomials and boxes:
//! `{"variables": [...], "terms": [{"exponents": [...], "coeff": c}, ...]}` and
//! `[{"var": "x", "lo": 0, "hi": 8}, ...]`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Exponents, Hyperbox, Polynomial};
use crate::scalar::Scalar;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermRepr<T> {
    exponents: Exponents,
    coeff: T,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyRepr<T> {
    variables: Vec<String>,
    terms: Vec<TermRepr<T>>,
}

impl<T: Scalar + Serialize> Serialize for Polynomial<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let repr = PolyRepr {
            variables: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .map(|(e, &c)| TermRepr { exponents: e.clone(), coeff: c })
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Polynomial<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PolyRepr::<T>::deserialize(d)?;
        Polynomial::from_terms(repr.variables, repr.terms.into_iter().map(|t| (t.exponents, t.coeff)))
            .map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntervalRepr<T> {
    var: String,
    lo: T,
    hi: T,
}

impl<T: Scalar + Serialize> Serialize for Hyperbox<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<IntervalRepr<T>> = (0..self.dim())
            .map(|i| IntervalRepr { var: self.vars()[i].clone(), lo: self.lo()[i], hi: self.hi()[i] })
            .collect();
        v.serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Hyperbox<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<IntervalRepr<T>>::deserialize(d)?;
        let (mut vars, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for iv in v {
            vars.push(iv.var);
            lo.push(iv.lo);
            hi.push(iv.hi);
        }
        Hyperbox::new(vars, lo, hi).map_err(D::Error::custom)
    }
}
