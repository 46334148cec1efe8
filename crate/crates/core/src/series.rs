//! Truncated multivariate Laurent series with exact coefficients.
//!
//! A [`TruncatedSeries`] stores a sparse map from exponent vectors to
//! coefficients together with, per variable, an inclusive upper `window` up
//! to which coefficients are guaranteed exact (`None` = no truncation) and a
//! lower `floor` bounding the true support from below. Every operation
//! tightens windows so that all stored coefficients stay exact; a coefficient
//! outside the window is an error, never a silently wrong value.
//!
//! The window of a product is `min(w_a(v) + floor_b(v), w_b(v) + floor_a(v))`
//! per variable. With nonnegative floors this is the plain intersection of
//! windows; the floor terms are what keeps the rule sound when Laurent
//! factors with negative exponents are multiplied.

use num::bigint::BigInt;
use num::BigRational;
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Arbitrary-precision rational scalar used throughout the crate.
pub type Rat = BigRational;

/// `n` as a rational.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// `n/d` as a rational. Panics on `d = 0`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// `n!` as a rational.
pub fn factorial(n: u64) -> Rat {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    Rat::from_integer(acc)
}

/// Odd double factorial `(2m-1)!! = 1*3*5*...*(2m-1)`; `m = 0` gives 1.
pub fn double_factorial_odd(m: u64) -> Rat {
    let mut acc = BigInt::one();
    for k in 0..m {
        acc *= BigInt::from(2 * k + 1);
    }
    Rat::from_integer(acc)
}

/// Binomial coefficient `C(n, k)` as a rational, `n` possibly negative or
/// fractional (generalized binomial).
pub fn binomial(n: &Rat, k: u64) -> Rat {
    let mut acc = Rat::one();
    for j in 0..k {
        acc *= n - rat_int(j as i64);
        acc /= rat_int((j + 1) as i64);
    }
    acc
}

/// An ordered list of variable names shared by a family of series.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct Vars(Arc<Vec<String>>);

impl Vars {
    pub fn new(names: &[&str]) -> Self {
        Vars(Arc::new(names.iter().map(|s| s.to_string()).collect()))
    }

    pub fn from_names(names: Vec<String>) -> Self {
        Vars(Arc::new(names))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }

    /// Index of a variable by name. Panics if absent: a missing variable is a
    /// programming error, not a data condition.
    pub fn idx(&self, name: &str) -> usize {
        self.find(name)
            .unwrap_or_else(|| panic!("variable `{name}` not in {:?}", self.0))
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }
}

/// Coefficient ring abstraction: exact rationals, or rational functions for
/// series whose coefficients carry spectator variables.
pub trait Coeff: Clone + PartialEq + fmt::Debug {
    fn c_zero() -> Self;
    fn c_one() -> Self;
    fn c_is_zero(&self) -> bool;
    fn c_add(&self, other: &Self) -> Self;
    fn c_sub(&self, other: &Self) -> Self;
    fn c_mul(&self, other: &Self) -> Self;
    fn c_neg(&self) -> Self;
    fn c_mul_rat(&self, r: &Rat) -> Self;
    /// Multiplicative inverse, `None` if the element is not invertible.
    fn c_inv(&self) -> Option<Self>;
}

impl Coeff for Rat {
    fn c_zero() -> Self {
        Rat::zero()
    }
    fn c_one() -> Self {
        Rat::one()
    }
    fn c_is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn c_add(&self, other: &Self) -> Self {
        self + other
    }
    fn c_sub(&self, other: &Self) -> Self {
        self - other
    }
    fn c_mul(&self, other: &Self) -> Self {
        self * other
    }
    fn c_neg(&self) -> Self {
        -self
    }
    fn c_mul_rat(&self, r: &Rat) -> Self {
        self * r
    }
    fn c_inv(&self) -> Option<Self> {
        if Zero::is_zero(self) {
            None
        } else {
            Some(self.recip())
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CalcError {
    #[error("series is not invertible: {0}")]
    NonInvertible(String),
    #[error("residue present: exponent -1 in `{0}` has a nonzero coefficient")]
    ResiduePresent(String),
    #[error("constant term present; the exponential would not be rational")]
    ConstantTermPresent,
    #[error("leading term is not the unit constant")]
    NotUnitLeading,
    #[error("composition does not converge in the truncation order: {0}")]
    NonConvergentComposition(String),
    #[error("requested coefficient lies outside the truncation window: {0}")]
    OutOfTruncationWindow(String),
    #[error("evaluation hits a pole: {0}")]
    PoleAtEvaluation(String),
    #[error("derivative is identically zero: {0}")]
    ZeroDerivative(String),
    #[error("coordinate change is not invertible: {0}")]
    NonInvertibleCoordinate(String),
    #[error("computation needs data beyond the truncation order: {0}")]
    TruncationExceeded(String),
    #[error("same-vertex pair edge evaluated without diagonal regularization: {0}")]
    DiagonalPoleUnregularized(String),
    #[error("quadratic form of the integral is not invertible: {0}")]
    NonInvertibleQuadraticForm(String),
    #[error("integrand violates the scaling precondition: {0}")]
    ScalingPreconditionViolated(String),
    #[error("pole order too low: {0}")]
    PoleOrderTooLow(String),
    #[error("point is not regular for the system: {0}")]
    NotRegularPoint(String),
    #[error("pair correlator is not in standard kernel form: {0}")]
    NotStandardKernel(String),
    #[error("kernel normalization failed: {0}")]
    NormalizationFailure(String),
    #[error("coordinate normalization obstructed in degree {0}")]
    ObstructionFound(i64),
}

pub type SResult<T> = Result<T, CalcError>;

fn wadd(w: Option<i64>, d: i64) -> Option<i64> {
    w.map(|x| x + d)
}

fn wmin(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (None, x) => x,
        (x, None) => x,
        (Some(a), Some(b)) => Some(a.min(b)),
    }
}

/// Sparse truncated Laurent series in the variables of `vars`.
#[derive(Clone, Debug)]
pub struct TruncatedSeries<C: Coeff> {
    vars: Vars,
    /// Per-variable inclusive upper bound of guaranteed coefficients;
    /// `None` means the series is exact in that variable.
    windows: Vec<Option<i64>>,
    /// Per-variable lower bound of the true support (including terms that
    /// truncation has dropped). Conservative: may be lower than the actual
    /// minimum.
    floors: Vec<i64>,
    terms: BTreeMap<Vec<i64>, C>,
}

/// Series over plain rationals, the common case.
pub type QSeries = TruncatedSeries<Rat>;

impl<C: Coeff> PartialEq for TruncatedSeries<C> {
    /// Structural equality: same variables, same windows, same terms.
    /// Floors are bookkeeping, not part of the mathematical value.
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.windows == other.windows && self.terms == other.terms
    }
}

impl<C: Coeff> TruncatedSeries<C> {
    pub fn zero(vars: &Vars) -> Self {
        TruncatedSeries {
            vars: vars.clone(),
            windows: vec![None; vars.len()],
            floors: vec![0; vars.len()],
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &Vars, c: C) -> Self {
        let mut s = Self::zero(vars);
        if !c.c_is_zero() {
            s.terms.insert(vec![0; vars.len()], c);
        }
        s
    }

    pub fn one(vars: &Vars) -> Self {
        Self::constant(vars, C::c_one())
    }

    /// Single term `c * prod v_i^{exps_i}`, exact.
    pub fn monomial(vars: &Vars, exps: &[i64], c: C) -> Self {
        assert_eq!(exps.len(), vars.len(), "exponent vector length mismatch");
        let mut s = Self::zero(vars);
        if !c.c_is_zero() {
            s.floors.copy_from_slice(exps);
            s.terms.insert(exps.to_vec(), c);
        }
        s
    }

    /// `v^k` as an exact series.
    pub fn var_pow(vars: &Vars, v: &str, k: i64) -> Self {
        let mut exps = vec![0; vars.len()];
        exps[vars.idx(v)] = k;
        Self::monomial(vars, &exps, C::c_one())
    }

    /// Exact series from a list of terms. The claimed support is exactly the
    /// given terms, so floors are their componentwise minimum.
    pub fn from_terms(vars: &Vars, terms: impl IntoIterator<Item = (Vec<i64>, C)>) -> Self {
        let mut s = Self::zero(vars);
        let mut floors = vec![i64::MAX; vars.len()];
        for (e, c) in terms {
            assert_eq!(e.len(), vars.len(), "exponent vector length mismatch");
            if c.c_is_zero() {
                continue;
            }
            for (i, &ei) in e.iter().enumerate() {
                floors[i] = floors[i].min(ei);
            }
            let entry = s.terms.entry(e).or_insert_with(C::c_zero);
            *entry = entry.c_add(&c);
        }
        s.terms.retain(|_, c| !c.c_is_zero());
        if !s.terms.is_empty() {
            s.floors = floors;
        }
        s
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn windows(&self) -> &[Option<i64>] {
        &self.windows
    }

    pub fn window_of(&self, v: &str) -> Option<i64> {
        self.windows[self.vars.idx(v)]
    }

    pub fn floors(&self) -> &[i64] {
        &self.floors
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &C)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// True when the series is identically zero as an exact object (no terms
    /// and no truncation that could hide terms).
    pub fn is_exact_zero(&self) -> bool {
        self.terms.is_empty() && self.windows.iter().all(|w| w.is_none())
    }

    /// True when no terms are stored (the series may still be nonzero beyond
    /// a finite window).
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn drop_outside_windows(&mut self) {
        let windows = self.windows.clone();
        self.terms.retain(|e, c| {
            !c.c_is_zero()
                && e.iter()
                    .zip(&windows)
                    .all(|(&ei, w)| w.map_or(true, |w| ei <= w))
        });
    }

    /// Tighten the window of one variable. Widening is not possible: the
    /// wider coefficients were never computed.
    pub fn truncate_var(mut self, v: &str, w: i64) -> Self {
        let i = self.vars.idx(v);
        self.windows[i] = Some(wmin(self.windows[i], Some(w)).unwrap());
        self.drop_outside_windows();
        self
    }

    /// Tighten all windows to the given claims (parallel to `vars`).
    pub fn truncate_to(mut self, windows: &[Option<i64>]) -> Self {
        assert_eq!(windows.len(), self.vars.len());
        for i in 0..self.windows.len() {
            self.windows[i] = wmin(self.windows[i], windows[i]);
        }
        self.drop_outside_windows();
        self
    }

    pub fn neg(&self) -> Self {
        let mut r = self.clone();
        for c in r.terms.values_mut() {
            *c = c.c_neg();
        }
        r
    }

    pub fn scalar_mul(&self, r: &Rat) -> Self {
        let mut out = self.clone();
        if Zero::is_zero(r) {
            out.terms.clear();
            return out;
        }
        for c in out.terms.values_mut() {
            *c = c.c_mul_rat(r);
        }
        out
    }

    pub fn coeff_mul(&self, k: &C) -> Self {
        let mut out = self.clone();
        if k.c_is_zero() {
            out.terms.clear();
            return out;
        }
        for c in out.terms.values_mut() {
            *c = c.c_mul(k);
        }
        out.terms.retain(|_, c| !c.c_is_zero());
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.vars, other.vars, "variable lists differ in add");
        if self.is_exact_zero() {
            return other.clone();
        }
        if other.is_exact_zero() {
            return self.clone();
        }
        let windows: Vec<_> = self
            .windows
            .iter()
            .zip(&other.windows)
            .map(|(&a, &b)| wmin(a, b))
            .collect();
        let floors: Vec<_> = self
            .floors
            .iter()
            .zip(&other.floors)
            .map(|(&a, &b)| a.min(b))
            .collect();
        let mut terms = self.terms.clone();
        for (e, c) in &other.terms {
            let entry = terms.entry(e.clone()).or_insert_with(C::c_zero);
            *entry = entry.c_add(c);
        }
        let mut r = TruncatedSeries {
            vars: self.vars.clone(),
            windows,
            floors,
            terms,
        };
        r.drop_outside_windows();
        r
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.vars, other.vars, "variable lists differ in mul");
        if self.is_exact_zero() || other.is_exact_zero() {
            return Self::zero(&self.vars);
        }
        let n = self.vars.len();
        let mut windows = Vec::with_capacity(n);
        for i in 0..n {
            windows.push(wmin(
                wadd(self.windows[i], other.floors[i]),
                wadd(other.windows[i], self.floors[i]),
            ));
        }
        let floors: Vec<_> = self
            .floors
            .iter()
            .zip(&other.floors)
            .map(|(&a, &b)| a + b)
            .collect();
        let mut terms: BTreeMap<Vec<i64>, C> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let mut e = ea.clone();
                let mut outside = false;
                for i in 0..n {
                    e[i] += eb[i];
                    if let Some(w) = windows[i] {
                        if e[i] > w {
                            outside = true;
                            break;
                        }
                    }
                }
                if outside {
                    continue;
                }
                let c = ca.c_mul(cb);
                if c.c_is_zero() {
                    continue;
                }
                let entry = terms.entry(e).or_insert_with(C::c_zero);
                *entry = entry.c_add(&c);
            }
        }
        terms.retain(|_, c| !c.c_is_zero());
        TruncatedSeries {
            vars: self.vars.clone(),
            windows,
            floors,
            terms,
        }
    }

    /// Multiply by `v^delta` (exact exponent shift).
    pub fn shift_var(&self, v: &str, delta: i64) -> Self {
        let i = self.vars.idx(v);
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[i] = wadd(r.windows[i], delta);
        r.floors[i] += delta;
        for (e, c) in &self.terms {
            let mut e = e.clone();
            e[i] += delta;
            r.terms.insert(e, c.clone());
        }
        r
    }

    fn shift_all(&self, delta: &[i64]) -> Self {
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        for i in 0..delta.len() {
            r.windows[i] = wadd(r.windows[i], delta[i]);
            r.floors[i] += delta[i];
        }
        for (e, c) in &self.terms {
            let e2: Vec<i64> = e.iter().zip(delta).map(|(&a, &d)| a + d).collect();
            r.terms.insert(e2, c.clone());
        }
        r
    }

    /// Integer power; negative exponents go through [`Self::invert`].
    pub fn pow(&self, n: i64) -> SResult<Self> {
        if n < 0 {
            return self.invert()?.pow(-n);
        }
        let mut acc = Self::one(&self.vars);
        let mut base = self.clone();
        let mut n = n as u64;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        Ok(acc)
    }

    /// Variables eligible to certify termination of geometric-style sums:
    /// those that never occur with a negative exponent and have a finite
    /// window. Powers of the series grow in these variables and eventually
    /// leave their windows.
    fn eligible_vars(&self) -> Vec<bool> {
        let n = self.vars.len();
        let mut eligible: Vec<bool> = self.windows.iter().map(|w| w.is_some()).collect();
        for e in self.terms.keys() {
            for i in 0..n {
                if e[i] < 0 {
                    eligible[i] = false;
                }
            }
        }
        eligible
    }

    /// `sum_{k>=1} f(k) * self^k`, valid within `self`'s windows. Requires
    /// every stored term to have positive total exponent over the eligible
    /// variables, which bounds the number of contributing powers.
    fn geometric_sum(&self, f: impl Fn(u64) -> Rat) -> SResult<Self> {
        let n = self.vars.len();
        let eligible = self.eligible_vars();
        if !self
            .terms
            .keys()
            .all(|e| (0..n).any(|i| eligible[i] && e[i] > 0))
        {
            return Err(CalcError::NonConvergentComposition(
                "terms of non-positive degree in every truncated variable".into(),
            ));
        }
        let bound: i64 = (0..n)
            .filter(|&i| eligible[i])
            .map(|i| self.windows[i].unwrap().max(0))
            .sum::<i64>()
            + 1;
        let truncate_eligible = |mut s: Self| -> Self {
            for i in 0..n {
                if eligible[i] {
                    s.windows[i] = wmin(s.windows[i], self.windows[i]);
                }
            }
            s.drop_outside_windows();
            s
        };
        let mut acc = Self::zero(&self.vars).truncate_to(&self.windows);
        let mut pw = Self::one(&self.vars);
        let mut k = 0u64;
        loop {
            pw = truncate_eligible(pw.mul(self));
            k += 1;
            if pw.terms.is_empty() {
                break;
            }
            acc = acc.add(&pw.scalar_mul(&f(k)));
            assert!(
                (k as i64) <= bound,
                "geometric sum failed to terminate within its degree bound"
            );
        }
        Ok(acc)
    }

    /// Multiplicative inverse. Requires a dominant leading monomial: the
    /// componentwise-minimal exponent vector must itself be a stored term
    /// with invertible coefficient, so that `self = c * m * (1 + s)` with `s`
    /// supported on nonnegative exponents.
    pub fn invert(&self) -> SResult<Self> {
        if self.terms.is_empty() {
            return Err(CalcError::NonInvertible("series is zero".into()));
        }
        let n = self.vars.len();
        let mut m0 = vec![i64::MAX; n];
        for e in self.terms.keys() {
            for i in 0..n {
                m0[i] = m0[i].min(e[i]);
            }
        }
        self.invert_leading(&m0)
    }

    /// Like [`invert`](Self::invert), but the caller designates which stored term
    /// dominates. This is what picks an expansion regime when no term is a
    /// componentwise minimum: inverting `z1 - z2` about `z1` yields the expansion
    /// valid for `|z2| < |z1|`, inverting about `z2` the opposite one.
    pub fn invert_leading(&self, m0: &[i64]) -> SResult<Self> {
        let n = self.vars.len();
        let c0 = self
            .terms
            .get(m0)
            .ok_or_else(|| {
                CalcError::NonInvertible(
                    "no dominant leading monomial (the designated leading exponent is not a term)"
                        .into(),
                )
            })?
            .clone();
        let c0inv = c0.c_inv().ok_or_else(|| {
            CalcError::NonInvertible("leading coefficient is not invertible".into())
        })?;
        // self * m0^{-1} * c0^{-1} = 1 + s
        let neg_m0: Vec<i64> = m0.iter().map(|&e| -e).collect();
        let unit = self.shift_all(&neg_m0).coeff_mul(&c0inv);
        let mut s = unit;
        let one_key = vec![0i64; n];
        s.terms.remove(&one_key);
        // 1/(1+s) = 1 + sum_k (-1)^k s^k
        let geom = s
            .geometric_sum(|k| if k % 2 == 0 { Rat::one() } else { -Rat::one() })
            .map_err(|_| {
                CalcError::NonInvertible(
                    "no truncation bound makes the geometric series finite; \
                     truncate the series before inverting"
                        .into(),
                )
            })?;
        let acc = Self::one(&self.vars).truncate_to(&s.windows).add(&geom);
        Ok(acc.coeff_mul(&c0inv).shift_all(&neg_m0))
    }

    /// Partial derivative in `v`.
    pub fn derive(&self, v: &str) -> Self {
        let i = self.vars.idx(v);
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[i] = wadd(r.windows[i], -1);
        r.floors[i] -= 1;
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[i] -= 1;
            let c2 = c.c_mul_rat(&rat_int(e[i]));
            if !c2.c_is_zero() {
                r.terms.insert(e2, c2);
            }
        }
        r
    }

    /// Antiderivative in `v` with zero constant term. Errors when a residue
    /// term (exponent -1) is present.
    pub fn integrate_primitive(&self, v: &str) -> SResult<Self> {
        let i = self.vars.idx(v);
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[i] = wadd(r.windows[i], 1);
        r.floors[i] += 1;
        for (e, c) in &self.terms {
            if e[i] == -1 {
                return Err(CalcError::ResiduePresent(v.to_string()));
            }
            let mut e2 = e.clone();
            e2[i] += 1;
            r.terms.insert(e2, c.c_mul_rat(&rat_int(e[i] + 1).recip()));
        }
        Ok(r)
    }

    /// Exponential of a series with no constant term.
    pub fn exp_series(&self) -> SResult<Self> {
        let one_key = vec![0i64; self.vars.len()];
        if self.terms.contains_key(&one_key) {
            return Err(CalcError::ConstantTermPresent);
        }
        let sum = self.geometric_sum(|k| factorial(k).recip())?;
        Ok(Self::one(&self.vars).truncate_to(&self.windows).add(&sum))
    }

    /// Logarithm of a series with unit constant term.
    pub fn log_series(&self) -> SResult<Self> {
        let one_key = vec![0i64; self.vars.len()];
        match self.terms.get(&one_key) {
            Some(c) if *c == C::c_one() => {}
            _ => return Err(CalcError::NotUnitLeading),
        }
        let mut u = self.clone();
        u.terms.remove(&one_key);
        u.geometric_sum(|k| {
            let sign = if k % 2 == 0 { -1 } else { 1 };
            rat(sign, 1) / rat_int(k as i64)
        })
    }

    /// Extract the coefficient of `v^k` as a series in the remaining
    /// variables (the `v`-slot of the result is exact with exponent zero).
    pub fn extract(&self, v: &str, k: i64) -> SResult<Self> {
        let i = self.vars.idx(v);
        if let Some(w) = self.windows[i] {
            if k > w {
                return Err(CalcError::OutOfTruncationWindow(format!(
                    "coefficient of {v}^{k} requested, window is {w}"
                )));
            }
        }
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[i] = None;
        r.floors[i] = 0;
        for (e, c) in &self.terms {
            if e[i] == k {
                let mut e2 = e.clone();
                e2[i] = 0;
                r.terms.insert(e2, c.clone());
            }
        }
        Ok(r)
    }

    /// Single coefficient lookup, erroring outside the windows.
    pub fn coefficient(&self, exps: &[i64]) -> SResult<C> {
        assert_eq!(exps.len(), self.vars.len());
        for i in 0..exps.len() {
            if let Some(w) = self.windows[i] {
                if exps[i] > w {
                    return Err(CalcError::OutOfTruncationWindow(format!(
                        "exponent {} of `{}` exceeds window {}",
                        exps[i],
                        self.vars.name(i),
                        w
                    )));
                }
            }
        }
        Ok(self.terms.get(exps).cloned().unwrap_or_else(C::c_zero))
    }

    /// Set `v` to zero: keeps the `v`-constant part. Errors on stored
    /// negative exponents (a pole) and on windows that exclude exponent 0.
    pub fn restrict_zero(&self, v: &str) -> SResult<Self> {
        let i = self.vars.idx(v);
        if let Some(w) = self.windows[i] {
            if w < 0 {
                return Err(CalcError::OutOfTruncationWindow(format!(
                    "window of `{v}` is {w}; the constant term is not known"
                )));
            }
        }
        if self.terms.keys().any(|e| e[i] < 0) {
            return Err(CalcError::PoleAtEvaluation(format!(
                "series has a pole in `{v}` at 0"
            )));
        }
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[i] = None;
        r.floors[i] = 0;
        for (e, c) in &self.terms {
            if e[i] == 0 {
                r.terms.insert(e.clone(), c.clone());
            }
        }
        Ok(r)
    }

    /// Identify `v_from` with `v_to` (diagonal restriction): exponents add.
    pub fn restrict_diagonal(&self, v_from: &str, v_to: &str) -> Self {
        let i = self.vars.idx(v_from);
        let j = self.vars.idx(v_to);
        assert_ne!(i, j, "restriction onto the same variable");
        let mut r = Self {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms: BTreeMap::new(),
        };
        r.windows[j] = wmin(
            wadd(self.windows[j], self.floors[i]),
            wadd(self.windows[i], self.floors[j]),
        );
        r.windows[i] = None;
        r.floors[j] = self.floors[i] + self.floors[j];
        r.floors[i] = 0;
        for (e, c) in &self.terms {
            let mut e2 = e.clone();
            e2[j] += e2[i];
            e2[i] = 0;
            if let Some(w) = r.windows[j] {
                if e2[j] > w {
                    continue;
                }
            }
            let entry = r.terms.entry(e2).or_insert_with(C::c_zero);
            *entry = entry.c_add(c);
        }
        r.terms.retain(|_, c| !c.c_is_zero());
        r
    }

    /// Substitute `b` for `v`. The series must be exact in `v` (no window),
    /// so the substitution is a finite sum `sum_k c_k b^k`; negative `k` use
    /// the inverse of `b`.
    pub fn substitute(&self, v: &str, b: &Self) -> SResult<Self> {
        assert_eq!(self.vars, b.vars, "variable lists differ in substitute");
        let i = self.vars.idx(v);
        if self.windows[i].is_some() {
            return Err(CalcError::OutOfTruncationWindow(format!(
                "substitution target must be exact in `{v}`"
            )));
        }
        let mut powers: Vec<i64> = self.terms.keys().map(|e| e[i]).collect();
        powers.sort_unstable();
        powers.dedup();
        let mut acc = Self::zero(&self.vars);
        let mut first = true;
        let mut cache: BTreeMap<i64, Self> = BTreeMap::new();
        cache.insert(0, Self::one(&self.vars));
        for &k in &powers {
            let bk = match cache.get(&k) {
                Some(s) => s.clone(),
                None => {
                    let s = b.pow(k)?;
                    cache.insert(k, s.clone());
                    s
                }
            };
            let ck = self.extract(v, k)?;
            let term = ck.mul(&bk);
            acc = if first { term } else { acc.add(&term) };
            first = false;
        }
        if first {
            acc = Self::zero(&self.vars);
        }
        Ok(acc)
    }

    /// Substitute `b` for `v` when negative powers of `b` are needed and the
    /// dominant monomial of `b` is the caller's choice rather than something
    /// `invert` could infer. `lead` is the designated leading exponent vector
    /// of `b`, as for `invert_leading`.
    pub fn substitute_dominated(&self, v: &str, b: &Self, lead: &[i64]) -> SResult<Self> {
        assert_eq!(self.vars, b.vars, "variable lists differ in substitute");
        let i = self.vars.idx(v);
        if self.windows[i].is_some() {
            return Err(CalcError::OutOfTruncationWindow(format!(
                "substitution target must be exact in `{v}`"
            )));
        }
        let mut powers: Vec<i64> = self.terms.keys().map(|e| e[i]).collect();
        powers.sort_unstable();
        powers.dedup();
        let mut acc = Self::zero(&self.vars);
        let mut first = true;
        let mut cache: BTreeMap<i64, Self> = BTreeMap::new();
        cache.insert(0, Self::one(&self.vars));
        let mut b_inv: Option<Self> = None;
        for &k in &powers {
            let bk = match cache.get(&k) {
                Some(s) => s.clone(),
                None => {
                    let s = if k >= 0 {
                        b.pow(k)?
                    } else {
                        let inv = match &b_inv {
                            Some(s) => s.clone(),
                            None => {
                                let s = b.invert_leading(lead)?;
                                b_inv = Some(s.clone());
                                s
                            }
                        };
                        inv.pow(-k)?
                    };
                    cache.insert(k, s.clone());
                    s
                }
            };
            let ck = self.extract(v, k)?;
            let term = ck.mul(&bk);
            acc = if first { term } else { acc.add(&term) };
            first = false;
        }
        if first {
            acc = Self::zero(&self.vars);
        }
        Ok(acc)
    }

    /// Reinterpret the series in a superset variable list (matched by name).
    /// New variables are exact with exponent zero.
    pub fn with_vars(&self, new_vars: &Vars) -> Self {
        if *new_vars == self.vars {
            return self.clone();
        }
        let map: Vec<usize> = self
            .vars
            .names()
            .iter()
            .map(|n| new_vars.idx(n))
            .collect();
        let mut r = TruncatedSeries::<C>::zero(new_vars);
        for (old_i, &new_i) in map.iter().enumerate() {
            r.windows[new_i] = self.windows[old_i];
            r.floors[new_i] = self.floors[old_i];
        }
        for (e, c) in &self.terms {
            let mut e2 = vec![0i64; new_vars.len()];
            for (old_i, &new_i) in map.iter().enumerate() {
                e2[new_i] = e[old_i];
            }
            r.terms.insert(e2, c.clone());
        }
        r
    }

    /// Clear the truncation window of `v`, asserting exactness on the caller's
    /// authority. Use when the recorded terms are known to be complete up to a
    /// bound that the surrounding computation re-imposes via `truncate_to`, so
    /// the conservative window algebra would otherwise discard valid products.
    pub fn declare_exact(&self, v: &str) -> Self {
        let mut r = self.clone();
        r.windows[self.vars.idx(v)] = None;
        r
    }

    /// Re-express the series over a variable list that may drop variables.
    /// Every dropped variable must be unused: exact (no window) and with
    /// exponent zero in all terms. New variables may also be introduced.
    pub fn project_vars(&self, new_vars: &Vars) -> Self {
        let map: Vec<Option<usize>> = self
            .vars
            .names()
            .iter()
            .map(|n| new_vars.find(n))
            .collect();
        let mut r = TruncatedSeries::<C>::zero(new_vars);
        for (old_i, m) in map.iter().enumerate() {
            match m {
                Some(new_i) => {
                    r.windows[*new_i] = self.windows[old_i];
                    r.floors[*new_i] = self.floors[old_i];
                }
                None => assert!(
                    self.windows[old_i].is_none(),
                    "cannot drop truncated variable `{}`",
                    self.vars.name(old_i)
                ),
            }
        }
        for (e, c) in &self.terms {
            let mut e2 = vec![0i64; new_vars.len()];
            for (old_i, m) in map.iter().enumerate() {
                match m {
                    Some(new_i) => e2[*new_i] = e[old_i],
                    None => assert!(
                        e[old_i] == 0,
                        "cannot drop used variable `{}`",
                        self.vars.name(old_i)
                    ),
                }
            }
            r.terms.insert(e2, c.clone());
        }
        r
    }

    /// Rename a variable in place (the order of variables is unchanged).
    pub fn rename_var(&self, from: &str, to: &str) -> Self {
        let names: Vec<String> = self
            .vars
            .names()
            .iter()
            .map(|n| {
                if n == from {
                    to.to_string()
                } else {
                    n.clone()
                }
            })
            .collect();
        let mut r = self.clone();
        r.vars = Vars::from_names(names);
        r
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> TruncatedSeries<D> {
        let mut terms = BTreeMap::new();
        for (e, c) in &self.terms {
            let d = f(c);
            if !d.c_is_zero() {
                terms.insert(e.clone(), d);
            }
        }
        TruncatedSeries {
            vars: self.vars.clone(),
            windows: self.windows.clone(),
            floors: self.floors.clone(),
            terms,
        }
    }

    /// Compare two series on the intersection of their window claims.
    pub fn agrees_with(&self, other: &Self) -> bool {
        assert_eq!(self.vars, other.vars, "variable lists differ in agrees_with");
        let windows: Vec<_> = self
            .windows
            .iter()
            .zip(&other.windows)
            .map(|(&a, &b)| wmin(a, b))
            .collect();
        let within = |e: &Vec<i64>| {
            e.iter()
                .zip(&windows)
                .all(|(&ei, w)| w.map_or(true, |w| ei <= w))
        };
        for (e, c) in &self.terms {
            if within(e) && other.terms.get(e).map_or(true, |d| d != c) {
                return false;
            }
        }
        for (e, c) in &other.terms {
            if within(e) && self.terms.get(e).map_or(true, |d| d != c) {
                return false;
            }
        }
        true
    }
}

impl QSeries {
    /// The series `S(t) = (e^{t/2} - e^{-t/2})/t` truncated at `t^window`:
    /// `1 + t^2/24 + t^4/1920 + ...` (even powers only).
    pub fn sfunction(vars: &Vars, t: &str, window: i64) -> QSeries {
        let mut s = QSeries::zero(vars).truncate_var(t, window);
        let i = vars.idx(t);
        let mut m = 0i64;
        while 2 * m <= window {
            let mut e = vec![0i64; vars.len()];
            e[i] = 2 * m;
            // t^{2m} / (4^m (2m+1)!)
            let c = (rat(1, 4).pow(m as i32)) / factorial(2 * m as u64 + 1);
            s.terms.insert(e, c);
            m += 1;
        }
        s
    }

    /// Canonical JSON form: variables, truncation windows, and lexicographically
    /// sorted terms with exact integer numerator/denominator strings.
    pub fn to_canonical_json(&self) -> serde_json::Value {
        let mut trunc = serde_json::Map::new();
        for (i, name) in self.vars.names().iter().enumerate() {
            trunc.insert(
                name.clone(),
                match self.windows[i] {
                    Some(w) => serde_json::Value::from(w),
                    None => serde_json::Value::Null,
                },
            );
        }
        let terms: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|(e, c)| {
                serde_json::json!([e, [c.numer().to_string(), c.denom().to_string()]])
            })
            .collect();
        serde_json::json!({
            "vars": self.vars.names(),
            "trunc": trunc,
            "terms": terms,
        })
    }

    /// Parse the canonical JSON form. Floors are reconstructed from the
    /// stored support, which is the best available claim after a round trip.
    pub fn from_canonical_json(v: &serde_json::Value) -> Option<QSeries> {
        let vars: Vec<String> = v
            .get("vars")?
            .as_array()?
            .iter()
            .map(|x| x.as_str().map(|s| s.to_string()))
            .collect::<Option<_>>()?;
        let vars = Vars::from_names(vars);
        let trunc = v.get("trunc")?.as_object()?;
        let mut s = QSeries::zero(&vars);
        for (i, name) in vars.names().iter().enumerate() {
            let w = trunc.get(name)?;
            s.windows[i] = if w.is_null() { None } else { Some(w.as_i64()?) };
        }
        let mut floors = vec![i64::MAX; vars.len()];
        for t in v.get("terms")?.as_array()? {
            let pair = t.as_array()?;
            let e: Vec<i64> = pair
                .first()?
                .as_array()?
                .iter()
                .map(|x| x.as_i64())
                .collect::<Option<_>>()?;
            let nd = pair.get(1)?.as_array()?;
            let num: BigInt = nd.first()?.as_str()?.parse().ok()?;
            let den: BigInt = nd.get(1)?.as_str()?.parse().ok()?;
            if den.is_zero() {
                return None;
            }
            let c = Rat::new(num, den);
            for (j, &ej) in e.iter().enumerate() {
                floors[j] = floors[j].min(ej);
            }
            if !Zero::is_zero(&c) {
                s.terms.insert(e, c);
            }
        }
        if !s.terms.is_empty() {
            s.floors = floors;
        }
        s.drop_outside_windows();
        Some(s)
    }
}

impl fmt::Display for QSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            write!(f, "0")?;
        } else {
            for (k, (e, c)) in self.terms.iter().enumerate() {
                if k > 0 {
                    write!(f, " + ")?;
                }
                write!(f, "{c}")?;
                for (i, &ei) in e.iter().enumerate() {
                    if ei != 0 {
                        write!(f, "*{}^{}", self.vars.name(i), ei)?;
                    }
                }
            }
        }
        let claims: Vec<String> = self
            .vars
            .names()
            .iter()
            .zip(&self.windows)
            .filter_map(|(n, w)| w.map(|w| format!("{n}<={w}")))
            .collect();
        if !claims.is_empty() {
            write!(f, "  [{}]", claims.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rat {
        rat(n, d)
    }

    #[test]
    fn invert_geometric() {
        let vars = Vars::new(&["z"]);
        // z + z^2, truncated at z^6
        let a = QSeries::from_terms(&vars, [(vec![1], q(1, 1)), (vec![2], q(1, 1))])
            .truncate_var("z", 6);
        let inv = a.invert().unwrap();
        // 1/(z(1+z)) = z^{-1} - 1 + z - z^2 + z^3 - z^4 (window 6-2 = 4)
        assert_eq!(inv.window_of("z"), Some(4));
        let expect = QSeries::from_terms(
            &vars,
            [
                (vec![-1], q(1, 1)),
                (vec![0], q(-1, 1)),
                (vec![1], q(1, 1)),
                (vec![2], q(-1, 1)),
                (vec![3], q(1, 1)),
                (vec![4], q(-1, 1)),
            ],
        )
        .truncate_var("z", 4);
        assert!(inv.agrees_with(&expect), "got {inv}");
        let prod = a.mul(&inv);
        assert!(prod.agrees_with(&QSeries::one(&vars).truncate_var("z", 3)));
    }

    #[test]
    fn invert_needs_dominant_monomial() {
        let vars = Vars::new(&["z", "w"]);
        // z + w has componentwise minimum (0,0) which is not a term
        let a = QSeries::from_terms(&vars, [(vec![1, 0], q(1, 1)), (vec![0, 1], q(1, 1))])
            .truncate_var("z", 4)
            .truncate_var("w", 4);
        assert!(matches!(a.invert(), Err(CalcError::NonInvertible(_))));
    }

    #[test]
    fn monomial_inverts_exactly() {
        let vars = Vars::new(&["z"]);
        let t = QSeries::var_pow(&vars, "z", 3).scalar_mul(&q(2, 1));
        let inv = t.invert().unwrap();
        assert_eq!(inv.window_of("z"), None);
        assert_eq!(inv.coefficient(&[-3]).unwrap(), q(1, 2));
        assert_eq!(inv.num_terms(), 1);
    }

    #[test]
    fn sfunction_matches_exponential_construction() {
        // t*S(t) must equal e^{t/2} - e^{-t/2} built independently from exp_series.
        let vars = Vars::new(&["t"]);
        let w = 9;
        let half_t = QSeries::var_pow(&vars, "t", 1)
            .scalar_mul(&q(1, 2))
            .truncate_var("t", w);
        let rhs = half_t
            .exp_series()
            .unwrap()
            .sub(&half_t.neg().exp_series().unwrap());
        let s = QSeries::sfunction(&vars, "t", w - 1);
        let lhs = QSeries::var_pow(&vars, "t", 1).mul(&s);
        assert!(lhs.agrees_with(&rhs), "tS(t) = {lhs}, 2sinh(t/2) = {rhs}");
        assert_eq!(s.coefficient(&[2]).unwrap(), q(1, 24));
        assert_eq!(s.coefficient(&[4]).unwrap(), q(1, 1920));
    }

    #[test]
    fn exp_log_roundtrip() {
        let vars = Vars::new(&["z", "h"]);
        let a = QSeries::from_terms(
            &vars,
            [
                (vec![1, 0], q(3, 2)),
                (vec![0, 1], q(-1, 3)),
                (vec![2, 1], q(7, 5)),
            ],
        )
        .truncate_var("z", 6)
        .truncate_var("h", 6);
        let e = a.exp_series().unwrap();
        let back = e.log_series().unwrap();
        assert!(back.agrees_with(&a));
    }

    #[test]
    fn exp_needs_positive_degree() {
        let vars = Vars::new(&["z", "h"]);
        // h/z: negative z-exponent disqualifies z, h saves it only if h-window set
        let a = QSeries::from_terms(&vars, [(vec![-1, 1], q(1, 1))]).truncate_var("h", 4);
        assert!(a.exp_series().is_ok());
        let b = QSeries::from_terms(&vars, [(vec![-1, 1], q(1, 1))]);
        assert!(matches!(
            b.exp_series(),
            Err(CalcError::NonConvergentComposition(_))
        ));
        let c = QSeries::one(&vars);
        assert!(matches!(
            c.exp_series(),
            Err(CalcError::ConstantTermPresent)
        ));
    }

    #[test]
    fn derive_integrate_roundtrip() {
        let vars = Vars::new(&["z"]);
        let a = QSeries::from_terms(
            &vars,
            [(vec![-3], q(5, 1)), (vec![2], q(1, 7)), (vec![4], q(-2, 3))],
        );
        let there = a.integrate_primitive("z").unwrap().derive("z");
        assert!(there.agrees_with(&a));
        // residue blocks integration
        let r = QSeries::from_terms(&vars, [(vec![-1], q(1, 1))]);
        assert!(matches!(
            r.integrate_primitive("z"),
            Err(CalcError::ResiduePresent(_))
        ));
    }

    #[test]
    fn mul_window_shrinks_for_laurent_factors() {
        let vars = Vars::new(&["z"]);
        // (z^{-2} + ...unknown up to z^3) * (z^{-1}): window must drop to 2
        let a = QSeries::from_terms(&vars, [(vec![-2], q(1, 1))]).truncate_var("z", 3);
        let b = QSeries::var_pow(&vars, "z", -1);
        let p = a.mul(&b);
        assert_eq!(p.window_of("z"), Some(2));
        assert_eq!(p.coefficient(&[-3]).unwrap(), q(1, 1));
        assert!(p.coefficient(&[3]).is_err());
    }

    #[test]
    fn substitute_translation() {
        let vars = Vars::new(&["z", "a"]);
        // z^2 under z -> z + a
        let target = QSeries::var_pow(&vars, "z", 2);
        let b = QSeries::var_pow(&vars, "z", 1).add(&QSeries::var_pow(&vars, "a", 1));
        let r = target.substitute("z", &b).unwrap();
        let expect = QSeries::from_terms(
            &vars,
            [
                (vec![2, 0], q(1, 1)),
                (vec![1, 1], q(2, 1)),
                (vec![0, 2], q(1, 1)),
            ],
        );
        assert!(r.agrees_with(&expect));
    }

    #[test]
    fn substitute_negative_power() {
        let vars = Vars::new(&["z", "a"]);
        // z^{-1} under z -> z(1 + a): z^{-1}(1 - a + a^2 - ...)
        let target = QSeries::var_pow(&vars, "z", -1);
        let b = QSeries::from_terms(&vars, [(vec![1, 0], q(1, 1)), (vec![1, 1], q(1, 1))])
            .truncate_var("a", 3);
        let r = target.substitute("z", &b).unwrap();
        assert_eq!(r.coefficient(&[-1, 0]).unwrap(), q(1, 1));
        assert_eq!(r.coefficient(&[-1, 1]).unwrap(), q(-1, 1));
        assert_eq!(r.coefficient(&[-1, 2]).unwrap(), q(1, 1));
        assert_eq!(r.coefficient(&[-1, 3]).unwrap(), q(-1, 1));
    }

    #[test]
    fn restrict_diagonal_merges_windows() {
        let vars = Vars::new(&["z1", "z2"]);
        // z1^{-1} z2 + z1 z2: identify z2 -> z1
        let a = QSeries::from_terms(&vars, [(vec![-1, 1], q(1, 1)), (vec![1, 1], q(2, 1))])
            .truncate_var("z1", 5)
            .truncate_var("z2", 7);
        let d = a.restrict_diagonal("z2", "z1");
        // floors: z1 >= -1, z2 >= 1, so min(5 + 1, 7 + (-1)) = 6
        assert_eq!(d.window_of("z1"), Some(6));
        assert_eq!(d.coefficient(&[0, 0]).unwrap(), q(1, 1));
        assert_eq!(d.coefficient(&[2, 0]).unwrap(), q(2, 1));
    }

    #[test]
    fn canonical_json_roundtrip_and_stability() {
        let vars = Vars::new(&["z", "hbar"]);
        let a = QSeries::from_terms(
            &vars,
            [(vec![-2, 0], q(3, 4)), (vec![1, 2], q(-5, 7))],
        )
        .truncate_var("hbar", 4);
        let j = a.to_canonical_json();
        let s1 = serde_json::to_string(&j).unwrap();
        let b = QSeries::from_canonical_json(&j).unwrap();
        assert!(a.agrees_with(&b));
        let s2 = serde_json::to_string(&b.to_canonical_json()).unwrap();
        assert_eq!(s1, s2, "serialization must be byte-stable");
    }

    #[test]
    fn coefficient_outside_window_errors() {
        let vars = Vars::new(&["z"]);
        let a = QSeries::one(&vars).truncate_var("z", 2);
        assert!(a.coefficient(&[2]).is_ok());
        assert!(matches!(
            a.coefficient(&[3]),
            Err(CalcError::OutOfTruncationWindow(_))
        ));
    }

    #[test]
    fn pow_negative_exponent() {
        let vars = Vars::new(&["z"]);
        let a = QSeries::from_terms(&vars, [(vec![1], q(1, 1)), (vec![2], q(1, 1))])
            .truncate_var("z", 5);
        let p = a.pow(-2).unwrap();
        let direct = a.invert().unwrap().mul(&a.invert().unwrap());
        assert!(p.agrees_with(&direct));
    }
}
