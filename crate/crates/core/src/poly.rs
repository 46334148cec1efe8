//! Exact sparse multivariate Laurent polynomials over the rationals.
//!
//! Unlike [`crate::series`], nothing here is truncated: these are closed-form
//! objects (numerators and denominator factors of rational functions, curve
//! data, kernel factors). Exact division is the workhorse: cancellation of
//! diagonal factors is how restrictions to coinciding points stay exact.

use crate::series::{rat_int, Coeff, Rat, Vars};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Sparse Laurent polynomial: exponent vectors (possibly negative) to
/// nonzero rational coefficients.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub struct LPoly {
    vars: Vars,
    terms: BTreeMap<Vec<i64>, Rat>,
}

impl LPoly {
    pub fn zero(vars: &Vars) -> Self {
        LPoly {
            vars: vars.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &Vars, c: Rat) -> Self {
        let mut p = Self::zero(vars);
        if !c.is_zero() {
            p.terms.insert(vec![0; vars.len()], c);
        }
        p
    }

    pub fn one(vars: &Vars) -> Self {
        Self::constant(vars, Rat::one())
    }

    pub fn monomial(vars: &Vars, exps: &[i64], c: Rat) -> Self {
        assert_eq!(exps.len(), vars.len());
        let mut p = Self::zero(vars);
        if !c.is_zero() {
            p.terms.insert(exps.to_vec(), c);
        }
        p
    }

    pub fn var_pow(vars: &Vars, v: &str, k: i64) -> Self {
        let mut exps = vec![0; vars.len()];
        exps[vars.idx(v)] = k;
        Self::monomial(vars, &exps, Rat::one())
    }

    pub fn from_terms(vars: &Vars, terms: impl IntoIterator<Item = (Vec<i64>, Rat)>) -> Self {
        let mut p = Self::zero(vars);
        for (e, c) in terms {
            assert_eq!(e.len(), vars.len());
            if c.is_zero() {
                continue;
            }
            let entry = p.terms.entry(e).or_insert_with(Rat::zero);
            *entry += c;
        }
        p.terms.retain(|_, c| !c.is_zero());
        p
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &Rat)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .get(&vec![0; self.vars.len()])
                .map_or(false, |c| c.is_one())
    }

    pub fn as_constant(&self) -> Option<Rat> {
        if self.terms.is_empty() {
            return Some(Rat::zero());
        }
        if self.terms.len() == 1 {
            let (e, c) = self.terms.iter().next().unwrap();
            if e.iter().all(|&x| x == 0) {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn as_monomial(&self) -> Option<(Vec<i64>, Rat)> {
        if self.terms.len() == 1 {
            let (e, c) = self.terms.iter().next().unwrap();
            Some((e.clone(), c.clone()))
        } else {
            None
        }
    }

    pub fn coefficient(&self, exps: &[i64]) -> Rat {
        self.terms.get(exps).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn neg(&self) -> Self {
        let mut r = self.clone();
        for c in r.terms.values_mut() {
            *c = -c.clone();
        }
        r
    }

    pub fn scalar_mul(&self, k: &Rat) -> Self {
        if k.is_zero() {
            return Self::zero(&self.vars);
        }
        let mut r = self.clone();
        for c in r.terms.values_mut() {
            *c *= k;
        }
        r
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.vars, other.vars, "variable lists differ in add");
        let mut terms = self.terms.clone();
        for (e, c) in &other.terms {
            let entry = terms.entry(e.clone()).or_insert_with(Rat::zero);
            *entry += c;
        }
        terms.retain(|_, c| !c.is_zero());
        LPoly {
            vars: self.vars.clone(),
            terms,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.vars, other.vars, "variable lists differ in mul");
        let mut terms: BTreeMap<Vec<i64>, Rat> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<i64> = ea.iter().zip(eb).map(|(&a, &b)| a + b).collect();
                let c = ca * cb;
                let entry = terms.entry(e).or_insert_with(Rat::zero);
                *entry += c;
            }
        }
        terms.retain(|_, c| !c.is_zero());
        LPoly {
            vars: self.vars.clone(),
            terms,
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one(&self.vars);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Multiply by `v^delta`.
    pub fn shift_var(&self, v: &str, delta: i64) -> Self {
        let i = self.vars.idx(v);
        let mut r = Self::zero(&self.vars);
        for (e, c) in &self.terms {
            let mut e2 = e.clone();
            e2[i] += delta;
            r.terms.insert(e2, c.clone());
        }
        r
    }

    pub fn derive(&self, v: &str) -> Self {
        let i = self.vars.idx(v);
        let mut r = Self::zero(&self.vars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[i] -= 1;
            let c2 = c * rat_int(e[i]);
            if !c2.is_zero() {
                r.terms.insert(e2, c2);
            }
        }
        r
    }

    /// Minimum and maximum exponent of `v` over the support, `None` if zero.
    pub fn var_range(&self, v: &str) -> Option<(i64, i64)> {
        let i = self.vars.idx(v);
        let mut it = self.terms.keys().map(|e| e[i]);
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for e in it {
            lo = lo.min(e);
            hi = hi.max(e);
        }
        Some((lo, hi))
    }

    /// Total degree of the lexicographically largest term.
    pub fn lex_leading(&self) -> Option<(&Vec<i64>, &Rat)> {
        self.terms.iter().next_back()
    }

    /// Scale so the lexicographically largest term has coefficient one.
    /// Returns `(scale, monic)` with `self = scale * monic`.
    pub fn monic_lex(&self) -> (Rat, LPoly) {
        match self.lex_leading() {
            None => (Rat::one(), self.clone()),
            Some((_, c)) => {
                let c = c.clone();
                (c.clone(), self.scalar_mul(&c.recip()))
            }
        }
    }

    /// Reinterpret in a superset variable list (matched by name).
    pub fn with_vars(&self, new_vars: &Vars) -> Self {
        if *new_vars == self.vars {
            return self.clone();
        }
        let map: Vec<usize> = self.vars.names().iter().map(|n| new_vars.idx(n)).collect();
        let mut r = LPoly::zero(new_vars);
        for (e, c) in &self.terms {
            let mut e2 = vec![0i64; new_vars.len()];
            for (old_i, &new_i) in map.iter().enumerate() {
                e2[new_i] = e[old_i];
            }
            r.terms.insert(e2, c.clone());
        }
        r
    }

    pub fn rename_var(&self, from: &str, to: &str) -> Self {
        assert!(
            from == to || !self.vars.names().iter().any(|n| n == to),
            "renaming {from} to {to} would duplicate a variable name"
        );
        let names: Vec<String> = self
            .vars
            .names()
            .iter()
            .map(|n| if n == from { to.to_string() } else { n.clone() })
            .collect();
        LPoly {
            vars: Vars::from_names(names),
            terms: self.terms.clone(),
        }
    }

    /// Substitute a polynomial for `v`. Negative powers of `v` are supported
    /// only when `b` is a monomial (exact inverse); otherwise `None` (the
    /// caller should work with rational functions instead).
    pub fn substitute_poly(&self, v: &str, b: &LPoly) -> Option<LPoly> {
        assert_eq!(self.vars, b.vars, "variable lists differ in substitute");
        let i = self.vars.idx(v);
        let has_negative = self.terms.keys().any(|e| e[i] < 0);
        let b_inv = if has_negative {
            let (e, c) = b.as_monomial()?;
            let e_inv: Vec<i64> = e.iter().map(|&x| -x).collect();
            Some(LPoly::monomial(&self.vars, &e_inv, c.recip()))
        } else {
            None
        };
        let mut acc = LPoly::zero(&self.vars);
        let mut cache: BTreeMap<i64, LPoly> = BTreeMap::new();
        cache.insert(0, LPoly::one(&self.vars));
        for (e, c) in &self.terms {
            let k = e[i];
            if !cache.contains_key(&k) {
                let p = if k >= 0 {
                    b.pow(k as u32)
                } else {
                    b_inv.as_ref().unwrap().pow((-k) as u32)
                };
                cache.insert(k, p);
            }
            let mut e2 = e.clone();
            e2[i] = 0;
            let term = LPoly::monomial(&self.vars, &e2, c.clone()).mul(&cache[&k]);
            acc = acc.add(&term);
        }
        Some(acc)
    }

    /// Evaluate `v` at a rational value. `None` when the value is 0 and a
    /// negative power of `v` is present.
    pub fn restrict_value(&self, v: &str, value: &Rat) -> Option<LPoly> {
        let i = self.vars.idx(v);
        let mut acc = LPoly::zero(&self.vars);
        for (e, c) in &self.terms {
            let k = e[i];
            let factor = if k >= 0 {
                num_traits::pow::pow(value.clone(), k as usize)
            } else {
                if value.is_zero() {
                    return None;
                }
                num_traits::pow::pow(value.recip(), (-k) as usize)
            };
            let mut e2 = e.clone();
            e2[i] = 0;
            acc = acc.add(&LPoly::monomial(&self.vars, &e2, c * factor));
        }
        Some(acc)
    }

    /// Identify `v_from` with `v_to`: exponents add.
    pub fn restrict_diagonal(&self, v_from: &str, v_to: &str) -> LPoly {
        let i = self.vars.idx(v_from);
        let j = self.vars.idx(v_to);
        assert_ne!(i, j);
        let mut r = LPoly::zero(&self.vars);
        for (e, c) in &self.terms {
            let mut e2 = e.clone();
            e2[j] += e2[i];
            e2[i] = 0;
            let entry = r.terms.entry(e2).or_insert_with(Rat::zero);
            *entry += c;
        }
        r.terms.retain(|_, c| !c.is_zero());
        r
    }

    /// Exact division: `Some(q)` with `self = q * d`, or `None` when `self`
    /// is not a multiple of `d`. Recursive univariate synthetic division, so
    /// it terminates on every input.
    pub fn exact_div(&self, d: &LPoly) -> Option<LPoly> {
        assert_eq!(self.vars, d.vars, "variable lists differ in exact_div");
        assert!(!d.is_zero(), "division by zero polynomial");
        if self.is_zero() {
            return Some(Self::zero(&self.vars));
        }
        if let Some((e, c)) = d.as_monomial() {
            let e_inv: Vec<i64> = e.iter().map(|&x| -x).collect();
            return Some(self.mul(&LPoly::monomial(&self.vars, &e_inv, c.recip())));
        }
        // pick a variable in which d genuinely varies
        let v = self
            .vars
            .names()
            .iter()
            .find(|v| d.var_range(v).map_or(false, |(lo, hi)| lo < hi))
            .expect("non-monomial polynomial varies in some variable")
            .clone();
        let (dlo, dhi) = d.var_range(&v).unwrap();
        let (slo, shi) = self.var_range(&v).unwrap();
        // v-degrees of an exact quotient lie in [slo - dlo, shi - dhi]
        if shi - dhi < slo - dlo {
            return None;
        }
        let d_lead = d.coeff_of_var_power(&v, dhi);
        let mut rem = self.clone();
        let mut q = LPoly::zero(&self.vars);
        while !rem.is_zero() {
            let (_, rhi) = rem.var_range(&v).unwrap();
            let k = rhi - dhi;
            if k < slo - dlo {
                return None;
            }
            let r_lead = rem.coeff_of_var_power(&v, rhi);
            let qk = r_lead.exact_div(&d_lead)?;
            let qk_shift = qk.shift_var(&v, k);
            q = q.add(&qk_shift);
            rem = rem.sub(&qk_shift.mul(d));
            // the top v-degree strictly decreases, so this terminates
            debug_assert!(rem.var_range(&v).map_or(true, |(_, h)| h < rhi));
        }
        Some(q)
    }

    /// The coefficient of `v^k`, as a polynomial with the `v`-slot zeroed.
    pub fn coeff_of_var_power(&self, v: &str, k: i64) -> LPoly {
        let i = self.vars.idx(v);
        let mut r = LPoly::zero(&self.vars);
        for (e, c) in &self.terms {
            if e[i] == k {
                let mut e2 = e.clone();
                e2[i] = 0;
                r.terms.insert(e2, c.clone());
            }
        }
        r
    }

    /// `(f(v1) - f(v2)) / (v1 - v2)` for `f` a univariate Laurent polynomial
    /// in `v`, expressed in the given bivariate variable list.
    pub fn divided_difference(
        f: &LPoly,
        v: &str,
        out_vars: &Vars,
        v1: &str,
        v2: &str,
    ) -> LPoly {
        let i = f.vars.idx(v);
        let a = out_vars.idx(v1);
        let b = out_vars.idx(v2);
        let mut r = LPoly::zero(out_vars);
        for (e, c) in &f.terms {
            for (j, &ej) in e.iter().enumerate() {
                assert!(j == i || ej == 0, "divided difference needs univariate input");
            }
            let k = e[i];
            if k == 0 {
                continue;
            }
            if k > 0 {
                // (v1^k - v2^k)/(v1-v2) = sum_{t=0}^{k-1} v1^t v2^{k-1-t}
                for t in 0..k {
                    let mut e2 = vec![0i64; out_vars.len()];
                    e2[a] = t;
                    e2[b] = k - 1 - t;
                    r = r.add(&LPoly::monomial(out_vars, &e2, c.clone()));
                }
            } else {
                // (v1^k - v2^k)/(v1-v2) = -sum_{t=0}^{-k-1} v1^{k+t} v2^{-1-t}
                for t in 0..(-k) {
                    let mut e2 = vec![0i64; out_vars.len()];
                    e2[a] = k + t;
                    e2[b] = -1 - t;
                    r = r.add(&LPoly::monomial(out_vars, &e2, -c.clone()));
                }
            }
        }
        r
    }

    /// Map a univariate polynomial into a (possibly multivariate) list,
    /// sending `v` to `target`.
    pub fn lift_univariate(&self, v: &str, out_vars: &Vars, target: &str) -> LPoly {
        let i = self.vars.idx(v);
        let j = out_vars.idx(target);
        let mut r = LPoly::zero(out_vars);
        for (e, c) in &self.terms {
            for (t, &et) in e.iter().enumerate() {
                assert!(t == i || et == 0, "lift_univariate needs univariate input");
            }
            let mut e2 = vec![0i64; out_vars.len()];
            e2[j] = e[i];
            r.terms.insert(e2, c.clone());
        }
        r
    }

    /// Re-express over a variable list that may drop variables; dropped
    /// variables must have exponent zero in every term.
    pub fn project_vars(&self, new_vars: &Vars) -> LPoly {
        let map: Vec<Option<usize>> = self
            .vars
            .names()
            .iter()
            .map(|n| new_vars.find(n))
            .collect();
        let mut r = LPoly::zero(new_vars);
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

    /// Componentwise minimum of all exponent vectors, or `None` for the zero
    /// polynomial. This is the largest monomial dividing every term.
    pub fn exps_min(&self) -> Option<Vec<i64>> {
        let mut m: Option<Vec<i64>> = None;
        for e in self.terms.keys() {
            match &mut m {
                None => m = Some(e.clone()),
                Some(m) => {
                    for i in 0..e.len() {
                        m[i] = m[i].min(e[i]);
                    }
                }
            }
        }
        m
    }

    pub fn to_canonical_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|(e, c)| serde_json::json!([e, [c.numer().to_string(), c.denom().to_string()]]))
            .collect();
        serde_json::json!({
            "vars": self.vars.names(),
            "terms": terms,
        })
    }

    pub fn from_canonical_json(v: &serde_json::Value) -> Option<LPoly> {
        use num_bigint::BigInt;
        let vars: Vec<String> = v
            .get("vars")?
            .as_array()?
            .iter()
            .map(|x| x.as_str().map(|s| s.to_string()))
            .collect::<Option<_>>()?;
        let vars = Vars::from_names(vars);
        let mut p = LPoly::zero(&vars);
        for t in v.get("terms")?.as_array()? {
            let pair = t.as_array()?;
            let e: Vec<i64> = pair
                .first()?
                .as_array()?
                .iter()
                .map(|x| x.as_i64())
                .collect::<Option<_>>()?;
            if e.len() != vars.len() {
                return None;
            }
            let nd = pair.get(1)?.as_array()?;
            let num: BigInt = nd.first()?.as_str()?.parse().ok()?;
            let den: BigInt = nd.get(1)?.as_str()?.parse().ok()?;
            if Zero::is_zero(&den) {
                return None;
            }
            let c = Rat::new(num, den);
            if !Zero::is_zero(&c) {
                p.terms.insert(e, c);
            }
        }
        Some(p)
    }
}

impl fmt::Display for LPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
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
        Ok(())
    }
}

/// Laurent polynomials form a coefficient ring for series whose coefficients
/// carry spectator variables. Constants are polymorphic in the variable list
/// and align on use.
impl Coeff for LPoly {
    fn c_zero() -> Self {
        LPoly::zero(&Vars::new(&[]))
    }
    fn c_one() -> Self {
        LPoly::one(&Vars::new(&[]))
    }
    fn c_is_zero(&self) -> bool {
        LPoly::is_zero(self)
    }
    fn c_add(&self, other: &Self) -> Self {
        match (self.as_constant(), other.as_constant()) {
            _ if self.vars == other.vars => self.add(other),
            (Some(c), _) if c.is_zero() => other.clone(),
            (_, Some(c)) if c.is_zero() => self.clone(),
            (Some(c), _) => LPoly::constant(&other.vars, c).add(other),
            (_, Some(c)) => self.add(&LPoly::constant(&self.vars, c)),
            _ => panic!("adding Laurent polynomials over different variable lists"),
        }
    }
    fn c_sub(&self, other: &Self) -> Self {
        self.c_add(&other.neg())
    }
    fn c_mul(&self, other: &Self) -> Self {
        match (self.as_constant(), other.as_constant()) {
            _ if self.vars == other.vars => self.mul(other),
            (Some(c), _) => other.scalar_mul(&c),
            (_, Some(c)) => self.scalar_mul(&c),
            _ => panic!("multiplying Laurent polynomials over different variable lists"),
        }
    }
    fn c_neg(&self) -> Self {
        self.neg()
    }
    fn c_mul_rat(&self, r: &Rat) -> Self {
        self.scalar_mul(r)
    }
    fn c_inv(&self) -> Option<Self> {
        let (e, c) = self.as_monomial()?;
        let e_inv: Vec<i64> = e.iter().map(|&x| -x).collect();
        Some(LPoly::monomial(&self.vars, &e_inv, c.recip()))
    }
}
