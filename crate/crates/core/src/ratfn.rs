//! Rational functions with exact coefficients, kept in factored form.
//!
//! A [`RatFn`] is a Laurent-polynomial numerator over a multiset of monic
//! polynomial denominator factors. Monomial factors are folded into the
//! numerator's (possibly negative) exponents, so the stored factors are
//! genuinely multi-term. No multivariate gcd is ever computed: cancellation
//! is opportunistic, by exact division of the numerator by each factor.
//! Equality is decided by cross-multiplication, which is exact regardless of
//! how much cancellation happened.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;

use crate::poly::LPoly;
use crate::series::{Coeff, QSeries, Rat, SResult, CalcError, Vars};

#[derive(Clone, Debug)]
pub struct RatFn {
    vars: Vars,
    num: LPoly,
    /// Monic (lex-leading coefficient 1) factors with multiplicities; every
    /// factor has at least two terms and componentwise-minimal exponent 0.
    den: BTreeMap<LPoly, u32>,
}

impl RatFn {
    pub fn zero(vars: &Vars) -> Self {
        RatFn {
            vars: vars.clone(),
            num: LPoly::zero(vars),
            den: BTreeMap::new(),
        }
    }

    pub fn one(vars: &Vars) -> Self {
        Self::constant(vars, Rat::from_integer(1.into()))
    }

    pub fn constant(vars: &Vars, c: Rat) -> Self {
        RatFn {
            vars: vars.clone(),
            num: LPoly::constant(vars, c),
            den: BTreeMap::new(),
        }
    }

    pub fn var_pow(vars: &Vars, v: &str, k: i64) -> Self {
        RatFn {
            vars: vars.clone(),
            num: LPoly::var_pow(vars, v, k),
            den: BTreeMap::new(),
        }
    }

    pub fn from_poly(p: &LPoly) -> Self {
        RatFn {
            vars: p.vars().clone(),
            num: p.clone(),
            den: BTreeMap::new(),
        }
    }

    /// `num / den`, with `den` folded into normal form.
    pub fn from_ratio(num: &LPoly, den: &LPoly) -> SResult<Self> {
        if den.is_zero() {
            return Err(CalcError::NonInvertible(
                "zero denominator in rational function".into(),
            ));
        }
        let mut r = Self::from_poly(num);
        r.push_den_factor(den, 1);
        r.cancel();
        Ok(r)
    }

    /// `num / prod f_i^{m_i}` with the denominator factorization supplied by
    /// the caller. Keeping factors like `z1 - z2` separate from the rest lets
    /// later diagonal restrictions cancel them structurally.
    pub fn from_factors(
        num: &LPoly,
        den: impl IntoIterator<Item = (LPoly, u32)>,
    ) -> SResult<Self> {
        let mut r = Self::from_poly(num);
        for (f, m) in den {
            if f.is_zero() {
                return Err(CalcError::NonInvertible(
                    "zero denominator factor in rational function".into(),
                ));
            }
            r.push_den_factor(&f, m);
        }
        r.cancel();
        Ok(r)
    }

    pub fn vars(&self) -> &Vars {
        &self.vars
    }

    pub fn numerator(&self) -> &LPoly {
        &self.num
    }

    pub fn den_factors(&self) -> impl Iterator<Item = (&LPoly, u32)> {
        self.den.iter().map(|(f, &m)| (f, m))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// The denominator multiplied out.
    pub fn den_poly(&self) -> LPoly {
        let mut p = LPoly::one(&self.vars);
        for (f, &m) in &self.den {
            p = p.mul(&f.pow(m));
        }
        p
    }

    /// `Some(c)` iff the function is a constant. Decided exactly: the
    /// denominator either cancels into the numerator or it does not.
    pub fn as_constant(&self) -> Option<Rat> {
        if self.den.is_empty() {
            return self.num.as_constant();
        }
        self.num.exact_div(&self.den_poly())?.as_constant()
    }

    /// Fold `f^mult` into the denominator: scalar and monomial content move
    /// into the numerator, the rest becomes a monic multi-term factor.
    fn push_den_factor(&mut self, f: &LPoly, mult: u32) {
        assert!(!f.is_zero(), "division by the zero polynomial");
        if mult == 0 {
            return;
        }
        let f = f.with_vars(&self.vars);
        let min = f.exps_min().unwrap();
        let neg_min: Vec<i64> = min.iter().map(|&e| -e).collect();
        let shifted = f.mul(&LPoly::monomial(&self.vars, &neg_min, Rat::from_integer(1.into())));
        let scaled_min: Vec<i64> = min.iter().map(|&e| -e * mult as i64).collect();
        if let Some(c) = shifted.as_constant() {
            // f was the monomial c * z^min
            let k = LPoly::monomial(&self.vars, &scaled_min, c.recip().pow(mult as i32));
            self.num = self.num.mul(&k);
            return;
        }
        let (lead, monic) = shifted.monic_lex();
        let k = LPoly::monomial(&self.vars, &scaled_min, lead.recip().pow(mult as i32));
        self.num = self.num.mul(&k);
        *self.den.entry(monic).or_insert(0) += mult;
    }

    /// Divide stored factors into the numerator where the division is exact.
    fn cancel(&mut self) {
        if self.num.is_zero() {
            self.den.clear();
            return;
        }
        let factors: Vec<LPoly> = self.den.keys().cloned().collect();
        for f in factors {
            while let Some(&m) = self.den.get(&f) {
                if m == 0 {
                    break;
                }
                match self.num.exact_div(&f) {
                    Some(q) => {
                        self.num = q;
                        let slot = self.den.get_mut(&f).unwrap();
                        *slot -= 1;
                        if *slot == 0 {
                            self.den.remove(&f);
                            break;
                        }
                    }
                    None => break,
                }
            }
        }
    }

    fn align(&self, other: &Self) -> (Self, Self) {
        if self.vars == other.vars {
            return (self.clone(), other.clone());
        }
        if self.vars.len() == 0 {
            return (self.with_vars(&other.vars), other.clone());
        }
        if other.vars.len() == 0 {
            return (self.clone(), other.with_vars(&self.vars));
        }
        panic!("combining rational functions over different variable lists");
    }

    pub fn with_vars(&self, new_vars: &Vars) -> Self {
        let mut r = RatFn {
            vars: new_vars.clone(),
            num: self.num.with_vars(new_vars),
            den: BTreeMap::new(),
        };
        for (f, &m) in &self.den {
            r.push_den_factor(&f.with_vars(new_vars), m);
        }
        r
    }

    /// Re-express over a variable list that may drop unused variables.
    pub fn project_vars(&self, new_vars: &Vars) -> Self {
        let mut r = RatFn {
            vars: new_vars.clone(),
            num: self.num.project_vars(new_vars),
            den: BTreeMap::new(),
        };
        for (f, &m) in &self.den {
            r.push_den_factor(&f.project_vars(new_vars), m);
        }
        r
    }

    pub fn rename_var(&self, from: &str, to: &str) -> Self {
        let mut r = RatFn {
            vars: self.num.rename_var(from, to).vars().clone(),
            num: self.num.rename_var(from, to),
            den: BTreeMap::new(),
        };
        for (f, &m) in &self.den {
            r.push_den_factor(&f.rename_var(from, to), m);
        }
        r
    }

    pub fn neg(&self) -> Self {
        RatFn {
            vars: self.vars.clone(),
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn scalar_mul(&self, k: &Rat) -> Self {
        if k.is_zero() {
            return Self::zero(&self.vars);
        }
        RatFn {
            vars: self.vars.clone(),
            num: self.num.scalar_mul(k),
            den: self.den.clone(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let (a, b) = self.align(other);
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        // common denominator: per-factor maximum multiplicity
        let mut union: BTreeMap<LPoly, u32> = a.den.clone();
        for (f, &m) in &b.den {
            let slot = union.entry(f.clone()).or_insert(0);
            *slot = (*slot).max(m);
        }
        let mut num_a = a.num.clone();
        let mut num_b = b.num.clone();
        for (f, &m) in &union {
            let ma = a.den.get(f).copied().unwrap_or(0);
            let mb = b.den.get(f).copied().unwrap_or(0);
            if m > ma {
                num_a = num_a.mul(&f.pow(m - ma));
            }
            if m > mb {
                num_b = num_b.mul(&f.pow(m - mb));
            }
        }
        let mut r = RatFn {
            vars: a.vars.clone(),
            num: num_a.add(&num_b),
            den: union,
        };
        r.cancel();
        r
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let (a, b) = self.align(other);
        if a.is_zero() || b.is_zero() {
            return Self::zero(&a.vars);
        }
        let mut den = a.den.clone();
        for (f, &m) in &b.den {
            *den.entry(f.clone()).or_insert(0) += m;
        }
        let mut r = RatFn {
            vars: a.vars.clone(),
            num: a.num.mul(&b.num),
            den,
        };
        r.cancel();
        r
    }

    pub fn inv(&self) -> SResult<Self> {
        if self.is_zero() {
            return Err(CalcError::NonInvertible(
                "inverting the zero rational function".into(),
            ));
        }
        let mut r = RatFn {
            vars: self.vars.clone(),
            num: self.den_poly(),
            den: BTreeMap::new(),
        };
        r.push_den_factor(&self.num, 1);
        r.cancel();
        Ok(r)
    }

    pub fn div(&self, other: &Self) -> SResult<Self> {
        let (a, b) = self.align(other);
        Ok(a.mul(&b.inv()?))
    }

    pub fn pow(&self, k: i64) -> SResult<Self> {
        let base = if k < 0 { self.inv()? } else { self.clone() };
        let mut r = Self::one(&self.vars);
        for _ in 0..k.unsigned_abs() {
            r = r.mul(&base);
        }
        Ok(r)
    }

    /// Partial derivative by the quotient rule, applied factor by factor so
    /// the denominator's factored structure survives.
    pub fn derive(&self, v: &str) -> Self {
        // d/dv [ n / prod f_i^{m_i} ]
        //   = [ n' prod f_i - n sum_i m_i f_i' prod_{j != i} f_j ] / prod f_i^{m_i + 1}
        let factors: Vec<(&LPoly, u32)> = self.den.iter().map(|(f, &m)| (f, m)).collect();
        let mut p_all = LPoly::one(&self.vars);
        for (f, _) in &factors {
            p_all = p_all.mul(f);
        }
        let mut num = self.num.derive(v).mul(&p_all);
        for i in 0..factors.len() {
            let fi_d = factors[i].0.derive(v);
            if fi_d.is_zero() {
                continue;
            }
            let mut p_others = LPoly::one(&self.vars);
            for (j, (f, _)) in factors.iter().enumerate() {
                if j != i {
                    p_others = p_others.mul(f);
                }
            }
            let mi = Rat::from_integer((factors[i].1 as i64).into());
            num = num.sub(&self.num.mul(&fi_d).mul(&p_others).scalar_mul(&mi));
        }
        let mut r = RatFn {
            vars: self.vars.clone(),
            num,
            den: self.den.iter().map(|(f, &m)| (f.clone(), m + 1)).collect(),
        };
        r.cancel();
        r
    }

    /// Substitute a rational value for `v`. Denominator factors that vanish at
    /// the point must cancel exactly into the numerator, otherwise the
    /// function has a genuine pole there.
    pub fn restrict_value(&self, v: &str, value: &Rat) -> SResult<Self> {
        let mut num = self.num.clone();
        let mut kept: Vec<(LPoly, u32)> = Vec::new();
        for (f, &m) in &self.den {
            let fr = f
                .restrict_value(v, value)
                .expect("denominator factors are polynomials");
            if fr.is_zero() {
                for _ in 0..m {
                    num = num.exact_div(f).ok_or_else(|| {
                        CalcError::PoleAtEvaluation(format!(
                            "denominator factor vanishes at {v} = {value} and does not cancel"
                        ))
                    })?;
                }
            } else {
                kept.push((fr, m));
            }
        }
        let num = num.restrict_value(v, value).ok_or_else(|| {
            CalcError::PoleAtEvaluation(format!("negative power of {v} evaluated at {value}"))
        })?;
        let mut r = Self::from_poly(&num);
        for (f, m) in kept {
            r.push_den_factor(&f, m);
        }
        r.cancel();
        Ok(r)
    }

    /// Identify `v_from` with `v_to`. Factors vanishing on the diagonal (such
    /// as `v_from - v_to`) must cancel exactly into the numerator.
    pub fn restrict_diagonal(&self, v_from: &str, v_to: &str) -> SResult<Self> {
        let mut num = self.num.clone();
        let mut kept: Vec<(LPoly, u32)> = Vec::new();
        for (f, &m) in &self.den {
            let fr = f.restrict_diagonal(v_from, v_to);
            if fr.is_zero() {
                for _ in 0..m {
                    num = num.exact_div(f).ok_or_else(|| {
                        CalcError::PoleAtEvaluation(format!(
                            "denominator factor vanishes on the diagonal {v_from} = {v_to} \
                             and does not cancel"
                        ))
                    })?;
                }
            } else {
                kept.push((fr, m));
            }
        }
        let mut r = Self::from_poly(&num.restrict_diagonal(v_from, v_to));
        for (f, m) in kept {
            r.push_den_factor(&f, m);
        }
        r.cancel();
        Ok(r)
    }

    /// Substitute the polynomial `b` for `v`. Negative powers of `v` in the
    /// numerator become denominator factors `b^k`.
    pub fn substitute_poly(&self, v: &str, b: &LPoly) -> SResult<Self> {
        self.substitute_ratfn(v, &Self::from_poly(b))
    }

    /// Substitute a rational function for `v` (simultaneously, so `b` may
    /// itself involve `v`).
    pub fn substitute_ratfn(&self, v: &str, b: &RatFn) -> SResult<Self> {
        let b = b.with_vars(&self.vars);
        // numerator: expand by v-power so negative powers can invert b
        let (lo, hi) = match self.num.var_range(v) {
            Some(r) => r,
            None => (0, 0),
        };
        let mut r = Self::zero(&self.vars);
        for k in lo..=hi {
            let ck = self.num.coeff_of_var_power(v, k);
            if ck.is_zero() {
                continue;
            }
            r = r.add(&Self::from_poly(&ck).mul(&b.pow(k)?));
        }
        for (f, &m) in &self.den {
            let (flo, fhi) = f.var_range(v).unwrap_or((0, 0));
            let mut fs = Self::zero(&self.vars);
            for k in flo..=fhi {
                let ck = f.coeff_of_var_power(v, k);
                if ck.is_zero() {
                    continue;
                }
                fs = fs.add(&Self::from_poly(&ck).mul(&b.pow(k)?));
            }
            if fs.is_zero() {
                return Err(CalcError::PoleAtEvaluation(format!(
                    "denominator factor vanishes identically under the substitution for {v}"
                )));
            }
            r = r.div(&fs.pow(m as i64)?)?;
        }
        Ok(r)
    }

    /// Expand as a truncated Laurent series about the origin. `regime` orders
    /// the variables from largest to smallest and selects the iterated-Laurent
    /// field: with regime `[z1, z2]`, `1/(z1 - z2)` becomes
    /// `sum_k z2^k / z1^{k+1}`. `windows` are per-variable truncation orders in
    /// the function's own variable order; a `None` window asks for the exact
    /// coefficient in that variable (possible whenever the other windows make
    /// the expansion finite).
    pub fn expand(&self, windows: &[Option<i64>], regime: &[&str]) -> SResult<QSeries> {
        let n = self.vars.len();
        assert_eq!(windows.len(), n, "one window per variable");
        assert_eq!(regime.len(), n, "regime must order every variable");
        let order: Vec<usize> = regime.iter().map(|v| self.vars.idx(v)).collect();
        // Geometric expansion of a factor spends window budget: every power of
        // z_small/z_large claimed costs a unit of the large variable's window.
        // Run with padded windows until the claimed region covers the request,
        // then truncate back.
        let mut pad = vec![0i64; n];
        for _ in 0..16 {
            let padded: Vec<Option<i64>> = windows
                .iter()
                .zip(&pad)
                .map(|(w, p)| w.map(|w| w + p))
                .collect();
            let got = self.expand_once(&padded, &order)?;
            let mut covered = true;
            for i in 0..n {
                if let (Some(want), Some(have)) = (windows[i], got.windows()[i]) {
                    if have < want {
                        covered = false;
                        pad[i] = (2 * pad[i]).max(pad[i] + (want - have)).max(1);
                    }
                }
            }
            if covered {
                return Ok(got.truncate_to(windows));
            }
        }
        Err(CalcError::NonConvergentComposition(
            "window erosion in the denominator expansion did not stabilize".into(),
        ))
    }

    fn expand_once(&self, windows: &[Option<i64>], order: &[usize]) -> SResult<QSeries> {
        // exponents read from the smallest variable up; the lex-minimal key is
        // the dominant monomial of a denominator factor in this regime
        let regime_key = |e: &[i64]| -> Vec<i64> { order.iter().rev().map(|&i| e[i]).collect() };
        let mut acc = lpoly_to_series(&self.num, windows);
        for (f, &m) in &self.den {
            let e0 = f
                .terms()
                .map(|(e, _)| e.clone())
                .min_by_key(|e| regime_key(e))
                .expect("denominator factors are nonzero");
            let inv = lpoly_to_series(f, windows).invert_leading(&e0)?;
            for _ in 0..m {
                acc = acc.mul(&inv);
            }
        }
        Ok(acc)
    }

    pub fn to_canonical_json(&self) -> serde_json::Value {
        let den: Vec<serde_json::Value> = self
            .den
            .iter()
            .map(|(f, &m)| serde_json::json!([f.to_canonical_json(), m]))
            .collect();
        serde_json::json!({
            "num": self.num.to_canonical_json(),
            "den": den,
        })
    }

    pub fn from_canonical_json(v: &serde_json::Value) -> Option<Self> {
        let num = LPoly::from_canonical_json(v.get("num")?)?;
        let mut r = Self::from_poly(&num);
        for pair in v.get("den")?.as_array()? {
            let pair = pair.as_array()?;
            let f = LPoly::from_canonical_json(pair.first()?)?;
            let m = u32::try_from(pair.get(1)?.as_u64()?).ok()?;
            if f.is_zero() {
                return None;
            }
            r.push_den_factor(&f, m);
        }
        Some(r)
    }
}

impl PartialEq for RatFn {
    /// Exact equality by cross-multiplication after stripping shared factors.
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = self.align(other);
        let mut da = a.den.clone();
        let mut db = b.den.clone();
        let shared: Vec<LPoly> = da
            .keys()
            .filter(|f| db.contains_key(*f))
            .cloned()
            .collect();
        for f in shared {
            let m = (*da.get(&f).unwrap()).min(*db.get(&f).unwrap());
            for d in [&mut da, &mut db] {
                let slot = d.get_mut(&f).unwrap();
                *slot -= m;
                if *slot == 0 {
                    d.remove(&f);
                }
            }
        }
        let mut lhs = a.num.clone();
        for (f, &m) in &db {
            lhs = lhs.mul(&f.pow(m));
        }
        let mut rhs = b.num.clone();
        for (f, &m) in &da {
            rhs = rhs.mul(&f.pow(m));
        }
        lhs == rhs
    }
}

impl Eq for RatFn {}

impl fmt::Display for RatFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_empty() {
            return write!(f, "{}", self.num);
        }
        write!(f, "({})", self.num)?;
        for (p, m) in &self.den {
            write!(f, " / ({p})^{m}")?;
        }
        Ok(())
    }
}

fn lpoly_to_series(p: &LPoly, windows: &[Option<i64>]) -> QSeries {
    QSeries::from_terms(p.vars(), p.terms().map(|(e, c)| (e.clone(), c.clone())))
        .truncate_to(windows)
}

impl Coeff for RatFn {
    fn c_zero() -> Self {
        RatFn::zero(&Vars::new(&[]))
    }
    fn c_one() -> Self {
        RatFn::one(&Vars::new(&[]))
    }
    fn c_is_zero(&self) -> bool {
        RatFn::is_zero(self)
    }
    fn c_add(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn c_sub(&self, other: &Self) -> Self {
        self.sub(other)
    }
    fn c_mul(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn c_neg(&self) -> Self {
        self.neg()
    }
    fn c_mul_rat(&self, r: &Rat) -> Self {
        self.scalar_mul(r)
    }
    fn c_inv(&self) -> Option<Self> {
        self.inv().ok()
    }
}
