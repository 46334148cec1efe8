//! Rational spectral curves and systems of correlation differentials.
//!
//! A curve is a pair of rational functions x(z), y(z) of a global coordinate
//! on the projective line. A differential system stores, for each (g, n), the
//! symmetric function omega^{(g)}_n / (dz_1 ... dz_n) as an exact rational
//! function; the distinguished second-order pole of the (0,2) part on the
//! diagonal is carried as a flag and only combined with the regular part when
//! a formula asks for it.

use std::collections::BTreeMap;

use num_traits::Zero;

use crate::poly::LPoly;
use crate::ratfn::RatFn;
use crate::series::{rat_int, CalcError, Rat, SResult, Vars};

/// Which of the two swap directions a formula is instantiated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// x-to-y: produces the dual system, with roles of x and y as written.
    XY,
    /// y-to-x: the inverse transform, x and y interchanged.
    YX,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::XY => Direction::YX,
            Direction::YX => Direction::XY,
        }
    }
}

/// The variable list `z1 .. zn`.
pub fn zvars(n: usize) -> Vars {
    Vars::from_names((1..=n).map(|i| format!("z{i}")).collect())
}

/// `1/(v1 - v2)^2` with the diagonal factor kept explicit.
pub fn standard_kernel(vars: &Vars, v1: &str, v2: &str) -> RatFn {
    let diff = LPoly::var_pow(vars, v1, 1).sub(&LPoly::var_pow(vars, v2, 1));
    RatFn::from_factors(&LPoly::one(vars), [(diff, 2)]).unwrap()
}

/// `(f(v1) - f(v2)) / (v1 - v2)` for a univariate rational `f`, exact, with
/// the diagonal zero cancelled structurally.
pub fn diagonal_quotient(f: &RatFn, v: &str, vars2: &Vars, v1: &str, v2: &str) -> SResult<RatFn> {
    let f1 = f.rename_var(v, v1).with_vars(vars2);
    let f2 = f.rename_var(v, v2).with_vars(vars2);
    let diff = LPoly::var_pow(vars2, v1, 1).sub(&LPoly::var_pow(vars2, v2, 1));
    f1.sub(&f2).div(&RatFn::from_poly(&diff))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCurve {
    x: RatFn,
    y: RatFn,
    /// Named expansion points, `o` at the origin by default.
    points: Vec<(String, Rat)>,
}

impl SpectralCurve {
    /// The coordinate variable every curve is written in.
    pub const COORD: &'static str = "z";

    pub fn new(x: RatFn, y: RatFn) -> SResult<Self> {
        let vars = Vars::new(&[Self::COORD]);
        let x = x.with_vars(&vars);
        let y = y.with_vars(&vars);
        if x.derive(Self::COORD).is_zero() {
            return Err(CalcError::ZeroDerivative("x is constant".into()));
        }
        if y.derive(Self::COORD).is_zero() {
            return Err(CalcError::ZeroDerivative("y is constant".into()));
        }
        Ok(SpectralCurve {
            x,
            y,
            points: vec![("o".into(), rat_int(0))],
        })
    }

    pub fn from_polys(x: &LPoly, y: &LPoly) -> SResult<Self> {
        Self::new(RatFn::from_poly(x), RatFn::from_poly(y))
    }

    /// x = z^{-r}/r, y = -1/z: the string solution of the r-th
    /// Gelfand-Dickey hierarchy ("higher Airy").
    pub fn higher_airy(r: u32) -> Self {
        assert!(r >= 2, "higher-airy needs r >= 2");
        let vars = Vars::new(&[Self::COORD]);
        let x = LPoly::monomial(&vars, &[-(r as i64)], rat_int(1) / rat_int(r as i64));
        let y = LPoly::monomial(&vars, &[-1], rat_int(-1));
        Self::from_polys(&x, &y).unwrap()
    }

    /// x = z^{-r}/r, y = -z: the higher Brezin-Gross-Witten curve.
    pub fn higher_bgw(r: u32) -> Self {
        assert!(r >= 2, "higher-bgw needs r >= 2");
        let vars = Vars::new(&[Self::COORD]);
        let x = LPoly::monomial(&vars, &[-(r as i64)], rat_int(1) / rat_int(r as i64));
        let y = LPoly::monomial(&vars, &[1], rat_int(-1));
        Self::from_polys(&x, &y).unwrap()
    }

    /// x = z^{-r}/r - eps/z, y = -z: the deformation of the higher BGW curve
    /// whose differentials carry the deformed r-theta intersection numbers.
    pub fn deformed_bgw(r: u32, eps: &Rat) -> Self {
        assert!(r >= 2, "deformed-bgw needs r >= 2");
        let vars = Vars::new(&[Self::COORD]);
        let x = LPoly::monomial(&vars, &[-(r as i64)], rat_int(1) / rat_int(r as i64))
            .add(&LPoly::monomial(&vars, &[-1], -eps.clone()));
        let y = LPoly::monomial(&vars, &[1], rat_int(-1));
        Self::from_polys(&x, &y).unwrap()
    }

    pub fn x(&self) -> &RatFn {
        &self.x
    }

    pub fn y(&self) -> &RatFn {
        &self.y
    }

    /// x or y by role: in the XY direction the "source" function is x.
    pub fn fun(&self, dir: Direction) -> &RatFn {
        match dir {
            Direction::XY => &self.x,
            Direction::YX => &self.y,
        }
    }

    pub fn x_prime(&self) -> RatFn {
        self.x.derive(Self::COORD)
    }

    pub fn y_prime(&self) -> RatFn {
        self.y.derive(Self::COORD)
    }

    /// dx/dy as an exact rational function of z (or dy/dx for `YX`).
    pub fn dx_dy_ratio(&self, dir: Direction) -> SResult<RatFn> {
        let (num, den) = match dir {
            Direction::XY => (self.x_prime(), self.y_prime()),
            Direction::YX => (self.y_prime(), self.x_prime()),
        };
        if den.is_zero() {
            return Err(CalcError::ZeroDerivative(
                "denominator derivative is identically zero".into(),
            ));
        }
        num.div(&den)
    }

    pub fn points(&self) -> &[(String, Rat)] {
        &self.points
    }

    pub fn add_point(&mut self, name: &str, value: Rat) {
        self.points.push((name.to_string(), value));
    }

    /// The swapped curve: x and y interchanged.
    pub fn swapped(&self) -> Self {
        SpectralCurve {
            x: self.y.clone(),
            y: self.x.clone(),
            points: self.points.clone(),
        }
    }

    /// `f'(z1) f'(z2) / (f(z1) - f(z2))^2` for f = x (or y under `YX`), on
    /// variables `(v1, v2)`, with the diagonal double zero of the denominator
    /// split off so the difference from the standard kernel is structurally
    /// regular on the diagonal.
    pub fn function_kernel(&self, dir: Direction, vars2: &Vars, v1: &str, v2: &str) -> SResult<RatFn> {
        let f = self.fun(dir);
        let fp = f.derive(Self::COORD);
        if fp.is_zero() {
            return Err(CalcError::ZeroDerivative(
                "kernel of a constant function".into(),
            ));
        }
        let q = diagonal_quotient(f, Self::COORD, vars2, v1, v2)?;
        let num = fp
            .rename_var(Self::COORD, v1)
            .with_vars(vars2)
            .mul(&fp.rename_var(Self::COORD, v2).with_vars(vars2));
        let diff = LPoly::var_pow(vars2, v1, 1).sub(&LPoly::var_pow(vars2, v2, 1));
        num.div(&RatFn::from_poly(&diff).pow(2)?)?.div(&q.pow(2)?)
    }

    pub fn to_canonical_json(&self) -> serde_json::Value {
        let points: Vec<serde_json::Value> = self
            .points
            .iter()
            .map(|(n, v)| {
                serde_json::json!([n, [v.numer().to_string(), v.denom().to_string()]])
            })
            .collect();
        serde_json::json!({
            "x": self.x.to_canonical_json(),
            "y": self.y.to_canonical_json(),
            "points": points,
        })
    }

    pub fn from_canonical_json(v: &serde_json::Value) -> Option<Self> {
        use num_bigint::BigInt;
        let x = RatFn::from_canonical_json(v.get("x")?)?;
        let y = RatFn::from_canonical_json(v.get("y")?)?;
        let mut c = Self::new(x, y).ok()?;
        c.points.clear();
        for p in v.get("points")?.as_array()? {
            let p = p.as_array()?;
            let name = p.first()?.as_str()?.to_string();
            let nd = p.get(1)?.as_array()?;
            let num: BigInt = nd.first()?.as_str()?.parse().ok()?;
            let den: BigInt = nd.get(1)?.as_str()?.parse().ok()?;
            c.points.push((name, Rat::new(num, den)));
        }
        Some(c)
    }
}

/// A system of correlation differentials, stored as exact rational functions
/// `omega^{(g)}_n / (dz_1 .. dz_n)` on variables `z1 .. zn`.
///
/// The (0,2) entry holds only the part regular on the diagonal; when
/// `standard_02` is set the system additionally carries the distinguished
/// singular summand `1/(z1 - z2)^2`. Absent entries are zero. The (0,1) entry
/// is fixed to zero by convention and may not be set.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialSystem {
    entries: BTreeMap<(u32, u32), RatFn>,
    standard_02: bool,
    order: u32,
}

impl DifferentialSystem {
    /// The trivial system: standard (0,2) kernel, everything else zero.
    pub fn trivial(order: u32) -> Self {
        DifferentialSystem {
            entries: BTreeMap::new(),
            standard_02: true,
            order,
        }
    }

    pub fn empty(order: u32) -> Self {
        DifferentialSystem {
            entries: BTreeMap::new(),
            standard_02: false,
            order,
        }
    }

    /// Guaranteed truncation order: entries are meaningful for
    /// 2g - 2 + n <= order.
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn has_standard_02(&self) -> bool {
        self.standard_02
    }

    pub fn set_standard_02(&mut self, flag: bool) {
        self.standard_02 = flag;
    }

    /// The regular part of the (g, n) entry (for (0,2): without the kernel).
    pub fn entry(&self, g: u32, n: u32) -> RatFn {
        self.entries
            .get(&(g, n))
            .cloned()
            .unwrap_or_else(|| RatFn::zero(&zvars(n as usize)))
    }

    pub fn set_entry(&mut self, g: u32, n: u32, value: RatFn) {
        assert!(n >= 1, "differentials have at least one point");
        assert!(
            (g, n) != (0, 1),
            "the (0,1) entry is fixed to zero by convention"
        );
        let value = value.with_vars(&zvars(n as usize));
        if value.is_zero() {
            self.entries.remove(&(g, n));
        } else {
            self.entries.insert((g, n), value);
        }
    }

    pub fn present_keys(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.keys().copied()
    }

    /// The full (0,2) correlator including the singular kernel, as one
    /// rational function.
    pub fn omega02_full(&self) -> RatFn {
        let vars = zvars(2);
        let mut r = self.entry(0, 2);
        if self.standard_02 {
            r = r.add(&standard_kernel(&vars, "z1", "z2"));
        }
        r
    }

    /// Keys (g, n) whose entries fail exact permutation symmetry.
    pub fn symmetry_defects(&self) -> Vec<(u32, u32)> {
        let mut bad = Vec::new();
        for (&(g, n), e) in &self.entries {
            if !is_symmetric(e, n as usize) {
                bad.push((g, n));
            }
        }
        bad
    }

    /// Keys (g, n) != (0,2) whose entries have a pole on some diagonal.
    pub fn diagonal_defects(&self) -> Vec<(u32, u32)> {
        let mut bad = Vec::new();
        for (&(g, n), e) in &self.entries {
            if (g, n) == (0, 2) {
                continue;
            }
            'pairs: for i in 1..=n as usize {
                for j in 1..i {
                    if e.restrict_diagonal(&format!("z{i}"), &format!("z{j}")).is_err() {
                        bad.push((g, n));
                        break 'pairs;
                    }
                }
            }
        }
        bad
    }

    /// True iff every entry, minus the (0,2) singular part, is finite when
    /// all its variables approach `point`. Returns the offending keys.
    pub fn check_regular_point(&self, point: &Rat) -> (bool, Vec<(u32, u32)>) {
        let mut bad = Vec::new();
        for (&(g, n), e) in &self.entries {
            let mut r = e.clone();
            let mut ok = true;
            for i in 1..=n as usize {
                match r.restrict_value(&format!("z{i}"), point) {
                    Ok(next) => r = next,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                bad.push((g, n));
            }
        }
        (bad.is_empty(), bad)
    }

    /// Rewrite the whole system in a new coordinate w with z = phi(w),
    /// phi(0) = 0, phi'(0) != 0. Entries transform with one factor phi'(w_i)
    /// per point; the (0,2) singular part stays singular-normalized, its
    /// coordinate-change defect (an exact rational function regular on the
    /// diagonal) is absorbed into the regular part.
    pub fn change_coordinate(&self, phi: &LPoly) -> SResult<Self> {
        let zvar = Vars::new(&[SpectralCurve::COORD]);
        let phi = phi.with_vars(&zvar);
        if let Some((lo, _)) = phi.var_range(SpectralCurve::COORD) {
            if lo < 0 {
                return Err(CalcError::NonInvertibleCoordinate(
                    "coordinate change must be polynomial in the coordinate".into(),
                ));
            }
        }
        if !phi.coefficient(&[0]).is_zero() {
            return Err(CalcError::NonInvertibleCoordinate(
                "coordinate change must fix the origin".into(),
            ));
        }
        if phi.coefficient(&[1]).is_zero() {
            return Err(CalcError::NonInvertibleCoordinate(
                "coordinate change must have a nonzero linear term".into(),
            ));
        }
        let phi_prime = phi.derive(SpectralCurve::COORD);
        let mut out = DifferentialSystem {
            entries: BTreeMap::new(),
            standard_02: self.standard_02,
            order: self.order,
        };
        for (&(g, n), e) in &self.entries {
            let vars = zvars(n as usize);
            let mut t = e.clone();
            for i in 1..=n as usize {
                let vi = format!("z{i}");
                let phi_i = phi.lift_univariate(SpectralCurve::COORD, &vars, &vi);
                t = t.substitute_poly(&vi, &phi_i)?;
                t = t.mul(&RatFn::from_poly(&phi_prime.lift_univariate(
                    SpectralCurve::COORD,
                    &vars,
                    &vi,
                )));
            }
            out.set_entry(g, n, t);
        }
        if self.standard_02 {
            let defect = kernel_coordinate_defect(&phi)?;
            out.set_entry(0, 2, out.entry(0, 2).add(&defect));
        }
        Ok(out)
    }

    pub fn to_canonical_json(&self) -> serde_json::Value {
        let mut entries = serde_json::Map::new();
        for (&(g, n), e) in &self.entries {
            entries.insert(format!("{g},{n}"), e.to_canonical_json());
        }
        serde_json::json!({
            "order": self.order,
            "standard_02": self.standard_02,
            "entries": entries,
        })
    }

    pub fn from_canonical_json(v: &serde_json::Value) -> Option<Self> {
        let order = u32::try_from(v.get("order")?.as_u64()?).ok()?;
        let standard_02 = v.get("standard_02")?.as_bool()?;
        let mut s = DifferentialSystem {
            entries: BTreeMap::new(),
            standard_02,
            order,
        };
        for (key, val) in v.get("entries")?.as_object()? {
            let (g, n) = key.split_once(',')?;
            let g: u32 = g.parse().ok()?;
            let n: u32 = n.parse().ok()?;
            let e = RatFn::from_canonical_json(val)?;
            if (g, n) == (0, 1) || n == 0 {
                return None;
            }
            s.set_entry(g, n, e);
        }
        Some(s)
    }
}

/// How the standard kernel changes under z = phi(w): the difference
/// `phi'(w1) phi'(w2) / (phi(w1) - phi(w2))^2 - 1/(w1 - w2)^2`, which is
/// regular on the diagonal.
pub fn kernel_coordinate_defect(phi: &LPoly) -> SResult<RatFn> {
    let vars = zvars(2);
    let phi_rf = RatFn::from_poly(phi);
    let q = diagonal_quotient(&phi_rf, SpectralCurve::COORD, &vars, "z1", "z2")?;
    let phi_prime = phi.derive(SpectralCurve::COORD);
    let num = phi_prime
        .lift_univariate(SpectralCurve::COORD, &vars, "z1")
        .mul(&phi_prime.lift_univariate(SpectralCurve::COORD, &vars, "z2"));
    let diff = LPoly::var_pow(&vars, "z1", 1).sub(&LPoly::var_pow(&vars, "z2", 1));
    let transformed = RatFn::from_poly(&num)
        .div(&RatFn::from_poly(&diff).pow(2)?)?
        .div(&q.pow(2)?)?;
    Ok(transformed.sub(&standard_kernel(&vars, "z1", "z2")))
}

fn is_symmetric(e: &RatFn, n: usize) -> bool {
    let vars = zvars(n);
    permutations(n).into_iter().all(|perm| {
        let mut t = e.clone();
        for i in 1..=n {
            t = t.rename_var(&format!("z{i}"), &format!("tmp{i}"));
        }
        for (i, &p) in perm.iter().enumerate() {
            t = t.rename_var(&format!("tmp{}", i + 1), &format!("z{p}"));
        }
        t.with_vars(&vars) == *e
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![1]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n);
            out.push(p);
        }
    }
    out
}
