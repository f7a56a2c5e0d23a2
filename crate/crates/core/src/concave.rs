//! Symmetric concave functions `C: [0,1] -> [0, 1/2]` with `C(0) = C(1) = 0`
//! and `C(1/2) = 1/2`.
//!
//! Six closed forms are provided, plus the polynomial family `Poly(n)`
//! defined by `C''(eta) = -K2 (eta (1 - eta))^n`. As `n` grows, `Poly(n)`
//! decreases pointwise towards `min(eta, 1 - eta)`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported `Poly(n)` order.
pub const MAX_POLY_ORDER: u32 = 16;

/// Grid size used by [`validate_concave`].
pub const GRID_POINTS: usize = 1001;

/// `1 / (2 ln 2)`: scales binary entropy to peak at 1/2.
pub const LOG_SCALE: f64 = 0.721_347_520_444_481_7;
/// Root of `-ln cos(a/2) = a/2`.
pub const LOGCOS_A: f64 = 2.585_391_438_746_797;
/// `2 acosh(3/2)`, so that `cosh(b/2) - 1 = 1/2`.
pub const COSH_B: f64 = 1.924_847_300_238_413;
/// `2 acos(2/3)`, so that `sec(c/2) - 1 = 1/2`.
pub const SEC_C: f64 = 1.682_137_341_135_862;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConcaveKind {
    Ls,
    Log,
    Exp,
    LogCos,
    Cosh,
    Sec,
    Poly(u32),
}

impl ConcaveKind {
    pub const CLOSED_FORMS: [ConcaveKind; 6] = [
        ConcaveKind::Ls,
        ConcaveKind::Log,
        ConcaveKind::Exp,
        ConcaveKind::LogCos,
        ConcaveKind::Cosh,
        ConcaveKind::Sec,
    ];
}

impl fmt::Display for ConcaveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConcaveKind::Ls => f.write_str("ls"),
            ConcaveKind::Log => f.write_str("log"),
            ConcaveKind::Exp => f.write_str("exp"),
            ConcaveKind::LogCos => f.write_str("logcos"),
            ConcaveKind::Cosh => f.write_str("cosh"),
            ConcaveKind::Sec => f.write_str("sec"),
            ConcaveKind::Poly(n) => write!(f, "poly:{n}"),
        }
    }
}

impl FromStr for ConcaveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "ls" => ConcaveKind::Ls,
            "log" => ConcaveKind::Log,
            "exp" => ConcaveKind::Exp,
            "logcos" | "log-cos" => ConcaveKind::LogCos,
            "cosh" => ConcaveKind::Cosh,
            "sec" => ConcaveKind::Sec,
            other => {
                let n = other
                    .strip_prefix("poly:")
                    .or_else(|| other.strip_prefix("poly-"))
                    .and_then(|n| n.parse::<u32>().ok());
                match n {
                    Some(n) => ConcaveKind::Poly(n),
                    None => {
                        return Err(Error::InvalidParameter(format!(
                            "unknown concave function '{s}'; expected one of \
                             ls, log, exp, logcos, cosh, sec, poly:N"
                        )))
                    }
                }
            }
        };
        Ok(kind)
    }
}

impl Serialize for ConcaveKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConcaveKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Exact and floating-point description of a `Poly(n)` function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoefficients {
    pub n: u32,
    pub k1: f64,
    pub k2: f64,
    pub k1_exact: String,
    pub k2_exact: String,
    /// Coefficients of `eta^1 .. eta^(2n+2)` of `C` (already multiplied by `K2`).
    pub monomial: Vec<f64>,
    pub monomial_exact: Vec<String>,
    /// Coefficients of `u^1 .. u^(n+1)` with `u = eta (1 - eta)`.
    pub symmetric: Vec<f64>,
}

impl PolyCoefficients {
    /// Evaluates the monomial form. Loses accuracy for large `n`; used for audits.
    pub fn eval_monomial(&self, eta: f64) -> f64 {
        self.monomial.iter().rev().fold(0.0, |acc, c| (acc + c) * eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveFn {
    kind: ConcaveKind,
    poly: Option<PolyCoefficients>,
}

impl ConcaveFn {
    pub fn new(kind: ConcaveKind) -> Result<Self> {
        match kind {
            ConcaveKind::Poly(n) => poly_coefficients(n),
            _ => Ok(Self { kind, poly: None }),
        }
    }

    pub fn kind(&self) -> ConcaveKind {
        self.kind
    }

    pub fn poly(&self) -> Option<&PolyCoefficients> {
        self.poly.as_ref()
    }

    pub fn eval(&self, eta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta = {eta} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(eta))
    }

    /// Evaluates `C(eta)` for `eta` already known to lie in `[0, 1]`.
    pub fn eval_unchecked(&self, eta: f64) -> f64 {
        let om = 1.0 - eta;
        match self.kind {
            ConcaveKind::Ls => 2.0 * eta * om,
            ConcaveKind::Log => -LOG_SCALE * (xlogx(eta) + xlogx(om)),
            ConcaveKind::Exp => (eta * om).sqrt(),
            ConcaveKind::LogCos => {
                ((LOGCOS_A * (eta - 0.5)).cos() / (0.5 * LOGCOS_A).cos()).ln() / LOGCOS_A
            }
            ConcaveKind::Cosh => (0.5 * COSH_B).cosh() - (COSH_B * (0.5 - eta)).cosh(),
            ConcaveKind::Sec => 1.0 / (0.5 * SEC_C).cos() - 1.0 / (SEC_C * (0.5 - eta)).cos(),
            ConcaveKind::Poly(_) => {
                let u = eta * om;
                let coeffs = &self.poly.as_ref().expect("poly coefficients").symmetric;
                coeffs.iter().rev().fold(0.0, |acc, c| (acc + c) * u)
            }
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn eval_concave(c: &ConcaveFn, eta: f64) -> Result<f64> {
    c.eval(eta)
}

fn binomial(n: u32, k: u32) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rational converts to f64")
}

/// Builds `Poly(n)`.
///
/// `(eta (1-eta))^n` is expanded binomially and integrated twice term by term
/// in exact rational arithmetic. `K1 = -Q(1/2)` makes `C'(1/2) = 0` and `K2`
/// scales so that `C(1/2) = 1/2`. The same function is also expressed in the
/// variable `u = eta (1 - eta)`, where all coefficients are positive; that
/// form is used for evaluation.
pub fn poly_coefficients(n: u32) -> Result<ConcaveFn> {
    if n > MAX_POLY_ORDER {
        return Err(Error::InvalidParameter(format!(
            "poly order {n} exceeds the supported maximum {MAX_POLY_ORDER}"
        )));
    }
    let degree = (2 * n + 2) as usize;
    let half = rat(1, 2);

    // Q(eta) = -sum_k C(n,k) (-1)^k eta^(n+k+1) / (n+k+1)
    let mut q_half = BigRational::zero();
    // integral of Q: -sum_k C(n,k) (-1)^k eta^(n+k+2) / ((n+k+1)(n+k+2))
    let mut raw = vec![BigRational::zero(); degree];
    for k in 0..=n {
        let sign = if k % 2 == 0 { BigInt::one() } else { -BigInt::one() };
        let b = binomial(n, k) * sign;
        let p1 = (n + k + 1) as i64;
        let term = BigRational::new(b.clone(), BigInt::from(p1));
        q_half -= term * pow(&half, (n + k + 1) as usize);
        let p2 = p1 + 1;
        raw[(n + k + 1) as usize] -= BigRational::new(b, BigInt::from(p1 * p2));
    }
    let k1 = -q_half;
    raw[0] += k1.clone();

    let at_half = raw
        .iter()
        .enumerate()
        .fold(BigRational::zero(), |acc, (i, c)| acc + c * pow(&half, i + 1));
    let k2 = half.clone() / at_half;
    let monomial: Vec<BigRational> = raw.iter().map(|c| c * &k2).collect();

    // Symmetric form f(u) = sum_{j=1}^{n+1} a_j u^j solving
    // f''(u)(1-4u) - 2 f'(u) = -K2 u^n.
    let m = n as usize + 1;
    let mut sym = vec![BigRational::zero(); m];
    sym[m - 1] = &k2 / BigRational::from_integer(BigInt::from((n as i64 + 1) * (4 * n as i64 + 2)));
    for j in (0..m - 1).rev() {
        // a_{j+1} = (j+2)/(4j+2) a_{j+2}, stored at index j
        sym[j] = &sym[j + 1] * rat(j as i64 + 2, 4 * j as i64 + 2);
    }
    debug_assert_eq!(
        sym.iter()
            .enumerate()
            .fold(BigRational::zero(), |acc, (i, c)| acc + c * pow(&rat(1, 4), i + 1)),
        half
    );

    let poly = PolyCoefficients {
        n,
        k1: to_f64(&k1),
        k2: to_f64(&k2),
        k1_exact: k1.to_string(),
        k2_exact: k2.to_string(),
        monomial: monomial.iter().map(to_f64).collect(),
        monomial_exact: monomial.iter().map(ToString::to_string).collect(),
        symmetric: sym.iter().map(to_f64).collect(),
    };
    Ok(ConcaveFn { kind: ConcaveKind::Poly(n), poly: Some(poly) })
}

/// Rounded `(K1, K2)` values in common circulation, kept for audits next to
/// the exact constants. The Poly-2 `K2` of 87.0196 does not match the exact
/// 960/11 and is reported, not used.
pub fn tabulated_constants(n: u32) -> Option<(f64, f64)> {
    match n {
        2 => Some((0.0167, 87.0196)),
        4 => Some((7.9365e-4, 1671.3)),
        _ => None,
    }
}

fn pow(x: &BigRational, e: usize) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

/// Outcome of one admissibility check: pass flag plus the worst residual seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub zero_at_0: Check,
    pub zero_at_1: Check,
    pub half_at_half: Check,
    pub symmetric: Check,
    /// Largest interior second difference (must be `<= CONCAVITY_TOL`, and
    /// the smallest must be strictly below `-CONCAVITY_TOL`).
    pub concave: Check,
    /// Largest shortfall below `min(eta, 1 - eta)`.
    pub dominates_min: Check,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        [
            self.zero_at_0,
            self.zero_at_1,
            self.half_at_half,
            self.symmetric,
            self.concave,
            self.dominates_min,
        ]
        .iter()
        .all(|c| c.pass)
    }
}

const ENDPOINT_TOL: f64 = 1e-12;
const VALUE_TOL: f64 = 1e-9;
/// Second differences at high `Poly(n)` orders fall below rounding near the
/// endpoints, so non-positivity is checked up to this slack.
pub const CONCAVITY_TOL: f64 = 1e-12;

/// Checks every admissibility condition of `c` on a uniform grid.
pub fn validate_concave(c: &ConcaveFn) -> ValidationReport {
    validate_fn(|eta| c.eval_unchecked(eta))
}

/// Same checks for an arbitrary function on `[0, 1]`.
pub fn validate_fn(f: impl Fn(f64) -> f64) -> ValidationReport {
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&e| f(e)).collect();

    let check = |residual: f64, tol: f64| Check { pass: residual <= tol, residual };

    let sym = grid
        .iter()
        .map(|&e| (f(e) - f(1.0 - e)).abs())
        .fold(0.0, f64::max);
    let (max_d2, min_d2) = vals.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(
        (f64::NEG_INFINITY, f64::INFINITY),
        |(hi, lo), d| (hi.max(d), lo.min(d)),
    );
    let shortfall = grid
        .iter()
        .zip(&vals)
        .map(|(&e, &v)| e.min(1.0 - e) - v)
        .fold(f64::NEG_INFINITY, f64::max);

    ValidationReport {
        zero_at_0: check(f(0.0).abs(), ENDPOINT_TOL),
        zero_at_1: check(f(1.0).abs(), ENDPOINT_TOL),
        half_at_half: check((f(0.5) - 0.5).abs(), VALUE_TOL),
        symmetric: check(sym, VALUE_TOL),
        concave: Check { pass: max_d2 <= CONCAVITY_TOL && min_d2 < -CONCAVITY_TOL, residual: max_d2 },
        dominates_min: check(shortfall.max(0.0), VALUE_TOL),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn all_shipped() -> Vec<ConcaveFn> {
        let mut v: Vec<ConcaveFn> =
            ConcaveKind::CLOSED_FORMS.iter().map(|&k| ConcaveFn::new(k).unwrap()).collect();
        v.extend((0..=MAX_POLY_ORDER).map(|n| poly_coefficients(n).unwrap()));
        v
    }

    #[test]
    fn constants_solve_their_normalizations() {
        assert_relative_eq!(LOG_SCALE, 1.0 / (2.0 * 2f64.ln()), max_relative = 1e-15);
        assert_relative_eq!(-(0.5 * LOGCOS_A).cos().ln(), 0.5 * LOGCOS_A, max_relative = 1e-14);
        assert_relative_eq!((0.5 * COSH_B).cosh(), 1.5, max_relative = 1e-15);
        assert_relative_eq!(1.0 / (0.5 * SEC_C).cos(), 1.5, max_relative = 1e-15);
        // the rounded constants in common use
        assert!((LOGCOS_A - 2.5854).abs() < 1e-4);
        assert!((COSH_B - 1.9248).abs() < 1e-4);
        assert!((SEC_C - 1.6821).abs() < 1e-4);
        assert!((LOG_SCALE - 0.7213).abs() < 1e-4);
    }

    #[test]
    fn eval_examples() {
        let exp = ConcaveFn::new(ConcaveKind::Exp).unwrap();
        assert_eq!(exp.eval(0.5).unwrap(), 0.5);
        let ls = ConcaveFn::new(ConcaveKind::Ls).unwrap();
        assert_relative_eq!(ls.eval(0.25).unwrap(), 3.0 / 8.0, max_relative = 1e-15);
        for c in all_shipped() {
            assert!(c.eval(0.0).unwrap().abs() <= 1e-12, "{}", c.kind());
        }
        assert!(ls.eval(-0.1).is_err());
        assert!(ls.eval(1.0 + 1e-9).is_err());
    }

    #[test]
    fn parse_roundtrip() {
        for s in ["ls", "log", "exp", "logcos", "cosh", "sec", "poly:4"] {
            let k: ConcaveKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        let err = "bogus".parse::<ConcaveKind>().unwrap_err().to_string();
        assert!(err.contains("poly:N"));
    }

    #[test]
    fn poly0_is_ls() {
        let p = poly_coefficients(0).unwrap();
        let poly = p.poly().unwrap();
        // -2 eta (eta - 1) = 2 eta - 2 eta^2
        assert_eq!(poly.monomial_exact, vec!["2", "-2"]);
        assert_eq!(poly.monomial, vec![2.0, -2.0]);
        assert_eq!(poly.k1_exact, "1/2");
    }

    #[test]
    fn poly2_constants() {
        let p = poly_coefficients(2).unwrap();
        let poly = p.poly().unwrap();
        assert_eq!(poly.k1_exact, "1/60");
        assert_eq!(poly.k2_exact, "960/11");
        // K2 * (1/60 eta - 1/12 eta^4 + 1/10 eta^5 - 1/30 eta^6)
        let expected = ["16/11", "0", "0", "-80/11", "96/11", "-32/11"];
        assert_eq!(poly.monomial_exact, expected);
    }

    #[test]
    fn poly4_constants() {
        let p = poly_coefficients(4).unwrap();
        let poly = p.poly().unwrap();
        assert_eq!(poly.k1_exact, "1/1260");
        assert!(((poly.k1 - 7.9365e-4) / 7.9365e-4).abs() < 5e-4);
        assert!(((poly.k2 - 1671.3) / 1671.3).abs() < 5e-4);
        // raw polynomial -1/90 e^10 + 1/18 e^9 - 3/28 e^8 + 2/21 e^7 - 1/30 e^6 + 1/1260 e
        let raw: Vec<f64> = poly.monomial.iter().map(|c| c / poly.k2).collect();
        let want = [
            (0, 1.0 / 1260.0),
            (5, -1.0 / 30.0),
            (6, 2.0 / 21.0),
            (7, -3.0 / 28.0),
            (8, 1.0 / 18.0),
            (9, -1.0 / 90.0),
        ];
        for (i, w) in want {
            assert_relative_eq!(raw[i], w, max_relative = 1e-14);
        }
        for i in [1, 2, 3, 4] {
            assert_eq!(raw[i], 0.0);
        }
    }

    #[test]
    fn poly_order_cap() {
        assert!(poly_coefficients(MAX_POLY_ORDER).is_ok());
        assert!(poly_coefficients(MAX_POLY_ORDER + 1).is_err());
    }

    #[test]
    fn symmetric_form_matches_monomial_form() {
        for n in 0..=6 {
            let p = poly_coefficients(n).unwrap();
            let poly = p.poly().unwrap();
            for i in 0..=200 {
                let eta = i as f64 / 200.0;
                let a = p.eval_unchecked(eta);
                let b = poly.eval_monomial(eta);
                assert!((a - b).abs() < 1e-11, "n={n} eta={eta}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn every_shipped_function_validates() {
        for c in all_shipped() {
            let r = validate_concave(&c);
            assert!(r.all_pass(), "{}: {r:?}", c.kind());
        }
    }

    #[test]
    fn broken_function_fails() {
        let r = validate_fn(|eta| eta);
        assert!(!r.symmetric.pass);
        assert!(!r.zero_at_1.pass);
        assert!(r.zero_at_0.pass);
    }

    #[test]
    fn poly_half_and_flat_derivative() {
        for n in 0..=MAX_POLY_ORDER {
            let c = poly_coefficients(n).unwrap();
            assert!((c.eval_unchecked(0.5) - 0.5).abs() < 1e-14);
            let h = 1e-5;
            let d = (c.eval_unchecked(0.5 + h) - c.eval_unchecked(0.5 - h)) / (2.0 * h);
            assert!(d.abs() < 1e-10, "n={n}: C'(1/2) ~ {d}");
        }
    }

    #[test]
    fn poly_orders_decrease_pointwise() {
        for n in 0..=8 {
            let a = poly_coefficients(n).unwrap();
            let b = poly_coefficients(n + 1).unwrap();
            for i in 0..GRID_POINTS {
                let eta = i as f64 / (GRID_POINTS - 1) as f64;
                let (ca, cb) = (a.eval_unchecked(eta), b.eval_unchecked(eta));
                assert!(ca >= cb - 1e-12, "n={n} eta={eta}");
                assert!(cb >= eta.min(1.0 - eta) - 1e-9);
            }
        }
    }

    #[test]
    fn closed_form_gap_ordering() {
        let gap = |k: ConcaveKind| {
            let c = ConcaveFn::new(k).unwrap();
            (0..GRID_POINTS)
                .map(|i| {
                    let e = i as f64 / (GRID_POINTS - 1) as f64;
                    c.eval_unchecked(e) - e.min(1.0 - e)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        use ConcaveKind::*;
        let order = [Ls, Cosh, Sec, Log, LogCos, Exp];
        for w in order.windows(2) {
            assert!(gap(w[0]) < gap(w[1]), "{} vs {}", w[0], w[1]);
        }
    }
}
