//! Utilities `U(d)`, their inverses `g(y) = U⁻¹(y)`, the weighted sum
//! utility, and the admissibility test `d·U''(d) + U'(d) < 0`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DemandAllocation, Topology, UtilityWeights};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied utility on `d > 0`. Missing derivatives are replaced by
/// central differences.
#[derive(Clone)]
pub struct CustomUtility {
    name: String,
    value: RealFn,
    first: Option<RealFn>,
    second: Option<RealFn>,
}

impl CustomUtility {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            first: None,
            second: None,
        }
    }

    pub fn with_derivatives(
        mut self,
        first: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.first = Some(Arc::new(first));
        self.second = Some(Arc::new(second));
        self
    }

    fn step(d: f64) -> f64 {
        (1e-5 * d.max(1.0)).min(0.5 * d)
    }
}

impl fmt::Debug for CustomUtility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomUtility")
            .field("name", &self.name)
            .field("analytic_derivatives", &self.first.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum UtilityKind {
    /// `U(d) = d`.
    Lin,
    /// `U(d) = log d`.
    Log,
    /// `U(d) = log log(1 + d)`.
    Dlog,
    Custom(CustomUtility),
}

impl UtilityKind {
    pub fn name(&self) -> &str {
        match self {
            UtilityKind::Lin => "lin",
            UtilityKind::Log => "log",
            UtilityKind::Dlog => "dlog",
            UtilityKind::Custom(c) => &c.name,
        }
    }

    pub fn value(&self, d: f64) -> Result<f64> {
        let domain = |what: &str| {
            Error::UtilityDomain(format!("{} requires {what}, got d = {d}", self.name()))
        };
        if !d.is_finite() {
            return Err(domain("a finite demand"));
        }
        match self {
            UtilityKind::Lin if d < 0.0 => Err(domain("d ≥ 0")),
            UtilityKind::Lin => Ok(d),
            _ if d <= 0.0 => Err(domain("d > 0")),
            UtilityKind::Log => Ok(d.ln()),
            UtilityKind::Dlog => Ok(d.ln_1p().ln()),
            UtilityKind::Custom(c) => {
                let u = (c.value)(d);
                if u.is_finite() {
                    Ok(u)
                } else {
                    Err(domain("a finite utility value"))
                }
            }
        }
    }

    /// `U'(d)`.
    pub fn derivative(&self, d: f64) -> f64 {
        match self {
            UtilityKind::Lin => 1.0,
            UtilityKind::Log => 1.0 / d,
            UtilityKind::Dlog => 1.0 / ((1.0 + d) * d.ln_1p()),
            UtilityKind::Custom(c) => match &c.first {
                Some(f) => f(d),
                None => {
                    let h = CustomUtility::step(d);
                    ((c.value)(d + h) - (c.value)(d - h)) / (2.0 * h)
                }
            },
        }
    }

    /// `U''(d)`.
    pub fn second_derivative(&self, d: f64) -> f64 {
        match self {
            UtilityKind::Lin => 0.0,
            UtilityKind::Log => -1.0 / (d * d),
            UtilityKind::Dlog => {
                let l = d.ln_1p();
                -(1.0 + l) / ((1.0 + d).powi(2) * l * l)
            }
            UtilityKind::Custom(c) => match &c.second {
                Some(f) => f(d),
                None => {
                    let h = CustomUtility::step(d);
                    ((c.value)(d + h) - 2.0 * (c.value)(d) + (c.value)(d - h)) / (h * h)
                }
            },
        }
    }

    /// `g(y) = U⁻¹(y)`. Custom utilities are inverted by bisection.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::UtilityDomain(format!(
                "non-finite utility value {y}"
            )));
        }
        match self {
            UtilityKind::Lin if y <= 0.0 => Err(Error::UtilityDomain(format!(
                "lin inverse requires y > 0, got {y}"
            ))),
            UtilityKind::Custom(c) => invert_increasing(&*c.value, y),
            _ => Ok(self.inverse_derivatives(y).0),
        }
    }

    /// `(g(y), g'(y), g''(y))` for the built-in utilities.
    pub(crate) fn inverse_derivatives(&self, y: f64) -> (f64, f64, f64) {
        match self {
            UtilityKind::Lin => (y, 1.0, 0.0),
            UtilityKind::Log => {
                let e = y.exp();
                (e, e, e)
            }
            UtilityKind::Dlog => {
                let e = y.exp();
                let ee = e.exp();
                (e.exp_m1(), ee * e, ee * e * (1.0 + e))
            }
            UtilityKind::Custom(_) => unreachable!("custom utilities have no closed-form inverse"),
        }
    }

    pub(crate) fn is_builtin(&self) -> bool {
        !matches!(self, UtilityKind::Custom(_))
    }
}

fn invert_increasing(u: &dyn Fn(f64) -> f64, y: f64) -> Result<f64> {
    let fail = || Error::UtilityDomain(format!("custom utility does not reach y = {y}"));
    let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
    while !(u(lo) <= y) {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(fail());
        }
    }
    while !(u(hi) >= y) {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(fail());
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if u(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" => Ok(UtilityKind::Lin),
            "log" => Ok(UtilityKind::Log),
            "dlog" => Ok(UtilityKind::Dlog),
            other => Err(Error::InvalidInput(format!(
                "unknown utility `{other}` (expected lin, log or dlog)"
            ))),
        }
    }
}

/// `Σ_j [k_ij U(d̃_i) + k'_j U(d̃'_a(j))]`, summed user by user.
pub fn sum_utility(
    topology: &Topology,
    weights: &UtilityWeights,
    demands: &DemandAllocation,
    kind: &UtilityKind,
) -> Result<f64> {
    weights.check(topology)?;
    demands.check_shape(topology)?;
    let mut total = 0.0;
    for (j, user) in topology.users().iter().enumerate() {
        total += weights.regular[j] * kind.value(demands.regular[user.regular_cell])?;
        total += weights.complementary[j]
            * kind.value(demands.complementary[user.complementary_cell])?;
    }
    Ok(total)
}

/// `Σ_i k_i U(d̃_i) + Σ_a k'_a U(d̃'_a)` with per-cell aggregate weights.
pub fn sum_utility_aggregated(
    topology: &Topology,
    weights: &UtilityWeights,
    demands: &DemandAllocation,
    kind: &UtilityKind,
) -> Result<f64> {
    weights.check(topology)?;
    demands.check_shape(topology)?;
    let side = |k: Vec<f64>, d: &[f64]| -> Result<f64> {
        k.iter().zip(d).map(|(k, d)| Ok(k * kind.value(*d)?)).sum()
    };
    Ok(side(weights.regular_aggregate(topology), &demands.regular)?
        + side(
            weights.complementary_aggregate(topology),
            &demands.complementary,
        )?)
}

/// Tolerance on `d·U'' + U'` below which a sample counts as negative.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissibilityVerdict {
    StrictlyAdmissible,
    /// `boundary` is set when the criterion vanishes (within tolerance)
    /// instead of turning positive, as for `log`.
    NotAdmissible {
        boundary: bool,
    },
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    pub verdict: AdmissibilityVerdict,
    /// Largest value of `d·U''(d) + U'(d)` over the samples.
    pub max_criterion: f64,
    /// Whether `log g` had positive second differences at every sample.
    pub inverse_log_convex: Option<bool>,
}

/// Evaluates `d·U''(d) + U'(d)` on `samples` and cross-checks the verdict
/// against second differences of `log g(y)`.
pub fn admissibility_check(kind: &UtilityKind, samples: &[f64]) -> Admissibility {
    let inconclusive = |max_criterion| Admissibility {
        verdict: AdmissibilityVerdict::Inconclusive,
        max_criterion,
        inverse_log_convex: None,
    };
    if samples.is_empty() || samples.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return inconclusive(f64::NAN);
    }
    let criteria: Vec<f64> = samples
        .iter()
        .map(|&d| d * kind.second_derivative(d) + kind.derivative(d))
        .collect();
    if criteria.iter().any(|c| !c.is_finite()) {
        return inconclusive(f64::NAN);
    }
    let max_criterion = criteria.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inverse_log_convex = log_convexity_of_inverse(kind, samples);

    let verdict = if max_criterion < -ADMISSIBILITY_TOLERANCE {
        match inverse_log_convex {
            Some(true) => AdmissibilityVerdict::StrictlyAdmissible,
            _ => AdmissibilityVerdict::Inconclusive,
        }
    } else {
        AdmissibilityVerdict::NotAdmissible {
            boundary: max_criterion <= ADMISSIBILITY_TOLERANCE,
        }
    };
    Admissibility {
        verdict,
        max_criterion,
        inverse_log_convex,
    }
}

fn log_convexity_of_inverse(kind: &UtilityKind, samples: &[f64]) -> Option<bool> {
    let h = 1e-2;
    let log_g = |y: f64| kind.inverse(y).ok().map(f64::ln).filter(|v| v.is_finite());
    let mut all_positive = true;
    for &d in samples {
        let y = kind.value(d).ok()?;
        let second = log_g(y + h)? - 2.0 * log_g(y)? + log_g(y - h)?;
        if !(second > 1e-12) {
            all_positive = false;
        }
    }
    Some(all_positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    #[test]
    fn values() {
        assert_eq!(UtilityKind::Lin.value(0.45).unwrap(), 0.45);
        assert_eq!(UtilityKind::Log.value(1.0).unwrap(), 0.0);
        assert!(UtilityKind::Dlog.value(E - 1.0).unwrap().abs() < 1e-15);
        assert!(UtilityKind::Log.value(0.0).is_err());
        assert!(UtilityKind::Dlog.value(-1.0).is_err());
        assert!(UtilityKind::Lin.value(-0.1).is_err());
    }

    #[test]
    fn inverses() {
        assert_eq!(UtilityKind::Log.inverse(0.0).unwrap(), 1.0);
        assert!((UtilityKind::Dlog.inverse(0.0).unwrap() - (E - 1.0)).abs() < 1e-15);
        assert!(UtilityKind::Lin.inverse(0.0).is_err());
    }

    #[test]
    fn round_trip_on_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let y: f64 = rng.random_range(-5.0..2.0);
            for kind in [UtilityKind::Log, UtilityKind::Dlog] {
                let back = kind.value(kind.inverse(y).unwrap()).unwrap();
                assert!(
                    (back - y).abs() <= 1e-12 * y.abs().max(1.0),
                    "{kind}: {y} -> {back}"
                );
            }
        }
    }

    #[test]
    fn inverse_derivatives_match_differences() {
        for kind in [UtilityKind::Lin, UtilityKind::Log, UtilityKind::Dlog] {
            for y in [0.1, 0.7, 1.3] {
                let h = 1e-5;
                let (_, g1, g2) = kind.inverse_derivatives(y);
                let g = |y| kind.inverse_derivatives(y).0;
                assert!(((g(y + h) - g(y - h)) / (2.0 * h) - g1).abs() < 1e-6 * g1.max(1.0));
                let fd2 = (kind.inverse_derivatives(y + h).1 - kind.inverse_derivatives(y - h).1)
                    / (2.0 * h);
                assert!((fd2 - g2).abs() < 1e-6 * g2.abs().max(1.0));
            }
        }
    }

    #[test]
    fn derivatives_match_differences() {
        for kind in [UtilityKind::Log, UtilityKind::Dlog] {
            for d in [0.01, 0.5, 3.0] {
                let h = 1e-6 * d;
                let fd = (kind.value(d + h).unwrap() - kind.value(d - h).unwrap()) / (2.0 * h);
                assert!((fd - kind.derivative(d)).abs() < 1e-6 * fd.abs());
                let fd2 = (kind.derivative(d + h) - kind.derivative(d - h)) / (2.0 * h);
                assert!((fd2 - kind.second_derivative(d)).abs() < 1e-5 * fd2.abs());
            }
        }
    }

    #[test]
    fn strictly_increasing_on_sorted_grid() {
        let ds = grid(1e-4, 50.0, 400);
        for kind in [UtilityKind::Lin, UtilityKind::Log, UtilityKind::Dlog] {
            let us: Vec<f64> = ds.iter().map(|d| kind.value(*d).unwrap()).collect();
            assert!(us.windows(2).all(|w| w[0] < w[1]), "{kind}");
        }
    }

    #[test]
    fn admissibility_verdicts() {
        let ds = grid(1e-3, 10.0, 200);
        let dlog = admissibility_check(&UtilityKind::Dlog, &ds);
        assert_eq!(dlog.verdict, AdmissibilityVerdict::StrictlyAdmissible);
        assert_eq!(dlog.inverse_log_convex, Some(true));
        let lin = admissibility_check(&UtilityKind::Lin, &ds);
        assert_eq!(
            lin.verdict,
            AdmissibilityVerdict::NotAdmissible { boundary: false }
        );
        assert_eq!(lin.max_criterion, 1.0);
        let log = admissibility_check(&UtilityKind::Log, &ds);
        assert_eq!(
            log.verdict,
            AdmissibilityVerdict::NotAdmissible { boundary: true }
        );
        assert_eq!(log.inverse_log_convex, Some(false));
    }

    #[test]
    fn custom_utility_without_derivatives() {
        let custom = UtilityKind::Custom(CustomUtility::new("loglog", |d: f64| d.ln_1p().ln()));
        let ds = grid(1e-2, 10.0, 50);
        assert_eq!(
            admissibility_check(&custom, &ds).verdict,
            AdmissibilityVerdict::StrictlyAdmissible
        );
        let sqrt = UtilityKind::Custom(CustomUtility::new("sqrt", f64::sqrt));
        assert!(matches!(
            admissibility_check(&sqrt, &ds).verdict,
            AdmissibilityVerdict::NotAdmissible { boundary: false }
        ));
        assert!((sqrt.inverse(2.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_samples_are_inconclusive() {
        let v = admissibility_check(&UtilityKind::Log, &[1.0, f64::NAN]);
        assert_eq!(v.verdict, AdmissibilityVerdict::Inconclusive);
        let bad = UtilityKind::Custom(CustomUtility::new("bad", |_| f64::NAN));
        assert_eq!(
            admissibility_check(&bad, &[1.0]).verdict,
            AdmissibilityVerdict::Inconclusive
        );
    }

    #[test]
    fn log_convexity_of_inverse_on_interval() {
        let h = 1e-2;
        for i in 0..=450 {
            let y = -3.0 + i as f64 * 0.01;
            let lg = |y: f64| UtilityKind::Dlog.inverse(y).unwrap().ln();
            assert!(lg(y + h) - 2.0 * lg(y) + lg(y - h) > 0.0, "y = {y}");
            let ll = |y: f64| UtilityKind::Log.inverse(y).unwrap().ln();
            assert!((ll(y + h) - 2.0 * ll(y) + ll(y - h)).abs() < 1e-14);
        }
    }
}
