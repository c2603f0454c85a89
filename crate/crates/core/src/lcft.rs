//! Liouville correlation functions: admissibility, zero mode, prefactors,
//! the conformal anomaly, and the Girsanov-reduced Monte Carlo estimators.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gmc::background_charge;
use crate::green::{circle_average_w, GreenKernel};
use crate::mc::StreamFamily;
use crate::quadrature::adaptive_gk;
use crate::surfaces::{ConformalFactor, SurfaceModel, SurfacePoint};

mod estimator;

pub use estimator::{
    anomaly_check, correlation_estimate, direct_estimate, scaling_residual, AnomalyReport,
    CorrelationConfig, CorrelationEstimate, ScalingReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleParams {
    pub gamma: f64,
    pub q: f64,
    pub mu: f64,
    pub mu_boundary: f64,
    pub central_charge: f64,
}

impl LiouvilleParams {
    pub fn new(gamma: f64, mu: f64, mu_boundary: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(Error::param("gamma", format!("must lie in (0, 2], got {gamma}")));
        }
        if !(mu >= 0.0 && mu_boundary >= 0.0) {
            return Err(Error::param("mu", "cosmological constants must be nonnegative"));
        }
        if mu == 0.0 && mu_boundary == 0.0 {
            return Err(Error::param("mu", "μ = μ∂ = 0 is not renormalizable"));
        }
        let q = background_charge(gamma);
        Ok(LiouvilleParams { gamma, q, mu, mu_boundary, central_charge: 1.0 + 6.0 * q * q })
    }

    pub fn with_mu(&self, mu: f64, mu_boundary: f64) -> Result<Self> {
        LiouvilleParams::new(self.gamma, mu, mu_boundary)
    }
}

/// Conformal weight `Δ_α = (α/2)(Q − α/2)`.
pub fn conformal_weight(alpha: f64, q: f64) -> f64 {
    0.5 * alpha * (q - 0.5 * alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkInsertion {
    pub point: SurfacePoint,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryInsertion {
    pub point: SurfacePoint,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InsertionSet {
    #[serde(default)]
    pub bulk: Vec<BulkInsertion>,
    #[serde(default)]
    pub boundary: Vec<BoundaryInsertion>,
}

impl InsertionSet {
    pub fn validate(&self, surface: &SurfaceModel) -> Result<()> {
        for b in &self.bulk {
            if !surface.contains(&b.point) || surface.on_boundary(&b.point) {
                return Err(Error::OutsideDomain(format!("bulk insertion {:?} must be interior", b.point)));
            }
        }
        for b in &self.boundary {
            if !surface.on_boundary(&b.point) {
                return Err(Error::OutsideDomain(format!("boundary insertion {:?} must lie on ∂Σ", b.point)));
            }
        }
        let pts = self.points();
        for i in 0..pts.len() {
            for j in 0..i {
                if surface.double_distance(&pts[i], &pts[j]) < 1e-12 {
                    return Err(Error::CoincidentPoints);
                }
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SurfacePoint> {
        self.bulk.iter().map(|b| b.point).chain(self.boundary.iter().map(|b| b.point)).collect()
    }

    /// `Σα + Σβ/2`
    pub fn total_charge(&self) -> f64 {
        self.bulk.iter().map(|b| b.alpha).sum::<f64>() + 0.5 * self.boundary.iter().map(|b| b.beta).sum::<f64>()
    }

    /// Insertions in a canonical order, so that results do not depend on input order.
    pub fn canonical(&self) -> InsertionSet {
        let key = |p: &SurfacePoint, w: f64| (p.u, p.v, w);
        let mut bulk = self.bulk.clone();
        bulk.sort_by(|a, b| {
            let (x, y) = (key(&a.point, a.alpha), key(&b.point, b.alpha));
            x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2))
        });
        let mut boundary = self.boundary.clone();
        boundary.sort_by(|a, b| {
            let (x, y) = (key(&a.point, a.beta), key(&b.point, b.beta));
            x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.total_cmp(&y.2))
        });
        InsertionSet { bulk, boundary }
    }

    /// Charges as they enter the field: `α_i` for bulk, `β_j/2` for boundary.
    pub(crate) fn field_charges(&self) -> Vec<(SurfacePoint, f64)> {
        self.bulk
            .iter()
            .map(|b| (b.point, b.alpha))
            .chain(self.boundary.iter().map(|b| (b.point, 0.5 * b.beta)))
            .collect()
    }
}

/// `s̄ = Σα + Σβ/2 − Qχ`
pub fn sbar(insertions: &InsertionSet, params: &LiouvilleParams, chi: i32) -> f64 {
    insertions.total_charge() - params.q * chi as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `μ > 0`, `μ∂ > 0`
    BothPositive,
    /// `μ > 0`, `μ∂ = 0`
    BulkOnly,
    /// `μ = 0`, `μ∂ > 0`
    BoundaryOnly,
}

impl Regime {
    pub fn from_mu(mu: f64, mu_boundary: f64) -> Result<Regime> {
        match (mu > 0.0, mu_boundary > 0.0) {
            (true, true) => Ok(Regime::BothPositive),
            (true, false) => Ok(Regime::BulkOnly),
            (false, true) => Ok(Regime::BoundaryOnly),
            (false, false) => Err(Error::param("mu", "μ = μ∂ = 0 is not renormalizable")),
        }
    }

    /// Which of the three bounds the regime requires.
    pub fn requires(self) -> [bool; 3] {
        match self {
            Regime::BothPositive => [true, true, true],
            Regime::BulkOnly => [true, true, false],
            Regime::BoundaryOnly => [true, false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeibergReport {
    pub regime: Regime,
    pub bound1: bool,
    pub bound2: Vec<bool>,
    pub bound3: Vec<bool>,
    pub admissible: bool,
}

pub fn seiberg_check(insertions: &InsertionSet, mu: f64, mu_boundary: f64, gamma: f64, chi: i32) -> Result<SeibergReport> {
    let regime = Regime::from_mu(mu, mu_boundary)?;
    let q = background_charge(gamma);
    let bound1 = insertions.total_charge() > q * chi as f64;
    let bound2: Vec<bool> = insertions.bulk.iter().map(|b| b.alpha < q).collect();
    let bound3: Vec<bool> = insertions.boundary.iter().map(|b| b.beta < q).collect();
    let req = regime.requires();
    let admissible = (!req[0] || bound1)
        && (!req[1] || bound2.iter().all(|&b| b))
        && (!req[2] || bound3.iter().all(|&b| b));
    Ok(SeibergReport { regime, bound1, bound2, bound3, admissible })
}

fn check_zero_mode_args(a: f64, b: f64, sbar: f64) -> Result<()> {
    if sbar <= 0.0 {
        return Err(Error::Divergent { sbar });
    }
    if !(a >= 0.0 && b >= 0.0) || (a == 0.0 && b == 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::param("masses", "need μA > 0 or μ∂L > 0, finite"));
    }
    Ok(())
}

/// `∫ℝ e^{c s̄} exp(−μ e^{γc} A − μ∂ e^{γc/2} L) dc` by adaptive quadrature in `x = γc`.
pub fn zero_mode_quadrature(a_mass: f64, l_mass: f64, sbar: f64, params: &LiouvilleParams) -> Result<f64> {
    let a = params.mu * a_mass;
    let b = params.mu_boundary * l_mass;
    check_zero_mode_args(a, b, sbar)?;
    let g = params.gamma;
    let s = sbar / g;
    let f = |x: f64| s * x - a * x.exp() - b * (0.5 * x).exp();
    // Stationary point: a y² + (b/2) y = s with y = e^{x/2}.
    let y = if a > 0.0 {
        (-0.5 * b + (0.25 * b * b + 4.0 * a * s).sqrt()) / (2.0 * a)
    } else {
        2.0 * s / b
    };
    let xs = 2.0 * y.ln();
    let fmax = f(xs);
    let mut left = 1.0;
    while f(xs - left) - fmax > -60.0 {
        left *= 2.0;
    }
    let mut right = 1.0;
    while f(xs + right) - fmax > -60.0 {
        right *= 2.0;
    }
    let h = |x: f64| (f(x) - fmax).exp();
    let i1 = adaptive_gk(h, xs - left, xs, 1e-12, 0.0, 4000)?;
    let i2 = adaptive_gk(h, xs, xs + right, 1e-12, 0.0, 4000)?;
    Ok((fmax.exp() / g) * (i1 + i2))
}

/// Zero-mode integral; closed Γ forms when one cosmological constant vanishes.
pub fn zero_mode_integral(a_mass: f64, l_mass: f64, sbar: f64, params: &LiouvilleParams) -> Result<f64> {
    let a = params.mu * a_mass;
    let b = params.mu_boundary * l_mass;
    check_zero_mode_args(a, b, sbar)?;
    let g = params.gamma;
    if b == 0.0 {
        let s = sbar / g;
        Ok((ln_gamma(s) - s * a.ln()).exp() / g)
    } else if a == 0.0 {
        let s = 2.0 * sbar / g;
        Ok(2.0 * (ln_gamma(s) - s * b.ln()).exp() / g)
    } else {
        zero_mode_quadrature(a_mass, l_mass, sbar, params)
    }
}

/// `H(x) = Σ 2πα_i G(z_i, x) + Σ πβ_j G(s_j, x)`.
pub fn insertion_potential(insertions: &InsertionSet, kernel: &GreenKernel, x: &SurfacePoint) -> Result<f64> {
    insertions
        .field_charges()
        .iter()
        .map(|(p, w)| kernel.eval(p, x).map(|k| w * k))
        .sum()
}

/// `exp{(1+6Q²)/(96π)(∫(‖dφ‖² + 2R₀φ)dv₀ + 4∫k₀φ dλ₀) − ΣΔ_α φ(z) − ½ΣΔ_β φ(s)}`
pub fn anomaly_factor(
    surface: &SurfaceModel,
    params: &LiouvilleParams,
    insertions: &InsertionSet,
    phi: &ConformalFactor,
) -> Result<f64> {
    phi.validate(surface)?;
    let q = params.q;
    let bulk: f64 = insertions
        .bulk
        .iter()
        .map(|b| conformal_weight(b.alpha, q) * phi.eval(surface, &b.point))
        .sum();
    let bdry: f64 = insertions
        .boundary
        .iter()
        .map(|b| conformal_weight(b.beta, q) * phi.eval(surface, &b.point))
        .sum();
    Ok(((1.0 + 6.0 * q * q) / (96.0 * PI) * liouville_action_integral(surface, phi) - bulk - 0.5 * bdry).exp())
}

/// `∫(‖dφ‖² + 2R₀φ)dv₀ + 4∫k₀φ dλ₀`
pub fn liouville_action_integral(surface: &SurfaceModel, phi: &ConformalFactor) -> f64 {
    let i = phi.integrals(surface);
    i.gradient_norm + 2.0 * i.curvature + 4.0 * i.boundary_curvature
}

/// The free-field partition-function ratio `Z_GFF(e^φ g₀)/Z_GFF(g₀)` in the
/// form `exp((1/48π)(∫(‖dφ‖² + 2R₀φ)dv₀ + 4∫k₀φ dλ₀))`.
pub fn zgff_ratio(surface: &SurfaceModel, phi: &ConformalFactor) -> f64 {
    (liouville_action_integral(surface, phi) / (48.0 * PI)).exp()
}

/// `W` at an insertion: interior points use an unclipped circle.
pub(crate) fn insertion_w(surface: &SurfaceModel, p: &SurfacePoint) -> Result<f64> {
    let eps = if surface.on_boundary(p) {
        0.05
    } else {
        (0.45 * surface.distance_to_boundary(p)).min(0.05)
    };
    circle_average_w(surface, p, eps)
}

/// The ε → 0 prefactor `C(z, s)` from `W` and `2πG` at the insertions.
pub fn prefactor_limit(surface: &SurfaceModel, insertions: &InsertionSet) -> Result<f64> {
    let kernel = GreenKernel::new(surface, crate::spectral::BoundaryCondition::Neumann, crate::green::KernelMode::ClosedForm)?;
    let charges = insertions.field_charges();
    let mut log_c = 0.0;
    for (i, (p, w)) in charges.iter().enumerate() {
        log_c += 0.5 * w * w * insertion_w(surface, p)?;
        for (q, w2) in &charges[..i] {
            log_c += w * w2 * kernel.eval(p, q)?;
        }
    }
    Ok(log_c.exp())
}

/// Ladder diagnostic for `∫ e^{γH} dM_γ` near a single insertion.
///
/// The log-mass of the dyadic annulus at depth `n` is modelled as a random
/// walk with drift `γα − 2 − γ²/2` (bulk) or `γβ/2 − 1 − γ²/4` (boundary) per
/// `ln 2` and Gaussian steps of standard deviation `γ√ln2` (bulk) or
/// `γ√(ln2/2)` (boundary). The integral is flagged as blowing up when the
/// median log partial sum keeps growing between half and full depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub weight: f64,
    pub boundary: bool,
    pub drift: f64,
    pub depths: Vec<usize>,
    pub median_log_mass: Vec<f64>,
    pub blows_up: bool,
}

pub fn integrability_diagnostic(
    weight: f64,
    gamma: f64,
    boundary: bool,
    depth: usize,
    paths: usize,
    family: &StreamFamily,
) -> IntegrabilityReport {
    use rand_distr::{Distribution, StandardNormal};
    let ln2 = std::f64::consts::LN_2;
    let (drift, sd) = if boundary {
        (gamma * weight / 2.0 - 1.0 - gamma * gamma / 4.0, gamma * (0.5 * ln2).sqrt())
    } else {
        (gamma * weight - 2.0 - gamma * gamma / 2.0, gamma * ln2.sqrt())
    };
    let depths: Vec<usize> = (0..)
        .map(|k| 64usize << k)
        .take_while(|&d| d <= depth)
        .collect();
    let runs: Vec<Vec<f64>> = crate::mc::replicates(paths, |i| {
        let mut rng = family.stream(i as u64);
        let mut walk = 0.0;
        let mut log_sum = f64::NEG_INFINITY;
        let mut out = Vec::new();
        for n in 1..=depth {
            let z: f64 = StandardNormal.sample(&mut rng);
            walk += drift * ln2 + sd * z;
            let hi = log_sum.max(walk);
            log_sum = hi + ((log_sum - hi).exp() + (walk - hi).exp()).ln();
            if depths.contains(&n) {
                out.push(log_sum);
            }
        }
        out
    });
    let median_log_mass: Vec<f64> = (0..depths.len())
        .map(|k| {
            let mut col: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            col.sort_by(f64::total_cmp);
            col[col.len() / 2]
        })
        .collect();
    let m = median_log_mass.len();
    let blows_up = m >= 2 && median_log_mass[m - 1] - median_log_mass[m - 2] > 1.0;
    IntegrabilityReport { weight, boundary, drift, depths, median_log_mass, blows_up }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cyl() -> SurfaceModel {
        SurfaceModel::cylinder(1.0).unwrap()
    }

    fn bulk(u: f64, v: f64, alpha: f64) -> BulkInsertion {
        BulkInsertion { point: SurfacePoint::new(u, v), alpha }
    }

    fn bdry(u: f64, v: f64, beta: f64) -> BoundaryInsertion {
        BoundaryInsertion { point: SurfacePoint::new(u, v), beta }
    }

    #[test]
    fn seiberg_examples() {
        let one = InsertionSet { bulk: vec![bulk(0.5, 0.0, 1.0)], boundary: vec![] };
        let r = seiberg_check(&one, 1.0, 1.0, 1.0, 0).unwrap();
        assert!(r.admissible);
        let at_q = InsertionSet { bulk: vec![bulk(0.5, 0.0, 2.5)], boundary: vec![] };
        assert!(!seiberg_check(&at_q, 1.0, 1.0, 1.0, 0).unwrap().admissible);
        let mixed = InsertionSet { bulk: vec![bulk(0.5, 0.0, 2.6)], boundary: vec![bdry(0.0, 0.0, 1.0)] };
        let r = seiberg_check(&mixed, 0.0, 1.0, 1.0, 0).unwrap();
        assert_eq!(r.regime, Regime::BoundaryOnly);
        assert!(r.admissible && !r.bound2[0]);
        assert!(seiberg_check(&one, 0.0, 0.0, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn seiberg_table(a in 0.0f64..4.0, b in 0.0f64..4.0, mu in 0usize..3, chi in 0i32..2) {
            let (m, mb) = [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0)][mu];
            let set = InsertionSet { bulk: vec![bulk(0.5, 0.0, a)], boundary: vec![bdry(0.0, 0.0, b)] };
            let q = 2.5;
            let b1 = a + b / 2.0 > q * chi as f64;
            let want = match mu {
                0 => b1 && a < q && b < q,
                1 => b1 && a < q,
                _ => b1 && b < q,
            };
            prop_assert_eq!(seiberg_check(&set, m, mb, 1.0, chi).unwrap().admissible, want);
        }

        #[test]
        fn zero_mode_quadrature_matches_closed_forms(a in 0.01f64..50.0, s in 0.2f64..6.0, g in 0.3f64..2.0) {
            let p = LiouvilleParams::new(g, 1.0, 0.0).unwrap();
            let q = zero_mode_quadrature(a, 0.0, s, &p).unwrap();
            let c = zero_mode_integral(a, 0.0, s, &p).unwrap();
            prop_assert!((q - c).abs() <= 1e-8 * c);
            let p = LiouvilleParams::new(g, 0.0, 1.0).unwrap();
            let q = zero_mode_quadrature(0.0, a, s, &p).unwrap();
            let c = zero_mode_integral(0.0, a, s, &p).unwrap();
            prop_assert!((q - c).abs() <= 1e-8 * c);
        }
    }

    #[test]
    fn zero_mode_with_both_potentials_against_simpson() {
        let p = LiouvilleParams::new(1.2, 0.7, 1.3).unwrap();
        let (a, l, s) = (2.0, 0.5, 1.7);
        // Composite Simpson in c over a range holding all the mass.
        let f = |c: f64| (c * s - 0.7 * a * (1.2 * c).exp() - 1.3 * l * (0.6 * c).exp()).exp();
        let (lo, hi, n) = (-40.0, 8.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = acc * h / 3.0;
        let got = zero_mode_integral(a, l, s, &p).unwrap();
        assert!((got - oracle).abs() < 1e-8 * oracle, "{got} {oracle}");
    }

    #[test]
    fn zero_mode_diverges_for_nonpositive_sbar() {
        let p = LiouvilleParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(zero_mode_integral(1.0, 1.0, 0.0, &p), Err(Error::Divergent { .. })));
        assert!(matches!(zero_mode_integral(1.0, 1.0, -0.3, &p), Err(Error::Divergent { .. })));
    }

    #[test]
    fn anomaly_factor_examples() {
        let c = cyl();
        let p = LiouvilleParams::new(1.0, 1.0, 1.0).unwrap();
        let set = InsertionSet { bulk: vec![bulk(0.5, 0.1, 1.0)], boundary: vec![] };
        assert_eq!(anomaly_factor(&c, &p, &set, &ConformalFactor::Zero).unwrap(), 1.0);
        let a = 0.4;
        let got = anomaly_factor(&c, &p, &set, &ConformalFactor::Constant { value: a }).unwrap();
        let want = (-conformal_weight(1.0, p.q) * a).exp();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn insertion_potential_is_weighted_kernel() {
        let c = cyl();
        let k = GreenKernel::new(&c, crate::spectral::BoundaryCondition::Neumann, crate::green::KernelMode::ClosedForm).unwrap();
        let set = InsertionSet { bulk: vec![bulk(0.5, 0.1, 1.5)], boundary: vec![bdry(0.0, 0.6, 0.8)] };
        let x = SurfacePoint::new(0.3, 0.35);
        let want = 1.5 * k.eval(&set.bulk[0].point, &x).unwrap() + 0.4 * k.eval(&set.boundary[0].point, &x).unwrap();
        assert!((insertion_potential(&set, &k, &x).unwrap() - want).abs() < 1e-12);
        assert!(matches!(insertion_potential(&set, &k, &set.bulk[0].point), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn integrability_threshold_is_q() {
        let fam = StreamFamily::new(11);
        for g in [0.8, 1.5] {
            let q = background_charge(g);
            for boundary in [false, true] {
                let below = integrability_diagnostic(q - 0.6, g, boundary, 4096, 64, &fam);
                let at = integrability_diagnostic(q, g, boundary, 4096, 64, &fam);
                let above = integrability_diagnostic(q + 0.3, g, boundary, 4096, 64, &fam);
                assert!(!below.blows_up, "{g} {boundary} {below:?}");
                assert!(at.blows_up && above.blows_up, "{g} {boundary}");
            }
        }
    }

    fn small() -> CorrelationConfig {
        CorrelationConfig { samples: 40, modes: 128, eps: 0.1, circle_points: 16 }
    }

    #[test]
    fn doubling_mu_rescales_by_power() {
        let c = cyl();
        let p = LiouvilleParams::new(1.0, 1.0, 0.0).unwrap();
        let set = InsertionSet { bulk: vec![bulk(0.5, 0.1, 1.0)], boundary: vec![bdry(1.0, 0.5, 0.6)] };
        let fam = StreamFamily::new(5);
        let one = correlation_estimate(&c, &p, &set, &ConformalFactor::Zero, &small(), &fam).unwrap();
        let two = correlation_estimate(&c, &p.with_mu(2.0, 0.0).unwrap(), &set, &ConformalFactor::Zero, &small(), &fam).unwrap();
        let r = two.value.unwrap() / one.value.unwrap();
        let want = 2f64.powf(-one.sbar / p.gamma);
        assert!((r - want).abs() < 1e-9 * want, "{r} {want}");
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let c = cyl();
        let p = LiouvilleParams::new(1.0, 1.0, 0.5).unwrap();
        let a = InsertionSet {
            bulk: vec![bulk(0.5, 0.1, 1.0), bulk(0.3, 0.7, 0.6)],
            boundary: vec![bdry(0.0, 0.5, 0.6), bdry(1.0, 0.2, 0.3)],
        };
        let mut b = a.clone();
        b.bulk.reverse();
        b.boundary.reverse();
        let fam = StreamFamily::new(9);
        let x = correlation_estimate(&c, &p, &a, &ConformalFactor::Zero, &small(), &fam).unwrap();
        let y = correlation_estimate(&c, &p, &b, &ConformalFactor::Zero, &small(), &fam).unwrap();
        assert_eq!(x.value.unwrap().to_bits(), y.value.unwrap().to_bits());
    }

    #[test]
    fn inadmissible_sets_are_flagged() {
        let c = cyl();
        let p = LiouvilleParams::new(1.0, 1.0, 1.0).unwrap();
        let set = InsertionSet { bulk: vec![bulk(0.5, 0.1, 2.5)], boundary: vec![] };
        let e = correlation_estimate(&c, &p, &set, &ConformalFactor::Zero, &small(), &StreamFamily::new(1)).unwrap();
        assert!(e.diverged && e.value.is_none());
    }

    #[test]
    fn scaling_identity_holds_on_small_run() {
        let c = cyl();
        let p = LiouvilleParams::new(1.0, 1.0, 1.0).unwrap();
        let set = InsertionSet { bulk: vec![bulk(0.5, 0.1, 1.0)], boundary: vec![bdry(0.0, 0.5, 1.0)] };
        let r = scaling_residual(&c, &p, &set, &small(), &StreamFamily::new(2)).unwrap();
        assert!(r.residual_z < 3.0, "{r:?}");
    }
}
