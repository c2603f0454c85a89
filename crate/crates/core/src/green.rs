//! Green kernels on the doubles and on Σ.
//!
//! Values are returned in covariance units, `K = 2πG`, so that
//! `E[X(x)X(y)] = K(x, y)` for the free field with the matching boundary
//! condition. Closed forms: on the torus double of the cylinder the
//! Jacobi-theta expression, on the round sphere `−ln|p − q| + ln 2 − 1/2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spectral::{build_basis_cutoff, BoundaryCondition, SpectralBasis};
use crate::surfaces::{ConformalFactor, SurfaceKind, SurfaceModel, SurfacePoint};

const COINCIDENT: f64 = 1e-14;

/// `Σ_{n≥1} ln(1 − q^{2n})` with `q = e^{−2πT}`.
fn theta_product_log(height: f64) -> f64 {
    let q2 = (-4.0 * PI * height).exp();
    let mut acc = 0.0;
    let mut qn = q2;
    while qn > 1e-18 {
        acc += (-qn).ln_1p();
        qn *= q2;
    }
    acc
}

fn reduce(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r > 0.5 * period {
        r - period
    } else {
        r
    }
}

/// `ln|sin(π(x + is))|`, optionally minus `ln|x + is|`.
fn log_abs_sin(x: f64, s: f64, subtract_log_modulus: bool) -> f64 {
    let r2 = x * x + s * s;
    if subtract_log_modulus && r2 < 1e-12 {
        // ln|sin w / w| = −Re(w²)/6 + O(|w|⁴), w = π(x + is)
        return PI.ln() - PI * PI * (x * x - s * s) / 6.0;
    }
    let ps = PI * s.abs();
    let v = if ps < 20.0 {
        0.5 * ((PI * x).sin().powi(2) + ps.sinh().powi(2)).ln()
    } else {
        let r = (-2.0 * ps).exp();
        ps - std::f64::consts::LN_2 + 0.5 * (-2.0 * r * (2.0 * PI * x).cos() + r * r).ln_1p()
    };
    if subtract_log_modulus {
        v - 0.5 * r2.ln()
    } else {
        v
    }
}

fn torus_kernel_impl(height: f64, dy: f64, dt: f64, regular: bool) -> f64 {
    let x = reduce(dy, 1.0);
    let s = reduce(dt, 2.0 * height);
    let q2 = (-4.0 * PI * height).exp();
    let mut log_theta = std::f64::consts::LN_2 - 0.5 * PI * height + log_abs_sin(x, s, regular);
    let cx = (2.0 * PI * x).cos();
    let mut qn = q2;
    let grow = (2.0 * PI * s.abs()).exp();
    while qn * grow > 1e-18 {
        let a = qn * (-2.0 * PI * s).exp();
        let b = qn * (2.0 * PI * s).exp();
        log_theta += (-qn).ln_1p();
        log_theta += 0.5 * (-2.0 * a * cx + a * a).ln_1p();
        log_theta += 0.5 * (-2.0 * b * cx + b * b).ln_1p();
        qn *= q2;
    }
    let p = theta_product_log(height);
    -log_theta + PI * s * s / (2.0 * height) + p - PI * height / 6.0
}

/// `2π G^{dΣ}` on the torus `ℝ/2Tℤ × ℝ/ℤ` at chart offsets `(Δy, Δt)`.
pub fn torus_kernel(height: f64, dy: f64, dt: f64) -> f64 {
    torus_kernel_impl(height, dy, dt, false)
}

/// `2π G^{dΣ} + ln d` on the torus, smooth through the diagonal.
pub fn torus_kernel_regular(height: f64, dy: f64, dt: f64) -> f64 {
    torus_kernel_impl(height, dy, dt, true)
}

fn chord(p: &SurfacePoint, q: &SurfacePoint) -> f64 {
    let a = SurfaceModel::sphere_vector(p);
    let b = SurfaceModel::sphere_vector(q);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `2π G^{dΣ}` on the unit sphere.
pub fn sphere_kernel(p: &SurfacePoint, q: &SurfacePoint) -> f64 {
    -chord(p, q).ln() + std::f64::consts::LN_2 - 0.5
}

/// Distance used for the logarithmic subtraction: chart distance on the
/// torus, chordal distance on the sphere.
pub fn singular_distance(surface: &SurfaceModel, p: &SurfacePoint, q: &SurfacePoint) -> f64 {
    match surface.kind {
        SurfaceKind::Hemisphere => chord(p, q),
        _ => surface.double_distance(p, q),
    }
}

fn require_compact(surface: &SurfaceModel) -> Result<()> {
    if surface.is_compact() {
        Ok(())
    } else {
        Err(Error::Unsupported("Green kernels of the DOZZ half-plane".into()))
    }
}

/// `2π G^{dΣ}(x, y)` by closed form.
pub fn green_double(surface: &SurfaceModel, x: &SurfacePoint, y: &SurfacePoint) -> Result<f64> {
    require_compact(surface)?;
    if surface.double_distance(x, y) < COINCIDENT {
        return Err(Error::CoincidentPoints);
    }
    Ok(double_kernel(surface, x, y))
}

pub(crate) fn double_kernel(surface: &SurfaceModel, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
    match surface.kind {
        SurfaceKind::FlatCylinder { height } => torus_kernel(height, x.v - y.v, x.u - y.u),
        _ => sphere_kernel(x, y),
    }
}

/// `2π G^{dΣ}(x, y) + ln d(x, y)`, finite at `x = y`.
pub(crate) fn double_kernel_regular(surface: &SurfaceModel, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
    match surface.kind {
        SurfaceKind::FlatCylinder { height } => torus_kernel_regular(height, x.v - y.v, x.u - y.u),
        _ => std::f64::consts::LN_2 - 0.5,
    }
}

/// Neumann (`G^d(x,y) + G^d(x,σy)`) or Dirichlet (difference) kernel on Σ.
pub fn green_bordered(
    surface: &SurfaceModel,
    condition: BoundaryCondition,
    x: &SurfacePoint,
    y: &SurfacePoint,
) -> Result<f64> {
    require_compact(surface)?;
    if !surface.contains(x) || !surface.contains(y) {
        return Err(Error::OutsideDomain("kernel arguments must lie in Σ".into()));
    }
    if surface.double_distance(x, y) < COINCIDENT {
        return Err(Error::CoincidentPoints);
    }
    Ok(bordered_kernel(surface, condition, x, y))
}

pub(crate) fn bordered_kernel(
    surface: &SurfaceModel,
    condition: BoundaryCondition,
    x: &SurfacePoint,
    y: &SurfacePoint,
) -> f64 {
    let direct = double_kernel(surface, x, y);
    let sy = surface.reflect(y);
    match condition {
        BoundaryCondition::Closed => direct,
        BoundaryCondition::Neumann => direct + double_kernel(surface, x, &sy),
        BoundaryCondition::Dirichlet => {
            if surface.double_distance(y, &sy) < COINCIDENT {
                0.0
            } else {
                direct - double_kernel(surface, x, &sy)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelMode {
    ClosedForm,
    EigenSum { modes: usize },
}

/// Averages of the kernel against the weight `e^φ`, expanded in the Neumann basis.
#[derive(Debug, Clone)]
struct ConformalShift {
    phi: ConformalFactor,
    basis: SpectralBasis,
    /// `⟨φ_j, e^φ⟩ / (λ_j V_g)`
    weights: Vec<f64>,
    volume_g: f64,
    /// `m_g(G(·,·))` in covariance units.
    double_mean: f64,
}

/// A Green kernel on one of the compact models.
#[derive(Debug, Clone)]
pub struct GreenKernel {
    pub surface: SurfaceModel,
    pub condition: BoundaryCondition,
    pub mode: KernelMode,
    basis: Option<SpectralBasis>,
    conformal: Option<ConformalShift>,
}

impl GreenKernel {
    pub fn new(surface: &SurfaceModel, condition: BoundaryCondition, mode: KernelMode) -> Result<Self> {
        require_compact(surface)?;
        let basis = match mode {
            KernelMode::ClosedForm => None,
            KernelMode::EigenSum { modes } => {
                Some(crate::spectral::build_basis(surface, condition, modes)?)
            }
        };
        Ok(GreenKernel { surface: surface.clone(), condition, mode, basis, conformal: None })
    }

    /// Kernel built from all modes below `lambda_max`.
    pub fn eigen_cutoff(surface: &SurfaceModel, condition: BoundaryCondition, lambda_max: f64) -> Result<Self> {
        let basis = build_basis_cutoff(surface, condition, lambda_max)?;
        let modes = basis.len();
        Ok(GreenKernel {
            surface: surface.clone(),
            condition,
            mode: KernelMode::EigenSum { modes },
            basis: Some(basis),
            conformal: None,
        })
    }

    pub fn conformal_factor(&self) -> Option<ConformalFactor> {
        self.conformal.as_ref().map(|c| c.phi)
    }

    /// Kernel for `g = e^φ g₀`: `G − m_g(G(x,·)) − m_g(G(·,y)) + m_g(G(·,·))`.
    pub fn with_conformal(&self, phi: ConformalFactor) -> Result<Self> {
        if self.condition != BoundaryCondition::Neumann {
            return Err(Error::Unsupported("conformal change of a non-Neumann kernel".into()));
        }
        phi.validate(&self.surface)?;
        let basis = build_basis_cutoff(&self.surface, BoundaryCondition::Neumann, 2500.0)?;
        let (nu, nv) = (64, 256);
        let proj = basis.project(|p| phi.eval(&self.surface, p).exp(), nu, nv);
        let volume_g = volume_under(&self.surface, &phi, nu, nv);
        let weights: Vec<f64> = proj
            .iter()
            .zip(&basis.modes)
            .map(|(c, m)| 2.0 * PI * c / (m.lambda * volume_g))
            .collect();
        let double_mean = proj
            .iter()
            .zip(&basis.modes)
            .map(|(c, m)| 2.0 * PI * c * c / (m.lambda * volume_g * volume_g))
            .sum();
        let mut out = self.clone();
        out.conformal = Some(ConformalShift { phi, basis, weights, volume_g, double_mean });
        Ok(out)
    }

    /// `m_g(K(x, ·))` for the conformal kernel, zero otherwise.
    pub fn conformal_mean(&self, x: &SurfacePoint) -> f64 {
        match &self.conformal {
            None => 0.0,
            Some(c) => c.basis.eval_all(x).iter().zip(&c.weights).map(|(a, w)| a * w).sum(),
        }
    }

    pub fn conformal_volume(&self) -> f64 {
        self.conformal.as_ref().map_or(self.surface.volume, |c| c.volume_g)
    }

    /// `2π G(x, y)`.
    pub fn eval(&self, x: &SurfacePoint, y: &SurfacePoint) -> Result<f64> {
        let closed = self.condition == BoundaryCondition::Closed;
        if !closed && (!self.surface.contains(x) || !self.surface.contains(y)) {
            return Err(Error::OutsideDomain("kernel arguments must lie in Σ".into()));
        }
        if self.surface.double_distance(x, y) < COINCIDENT {
            return Err(Error::CoincidentPoints);
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &SurfacePoint, y: &SurfacePoint) -> f64 {
        let base = match &self.basis {
            None => bordered_kernel(&self.surface, self.condition, x, y),
            Some(b) => b.truncated_covariance(x, y),
        };
        match &self.conformal {
            None => base,
            Some(c) => base - self.conformal_mean(x) - self.conformal_mean(y) + c.double_mean,
        }
    }
}

/// `∫ e^φ dv₀` by Gauss-Legendre in `u` and trapezoid in `v`.
fn volume_under(surface: &SurfaceModel, phi: &ConformalFactor, nu: usize, nv: usize) -> f64 {
    let gl = GaussLegendre::new(nu);
    let per = surface.azimuth_period();
    let dv = per / nv as f64;
    let sphere = matches!(surface.kind, SurfaceKind::Hemisphere);
    gl.mapped(0.0, surface.transverse_extent())
        .into_iter()
        .map(|(u, w)| {
            let jac = if sphere { u.sin() } else { 1.0 };
            (0..nv)
                .map(|c| phi.eval(surface, &SurfacePoint::new(u, c as f64 * dv)).exp())
                .sum::<f64>()
                * dv
                * w
                * jac
        })
        .sum()
}

/// `∫_Σ K(x, y) w(y) dv₀(y)` (or over the double for closed kernels).
///
/// Gauss-Legendre in `u` split at `u_x`, trapezoid in `v` with a node count
/// growing like `1/|u − u_x|` so the near-singular rows stay resolved.
pub fn integrate_kernel<W: Fn(&SurfacePoint) -> f64>(
    kernel: &GreenKernel,
    x: &SurfacePoint,
    weight: W,
    gl_nodes: usize,
) -> f64 {
    let s = &kernel.surface;
    let sphere = matches!(s.kind, SurfaceKind::Hemisphere);
    let hi = if kernel.condition == BoundaryCondition::Closed {
        2.0 * s.transverse_extent()
    } else {
        s.transverse_extent()
    };
    let per = s.azimuth_period();
    let gl = GaussLegendre::new(gl_nodes);
    let mut breaks = vec![0.0, hi];
    if x.u > 0.0 && x.u < hi {
        breaks.insert(1, x.u);
    }
    let mut total = 0.0;
    for w in breaks.windows(2) {
        for (u, wu) in gl.mapped(w[0], w[1]) {
            let gap = (u - x.u).abs().max(1e-12);
            let n = ((60.0 * per / (2.0 * PI * gap)).ceil() as usize).clamp(64, 1 << 20);
            let dv = per / n as f64;
            let row: f64 = (0..n)
                .map(|c| {
                    let p = SurfacePoint::new(u, x.v + (c as f64 + 0.5) * dv);
                    kernel.eval_unchecked(x, &p) * weight(&p)
                })
                .sum();
            let jac = if sphere { u.sin() } else { 1.0 };
            total += row * dv * wu * jac;
        }
    }
    total
}

fn second_diff(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
}

fn first_diff(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Fourth-order finite-difference Laplacian `∇²` of `G(·, y)` at `x`.
pub fn fd_laplacian(kernel: &GreenKernel, x: &SurfacePoint, y: &SurfacePoint, h: f64) -> f64 {
    fd_laplacian_of(&kernel.surface, |p| kernel.eval_unchecked(p, y) / (2.0 * PI), x, h)
}

/// Fourth-order finite-difference Laplacian `∇²f` in the chart of `surface`.
pub fn fd_laplacian_of<F: Fn(&SurfacePoint) -> f64>(surface: &SurfaceModel, f: F, x: &SurfacePoint, h: f64) -> f64 {
    let fu = |d: f64| f(&SurfacePoint::new(x.u + d, x.v));
    let fv = |d: f64| f(&SurfacePoint::new(x.u, x.v + d));
    match surface.kind {
        SurfaceKind::Hemisphere => {
            let st = x.u.sin();
            second_diff(&fu, h) + x.u.cos() / st * first_diff(&fu, h) + second_diff(&fv, h) / (st * st)
        }
        _ => second_diff(&fu, h) + second_diff(&fv, h),
    }
}

/// Value of `∇²G` away from the pole: `1/Vol` for Neumann and closed kernels.
pub fn laplacian_target(kernel: &GreenKernel) -> f64 {
    let s = &kernel.surface;
    match kernel.condition {
        BoundaryCondition::Neumann => 1.0 / kernel.conformal_volume(),
        BoundaryCondition::Closed => 1.0 / (2.0 * s.volume),
        BoundaryCondition::Dirichlet => 0.0,
    }
}

/// `max |∇²G(·, y) − target|` over `points` (all away from `y`).
pub fn pde_residual(kernel: &GreenKernel, y: &SurfacePoint, points: &[SurfacePoint], h: f64) -> f64 {
    let target = laplacian_target(kernel);
    points
        .iter()
        .map(|x| (fd_laplacian(kernel, x, y, h) - target).abs())
        .fold(0.0, f64::max)
}

/// Outward normal derivative of `G(·, y)` at a boundary point, one-sided, fourth order.
pub fn normal_derivative(kernel: &GreenKernel, s: &SurfacePoint, y: &SurfacePoint, h: f64) -> f64 {
    let dir = match kernel.surface.kind {
        SurfaceKind::FlatCylinder { height } if s.u < 0.5 * height => 1.0,
        _ => -1.0,
    };
    let f = |k: f64| kernel.eval_unchecked(&SurfacePoint::new(s.u + dir * k * h, s.v), y) / (2.0 * PI);
    // derivative along the inward direction, negated
    let d = (-25.0 * f(0.0) + 48.0 * f(1.0) - 36.0 * f(2.0) + 16.0 * f(3.0) - 3.0 * f(4.0)) / (12.0 * h);
    -d
}

/// Closed-form test functions for the Green identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant { value: f64 },
    /// Cylinder: `cos(2πky)`.
    CosAzimuth { k: u32 },
    /// Cylinder: `cos(πkt/(2T))`.
    CosTransverse { k: u32 },
    /// Cylinder: `t² cos(2πy)`.
    QuadraticWave,
    /// Hemisphere: `cos θ`.
    Height,
}

impl TestFunction {
    fn supported(&self, s: &SurfaceModel) -> bool {
        match self {
            TestFunction::Constant { .. } => true,
            TestFunction::Height => matches!(s.kind, SurfaceKind::Hemisphere),
            _ => matches!(s.kind, SurfaceKind::FlatCylinder { .. }),
        }
    }

    pub fn value(&self, s: &SurfaceModel, p: &SurfacePoint) -> f64 {
        let t_len = s.transverse_extent();
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::CosAzimuth { k } => (2.0 * PI * k as f64 * p.v).cos(),
            TestFunction::CosTransverse { k } => (PI * k as f64 * p.u / (2.0 * t_len)).cos(),
            TestFunction::QuadraticWave => p.u * p.u * (2.0 * PI * p.v).cos(),
            TestFunction::Height => p.u.cos(),
        }
    }

    /// `∇² f`
    pub fn laplacian(&self, s: &SurfaceModel, p: &SurfacePoint) -> f64 {
        let t_len = s.transverse_extent();
        match *self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::CosAzimuth { k } => -(2.0 * PI * k as f64).powi(2) * self.value(s, p),
            TestFunction::CosTransverse { k } => {
                -(PI * k as f64 / (2.0 * t_len)).powi(2) * self.value(s, p)
            }
            TestFunction::QuadraticWave => {
                (2.0 - (2.0 * PI * p.u).powi(2)) * (2.0 * PI * p.v).cos()
            }
            TestFunction::Height => -2.0 * p.u.cos(),
        }
    }

    /// Outward normal derivative at a boundary point.
    pub fn normal_derivative(&self, s: &SurfaceModel, p: &SurfacePoint) -> f64 {
        let t_len = s.transverse_extent();
        let outward = if p.u > 0.5 * t_len { 1.0 } else { -1.0 };
        let du = match *self {
            TestFunction::Constant { .. } | TestFunction::CosAzimuth { .. } => 0.0,
            TestFunction::CosTransverse { k } => {
                let w = PI * k as f64 / (2.0 * t_len);
                -w * (w * p.u).sin()
            }
            TestFunction::QuadraticWave => 2.0 * p.u * (2.0 * PI * p.v).cos(),
            TestFunction::Height => -p.u.sin(),
        };
        outward * du
    }

    /// Mean over Σ in the background metric.
    pub fn mean(&self) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::CosAzimuth { .. } | TestFunction::QuadraticWave => 0.0,
            TestFunction::CosTransverse { k } => {
                if k == 0 {
                    1.0
                } else {
                    let a = PI * k as f64 / 2.0;
                    a.sin() / a
                }
            }
            TestFunction::Height => 0.5,
        }
    }
}

/// `max_x |∫G(x,·)∇²f dv − ∮G(x,·)∂_n f dλ + f(x) − m(f)|` for the Neumann kernel.
pub fn green_identity_residual(
    kernel: &GreenKernel,
    f: &TestFunction,
    points: &[SurfacePoint],
) -> Result<f64> {
    let s = &kernel.surface;
    if kernel.condition != BoundaryCondition::Neumann || kernel.conformal_factor().is_some() {
        return Err(Error::Unsupported("identity check is for the background Neumann kernel".into()));
    }
    if !f.supported(s) {
        return Err(Error::Unsupported(format!("test function {f:?} on {:?}", s.kind)));
    }
    let rows: Vec<f64> = match s.kind {
        SurfaceKind::FlatCylinder { height } => vec![0.0, height],
        _ => vec![s.transverse_extent()],
    };
    let per = s.azimuth_period();
    let nb = 512;
    let mut worst: f64 = 0.0;
    for x in points {
        let bulk = integrate_kernel(kernel, x, |p| f.laplacian(s, p), 48) / (2.0 * PI);
        let mut bdry = 0.0;
        for &u in &rows {
            for c in 0..nb {
                let p = SurfacePoint::new(u, per * c as f64 / nb as f64);
                let dn = f.normal_derivative(s, &p);
                if dn != 0.0 {
                    bdry += kernel.eval_unchecked(x, &p) / (2.0 * PI) * dn * per / nb as f64;
                }
            }
        }
        let r = bulk - bdry + f.value(s, x) - f.mean();
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Variance of the circle average `X_ε(x)` from the Neumann kernel.
///
/// Interior points need an unclipped circle; boundary points use the half
/// circle. The logarithmic singularity is averaged analytically.
pub fn circle_average_variance(surface: &SurfaceModel, x: &SurfacePoint, eps: f64, n: usize) -> Result<f64> {
    require_compact(surface)?;
    let sample = surface.geodesic_circle_sample(x, eps, n)?;
    let rho = match surface.kind {
        SurfaceKind::Hemisphere => eps.sin(),
        _ => eps,
    };
    let full: Vec<SurfacePoint> = (0..n)
        .map(|k| surface.circle_point(x, eps, 2.0 * PI * k as f64 / n as f64))
        .collect();
    if surface.on_boundary(x) {
        let mean: f64 = sample
            .points
            .iter()
            .map(|p| full.iter().map(|q| double_kernel_regular(surface, p, q)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / n as f64;
        return Ok(2.0 * (mean - rho.ln()));
    }
    if sample.arc_fraction < 1.0 {
        return Err(Error::Unsupported("circle variance for clipped interior circles".into()));
    }
    let mut acc = 0.0;
    for p in &full {
        for q in &full {
            acc += double_kernel_regular(surface, p, q) + double_kernel(surface, p, &surface.reflect(q));
        }
    }
    Ok(acc / (n * n) as f64 - rho.ln())
}

/// `W(x) = lim (E[X_ε(x)²] + c ln ε)`, `c = 1` inside and `2` on ∂Σ,
/// by Richardson extrapolation of the pair `(ε, ε/2)`.
pub fn circle_average_w(surface: &SurfaceModel, x: &SurfacePoint, eps: f64) -> Result<f64> {
    let c = if surface.on_boundary(x) { 2.0 } else { 1.0 };
    let n = 96;
    let a1 = circle_average_variance(surface, x, eps, n)? + c * eps.ln();
    let a2 = circle_average_variance(surface, x, 0.5 * eps, n)? + c * (0.5 * eps).ln();
    Ok((4.0 * a2 - a1) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cyl() -> SurfaceModel {
        SurfaceModel::cylinder(1.0).unwrap()
    }

    fn neumann(s: &SurfaceModel) -> GreenKernel {
        GreenKernel::new(s, BoundaryCondition::Neumann, KernelMode::ClosedForm).unwrap()
    }

    /// `2πG` on the torus from the y-Fourier expansion with circle kernels in t.
    fn torus_fourier_oracle(height: f64, dy: f64, dt: f64) -> f64 {
        let r = dt.rem_euclid(2.0 * height);
        let s = r.min(2.0 * height - r);
        let mut g = height / 6.0 - s / 2.0 + s * s / (4.0 * height);
        for k in 1..400 {
            let kappa = 2.0 * PI * k as f64;
            let term = ((kappa * (s - 2.0 * height)).exp() + (-kappa * s).exp())
                / (2.0 * kappa * (1.0 - (-2.0 * kappa * height).exp()));
            g += 2.0 * (2.0 * PI * k as f64 * dy).cos() * term;
        }
        2.0 * PI * g
    }

    #[test]
    fn torus_closed_form_matches_fourier_oracle() {
        for &h in &[0.5, 1.0, 1.7] {
            for &(dy, dt) in &[(0.1, 0.2), (0.45, 0.05), (0.0, 0.7), (0.3, 1.4), (-0.2, -0.3)] {
                let a = torus_kernel(h, dy, dt);
                let b = torus_fourier_oracle(h, dy, dt);
                assert!((a - b).abs() < 1e-10, "T={h} ({dy},{dt}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn regular_part_removes_log() {
        let h = 1.0;
        for &d in &[1e-3, 1e-5, 1e-7] {
            let reg = torus_kernel_regular(h, d * 0.6, d * 0.8);
            let direct = torus_kernel(h, d * 0.6, d * 0.8) + d.ln();
            assert!((reg - direct).abs() < 1e-8);
        }
        let a = torus_kernel_regular(h, 0.0, 0.0);
        let b = torus_kernel_regular(h, 1e-9, 0.0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_averages() {
        let c = cyl();
        let x = SurfacePoint::new(0.3, 0.2);
        for cond in [BoundaryCondition::Closed, BoundaryCondition::Neumann] {
            let k = GreenKernel::new(&c, cond, KernelMode::ClosedForm).unwrap();
            let avg = integrate_kernel(&k, &x, |_| 1.0, 48) / (2.0 * PI);
            assert!(avg.abs() < 1e-8, "{cond:?}: {avg}");
        }
        let h = SurfaceModel::hemisphere();
        let x = SurfacePoint::new(0.9, 1.0);
        let avg = integrate_kernel(&neumann(&h), &x, |_| 1.0, 48) / (2.0 * PI);
        assert!(avg.abs() < 1e-8, "hemisphere {avg}");
    }

    #[test]
    fn pde_residuals() {
        let c = cyl();
        let y = SurfacePoint::new(0.4, 0.5);
        let pts: Vec<_> = (0..5).map(|i| SurfacePoint::new(0.1 + 0.15 * i as f64, 0.1)).collect();
        assert!(pde_residual(&neumann(&c), &y, &pts, 1e-3) < 1e-6);
        let h = SurfaceModel::hemisphere();
        let y = SurfacePoint::new(0.8, 0.3);
        let pts: Vec<_> = (0..5).map(|i| SurfacePoint::new(0.2 + 0.25 * i as f64, 2.0)).collect();
        assert!(pde_residual(&neumann(&h), &y, &pts, 1e-3) < 1e-6);
        let d = GreenKernel::new(&h, BoundaryCondition::Dirichlet, KernelMode::ClosedForm).unwrap();
        assert!(pde_residual(&d, &y, &pts, 1e-3) < 1e-6);
    }

    #[test]
    fn neumann_normal_derivative_vanishes() {
        let c = cyl();
        let k = neumann(&c);
        let y = SurfacePoint::new(0.3, 0.1);
        for s in [SurfacePoint::new(0.0, 0.4), SurfacePoint::new(1.0, 0.9)] {
            assert!(normal_derivative(&k, &s, &y, 1e-3).abs() < 1e-5);
        }
        let h = SurfaceModel::hemisphere();
        let s = SurfacePoint::new(PI / 2.0, 0.4);
        assert!(normal_derivative(&neumann(&h), &s, &SurfacePoint::new(1.0, 0.0), 1e-3).abs() < 1e-5);
        // The Dirichlet kernel has a genuine flux through the boundary.
        let d = GreenKernel::new(&c, BoundaryCondition::Dirichlet, KernelMode::ClosedForm).unwrap();
        assert!(normal_derivative(&d, &SurfacePoint::new(0.0, 0.1), &y, 1e-3).abs() > 1e-2);
    }

    #[test]
    fn dirichlet_vanishes_on_boundary() {
        let c = cyl();
        let x = SurfacePoint::new(0.4, 0.3);
        for y in [SurfacePoint::new(0.0, 0.7), SurfacePoint::new(1.0, 0.2)] {
            let v = green_bordered(&c, BoundaryCondition::Dirichlet, &x, &y).unwrap();
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_doubling_factor() {
        // For s on ∂Σ the Neumann kernel is exactly twice the double's.
        let c = cyl();
        let s = SurfacePoint::new(0.0, 0.25);
        let y = SurfacePoint::new(0.6, 0.7);
        let n = green_bordered(&c, BoundaryCondition::Neumann, &s, &y).unwrap();
        let d = green_double(&c, &s, &y).unwrap();
        assert!((n - 2.0 * d).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let c = cyl();
        let x = SurfacePoint::new(0.4, 0.3);
        assert!(matches!(green_double(&c, &x, &x), Err(Error::CoincidentPoints)));
        let hp = SurfaceModel::half_plane_dozz();
        assert!(GreenKernel::new(&hp, BoundaryCondition::Neumann, KernelMode::ClosedForm).is_err());
    }

    #[test]
    fn doubling_identity_in_eigen_sum_form() {
        for s in [cyl(), SurfaceModel::hemisphere()] {
            let lam = 900.0;
            let closed = GreenKernel::eigen_cutoff(&s, BoundaryCondition::Closed, lam).unwrap();
            let neu = GreenKernel::eigen_cutoff(&s, BoundaryCondition::Neumann, lam).unwrap();
            let ext = s.transverse_extent();
            let per = s.azimuth_period();
            let mut worst: f64 = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    let x = SurfacePoint::new(ext * (i as f64 + 0.3) / 6.0, per * i as f64 / 7.0);
                    let y = SurfacePoint::new(ext * (j as f64 + 0.6) / 6.0, per * j as f64 / 5.0);
                    let a = closed.eval_unchecked(&x, &y) + closed.eval_unchecked(&x, &s.reflect(&y));
                    worst = worst.max((a - neu.eval_unchecked(&x, &y)).abs());
                }
            }
            assert!(worst < 1e-10, "{:?}: {worst}", s.kind);
        }
    }

    #[test]
    fn eigen_sum_approaches_closed_form() {
        let s = SurfaceModel::hemisphere();
        let x = SurfacePoint::new(0.5, 0.0);
        let y = SurfacePoint::new(1.2, 2.0);
        let exact = green_bordered(&s, BoundaryCondition::Neumann, &x, &y).unwrap();
        let coarse = GreenKernel::new(&s, BoundaryCondition::Neumann, KernelMode::EigenSum { modes: 400 })
            .unwrap()
            .eval(&x, &y)
            .unwrap();
        let fine = GreenKernel::new(&s, BoundaryCondition::Neumann, KernelMode::EigenSum { modes: 4000 })
            .unwrap()
            .eval(&x, &y)
            .unwrap();
        assert!((fine - exact).abs() < (coarse - exact).abs());
        assert!((fine - exact).abs() < 1e-2);
    }

    #[test]
    fn green_identity_holds() {
        let c = cyl();
        let k = neumann(&c);
        let pts = [SurfacePoint::new(0.3, 0.1), SurfacePoint::new(0.75, 0.6)];
        let fs = [
            TestFunction::Constant { value: 2.0 },
            TestFunction::CosAzimuth { k: 1 },
            TestFunction::CosTransverse { k: 1 },
            TestFunction::QuadraticWave,
        ];
        for f in fs {
            let r = green_identity_residual(&k, &f, &pts).unwrap();
            assert!(r < 1e-6, "{f:?}: {r}");
        }
        let h = SurfaceModel::hemisphere();
        let r = green_identity_residual(&neumann(&h), &TestFunction::Height, &[SurfacePoint::new(0.7, 1.0)])
            .unwrap();
        assert!(r < 1e-6, "height: {r}");
        assert!(green_identity_residual(&k, &TestFunction::Height, &pts).is_err());
    }

    #[test]
    fn conformal_kernel() {
        let c = cyl();
        let k = neumann(&c);
        let x = SurfacePoint::new(0.3, 0.2);
        let y = SurfacePoint::new(0.7, 0.9);
        let base = k.eval(&x, &y).unwrap();
        let zero = k.with_conformal(ConformalFactor::Zero).unwrap();
        assert!((zero.eval(&x, &y).unwrap() - base).abs() < 1e-12);
        let cst = k.with_conformal(ConformalFactor::Constant { value: 0.8 }).unwrap();
        assert!((cst.eval(&x, &y).unwrap() - base).abs() < 1e-12);

        // ∫K(x,y) e^{φ(y)} dv₀ for φ = a cos 2πy from the y-Fourier kernels:
        // Σ_{k≥1} ŵ_k e_k(y_x) 2π / (2πk)², ŵ_k the Fourier coefficients of e^φ.
        let a = 0.3;
        let phi = ConformalFactor::CosAzimuth { amplitude: a, k: 1 };
        let g = k.with_conformal(phi).unwrap();
        let n = 4096;
        let mut oracle = 0.0;
        for kk in 1..20 {
            let wk = crate::quadrature::periodic_mean(1.0, n, |y| {
                (a * (2.0 * PI * y).cos()).exp() * (2.0 * PI * kk as f64 * y).cos()
            });
            oracle += 2.0 * wk * (2.0 * PI * kk as f64 * x.v).cos() * 2.0 * PI / (2.0 * PI * kk as f64).powi(2);
        }
        let vol_g = crate::quadrature::periodic_mean(1.0, n, |y| (a * (2.0 * PI * y).cos()).exp());
        assert!((g.conformal_volume() - vol_g).abs() < 1e-12);
        assert!((g.conformal_mean(&x) * vol_g - oracle).abs() < 1e-8);
        // Zero g-average of the changed kernel, by quadrature.
        let avg = integrate_kernel(&g, &x, |p| phi.eval(&c, p).exp(), 48) / (2.0 * PI);
        assert!(avg.abs() < 1e-8, "{avg}");
    }

    #[test]
    fn circle_variance_increments() {
        let c = cyl();
        let h = SurfaceModel::hemisphere();
        for (s, x) in [(&c, SurfacePoint::new(0.5, 0.3)), (&h, SurfacePoint::new(0.8, 0.5))] {
            let v1 = circle_average_variance(s, &x, 0.05, 64).unwrap();
            let v2 = circle_average_variance(s, &x, 0.025, 64).unwrap();
            assert!(((v2 - v1) - std::f64::consts::LN_2).abs() < 0.02 * std::f64::consts::LN_2);
        }
        let b = SurfacePoint::new(0.0, 0.3);
        let v1 = circle_average_variance(&c, &b, 0.05, 64).unwrap();
        let v2 = circle_average_variance(&c, &b, 0.025, 64).unwrap();
        assert!(((v2 - v1) - 2.0 * std::f64::consts::LN_2).abs() < 0.02);
        assert!(circle_average_variance(&c, &SurfacePoint::new(0.01, 0.0), 0.05, 64).is_err());
    }

    #[test]
    fn w_is_stable_in_eps() {
        let c = cyl();
        let x = SurfacePoint::new(0.5, 0.3);
        let a = circle_average_w(&c, &x, 0.1).unwrap();
        let b = circle_average_w(&c, &x, 0.05).unwrap();
        assert!((a - b).abs() < 1e-6);
        // Interior W equals the regular part of the Neumann kernel on the diagonal.
        let reg = double_kernel_regular(&c, &x, &x) + double_kernel(&c, &x, &c.reflect(&x));
        assert!((a - reg).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn symmetric_and_rotation_invariant(
            t1 in 0.0..1.0f64, y1 in 0.0..1.0f64, t2 in 0.0..1.0f64, y2 in 0.0..1.0f64, c in 0.0..1.0f64
        ) {
            let s = cyl();
            let (x, y) = (SurfacePoint::new(t1, y1), SurfacePoint::new(t2, y2));
            prop_assume!(s.double_distance(&x, &y) > 1e-6);
            let k = neumann(&s);
            let a = k.eval(&x, &y).unwrap();
            prop_assert!((a - k.eval(&y, &x).unwrap()).abs() < 1e-12);
            let rx = SurfacePoint::new(t1, (y1 + c) % 1.0);
            let ry = SurfacePoint::new(t2, (y2 + c) % 1.0);
            prop_assert!((a - k.eval(&rx, &ry).unwrap()).abs() < 1e-11);
        }

        #[test]
        fn log_singularity_is_bounded(d in 1e-4..1e-1f64, ang in 0.0..std::f64::consts::TAU) {
            for s in [cyl(), SurfaceModel::hemisphere()] {
                let x = SurfacePoint::new(0.5, 0.5);
                let y = s.circle_point(&x, d, ang);
                let k = neumann(&s).eval(&x, &y).unwrap();
                prop_assert!((k + s.double_distance(&x, &y).ln()).abs() < 3.0);
            }
        }
    }
}
