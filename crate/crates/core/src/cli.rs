//! Experiment runner behind the `lcft-lab` binary: TOML configs in, JSON
//! reports and CSV tables out.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{fusion_scan, geometric_ladder, FusionCase, FusionConfig};
use crate::gmc::{dyadic_ladder, run_mass_experiment, MassExperiment};
use crate::green::{
    green_identity_residual, integrate_kernel, normal_derivative, pde_residual, GreenKernel,
    KernelMode, TestFunction,
};
use crate::lcft::{
    anomaly_check, correlation_estimate, scaling_residual, seiberg_check, CorrelationConfig, InsertionSet,
    LiouvilleParams,
};
use crate::markov::{markov_covariance_residual, sampled_decomposition, test_pairs, Cut, CutSpec};
use crate::mc::{MeanEstimate, StreamFamily};
use crate::spectral::{build_basis, sample_gff, weyl_slope, BoundaryCondition};
use crate::surfaces::{build_surface, ConformalFactor, SurfaceKind, SurfaceModel, SurfacePoint, SurfaceSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SampleGff,
    GmcMass,
    Correlate,
    CheckSeiberg,
    VerifyAnomaly,
    VerifyScaling,
    VerifyMarkov,
    FusionScan,
    WeylCheck,
    GreenResiduals,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SampleGff => "sample-gff",
            Command::GmcMass => "gmc-mass",
            Command::Correlate => "correlate",
            Command::CheckSeiberg => "check-seiberg",
            Command::VerifyAnomaly => "verify-anomaly",
            Command::VerifyScaling => "verify-scaling",
            Command::VerifyMarkov => "verify-markov",
            Command::FusionScan => "fusion-scan",
            Command::WeylCheck => "weyl-check",
            Command::GreenResiduals => "green-residuals",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub gamma: f64,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub mu_boundary: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    /// Regularization radius of correlation estimates.
    pub eps: f64,
    /// Spectral truncation `N`.
    pub modes: usize,
    pub circle_points: usize,
    /// `ε` ladder for `gmc-mass`; dyadic from 0.1 when empty.
    pub ladder: Vec<f64>,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { eps: 0.05, modes: 1024, circle_points: 32, ladder: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub n_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection { n_samples: 2000, seed: 0, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovSection {
    /// Defaults to the mid-height circle or the half-circle at longitude 0.
    pub cut: Option<CutSpec>,
    pub points: usize,
    pub margin: Option<f64>,
}

impl Default for MarkovSection {
    fn default() -> Self {
        MarkovSection { cut: None, points: 20, margin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub cases: Vec<FusionCase>,
    pub d_max: f64,
    pub ratio: f64,
    pub rungs: usize,
    pub eps: f64,
    pub ring_ratio: f64,
    pub angular: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        let f = FusionConfig::default();
        FusionSection {
            cases: vec![FusionCase::BulkBulk { alpha1: 0.5, alpha2: 0.5 }],
            d_max: 0.32,
            ratio: 0.5f64.sqrt(),
            rungs: 9,
            eps: f.eps,
            ring_ratio: f.ring_ratio,
            angular: f.angular,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_surface")]
    pub surface: SurfaceSpec,
    pub params: ParamsSection,
    #[serde(default)]
    pub insertions: InsertionSet,
    #[serde(default = "default_phi")]
    pub phi: ConformalFactor,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub markov: MarkovSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_surface() -> SurfaceSpec {
    SurfaceSpec::FlatCylinder { height: 1.0 }
}

fn default_phi() -> ConformalFactor {
    ConformalFactor::Zero
}

/// Parse and validate a TOML config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let surface = build_surface(&self.surface)?;
        LiouvilleParams::new(self.params.gamma, self.params.mu, self.params.mu_boundary)?;
        if self.command != Command::CheckSeiberg {
            self.insertions.validate(&surface)?;
        }
        self.phi.validate(&surface)?;
        if !(self.mesh.eps > 0.0 && self.mesh.eps < 0.5) {
            return Err(Error::param("mesh.eps", "must lie in (0, 0.5)"));
        }
        if self.mesh.modes == 0 || self.mesh.circle_points < 4 {
            return Err(Error::param("mesh", "need modes ≥ 1 and circle_points ≥ 4"));
        }
        if self.mesh.ladder.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::param("mesh.ladder", "radii must be positive"));
        }
        if self.mc.n_samples < 2 || self.mc.workers == 0 {
            return Err(Error::param("mc", "need n_samples ≥ 2 and workers ≥ 1"));
        }
        if self.command == Command::FusionScan {
            self.fusion_config().validate()?;
            if self.fusion.cases.is_empty() || !(self.fusion.ratio > 0.0 && self.fusion.ratio < 1.0) {
                return Err(Error::param("fusion", "need at least one case and a ratio in (0, 1)"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let value = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            gamma: self.params.gamma,
            mu: self.params.mu,
            mu_boundary: self.params.mu_boundary,
            samples: self.mc.n_samples,
            eps: self.fusion.eps,
            ring_ratio: self.fusion.ring_ratio,
            angular: self.fusion.angular,
            ..FusionConfig::default()
        }
    }

    fn correlation_config(&self) -> CorrelationConfig {
        CorrelationConfig {
            samples: self.mc.n_samples,
            modes: self.mesh.modes,
            eps: self.mesh.eps,
            circle_points: self.mesh.circle_points,
        }
    }

    fn liouville(&self) -> Result<LiouvilleParams> {
        LiouvilleParams::new(self.params.gamma, self.params.mu, self.params.mu_boundary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub tolerance: Option<f64>,
    /// `None` for informational values.
    pub pass: Option<bool>,
}

impl Metric {
    fn info(name: impl Into<String>, value: f64) -> Metric {
        Metric { name: name.into(), value, stderr: None, tolerance: None, pass: None }
    }

    fn estimate(name: impl Into<String>, e: &MeanEstimate) -> Metric {
        Metric { stderr: Some(e.stderr), ..Metric::info(name, e.mean) }
    }

    /// A value that passes when at most `tolerance`.
    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Metric {
        Metric { tolerance: Some(tolerance), pass: Some(value <= tolerance), ..Metric::info(name, value) }
    }

    /// A z-score of an estimate against a target, passing when `|z| < tolerance`.
    fn z(name: impl Into<String>, e: &MeanEstimate, target: f64, tolerance: f64) -> Metric {
        let z = e.z_against(target);
        Metric {
            name: name.into(),
            value: e.mean,
            stderr: Some(e.stderr),
            tolerance: Some(tolerance),
            pass: Some(z.abs() < tolerance),
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Metric {
        Metric { pass: Some(ok), ..Metric::info(name, if ok { 1.0 } else { 0.0 }) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub command: Command,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub git_describe: String,
    pub metrics: Vec<Metric>,
    /// Divergent correlations or inadmissible insertions.
    pub divergence: bool,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

impl ReportRecord {
    pub fn all_pass(&self) -> bool {
        self.metrics.iter().all(|m| m.pass != Some(false))
    }

    /// 0 when every flag passes, 2 on divergence, 3 on a failed check.
    pub fn exit_code(&self) -> i32 {
        if self.divergence {
            2
        } else if self.all_pass() {
            0
        } else {
            3
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// The JSON form with the timing field zeroed, for comparisons.
    pub fn without_timing(&self) -> String {
        ReportRecord { wall_time_s: 0.0, ..self.clone() }.to_json()
    }
}

#[derive(Default)]
struct Outcome {
    metrics: Vec<Metric>,
    divergence: bool,
    notes: Vec<String>,
    tables: BTreeMap<String, String>,
}

/// Run the configured command on the current rayon pool. Tables and
/// `report.json` go to `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ReportRecord> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    let family = StreamFamily::new(cfg.mc.seed);
    let surface = build_surface(&cfg.surface)?;
    let outcome = match cfg.command {
        Command::SampleGff => sample_gff_cmd(cfg, &surface, &family),
        Command::GmcMass => gmc_mass_cmd(cfg, &surface, &family),
        Command::Correlate => correlate_cmd(cfg, &surface, &family),
        Command::CheckSeiberg => seiberg_cmd(cfg, &surface),
        Command::VerifyAnomaly => anomaly_cmd(cfg, &surface, &family),
        Command::VerifyScaling => scaling_cmd(cfg, &surface, &family),
        Command::VerifyMarkov => markov_cmd(cfg, &surface, &family),
        Command::FusionScan => fusion_cmd(cfg, &family),
        Command::WeylCheck => weyl_cmd(cfg, &surface),
        Command::GreenResiduals => green_cmd(&surface),
    }
    .map_err(|e| match e {
        Error::Divergent { .. } | Error::Inadmissible(_) => e,
        other => Error::Config(format!("{}: {other}", cfg.command.name())),
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e @ (Error::Divergent { .. } | Error::Inadmissible(_))) => {
            Outcome { divergence: true, notes: vec![e.to_string()], ..Outcome::default() }
        }
        Err(e) => return Err(e),
    };
    let mut artifacts = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for (name, body) in &outcome.tables {
            fs::write(dir.join(name), body)?;
            artifacts.push(name.clone());
        }
    }
    let report = ReportRecord {
        schema_version: SCHEMA_VERSION,
        command: cfg.command,
        config_hash: cfg.hash(),
        seed: cfg.mc.seed,
        workers: cfg.mc.workers,
        git_describe: env!("LCFT_GIT_DESCRIBE").to_string(),
        metrics: outcome.metrics,
        divergence: outcome.divergence,
        notes: outcome.notes,
        artifacts,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    }
    Ok(report)
}

/// Interior points spread over the model, away from the boundary.
fn probe_points(surface: &SurfaceModel, n: usize) -> Vec<SurfacePoint> {
    let ext = surface.transverse_extent();
    let per = surface.azimuth_period();
    let golden = 0.618_033_988_749_895;
    (0..n)
        .map(|i| {
            let f = (i as f64 + 0.5) / n as f64;
            SurfacePoint::new(ext * (0.15 + 0.7 * f), per * (i as f64 * golden).fract())
        })
        .collect()
}

fn boundary_points(surface: &SurfaceModel, n: usize) -> Vec<SurfacePoint> {
    let per = surface.azimuth_period();
    let rows: Vec<f64> = match surface.kind {
        SurfaceKind::FlatCylinder { height } => vec![0.0, height],
        _ => vec![surface.transverse_extent()],
    };
    (0..n).map(|i| SurfacePoint::new(rows[i % rows.len()], per * (i as f64 + 0.3) / n as f64)).collect()
}

fn sample_gff_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let basis = build_basis(surface, BoundaryCondition::Neumann, cfg.mesh.modes)?;
    let x0 = probe_points(surface, 1)[0];
    let values = crate::mc::replicates(cfg.mc.n_samples, |i| sample_gff(&basis, family, i as u64).eval(&basis, &x0));
    let squares: Vec<f64> = values.iter().map(|x| x * x).collect();
    let mean = MeanEstimate::from_samples(&values);
    let var = MeanEstimate::from_samples(&squares);
    let mut out = Outcome::default();
    out.metrics.push(Metric::z("field_mean", &mean, 0.0, 3.0));
    out.metrics.push(Metric::z("field_variance", &var, basis.truncated_variance(&x0), 3.0));
    out.metrics.push(Metric::info("truncated_variance", basis.truncated_variance(&x0)));
    let first = sample_gff(&basis, family, 0);
    let mut csv = String::from("u,v,value\n");
    let (ext, per) = (surface.transverse_extent(), surface.azimuth_period());
    for i in 0..=32 {
        for j in 0..32 {
            let p = SurfacePoint::new(ext * i as f64 / 32.0, per * j as f64 / 32.0);
            csv += &format!("{:?},{:?},{:?}\n", p.u, p.v, first.eval(&basis, &p));
        }
    }
    out.tables.insert("gff.csv".into(), csv);
    Ok(out)
}

fn gmc_mass_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let ladder = if cfg.mesh.ladder.is_empty() { dyadic_ladder(0.1, 3) } else { cfg.mesh.ladder.clone() };
    let gamma = cfg.params.gamma;
    let exp = MassExperiment {
        gamma,
        ladder,
        samples: cfg.mc.n_samples,
        modes: cfg.mesh.modes,
        circle_points: cfg.mesh.circle_points,
        negative_moment_p: 0.5,
    };
    let s = run_mass_experiment(surface, &exp, family)?;
    let mut out = Outcome::default();
    let mut csv = String::from("eps,bulk_mean,bulk_stderr,bulk_expected,boundary_mean,boundary_stderr,boundary_expected\n");
    for (k, l) in s.levels.iter().enumerate() {
        if gamma < 2.0 {
            out.metrics.push(Metric::z(format!("level{k}.bulk_mass"), &l.bulk, l.bulk_expected, 3.0));
            out.metrics.push(Metric::z(format!("level{k}.boundary_mass"), &l.boundary, l.boundary_expected, 3.0));
        } else {
            out.metrics.push(Metric::estimate(format!("level{k}.bulk_mass"), &l.bulk));
            out.metrics.push(Metric::estimate(format!("level{k}.boundary_mass"), &l.boundary));
            let ok = l.min_bulk_mass > 0.0 && l.min_boundary_mass > 0.0 && l.bulk.stderr > 0.0;
            out.metrics.push(Metric::flag(format!("level{k}.positive"), ok));
        }
        csv += &format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            l.eps, l.bulk.mean, l.bulk.stderr, l.bulk_expected, l.boundary.mean, l.boundary.stderr, l.boundary_expected
        );
    }
    for (k, (b, d)) in s.bulk_cauchy.iter().zip(&s.boundary_cauchy).enumerate() {
        out.metrics.push(Metric::estimate(format!("cauchy{k}.bulk"), b));
        out.metrics.push(Metric::estimate(format!("cauchy{k}.boundary"), d));
    }
    if gamma < 2f64.sqrt() {
        out.metrics.push(Metric::flag("cauchy_monotone", s.cauchy_monotone()));
    }
    out.tables.insert("gmc-mass.csv".into(), csv);
    Ok(out)
}

fn correlate_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let est = correlation_estimate(surface, &cfg.liouville()?, &cfg.insertions, &cfg.phi, &cfg.correlation_config(), family)?;
    let mut out = Outcome { divergence: est.diverged, ..Outcome::default() };
    out.metrics.push(Metric::info("sbar", est.sbar));
    match (est.value, est.stderr) {
        (Some(v), Some(se)) => out.metrics.push(Metric { stderr: Some(se), ..Metric::info("correlation", v) }),
        _ => out.notes.push(format!("correlation diverges: sbar = {} ≤ 0", est.sbar)),
    }
    if let Some(c) = est.prefactor_limit {
        out.metrics.push(Metric::info("prefactor_limit", c));
    }
    Ok(out)
}

fn seiberg_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel) -> Result<Outcome> {
    let p = &cfg.params;
    let r = seiberg_check(&cfg.insertions, p.mu, p.mu_boundary, p.gamma, surface.euler_char)?;
    let req = r.regime.requires();
    let mut out = Outcome { divergence: !r.admissible, ..Outcome::default() };
    let push = |name: String, ok: bool, required: bool, out: &mut Outcome| {
        let mut m = Metric::flag(name.clone(), ok);
        if !required {
            m.pass = None;
        } else if !ok {
            out.notes.push(format!("violated: {name}"));
        }
        out.metrics.push(m);
    };
    push("bound1".into(), r.bound1, req[0], &mut out);
    for (i, &b) in r.bound2.iter().enumerate() {
        push(format!("bound2[{i}]"), b, req[1], &mut out);
    }
    for (i, &b) in r.bound3.iter().enumerate() {
        push(format!("bound3[{i}]"), b, req[2], &mut out);
    }
    out.metrics.push(Metric::info("admissible", if r.admissible { 1.0 } else { 0.0 }));
    Ok(out)
}

fn anomaly_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let r = anomaly_check(surface, &cfg.liouville()?, &cfg.insertions, &cfg.phi, &cfg.correlation_config(), family)?;
    let mut out = Outcome::default();
    out.metrics.push(Metric::z("normalized_ratio", &r.normalized, 1.0, 3.0));
    out.metrics.push(Metric::estimate("mc_ratio", &r.mc_ratio));
    out.metrics.push(Metric::info("coarse_ratio", r.coarse_ratio));
    out.metrics.push(Metric::info("expected_mc_ratio", r.expected_mc_ratio));
    out.metrics.push(Metric::info("anomaly_factor", r.anomaly_factor));
    out.metrics.push(Metric::info("zgff_ratio", r.zgff_ratio));
    Ok(out)
}

fn scaling_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let r = scaling_residual(surface, &cfg.liouville()?, &cfg.insertions, &cfg.correlation_config(), family)?;
    let mut out = Outcome::default();
    out.metrics.push(Metric::estimate("lhs", &r.lhs));
    out.metrics.push(Metric::estimate("rhs", &r.rhs));
    out.metrics.push(Metric::below("residual_z", r.residual_z, 3.0));
    Ok(out)
}

fn markov_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel, family: &StreamFamily) -> Result<Outcome> {
    let cylinder = matches!(surface.kind, SurfaceKind::FlatCylinder { .. });
    let spec = cfg.markov.cut.unwrap_or(if cylinder {
        CutSpec::Circle { height: 0.5 * surface.transverse_extent() }
    } else {
        CutSpec::HalfCircle { longitude: 0.0 }
    });
    let cut = Cut::new(surface, spec)?;
    let margin = cfg.markov.margin.unwrap_or(if cylinder { 0.05 } else { 0.2 });
    let pairs = test_pairs(&cut, cfg.markov.points, margin);
    let mut out = Outcome::default();
    out.metrics.push(Metric::below("covariance_residual", markov_covariance_residual(&cut, cfg.phi, &pairs)?, 1e-6));
    if cylinder {
        let t = surface.transverse_extent();
        let pts: Vec<SurfacePoint> =
            [(0.1, 0.0), (0.3, 0.45), (0.75, 0.2), (0.95, 0.7)].iter().map(|&(u, v)| SurfacePoint::new(u * t, v)).collect();
        let rep = sampled_decomposition(&cut, &pts, cfg.mc.n_samples, family)?;
        out.metrics.push(Metric::below("sampled_max_z", rep.max_z, 3.0));
        let mut csv = String::from("x_u,x_v,y_u,y_v,empirical,stderr,exact,z\n");
        for p in &rep.pairs {
            csv += &format!("{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n", p.x.u, p.x.v, p.y.u, p.y.v, p.empirical, p.stderr, p.exact, p.z);
        }
        out.tables.insert("markov-sampled.csv".into(), csv);
    }
    Ok(out)
}

fn fusion_cmd(cfg: &ExperimentConfig, family: &StreamFamily) -> Result<Outcome> {
    let fc = cfg.fusion_config();
    let ladder = geometric_ladder(cfg.fusion.d_max, cfg.fusion.ratio, cfg.fusion.rungs);
    let mut out = Outcome::default();
    for (i, case) in cfg.fusion.cases.iter().enumerate() {
        let s = fusion_scan(case, &ladder, &fc, &family.fork(i as u64))?;
        out.metrics.push(Metric {
            name: format!("case{i}.slope"),
            value: s.slope,
            stderr: Some(s.stderr),
            tolerance: Some(3.0),
            pass: Some(!s.violation),
        });
        out.metrics.push(Metric::info(format!("case{i}.predicted"), s.predicted));
        out.metrics.push(Metric::info(format!("case{i}.z"), if s.stderr > 0.0 { s.excess / s.stderr } else { 0.0 }));
        let mut csv = Vec::new();
        s.write_csv(&mut csv)?;
        out.tables.insert(format!("fusion-case{i}.csv"), String::from_utf8(csv).expect("ascii csv"));
    }
    Ok(out)
}

fn weyl_cmd(cfg: &ExperimentConfig, surface: &SurfaceModel) -> Result<Outcome> {
    let basis = build_basis(surface, BoundaryCondition::Neumann, cfg.mesh.modes)?;
    let slope = weyl_slope(&basis)?;
    let predicted = 4.0 * PI / surface.volume;
    let mut out = Outcome::default();
    out.metrics.push(Metric::info("slope", slope));
    out.metrics.push(Metric::info("predicted", predicted));
    out.metrics.push(Metric::below("relative_error", (slope / predicted - 1.0).abs(), 0.05));
    Ok(out)
}

fn green_cmd(surface: &SurfaceModel) -> Result<Outcome> {
    let k = GreenKernel::new(surface, BoundaryCondition::Neumann, KernelMode::ClosedForm)?;
    let pts = probe_points(surface, 6);
    let y = SurfacePoint::new(0.45 * surface.transverse_extent(), 0.37 * surface.azimuth_period());
    let far: Vec<SurfacePoint> = pts.iter().copied().filter(|p| surface.double_distance(p, &y) > 0.1).collect();
    let mut out = Outcome::default();
    out.metrics.push(Metric::below("doubling_identity", doubling_residual(surface, 20)?, 1e-10));
    out.metrics.push(Metric::below("pde_residual", pde_residual(&k, &y, &far, 1e-3), 1e-5));
    let dn = boundary_points(surface, 8).iter().map(|s| normal_derivative(&k, s, &y, 1e-3).abs()).fold(0.0, f64::max);
    out.metrics.push(Metric::below("normal_derivative", dn, 1e-5));
    let avg = pts.iter().map(|x| (integrate_kernel(&k, x, |_| 1.0, 48) / (2.0 * PI)).abs()).fold(0.0, f64::max);
    out.metrics.push(Metric::below("zero_average", avg, 1e-5));
    let fs: Vec<(&str, TestFunction)> = match surface.kind {
        SurfaceKind::FlatCylinder { .. } => vec![
            ("constant", TestFunction::Constant { value: 2.0 }),
            ("cos_azimuth", TestFunction::CosAzimuth { k: 1 }),
            ("cos_transverse", TestFunction::CosTransverse { k: 1 }),
            ("quadratic_wave", TestFunction::QuadraticWave),
        ],
        _ => vec![("constant", TestFunction::Constant { value: 2.0 }), ("height", TestFunction::Height)],
    };
    for (name, f) in fs {
        let r = green_identity_residual(&k, &f, &pts[..2])?;
        out.metrics.push(Metric::below(format!("identity.{name}"), r, 1e-6));
    }
    Ok(out)
}

/// `max |G_c(x,y) + G_c(x,σy) − G_N(x,y)|` on an `n × n` grid, both from eigen-sums.
pub fn doubling_residual(surface: &SurfaceModel, n: usize) -> Result<f64> {
    let lam = 900.0;
    let closed = GreenKernel::eigen_cutoff(surface, BoundaryCondition::Closed, lam)?;
    let neu = GreenKernel::eigen_cutoff(surface, BoundaryCondition::Neumann, lam)?;
    let (ext, per) = (surface.transverse_extent(), surface.azimuth_period());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = SurfacePoint::new(ext * (i as f64 + 0.3) / n as f64, per * (i as f64 / 7.0).fract());
            let y = SurfacePoint::new(ext * (j as f64 + 0.6) / n as f64, per * (j as f64 / 5.0).fract());
            if surface.double_distance(&x, &y) < 1e-9 {
                continue;
            }
            let sy = surface.involution_map(&y)?;
            let a = closed.eval(&x, &y)? + closed.eval(&x, &sy)?;
            worst = worst.max((a - neu.eval(&x, &y)?).abs());
        }
    }
    Ok(worst)
}
