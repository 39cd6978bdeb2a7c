//! Run configuration: one JSON document per run, unknown keys rejected.

use matmob::conditions::SamplePlan;
use matmob::diagnostics::{DecoupledSample, SmoothingSample};
use matmob::jko::{EnergySpec, JkoConfig};
use matmob::pde::FdConfig;
use matmob::transport::DistanceConfig;
use matmob::{MobilityModel, ScalarField};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "MATMOB_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: MobilityModel,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub initial: Option<DensitySource>,
    #[serde(default)]
    pub target: Option<DensitySource>,
    /// Rescale each target component to the initial density's mass.
    #[serde(default)]
    pub match_target_mass: bool,
    #[serde(default)]
    pub distance: DistanceConfig,
    #[serde(default)]
    pub energy: Option<EnergySpec>,
    #[serde(default)]
    pub jko: Option<JkoBlock>,
    #[serde(default)]
    pub fd: Option<FdBlock>,
    #[serde(default)]
    pub heat: Option<HeatBlock>,
    #[serde(default)]
    pub transport: Option<TransportBlock>,
    #[serde(default)]
    pub compare: CompareBlock,
    #[serde(default)]
    pub conditions: ConditionsBlock,
    #[serde(default)]
    pub diagnose: DiagnoseBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

/// Initial-condition families, or a CSV with columns `x, mu_1..mu_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensitySource {
    Csv { path: PathBuf },
    /// `background + amplitude·exp(−(x−center)²/2σ²)` per component.
    GaussianBump { background: Vec<f64>, amplitude: Vec<f64>, center: f64, sigma: f64 },
    /// `background + amplitude` on `[left, right]`.
    Box { background: Vec<f64>, amplitude: Vec<f64>, left: f64, right: f64 },
    /// Blend from `left` to `right` values through `½(1 + tanh((x−center)/width))`.
    TanhFront { left: Vec<f64>, right: Vec<f64>, center: f64, width: f64 },
    /// `background + field(x)` per component; one field for all or one each.
    Fields { background: Vec<f64>, fields: Vec<ScalarField> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JkoBlock {
    pub tau: f64,
    pub t_final: f64,
    #[serde(default)]
    pub config: JkoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdBlock {
    pub t_end: f64,
    #[serde(default)]
    pub config: FdConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatBlock {
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportBlock {
    pub alpha: f64,
    /// Potential `ρ(x)`: one field for all components or one each.
    pub rho: Vec<ScalarField>,
    pub t_end: f64,
    #[serde(default)]
    pub config: FdConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareBlock {
    /// Midpoint times for the space-time discrepancy.
    pub samples: usize,
}

impl Default for CompareBlock {
    fn default() -> Self {
        CompareBlock { samples: 400 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionCheck {
    C0,
    C1,
    C2,
    C2Strict,
    C3,
    Mccann,
    PotentialConvexity,
    EstimateLambda,
    DiagDomination,
    Concavity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    pub alpha: f64,
    pub r: f64,
    /// Defaults to the closed form when available.
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsBlock {
    pub checks: Vec<ConditionCheck>,
    pub plan: SamplePlan,
    pub boundary_samples: usize,
    pub mccann_f: Option<ScalarField>,
    pub potential: Option<PotentialBlock>,
    pub diag_reference: Option<MobilityModel>,
    pub k_grid: Vec<f64>,
}

impl Default for ConditionsBlock {
    fn default() -> Self {
        ConditionsBlock {
            checks: vec![ConditionCheck::C0, ConditionCheck::C1, ConditionCheck::C2, ConditionCheck::C3],
            plan: SamplePlan::default(),
            boundary_samples: 400,
            mccann_f: None,
            potential: None,
            diag_reference: None,
            k_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
        }
    }
}

/// Measured inputs for checks that need solves beyond a recorded trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticRecords {
    pub smoothing: Vec<SmoothingSample>,
    /// `[d_before, d_after, solver_tol]`.
    pub probe: Option<(f64, f64, f64)>,
    pub decoupled: Option<DecoupledSample>,
    pub weak_residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseBlock {
    pub checks: Vec<String>,
    pub jko_run: Option<PathBuf>,
    pub fd_run: Option<PathBuf>,
    pub geodesic_runs: Vec<PathBuf>,
    pub records: DiagnosticRecords,
}

impl Default for DiagnoseBlock {
    fn default() -> Self {
        DiagnoseBlock {
            checks: matmob::diagnostics::CHECKS.iter().map(|s| s.to_string()).collect(),
            jko_run: None,
            fd_run: None,
            geodesic_runs: vec![],
            records: DiagnosticRecords::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Falls back to `$MATMOB_OUT`, then `matmob-out`.
    pub directory: Option<PathBuf>,
    /// Keep every `stride`-th snapshot in density CSVs.
    pub stride: usize,
    pub seed: u64,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: None, stride: 1, seed: 0 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| format!("line {} column {}: {e}", e.line(), e.column()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| format!("model: {e}"))?;
        if let Some(g) = &self.grid {
            if g.cells < 2 || !(g.x_max > g.x_min) {
                return Err("grid: need cells ≥ 2 and x_max > x_min".into());
            }
        }
        if self.output.stride == 0 {
            return Err("output.stride: must be positive".into());
        }
        if let Some(fd) = &self.fd {
            fd.config.validate().map_err(|e| format!("fd.config: {e}"))?;
        }
        self.conditions.plan.validate().map_err(|e| format!("conditions.plan: {e}"))?;
        for c in &self.diagnose.checks {
            if !matmob::diagnostics::CHECKS.contains(&c.as_str()) {
                return Err(format!("diagnose.checks: unknown check '{c}'"));
            }
        }
        Ok(())
    }

    /// Output directory with the environment fallback applied.
    pub fn resolve_output(&mut self) {
        if self.output.directory.is_none() {
            let d = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("matmob-out"));
            self.output.directory = Some(d);
        }
    }
}
