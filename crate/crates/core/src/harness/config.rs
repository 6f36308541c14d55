//! Experiment configuration (JSON) and its resolution into model objects.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::drift::{registry_get, Drift, PhaseBlock, PhaseLift, SegmentDrift};
use crate::error::{Error, Result};
use crate::harness::cylinder::{default_dictionary, CylinderFunction, Outer};
use crate::simulate::SimGrid;
use crate::spectral::{SigmaOperator, SpectralOperator};
use crate::weights::{DelayDirection, EigenDirection, HamDirection, SegmentChoice};

pub const DEFAULT_PATHS: u64 = 100_000;
pub const DEFAULT_STEPS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Semilinear,
    Hamiltonian,
    Delay,
    Invariance,
    Fomin,
    Contraction,
}

impl ModelClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelClass::Semilinear => "semilinear",
            ModelClass::Hamiltonian => "hamiltonian",
            ModelClass::Delay => "delay",
            ModelClass::Invariance => "invariance",
            ModelClass::Fomin => "fomin",
            ModelClass::Contraction => "contraction",
        }
    }
}

/// `n` modes with either `λ_i = i^power` or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSection {
    #[default]
    Identity,
    Scalar {
        value: f64,
    },
    Diagonal {
        values: Vec<f64>,
    },
    /// `σ_ii = i^exponent`, `i = 1..n`.
    Power {
        exponent: f64,
    },
    Dense {
        matrix: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            name: "zero".into(),
            params: Value::Null,
        }
    }
}

/// Polynomial term `v · Σ_r coeffs[r] θ^r` of a delay direction `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EtaTerm {
    pub vector: Vec<f64>,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(deny_unknown_fields)]
pub struct DirectionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<EtaTerm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSection {
    /// `B: H → H̃` as rows; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub drift_block: PhaseBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    /// The condition `∫₀¹‖e^{tA}A^{-1}Q‖dt < 1` is only reported.
    #[serde(default)]
    pub check_side_condition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmentChoiceSection {
    #[default]
    Perturbation,
    PlainIntegral,
}

impl From<SegmentChoiceSection> for SegmentChoice {
    fn from(s: SegmentChoiceSection) -> Self {
        match s {
            SegmentChoiceSection::Perturbation => SegmentChoice::Perturbation,
            SegmentChoiceSection::PlainIntegral => SegmentChoice::PlainIntegral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    #[serde(default)]
    pub segment: SegmentChoiceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GirsanovSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
}

impl Default for GirsanovSection {
    fn default() -> Self {
        Self {
            enabled: true,
            eps: default_eps(),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_eps() -> Vec<f64> {
    vec![0.1, 0.05]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Lyapunov Gaussian for linear drifts, the Gibbs sampler for the
    /// gradient drift, long-run chains otherwise.
    #[default]
    Auto,
    Lyapunov,
    Gibbs,
    Sampler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Semilinear,
    #[default]
    Hamiltonian,
    Delay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_sampler_dt")]
    pub dt: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            dt: default_sampler_dt(),
            samples: default_samples(),
            chains: default_chains(),
            burn_in: None,
            gap: None,
        }
    }
}

fn default_sampler_dt() -> f64 {
    0.01
}
fn default_samples() -> usize {
    10_000
}
fn default_chains() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InvarianceSection {
    #[serde(default)]
    pub dynamics: DynamicsKind,
    #[serde(default)]
    pub reference: ReferenceKind,
    /// Horizon of the stationarity check `μ(f) = μ(P_t f)`.
    #[serde(default = "one")]
    pub stationarity_t: f64,
    /// Length of each long-run chain for the empirical covariance; 0 skips.
    #[serde(default)]
    pub covariance_steps: usize,
    #[serde(default = "default_cov_chains")]
    pub covariance_chains: usize,
    #[serde(default = "default_half_width")]
    pub grid_half_width: f64,
    #[serde(default = "default_per_axis")]
    pub grid_per_axis: usize,
    /// Relative Frobenius tolerance of empirical vs analytic covariance.
    #[serde(default = "default_cov_tol")]
    pub covariance_tol: f64,
    /// Max FP residual accepted for an analytic candidate.
    #[serde(default = "default_fp_tol")]
    pub residual_tol: f64,
}

impl Default for InvarianceSection {
    fn default() -> Self {
        Self {
            dynamics: DynamicsKind::default(),
            reference: ReferenceKind::default(),
            stationarity_t: one(),
            covariance_steps: 0,
            covariance_chains: default_cov_chains(),
            grid_half_width: default_half_width(),
            grid_per_axis: default_per_axis(),
            covariance_tol: default_cov_tol(),
            residual_tol: default_fp_tol(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_cov_chains() -> usize {
    4
}
fn default_half_width() -> f64 {
    2.0
}
fn default_per_axis() -> usize {
    7
}
fn default_cov_tol() -> f64 {
    0.05
}
fn default_fp_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(deny_unknown_fields)]
pub struct FominSection {
    /// Directions `k`; `direction.k` when empty.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    pub y0: Vec<f64>,
    #[serde(default = "default_contraction_kappa")]
    pub kappa: f64,
    /// Number of independent noise paths, each checked nodewise.
    #[serde(default = "default_contraction_paths")]
    pub paths: u64,
}

fn default_contraction_kappa() -> f64 {
    10.0
}
fn default_contraction_paths() -> u64 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    /// Floor of the bias coefficient `κ` in `|mean| ≤ z_max·SE + κ·dt`.
    #[serde(default)]
    pub kappa_min: f64,
    /// Run the `dt/2` companion.
    #[serde(default = "yes")]
    pub richardson: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            z_max: default_z_max(),
            kappa_min: 0.0,
            richardson: true,
        }
    }
}

fn default_z_max() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelClass,
    pub operator: OperatorSection,
    #[serde(default)]
    pub sigma: SigmaSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub direction: DirectionSection,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Initial state (constant initial segment for delay models); zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_paths")]
    pub paths: u64,
    #[serde(default)]
    pub seed: u64,
    /// Test functions; the five-function default dictionary when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functions: Option<Vec<CylinderFunction>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub hamiltonian: HamiltonianSection,
    #[serde(default)]
    pub delay: DelaySection,
    #[serde(default)]
    pub girsanov: GirsanovSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub invariance: InvarianceSection,
    #[serde(default)]
    pub fomin: FominSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionSection>,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_paths() -> u64 {
    DEFAULT_PATHS
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// JSON Schema of the configuration file format.
    pub fn schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(ExperimentConfig)).expect("schema serializes") + "\n"
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<SimGrid> {
        SimGrid::new(self.horizon, self.steps)
    }

    pub fn operator(&self) -> Result<SpectralOperator> {
        let o = &self.operator;
        if o.n == 0 {
            return Err(Error::Config("operator.n must be positive".into()));
        }
        match (&o.power, &o.eigenvalues) {
            (Some(p), None) => SpectralOperator::power_law(o.n, *p),
            (None, Some(l)) => {
                if l.len() != o.n {
                    return Err(Error::Config(format!(
                        "operator.eigenvalues has {} entries, n = {}",
                        l.len(),
                        o.n
                    )));
                }
                SpectralOperator::new(l.clone())
            }
            (None, None) => SpectralOperator::power_law(o.n, 2.0),
            (Some(_), Some(_)) => Err(Error::Config(
                "operator needs at most one of `power` and `eigenvalues`".into(),
            )),
        }
    }

    pub fn sigma(&self, n: usize) -> Result<SigmaOperator> {
        match &self.sigma {
            SigmaSection::Identity => Ok(SigmaOperator::identity(n)),
            SigmaSection::Scalar { value } => SigmaOperator::diagonal(vec![*value; n]),
            SigmaSection::Diagonal { values } => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: values.len(),
                    });
                }
                SigmaOperator::diagonal(values.clone())
            }
            SigmaSection::Power { exponent } => {
                SigmaOperator::diagonal((1..=n).map(|i| (i as f64).powf(*exponent)).collect())
            }
            SigmaSection::Dense { matrix } => SigmaOperator::dense(rows_to_matrix(matrix, "sigma.matrix")?),
        }
    }

    fn drift_params(&self) -> Value {
        let mut params = self.drift.params.clone();
        // a delay drift inherits the model's delay
        if self.drift.name == "delay_terminal" {
            if let (Some(tau), Value::Object(map)) = (self.tau, &mut params) {
                map.entry("tau").or_insert(tau.into());
            } else if let (Some(tau), Value::Null) = (self.tau, &params) {
                params = serde_json::json!({ "tau": tau });
            }
        }
        params
    }

    pub fn state_drift(&self, op: &SpectralOperator) -> Result<Arc<dyn Drift>> {
        registry_get(&self.drift.name, &self.drift_params(), op)?.state()
    }

    pub fn segment_drift(&self, op: &SpectralOperator) -> Result<Arc<dyn SegmentDrift>> {
        registry_get(&self.drift.name, &self.drift_params(), op)?.segment()
    }

    pub fn functions(&self, dim: usize) -> Vec<CylinderFunction> {
        self.functions.clone().unwrap_or_else(|| default_dictionary(dim))
    }

    pub fn coupling(&self, d: usize) -> Result<DMatrix<f64>> {
        match &self.hamiltonian.coupling {
            None => Ok(DMatrix::identity(d, d)),
            Some(rows) => {
                let b = rows_to_matrix(rows, "hamiltonian.coupling")?;
                if b.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: b.ncols(),
                    });
                }
                Ok(b)
            }
        }
    }

    pub fn x0(&self, dim: usize) -> Result<Vec<f64>> {
        vector_or_zero(self.x0.as_ref(), dim, "x0")
    }

    /// Resolve every reference in the configuration without running anything.
    pub fn build(&self) -> Result<Setup> {
        let op = self.operator()?;
        let n = op.dim();
        let sig = self.sigma(n)?;
        let grid = self.grid()?;
        if self.paths == 0 {
            return Err(Error::Config("paths must be positive".into()));
        }
        let t = &self.tolerances;
        if !(t.z_max > 0.0) || !(t.kappa_min >= 0.0) {
            return Err(Error::Config("tolerances need z_max > 0 and kappa_min ≥ 0".into()));
        }
        let model = match self.model {
            ModelClass::Semilinear | ModelClass::Fomin | ModelClass::Contraction => self.build_semilinear(&op)?,
            ModelClass::Hamiltonian => self.build_hamiltonian(&op)?,
            ModelClass::Delay => self.build_delay(&op, &grid)?,
            ModelClass::Invariance => match self.invariance.dynamics {
                DynamicsKind::Semilinear => self.build_semilinear(&op)?,
                DynamicsKind::Hamiltonian => self.build_hamiltonian(&op)?,
                DynamicsKind::Delay => self.build_delay(&op, &grid)?,
            },
        };
        let fomin_directions = if self.model == ModelClass::Fomin {
            let raw = if self.fomin.directions.is_empty() {
                vec![self.direction.k.clone().ok_or_else(|| Error::Config("fomin needs directions".into()))?]
            } else {
                self.fomin.directions.clone()
            };
            raw.into_iter()
                .map(|k| {
                    if k.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: k.len(),
                        });
                    }
                    EigenDirection::new(k)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        if self.model == ModelClass::Contraction {
            let c = self
                .contraction
                .as_ref()
                .ok_or_else(|| Error::Config("contraction model needs a `contraction` section".into()))?;
            vector_or_zero(Some(&c.y0), n, "contraction.y0")?;
            if let Model::Semilinear { drift, .. } = &model {
                if drift.dissipativity().is_none() {
                    return Err(Error::Config(format!(
                        "drift `{}` has no known dissipativity constant",
                        drift.name()
                    )));
                }
            }
        }
        let functions = self.functions(model.function_dim());
        for f in &functions {
            f.validate(model.function_dim(), self.tau.unwrap_or(0.0))?;
        }
        if self.model == ModelClass::Invariance || self.model == ModelClass::Fomin {
            let s = &self.sampler;
            if !(s.dt > 0.0) || s.samples == 0 || s.chains == 0 {
                return Err(Error::Config("sampler needs dt > 0, samples > 0, chains > 0".into()));
            }
        }
        for e in &self.girsanov.eps {
            if !(*e > 0.0 && e.is_finite()) {
                return Err(Error::Config("girsanov.eps must be positive".into()));
            }
        }
        Ok(Setup {
            op,
            sig,
            grid,
            model,
            functions,
            fomin_directions,
        })
    }

    fn build_semilinear(&self, op: &SpectralOperator) -> Result<Model> {
        let drift = self.state_drift(op)?;
        let n = op.dim();
        let k = match &self.direction.k {
            Some(k) => {
                if k.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: k.len(),
                    });
                }
                Some(EigenDirection::new(k.clone())?)
            }
            None if self.model == ModelClass::Semilinear => {
                return Err(Error::Config("semilinear model needs direction.k".into()))
            }
            None => None,
        };
        Ok(Model::Semilinear {
            drift,
            k,
            x0: self.x0(n)?,
        })
    }

    fn build_hamiltonian(&self, op: &SpectralOperator) -> Result<Model> {
        let d = op.dim();
        let coupling = self.coupling(d)?;
        let p = coupling.nrows();
        let inner = self.state_drift(op)?;
        let drift: Arc<dyn Drift> = Arc::new(PhaseLift::new(inner.clone(), self.hamiltonian.drift_block, p, d)?);
        let direction = match (&self.direction.k1, &self.direction.k2) {
            (Some(k1), Some(k2)) => Some(HamDirection::new(k1.clone(), k2.clone(), &coupling, op)?),
            (None, None) if self.model != ModelClass::Hamiltonian => None,
            _ => return Err(Error::Config("hamiltonian model needs direction.k1 and direction.k2".into())),
        };
        Ok(Model::Hamiltonian {
            coupling,
            drift,
            inner,
            direction,
            x0: self.x0(p)?,
            y0: vector_or_zero(self.hamiltonian.y0.as_ref(), d, "hamiltonian.y0")?,
        })
    }

    fn build_delay(&self, op: &SpectralOperator, grid: &SimGrid) -> Result<Model> {
        let n = op.dim();
        let tau = self.tau.ok_or_else(|| Error::Config("delay model needs `tau`".into()))?;
        crate::simulate::delay_lags(tau, grid.dt())?;
        let drift = self.segment_drift(op)?;
        let direction = match &self.direction.eta {
            Some(terms) => Some(DelayDirection::polynomial(
                n,
                terms.iter().map(|t| (t.vector.clone(), t.coeffs.clone())).collect(),
            )?),
            None if self.model != ModelClass::Delay => None,
            None => return Err(Error::Config("delay model needs direction.eta".into())),
        };
        if self.model == ModelClass::Delay && !(self.horizon > tau) {
            return Err(Error::HorizonTooShort {
                horizon: self.horizon,
                tau,
            });
        }
        Ok(Model::Delay {
            drift,
            direction,
            tau,
            x0: self.x0(n)?,
        })
    }
}

fn vector_or_zero(v: Option<&Vec<f64>>, dim: usize, what: &str) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![0.0; dim]),
        Some(v) if v.len() == dim => Ok(v.clone()),
        Some(v) => Err(Error::Config(format!("{what} has length {}, expected {dim}", v.len()))),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what} is ragged or empty")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Model objects resolved from a configuration.
#[derive(Debug, Clone)]
pub enum Model {
    Semilinear {
        drift: Arc<dyn Drift>,
        k: Option<EigenDirection>,
        x0: Vec<f64>,
    },
    Hamiltonian {
        coupling: DMatrix<f64>,
        /// Lifted to the phase space.
        drift: Arc<dyn Drift>,
        /// As configured, on one block.
        inner: Arc<dyn Drift>,
        direction: Option<HamDirection>,
        x0: Vec<f64>,
        y0: Vec<f64>,
    },
    Delay {
        drift: Arc<dyn SegmentDrift>,
        direction: Option<DelayDirection>,
        tau: f64,
        x0: Vec<f64>,
    },
}

impl Model {
    /// Dimension of the space test functions act on.
    pub fn function_dim(&self) -> usize {
        match self {
            Model::Semilinear { x0, .. } | Model::Delay { x0, .. } => x0.len(),
            Model::Hamiltonian { x0, y0, .. } => x0.len() + y0.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub op: SpectralOperator,
    pub sig: SigmaOperator,
    pub grid: SimGrid,
    pub model: Model,
    pub functions: Vec<CylinderFunction>,
    pub fomin_directions: Vec<EigenDirection>,
}

/// The constant function is always part of an IBP run: its paired mean is
/// `−E[M]`.
pub fn with_constant(mut functions: Vec<CylinderFunction>) -> Vec<CylinderFunction> {
    if !functions.iter().any(|f| f.outer == Outer::Const) {
        functions.push(CylinderFunction::constant());
    }
    functions
}
