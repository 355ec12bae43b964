//! Declarative experiment description (TOML) and its realization into the
//! plant, cost, exosystem and loop settings.
//!
//! Every random element carries its own seed and draws from its own ChaCha
//! stream, so changing one seed leaves the other draws untouched.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloop::{
    perturb_nonzero, sample_x0, Drift, PlantSchedule, SimConfig, StabilityGuard, BLOWUP_BOUND,
};
use crate::dither::{build_exosystem, default_w0, Exosystem, FrequencySchedule};
use crate::error::{Error, Result};
use crate::learner::DEFAULT_LAMBDA;
use crate::linalg::{zoh_discretize, DenseMatrix, DenseVector};
use crate::lqr::{dare_solve, CostSpec, Gain, Theta};

pub const COST_STREAM: u64 = 1;
pub const THETA0_STREAM: u64 = 3;
pub const X0_STREAM: u64 = 4;
pub const DRIFT_STREAM: u64 = 5;

pub const AIRCRAFT_STATIC: &str = include_str!("../configs/aircraft_static.toml");
pub const AIRCRAFT_DRIFTING: &str = include_str!("../configs/aircraft_drifting.toml");

/// Bundled configuration text by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "aircraft_static" => Some(AIRCRAFT_STATIC),
        "aircraft_drifting" => Some(AIRCRAFT_DRIFTING),
        _ => None,
    }
}

/// Matrix written as a list of rows.
pub type Rows = Vec<Vec<f64>>;

fn matrix(rows: &Rows, what: &str) -> Result<DenseMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a nonempty list of equal-length rows")));
    }
    Ok(DenseMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DenseMatrix) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantConfig {
    /// `ẋ = A x + B u`, discretized by zero-order hold with sample time `ts`.
    Continuous { a: Rows, b: Rows, ts: f64 },
    Discrete { a: Rows, b: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostConfig {
    /// `Q = GGᵀ/4`, `R = HHᵀ/2 + 0.1 I` with standard normal `G`, `H`.
    Random { seed: u64 },
    Explicit {
        q: Rows,
        r: Rows,
        /// Accept a semidefinite `Q`.
        #[serde(default)]
        psd: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoConfig {
    pub omega1: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    pub seed: u64,
    #[serde(default)]
    pub schedule: FrequencySchedule,
    /// Fixed `E` instead of a seeded draw; no richness requirement is enforced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Rows>,
}

fn default_amplitude() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Theta0Config {
    True,
    /// Gaussian noise of standard deviation `scale` on the nonzero entries.
    Perturbed { scale: f64, seed: u64 },
    Explicit { a: Rows, b: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum K0Config {
    /// Riccati gain of the initial estimate.
    #[default]
    Dare,
    Explicit { k: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum X0Config {
    Normal { mean: f64, std: f64, seed: u64 },
    Explicit { x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub horizon: usize,
    pub theta0: Theta0Config,
    #[serde(default)]
    pub k0: K0Config,
    pub x0: X0Config,
    #[serde(default)]
    pub stability_guard: StabilityGuard,
    #[serde(default = "default_cadence")]
    pub jstar_cadence: usize,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_cadence() -> usize {
    100
}

fn default_blowup() -> f64 {
    BLOWUP_BOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub t_mid: f64,
    pub alpha: f64,
    /// Noise level of the drift target when `theta_plus` is not given.
    pub sigma: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_plus: Option<PlusConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlusConfig {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_summary")]
    pub summary: String,
    /// Write every k-th row of the trajectory.
    #[serde(default = "default_decimate")]
    pub decimate: usize,
}

fn default_csv() -> String {
    "trajectory.csv".into()
}

fn default_summary() -> String {
    "summary.json".into()
}

fn default_decimate() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv: default_csv(),
            summary: default_summary(),
            decimate: default_decimate(),
        }
    }
}

/// Settings of the `verify` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub kappa: f64,
    /// Stepsize of the averaged system.
    pub gamma: f64,
    pub averaged_steps: usize,
    pub lemma_samples: usize,
    pub hss_samples: usize,
    pub pe_shifts: usize,
    /// Gramian window; 0 means `4 n_w`.
    pub pe_window: usize,
    pub seed: u64,
    pub residual_tol: f64,
    pub periodicity_tol: f64,
    pub min_r2: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            gamma: 5e-4,
            averaged_steps: 100_000,
            lemma_samples: 100,
            hss_samples: 10_000,
            pe_shifts: 50,
            pe_window: 0,
            seed: 1,
            residual_tol: 1e-8,
            periodicity_tol: 1e-9,
            min_r2: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub exo: ExoConfig,
    pub algo: AlgoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

/// Seeds in effect after overrides; `None` where the element is not random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub cost: Option<u64>,
    pub exo: Option<u64>,
    pub theta0: Option<u64>,
    pub x0: Option<u64>,
    pub drift: Option<u64>,
    pub verify: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a file, or a bundled configuration when `path` names one and no
    /// such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_toml(&text),
            Err(e) => match path.to_str().and_then(bundled) {
                Some(text) => Self::from_toml(text),
                None => Err(Error::Config(format!("cannot read {}: {e}", path.display()))),
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Replaces every seed in the file with `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        if let CostConfig::Random { seed: s } = &mut self.cost {
            *s = seed;
        }
        self.exo.seed = seed;
        if let Theta0Config::Perturbed { seed: s, .. } = &mut self.algo.theta0 {
            *s = seed;
        }
        if let X0Config::Normal { seed: s, .. } = &mut self.algo.x0 {
            *s = seed;
        }
        if let Some(d) = &mut self.drift {
            d.seed = seed;
        }
        self.verify.seed = seed;
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            cost: match self.cost {
                CostConfig::Random { seed } => Some(seed),
                CostConfig::Explicit { .. } => None,
            },
            exo: self.exo.e.is_none().then_some(self.exo.seed),
            theta0: match self.algo.theta0 {
                Theta0Config::Perturbed { seed, .. } => Some(seed),
                _ => None,
            },
            x0: match self.algo.x0 {
                X0Config::Normal { seed, .. } => Some(seed),
                X0Config::Explicit { .. } => None,
            },
            drift: self
                .drift
                .as_ref()
                .filter(|d| d.theta_plus.is_none())
                .map(|d| d.seed),
            verify: self.verify.seed,
        }
    }

    pub fn realize(&self) -> Result<Experiment> {
        Experiment::new(self.clone())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random cost of the bundled experiments.
pub fn random_cost(n: usize, m: usize, seed: u64) -> Result<CostSpec> {
    let mut rng = stream(seed, COST_STREAM);
    let g = DenseMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let h = DenseMatrix::from_fn(m, m, |_, _| StandardNormal.sample(&mut rng));
    CostSpec::new_psd(
        &g * g.transpose() / 4.0,
        &h * h.transpose() / 2.0 + DenseMatrix::identity(m, m) * 0.1,
    )
}

/// A configuration with all random elements drawn.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub theta_star: Theta,
    pub cost: CostSpec,
    pub exo: Exosystem,
    pub theta0: Theta,
    pub k0: Gain,
    pub x0: DenseVector,
    pub drift: Option<Drift>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let theta_star = match &config.plant {
            PlantConfig::Continuous { a, b, ts } => {
                if !(*ts > 0.0) || !ts.is_finite() {
                    return Err(Error::Config(format!("sample time must be positive, got {ts}")));
                }
                let (ad, bd) = zoh_discretize(&matrix(a, "plant.a")?, &matrix(b, "plant.b")?, *ts)?;
                Theta::from_ab(&ad, &bd)?
            }
            PlantConfig::Discrete { a, b } => {
                Theta::from_ab(&matrix(a, "plant.a")?, &matrix(b, "plant.b")?)?
            }
        };
        let n = theta_star.n();
        let m = theta_star.m();

        let cost = match &config.cost {
            CostConfig::Random { seed } => random_cost(n, m, *seed)?,
            CostConfig::Explicit { q, r, psd } => {
                let (q, r) = (matrix(q, "cost.q")?, matrix(r, "cost.r")?);
                if *psd {
                    CostSpec::new_psd(q, r)?
                } else {
                    CostSpec::new(q, r)?
                }
            }
        };
        cost.check_dims(&theta_star)?;

        let ex = &config.exo;
        let exo = match &ex.e {
            None => build_exosystem(n, m, ex.omega1, ex.amplitude, ex.seed, &ex.schedule)?,
            Some(rows) => {
                let e = matrix(rows, "exo.e")?;
                let q = e.ncols() / 2;
                if e.nrows() != m || e.ncols() % 2 != 0 {
                    return Err(Error::Config(format!(
                        "exo.e must have {m} rows and an even number of columns"
                    )));
                }
                let freqs = ex.schedule.block_frequencies(q, ex.omega1)?;
                Exosystem::from_parts(freqs, e, default_w0(q, ex.amplitude))?
            }
        };

        let al = &config.algo;
        let theta0 = match &al.theta0 {
            Theta0Config::True => theta_star.clone(),
            Theta0Config::Perturbed { scale, seed } => {
                perturb_nonzero(&theta_star, *scale, &mut stream(*seed, THETA0_STREAM))?
            }
            Theta0Config::Explicit { a, b } => {
                Theta::from_ab(&matrix(a, "algo.theta0.a")?, &matrix(b, "algo.theta0.b")?)?
            }
        };
        if theta0.value().shape() != theta_star.value().shape() {
            return Err(Error::Config("initial estimate and plant differ in shape".into()));
        }
        let k0 = match &al.k0 {
            K0Config::Dare => dare_solve(&theta0, &cost)?.1,
            K0Config::Explicit { k } => {
                let k = matrix(k, "algo.k0.k")?;
                if k.shape() != (m, n) {
                    return Err(Error::Config(format!("algo.k0.k must be {m}x{n}")));
                }
                Gain(k)
            }
        };
        let x0 = match &al.x0 {
            X0Config::Normal { mean, std, seed } => {
                sample_x0(n, *mean, *std, &mut stream(*seed, X0_STREAM))
            }
            X0Config::Explicit { x } => {
                if x.len() != n {
                    return Err(Error::Config(format!("algo.x0.x must have {n} entries")));
                }
                DenseVector::from_column_slice(x)
            }
        };

        let drift = match &config.drift {
            None => None,
            Some(d) => {
                let theta_plus = match &d.theta_plus {
                    Some(p) => Theta::from_ab(&matrix(&p.a, "drift.theta_plus.a")?, &matrix(&p.b, "drift.theta_plus.b")?)?,
                    None => perturb_nonzero(&theta_star, d.sigma, &mut stream(d.seed, DRIFT_STREAM))?,
                };
                Some(Drift {
                    theta_plus,
                    t_mid: d.t_mid,
                    alpha: d.alpha,
                })
            }
        };
        if config.output.decimate == 0 {
            return Err(Error::Config("output.decimate must be at least 1".into()));
        }

        let exp = Self {
            hash: config.hash(),
            config,
            theta_star,
            cost,
            exo,
            theta0,
            k0,
            x0,
            drift,
        };
        exp.sim_config().validate()?;
        Ok(exp)
    }

    pub fn sim_config(&self) -> SimConfig {
        let al = &self.config.algo;
        SimConfig {
            gamma: al.gamma,
            lambda: al.lambda,
            horizon: al.horizon,
            x0: self.x0.clone(),
            exo: self.exo.clone(),
            k0: self.k0.clone(),
            theta0: self.theta0.clone(),
            guard: al.stability_guard,
            jstar_cadence: al.jstar_cadence,
            blowup: al.blowup,
        }
    }

    /// Plant schedule; the drift block is ignored unless `drifting`.
    pub fn plant(&self, drifting: bool) -> Result<PlantSchedule> {
        match (&self.drift, drifting) {
            (Some(d), true) => PlantSchedule::drifting(self.theta_star.clone(), d.clone()),
            (None, true) => Err(Error::Config("no [drift] section in the configuration".into())),
            (_, false) => Ok(PlantSchedule::fixed(self.theta_star.clone())),
        }
    }
}
