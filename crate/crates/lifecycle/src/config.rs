//! Run configuration: one JSON document, coefficient tables as CSV files
//! next to it.

use std::fs;
use std::path::{Path, PathBuf};

use lifecycle_core::coef::{Coef, GridTable, TimeFn};
use lifecycle_core::dual::{PdeGrid, PsiBounds};
use lifecycle_core::market::{
    IncomeSpec, MarketParams, Model, MortalityCurve, PreferenceSpec, TimeGrid,
};
use lifecycle_core::put::{GuaranteeKind, GuaranteeSpec, PutConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is not valid: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("table for `{key}` not found at {path}")]
    MissingTable { key: String, path: PathBuf },
    #[error("table for `{key}` ({path}) is malformed: {reason}")]
    BadTable {
        key: String,
        path: PathBuf,
        reason: String,
    },
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

/// A coefficient of `(t, z)`: a number or a tagged form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSpec {
    Constant(f64),
    Form(CoefForm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefForm {
    Affine {
        intercept: f64,
        slope: f64,
    },
    Poly {
        coeffs: Vec<f64>,
    },
    Ou {
        speed: f64,
        mean: f64,
    },
    /// CSV with header `t,z,value` covering a full grid.
    Table {
        path: PathBuf,
    },
}

/// A deterministic function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeSpec {
    Constant(f64),
    Form(TimeForm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeForm {
    Gompertz {
        base: f64,
        growth: f64,
    },
    /// CSV with header `t,value`.
    Table {
        path: PathBuf,
    },
}

fn zero_coef() -> CoefSpec {
    CoefSpec::Constant(0.0)
}
fn zero_time() -> TimeSpec {
    TimeSpec::Constant(0.0)
}
fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub r: TimeSpec,
    pub alpha: CoefSpec,
    pub beta: CoefSpec,
    pub sigma: CoefSpec,
    pub gamma: CoefSpec,
    #[serde(default = "zero_coef")]
    pub eta: CoefSpec,
    pub lambda: TimeSpec,
    #[serde(default)]
    pub corr: f64,
    #[serde(default = "one")]
    pub s0: f64,
    #[serde(default)]
    pub z0: f64,
    pub x0: f64,
    #[serde(default = "ten")]
    pub growth_bound: f64,
    #[serde(default = "ten")]
    pub lipschitz_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MortalityBlock {
    pub mu: TimeSpec,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncomeBlock {
    pub ell: TimeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceBlock {
    pub rho: TimeSpec,
    #[serde(default)]
    pub kappa: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeBlock {
    pub n_t: usize,
    pub n_z: usize,
    pub psi_min: f64,
    pub psi_max: f64,
}

impl Default for PdeBlock {
    fn default() -> Self {
        let b = PsiBounds::default();
        PdeBlock {
            n_t: 200,
            n_z: 200,
            psi_min: b.min,
            psi_max: b.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBlock {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Default for McBlock {
    fn default() -> Self {
        McBlock {
            steps: 500,
            paths: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PutBlock {
    /// Defaults to `mc.paths`.
    pub paths: Option<usize>,
    pub seed: u64,
    pub exercise_stride: usize,
    pub basis_degree: usize,
    pub d_bins: usize,
    pub z_bins: usize,
    /// Fraction of `Y*` the quoted put is written on.
    pub rho: f64,
    pub bisection_tol: f64,
}

impl Default for PutBlock {
    fn default() -> Self {
        let c = PutConfig::default();
        PutBlock {
            paths: None,
            seed: c.seed,
            exercise_stride: c.exercise_stride,
            basis_degree: c.basis_degree,
            d_bins: c.d_bins,
            z_bins: c.z_bins,
            rho: 1.0,
            bisection_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GuaranteeName {
    #[default]
    Zero,
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuaranteeBlock {
    pub kind: GuaranteeName,
    pub r_g: TimeSpec,
    /// Guaranteed capital at time zero; defaults to `x0`.
    pub base: Option<f64>,
}

impl Default for GuaranteeBlock {
    fn default() -> Self {
        GuaranteeBlock {
            kind: GuaranteeName::Zero,
            r_g: zero_time(),
            base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// Paths written to the per-path CSV exports.
    pub export_paths: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { export_paths: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketBlock,
    pub mortality: MortalityBlock,
    pub income: IncomeBlock,
    pub preferences: PreferenceBlock,
    #[serde(default)]
    pub pde: PdeBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub put: PutBlock,
    #[serde(default)]
    pub guarantee: GuaranteeBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

/// A parsed configuration with every table loaded.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub model: Model,
    pub guarantee: GuaranteeSpec,
    /// Hex SHA-256 of the effective configuration and the table contents.
    pub hash: String,
}

impl Loaded {
    pub fn pde_grid(&self) -> PdeGrid {
        PdeGrid::around(&self.model, self.config.pde.n_t, self.config.pde.n_z)
    }

    pub fn psi_bounds(&self) -> Result<PsiBounds, ConfigError> {
        PsiBounds::new(self.config.pde.psi_min, self.config.pde.psi_max).map_err(|e| {
            ConfigError::Invalid {
                key: "pde.psi_min".into(),
                reason: e.to_string(),
            }
        })
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::new(self.model.horizon(), self.config.mc.steps).map_err(|e| {
            ConfigError::Invalid {
                key: "mc.steps".into(),
                reason: e.to_string(),
            }
        })
    }

    pub fn put_config(&self) -> PutConfig {
        let p = &self.config.put;
        PutConfig {
            n_paths: p.paths.unwrap_or(self.config.mc.paths),
            seed: p.seed,
            exercise_stride: p.exercise_stride,
            basis_degree: p.basis_degree,
            d_bins: p.d_bins,
            z_bins: p.z_bins,
        }
    }
}

pub fn load(path: &Path, overrides: Overrides) -> Result<Loaded, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    if let Some(seed) = overrides.seed {
        config.mc.seed = seed;
        config.put.seed = seed;
    }
    if let Some(n) = overrides.paths {
        config.mc.paths = n;
        config.put.paths = Some(n);
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_config(config, &dir)
}

/// Builds the model from an in-memory configuration; table paths are relative to `dir`.
pub fn from_config(config: RunConfig, dir: &Path) -> Result<Loaded, ConfigError> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&config).expect("config serialises"));
    let m = &config.market;
    let h = &mut hasher;
    let market = MarketParams {
        r: resolve_time("market.r", &m.r, dir, h)?,
        alpha: resolve_coef("market.alpha", &m.alpha, dir, h)?,
        beta: resolve_coef("market.beta", &m.beta, dir, h)?,
        sigma: resolve_coef("market.sigma", &m.sigma, dir, h)?,
        gamma: resolve_coef("market.gamma", &m.gamma, dir, h)?,
        eta: resolve_coef("market.eta", &m.eta, dir, h)?,
        lambda: resolve_time("market.lambda", &m.lambda, dir, h)?,
        corr_w1w2: m.corr,
        s0: m.s0,
        z0: m.z0,
        x0: m.x0,
        growth_bound: m.growth_bound,
        lipschitz_bound: m.lipschitz_bound,
    };
    if !(config.mortality.horizon > 0.0) {
        return Err(ConfigError::Invalid {
            key: "mortality.horizon".into(),
            reason: "must be positive".into(),
        });
    }
    let mortality = MortalityCurve {
        mu: resolve_time("mortality.mu", &config.mortality.mu, dir, h)?,
        horizon: config.mortality.horizon,
    };
    let income = IncomeSpec {
        ell: resolve_time("income.ell", &config.income.ell, dir, h)?,
    };
    let pr = &config.preferences;
    let prefs = PreferenceSpec::new(
        resolve_time("preferences.rho", &pr.rho, dir, h)?,
        pr.kappa,
        pr.delta,
    )
    .map_err(|e| ConfigError::Invalid {
        key: "preferences".into(),
        reason: e.to_string(),
    })?;
    let g = &config.guarantee;
    let guarantee = match g.kind {
        GuaranteeName::Zero => GuaranteeSpec::zero(),
        GuaranteeName::Rate => GuaranteeSpec {
            kind: GuaranteeKind::RateGuarantee,
            r_g: resolve_time("guarantee.r_g", &g.r_g, dir, h)?,
            base: g.base.unwrap_or(m.x0),
        },
    };
    let hash = hex(&hasher.finalize());
    Ok(Loaded {
        model: Model {
            market,
            mortality,
            income,
            prefs,
        },
        guarantee,
        config,
        hash,
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_table(
    key: &str,
    rel: &Path,
    dir: &Path,
    hasher: &mut Sha256,
) -> Result<(PathBuf, Vec<csv::StringRecord>), ConfigError> {
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|_| ConfigError::MissingTable {
        key: key.into(),
        path: path.clone(),
    })?;
    hasher.update(key.as_bytes());
    hasher.update(&bytes);
    let bad = |reason: String| ConfigError::BadTable {
        key: key.into(),
        path: path.clone(),
        reason,
    };
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let rows = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    Ok((path, rows))
}

fn parse_rows<const N: usize>(
    key: &str,
    path: &Path,
    rows: &[csv::StringRecord],
) -> Result<Vec<[f64; N]>, ConfigError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out = [0.0; N];
            if r.len() != N {
                return Err(ConfigError::BadTable {
                    key: key.into(),
                    path: path.to_path_buf(),
                    reason: format!("row {} has {} columns, expected {N}", i + 2, r.len()),
                });
            }
            for (k, cell) in r.iter().enumerate() {
                out[k] = cell.trim().parse().map_err(|_| ConfigError::BadTable {
                    key: key.into(),
                    path: path.to_path_buf(),
                    reason: format!("row {}: `{cell}` is not a number", i + 2),
                })?;
            }
            Ok(out)
        })
        .collect()
}

fn resolve_coef(
    key: &str,
    spec: &CoefSpec,
    dir: &Path,
    hasher: &mut Sha256,
) -> Result<Coef, ConfigError> {
    Ok(match spec {
        CoefSpec::Constant(c) => Coef::Constant(*c),
        CoefSpec::Form(CoefForm::Affine { intercept, slope }) => Coef::affine(*intercept, *slope),
        CoefSpec::Form(CoefForm::Poly { coeffs }) => Coef::Poly(coeffs.clone()),
        CoefSpec::Form(CoefForm::Ou { speed, mean }) => Coef::Ou {
            speed: *speed,
            mean: *mean,
        },
        CoefSpec::Form(CoefForm::Table { path }) => {
            let (full, rows) = read_table(key, path, dir, hasher)?;
            let rows = parse_rows::<3>(key, &full, &rows)?;
            let triples: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r[0], r[1], r[2])).collect();
            Coef::Table(
                GridTable::from_triples(&triples).map_err(|e| ConfigError::BadTable {
                    key: key.into(),
                    path: full,
                    reason: e.to_string(),
                })?,
            )
        }
    })
}

fn resolve_time(
    key: &str,
    spec: &TimeSpec,
    dir: &Path,
    hasher: &mut Sha256,
) -> Result<TimeFn, ConfigError> {
    Ok(match spec {
        TimeSpec::Constant(c) => TimeFn::Constant(*c),
        TimeSpec::Form(TimeForm::Gompertz { base, growth }) => TimeFn::Gompertz {
            base: *base,
            growth: *growth,
        },
        TimeSpec::Form(TimeForm::Table { path }) => {
            let (full, rows) = read_table(key, path, dir, hasher)?;
            let rows = parse_rows::<2>(key, &full, &rows)?;
            TimeFn::table(
                rows.iter().map(|r| r[0]).collect(),
                rows.iter().map(|r| r[1]).collect(),
            )
            .map_err(|e| ConfigError::BadTable {
                key: key.into(),
                path: full,
                reason: e.to_string(),
            })?
        }
    })
}

/// The reference desk configuration.
pub fn reference() -> RunConfig {
    RunConfig {
        market: MarketBlock {
            r: TimeSpec::Constant(0.03),
            alpha: CoefSpec::Constant(0.07),
            beta: CoefSpec::Constant(0.2),
            sigma: CoefSpec::Constant(0.1),
            gamma: CoefSpec::Constant(-0.1),
            eta: zero_coef(),
            lambda: TimeSpec::Constant(1.0),
            corr: 0.0,
            s0: 1.0,
            z0: 0.0,
            x0: 10.0,
            growth_bound: 10.0,
            lipschitz_bound: 10.0,
        },
        mortality: MortalityBlock {
            mu: TimeSpec::Constant(0.01),
            horizon: 10.0,
        },
        income: IncomeBlock {
            ell: TimeSpec::Constant(1.0),
        },
        preferences: PreferenceBlock {
            rho: TimeSpec::Constant(0.02),
            kappa: 0.05,
            delta: 0.5,
        },
        pde: PdeBlock::default(),
        mc: McBlock::default(),
        put: PutBlock::default(),
        guarantee: GuaranteeBlock::default(),
        output: OutputBlock::default(),
    }
}
