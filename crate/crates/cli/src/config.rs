use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cvagrid_core::credit::{factor_model_for, CreditEntity, LmSettings, TransitionMatrix};
use cvagrid_core::curve::ZeroCurve;
use cvagrid_core::cva::{CreditSetup, DefaultMode};
use cvagrid_core::grid::{build_time_grid_tagged, DensityRule};
use cvagrid_core::gridstore::ScenarioSetSpec;
use cvagrid_core::io::{load_entities, parse_matrix, Portfolio};
use cvagrid_core::market::{shift_market_params, HullWhiteParams, MarketBump};
use cvagrid_core::valuation::LsmConfig;
use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::input_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    Forward,
    Backward,
    #[default]
    Aggregate,
    All,
}

/// Extra scenario set valued next to the base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSetConfig {
    pub id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub curve_shift: f64,
    #[serde(default)]
    pub vol_shift: f64,
}

fn d_paths() -> usize {
    1000
}
fn d_one() -> usize {
    1
}
fn d_seed() -> u64 {
    1
}
fn d_credit_seed() -> u64 {
    2
}
fn d_reversion() -> f64 {
    0.05
}
fn d_vol() -> f64 {
    0.01
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub curve: Option<PathBuf>,
    #[serde(default)]
    pub flat_rate: Option<f64>,
    pub portfolio: PathBuf,
    pub entities: PathBuf,
    #[serde(default)]
    pub matrix: Option<PathBuf>,
    #[serde(default = "d_paths")]
    pub n_paths: usize,
    #[serde(default = "d_one")]
    pub oversample: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_credit_seed")]
    pub credit_seed: u64,
    #[serde(default = "d_reversion")]
    pub mean_reversion: f64,
    #[serde(default = "d_vol")]
    pub volatility: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub grid: DensityRule,
    #[serde(default)]
    pub optimizer: LmSettings,
    #[serde(default)]
    pub lsm_degree: Option<usize>,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    #[serde(default = "d_one")]
    pub workers: usize,
    #[serde(default)]
    pub framework: Framework,
    #[serde(default)]
    pub mode: DefaultMode,
    #[serde(default)]
    pub scenario_sets: Vec<ScenarioSetConfig>,
}

/// Flag and environment overrides; set values win over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub credit_seed: Option<u64>,
    #[arg(long)]
    pub oversample: Option<usize>,
    #[arg(long, env = "CVAGRID_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, env = "CVAGRID_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub framework: Option<Framework>,
}

pub fn fnv_bytes(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Config plus everything it references, loaded and checked.
pub struct Loaded {
    pub config: RunConfig,
    pub portfolio: Portfolio,
    pub entities: Vec<CreditEntity>,
    pub matrix: Option<TransitionMatrix>,
    pub params: HullWhiteParams,
    /// FNV-1a of every input file, keyed by role.
    pub input_hashes: BTreeMap<String, String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.curve = config.curve.map(|p| resolve(base, &p));
        config.portfolio = resolve(base, &config.portfolio);
        config.entities = resolve(base, &config.entities);
        config.matrix = config.matrix.map(|p| resolve(base, &p));
        config.output_dir = resolve(base, &config.output_dir);
        if let Some(n) = overrides.n_paths {
            config.n_paths = n;
        }
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(s) = overrides.credit_seed {
            config.credit_seed = s;
        }
        if let Some(o) = overrides.oversample {
            config.oversample = o;
        }
        if let Some(d) = &overrides.out_dir {
            config.output_dir = d.clone();
        }
        if let Some(w) = overrides.workers {
            config.workers = w;
        }
        if let Some(f) = overrides.framework {
            config.framework = f;
        }
        let mut hashes = BTreeMap::new();
        hashes.insert("config".to_string(), format!("{:016x}", fnv_bytes(text.as_bytes())));
        config.into_loaded(hashes)
    }

    fn into_loaded(self, mut hashes: BTreeMap<String, String>) -> Result<Loaded> {
        if self.n_paths < 100 {
            bail!(input_error(format!(
                "n_paths must be at least 100, got {}",
                self.n_paths
            )));
        }
        if self.oversample == 0 || self.workers == 0 {
            bail!(input_error("oversample and workers must be at least 1"));
        }
        let mut read = |role: &str, p: &Path| -> Result<()> {
            let bytes = std::fs::read(p).map_err(|e| input_error(format!("{role} file {}: {e}", p.display())))?;
            hashes.insert(role.to_string(), format!("{:016x}", fnv_bytes(&bytes)));
            Ok(())
        };
        read("portfolio", &self.portfolio)?;
        read("entities", &self.entities)?;
        if let Some(m) = &self.matrix {
            read("matrix", m)?;
        }
        let curve = match (&self.curve, self.flat_rate) {
            (Some(p), None) => {
                read("curve", p)?;
                ZeroCurve::from_file(p)?
            }
            (None, Some(r)) => ZeroCurve::flat(r),
            _ => bail!(input_error("give exactly one of `curve` and `flat_rate`")),
        };
        let portfolio = Portfolio::from_file(&self.portfolio).context("portfolio")?;
        let entities = load_entities(&self.entities).context("entities")?;
        let matrix = match &self.matrix {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Some(parse_matrix(&text, &p.display().to_string())?)
            }
            None => None,
        };
        if let Some(m) = &matrix {
            for e in &entities {
                e.validate(&m.ratings)?;
            }
        }
        portfolio.netting_sets(&entities)?;
        let params = HullWhiteParams::new(curve, self.mean_reversion, self.volatility)?;
        let mut ids = std::collections::BTreeSet::from(["base".to_string()]);
        for s in &self.scenario_sets {
            if !ids.insert(s.id.clone()) {
                bail!(input_error(format!("duplicate scenario set {}", s.id)));
            }
        }
        Ok(Loaded {
            config: self,
            portfolio,
            entities,
            matrix,
            params,
            input_hashes: hashes,
        })
    }
}

impl Loaded {
    pub fn horizon(&self) -> f64 {
        self.config
            .horizon
            .unwrap_or_else(|| self.portfolio.deals.iter().map(|d| d.maturity()).fold(1.0, f64::max))
    }

    pub fn lsm(&self) -> LsmConfig {
        LsmConfig {
            degree: self.config.lsm_degree,
            ..LsmConfig::default()
        }
    }

    /// The base scenario set followed by the configured extra sets.
    pub fn scenario_specs(&self) -> Result<Vec<ScenarioSetSpec>> {
        let grid = build_time_grid_tagged(self.horizon(), &self.portfolio.event_dates(), &self.config.grid)?;
        let factors = factor_model_for(&self.entities)?;
        let base = ScenarioSetSpec {
            id: "base".into(),
            params: self.params.clone(),
            grid,
            n_paths: self.config.n_paths,
            seed: self.config.seed,
            factors,
        };
        let mut out = vec![base.clone()];
        for s in &self.config.scenario_sets {
            let bump = MarketBump {
                curve_shift: s.curve_shift,
                vol_shift: s.vol_shift,
            };
            out.push(ScenarioSetSpec {
                id: s.id.clone(),
                params: shift_market_params(&self.params, bump)?,
                seed: s.seed.unwrap_or(base.seed),
                ..base.clone()
            });
        }
        Ok(out)
    }

    pub fn credit_setup(&self) -> Result<CreditSetup> {
        let matrix = self
            .matrix
            .clone()
            .ok_or_else(|| input_error("this framework needs a transition `matrix` file in the config"))?;
        Ok(CreditSetup {
            factors: factor_model_for(&self.entities)?,
            entities: self.entities.clone(),
            matrix,
            oversample: self.config.oversample,
            seed: self.config.credit_seed,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.config.output_dir.join("manifest.json")
    }

    pub fn cube_dir(&self) -> PathBuf {
        self.config.output_dir.join("cubes")
    }

    pub fn scenario_dir(&self, id: &str) -> PathBuf {
        self.config.output_dir.join("scenarios").join(id)
    }
}
