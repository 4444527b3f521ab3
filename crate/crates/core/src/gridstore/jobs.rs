use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{load_cube, save_cube, sidecars, write_atomic};
use crate::error::{invalid, CvaError, Result};
use crate::factor::FactorModel;
use crate::grid::TimeGrid;
use crate::market::{generate_market_scenarios, HullWhiteParams, MarketScenarioSet};
use crate::valuation::{value_deal, Deal, LsmConfig, ValueCube};

/// Everything needed to regenerate one market scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSetSpec {
    pub id: String,
    pub params: HullWhiteParams,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub factors: FactorModel,
}

impl ScenarioSetSpec {
    pub fn grid_hash(&self) -> u64 {
        self.grid.hash()
    }

    /// FNV-1a over the serialized model parameters and loadings.
    pub fn param_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&serde_json::to_vec(&self.params).expect("params serialize"));
        h.write(&serde_json::to_vec(&self.factors).expect("factors serialize"));
        h.finish()
    }

    pub fn generate(&self) -> Result<MarketScenarioSet> {
        generate_market_scenarios(&self.params, &self.grid, self.n_paths, self.seed, &self.factors)
    }

    pub fn descriptor(&self) -> ScenarioDescriptor {
        ScenarioDescriptor {
            id: self.id.clone(),
            grid_hash: self.grid_hash(),
            n_paths: self.n_paths,
            param_hash: self.param_hash(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub id: String,
    pub grid_hash: u64,
    pub n_paths: usize,
    pub param_hash: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: usize,
    pub deal_id: String,
    pub scenario_set: String,
    pub seed: u64,
    /// Output path relative to the manifest directory.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Pending,
    Done,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub deals: Vec<Deal>,
    pub scenario_sets: Vec<ScenarioSetSpec>,
    pub descriptors: Vec<ScenarioDescriptor>,
    #[serde(default)]
    pub lsm: LsmConfig,
    pub jobs: Vec<Job>,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One job per deal and scenario set.
pub fn plan_jobs(portfolio: &[Deal], scenario_sets: &[ScenarioSetSpec], lsm: &LsmConfig) -> Result<JobManifest> {
    if portfolio.is_empty() {
        return Err(invalid("portfolio is empty"));
    }
    if scenario_sets.is_empty() {
        return Err(invalid("no scenario sets to value on"));
    }
    let mut jobs = Vec::with_capacity(portfolio.len() * scenario_sets.len());
    for set in scenario_sets {
        for deal in portfolio {
            deal.validate()?;
            jobs.push(Job {
                id: jobs.len(),
                deal_id: deal.id().to_string(),
                scenario_set: set.id.clone(),
                seed: set.seed,
                output: format!("{}/{}.vs", file_stem(&set.id), file_stem(deal.id())),
            });
        }
    }
    let manifest = JobManifest {
        deals: portfolio.to_vec(),
        scenario_sets: scenario_sets.to_vec(),
        descriptors: scenario_sets.iter().map(ScenarioSetSpec::descriptor).collect(),
        lsm: lsm.clone(),
        jobs,
    };
    manifest.validate()?;
    Ok(manifest)
}

impl JobManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        if let Some(d) = self.deals.iter().find(|d| !ids.insert(d.id())) {
            return Err(invalid(format!("duplicate deal id {}", d.id())));
        }
        let mut set_ids = BTreeSet::new();
        if let Some(s) = self.scenario_sets.iter().find(|s| !set_ids.insert(s.id.as_str())) {
            return Err(invalid(format!("duplicate scenario set id {}", s.id)));
        }
        let mut outputs = BTreeSet::new();
        let mut pairs = BTreeSet::new();
        for (k, job) in self.jobs.iter().enumerate() {
            if job.id != k {
                return Err(invalid(format!("job {k} carries id {}", job.id)));
            }
            if !outputs.insert(job.output.as_str()) {
                return Err(invalid(format!("job output {} is not unique", job.output)));
            }
            if !pairs.insert((job.deal_id.as_str(), job.scenario_set.as_str())) {
                return Err(invalid(format!(
                    "deal {} appears twice on {}",
                    job.deal_id, job.scenario_set
                )));
            }
        }
        if pairs.len() != self.deals.len() * self.scenario_sets.len()
            || pairs.iter().any(|(d, s)| !ids.contains(d) || !set_ids.contains(s))
        {
            return Err(invalid("every deal must be valued exactly once on every scenario set"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn output_path(&self, dir: &Path, job: usize) -> PathBuf {
        dir.join(&self.jobs[job].output)
    }

    pub fn status(&self, dir: &Path, job: usize) -> JobStatus {
        let (ok, err) = sidecars(&self.output_path(dir, job));
        if let Ok(msg) = fs::read_to_string(&err) {
            JobStatus::Failed(msg.trim().to_string())
        } else if ok.exists() {
            JobStatus::Done
        } else {
            JobStatus::Pending
        }
    }

    fn scenario_spec(&self, id: &str) -> Result<&ScenarioSetSpec> {
        let spec = self
            .scenario_sets
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| invalid(format!("unknown scenario set {id}")))?;
        let expected = self
            .descriptors
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| invalid(format!("no descriptor for scenario set {id}")))?;
        if &spec.descriptor() != expected {
            return Err(CvaError::ProvenanceMismatch(format!(
                "scenario set {id} does not match its descriptor"
            )));
        }
        Ok(spec)
    }
}

fn execute(manifest: &JobManifest, job: &Job, dir: &Path, market: Option<&MarketScenarioSet>) -> Result<PathBuf> {
    let spec = manifest.scenario_spec(&job.scenario_set)?;
    if job.seed != spec.seed {
        return Err(CvaError::ProvenanceMismatch(
            "job seed differs from its scenario set".into(),
        ));
    }
    let deal = manifest
        .deals
        .iter()
        .find(|d| d.id() == job.deal_id)
        .ok_or_else(|| invalid(format!("unknown deal {}", job.deal_id)))?;
    let generated;
    let market = match market {
        Some(m) => m,
        None => {
            generated = spec.generate()?;
            &generated
        }
    };
    let cube = value_deal(deal, market, &manifest.lsm)?;
    let out = dir.join(&job.output);
    save_cube(&out, &cube)?;
    Ok(out)
}

fn run_with(manifest: &JobManifest, job: usize, dir: &Path, market: Option<&MarketScenarioSet>) -> Result<PathBuf> {
    let spec = manifest.jobs.get(job).ok_or_else(|| CvaError::Job {
        job,
        message: "no such job".into(),
    })?;
    let (ok, err) = sidecars(&dir.join(&spec.output));
    let _ = fs::remove_file(&ok);
    let _ = fs::remove_file(&err);
    match execute(manifest, spec, dir, market) {
        Ok(path) => {
            write_atomic(&ok, b"ok\n")?;
            Ok(path)
        }
        Err(e) => {
            let message = e.to_string();
            write_atomic(&err, format!("{message}\n").as_bytes())?;
            Err(CvaError::Job { job, message })
        }
    }
}

/// Values one job and writes its value store and `.ok`/`.err` sidecar.
/// Re-running a job rewrites an identical file.
pub fn run_job(manifest: &JobManifest, job: usize, dir: &Path) -> Result<PathBuf> {
    run_with(manifest, job, dir, None)
}

impl JobManifest {
    /// Runs the given jobs in order in this process, generating each
    /// scenario set once.
    pub fn run_serial(&self, jobs: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
        let mut markets: BTreeMap<&str, MarketScenarioSet> = BTreeMap::new();
        let mut out = Vec::with_capacity(jobs.len());
        let mut first_err = None;
        for &k in jobs {
            let set = self
                .jobs
                .get(k)
                .map(|j| j.scenario_set.as_str())
                .ok_or_else(|| CvaError::Job {
                    job: k,
                    message: "no such job".into(),
                })?;
            if !markets.contains_key(set) {
                match self.scenario_spec(set).and_then(ScenarioSetSpec::generate) {
                    Ok(m) => {
                        markets.insert(set, m);
                    }
                    Err(_) => {
                        let e = run_with(self, k, dir, None).unwrap_err();
                        first_err.get_or_insert(e);
                        continue;
                    }
                }
            }
            match run_with(self, k, dir, markets.get(set)) {
                Ok(p) => out.push(p),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// Loads the cubes of every deal valued on `scenario_set`, in portfolio order.
pub fn collect_cubes(manifest: &JobManifest, dir: &Path, scenario_set: &str) -> Result<Vec<ValueCube>> {
    let spec = manifest.scenario_spec(scenario_set)?;
    manifest
        .jobs
        .iter()
        .filter(|j| j.scenario_set == scenario_set)
        .map(|j| {
            match manifest.status(dir, j.id) {
                JobStatus::Done => {}
                JobStatus::Pending => {
                    return Err(CvaError::Job {
                        job: j.id,
                        message: "not run yet".into(),
                    });
                }
                JobStatus::Failed(message) => return Err(CvaError::Job { job: j.id, message }),
            }
            let cube = load_cube(&dir.join(&j.output), Some(spec.grid_hash()))?;
            if cube.n_paths != spec.n_paths || cube.seed != spec.seed || cube.id != j.deal_id {
                return Err(CvaError::ProvenanceMismatch(format!(
                    "{} does not hold deal {} on scenario set {scenario_set}",
                    j.output, j.deal_id
                )));
            }
            Ok(cube)
        })
        .collect()
}

const SPEC_FILE: &str = "scenario_set.json";

fn market_arrays(market: &MarketScenarioSet) -> Vec<(String, Vec<f64>)> {
    let k = market.factors.n_systematic;
    let mut out = vec![
        ("state".to_string(), market.state.clone()),
        ("short_rate".to_string(), market.short_rate.clone()),
        ("discount".to_string(), market.discount.clone()),
    ];
    for f in 0..k {
        let col = market
            .systematic_draws
            .iter()
            .skip(f)
            .step_by(k.max(1))
            .copied()
            .collect();
        out.push((format!("systematic_{f}"), col));
    }
    out
}

/// Writes the spec and every simulated array of `market` as value stores
/// under `dir`.
pub fn save_scenario_set(dir: &Path, id: &str, market: &MarketScenarioSet) -> Result<ScenarioSetSpec> {
    let spec = ScenarioSetSpec {
        id: id.to_string(),
        params: market.params.clone(),
        grid: market.grid.clone(),
        n_paths: market.n_paths,
        seed: market.seed,
        factors: market.factors.clone(),
    };
    for (name, values) in market_arrays(market) {
        let cube = ValueCube {
            id: name.clone(),
            grid: market.grid.clone(),
            n_paths: market.n_paths,
            seed: market.seed,
            values,
            exercise: None,
        };
        save_cube(&dir.join(format!("{name}.vs")), &cube)?;
    }
    write_atomic(&dir.join(SPEC_FILE), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    Ok(spec)
}

/// Reads a scenario set written by [`save_scenario_set`].
pub fn load_scenario_set(dir: &Path) -> Result<MarketScenarioSet> {
    let spec: ScenarioSetSpec = serde_json::from_str(&fs::read_to_string(dir.join(SPEC_FILE))?)?;
    let hash = spec.grid_hash();
    let load = |name: &str| -> Result<Vec<f64>> {
        let cube = load_cube(&dir.join(format!("{name}.vs")), Some(hash))?;
        if cube.n_paths != spec.n_paths || cube.seed != spec.seed {
            return Err(CvaError::ProvenanceMismatch(format!(
                "{name}.vs belongs to another scenario set"
            )));
        }
        Ok(cube.values)
    };
    let k = spec.factors.n_systematic;
    let cells = spec.grid.len() * spec.n_paths;
    let mut systematic_draws = vec![0.0; cells * k];
    for f in 0..k {
        for (c, v) in load(&format!("systematic_{f}"))?.into_iter().enumerate() {
            systematic_draws[c * k + f] = v;
        }
    }
    Ok(MarketScenarioSet {
        state: load("state")?,
        short_rate: load("short_rate")?,
        discount: load("discount")?,
        systematic_draws,
        grid: spec.grid,
        n_paths: spec.n_paths,
        seed: spec.seed,
        params: spec.params,
        factors: spec.factors,
    })
}
