use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use anyhow::{Context, Result};
use cvagrid_core::credit::CreditScenarioSet;
use cvagrid_core::cva::{
    aggregate_cva, backward_cva, cds_delta, exercise_boundary_study, forward_cva, incremental_cva, market_greek,
    net_values, wrong_way_sweep, AggregateConfig, BackwardConfig, CVAResult, MarketInputs, NettingSet, RatingMixture,
};
use cvagrid_core::gridstore::{collect_cubes, load_scenario_set, plan_jobs, save_scenario_set, JobManifest, JobStatus};
use cvagrid_core::io::format_profile;
use cvagrid_core::market::{MarketBump, MarketScenarioSet};
use cvagrid_core::valuation::{value_deal, Deal, ValueCube};
use cvagrid_core::{gridstore::write_atomic, CvaError};
use serde::Serialize;

use crate::config::{Framework, Loaded};
use crate::input_error;
use crate::report::{
    headers, num, print_results, print_table, write_json, Comparison, NettingSetReport, Provenance, RunReport,
};

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage {name} failed"))
}

pub fn gen_scenarios(loaded: &Loaded) -> Result<()> {
    stage("gen-scenarios", || {
        for spec in loaded.scenario_specs()? {
            let market = spec.generate()?;
            let dir = loaded.scenario_dir(&spec.id);
            std::fs::create_dir_all(&dir)?;
            save_scenario_set(&dir, &spec.id, &market)?;
            println!(
                "scenario set {}: {} paths x {} dates, grid hash {:016x}",
                spec.id,
                spec.n_paths,
                spec.grid.len(),
                spec.grid_hash()
            );
        }
        Ok(())
    })
}

pub fn value(loaded: &Loaded) -> Result<()> {
    stage("value", || {
        let manifest = plan_jobs(&loaded.portfolio.deals, &loaded.scenario_specs()?, &loaded.lsm())?;
        std::fs::create_dir_all(&loaded.config.output_dir)?;
        let path = loaded.manifest_path();
        manifest.save(&path)?;
        let dir = loaded.cube_dir();
        std::fs::create_dir_all(&dir)?;
        run_jobs(&manifest, &path, &dir, loaded.config.workers)?;
        println!(
            "{} jobs done on {} worker(s)",
            manifest.jobs.len(),
            loaded.config.workers
        );
        Ok(())
    })
}

/// Spreads the jobs round-robin over worker processes and checks every
/// job's sidecar afterwards.
pub fn run_jobs(manifest: &JobManifest, path: &Path, dir: &Path, workers: usize) -> Result<()> {
    let n = manifest.jobs.len();
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        manifest.run_serial(&(0..n).collect::<Vec<_>>(), dir)?;
        return Ok(());
    }
    let exe = std::env::current_exe().context("cannot locate the cvagrid executable")?;
    let mut children = Vec::with_capacity(workers);
    for w in 0..workers {
        let jobs: Vec<String> = (w..n).step_by(workers).map(|k| k.to_string()).collect();
        let child = Command::new(&exe)
            .arg("worker")
            .arg("--manifest")
            .arg(path)
            .arg("--dir")
            .arg(dir)
            .arg("--jobs")
            .arg(jobs.join(","))
            .spawn()
            .map_err(|e| CvaError::Job {
                job: w,
                message: format!("cannot start worker: {e}"),
            })?;
        children.push(child);
    }
    for mut c in children {
        c.wait()?;
    }
    let failed: Vec<String> = (0..n)
        .filter_map(|k| match manifest.status(dir, k) {
            JobStatus::Done => None,
            JobStatus::Pending => Some(format!("job {k}: no status written")),
            JobStatus::Failed(m) => Some(format!("job {k}: {m}")),
        })
        .collect();
    if let Some(first) = failed.first() {
        let job = first
            .trim_start_matches("job ")
            .split(':')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        return Err(CvaError::Job {
            job,
            message: format!("{} of {n} jobs failed; {}", failed.len(), failed.join("; ")),
        }
        .into());
    }
    Ok(())
}

pub fn worker(manifest: &Path, dir: &Path, jobs: &[usize]) -> Result<()> {
    let m = JobManifest::load(manifest)?;
    m.run_serial(jobs, dir)?;
    Ok(())
}

fn missing_base(loaded: &Loaded, what: &str) -> anyhow::Error {
    input_error(format!(
        "{what} missing under {}; run `cvagrid run` with this config first",
        loaded.config.output_dir.display()
    ))
    .into()
}

/// Stored market and the netting-set cubes of the base scenario set.
struct BaseRun {
    manifest: JobManifest,
    market: MarketScenarioSet,
    cubes: Vec<ValueCube>,
}

fn load_base(loaded: &Loaded) -> Result<BaseRun> {
    let path = loaded.manifest_path();
    if !path.exists() {
        return Err(missing_base(loaded, "job manifest"));
    }
    let manifest = JobManifest::load(&path)?;
    let dir = loaded.scenario_dir("base");
    if !dir.exists() {
        return Err(missing_base(loaded, "base scenario set"));
    }
    let market = load_scenario_set(&dir)?;
    let expected = loaded.scenario_specs()?.remove(0);
    let stored = manifest
        .scenario_sets
        .iter()
        .find(|s| s.id == "base")
        .ok_or_else(|| missing_base(loaded, "base scenario set in manifest"))?;
    if stored.descriptor() != expected.descriptor()
        || market.grid.hash() != expected.grid_hash()
        || market.seed != expected.seed
    {
        return Err(CvaError::ProvenanceMismatch(
            "stored artifacts were produced from a different configuration; rerun `cvagrid run`".into(),
        )
        .into());
    }
    let cube_dir = loaded.cube_dir();
    if (0..manifest.jobs.len()).any(|k| manifest.status(&cube_dir, k) != JobStatus::Done) {
        return Err(missing_base(loaded, "finished value cubes"));
    }
    let cubes = collect_cubes(&manifest, &cube_dir, "base")?;
    Ok(BaseRun {
        manifest,
        market,
        cubes,
    })
}

fn netting_sets(loaded: &Loaded, only: Option<&str>) -> Result<Vec<NettingSet>> {
    let all = loaded.portfolio.netting_sets(&loaded.entities)?;
    if all.is_empty() {
        return Err(input_error("the portfolio defines no netting sets").into());
    }
    match only {
        None => Ok(all),
        Some(id) => {
            let ns = all
                .into_iter()
                .find(|n| n.id == id)
                .ok_or_else(|| input_error(format!("unknown netting set {id}")))?;
            Ok(vec![ns])
        }
    }
}

fn provenance(loaded: &Loaded, manifest: &JobManifest, market: &MarketScenarioSet) -> Provenance {
    Provenance {
        market_seed: loaded.config.seed,
        credit_seed: loaded.config.credit_seed,
        n_paths: loaded.config.n_paths,
        oversample: loaded.config.oversample,
        grid_hash: format!("{:016x}", market.grid.hash()),
        scenario_sets: manifest.descriptors.clone(),
        input_hashes: loaded.input_hashes.clone(),
    }
}

fn aggregate_config(loaded: &Loaded) -> AggregateConfig {
    AggregateConfig {
        mode: loaded.config.mode,
    }
}

fn credit_for(loaded: &Loaded, market: &MarketScenarioSet) -> Result<CreditScenarioSet> {
    Ok(loaded.credit_setup()?.generate(market)?)
}

pub fn aggregate(loaded: &Loaded) -> Result<()> {
    stage("aggregate", || {
        let base = load_base(loaded)?;
        let sets = netting_sets(loaded, None)?;
        let fw = loaded.config.framework;
        let want = |f: Framework| fw == f || fw == Framework::All;
        let credit = if want(Framework::Aggregate) {
            Some(credit_for(loaded, &base.market)?)
        } else {
            None
        };
        let mut reports = Vec::new();
        for ns in &sets {
            let net = net_values(&base.cubes, ns)?;
            let mut results: BTreeMap<String, CVAResult> = BTreeMap::new();
            if want(Framework::Forward) {
                let r = forward_cva(&net, &base.market, &ns.counterparty.pd_curve, &ns.self_entity.pd_curve)?;
                results.insert("forward".into(), r);
            }
            if want(Framework::Backward) {
                let cp = RatingMixture::single(&ns.counterparty, &base.market.grid);
                let own = RatingMixture::single(&ns.self_entity, &base.market.grid);
                let r = backward_cva(&net, ns, &base.market, &cp, &own, &BackwardConfig::default())?;
                results.insert("backward".into(), r);
            }
            if let Some(c) = &credit {
                results.insert(
                    "aggregate".into(),
                    aggregate_cva(&net, &base.market, c, ns, &aggregate_config(loaded))?,
                );
            }
            let names: Vec<&String> = results.keys().collect();
            let mut comparison = Vec::new();
            for a in 0..names.len() {
                for b in a + 1..names.len() {
                    comparison.push(Comparison::new(
                        (names[a], &results[names[a]]),
                        (names[b], &results[names[b]]),
                    ));
                }
            }
            let primary = ["aggregate", "forward", "backward"]
                .iter()
                .find_map(|k| results.get(*k))
                .expect("at least one framework ran");
            write_atomic(
                &loaded
                    .config
                    .output_dir
                    .join(format!("profile_{}.csv", file_stem(&ns.id))),
                format_profile(primary).as_bytes(),
            )?;
            reports.push(NettingSetReport {
                id: ns.id.clone(),
                counterparty: ns.counterparty.name.clone(),
                deal_ids: ns.deal_ids.clone(),
                results,
                comparison,
            });
        }
        let report = RunReport {
            framework: serde_json::to_value(fw)?.as_str().unwrap_or_default().to_string(),
            mode: serde_json::to_value(loaded.config.mode)?
                .as_str()
                .unwrap_or_default()
                .to_string(),
            provenance: provenance(loaded, &base.manifest, &base.market),
            netting_sets: reports,
        };
        write_json(&loaded.config.output_dir.join("report.json"), &report)?;
        print_results(&report);
        Ok(())
    })
}

pub fn run(loaded: &Loaded) -> Result<()> {
    gen_scenarios(loaded)?;
    value(loaded)?;
    aggregate(loaded)
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

#[derive(Serialize)]
struct GreeksReport {
    provenance: Provenance,
    netting_sets: Vec<GreeksEntry>,
}

#[derive(Serialize)]
struct GreeksEntry {
    id: String,
    spread_deltas: Vec<cvagrid_core::cva::CdsDelta>,
    market: cvagrid_core::cva::MarketGreek,
}

pub fn greeks(
    loaded: &Loaded,
    only: Option<&str>,
    spread_bump: f64,
    curve_shift: f64,
    vol_shift: f64,
    central: bool,
) -> Result<()> {
    stage("greeks", || {
        let base = load_base(loaded)?;
        let setup = loaded.credit_setup()?;
        let credit = setup.generate(&base.market)?;
        let cfg = aggregate_config(loaded);
        let inputs = MarketInputs {
            params: base.market.params.clone(),
            grid: base.market.grid.clone(),
            n_paths: base.market.n_paths,
            seed: base.market.seed,
            factors: base.market.factors.clone(),
        };
        let bump = MarketBump { curve_shift, vol_shift };
        let mut entries = Vec::new();
        let mut rows = Vec::new();
        for ns in netting_sets(loaded, only)? {
            let net = net_values(&base.cubes, &ns)?;
            let mut spread_deltas = Vec::new();
            for name in [&ns.counterparty.name, &ns.self_entity.name] {
                let d = cds_delta(&net, &base.market, &setup, &ns, name, spread_bump, central, &cfg)?;
                rows.push(vec![
                    ns.id.clone(),
                    format!("spread {name}"),
                    num(d.base.total),
                    num(d.delta),
                ]);
                spread_deltas.push(d);
            }
            let m = market_greek(
                &loaded.portfolio.deals,
                &ns,
                &inputs,
                &credit,
                bump,
                &loaded.lsm(),
                &cfg,
            )?;
            rows.push(vec![
                ns.id.clone(),
                "market bump".into(),
                num(m.base.total),
                num(m.delta_total),
            ]);
            entries.push(GreeksEntry {
                id: ns.id.clone(),
                spread_deltas,
                market: m,
            });
        }
        write_json(
            &loaded.config.output_dir.join("greeks.json"),
            &GreeksReport {
                provenance: provenance(loaded, &base.manifest, &base.market),
                netting_sets: entries,
            },
        )?;
        print_table(&headers(&["netting set", "sensitivity", "base total", "delta"]), &rows);
        Ok(())
    })
}

/// Netting set `id` of the portfolio, or a new empty one between `parties`.
fn target_set(loaded: &Loaded, id: &str, parties: Option<(String, String)>) -> Result<NettingSet> {
    let existing = loaded
        .portfolio
        .netting_sets(&loaded.entities)?
        .into_iter()
        .find(|n| n.id == id);
    match (existing, parties) {
        (Some(_), Some(_)) => {
            Err(input_error(format!("netting set {id} already exists; drop --counterparty/--self")).into())
        }
        (Some(ns), None) => Ok(ns),
        (None, Some((cpty, own))) => {
            let find = |name: &str| {
                loaded
                    .entities
                    .iter()
                    .find(|e| e.name == name)
                    .cloned()
                    .ok_or_else(|| input_error(format!("unknown entity {name}")))
            };
            Ok(NettingSet {
                id: id.to_string(),
                counterparty: find(&cpty)?,
                self_entity: find(&own)?,
                deal_ids: Vec::new(),
                csa: Default::default(),
            })
        }
        (None, None) => Err(input_error(format!(
            "unknown netting set {id}; pass --counterparty and --self to start a new one"
        ))
        .into()),
    }
}

pub fn incremental(
    loaded: &Loaded,
    deal_path: &Path,
    netting_set: &str,
    parties: Option<(String, String)>,
) -> Result<()> {
    stage("incremental", || {
        let text = std::fs::read_to_string(deal_path)
            .map_err(|e| input_error(format!("cannot read {}: {e}", deal_path.display())))?;
        let deal: Deal =
            serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", deal_path.display())))?;
        deal.validate()?;
        let base = load_base(loaded)?;
        let mut ns = target_set(loaded, netting_set, parties)?;
        let saved: Vec<ValueCube> = base
            .cubes
            .iter()
            .filter(|c| ns.deal_ids.contains(&c.id))
            .cloned()
            .collect();
        let cube = value_deal(&deal, &base.market, &loaded.lsm())?;
        let credit = credit_for(loaded, &base.market)?;
        ns.deal_ids.push(deal.id().to_string());
        let r = incremental_cva(&saved, &cube, &ns, &base.market, &credit, &aggregate_config(loaded))?;
        #[derive(Serialize)]
        struct Out<'a> {
            provenance: Provenance,
            netting_set: &'a str,
            deal: &'a str,
            result: &'a cvagrid_core::cva::IncrementalCva,
        }
        write_json(
            &loaded.config.output_dir.join("incremental.json"),
            &Out {
                provenance: provenance(loaded, &base.manifest, &base.market),
                netting_set,
                deal: deal.id(),
                result: &r,
            },
        )?;
        print_table(
            &headers(&[
                "netting set",
                "CVA before",
                "CVA after",
                "incremental CVA",
                "incremental total",
            ]),
            &[vec![
                ns.id.clone(),
                num(r.before.cva),
                num(r.after.cva),
                num(r.incremental_cva),
                num(r.incremental_total),
            ]],
        );
        Ok(())
    })
}

pub fn wrongway(loaded: &Loaded, only: Option<&str>, correlations: &[f64]) -> Result<()> {
    stage("wrongway", || {
        let base = load_base(loaded)?;
        let credit = credit_for(loaded, &base.market)?;
        let cfg = aggregate_config(loaded);
        let mut out = BTreeMap::new();
        let mut rows = Vec::new();
        for ns in netting_sets(loaded, only)? {
            let net = net_values(&base.cubes, &ns)?;
            let pts = wrong_way_sweep(&net, &base.market, &credit, &ns, correlations, &cfg)?;
            for p in &pts {
                let (cva, se) = p
                    .result
                    .as_ref()
                    .map_or(("-".into(), "-".into()), |r| (num(r.cva), num(r.mc_standard_error)));
                rows.push(vec![
                    ns.id.clone(),
                    format!("{:+.3}", p.correlation),
                    cva,
                    se,
                    p.counterparty_default_rate.map_or("-".into(), num),
                    p.diagnostic.clone().unwrap_or_default(),
                ]);
            }
            out.insert(ns.id.clone(), pts);
        }
        #[derive(Serialize)]
        struct Out {
            provenance: Provenance,
            netting_sets: BTreeMap<String, Vec<cvagrid_core::cva::SweepPoint>>,
        }
        write_json(
            &loaded.config.output_dir.join("wrongway.json"),
            &Out {
                provenance: provenance(loaded, &base.manifest, &base.market),
                netting_sets: out,
            },
        )?;
        print_table(&headers(&["netting set", "rho", "CVA", "SE", "cpty PD", "note"]), &rows);
        Ok(())
    })
}

pub fn boundary(loaded: &Loaded, deal_id: &str, rates: &[f64], recovery: f64) -> Result<()> {
    stage("boundary", || {
        let deal = match loaded.portfolio.deals.iter().find(|d| d.id() == deal_id) {
            Some(Deal::Bermudan(b)) => b.clone(),
            Some(_) => return Err(input_error(format!("deal {deal_id} is not a Bermudan swaption")).into()),
            None => return Err(input_error(format!("unknown deal {deal_id}")).into()),
        };
        let base = load_base(loaded)?;
        let pts = exercise_boundary_study(&deal, &base.market, rates, recovery, &loaded.lsm())?;
        #[derive(Serialize)]
        struct Out<'a> {
            provenance: Provenance,
            deal: &'a str,
            recovery: f64,
            points: &'a [cvagrid_core::cva::BoundaryPoint],
        }
        write_json(
            &loaded.config.output_dir.join("boundary.json"),
            &Out {
                provenance: provenance(loaded, &base.manifest, &base.market),
                deal: deal_id,
                recovery,
                points: &pts,
            },
        )?;
        let rows: Vec<Vec<String>> = pts
            .iter()
            .map(|p| {
                vec![
                    format!("{:.2}%", p.default_rate * 100.0),
                    p.boundary.map_or("-".into(), |b| format!("{:.4}%", b * 100.0)),
                    num(p.cva_blind),
                    num(p.cva_aware),
                    format!("{:.3}%", p.relative_impact * 100.0),
                ]
            })
            .collect();
        print_table(
            &headers(&["default rate", "boundary", "CVA blind", "CVA aware", "impact"]),
            &rows,
        );
        Ok(())
    })
}
