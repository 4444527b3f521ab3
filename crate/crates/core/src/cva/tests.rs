use super::*;
use crate::credit::{calibrate_entity, generate_credit_scenarios, pd_from_flat_spread};
use crate::curve::ZeroCurve;
use crate::factor::FactorModel;
use crate::grid::{build_time_grid, DensityRule};
use crate::market::{generate_market_scenarios, HullWhiteParams, MarketBump};
use crate::valuation::{
    value_cashflow_instrument, value_deal, Cashflow, CashflowInstrument, Deal, LsmConfig, VanillaSwap,
};
use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scale() -> TransitionMatrix {
    let q = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.9, 0.08, 0.015, 0.005, 0.05, 0.85, 0.08, 0.02, 0.01, 0.09, 0.8, 0.1, 0.0, 0.0, 0.0, 1.0,
        ],
    );
    TransitionMatrix::new(vec!["A".into(), "B".into(), "C".into(), "D".into()], q).unwrap()
}

fn live() -> Vec<String> {
    vec!["A".into(), "B".into(), "C".into()]
}

fn entity(name: &str, spread: f64, recovery: f64) -> CreditEntity {
    CreditEntity {
        name: name.into(),
        current_rating: "B".into(),
        pd_curve: pd_from_flat_spread(name, spread, recovery, &[1.0, 5.0]).unwrap(),
        recovery,
        credit_loadings: vec![0.0],
        fat_tail_df: None,
    }
}

fn set(ids: &[&str]) -> NettingSet {
    NettingSet {
        id: "ns".into(),
        counterparty: entity("cpty", 0.02, 0.4),
        self_entity: entity("bank", 0.01, 0.4),
        deal_ids: ids.iter().map(|s| s.to_string()).collect(),
        csa: CSATerms::default(),
    }
}

fn market(rate: f64, vol: f64, n: usize, step: f64) -> MarketScenarioSet {
    let params = HullWhiteParams::new(ZeroCurve::flat(rate), 0.05, vol).unwrap();
    let g = build_time_grid(5.0, &[], &DensityRule::uniform(step)).unwrap();
    generate_market_scenarios(&params, &g, n, 7, &FactorModel::independent(0)).unwrap()
}

fn credit(m: &MarketScenarioSet, ns: &NettingSet, oversample: usize) -> CreditScenarioSet {
    let ents = [ns.counterparty.clone(), ns.self_entity.clone()];
    let th: Vec<_> = ents
        .iter()
        .map(|e| calibrate_entity(e, &scale(), &m.grid).unwrap())
        .collect();
    generate_credit_scenarios(&ents, &th, &FactorModel::independent(2), m, oversample, 3).unwrap()
}

fn swap(id: &str, rate: f64, payer: bool) -> Deal {
    Deal::Swap(VanillaSwap {
        id: id.into(),
        notional: 100.0,
        fixed_rate: rate,
        payer,
        start: 0.0,
        maturity: 5.0,
        fixed_period: 0.5,
        float_period: 0.25,
        float_spread: 0.0,
    })
}

fn zero_bond(id: &str, pay: f64, amount: f64) -> CashflowInstrument {
    CashflowInstrument {
        id: id.into(),
        flows: vec![Cashflow::Fixed {
            start: pay,
            pay,
            amount,
        }],
    }
}

proptest! {
    #[test]
    fn exposure_is_bounded(v in -1e6f64..1e6, h in 0.0f64..1e6, own in any::<bool>()) {
        let flag = if own { -1.0 } else { 1.0 };
        let e = exposure_at_default(v, h, flag);
        prop_assert!(e >= 0.0 && e <= h);
        prop_assert!(e <= (flag * v).max(0.0));
        prop_assert_eq!(exposure_at_default(v, f64::INFINITY, flag), (flag * v).max(0.0));
    }

    #[test]
    fn forward_cva_monotone_in_pd_and_recovery(s in 0.001f64..0.05, ds in 0.0f64..0.02, r in 0.0f64..0.8, dr in 0.0f64..0.15) {
        let m = market(0.02, 0.01, 200, 0.25);
        let cube = value_deal(&swap("s", 0.02, true), &m, &LsmConfig::default()).unwrap();
        let own = PDTermStructure::riskless("own", 0.4);
        let cva = |s: f64, r: f64| {
            let pd = pd_from_flat_spread("c", s, r, &[1.0, 5.0]).unwrap();
            forward_cva(&cube, &m, &pd, &own).unwrap().cva
        };
        let base = cva(s, r);
        prop_assert!(cva(s + ds, r) >= base - 1e-12);
        let pd = pd_from_flat_spread("c", s, r, &[1.0, 5.0]).unwrap();
        let higher_r = PDTermStructure { recovery: r + dr, ..pd.clone() };
        let lower = forward_cva(&cube, &m, &higher_r, &own).unwrap().cva;
        prop_assert!(lower <= forward_cva(&cube, &m, &pd, &own).unwrap().cva + 1e-12);
    }
}

#[test]
fn threshold_serde_handles_infinity() {
    let mut csa = CSATerms::default();
    csa.rating_thresholds.insert("A".into(), Threshold(f64::INFINITY));
    csa.rating_thresholds.insert("B".into(), Threshold(5.0));
    let text = serde_json::to_string(&csa).unwrap();
    assert!(text.contains("\"inf\""));
    let back: CSATerms = serde_json::from_str(&text).unwrap();
    assert_eq!(back, csa);
    assert!(serde_json::from_str::<Threshold>("\"lots\"").is_err());
}

#[test]
fn csa_validation() {
    let mut csa = CSATerms::default();
    assert!(csa.validate(&live()).is_ok());
    csa.rating_thresholds.insert("A".into(), Threshold(1.0));
    csa.rating_thresholds.insert("B".into(), Threshold(2.0));
    assert!(csa.validate(&live()).is_err());
    csa.rating_thresholds.insert("B".into(), Threshold(-1.0));
    assert!(csa.validate(&live()).is_err());
    let mut csa = CSATerms::zero_threshold(&live());
    assert!(csa.validate(&live()).is_ok());
    csa.ate_rating = Some("Z".into());
    assert!(csa.validate(&live()).is_err());
}

#[test]
fn netting_sums_selected_deals() {
    let m = market(0.02, 0.01, 50, 0.25);
    let a = value_cashflow_instrument(&zero_bond("a", 5.0, 10.0), &m).unwrap();
    let b = value_cashflow_instrument(&zero_bond("b", 5.0, -4.0), &m).unwrap();
    let c = value_cashflow_instrument(&zero_bond("c", 5.0, 1000.0), &m).unwrap();
    let net = net_values(&[a.clone(), b.clone(), c], &set(&["a", "b"])).unwrap();
    for k in 0..net.values.len() {
        assert_abs_diff_eq!(net.values[k], a.values[k] + b.values[k], epsilon = 1e-12);
    }
    assert!(net_values(&[a], &set(&["a", "b"])).is_err());
}

#[test]
fn forward_single_cashflow_example() {
    let g = TimeGrid::from_times(vec![0.0, 1.0]).unwrap();
    let params = HullWhiteParams::new(ZeroCurve::flat(0.0), 0.05, 0.0).unwrap();
    let m = generate_market_scenarios(&params, &g, 4, 1, &FactorModel::independent(0)).unwrap();
    let cube = value_cashflow_instrument(&zero_bond("z", 1.0, 100.0), &m).unwrap();
    let cpty = PDTermStructure::new("c", vec![1.0], vec![0.1], 0.4).unwrap();
    let own = PDTermStructure::riskless("o", 0.4);
    let r = forward_cva(&cube, &m, &cpty, &own).unwrap();
    assert_abs_diff_eq!(r.cva, 6.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.dva, 0.0);
    assert_abs_diff_eq!(r.mc_standard_error, 0.0, epsilon = 1e-12);
}

#[test]
fn backward_matches_forward_for_deterministic_cashflow() {
    let m = market(0.03, 0.0, 3, 0.25);
    let cube = value_cashflow_instrument(&zero_bond("z", 5.0, 100.0), &m).unwrap();
    let mut ns = set(&["z"]);
    ns.counterparty = entity("cpty", 0.03, 0.4);
    let fwd = forward_cva(&cube, &m, &ns.counterparty.pd_curve, &ns.self_entity.pd_curve).unwrap();
    let cp = RatingMixture::single(&ns.counterparty, &m.grid);
    let own = RatingMixture::single(&ns.self_entity, &m.grid);
    let bwd = backward_cva(&cube, &ns, &m, &cp, &own, &BackwardConfig::default()).unwrap();
    let expected = 0.6 * ns.counterparty.pd_curve.pd_at(5.0) * 100.0 * (-0.03f64 * 5.0).exp();
    assert_abs_diff_eq!(fwd.cva, expected, epsilon = 1e-10);
    assert_abs_diff_eq!(bwd.cva, expected, epsilon = 1e-10);
    assert_abs_diff_eq!(bwd.dva, 0.0);
}

#[test]
fn backward_own_leg_mirrors_counterparty_leg() {
    let m = market(0.02, 0.01, 300, 0.25);
    let cube = value_deal(&swap("s", 0.02, true), &m, &LsmConfig::default()).unwrap();
    let mut flipped = cube.clone();
    flipped.values.iter_mut().for_each(|v| *v = -*v);
    let mut ns = set(&["s"]);
    ns.self_entity = entity("bank", 0.02, 0.4);
    let cp = RatingMixture::single(&ns.counterparty, &m.grid);
    let own = RatingMixture::single(&ns.self_entity, &m.grid);
    let cfg = BackwardConfig::default();
    let a = backward_cva(&cube, &ns, &m, &cp, &own, &cfg).unwrap();
    let b = backward_cva(&flipped, &ns, &m, &own, &cp, &cfg).unwrap();
    assert_abs_diff_eq!(a.cva, b.dva, epsilon = 1e-12);
    assert_abs_diff_eq!(a.dva, b.cva, epsilon = 1e-12);
}

#[test]
fn backward_rejects_missing_curve() {
    let m = market(0.02, 0.01, 10, 1.0);
    let cube = value_cashflow_instrument(&zero_bond("z", 5.0, 100.0), &m).unwrap();
    let ns = set(&["z"]);
    let mut cp = RatingMixture::single(&ns.counterparty, &m.grid);
    cp.curves.clear();
    let own = RatingMixture::single(&ns.self_entity, &m.grid);
    assert!(backward_cva(&cube, &ns, &m, &cp, &own, &BackwardConfig::default()).is_err());
    let by_rating: BTreeMap<String, PDTermStructure> = [("A".to_string(), ns.counterparty.pd_curve.clone())]
        .into_iter()
        .collect();
    assert!(RatingMixture::from_matrix(&ns.counterparty, &scale(), &by_rating, &m.grid).is_err());
}

#[test]
fn zero_thresholds_remove_all_exposure() {
    let m = market(0.02, 0.01, 200, 0.25);
    let cube = value_deal(&swap("s", 0.025, false), &m, &LsmConfig::default()).unwrap();
    let mut ns = set(&["s"]);
    ns.csa = CSATerms::zero_threshold(&live());
    let cr = credit(&m, &ns, 4);
    let r = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    assert_eq!((r.cva, r.dva), (0.0, 0.0));
    let cp = RatingMixture::single(&ns.counterparty, &m.grid);
    let own = RatingMixture::single(&ns.self_entity, &m.grid);
    let b = backward_cva(&cube, &ns, &m, &cp, &own, &BackwardConfig::default()).unwrap();
    assert_eq!((b.cva, b.dva), (0.0, 0.0));
}

#[test]
fn aggregate_agrees_with_forward_under_independence() {
    let m = market(0.02, 0.01, 2000, 0.25);
    let cube = value_deal(&swap("s", 0.015, true), &m, &LsmConfig::default()).unwrap();
    let ns = set(&["s"]);
    let cr = credit(&m, &ns, 10);
    let cfg = AggregateConfig {
        mode: DefaultMode::Unilateral,
    };
    let agg = aggregate_cva(&cube, &m, &cr, &ns, &cfg).unwrap();
    let fwd = forward_cva(&cube, &m, &ns.counterparty.pd_curve, &ns.self_entity.pd_curve).unwrap();
    let se = (agg.mc_standard_error.powi(2) + fwd.mc_standard_error.powi(2)).sqrt();
    assert!(
        (agg.cva - fwd.cva).abs() < 4.0 * se,
        "{} vs {} ± {se}",
        agg.cva,
        fwd.cva
    );
    let ftd = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    assert!(ftd.cva <= agg.cva && ftd.dva <= agg.dva);
}

#[test]
fn ate_and_put_terminate_paths() {
    let m = market(0.02, 0.01, 200, 0.25);
    let cube = value_deal(&swap("s", 0.01, true), &m, &LsmConfig::default()).unwrap();
    let mut ns = set(&["s"]);
    let cr = credit(&m, &ns, 2);
    let base = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    assert!(base.cva > 0.0);
    ns.csa.ate_rating = Some("A".into());
    let ate = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    // Only defaults in the first step escape the trigger.
    assert!(ate.cva > 0.0 && ate.cva < 0.2 * base.cva);
    ns.csa.ate_rating = None;
    ns.csa.mutual_put_dates = vec![0.5];
    let put = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    assert!(put.cva < base.cva);
    ns.csa.execution_barrier = 1e9;
    let unexecuted = aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).unwrap();
    assert_eq!(unexecuted.cva, base.cva);
    ns.csa.mutual_put_dates = vec![0.3];
    assert!(aggregate_cva(&cube, &m, &cr, &ns, &AggregateConfig::default()).is_err());
}

#[test]
fn aggregate_checks_provenance() {
    let m = market(0.02, 0.01, 100, 0.25);
    let cube = value_deal(&swap("s", 0.02, true), &m, &LsmConfig::default()).unwrap();
    let ns = set(&["s"]);
    let cr = credit(&m, &ns, 1);
    let params = HullWhiteParams::new(ZeroCurve::flat(0.02), 0.05, 0.01).unwrap();
    let other = generate_market_scenarios(&params, &m.grid, 100, 8, &FactorModel::independent(0)).unwrap();
    assert!(matches!(
        aggregate_cva(&cube, &other, &cr, &ns, &AggregateConfig::default()),
        Err(CvaError::ProvenanceMismatch(_))
    ));
    let coarse = market(0.02, 0.01, 100, 1.0);
    assert!(matches!(
        aggregate_cva(&cube, &coarse, &cr, &ns, &AggregateConfig::default()),
        Err(CvaError::GridMismatch(_))
    ));
}

#[test]
fn sequential_incrementals_sum_to_combined() {
    let m = market(0.02, 0.01, 300, 0.25);
    let ids = ["a", "b", "c"];
    let cubes: Vec<ValueCube> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| value_deal(&swap(id, 0.01 + 0.01 * k as f64, k % 2 == 0), &m, &LsmConfig::default()).unwrap())
        .collect();
    let ns = set(&ids);
    let cr = credit(&m, &ns, 3);
    let cfg = AggregateConfig::default();
    let mut sum = 0.0;
    for k in 0..cubes.len() {
        sum += incremental_cva(&cubes[..k], &cubes[k], &ns, &m, &cr, &cfg)
            .unwrap()
            .incremental_cva;
    }
    let combined = aggregate_cva(&net_values(&cubes, &ns).unwrap(), &m, &cr, &ns, &cfg).unwrap();
    assert_abs_diff_eq!(sum, combined.cva, epsilon = 1e-12);
}

#[test]
fn sweep_skips_infeasible_and_reproduces_base() {
    let m = market(0.02, 0.01, 300, 0.25);
    let cube = value_deal(&swap("s", 0.02, false), &m, &LsmConfig::default()).unwrap();
    let ns = set(&["s"]);
    let cr = credit(&m, &ns, 2);
    let cfg = AggregateConfig::default();
    let base = aggregate_cva(&cube, &m, &cr, &ns, &cfg).unwrap();
    let pts = wrong_way_sweep(&cube, &m, &cr, &ns, &[0.0, 1.5, 0.5], &cfg).unwrap();
    assert_eq!(pts[0].result.as_ref().unwrap().cva, base.cva);
    assert!(pts[1].result.is_none() && pts[1].diagnostic.is_some());
    assert!(pts[2].result.is_some());
}

#[test]
fn market_greek_zero_bump_is_zero() {
    let m = market(0.02, 0.01, 100, 0.25);
    let ns = set(&["s"]);
    let cr = credit(&m, &ns, 1);
    let inputs = MarketInputs {
        params: m.params.clone(),
        grid: m.grid.clone(),
        n_paths: m.n_paths,
        seed: m.seed,
        factors: m.factors.clone(),
    };
    let deals = [swap("s", 0.02, true)];
    let cfg = AggregateConfig::default();
    let g = market_greek(
        &deals,
        &ns,
        &inputs,
        &cr,
        MarketBump::default(),
        &LsmConfig::default(),
        &cfg,
    )
    .unwrap();
    assert_eq!(g.delta_total, 0.0);
    let up = MarketBump {
        curve_shift: 0.001,
        vol_shift: 0.0,
    };
    let g = market_greek(&deals, &ns, &inputs, &cr, up, &LsmConfig::default(), &cfg).unwrap();
    assert!(g.delta_cva > 0.0);
}

#[test]
fn cds_delta_is_positive_for_counterparty() {
    let m = market(0.02, 0.01, 200, 0.25);
    let cube = value_deal(&swap("s", 0.01, true), &m, &LsmConfig::default()).unwrap();
    let ns = set(&["s"]);
    let setup = CreditSetup {
        entities: vec![ns.counterparty.clone(), ns.self_entity.clone()],
        matrix: scale(),
        factors: FactorModel::independent(2),
        oversample: 2,
        seed: 3,
    };
    let cfg = AggregateConfig::default();
    let fwd = cds_delta(&cube, &m, &setup, &ns, "cpty", 0.001, false, &cfg).unwrap();
    let ctr = cds_delta(&cube, &m, &setup, &ns, "cpty", 0.001, true, &cfg).unwrap();
    assert!(fwd.delta > 0.0 && ctr.delta > 0.0);
    assert!(cds_delta(&cube, &m, &setup, &ns, "nobody", 0.001, false, &cfg).is_err());
}
