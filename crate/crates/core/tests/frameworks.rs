use cvagrid_core::credit::{
    calibrate_entity, generate_credit_scenarios, pd_from_flat_spread, CreditEntity, TransitionMatrix,
};
use cvagrid_core::curve::ZeroCurve;
use cvagrid_core::cva::*;
use cvagrid_core::factor::FactorModel;
use cvagrid_core::grid::{build_time_grid, DensityRule};
use cvagrid_core::market::{generate_market_scenarios, HullWhiteParams, MarketScenarioSet};
use cvagrid_core::valuation::{value_deal, BermudanSwaption, Deal, LsmConfig, VanillaSwap};
use nalgebra::DMatrix;

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

fn entity(name: &str, spread: f64, rho: f64) -> CreditEntity {
    CreditEntity {
        name: name.into(),
        current_rating: "B".into(),
        pd_curve: pd_from_flat_spread(name, spread, 0.4, &[1.0, 5.0, 10.0]).unwrap(),
        recovery: 0.4,
        credit_loadings: vec![rho],
        fat_tail_df: None,
    }
}

fn swap(id: &str, rate: f64, payer: bool, maturity: f64) -> Deal {
    Deal::Swap(VanillaSwap {
        id: id.into(),
        notional: 100.0,
        fixed_rate: rate,
        payer,
        start: 0.0,
        maturity,
        fixed_period: 0.5,
        float_period: 0.25,
        float_spread: 0.0,
    })
}

fn market(n: usize, horizon: f64, vol: f64) -> MarketScenarioSet {
    let params = HullWhiteParams::new(ZeroCurve::flat(0.03), 0.05, vol).unwrap();
    let g = build_time_grid(horizon, &[], &DensityRule::uniform(0.25)).unwrap();
    generate_market_scenarios(&params, &g, n, 2024, &FactorModel::independent(0)).unwrap()
}

fn swap_portfolio(n: usize) -> (MarketScenarioSet, NettingSet, Vec<cvagrid_core::valuation::ValueCube>) {
    let m = market(n, 10.0, 0.01);
    let deals = [
        swap("d1", 0.030, true, 5.0),
        swap("d2", 0.032, false, 10.0),
        swap("d3", 0.028, true, 7.0),
        swap("d4", 0.030, false, 3.0),
        swap("d5", 0.031, true, 10.0),
    ];
    let cubes: Vec<_> = deals
        .iter()
        .map(|d| value_deal(d, &m, &LsmConfig::default()).unwrap())
        .collect();
    let ns = NettingSet {
        id: "ns".into(),
        counterparty: entity("cpty", 0.015, 0.0),
        self_entity: entity("bank", 0.01, 0.0),
        deal_ids: deals.iter().map(|d| d.id().to_string()).collect(),
        csa: CSATerms::default(),
    };
    (m, ns, cubes)
}

#[test]
fn three_frameworks_agree_on_swap_portfolio() {
    let (m, ns, cubes) = swap_portfolio(3_000);
    let net = net_values(&cubes, &ns).unwrap();
    let fwd = forward_cva(&net, &m, &ns.counterparty.pd_curve, &ns.self_entity.pd_curve).unwrap();
    let cp = RatingMixture::single(&ns.counterparty, &m.grid);
    let own = RatingMixture::single(&ns.self_entity, &m.grid);
    let bwd = backward_cva(&net, &ns, &m, &cp, &own, &BackwardConfig::default()).unwrap();
    let ents = [ns.counterparty.clone(), ns.self_entity.clone()];
    let th: Vec<_> = ents
        .iter()
        .map(|e| calibrate_entity(e, &scale(), &m.grid).unwrap())
        .collect();
    let cr = generate_credit_scenarios(&ents, &th, &FactorModel::independent(2), &m, 10, 77).unwrap();
    let agg = aggregate_cva(
        &net,
        &m,
        &cr,
        &ns,
        &AggregateConfig {
            mode: DefaultMode::Unilateral,
        },
    )
    .unwrap();
    for (a, b) in [(&fwd, &bwd), (&fwd, &agg), (&bwd, &agg)] {
        let se = a.mc_standard_error.hypot(b.mc_standard_error);
        assert!((a.cva - b.cva).abs() < 3.0 * se, "{} vs {} ± {se}", a.cva, b.cva);
        let se = a.dva_standard_error.hypot(b.dva_standard_error);
        assert!((a.dva - b.dva).abs() < 3.0 * se, "{} vs {} ± {se}", a.dva, b.dva);
    }
    assert!(fwd.ee_profile.iter().chain(&fwd.ene_profile).all(|x| *x >= 0.0));
}

#[test]
fn aggregate_is_reproducible() {
    let (m, ns, cubes) = swap_portfolio(500);
    let net = net_values(&cubes, &ns).unwrap();
    let ents = [ns.counterparty.clone(), ns.self_entity.clone()];
    let th: Vec<_> = ents
        .iter()
        .map(|e| calibrate_entity(e, &scale(), &m.grid).unwrap())
        .collect();
    let cr = generate_credit_scenarios(&ents, &th, &FactorModel::independent(2), &m, 4, 9).unwrap();
    let cfg = AggregateConfig::default();
    let a = aggregate_cva(&net, &m, &cr, &ns, &cfg).unwrap();
    let b = aggregate_cva(&net, &m, &cr, &ns, &cfg).unwrap();
    assert_eq!(a.cva.to_bits(), b.cva.to_bits());
    assert_eq!(a.total.to_bits(), b.total.to_bits());
}

#[test]
fn exercise_boundary_falls_with_default_rate() {
    let m = market(2_000, 10.0, 0.01);
    let deal = BermudanSwaption {
        id: "b".into(),
        exercise_dates: (1..10).map(|k| k as f64).collect(),
        underlying: VanillaSwap {
            id: "u".into(),
            notional: 100.0,
            fixed_rate: 0.03,
            payer: false,
            start: 0.0,
            maturity: 10.0,
            fixed_period: 0.5,
            float_period: 0.25,
            float_spread: 0.0,
        },
        basis_degree: 2,
    };
    let pts = exercise_boundary_study(&deal, &m, &[0.0, 0.02], 0.4, &LsmConfig::default()).unwrap();
    let (b0, b2) = (pts[0].boundary.unwrap(), pts[1].boundary.unwrap());
    assert!(b2 <= b0, "{b0} -> {b2}");
    assert_eq!(pts[0].cva_blind, 0.0);
    assert!(pts[1].relative_impact < 0.02);
}

#[test]
fn wrong_way_raises_receiver_cva() {
    let m = market(20_000, 10.0, 0.015);
    let deal = swap("r", 0.03, false, 10.0);
    let cube = value_deal(&deal, &m, &LsmConfig::default()).unwrap();
    let ns = NettingSet {
        id: "ns".into(),
        counterparty: entity("cpty", 0.03, 0.0),
        self_entity: entity("bank", 0.0, 0.0),
        deal_ids: vec!["r".into()],
        csa: CSATerms::default(),
    };
    let ents = [ns.counterparty.clone(), ns.self_entity.clone()];
    let th: Vec<_> = ents
        .iter()
        .map(|e| calibrate_entity(e, &scale(), &m.grid).unwrap())
        .collect();
    let cr = generate_credit_scenarios(&ents, &th, &FactorModel::independent(2), &m, 1, 5).unwrap();
    let pts = wrong_way_sweep(&cube, &m, &cr, &ns, &[-0.5, 0.0, 0.5], &AggregateConfig::default()).unwrap();
    let cva: Vec<f64> = pts.iter().map(|p| p.result.as_ref().unwrap().cva).collect();
    assert!(cva[0] < cva[1] && cva[1] < cva[2], "{cva:?}");
    let target = ns.counterparty.pd_curve.pd_at(10.0);
    let se = (target * (1.0 - target) / cr.n_paths as f64).sqrt();
    for p in &pts {
        assert!((p.counterparty_default_rate.unwrap() - target).abs() < 3.0 * se);
    }
}
