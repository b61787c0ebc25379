mod common;

use proptest::prelude::*;
use rand::Rng;
use serial_risk::background::BackgroundField;
use serial_risk::baselines::{ablation_params, ablation_risk, nearest_neighbor_map};
use serial_risk::geo_grid::{GeoGrid, GeoPoint, Xy};
use serial_risk::kernel::{kernel_eval, kernel_grad, KernelOptions, KernelParams, TriggerInput};
use serial_risk::risk::{rank_true_cell, PriorHit, TriggerModel};
use serial_risk::scene::BackgroundSpec;

use common::{kappa, random_theta, rng, tiny};

#[test]
fn three_prior_risk_matches_naive_sum() {
    let t = tiny();
    let grid = t.scene.grid();
    let feats = t.scene.features();
    let model = TriggerModel::new(grid, feats, KernelOptions::default()).unwrap();
    let bg = t.scene.background_at(130.0, &BackgroundSpec::default(), None).unwrap();
    let mut r = rng(31);
    for _ in 0..20 {
        let theta = random_theta(&mut r, 2);
        let params = KernelParams::from_slice(&theta).unwrap();
        let priors: Vec<PriorHit> =
            (0..3).map(|_| PriorHit { cell: r.random_range(0..25), time: r.random_range(100.0..129.0) }).collect();
        for l in 0..grid.n_cells() {
            let mut want = bg.values()[l];
            for p in &priors {
                let (a, b) = (grid.center(l), grid.center(p.cell));
                let ds = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() / 1000.0;
                let dw: Vec<f64> = (0..2).map(|j| feats.row(l)[j] - feats.row(p.cell)[j]).collect();
                want += kappa(&theta, ds, 130.0 - p.time, &dw).0;
            }
            let got = model.risk_cell(&bg, &params, &priors, 130.0, l).unwrap();
            assert!((got - want).abs() <= 1e-12, "cell {l}: {got} vs {want}");
        }
    }
}

#[test]
fn nearest_neighbor_ranking_matches_exhaustive_search() {
    let grid = GeoGrid::new(GeoPoint::new(42.36, -71.14), GeoPoint::new(42.39, -71.10), 10, 10).unwrap();
    let mut r = rng(32);
    let b = *grid.bbox();
    let priors: Vec<GeoPoint> = (0..5)
        .map(|_| GeoPoint::new(r.random_range(b.min.lat..b.max.lat), r.random_range(b.min.lon..b.max.lon)))
        .collect();
    let xy: Vec<Xy> = priors.iter().map(|p| grid.project(p)).collect();
    let scores = nearest_neighbor_map(&grid, &xy).unwrap();

    let mut oracle: Vec<(f64, usize)> = (0..100)
        .map(|l| {
            let c = grid.center(l);
            let total: f64 = xy.iter().map(|p| (c.x - p.x).hypot(c.y - p.y)).sum();
            (total / 1000.0, l)
        })
        .collect();
    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ours: Vec<usize> = (0..100).collect();
    ours.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    assert_eq!(ours, oracle.iter().map(|x| x.1).collect::<Vec<_>>());
    for (l, (total, _)) in oracle.iter().map(|x| (x.1, x)) {
        assert!((scores[l] + total).abs() <= 1e-12);
    }
    for (pos, &(_, l)) in oracle.iter().enumerate() {
        assert_eq!(rank_true_cell(&scores, l).unwrap(), pos + 1);
    }
}

fn params_strategy() -> impl Strategy<Value = (Vec<f64>, f64, f64, Vec<f64>)> {
    (0usize..5).prop_flat_map(|j| {
        (
            (0.01..5.0f64, 0.01..5.0f64, prop::collection::vec(-3.0..3.0f64, j + 1)),
            0.0..10.0f64,
            0.0..100.0f64,
            prop::collection::vec(-3.0..3.0f64, j),
        )
            .prop_map(|((c, d, beta), ds, dt, dw)| {
                let mut theta = vec![c, d];
                theta.extend(beta);
                (theta, ds, dt, dw)
            })
    })
}

proptest! {
    #[test]
    fn kernel_matches_closed_form((theta, ds, dt, dw) in params_strategy()) {
        let params = KernelParams::from_slice(&theta).unwrap();
        let input = TriggerInput { ds, dt, dw: &dw };
        let (k, g) = kappa(&theta, ds, dt, &dw);
        let ours = kernel_eval(&params, &input, &KernelOptions::default()).unwrap();
        prop_assert!((ours - k).abs() <= 1e-12 * k.abs().max(1.0));
        let grad = kernel_grad(&params, &input, &KernelOptions::default()).unwrap();
        for (a, b) in grad.iter().zip(&g) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ablation_equals_unit_numerator_kernel(
        c in 0.01..5.0f64, d in 0.01..5.0f64, cells in prop::collection::vec(0usize..25, 0..4), t in 100.0..200.0f64,
    ) {
        let t0 = tiny();
        let grid = t0.scene.grid();
        let model = TriggerModel::new(grid, t0.scene.features(), KernelOptions::default()).unwrap();
        let bg = BackgroundField::uniform(25, t, 730.0, 100.0);
        let priors: Vec<PriorHit> = cells.iter().enumerate().map(|(i, &cell)| PriorHit { cell, time: t - 1.0 - i as f64 }).collect();
        let params = ablation_params(c, d, 2);
        for l in 0..25 {
            let a = ablation_risk(grid, c, d, &bg, &priors, t, l).unwrap();
            let b = model.risk_cell(&bg, &params, &priors, t, l).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn positive_prior_never_lowers_risk(seed in 0u64..1000, cell in 0usize..25) {
        let t0 = tiny();
        let model = TriggerModel::new(t0.scene.grid(), t0.scene.features(), KernelOptions::default()).unwrap();
        let bg = BackgroundField::uniform(25, 50.0, 730.0, 100.0);
        let params = KernelParams::new(1.0, 0.5, vec![2.0, 0.0, 0.0]).unwrap();
        let mut r = rng(seed);
        let before = vec![PriorHit { cell: r.random_range(0..25), time: 40.0 }];
        let mut after = before.clone();
        after.push(PriorHit { cell, time: 45.0 });
        let a = model.risk_map(&bg, &params, &before, 50.0).unwrap();
        let b = model.risk_map(&bg, &params, &after, 50.0).unwrap();
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| y >= x));
    }
}
