//! Small fixtures and straight-line reference computations shared by the
//! integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serial_risk::events::{CrimeInstance, EventStore};
use serial_risk::geo_grid::{FeatureMatrix, GeoGrid, GeoPoint};
use serial_risk::scene::{BackgroundSpec, Scene};
use serial_risk::trainer::TrainingSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn crime(grid: &GeoGrid, id: &str, lat: f64, lon: f64, time: f64, series: u32) -> CrimeInstance {
    let location = GeoPoint::new(lat, lon);
    CrimeInstance { id: id.into(), location, time, series, cell: grid.locate(&location).unwrap() }
}

pub fn random_point<R: Rng>(rng: &mut R, grid: &GeoGrid) -> (f64, f64) {
    let b = grid.bbox();
    (rng.random_range(b.min.lat..b.max.lat), rng.random_range(b.min.lon..b.max.lon))
}

/// Two series of three crimes on a 5 x 5 grid with two features, plus a few
/// singletons feeding the background.
pub struct Tiny {
    pub scene: Scene,
    pub store: EventStore,
    pub set: TrainingSet,
}

pub fn tiny() -> Tiny {
    let grid = GeoGrid::new(GeoPoint::new(42.0, -71.0), GeoPoint::new(42.01, -70.99), 5, 5).unwrap();
    let mut r = rng(11);
    let values: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
    let features = FeatureMatrix::new(vec!["a".into(), "b".into()], 25, values).unwrap();
    let mut crimes = Vec::new();
    for (p, times) in [(1, [100.0, 104.0, 111.0]), (2, [102.0, 107.5, 115.0])] {
        for (k, t) in times.iter().enumerate() {
            let (lat, lon) = random_point(&mut r, &grid);
            crimes.push(crime(&grid, &format!("s{p}_{k}"), lat, lon, *t, p));
        }
    }
    for i in 0..15 {
        let (lat, lon) = random_point(&mut r, &grid);
        crimes.push(crime(&grid, &format!("bg{i}"), lat, lon, 40.0 + 5.0 * i as f64, 0));
    }
    let store = EventStore::from_crimes(crimes).unwrap();
    let scene = Scene::new(grid, &features, &store).unwrap();
    let set = TrainingSet::build(&scene, &store, &BackgroundSpec::default()).unwrap();
    Tiny { scene, store, set }
}

fn dist_km(grid: &GeoGrid, a: usize, b: usize) -> f64 {
    let (p, q) = (grid.center(a), grid.center(b));
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() / 1000.0
}

/// Kernel and its gradient in `[c, d, b0, ..]` order, written out directly.
pub fn kappa(theta: &[f64], ds: f64, dt: f64, dw: &[f64]) -> (f64, Vec<f64>) {
    let (c, d) = (theta[0], theta[1]);
    let mut num = theta[2];
    for j in 0..dw.len() {
        num += theta[3 + j] * dw[j];
    }
    let den = (dt + c).powi(2) * (ds + d).powi(2);
    let k = num / den;
    let mut g = vec![0.0; theta.len()];
    g[0] = -2.0 * num / ((dt + c).powi(3) * (ds + d).powi(2));
    g[1] = -2.0 * num / ((dt + c).powi(2) * (ds + d).powi(3));
    g[2] = 1.0 / den;
    for j in 0..dw.len() {
        g[3 + j] = dw[j] / den;
    }
    (k, g)
}

/// Hinge objective and its subgradient by looping over series, crimes and
/// cells. Backgrounds are read from the training set by crime id.
pub fn brute_objective(t: &Tiny, theta: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let grid = t.scene.grid();
    let feats = t.scene.features();
    let n = grid.n_cells();
    let mut total = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for p in t.store.series_ids().collect::<Vec<_>>() {
        let crimes = t.store.series(p);
        for target in &crimes {
            let priors: Vec<_> = crimes.iter().filter(|c| c.time < target.time).collect();
            if priors.is_empty() {
                continue;
            }
            let now = priors.iter().map(|c| c.time).fold(f64::MIN, f64::max) + 1.0;
            let mu = t
                .set
                .groups()
                .iter()
                .flatten()
                .find(|x| x.crime_id == target.id)
                .unwrap()
                .background
                .values()
                .to_vec();
            let risk = |l: usize| {
                let mut r = mu[l];
                let mut g = vec![0.0; theta.len()];
                for prior in &priors {
                    let dw: Vec<f64> =
                        feats.row(l).iter().zip(feats.row(prior.cell)).map(|(a, b)| a - b).collect();
                    let (k, kg) = kappa(theta, dist_km(grid, l, prior.cell), now - prior.time, &dw);
                    r += k;
                    for (a, b) in g.iter_mut().zip(kg) {
                        *a += b;
                    }
                }
                (r, g)
            };
            let (r_star, g_star) = risk(target.cell);
            for l in 0..n {
                if l == target.cell {
                    continue;
                }
                let (r_l, g_l) = risk(l);
                if r_l > r_star {
                    total += r_l - r_star;
                    for k in 0..grad.len() {
                        grad[k] += g_l[k] - g_star[k];
                    }
                }
            }
        }
    }
    for j in 3..theta.len() {
        total += lambda * theta[j] * theta[j];
        grad[j] += 2.0 * lambda * theta[j];
    }
    (total, grad)
}

pub fn random_theta<R: Rng>(rng: &mut R, n_features: usize) -> Vec<f64> {
    let mut theta = vec![rng.random_range(0.05..3.0), rng.random_range(0.05..3.0)];
    theta.extend((0..=n_features).map(|_| rng.random_range(-2.0..2.0)));
    theta
}
