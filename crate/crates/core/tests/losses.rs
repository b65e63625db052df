use hubquery::losses::{consistency_loss, LossConfig};
use hubquery::rng::Rng;
use hubquery::{Tape, Tensor};
use proptest::prelude::*;

fn loss(vis: &Tensor, key: &Tensor, cfg: &LossConfig) -> f64 {
    let mut t = Tape::new();
    let (v, k) = (t.constant(vis.clone()), t.constant(key.clone()));
    let ids: Vec<u64> = (0..vis.rows() as u64).collect();
    let l = consistency_loss(&mut t, v, k, &ids, cfg).unwrap();
    t.scalar(l)
}

fn random(b: usize, d: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(b, d, (0..b * d).map(|_| rng.normal()).collect()).unwrap()
}

fn variant(include_positive: bool, bidirectional: bool, tau: f64) -> LossConfig {
    LossConfig {
        tau,
        include_positive,
        bidirectional,
        ..LossConfig::default()
    }
}

/// Unit vis rows whose first `b` coordinates are the similarities to the
/// basis keys `e_0..e_b`, with the last coordinate as slack.
fn sims_point(b: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let d = b + 1;
    let mut vis = vec![0.0; b * d];
    for i in 0..b {
        let bound = 0.9 / (b as f64).sqrt();
        let s: Vec<f64> = (0..b).map(|_| rng.uniform_range(-bound, bound)).collect();
        let used: f64 = s.iter().map(|x| x * x).sum();
        vis[i * d..i * d + b].copy_from_slice(&s);
        vis[i * d + b] = (1.0 - used).sqrt();
    }
    let mut key = vec![0.0; b * d];
    for k in 0..b {
        key[k * d + k] = 1.0;
    }
    (Tensor::matrix(b, d, vis).unwrap(), Tensor::matrix(b, d, key).unwrap())
}

/// Move sim(vis_i, key_i) by `delta` on the unit sphere, every other similarity fixed.
fn nudge(vis: &Tensor, i: usize, delta: f64) -> Tensor {
    let d = vis.cols();
    let mut data = vis.data().to_vec();
    let row = &mut data[i * d..(i + 1) * d];
    row[i] += delta;
    let used: f64 = row[..d - 1].iter().map(|x| x * x).sum();
    row[d - 1] = (1.0 - used).sqrt();
    Tensor::matrix(vis.rows(), d, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn common_row_permutation_is_invisible(
        b in 2..7usize,
        d in 1..6usize,
        pos in any::<bool>(),
        bi in any::<bool>(),
        tau in 0.1f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let (vis, key) = (random(b, d, &mut rng), random(b, d, &mut rng));
        let mut perm: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut perm);
        let take = |x: &Tensor| {
            Tensor::matrix(b, d, perm.iter().flat_map(|&r| x.row_slice(r).to_vec()).collect()).unwrap()
        };
        let cfg = variant(pos, bi, tau);
        prop_assert!((loss(&vis, &key, &cfg) - loss(&take(&vis), &take(&key), &cfg)).abs() < 1e-12);
    }

    #[test]
    fn positive_row_scaling_is_invisible(
        b in 2..7usize,
        d in 1..6usize,
        row in 0..7usize,
        scale in 1e-3f64..1e3,
        on_key in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let (vis, key) = (random(b, d, &mut rng), random(b, d, &mut rng));
        let row = row % b;
        let target = if on_key { &key } else { &vis };
        let mut data = target.data().to_vec();
        data[row * d..(row + 1) * d].iter_mut().for_each(|x| *x *= scale);
        let scaled = Tensor::matrix(b, d, data).unwrap();
        let cfg = LossConfig::default();
        let (v2, k2) = if on_key { (vis.clone(), scaled) } else { (scaled, key.clone()) };
        prop_assert!((loss(&vis, &key, &cfg) - loss(&v2, &k2, &cfg)).abs() < 1e-9);
    }

    #[test]
    fn raising_a_positive_similarity_lowers_the_loss(b in 2..7usize, tau in 0.2f64..2.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (vis, key) = sims_point(b, &mut rng);
        let i = rng.index(b);
        let cfg = variant(false, false, tau);
        let h = 1e-4;
        let slope = (loss(&nudge(&vis, i, h), &key, &cfg) - loss(&nudge(&vis, i, -h), &key, &cfg)) / (2.0 * h);
        prop_assert!(slope < 0.0, "slope {slope}");
        // the slope is exactly -1/(B τ) for the vis-anchored form
        prop_assert!((slope + 1.0 / (b as f64 * tau)).abs() < 1e-6);
    }

    #[test]
    fn standard_form_is_nonnegative(b in 2..7usize, d in 1..6usize, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (vis, key) = (random(b, d, &mut rng), random(b, d, &mut rng));
        prop_assert!(loss(&vis, &key, &variant(true, false, 1.0)) >= 0.0);
    }
}
