use hubquery::data::{generate, Labels, SyntheticConfig, TaskMode, VideoRecord};
use hubquery::model::{predict, KeypointInput, Model, ModelConfig};
use hubquery::Tensor;
use proptest::prelude::*;

fn config(mode: TaskMode, raw: bool) -> ModelConfig {
    ModelConfig {
        dim: 4,
        classes: 3,
        hidden: 5,
        mode,
        keypoints: if raw { KeypointInput::Raw } else { KeypointInput::Embedded },
        keypoint_hidden: 5,
        ..ModelConfig::default()
    }
}

fn video(mode: TaskMode, raw: bool, clips: usize, actors: usize, seed: u64) -> VideoRecord {
    generate(&SyntheticConfig {
        seed,
        videos: 1,
        clips,
        actors,
        tokens: 3,
        dim: 4,
        classes: 3,
        mode,
        raw_keypoints: raw,
        actor_correlation: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .remove(0)
}

/// Reorder axis 1 of a `T×N×K` tensor: new actor `j` is old actor `perm[j]`.
fn permute_actors(x: &Tensor, perm: &[usize]) -> Tensor {
    let [t, n, k] = [x.dims()[0], x.dims()[1], x.dims()[2]];
    let mut out = Vec::with_capacity(x.len());
    for c in 0..t {
        for &i in perm {
            let off = (c * n + i) * k;
            out.extend_from_slice(&x.data()[off..off + k]);
        }
    }
    Tensor::new(&[t, n, k], out).unwrap()
}

fn relabel(v: &VideoRecord, perm: &[usize]) -> VideoRecord {
    VideoRecord {
        id: v.id.clone(),
        context: v.context.clone(),
        vis: permute_actors(&v.vis, perm),
        key: permute_actors(&v.key, perm),
        labels: match &v.labels {
            Labels::Stal(y) => Labels::Stal(permute_actors(y, perm)),
            Labels::Gar(g) => Labels::Gar(*g),
        },
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    hubquery::rng::Rng::new(seed).shuffle(&mut p);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn group_scores_ignore_actor_order(actors in 1..5usize, clips in 1..5usize, raw in any::<bool>(), seed in any::<u64>()) {
        let model = Model::init(config(TaskMode::Gar, raw), seed).unwrap();
        let v = video(TaskMode::Gar, raw, clips, actors, seed);
        let a = predict(&model, &v).unwrap();
        let b = predict(&model, &relabel(&v, &permutation(actors, seed ^ 1))).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn relabeling_actors_permutes_their_scores(actors in 1..5usize, clips in 1..5usize, seed in any::<u64>()) {
        let model = Model::init(config(TaskMode::Stal, false), seed).unwrap();
        let v = video(TaskMode::Stal, false, clips, actors, seed);
        let perm = permutation(actors, seed ^ 2);
        let a = predict(&model, &v).unwrap();
        let b = predict(&model, &relabel(&v, &perm)).unwrap();
        for t in 0..clips {
            for (j, &i) in perm.iter().enumerate() {
                let (ra, rb) = (a.row_slice(t * actors + i), b.row_slice(t * actors + j));
                prop_assert!(ra.iter().zip(rb).all(|(x, y)| (x - y).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn temporal_switch_is_inert_without_neighbours(actors in 1..4usize, gar in any::<bool>(), seed in any::<u64>()) {
        let mode = if gar { TaskMode::Gar } else { TaskMode::Stal };
        let on = Model::init(config(mode, false), seed).unwrap();
        let mut off = on.clone();
        off.cfg.flags.use_temporal = false;
        let v = video(mode, false, 1, actors, seed);
        prop_assert_eq!(predict(&on, &v).unwrap(), predict(&off, &v).unwrap());
    }

    #[test]
    fn stage_output_width_matches_input(depth in 1..3usize, seed in any::<u64>()) {
        let cfg = ModelConfig { depth, ..config(TaskMode::Stal, false) };
        let model = Model::init(cfg, seed).unwrap();
        let v = video(TaskMode::Stal, false, 3, 2, seed);
        let scores = predict(&model, &v).unwrap();
        prop_assert_eq!((scores.rows(), scores.cols()), (6, 3));
        prop_assert!(scores.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
