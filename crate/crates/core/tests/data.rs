use std::fs;

use hubquery::data::{class_frequencies, generate, load_manifest, save_dataset, DataSpec, SyntheticConfig, TaskMode};
use hubquery::Error;
use proptest::prelude::*;

fn small(seed: u64, mode: TaskMode, raw: bool) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        videos: 3,
        clips: 3,
        actors: 2,
        tokens: 2,
        dim: 4,
        classes: 3,
        mode,
        raw_keypoints: raw,
        ..SyntheticConfig::default()
    }
}

fn mode_strategy() -> impl Strategy<Value = TaskMode> {
    prop_oneof![Just(TaskMode::Stal), Just(TaskMode::Gar)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_then_load_is_bit_exact(seed in any::<u64>(), mode in mode_strategy(), raw in any::<bool>()) {
        let records = generate(&small(seed, mode, raw)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(dir.path(), &records).unwrap();
        let back = load_manifest(&manifest, None).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            for (x, y) in [(&a.context, &b.context), (&a.vis, &b.vis), (&a.key, &b.key)] {
                prop_assert_eq!(x.dims(), y.dims());
                prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
            prop_assert_eq!(&a.labels, &b.labels);
            prop_assert_eq!(&a.id, &b.id);
        }
    }

    #[test]
    fn labels_depend_only_on_latents(seed in any::<u64>(), mode in mode_strategy(), noise in 0.0f64..3.0) {
        let a = generate(&small(seed, mode, false)).unwrap();
        let b = generate(&SyntheticConfig { noise, ..small(seed, mode, false) }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.labels, &y.labels);
        }
    }

    #[test]
    fn class_statistics_repeat_per_seed(seed in any::<u64>()) {
        let a = generate(&small(seed, TaskMode::Stal, false)).unwrap();
        let b = generate(&small(seed, TaskMode::Stal, false)).unwrap();
        prop_assert_eq!(class_frequencies(&a, 3), class_frequencies(&b, 3));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn records_are_well_formed(seed in any::<u64>(), mode in mode_strategy(), raw in any::<bool>()) {
        for r in generate(&small(seed, mode, raw)).unwrap() {
            r.validate().unwrap();
            prop_assert_eq!(r.mode(), mode);
            prop_assert_eq!(r.key_dim(), if raw { 51 } else { 4 });
            if raw {
                prop_assert!(r.key.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn damaged_files_name_the_offender() {
    let records = generate(&small(5, TaskMode::Stal, false)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(dir.path(), &records).unwrap();

    let spec = DataSpec { dim: 8, key_dim: 8, classes: 3 };
    let err = load_manifest(&manifest, Some(&spec)).unwrap_err();
    assert!(matches!(err, Error::DataShape { .. }), "{err}");

    let vis = dir.path().join(format!("{}.vis.ctf", records[1].id));
    let bytes = fs::read(&vis).unwrap();
    fs::write(&vis, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_manifest(&manifest, None).unwrap_err();
    assert!(err.to_string().contains(&vis.display().to_string()), "{err}");

    fs::write(&vis, b"XXXX").unwrap();
    let err = load_manifest(&manifest, None).unwrap_err();
    assert!(err.to_string().contains(&vis.display().to_string()), "{err}");

    fs::remove_file(&vis).unwrap();
    let err = load_manifest(&manifest, None).unwrap_err();
    assert!(err.to_string().contains(&vis.display().to_string()), "{err}");
}
