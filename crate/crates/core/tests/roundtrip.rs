use std::fs;
use std::path::Path;

use proptest::prelude::*;
use skewmix::data_io::{load_cube, payload_path, write_cube, SpectralCube};
use skewmix::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, Head};
use skewmix::{SpectralModel, Variant};

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(f32::from_bits).prop_filter("finite", |v| v.is_finite())
}

fn cube_strategy() -> impl Strategy<Value = SpectralCube> {
    (1usize..5, 1usize..5, 1usize..9, any::<bool>()).prop_flat_map(|(h, w, c, physical)| {
        let coords = if physical {
            prop::collection::vec(0.5f64..40.0, c)
                .prop_map(|steps| {
                    steps
                        .iter()
                        .scan(380.0, |acc, s| {
                            *acc += s;
                            Some(*acc)
                        })
                        .collect::<Vec<f64>>()
                })
                .boxed()
        } else {
            Just((0..c).map(|i| i as f64).collect::<Vec<f64>>()).boxed()
        };
        (prop::collection::vec(finite_f32(), h * w * c), coords)
            .prop_map(move |(v, coords)| SpectralCube::new(h, w, c, v, coords).unwrap())
    })
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cube_round_trip_is_byte_exact(cube in cube_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        write_cube(&cube, &a).unwrap();
        let loaded = load_cube(&a).unwrap();
        prop_assert_eq!(&loaded, &cube);
        write_cube(&loaded, &b).unwrap();
        prop_assert_eq!(fs::read(payload_path(&a)).unwrap(), fs::read(payload_path(&b)).unwrap());
        prop_assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact(
        bands in 3usize..10,
        k in 1usize..4,
        widths in prop::array::uniform4(1usize..7),
        fixed in any::<bool>(),
        seed in any::<u64>(),
        epoch in 0usize..100,
        noise in prop::collection::vec(finite_f32(), 8),
    ) {
        let (variant, head) = if fixed { (Variant::Fixed, Head::ScalesOnly) } else { (Variant::Full, Head::Full) };
        let cfg = EncoderConfig::new(bands, k).with_hidden(widths).with_head(head);
        let mut model = SpectralModel::<f32>::init(cfg, variant, seed).unwrap();
        // Arbitrary bit patterns in running statistics and BN parameters.
        for (i, (_, t)) in model.encoder.all_tensors_mut().into_iter().enumerate() {
            if let Some(v) = t.first_mut() {
                *v = noise[i % noise.len()];
            }
        }
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, seed, epoch, dir.path().join("a")).unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path().join("a")).unwrap();
        prop_assert_eq!(manifest.seed, seed);
        prop_assert_eq!(manifest.epoch, epoch);
        prop_assert_eq!(loaded.variant(), variant);
        save_checkpoint(&loaded, seed, epoch, dir.path().join("b")).unwrap();
        prop_assert_eq!(files_in(&dir.path().join("a")), files_in(&dir.path().join("b")));
    }
}
