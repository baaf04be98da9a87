mod common;

use anyreid::data::{read_store, write_store, STORE_MAGIC};
use anyreid::repr::{LabeledSample, ModalitySet, SampleRepresentation};
use anyreid::Error;
use common::unit_rep;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let set = ModalitySet::from_bits(rng.gen_range(1..8));
            LabeledSample {
                identity: rng.gen_range(0..20),
                camera: rng.gen_range(0..3),
                representation: unit_rep(&mut rng, 7, set),
            }
        })
        .collect()
}

fn code(e: Error) -> &'static str {
    match e {
        Error::Format(f) => f.code(),
        other => panic!("not a format error: {other}"),
    }
}

#[test]
fn rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.mdfs"), dir.path().join("b.mdfs"));
    let samples = random_samples(100, 1);
    write_store(&samples, &a).unwrap();
    let back = read_store(&a).unwrap();
    assert_eq!(back.len(), 100);
    for (s, r) in samples.iter().zip(&back) {
        assert_eq!((s.identity, s.camera), (r.identity, r.camera));
        assert_eq!(s.representation.mask(), r.representation.mask());
        for (x, y) in s.representation.slots().iter().zip(r.representation.slots().iter()) {
            assert_eq!((*x as f32) as f64, *y);
        }
    }
    write_store(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_store(&b).unwrap(), back);
}

#[test]
fn single_modality_mask_reads_back_zero_slots() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.mdfs");
    let mut slots = Array2::zeros((6, 2));
    slots[[0, 0]] = 1.0;
    slots[[3, 1]] = 1.0;
    let rep = SampleRepresentation::from_slots(slots, "R".parse().unwrap()).unwrap();
    write_store(&[LabeledSample { identity: 1, camera: 0, representation: rep }], &path).unwrap();
    let back = read_store(&path).unwrap();
    let r = &back[0].representation;
    assert_eq!(r.mask(), [true, false, false, true, false, false]);
    for k in [1, 2, 4, 5] {
        assert!(r.slot(k).iter().all(|&x| x == 0.0));
    }
    assert!(r.is_normalized());
}

#[test]
fn damaged_files_report_their_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.mdfs");
    write_store(&random_samples(5, 2), &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let damaged = dir.path().join("d.mdfs");
    let check = |bytes: &[u8]| {
        std::fs::write(&damaged, bytes).unwrap();
        code(read_store(&damaged).unwrap_err())
    };

    for cut in [0, 3, 10, 24, good.len() - 1] {
        assert_eq!(check(&good[..cut]), "E_TRUNCATED", "cut at {cut}");
    }
    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"MDRP");
    assert_ne!(&bad[..4], &STORE_MAGIC);
    assert_eq!(check(&bad), "E_BAD_MAGIC");
    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(check(&bad), "E_VERSION");
    let mut bad = good.clone();
    bad[24 + 8] = 7; // first mask byte of the first record
    assert_eq!(check(&bad), "E_CORRUPT");
    let mut bad = good.clone();
    bad.push(0);
    assert_eq!(check(&bad), "E_CORRUPT");
    assert_eq!(code(read_store(&dir.path().join("missing.mdfs")).unwrap_err()), "E_IO");
}
