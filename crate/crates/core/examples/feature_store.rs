//! Writes a feature store, reads it back, and shows what a damaged file
//! reports.

use anyreid::data::{read_store, write_store};
use anyreid::repr::{LabeledSample, ModalitySet, SampleRepresentation};
use anyreid::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyreid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples = (0..50)
        .map(|i| {
            let set = ModalitySet::from_bits(rng.gen_range(1..8));
            let slots = Array2::from_shape_fn((6, 12), |_| rng.gen_range(-1.0..1.0));
            let representation = SampleRepresentation::from_slots(slots, set)?.normalize_slots()?;
            Ok(LabeledSample { identity: i / 5, camera: i % 3, representation })
        })
        .collect::<anyreid::Result<Vec<_>>>()?;

    let dir = std::env::temp_dir().join("anyreid-feature-store");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("features.mdfs");
    write_store(&samples, &path)?;
    let back = read_store(&path)?;
    println!(
        "{} records, {} bytes; first mask {:?}",
        back.len(),
        std::fs::metadata(&path)?.len(),
        back[0].representation.mask_bytes()
    );

    let bytes = std::fs::read(&path)?;
    let damaged = dir.join("damaged.mdfs");
    for (what, data) in
        [("truncated", bytes[..bytes.len() / 2].to_vec()), ("wrong magic", [b"XXXX", &bytes[4..]].concat())]
    {
        std::fs::write(&damaged, data)?;
        match read_store(&damaged) {
            Err(Error::Format(e)) => println!("{what}: {} ({e})", e.code()),
            other => println!("{what}: unexpected {other:?}"),
        }
    }
    Ok(())
}
