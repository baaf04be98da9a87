//! Evaluates the metric losses on a random labeled batch: orthogonality,
//! knowledge discrepancy under both detach modes, batch-hard triplet, and
//! their weighted combination.

use anyreid::metric::{kdl_batch_loss, mml_loss, rol_loss, triplet_loss, BatchSpec, KdlDetach, PairMask, TargetMatrix};
use anyreid::repr::{LabeledSample, ModalitySet, SampleRepresentation};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> anyreid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (p, k, dim) = (4, 3, 16);
    let samples = (0..p * k)
        .map(|i| {
            let slots = Array2::from_shape_simple_fn((6, dim), || StandardNormal.sample(&mut rng));
            let representation = SampleRepresentation::from_slots(slots, ModalitySet::ALL)?.normalize_slots()?;
            Ok(LabeledSample { identity: (i / k) as u32, camera: 0, representation })
        })
        .collect::<anyreid::Result<Vec<_>>>()?;
    let batch = BatchSpec::with_pk(p, k, samples)?;

    let first = &batch.samples[0].representation;
    let (rol, _) = rol_loss(first, &TargetMatrix::block(), &PairMask::for_sample(first))?;
    println!("ROL on the first sample: {rol:.4}");
    for detach in [KdlDetach::Negative, KdlDetach::Both] {
        let (kdl, grads) = kdl_batch_loss(&batch, detach)?;
        let norm: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        println!("KDL ({detach:?} detached): {kdl:.4}, gradient norm {norm:.4}");
    }
    let (tri, _) = triplet_loss(&batch, 0.3)?;
    println!("batch-hard triplet: {tri:.4}");
    let mml = mml_loss(&batch, 1.5, 5.25, KdlDetach::default())?;
    println!("weighted ROL + KDL: {:.4} (rol {:.4}, kdl {:.4})", mml.l_mml, mml.l_rol, mml.l_kdl);
    Ok(())
}
