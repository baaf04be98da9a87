//! Trains the four ablation variants on the default dataset and prints the
//! mean mAP over the default scenarios. Seeds come from the arguments
//! (default 0).

use anyreid::config::RunConfig;
use anyreid::train::{run_pipeline, Variant};

fn main() -> anyreid::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse().expect("seeds are integers")).collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    println!("variant,seed,mean_mAP,R-to-N");
    for variant in Variant::ALL {
        for &seed in &seeds {
            let cfg = variant.apply(&RunConfig::default().with_seed(seed));
            let out = run_pipeline(&cfg)?;
            let mean = out.reports.iter().map(|r| r.map).sum::<f64>() / out.reports.len() as f64;
            let r_to_n = out.reports.iter().find(|r| r.scenario == "R-to-N").map_or(f64::NAN, |r| r.map);
            println!("{},{seed},{mean:.4},{r_to_n:.4}", variant.name());
        }
    }
    Ok(())
}
