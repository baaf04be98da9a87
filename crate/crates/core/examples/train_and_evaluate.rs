//! Generates the synthetic dataset, trains the full model, and prints the
//! scenario matrix. Pass a seed as the first argument; set `EPOCHS` to
//! shorten the run.

use anyreid::config::RunConfig;
use anyreid::data::generate_dataset;
use anyreid::evalkit::{render_csv, run_scenario_matrix};
use anyreid::train::{extract, train};

fn main() -> anyreid::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let mut cfg = RunConfig::default().with_seed(seed);
    if let Ok(epochs) = std::env::var("EPOCHS") {
        cfg.optim.epochs = epochs.parse().expect("EPOCHS must be an integer");
    }
    let data = generate_dataset(&cfg.data)?;
    println!("{} train / {} test samples", data.train.len(), data.test.len());
    let outcome = train(&cfg, &data.train, |row| eprintln!("{}", row.csv_row()))?;
    let features = extract(&outcome.model, &data.test)?;
    let reports = run_scenario_matrix(&features, &cfg.eval.scenario_specs()?, cfg.eval.exclude_same_camera)?;
    print!("{}", render_csv(&reports, true));
    Ok(())
}
