//! Runs every finite-difference suite, then a deliberately corrupted one.

use anyreid::gradcheck::{run_all, run_suite, GradcheckOptions, Suite};

fn main() -> anyreid::Result<()> {
    for report in run_all(&GradcheckOptions::default())? {
        println!("{report}");
    }
    let corrupted =
        run_suite(Suite::Triplet, &GradcheckOptions { corrupt: Some(Suite::Triplet), ..Default::default() })?;
    println!("with a corrupted triplet gradient:\n{corrupted}");
    Ok(())
}
