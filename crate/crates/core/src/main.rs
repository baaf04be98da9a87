use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyreid::config::RunConfig;
use anyreid::data::{
    generate_dataset, read_grids, read_manifest, read_store, write_grids, write_manifest, write_store,
};
use anyreid::data::{Manifest, TEST_FILE, TRAIN_FILE};
use anyreid::encoder::{read_checkpoint, write_checkpoint};
use anyreid::evalkit::{render_csv, run_scenario_matrix, ScenarioSpec};
use anyreid::gradcheck::{run_all, GradcheckOptions, Suite};
use anyreid::sim::score_gallery;
use anyreid::train::{extract, render_log, train};
use anyreid::Error;
use clap::{Args, Parser, Subcommand};

const MANIFEST_FILE: &str = "manifest.txt";
const STORE_FILE: &str = "test.mdfs";

#[derive(Parser)]
#[command(name = "anyreid", version, about = "Modality-decoupled any-to-any re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run and data seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyreid::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset: manifest plus train/test grids.
    GenData(Common),
    /// Train the encoder; writes checkpoints and a per-epoch loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default: <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Encode the test split into a feature store.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (default: <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Scenario-matrix evaluation of a feature store, printed as CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        store: PathBuf,
        /// Comma-separated scenario names such as `R-to-N,RT-to-NT`.
        #[arg(long)]
        scenarios: Option<String>,
    },
    /// Top-k gallery entries for one query sample.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long, default_value = "RNT-to-RNT")]
        scenario: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Finite-difference checks of every gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupts one suite's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn data_dir(cfg: &RunConfig, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| cfg.out_dir.join("data"))
}

fn create_dir(dir: &Path) -> anyreid::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn gen_data(common: &Common) -> anyreid::Result<()> {
    let cfg = common.load()?;
    let dataset = generate_dataset(&cfg.data)?;
    let dir = cfg.out_dir.join("data");
    create_dir(&dir)?;
    write_grids(&dataset.train, &dir.join(TRAIN_FILE))?;
    write_grids(&dataset.test, &dir.join(TEST_FILE))?;
    let manifest = Manifest {
        config: cfg.data,
        train_file: TRAIN_FILE.into(),
        test_file: TEST_FILE.into(),
        train_count: dataset.train.len(),
        test_count: dataset.test.len(),
    };
    write_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    println!("wrote {} train and {} test samples to {}", manifest.train_count, manifest.test_count, dir.display());
    Ok(())
}

fn cmd_train(common: &Common, data: &Option<PathBuf>) -> anyreid::Result<()> {
    let cfg = common.load()?;
    let dir = data_dir(&cfg, data);
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let train_set = read_grids(&dir.join(&manifest.train_file))?;
    create_dir(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    println!("epoch,l_ce,l_tri,l_rol,l_kdl,l_mml,l_total");
    let outcome = train(&cfg, &train_set, |row| println!("{}", row.csv_row()))?;
    std::fs::write(cfg.out_dir.join("train_log.csv"), render_log(&outcome.log))?;
    write_checkpoint(&outcome.model, &cfg.out_dir.join("final.mdrp"))?;
    write_checkpoint(&outcome.best, &cfg.out_dir.join("best.mdrp"))?;
    println!("best epoch {}; checkpoints in {}", outcome.best_epoch, cfg.out_dir.display());
    Ok(())
}

fn cmd_extract(common: &Common, checkpoint: &Path, data: &Option<PathBuf>) -> anyreid::Result<()> {
    let cfg = common.load()?;
    let model = read_checkpoint(checkpoint)?;
    let dir = data_dir(&cfg, data);
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let test_set = read_grids(&dir.join(&manifest.test_file))?;
    let features = extract(&model, &test_set)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(STORE_FILE);
    write_store(&features, &path)?;
    println!("wrote {} samples to {}", features.len(), path.display());
    Ok(())
}

fn cmd_eval(common: &Common, store: &Path, scenarios: &Option<String>) -> anyreid::Result<()> {
    let cfg = common.load()?;
    let specs = match scenarios {
        Some(list) => ScenarioSpec::parse_list(list)?,
        None => cfg.eval.scenario_specs()?,
    };
    if specs.is_empty() {
        return Err(Error::InvalidScenario(String::new()));
    }
    let samples = read_store(store)?;
    let reports = run_scenario_matrix(&samples, &specs, cfg.eval.exclude_same_camera)?;
    let csv = render_csv(&reports, true);
    print!("{csv}");
    if common.out.is_some() {
        create_dir(&cfg.out_dir)?;
        std::fs::write(cfg.out_dir.join("report.csv"), csv)?;
    }
    Ok(())
}

fn cmd_query(store: &Path, id: usize, scenario: &str, k: usize) -> anyreid::Result<()> {
    let spec: ScenarioSpec = scenario.parse()?;
    let samples = read_store(store)?;
    let query = samples.get(id).ok_or(Error::UnknownId(id))?;
    let q = query.representation.restrict(spec.query_modalities)?;
    let gallery = samples
        .iter()
        .map(|s| s.representation.restrict(spec.gallery_modalities))
        .collect::<anyreid::Result<Vec<_>>>()?;
    let scores = score_gallery(&q, &gallery);
    let mut order: Vec<usize> = (0..samples.len()).filter(|&j| j != id).collect();
    order.sort_by(|&a, &b| scores[b].sim_total.total_cmp(&scores[a].sim_total).then(a.cmp(&b)));
    println!("query {id} identity {} camera {} scenario {spec}", query.identity, query.camera);
    println!("rank,gallery_id,identity,camera,match,sim_specific,sim_shared,sim_total");
    for (rank, &j) in order.iter().take(k).enumerate() {
        let b = &scores[j];
        println!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            rank + 1,
            j,
            samples[j].identity,
            samples[j].camera,
            u8::from(samples[j].identity == query.identity),
            b.sim_specific,
            b.sim_shared,
            b.sim_total
        );
    }
    Ok(())
}

fn cmd_gradcheck(common: &Common, corrupt: &Option<String>) -> anyreid::Result<bool> {
    let cfg = common.load()?;
    let corrupt = match corrupt {
        None => None,
        Some(name) => Some(
            Suite::ALL
                .into_iter()
                .find(|s| s.name() == name)
                .ok_or_else(|| Error::Config(format!("unknown suite {name:?}")))?,
        ),
    };
    let reports = run_all(&GradcheckOptions { seed: cfg.seed, corrupt, ..Default::default() })?;
    for r in &reports {
        println!("{r}");
    }
    let ok = reports.iter().all(|r| r.passed());
    println!("{} of {} suites passed", reports.iter().filter(|r| r.passed()).count(), reports.len());
    Ok(ok)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidScenario(_) | Error::UnknownId(_) => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ANYREID_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("ANYREID_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("ANYREID_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c).map(|_| true),
        Command::Train { common, data } => cmd_train(common, data).map(|_| true),
        Command::Extract { common, checkpoint, data } => cmd_extract(common, checkpoint, data).map(|_| true),
        Command::Eval { common, store, scenarios } => cmd_eval(common, store, scenarios).map(|_| true),
        Command::Query { store, id, scenario, k } => cmd_query(store, *id, scenario, *k).map(|_| true),
        Command::Gradcheck { common, corrupt } => cmd_gradcheck(common, corrupt),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Error::Format(f)) => {
            eprintln!("error [{}]: {f}", f.code());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
