use std::fs;
use std::path::PathBuf;

use mscca::io::{write_csv_matrix_file, write_json, Manifest, ManifestEntry, TruthFile};
use mscca::{generate, CovFamily, Scenario, ScenarioSpec, SupportMode};
use rayon::prelude::*;

use crate::{rep_dir_name, CliError, Context};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    scenario: Scenario,
    #[arg(long = "cov", default_value = "identity")]
    cov: CovFamily,
    /// Training rows per repetition.
    #[arg(long)]
    n: usize,
    /// Nonzero loadings per block and direction.
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 500)]
    block_size: usize,
    /// Number of population directions.
    #[arg(long, default_value_t = 3)]
    k_true: usize,
    #[arg(long, default_value_t = mscca::simulate::DEFAULT_TEST_ROWS)]
    n_test: usize,
    #[arg(long, default_value = "independent")]
    support: SupportMode,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

impl Args {
    fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            num_blocks: self.blocks,
            block_size: self.block_size,
            k_true: self.k_true,
            n_test: self.n_test,
            support: self.support,
            rho_tilde: mscca::simulate::default_rho_tilde(self.k_true),
            ..ScenarioSpec::new(self.scenario, self.cov, self.n, self.s, self.seed)
        }
    }
}

pub fn run(args: Args, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let spec = args.spec();
    spec.validate().context(|| "invalid simulation settings".into())?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let out = &args.out;
    fs::create_dir_all(out)
        .map_err(mscca::Error::from)
        .context(|| format!("creating {}", out.display()))?;
    let blocks_json = format!("{{\"blocks\":{:?}}}\n", spec.layout().block_sizes());
    fs::write(out.join("blocks.json"), &blocks_json)
        .map_err(mscca::Error::from)
        .context(|| "writing blocks.json".into())?;

    let entries: Vec<ManifestEntry> = pool.install(|| {
        (0..args.reps)
            .into_par_iter()
            .map(|rep| write_rep(&spec, rep, out, &blocks_json))
            .collect::<Result<_, _>>()
    })?;
    let manifest = Manifest {
        spec,
        reps: entries,
        blocks: "blocks.json".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&out.join("manifest.json"), &manifest).context(|| "writing manifest.json".into())?;
    log::info!("wrote {} repetitions to {}", args.reps, out.display());
    Ok(())
}

fn write_rep(spec: &ScenarioSpec, rep: usize, out: &std::path::Path, blocks_json: &str) -> Result<ManifestEntry, CliError> {
    let sim = generate(spec, rep as u64).context(|| format!("simulating repetition {rep}"))?;
    let name = rep_dir_name(rep);
    let dir = out.join(&name);
    let io = |what: &str| {
        let what = what.to_owned();
        move || format!("writing {what} for repetition {rep}")
    };
    fs::create_dir_all(&dir).map_err(mscca::Error::from).context(io("directory"))?;
    fs::write(dir.join("blocks.json"), blocks_json)
        .map_err(mscca::Error::from)
        .context(io("blocks.json"))?;
    write_csv_matrix_file(&dir.join("train.csv"), sim.train.x(), None).context(io("train.csv"))?;
    write_csv_matrix_file(&dir.join("test.csv"), sim.test.x(), None).context(io("test.csv"))?;
    write_json(&dir.join("truth.json"), &TruthFile::new(spec, sim.stream, &sim.truth)).context(io("truth.json"))?;
    Ok(ManifestEntry {
        rep,
        stream: sim.stream,
        train: format!("{name}/train.csv"),
        test: format!("{name}/test.csv"),
        truth: format!("{name}/truth.json"),
    })
}
