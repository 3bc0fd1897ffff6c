use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use mscca::io::{read_csv_matrix_file, read_json, write_metrics, DirectionsFile, Manifest, MetricRow, TruthFile};
use mscca::{projection_residual, test_deflated_correlation, Dataset, RegressionMode};
use rayon::prelude::*;

use crate::{manifest_path, rep_dir_name, CliError, Context};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directions JSON written by `fit`.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    directions: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    test: Option<PathBuf>,
    /// Ground truth; enables the residual column.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Evaluate every repetition of a simulation manifest, reading
    /// `directions.json` from each repetition directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Regress each true score on the matching estimate only.
    #[arg(long)]
    single_regressor: bool,
    /// Metrics CSV.
    #[arg(long)]
    out: PathBuf,
}

struct Job {
    rep: String,
    directions: PathBuf,
    test: PathBuf,
    truth: Option<PathBuf>,
}

pub fn run(args: Args, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let jobs = match &args.manifest {
        Some(path) => {
            let manifest: Manifest = read_json(path).context(|| format!("reading manifest {}", path.display()))?;
            manifest
                .reps
                .iter()
                .map(|e| Job {
                    rep: e.rep.to_string(),
                    directions: manifest_path(path, &rep_dir_name(e.rep)).join("directions.json"),
                    test: manifest_path(path, &e.test),
                    truth: Some(manifest_path(path, &e.truth)),
                })
                .collect()
        }
        None => vec![Job {
            rep: "0".into(),
            directions: args.directions.clone().expect("required by clap"),
            test: args.test.clone().expect("required by clap"),
            truth: args.truth.clone(),
        }],
    };
    let mode = if args.single_regressor {
        RegressionMode::Single
    } else {
        RegressionMode::Joint
    };
    let rows: Vec<Vec<MetricRow>> = pool.install(|| jobs.par_iter().map(|j| evaluate_one(j, mode)).collect::<Result<_, _>>())?;
    let rows: Vec<MetricRow> = rows.into_iter().flatten().collect();
    let file = File::create(&args.out)
        .map_err(mscca::Error::from)
        .context(|| format!("creating {}", args.out.display()))?;
    write_metrics(BufWriter::new(file), &rows).context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn evaluate_one(job: &Job, mode: RegressionMode) -> Result<Vec<MetricRow>, CliError> {
    let dirs: DirectionsFile = read_json(&job.directions).context(|| format!("reading {}", job.directions.display()))?;
    let layout = dirs.layout().context(|| format!("blocks in {}", job.directions.display()))?;
    let betas = dirs.betas().context(|| format!("directions in {}", job.directions.display()))?;
    let table = read_csv_matrix_file(&job.test).context(|| format!("reading {}", job.test.display()))?;
    if table.data.ncols() != layout.num_features() {
        return Err(CliError::Usage(format!(
            "{} has {} columns but the directions have {} features",
            job.test.display(),
            table.data.ncols(),
            layout.num_features()
        )));
    }
    let x = match &dirs.standardization {
        Some(stats) => stats.transform(table.data.view()).context(|| "standardizing test data".into())?,
        None => table.data,
    };
    let test = Dataset::new(x, layout).context(|| format!("preparing {}", job.test.display()))?;
    let corr = test_deflated_correlation(&test, &betas).context(|| format!("scoring {}", job.test.display()))?;
    let residuals = match &job.truth {
        Some(path) => {
            let truth: TruthFile = read_json(path).context(|| format!("reading {}", path.display()))?;
            let xi = truth.xi_matrix().context(|| format!("directions in {}", path.display()))?;
            let r = projection_residual(&test, xi.view(), &betas, mode)
                .context(|| format!("residuals for {}", job.test.display()))?;
            Some(r.values)
        }
        None => None,
    };
    Ok(corr
        .iter()
        .enumerate()
        .map(|(i, &c)| MetricRow {
            rep: job.rep.clone(),
            direction: i + 1,
            correlation: c,
            residual: residuals.as_ref().and_then(|r| r.get(i).copied()),
        })
        .collect())
}
