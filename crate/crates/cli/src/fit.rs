use std::fs;
use std::path::{Path, PathBuf};

use mscca::io::{read_blocks, read_csv_matrix_file, read_json, write_csv_matrix_file, write_json, DirectionsFile, FitConfig, Manifest};
use mscca::{fit_sequential_with_starts, BlockLayout, Dataset, Selection};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::{manifest_path, rep_dir_name, CliError, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SelectionArg {
    Penalized,
    Cv,
    Last,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Training CSV (rows are samples).
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    train: Option<PathBuf>,
    /// Blocks sidecar; defaults to blocks.json next to the training file.
    #[arg(long)]
    blocks: Option<PathBuf>,
    /// Fit every repetition listed in a simulation manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// JSON with optional "solver" and "init" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of directions.
    #[arg(long = "k", visible_alias = "K", default_value_t = 1)]
    k: usize,
    /// `screening`, or `custom-vector <file>` with one start per row.
    #[arg(long, num_args = 1..=2, value_names = ["MODE", "FILE"])]
    init: Option<Vec<String>>,
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    eta: Option<f64>,
    /// Center columns without rescaling them.
    #[arg(long)]
    no_scale: bool,
    /// Directions JSON (single-file mode); with --manifest each repetition
    /// gets `directions.json` in its own directory.
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    /// Directory for per-direction trajectory CSVs. With --manifest the
    /// files go to each repetition directory and the value is ignored.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// CSV of per-block scores, n rows by D*K columns. With --manifest each
    /// repetition gets `scores.csv` and the value is ignored.
    #[arg(long)]
    scores: Option<PathBuf>,
}

enum Init {
    Screening,
    Custom(PathBuf),
}

struct Job {
    train: PathBuf,
    blocks: PathBuf,
    out: PathBuf,
    trajectories: Option<PathBuf>,
    scores: Option<PathBuf>,
}

pub fn run(args: Args, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let config = load_config(&args)?;
    let init = parse_init(args.init.as_deref())?;
    if args.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let jobs = match &args.manifest {
        Some(path) => {
            let manifest: Manifest = read_json(path).context(|| format!("reading manifest {}", path.display()))?;
            manifest
                .reps
                .iter()
                .map(|e| {
                    let dir = manifest_path(path, &rep_dir_name(e.rep));
                    Job {
                        train: manifest_path(path, &e.train),
                        blocks: manifest_path(path, &manifest.blocks),
                        out: dir.join("directions.json"),
                        trajectories: args.trajectories.as_ref().map(|_| dir.clone()),
                        scores: args.scores.as_ref().map(|_| dir.join("scores.csv")),
                    }
                })
                .collect::<Vec<_>>()
        }
        None => {
            let train = args.train.clone().expect("required by clap");
            let blocks = args.blocks.clone().unwrap_or_else(|| {
                train.parent().unwrap_or_else(|| Path::new(".")).join("blocks.json")
            });
            vec![Job {
                train,
                blocks,
                out: args.out.clone().expect("required by clap"),
                trajectories: args.trajectories.clone(),
                scores: args.scores.clone(),
            }]
        }
    };
    pool.install(|| {
        jobs.par_iter()
            .map(|job| fit_one(job, &config, &init, args.k, !args.no_scale))
            .collect::<Result<Vec<()>, _>>()
    })?;
    Ok(())
}

fn load_config(args: &Args) -> Result<FitConfig, CliError> {
    let mut config: FitConfig = match &args.config {
        Some(path) => read_json(path).context(|| format!("reading config {}", path.display()))?,
        None => FitConfig::default(),
    };
    if let Some(eta) = args.eta {
        config.solver.eta = eta;
    }
    match args.selection {
        Some(SelectionArg::Cv) => config.solver.selection = Selection::CrossValidation { folds: args.folds },
        Some(SelectionArg::Last) => config.solver.selection = Selection::LastIterate,
        Some(SelectionArg::Penalized) => {
            if !matches!(config.solver.selection, Selection::Penalized { .. }) {
                config.solver.selection = Selection::default();
            }
        }
        None => {}
    }
    if let Selection::CrossValidation { folds } = config.solver.selection {
        if folds < 2 {
            return Err(CliError::Usage(format!("need at least 2 folds, got {folds}")));
        }
    }
    Ok(config)
}

fn parse_init(values: Option<&[String]>) -> Result<Init, CliError> {
    match values {
        None => Ok(Init::Screening),
        Some([mode]) if mode == "screening" => Ok(Init::Screening),
        Some([mode, file]) if mode == "custom-vector" => Ok(Init::Custom(PathBuf::from(file))),
        Some([mode]) if mode == "custom-vector" => Err(CliError::Usage("--init custom-vector needs a file".into())),
        Some(other) => Err(CliError::Usage(format!(
            "--init expects 'screening' or 'custom-vector <file>', got {other:?}"
        ))),
    }
}

fn read_starts(path: &Path, p: usize) -> Result<Vec<Array1<f64>>, CliError> {
    let table = read_csv_matrix_file(path).context(|| format!("reading start vectors {}", path.display()))?;
    let data = table.data;
    if data.ncols() == p {
        Ok(data.rows().into_iter().map(|r| r.to_owned()).collect())
    } else if data.nrows() == p && data.ncols() == 1 {
        Ok(vec![data.column(0).to_owned()])
    } else {
        Err(CliError::Usage(format!(
            "start vectors in {} have shape {:?}, expected rows of length {p}",
            path.display(),
            data.dim()
        )))
    }
}

fn fit_one(job: &Job, config: &FitConfig, init: &Init, k: usize, scale: bool) -> Result<(), CliError> {
    if !job.blocks.is_file() {
        return Err(CliError::Usage(format!("missing blocks sidecar {}", job.blocks.display())));
    }
    let layout: BlockLayout = read_blocks(&job.blocks).context(|| format!("reading {}", job.blocks.display()))?;
    let table = read_csv_matrix_file(&job.train).context(|| format!("reading {}", job.train.display()))?;
    let ds = Dataset::standardize(table.data.view(), layout.clone(), scale)
        .context(|| format!("preparing {}", job.train.display()))?;
    let starts = match init {
        Init::Screening => Vec::new(),
        Init::Custom(path) => read_starts(path, layout.num_features())?,
    };
    let fit = fit_sequential_with_starts(&ds, k, &config.solver, &config.init, &starts)
        .context(|| format!("fitting {}", job.train.display()))?;
    if fit.directions.len() < k {
        log::warn!(
            "{}: only {} of {k} directions carry cross-block signal",
            job.train.display(),
            fit.directions.len()
        );
    }
    let out = DirectionsFile::new(&layout, ds.stats().cloned(), config.clone(), &fit.directions);
    write_json(&job.out, &out).context(|| format!("writing {}", job.out.display()))?;

    if let Some(dir) = &job.trajectories {
        fs::create_dir_all(dir)
            .map_err(mscca::Error::from)
            .context(|| format!("creating {}", dir.display()))?;
        for (i, d) in fit.directions.iter().enumerate() {
            let path = dir.join(format!("trajectory_{}.csv", i + 1));
            let file = fs::File::create(&path)
                .map_err(mscca::Error::from)
                .context(|| format!("creating {}", path.display()))?;
            d.trajectory
                .write_csv(std::io::BufWriter::new(file))
                .context(|| format!("writing {}", path.display()))?;
        }
    }
    if let Some(path) = &job.scores {
        let n = ds.n_samples();
        let nb = layout.num_blocks();
        let mut z = Array2::zeros((n, nb * fit.directions.len()));
        let mut header = Vec::with_capacity(z.ncols());
        for (i, d) in fit.directions.iter().enumerate() {
            for b in 0..nb {
                z.column_mut(i * nb + b).assign(&d.scores.column(b));
                header.push(format!("z{}_block{}", i + 1, b + 1));
            }
        }
        write_csv_matrix_file(path, z.view(), Some(&header)).context(|| format!("writing {}", path.display()))?;
    }
    log::info!("{}: {} directions", job.train.display(), fit.directions.len());
    Ok(())
}
