//! Command-line driver. Four subcommands cover the pipeline: `fit` turns a
//! surface point cloud into a shape parameter file, `sim` runs a coupled
//! scenario, `descriptors` prints shape measures, `mesh` exports a surface
//! triangulation. Every invocation writes one `manifest.json` into the
//! output directory recording inputs, timing and how the run ended.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use midelbm::engine::{shape_descriptors, EngineError, SimulationConfig};
use midelbm::geometry::GeometryError;
use midelbm::imaging::{fit_point_cloud, GaConfig, GsConfig, ImagingError};
use midelbm::io::{
    parse_metaball, parse_ply, parse_xyz, read_metaball, sha256_hex, snapshot_from_field,
    write_metaball, write_series_csv, write_stl, write_vtk, FitReport, IoError, RunFailure,
    RunManifest, MANIFEST_FILE, PARTICLE_COLUMNS,
};
use midelbm::mesh::surface_mesh;
use midelbm::Simulation64;

const CONFIG_ENV: &str = "MIDELBM_CONFIG";

#[derive(Parser)]
#[command(
    name = "midelbm",
    version,
    about = "Metaball particles in fluid: shape fitting, coupled runs, shape measures, surface export"
)]
struct Cli {
    /// Seed for stochastic stages; `sim` falls back to the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 keeps the library default.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory the output files are written into.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a metaball model to a surface point cloud (.xyz or .ply).
    Fit(FitArgs),
    /// Run a coupled fluid/particle scenario from a JSON config.
    Sim(SimArgs),
    /// Print sphericity, diameter ratio and Corey shape factor of a shape.
    Descriptors(ShapeArgs),
    /// Export the level-one surface of a shape as ASCII STL.
    Mesh(ShapeArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Point cloud to fit.
    cloud: PathBuf,
    /// Evolutionary generations.
    #[arg(long, default_value_t = GaConfig::default().generations)]
    generations: usize,
    /// Individuals per generation.
    #[arg(long, default_value_t = GaConfig::default().population)]
    population: usize,
    /// Scalar genes per individual (four per control point).
    #[arg(long, default_value_t = GaConfig::default().genes)]
    genes: usize,
    /// Per-gene mutation probability.
    #[arg(long, default_value_t = GaConfig::default().mutation_coeff)]
    mutation: f64,
    /// Crossover cut position as a genome fraction.
    #[arg(long, default_value_t = GaConfig::default().crossover_coeff)]
    crossover: f64,
    /// Gradient-descent epochs per refinement phase.
    #[arg(long, default_value_t = GsConfig::default().epochs)]
    epochs: usize,
    /// Gradient-descent step size.
    #[arg(long, default_value_t = GsConfig::default().learning_rate)]
    learning_rate: f64,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario document; falls back to $MIDELBM_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write field snapshots in the binary VTK variant.
    #[arg(long)]
    binary_vtk: bool,
}

#[derive(Args)]
struct ShapeArgs {
    /// Shape parameter file.
    shape: PathBuf,
    /// Sampling resolution (cells along the longest axis).
    #[arg(long, default_value_t = 96)]
    resolution: usize,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Macro step a failure should be pinned to in the manifest.
fn failure_step(e: &CliError) -> usize {
    match e {
        CliError::Engine(EngineError::Lbm { step, .. })
        | CliError::Engine(EngineError::Dem { step, .. })
        | CliError::Engine(EngineError::NonFiniteRecord { step }) => *step,
        _ => 0,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| {
        CliError::Usage(format!("cannot create {}: {e}", cli.out_dir.display()))
    })?;

    let started = Instant::now();
    let mut manifest = RunManifest {
        command: std::env::args().collect(),
        config_hash: String::new(),
        seed: cli.seed.unwrap_or(0),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: 0.0,
        timings: BTreeMap::new(),
        csv_columns: Vec::new(),
        failure: None,
    };

    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(cli, args, &mut manifest),
        Command::Sim(args) => cmd_sim(cli, args, &mut manifest),
        Command::Descriptors(args) => cmd_descriptors(cli, args, &mut manifest),
        Command::Mesh(args) => cmd_mesh(cli, args, &mut manifest),
    };
    if let Err(e) = &result {
        manifest.failure = Some(RunFailure {
            step: failure_step(e),
            message: e.to_string(),
        });
    }
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.write(&cli.out_dir.join(MANIFEST_FILE))?;
    result
}

fn timed<T>(
    timings: &mut BTreeMap<String, f64>,
    stage: &str,
    f: impl FnOnce() -> T,
) -> T {
    let start = Instant::now();
    let value = f();
    *timings.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
    value
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| {
        CliError::Io(IoError::Read {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn text_of(bytes: Vec<u8>, path: &Path) -> Result<String, CliError> {
    String::from_utf8(bytes)
        .map_err(|_| CliError::Usage(format!("{}: not valid UTF-8", path.display())))
}

fn file_stem(path: &Path, fallback: &str) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fallback.to_string())
}

fn cmd_fit(cli: &Cli, args: &FitArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    manifest.seed = seed;
    let bytes = read_file(&args.cloud)?;
    let flags = format!(
        "fit generations={} population={} genes={} mutation={} crossover={} epochs={} learning_rate={} seed={seed}",
        args.generations,
        args.population,
        args.genes,
        args.mutation,
        args.crossover,
        args.epochs,
        args.learning_rate,
    );
    manifest.config_hash = sha256_hex(&[bytes.as_slice(), flags.as_bytes()].concat());

    let extension = args
        .cloud
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let text = text_of(bytes, &args.cloud)?;
    let points = timed(&mut manifest.timings, "read_inputs", || {
        match extension.as_deref() {
            Some("xyz") => parse_xyz::<f64>(&text, &args.cloud),
            Some("ply") => parse_ply::<f64>(&text, &args.cloud),
            _ => Err(IoError::Structure {
                path: args.cloud.clone(),
                message: "unsupported point-cloud extension (expected .xyz or .ply)".into(),
            }),
        }
    })?;
    log::info!("fitting {} points from {}", points.len(), args.cloud.display());

    let ga = GaConfig {
        generations: args.generations,
        population: args.population,
        genes: args.genes,
        mutation_coeff: args.mutation,
        crossover_coeff: args.crossover,
        rng_seed: seed,
    };
    let gs = GsConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        ..GsConfig::default()
    };
    let fit = timed(&mut manifest.timings, "fit", || {
        fit_point_cloud::<f64>(&points, None, &ga, &gs)
    })?;
    log::info!("final loss {}", fit.final_loss);

    let stem = file_stem(&args.cloud, "fit");
    timed(&mut manifest.timings, "write_outputs", || {
        write_metaball(&cli.out_dir.join(format!("{stem}.metaball")), &fit.metaball)?;
        FitReport::from_fit(&fit, seed).write(&cli.out_dir.join(format!("{stem}.report.json")))
    })?;
    Ok(())
}

fn cmd_sim(cli: &Cli, args: &SimArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let config_path = args
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage(format!("no scenario given: pass --config or set {CONFIG_ENV}"))
        })?;
    let bytes = read_file(&config_path)?;
    manifest.config_hash = sha256_hex(&bytes);
    let text = text_of(bytes, &config_path)?;
    let mut config = SimulationConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    manifest.seed = config.seed;

    // Shape paths resolve relative to the config file.
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let shapes = timed(&mut manifest.timings, "read_inputs", || {
        config
            .particles
            .iter()
            .map(|p| read_metaball::<f64>(&base.join(&p.shape)))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut sim = timed(&mut manifest.timings, "setup", || {
        Simulation64::new(&config, shapes)
    })?;
    let total = sim.total_steps();
    let every = sim.record_every();
    let snapshot_every = sim.snapshot_every();
    log::info!(
        "running {total} macro steps ({} substeps each)",
        sim.subcycles()
    );

    let mut records = vec![sim.record()];
    let write_snapshot = |sim: &Simulation64,
                              timings: &mut BTreeMap<String, f64>|
     -> Result<(), CliError> {
        let name = format!("fields_{}.vtk", sim.step_index());
        let snapshot = snapshot_from_field(sim.field());
        timed(timings, "write_outputs", || {
            write_vtk(&cli.out_dir.join(name), &snapshot, args.binary_vtk)
        })?;
        Ok(())
    };
    if snapshot_every > 0 {
        write_snapshot(&sim, &mut manifest.timings)?;
    }

    let mut outcome = Ok(());
    while sim.step_index() < total {
        if let Err(e) = timed(&mut manifest.timings, "simulate", || sim.step()) {
            outcome = Err(CliError::Engine(e));
            break;
        }
        let step = sim.step_index();
        if step % every == 0 || step == total {
            records.push(sim.record());
        }
        if snapshot_every > 0 && (step % snapshot_every == 0 || step == total) {
            write_snapshot(&sim, &mut manifest.timings)?;
        }
    }
    if snapshot_every == 0 {
        write_snapshot(&sim, &mut manifest.timings)?;
    }

    // The series collected so far is written even when a step failed, so a
    // crashed run can still be inspected.
    timed(&mut manifest.timings, "write_outputs", || {
        write_series_csv(&cli.out_dir.join("particles.csv"), &records)
    })?;
    manifest.csv_columns = PARTICLE_COLUMNS.iter().map(|c| c.to_string()).collect();
    log::info!("completed {} of {total} macro steps", sim.step_index());
    outcome
}

fn cmd_descriptors(
    _cli: &Cli,
    args: &ShapeArgs,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let shape = read_shape(args, manifest)?;
    let d = timed(&mut manifest.timings, "descriptors", || {
        shape_descriptors(&shape, args.resolution)
    })?;
    println!(
        "{:.4} {:.4} {:.4}",
        d.sphericity,
        d.nominal_diameter / d.surface_equivalent_diameter,
        d.corey_shape_factor
    );
    Ok(())
}

fn cmd_mesh(cli: &Cli, args: &ShapeArgs, manifest: &mut RunManifest) -> Result<(), CliError> {
    let shape = read_shape(args, manifest)?;
    let mesh = timed(&mut manifest.timings, "mesh", || {
        surface_mesh(&shape, 1.0, args.resolution)
    })?;
    let stem = file_stem(&args.shape, "surface");
    timed(&mut manifest.timings, "write_outputs", || {
        write_stl(&cli.out_dir.join(format!("{stem}.stl")), &mesh, &stem)
    })?;
    log::info!("{} triangles", mesh.triangles.len());
    Ok(())
}

fn read_shape(
    args: &ShapeArgs,
    manifest: &mut RunManifest,
) -> Result<midelbm::Metaball64, CliError> {
    let bytes = read_file(&args.shape)?;
    let flags = format!("resolution={}", args.resolution);
    manifest.config_hash = sha256_hex(&[bytes.as_slice(), flags.as_bytes()].concat());
    let text = text_of(bytes, &args.shape)?;
    Ok(parse_metaball(&text, &args.shape)?)
}
