use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use windkd::error::{Error, Result, StageExt};
use windkd::nn::NetParams;
use windkd::run::{
    emit_grid_report, emit_report, parse_grid_spec, prepare_data, run_ablation, run_grid_search,
    train_shared_park, GridParam, RunConfig,
};
use windkd::synth::{self, SynthConfig};

/// Park-to-turbine wind power forecasting experiments.
#[derive(Parser)]
#[command(name = "windkd", version, disable_help_subcommand = true)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (WINDKD_SEED works too).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override (WINDKD_OUT_DIR works too).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Shrink data volume and epoch budgets for a quick pass.
    #[arg(long, global = true)]
    fast: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic park dataset and write its CSVs.
    Synth,
    /// Train the park networks and their error relation, then save them.
    TrainPark,
    /// Sweep one loss weight over a grid and write the RMSE curves.
    GridSearch {
        /// Which weight to sweep.
        #[arg(long)]
        param: GridParam,
        /// Override the configured grid, as start:end:step or one value.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train and evaluate every roster model on every turbine and horizon.
    Ablate,
    /// Re-emit all report files from a completed run's report.json.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).stage("config")?,
        None => RunConfig::default(),
    };
    config.apply_env().stage("config")?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if cli.fast {
        config.fast = true;
    }
    config.apply_fast();
    config.validate().stage("config")?;
    Ok(config)
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let dataset = synth::gen_with(SynthConfig {
        seed: config.seed,
        duration_days: config.duration_days,
        ..SynthConfig::default()
    })
    .stage("data")?;
    let dir = config.out_dir.join("dataset");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let files = synth::write_park_csvs(&dataset, &dir).stage("data")?;
    println!(
        "wrote {} files ({} turbines + park) to {}",
        files.len(),
        dataset.turbines.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_park(config: &RunConfig) -> Result<()> {
    let data = prepare_data(config)?;
    let dir = config.out_dir.join("park");
    for &h in &config.horizons {
        let shared = train_shared_park(config, &data.park_train, h)?;
        let hdir = dir.join(format!("h{h}"));
        std::fs::create_dir_all(&hdir).map_err(|e| Error::io(hdir.display().to_string(), e))?;
        shared.teacher.f_i.to_container().save(&hdir.join("f_i.json"))?;
        shared.teacher.f_ii.to_container().save(&hdir.join("f_ii.json"))?;
        shared.relation.g.to_container().save(&hdir.join("relation.json"))?;
        println!(
            "h{h}: f_i {} params, f_ii {} params, relation train mse {:.6} -> {}",
            shared.teacher.f_i.param_count(),
            shared.teacher.f_ii.param_count(),
            shared.relation.train_mse,
            hdir.display()
        );
    }
    Ok(())
}

fn cmd_grid_search(config: &mut RunConfig, param: GridParam, grid: Option<&str>) -> Result<()> {
    if let Some(spec) = grid {
        let values = parse_grid_spec(spec).stage("config")?;
        match param {
            GridParam::Alpha => config.alpha_grid = values,
            GridParam::Gamma => config.gamma_grid = values,
        }
        config.validate().stage("config")?;
    }
    let report = run_grid_search(config, param)?;
    for curve in &report.curves {
        println!(
            "{}: best {param} = {} (rmse {:.5})",
            curve.turbine, curve.argmin_value, curve.argmin_rmse
        );
    }
    let files = emit_grid_report(&report, &config.out_dir).stage("report")?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let report = run_ablation(config)?;
    let failed: Vec<_> = report.cells.iter().filter(|c| c.error.is_some()).collect();
    for c in &failed {
        eprintln!(
            "cell {} {} h{} failed: {}",
            c.model,
            c.turbine,
            c.horizon,
            c.error.as_deref().unwrap_or("?")
        );
    }
    let files = emit_report(&report, &config.out_dir).stage("report")?;
    println!(
        "{} cells ({} failed), {} files in {}",
        report.cells.len(),
        failed.len(),
        files.len(),
        config.out_dir.display()
    );
    if !failed.is_empty() {
        return Err(Error::Config(format!("{} cells failed", failed.len())).at_stage("ablate"));
    }
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<()> {
    let path = config.out_dir.join("report.json");
    let report = windkd::run::ForecastReport::load(&path).stage("report")?;
    let files = emit_report(&report, &config.out_dir).stage("report")?;
    println!("re-emitted {} files in {}", files.len(), config.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("windkd: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = match &cli.cmd {
        Cmd::Synth => cmd_synth(&config),
        Cmd::TrainPark => cmd_train_park(&config),
        Cmd::GridSearch { param, grid } => cmd_grid_search(&mut config, *param, grid.as_deref()),
        Cmd::Ablate => cmd_ablate(&config),
        Cmd::Report => cmd_report(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("windkd: {e}");
            ExitCode::FAILURE
        }
    }
}
