use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use softfin::config::{parse_refs, Config};
use softfin::eval::{compare_controllers, summaries_to_csv, Controller};
use softfin::pipeline::{
    collect, evaluate_to, fit_grid, fit_single, fit_surrogate, load_grid, load_single, load_surrogate, plot_from,
    run_pipeline, Layout, PipelineError,
};
use softfin::rl::in_training_range;

#[derive(Parser)]
#[command(name = "softfin", version, about = "Soft-fin force control: data, surrogate, RL controllers, plant evaluation")]
struct Cli {
    /// Master seed; RL checkpoints live under rl/seed_<seed>.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` file overriding defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Single,
    Grid,
    Random,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the plant log dataset.
    Collect,
    /// Train PosNet and ForceNet on the dataset and score them on the test logs.
    TrainSurrogate,
    /// Train a controller inside the surrogate.
    TrainRl {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Run one controller on the plant for 30 s and write its trace.
    Evaluate {
        #[arg(long, value_enum, default_value = "grid")]
        controller: Kind,
        /// `x,y` force reference.
        #[arg(long, default_value = "1,1")]
        reference: String,
    },
    /// Single against grid on the plant at every configured reference.
    Compare,
    /// Plot files from an evaluation directory.
    Plot {
        #[arg(long, value_enum, default_value = "grid")]
        controller: Kind,
    },
    /// Every stage in order.
    Pipeline,
    /// Print the configuration in effect.
    ShowConfig,
}

fn size_line(path: &Path) -> String {
    let n = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    format!("wrote {} ({n} bytes)", path.display())
}

fn write(path: &Path, body: &str) -> Result<(), String> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| format!("{}: {e}", d.display()))?;
    }
    fs::write(path, body).map_err(|e| format!("{}: {e}", path.display()))
}

fn controller(kind: Kind, lay: &Layout, seed: u64) -> Result<Controller, PipelineError> {
    Ok(match kind {
        Kind::Single => Controller::Single(load_single(lay, seed)?),
        Kind::Grid => Controller::Grid(load_grid(lay, seed)?),
        Kind::Random => Controller::Random(seed),
    })
}

fn run(cli: Cli) -> Result<(), String> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| e.to_string())?,
        None => Config::default(),
    };
    let lay = Layout::new(&cli.out);
    let seed = cli.seed;
    let err = |e: PipelineError| e.to_string();
    match cli.cmd {
        Cmd::Collect => {
            let ds = collect(&cfg, seed, &lay).map_err(err)?;
            println!("wrote {} logs to {}", ds.train().len() + ds.test().len(), lay.dataset().display());
        }
        Cmd::TrainSurrogate => {
            let (_, m) = fit_surrogate(&cfg, seed, &lay).map_err(err)?;
            print!("{}", m.to_csv());
            println!("{}", size_line(&lay.surrogate()));
        }
        Cmd::TrainRl { mode } => {
            let model = load_surrogate(&lay).map_err(err)?;
            match mode {
                Mode::Single => {
                    fit_single(&cfg, &model, seed, &lay).map_err(err)?;
                    println!("{}", size_line(&lay.single(seed)));
                }
                Mode::Grid => {
                    let (bank, sizes, failures) = fit_grid(&cfg, &model, seed, &lay).map_err(err)?;
                    for (key, n) in bank.keys().zip(&sizes) {
                        println!("grid policy ({}, {}): {n} bytes", key[0], key[1]);
                    }
                    println!("grid total: {} bytes in {}", sizes.iter().sum::<u64>(), lay.grid(seed).display());
                    for (p, e) in failures {
                        eprintln!("grid point ({}, {}) failed: {e}", p[0], p[1]);
                    }
                }
            }
        }
        Cmd::Evaluate { controller: kind, reference } => {
            let r = match parse_refs(&reference)?.as_slice() {
                [r] if in_training_range(*r) => *r,
                [r] => return Err(format!("reference {r:?} outside the training range [0,3]x[-1,1]")),
                _ => return Err(format!("--reference needs one `x,y` pair, got `{reference}`")),
            };
            let ctl = controller(kind, &lay, seed).map_err(err)?;
            let dir = lay.eval(ctl.name());
            let rec = evaluate_to(&cfg, &ctl, r, seed, &dir).map_err(err)?;
            print!("{}", summaries_to_csv(&[rec]));
        }
        Cmd::Compare => {
            let single = load_single(&lay, seed).map_err(err)?;
            let bank = load_grid(&lay, seed).map_err(err)?;
            let (table, recs) = compare_controllers(&single, &bank, &cfg.references, &[seed], &cfg.plant, &cfg.reward)
                .map_err(|e| e.to_string())?;
            let csv = table.to_csv();
            write(&lay.rl(seed).join("compare.csv"), &csv)?;
            write(&lay.rl(seed).join("summary.csv"), &summaries_to_csv(&recs))?;
            print!("{csv}");
        }
        Cmd::Plot { controller: kind } => {
            let name = match kind {
                Kind::Single => "single",
                Kind::Grid => "grid",
                Kind::Random => "random",
            };
            for p in plot_from(&lay.eval(name)).map_err(err)? {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Pipeline => {
            let report = run_pipeline(&cfg, seed, &cli.out, &mut |line| eprintln!("{line}")).map_err(err)?;
            for (s, single, grid) in &report.sizes {
                println!(
                    "seed {s}: single {single} bytes, grid {} bytes over {} policies",
                    grid.iter().sum::<u64>(),
                    grid.len()
                );
            }
            print!("{}", report.overall.to_csv());
            let flagged = report.ordering_failures();
            if !flagged.is_empty() {
                println!("ordering flagged on seeds {flagged:?}");
            }
        }
        Cmd::ShowConfig => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.lines().next().unwrap_or(""));
            ExitCode::FAILURE
        }
    }
}
