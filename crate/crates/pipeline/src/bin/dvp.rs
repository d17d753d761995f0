use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use portrait_core::reconstruction::read_parameter_sequence;
use portrait_net::read_weights;
use portrait_pipeline::commands::{self, frame_size};
use portrait_pipeline::dataset::{load_basis, require};
use portrait_pipeline::service::{serve, Editor, EditorInputs};
use portrait_pipeline::{ProjectConfig, Result};
use serde::Serialize;

/// Portrait reenactment pipeline.
#[derive(Parser)]
#[command(name = "dvp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic portrait video with known parameters.
    Synth {
        /// Scene and project settings; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Track face parameters through the frame directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Move a source performance onto a target sequence.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the rendering-to-video network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Synthesize frames for a parameter sequence.
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the fitted sequence.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error reports against the project's frames.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Frame directory to score.
        #[arg(long, required_unless_present = "self_reenactment")]
        predictions: Option<PathBuf>,
        #[arg(long, default_value = "predictions")]
        label: String,
        /// Run the self-reenactment protocol over the configured window
        /// sizes instead.
        #[arg(long, conflicts_with = "predictions")]
        self_reenactment: bool,
    },
    /// Run the editor service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Serve conditioning previews only.
        #[arg(long)]
        no_network: bool,
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn print(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            config,
            out,
            frames,
            seed,
            size,
        } => {
            let mut cfg = match config {
                Some(p) => ProjectConfig::load(p)?,
                None => ProjectConfig::default(),
            };
            cfg.scene.frames = frames.unwrap_or(cfg.scene.frames);
            cfg.scene.seed = seed.unwrap_or(cfg.scene.seed);
            cfg.scene.size = size.unwrap_or(cfg.scene.size);
            cfg.validate()?;
            print(&commands::synth(&cfg, &out)?)
        }
        Command::Fit { config } => print(&commands::fit(&ProjectConfig::load(config)?)?),
        Command::Transfer {
            config,
            source,
            target,
            out,
        } => print(&commands::transfer(
            &ProjectConfig::load(config)?,
            &source,
            &target,
            &out,
        )?),
        Command::Train { config, iterations } => {
            let mut cfg = ProjectConfig::load(config)?;
            cfg.train.iterations = iterations.unwrap_or(cfg.train.iterations);
            print(&commands::train_network(&cfg)?)
        }
        Command::Infer {
            config,
            params,
            weights,
            out,
        } => {
            let cfg = ProjectConfig::load(config)?;
            let params = params.unwrap_or_else(|| cfg.params_path());
            let weights = weights.unwrap_or_else(|| cfg.weights_path());
            print(&commands::infer(&cfg, &params, &weights, &out)?)
        }
        Command::Evaluate {
            config,
            predictions,
            label,
            self_reenactment,
        } => {
            let cfg = ProjectConfig::load(config)?;
            match predictions {
                Some(p) if !self_reenactment => print(&commands::evaluate(&cfg, &p, &label)?),
                _ => print(&commands::evaluate_self_reenactment(&cfg)?),
            }
        }
        Command::Serve {
            config,
            params,
            weights,
            no_network,
            frame,
            port,
        } => {
            let cfg = ProjectConfig::load(config)?;
            let editor = start_editor(&cfg, params.as_deref(), weights.as_deref(), no_network, frame)?;
            let addr = (cfg.service.bind, port.unwrap_or(cfg.service.port)).into();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(editor, addr))
        }
    }
}

fn start_editor(
    cfg: &ProjectConfig,
    params: Option<&Path>,
    weights: Option<&Path>,
    no_network: bool,
    frame: Option<usize>,
) -> Result<Editor> {
    let basis = load_basis(cfg)?;
    let params = params.map(Path::to_path_buf).unwrap_or_else(|| cfg.params_path());
    require(&params, "parameter sequence")?;
    let sequence = read_parameter_sequence(&params)?;
    let size = frame_size(cfg)?;
    let generator = if no_network {
        None
    } else {
        let w = weights.map(Path::to_path_buf).unwrap_or_else(|| cfg.weights_path());
        require(&w, "weights")?;
        Some(read_weights(&w)?.generator)
    };
    let inputs = EditorInputs {
        cam: cfg.camera.intrinsics(size, size)?,
        basis,
        sequence,
        frame: frame.unwrap_or(cfg.service.frame),
        window_size: cfg.network.window_size,
        generator,
    };
    Editor::start(inputs, Some(&cfg.request_log_path()))
}

fn fail(code: &str, message: &str) -> ExitCode {
    let one_line = serde_json::to_string(message).unwrap_or_else(|_| "\"?\"".into());
    eprintln!("error code={code} message={one_line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let summary: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return fail("E_USAGE", summary.join(" ").trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string()),
    }
}
