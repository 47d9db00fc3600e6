use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use segstitch::app::{cmd_segment, cmd_synth, SampleSource, SceneInput, SegmentArgs, WindowMode};
use segstitch::config::RunConfig;
use segstitch::service::{serve, ServiceState};

#[derive(Parser)]
#[command(name = "segstitch", version, about = "Synthetic scenes and sliding-window consensus segmentation")]
struct Cli {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Windows {
    Overlapping,
    Disjoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Resolution {
    Fixed,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum Samples {
    Simulate,
    Files,
}

#[derive(Subcommand)]
enum Command {
    /// Write a train/test set of synthetic scenes with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Segment one scene directory or every scene below it.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "simulate")]
        samples: Samples,
        #[arg(long, value_enum, default_value = "overlapping")]
        windows: Windows,
        #[arg(long, value_enum, default_value = "fixed")]
        resolution: Resolution,
        #[arg(long)]
        gamma: Option<f64>,
        /// Comma-separated resolutions whose community counts are reported.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
    },
    /// Serve the tuning API for one scene directory.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth { out, n_train, n_test } => {
            cfg.synth.n_train = n_train.unwrap_or(cfg.synth.n_train);
            cfg.synth.n_test = n_test.unwrap_or(cfg.synth.n_test);
            let m = cmd_synth(&cfg, &out)?;
            println!("{} scenes, checksum {}", m.scenes.len(), m.checksum);
        }
        Command::Segment { input, out, samples, windows, resolution, gamma, sweep } => {
            if let Some(g) = gamma {
                cfg.segment.gamma = g;
            }
            cfg.validate()?;
            let args = SegmentArgs {
                input,
                out_dir: out,
                samples: match samples {
                    Samples::Simulate => SampleSource::Simulate,
                    Samples::Files => SampleSource::Files,
                },
                windows: match windows {
                    Windows::Overlapping => WindowMode::Overlapping,
                    Windows::Disjoint => WindowMode::Disjoint,
                },
                auto_resolution: matches!(resolution, Resolution::Auto),
                sweep,
            };
            let summary = cmd_segment(&cfg, &args)?;
            for s in &summary.scenes {
                let sweep: Vec<String> = s.sweep.iter().map(|(g, n)| format!("{g}:{n}")).collect();
                println!("{}\tgamma={}\tcount={}\t{}", s.name, s.gamma, s.count, sweep.join(" "));
            }
            if let Some(r) = &summary.report {
                println!("{}", serde_json::to_string_pretty(r)?);
            }
        }
        Command::Serve { scene, port, host } => {
            let input = SceneInput::load(&scene)?;
            let Some(truth) = input.truth else {
                bail!("{} has no labels.png to simulate posteriors from", scene.display());
            };
            let state = ServiceState::new(cfg, input.image, truth)?;
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}/v1");
            rt.block_on(serve(state, addr))?;
        }
    }
    Ok(())
}
