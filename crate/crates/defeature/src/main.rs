use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use defeature::config::{Format, RunConfig};
use defeature::output::{self, VtkData};
use defeature::run::{self, PointResult, Snapshot};
use defeature::{mesh_io, presets};

#[derive(Parser)]
#[command(name = "defeature", version, about = "Defeaturing error estimation for 2D Poisson problems")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; without one the result goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format, overriding the configuration.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the simplified-geometry mesh of a configuration, or convert a mesh file.
    Mesh {
        #[arg(long, conflicts_with = "input")]
        config: Option<PathBuf>,
        /// Mesh file in the JSON mesh format.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Solve on the simplified geometry and write the discrete solution.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve, reconstruct the flux and evaluate all estimators.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the study of a configuration (h- or eps-sweep).
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a built-in study.
    #[command(after_help = presets::help())]
    Preset {
        name: String,
        /// Print the configurations instead of running them.
        #[arg(long)]
        print_config: bool,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot set up the thread pool")?;
    }
    let sink = Sink {
        out: cli.out.clone(),
        format: cli.format,
    };
    match &cli.command {
        Command::Mesh { config, input } => {
            let mesh = match (config, input) {
                (Some(c), None) => {
                    let cfg = RunConfig::load(c)?;
                    let s = cfg.scenario(cfg.points()[0])?;
                    run::load_mesh(&s)?.0
                }
                (None, Some(i)) => mesh_io::read_mesh(i)?,
                _ => bail!("give either --config or --input"),
            };
            sink.emit("mesh", &[Format::Json], |f| match f {
                Format::Json => Ok(mesh_io::mesh_to_json(&mesh)),
                Format::Vtk => Ok(output::vtk(&mesh, "mesh", &[])),
                Format::Csv => bail!("meshes are written as json or vtk"),
            })
        }
        Command::Solve { config } => {
            let cfg = RunConfig::load(config)?;
            let snap = run::solve_only(&cfg)?;
            sink.emit(&format!("{}-solution", cfg.run_id), &[Format::Csv], |f| match f {
                Format::Csv => Ok(output::field_csv(&snap.mesh, &snap.u)),
                Format::Json => Ok(serde_json::to_string(&mesh_io::FieldFile { values: snap.u.clone() })?),
                Format::Vtk => Ok(snapshot_vtk(&snap, &cfg.run_id)),
            })
        }
        Command::Estimate { config } => {
            let cfg = RunConfig::load(config)?;
            let result = run::run_single(&cfg)?;
            emit_results(&sink, &cfg, &cfg.run_id, std::slice::from_ref(&result))
        }
        Command::Sweep { config } => {
            let cfg = RunConfig::load(config)?;
            let keep = wants_vtk(&sink, &cfg);
            let results = run::run_sweep(&cfg, keep)?;
            emit_results(&sink, &cfg, &cfg.run_id, &results)
        }
        Command::Preset { name, print_config } => {
            let cfgs = presets::preset(name)?;
            if *print_config {
                let docs: Vec<&RunConfig> = cfgs.iter().collect();
                println!("{}", serde_json::to_string_pretty(&docs)?);
                return Ok(());
            }
            let keep = wants_vtk(&sink, &cfgs[0]);
            let mut results = Vec::new();
            for cfg in &cfgs {
                results.extend(run::run_sweep(cfg, keep)?);
            }
            emit_results(&sink, &cfgs[0], name, &results)
        }
    }
}

struct Sink {
    out: Option<PathBuf>,
    format: Option<Format>,
}

impl Sink {
    fn formats(&self, configured: &[Format]) -> Vec<Format> {
        match self.format {
            Some(f) => vec![f],
            None => configured.to_vec(),
        }
    }

    /// Writes `<dir>/<name>.<ext>` per format, or the first format to stdout.
    fn emit(&self, name: &str, default: &[Format], render: impl Fn(Format) -> Result<String>) -> Result<()> {
        let formats = self.formats(default);
        match &self.out {
            None => {
                let text = render(formats[0])?;
                match std::io::stdout().lock().write_all(text.as_bytes()) {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                    _ => Ok(()),
                }
            }
            Some(dir) => {
                for f in formats {
                    output::write(&dir.join(format!("{name}.{}", ext(f))), &render(f)?)?;
                }
                Ok(())
            }
        }
    }
}

fn ext(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Json => "json",
        Format::Vtk => "vtk",
    }
}

fn wants_vtk(sink: &Sink, cfg: &RunConfig) -> bool {
    sink.formats(&cfg.outputs.formats).contains(&Format::Vtk)
}

fn snapshot_vtk(s: &Snapshot, title: &str) -> String {
    output::vtk(
        &s.mesh,
        title,
        &[
            VtkData::PointScalar("u", &s.u),
            VtkData::CellVector("sigma", &s.sigma),
            VtkData::CellScalar("eta_0", &s.eta_0),
        ],
    )
}

fn emit_results(sink: &Sink, cfg: &RunConfig, name: &str, results: &[PointResult]) -> Result<()> {
    let ids: Vec<usize> = cfg.features.iter().map(|f| f.id).collect();
    let reports: Vec<_> = results.iter().map(|r| r.report.clone()).collect();
    let sink = Sink {
        out: sink.out.clone().or_else(|| cfg.outputs.dir.clone()),
        format: sink.format,
    };
    let formats = sink.formats(&cfg.outputs.formats);
    if formats.contains(&Format::Vtk) {
        let Some(dir) = &sink.out else {
            bail!("vtk output needs an output directory");
        };
        for r in results {
            if let Some(s) = &r.snapshot {
                output::write(&dir.join(format!("{}.vtk", r.report.run_id)), &snapshot_vtk(s, &r.report.run_id))?;
            }
        }
    }
    let tabular: Vec<Format> = formats.into_iter().filter(|f| *f != Format::Vtk).collect();
    if tabular.is_empty() {
        return Ok(());
    }
    let tab = Sink {
        out: sink.out.clone(),
        format: None,
    };
    tab.emit(name, &tabular, |f| match f {
        Format::Csv => Ok(output::csv_table(&reports, &ids)),
        Format::Json if reports.len() == 1 => Ok(output::report_to_json(&reports[0])),
        Format::Json => Ok(output::reports_to_json(&reports)),
        Format::Vtk => unreachable!(),
    })
}
