use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pixelnn::pipeline::{Selection, Stage1Kind, SynthesisRequest, DEFAULT_KS, DEFAULT_TS};
use pixelnn::{DescriptorConfig, ExemplarDatabase};
use pixelnn_cli::{dataset, eval, init_threads, service, synthesize_files};

#[derive(Parser)]
#[command(
    name = "pixelnn",
    version,
    about = "Nearest-neighbor image synthesis by per-pixel residual transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage1Arg {
    BicubicSr,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectArg {
    All,
    Oracle,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Build a database from `<name>.target.png` + `<name>.regressed.png` (or `.input.png`) pairs.
    Build {
        dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value_t = 1)]
        patch_radius: usize,
    },
    /// Generate the candidate grid for one input image.
    Synthesize {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "bicubic-sr")]
        stage1: Stage1Arg,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        t_list: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "all")]
        select: SelectArg,
        #[arg(long, value_delimiter = ',')]
        tags: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<u32>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth image; adds PSNR to the manifest and enables `--select oracle`.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Query descriptor tensor, for databases built from external fields.
        #[arg(long)]
        query_field: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a candidate directory against ground truth.
    Eval {
        dir: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        gt_normals: Option<PathBuf>,
        #[arg(long)]
        gt_edges: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON-lines output; defaults to `<dir>/report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads()?;
    match Cli::parse().command {
        Command::Build {
            dir,
            out,
            levels,
            patch_radius,
        } => {
            let db = dataset::build_database(&dir, &DescriptorConfig::new(levels, patch_radius))?;
            db.save(&out)?;
            let (w, h) = db.image_size();
            println!(
                "N={} dims={}x{} D={}",
                db.len(),
                w,
                h,
                db.descriptor().dim()
            );
        }
        Command::Synthesize {
            db,
            input,
            stage1,
            k_list,
            t_list,
            select,
            tags,
            ids,
            seed,
            gt,
            query_field,
            out,
        } => {
            let db = ExemplarDatabase::load(&db)?;
            let request = SynthesisRequest {
                stage1: match stage1 {
                    Stage1Arg::BicubicSr => Stage1Kind::BicubicSr,
                    Stage1Arg::External => Stage1Kind::External,
                },
                ids,
                tags,
                ks: k_list.unwrap_or_else(|| DEFAULT_KS.to_vec()),
                ts: t_list.unwrap_or_else(|| DEFAULT_TS.to_vec()),
                seed,
                select: match select {
                    SelectArg::All => Selection::All,
                    SelectArg::Oracle => Selection::Oracle,
                    SelectArg::Random => Selection::Random,
                },
            };
            let outcome =
                synthesize_files(&db, &request, &input, query_field.as_deref(), gt.as_deref())?;
            outcome.write_to(&out)?;
            for c in outcome.selected_candidates() {
                println!("{}", pixelnn::pipeline::candidate_stem(c));
            }
        }
        Command::Eval {
            dir,
            gt,
            gt_normals,
            gt_edges,
            seed,
            report,
        } => {
            let r =
                eval::evaluate_dir(&dir, &gt, gt_normals.as_deref(), gt_edges.as_deref(), seed)?;
            let path = report.unwrap_or_else(|| dir.join("report.jsonl"));
            std::fs::write(&path, r.to_json_lines())
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{}", r.table());
        }
        Command::Serve { db, port, host } => {
            let db = ExemplarDatabase::load(&db)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(db, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}
