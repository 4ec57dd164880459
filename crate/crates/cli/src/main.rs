//! `photostyle`: one-shot photorealistic color style transfer from the
//! command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use photostyle_core::{
    export_abundance, load_checkpoint, load_image, pipeline, save_checkpoint, save_image,
    stylize, Checkpoint, Error, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "photostyle",
    about = "One-shot photorealistic color style transfer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct HyperParams {
    /// Sparsity weight on the abundance entropy term
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight on the mutual-information term
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Weight decay on the decoder parameters
    #[arg(long, default_value_t = 1e-5)]
    mu: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Maximum training iterations
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Early-stop patience (iterations without relative improvement)
    #[arg(long, default_value_t = 200)]
    patience: usize,
    /// Relative reconstruction improvement that resets the patience counter
    #[arg(long, default_value_t = 1e-4)]
    min_rel_improvement: f64,
    /// Longest image side used during training
    #[arg(long, default_value_t = 256)]
    train_size: usize,
    /// Eigenvalue regularizer inside the whitening transform
    #[arg(long, default_value_t = 1e-5)]
    eps_wct: f64,
    /// RNG seed for parameter initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HyperParams {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            mu: self.mu,
            learning_rate: self.lr,
            max_iters: self.max_iters,
            patience: self.patience,
            min_rel_improvement: self.min_rel_improvement,
            train_max_side: self.train_size,
            eps_wct: self.eps_wct,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on a content/style pair and write the stylized content image
    Stylize {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperParams,
        /// Persist the trained model
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
        /// Reuse a trained model instead of training
        #[arg(long)]
        load_checkpoint: Option<PathBuf>,
        /// Stream per-iteration loss terms as CSV
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Clamp and renormalize transferred abundance rows to the simplex
        #[arg(long, default_value_t = false)]
        renormalize_wct: bool,
    },
    /// Train on a content/style pair and save the checkpoint
    Train {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        save_checkpoint: PathBuf,
        #[command(flatten)]
        hyper: HyperParams,
        /// Stream per-iteration loss terms as CSV
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Export the per-basis abundance maps of an image as grayscale PNGs
    Abundance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Image { .. } | Error::Format(_) | Error::Checkpoint(_) => 2,
        Error::Shape(_)
        | Error::Domain(_)
        | Error::Numerical(_)
        | Error::NonFiniteLoss { .. } => 3,
    }
}

fn open_csv(path: &PathBuf) -> Result<BufWriter<File>, Error> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    writeln!(w, "iter,recon_l21,sparse_h,mi,weight_decay,total").map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(w)
}

fn run_training(
    content_path: &PathBuf,
    style_path: &PathBuf,
    cfg: &TrainConfig,
    loss_csv: Option<&PathBuf>,
) -> Result<Checkpoint, Error> {
    let content = load_image(content_path)?;
    let style = load_image(style_path)?;
    let mut csv = loss_csv.map(open_csv).transpose()?;
    let ckpt = pipeline::train_traced(&content, &style, cfg, |iter, bd| {
        if iter % 100 == 0 {
            eprintln!(
                "iter {iter:5}  recon {:.5}  sparse {:.4}  mi {:.5}  wd {:.4}  total {:.5}",
                bd.recon_l21, bd.sparse_h, bd.mi, bd.weight_decay, bd.total
            );
        }
        if let Some(w) = csv.as_mut() {
            let _ = writeln!(
                w,
                "{iter},{},{},{},{},{}",
                bd.recon_l21, bd.sparse_h, bd.mi, bd.weight_decay, bd.total
            );
        }
    })?;
    eprintln!(
        "trained {} iterations; best recon {:.5}",
        ckpt.iterations, ckpt.final_loss.recon_l21
    );
    Ok(ckpt)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Stylize {
            content,
            style,
            out,
            hyper,
            save_checkpoint: save_path,
            load_checkpoint: load_path,
            loss_csv,
            renormalize_wct,
        } => {
            let ckpt = match load_path {
                Some(path) => load_checkpoint(path)?,
                None => run_training(&content, &style, &hyper.config(), loss_csv.as_ref())?,
            };
            if let Some(path) = save_path {
                save_checkpoint(&ckpt, path)?;
            }
            let content_img = load_image(&content)?;
            let style_img = load_image(&style)?;
            let result = stylize(&ckpt, &content_img, &style_img, renormalize_wct)?;
            save_image(&result, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Train {
            content,
            style,
            save_checkpoint: save_path,
            hyper,
            loss_csv,
        } => {
            let ckpt = run_training(&content, &style, &hyper.config(), loss_csv.as_ref())?;
            save_checkpoint(&ckpt, &save_path)?;
            eprintln!("wrote {}", save_path.display());
        }
        Command::Abundance {
            checkpoint,
            image,
            out_dir,
        } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let img = load_image(&image)?;
            let maps = export_abundance(&ckpt, &img)?;
            std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
                path: out_dir.clone(),
                source,
            })?;
            for (i, map) in maps.scaled.iter().enumerate() {
                let path = out_dir.join(format!("abundance_{i:02}.png"));
                photostyle_core::imageio::save_grayscale(map, maps.height, maps.width, &path)?;
            }
            eprintln!("wrote {} maps to {}", maps.scaled.len(), out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
