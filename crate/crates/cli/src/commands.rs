use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use bdseg_core::contour::reconstruct_mask;
use bdseg_core::distance_map::{boundary_of_mask, encode_distance_map, heatmap, load_dmap, save_dmap};
use bdseg_core::metrics::{evaluate, summarize, wilcoxon_signed_rank, MetricsReport};
use bdseg_core::nets::{load_model, save_model, TrainOutcome};
use bdseg_core::raster::{load_mask, load_pgm, save_mask, save_pgm};
use bdseg_core::synth::gen_range;
use bdseg_core::tps::augment_dataset;
use bdseg_core::Error;

use crate::config::{keys_help, RunConfig};
use crate::dataset::{numbered, pgm_names, read_dataset, write_dataset, Named};
use crate::experiments::{ablate_lambda, ablation_csv, compare_paths, fit, paths_csv, synth_split};
use crate::pool::par_map;
use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bdseg", version, about = "Boundary-distance segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for per-image evaluation and reconstruction.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic images and masks to DIR/images and DIR/masks.
    #[command(after_help = keys_help())]
    SynthGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of shapes (default: n_train).
        #[arg(long)]
        count: Option<usize>,
        /// First generator index.
        #[arg(long, default_value_t = 0)]
        start: u64,
    },
    /// Expand a dataset with pairwise spline warps and mirror images.
    #[command(after_help = keys_help())]
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a mask as a boundary-distance map.
    #[command(after_help = keys_help())]
    EncodeDist {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decay (default: the `lambda` key).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train both networks and save the model.
    #[command(after_help = keys_help())]
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset (default: synthetic, n_train shapes).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Validation dataset for periodic Dice.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict a distance map and optionally the classifier mask.
    #[command(after_help = keys_help())]
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Recover a mask from a distance map by thinning, spanning tree and fill.
    #[command(after_help = keys_help())]
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decode threshold decay, overriding the one stored in the map.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score predicted masks against ground truth, matched by file name.
    #[command(after_help = keys_help())]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired signed-rank test between two `eval` reports.
    #[command(after_help = keys_help())]
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train boundary networks for lambda in {0.01, 0.1, 1, 10} and score
    /// their reconstructions.
    #[command(after_help = keys_help())]
    AblateLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dice and timing of end-to-end versus post-processed masks.
    #[command(after_help = keys_help())]
    ComparePaths {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a distance map as an 8-bit image.
    #[command(after_help = keys_help())]
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn data_or_synth(dir: Option<&Path>, synth: Vec<Named>) -> CliResult<Vec<Named>> {
    match dir {
        Some(d) => read_dataset(d),
        None => Ok(synth),
    }
}

fn trace_csv(out: &TrainOutcome) -> String {
    let mut s = String::from("step,coef_d,coef_s,loss_d,loss_s,loss_m,val_dice\n");
    let mut val = out.validation.iter().peekable();
    for r in &out.trace {
        let v = match val.peek() {
            Some(&&(step, d)) if step == r.step => {
                val.next();
                format!("{d}")
            }
            _ => String::new(),
        };
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.coef_d, r.coef_s, r.loss_d, r.loss_s, r.loss_m, v
        );
    }
    s
}

pub const EVAL_HEADER: &str = "name,dice,jaccard,precision,sensitivity,md,assd";

pub fn eval_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for (name, r) in rows {
        let v = r.values().map(|x| x.to_string());
        s += &format!("{name},{}\n", v.join(","));
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| *r).collect();
    let summary = summarize(&reports).map(|m| m.to_string());
    s += &format!("mean±std,{}\n", summary.join(","));
    s
}

/// Per-image rows of an `eval` report, without the summary row.
pub fn parse_eval_csv(text: &str) -> CliResult<Vec<(String, [f64; 6])>> {
    let mut lines = text.lines();
    if lines.next() != Some(EVAL_HEADER) {
        return Err(Error::Parse {
            offset: 0,
            detail: format!("expected header `{EVAL_HEADER}`"),
        }
        .into());
    }
    let mut rows = Vec::new();
    let mut offset = EVAL_HEADER.len() + 1;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.first() == Some(&"mean±std") {
            break;
        }
        let bad = || Error::Parse {
            offset,
            detail: format!("malformed row `{line}`"),
        };
        if cells.len() != 7 {
            return Err(bad().into());
        }
        let mut v = [0.0; 6];
        for (k, c) in cells[1..].iter().enumerate() {
            v[k] = c.parse().map_err(|_| bad())?;
        }
        rows.push((cells[0].to_string(), v));
        offset += line.len() + 1;
    }
    Ok(rows)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthGen {
            common,
            out,
            count,
            start,
        } => {
            let cfg = common.load()?;
            let n = count.unwrap_or(cfg.n_train);
            let items = gen_range(&cfg.shape(), start, n as u64);
            write_dataset(&out, &numbered(items, start as usize))
        }
        Command::Augment { common, data, out } => {
            common.load()?;
            let items = read_dataset(&data)?;
            let plain: Vec<_> = items.iter().map(|n| n.item.clone()).collect();
            write_dataset(&out, &numbered(augment_dataset(&plain)?, 0))
        }
        Command::EncodeDist {
            common,
            mask,
            out,
            lambda,
        } => {
            let cfg = common.load()?;
            let m = load_mask(&mask)?;
            let lambda = lambda.unwrap_or(cfg.train.lambda);
            let d = encode_distance_map(&boundary_of_mask(&m)?, m.width, m.height, lambda)?;
            Ok(save_dmap(&d, &out)?)
        }
        Command::Train {
            common,
            data,
            val,
            out,
            trace,
        } => {
            let cfg = common.load()?;
            let (synth_train, _) = synth_split(&cfg);
            let train_set = data_or_synth(data.as_deref(), synth_train)?;
            let val_set = match val {
                Some(v) => read_dataset(&v)?,
                None => Vec::new(),
            };
            let outcome = fit(&cfg, &train_set, &val_set)?;
            save_model(&outcome.model, &out)?;
            if let Some(t) = trace {
                emit(Some(&t), &trace_csv(&outcome))?;
            }
            Ok(())
        }
        Command::Predict {
            common,
            model,
            image,
            out,
            mask_out,
        } => {
            common.load()?;
            let m = load_model(&model)?;
            let img = load_pgm(&image)?;
            save_dmap(&m.predict_distance_any(&img)?, &out)?;
            if let Some(p) = mask_out {
                save_mask(&m.predict_mask_any(&img)?, &p)?;
            }
            Ok(())
        }
        Command::Reconstruct {
            common,
            dmap,
            out,
            lambda,
        } => {
            common.load()?;
            let mut d = load_dmap(&dmap)?;
            if let Some(l) = lambda {
                if !(l > 0.0) {
                    return Err(CliError::Usage(format!("--lambda must be positive, got {l}")));
                }
                d.lambda = l;
            }
            Ok(save_mask(&reconstruct_mask(&d)?, &out)?)
        }
        Command::Eval {
            common,
            pred,
            truth,
            out,
        } => {
            let cfg_jobs = common.jobs;
            common.load()?;
            let names = pgm_names(&truth)?;
            let rows = par_map(cfg_jobs, &names, |name| -> CliResult<(String, MetricsReport)> {
                let p = load_mask(pred.join(format!("{name}.pgm")))?;
                let t = load_mask(truth.join(format!("{name}.pgm")))?;
                Ok((name.clone(), evaluate(&p, &t)?))
            })
            .into_iter()
            .collect::<CliResult<Vec<_>>>()?;
            emit(out.as_deref(), &eval_csv(&rows))
        }
        Command::Compare { common, a, b, out } => {
            common.load()?;
            let read = |p: &Path| -> CliResult<Vec<(String, [f64; 6])>> {
                parse_eval_csv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
            };
            let (ra, rb) = (read(&a)?, read(&b)?);
            let names_a: Vec<&String> = ra.iter().map(|r| &r.0).collect();
            let names_b: Vec<&String> = rb.iter().map(|r| &r.0).collect();
            if names_a != names_b {
                return Err(Error::Domain("reports cover different images".into()).into());
            }
            let mut s = String::from("metric,W,p\n");
            for (k, metric) in MetricsReport::NAMES.iter().enumerate() {
                let xa: Vec<f64> = ra.iter().map(|r| r.1[k]).collect();
                let xb: Vec<f64> = rb.iter().map(|r| r.1[k]).collect();
                let w = wilcoxon_signed_rank(&xa, &xb)?;
                s += &format!("{metric},{},{}\n", w.statistic, w.p_two_sided);
            }
            emit(out.as_deref(), &s)
        }
        Command::AblateLambda {
            common,
            data,
            test,
            out,
        } => {
            let cfg = common.load()?;
            let (st, ss) = synth_split(&cfg);
            let train_set = data_or_synth(data.as_deref(), st)?;
            let test_set = data_or_synth(test.as_deref(), ss)?;
            let rows = ablate_lambda(&cfg, &train_set, &test_set, common.jobs)?;
            emit(out.as_deref(), &ablation_csv(&rows))
        }
        Command::ComparePaths {
            common,
            model,
            test,
            out,
        } => {
            let cfg = common.load()?;
            let m = load_model(&model)?;
            let test_set = data_or_synth(test.as_deref(), synth_split(&cfg).1)?;
            let r = compare_paths(&m, &test_set, cfg.timing_size)?;
            emit(out.as_deref(), &paths_csv(&r))
        }
        Command::Heatmap { common, dmap, out } => {
            common.load()?;
            Ok(save_pgm(&heatmap(&load_dmap(&dmap)?), &out)?)
        }
    }
}
