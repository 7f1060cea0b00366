//! Desk-scale experiments: lambda sweep and end-to-end versus
//! post-processing comparison.

use std::time::Instant;

use bdseg_core::contour::reconstruct_mask;
use bdseg_core::metrics::{evaluate, overlap_metrics, MeanStd, MetricsReport};
use bdseg_core::nets::{train, Model, TrainMode, TrainOutcome};
use bdseg_core::raster::{BinaryMask, Raster};
use bdseg_core::synth::gen_range;
use bdseg_core::tps::{augment_dataset, LabeledImage};
use bdseg_core::Error;

use crate::config::RunConfig;
use crate::dataset::{numbered, Named};
use crate::pool::par_map;
use crate::CliResult;

pub const ABLATION_LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Synthetic training and held-out sets; the test shapes use generator
/// indices after the training ones.
pub fn synth_split(cfg: &RunConfig) -> (Vec<Named>, Vec<Named>) {
    let p = cfg.shape();
    let train = gen_range(&p, 0, cfg.n_train as u64);
    let test = gen_range(&p, cfg.n_train as u64, cfg.n_test as u64);
    (numbered(train, 0), numbered(test, cfg.n_train))
}

pub fn training_items(cfg: &RunConfig, train: &[Named]) -> CliResult<Vec<LabeledImage>> {
    let items: Vec<LabeledImage> = train.iter().map(|n| n.item.clone()).collect();
    if cfg.augment {
        Ok(augment_dataset(&items)?)
    } else {
        Ok(items)
    }
}

pub fn fit(cfg: &RunConfig, train_set: &[Named], validation: &[Named]) -> CliResult<TrainOutcome> {
    let items = training_items(cfg, train_set)?;
    let val: Vec<LabeledImage> = validation.iter().map(|n| n.item.clone()).collect();
    Ok(train(&cfg.train, &items, &val)?)
}

/// Post-processing path: regression output, then decode, thinning,
/// spanning tree and fill. `None` when nothing usable was decoded.
pub fn post_process_mask(model: &Model, item: &LabeledImage) -> CliResult<Option<BinaryMask>> {
    let d = model.predict_distance_any(&item.image)?;
    match reconstruct_mask(&d) {
        Ok(m) => Ok(Some(m)),
        Err(Error::NoBoundary | Error::Domain(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub lambda: f64,
    pub dice: MeanStd,
    /// Over images whose reconstruction produced a mask.
    pub md: MeanStd,
    pub failed: usize,
}

/// Reports for each test item; `None` where reconstruction failed.
pub fn evaluate_post(model: &Model, test: &[Named], jobs: usize) -> CliResult<Vec<Option<MetricsReport>>> {
    par_map(jobs, test, |n| -> CliResult<Option<MetricsReport>> {
        match post_process_mask(model, &n.item)? {
            Some(m) if !m.is_empty() => Ok(Some(evaluate(&m, &n.item.mask)?)),
            _ => Ok(None),
        }
    })
    .into_iter()
    .collect()
}

fn ablation_row(lambda: f64, reports: &[Option<MetricsReport>]) -> AblationRow {
    let dice: Vec<f64> = reports.iter().map(|r| r.map_or(0.0, |r| r.dice)).collect();
    let md: Vec<f64> = reports.iter().flatten().map(|r| r.mean_distance).collect();
    AblationRow {
        lambda,
        dice: MeanStd::of(&dice),
        md: MeanStd::of(&md),
        failed: reports.iter().filter(|r| r.is_none()).count(),
    }
}

/// Train a boundary network per lambda and score its reconstructions. A
/// failed reconstruction scores Dice 0 and is left out of the distance.
pub fn ablate_lambda(cfg: &RunConfig, train_set: &[Named], test: &[Named], jobs: usize) -> CliResult<Vec<AblationRow>> {
    let items = training_items(cfg, train_set)?;
    ABLATION_LAMBDAS
        .iter()
        .map(|&lambda| {
            let mut tc = cfg.train.clone();
            tc.lambda = lambda;
            tc.mode = TrainMode::BoundaryOnly;
            let out = train(&tc, &items, &[])?;
            Ok(ablation_row(lambda, &evaluate_post(&out.model, test, jobs)?))
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("lambda,dice,md,failed,default\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{}\n",
            r.lambda,
            r.dice,
            r.md,
            r.failed,
            if r.lambda == DEFAULT_LAMBDA { "yes" } else { "" }
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub end_to_end_dice: Vec<f64>,
    pub post_dice: Vec<f64>,
    /// Mean seconds per image at the test resolution.
    pub end_to_end_secs: f64,
    pub post_secs: f64,
    /// Mean seconds per image on inputs resized to `timing_size`.
    pub end_to_end_secs_large: f64,
    pub post_secs_large: f64,
    pub timing_size: usize,
}

fn time_paths(model: &Model, items: &[LabeledImage]) -> CliResult<(Vec<f64>, Vec<f64>, f64, f64)> {
    let (mut e2e, mut post) = (Vec::new(), Vec::new());
    let (mut t_e2e, mut t_post) = (0.0, 0.0);
    for it in items {
        let t = Instant::now();
        let m = model.predict_mask_any(&it.image)?;
        t_e2e += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let p = post_process_mask(model, it)?;
        t_post += t.elapsed().as_secs_f64();
        e2e.push(overlap_metrics(&m, &it.mask)?.dice);
        post.push(match p {
            Some(p) => overlap_metrics(&p, &it.mask)?.dice,
            None => 0.0,
        });
    }
    let n = items.len().max(1) as f64;
    Ok((e2e, post, t_e2e / n, t_post / n))
}

/// Dice and per-image wall time of both mask extraction paths, run
/// sequentially so the timings are not disturbed by other work.
pub fn compare_paths(model: &Model, test: &[Named], timing_size: usize) -> CliResult<PathReport> {
    let items: Vec<LabeledImage> = test.iter().map(|n| n.item.clone()).collect();
    let (e2e, post, te, tp) = time_paths(model, &items)?;
    let large: Vec<LabeledImage> = items
        .iter()
        .map(|it| LabeledImage {
            image: it.image.resize(timing_size, timing_size),
            mask: it.mask.resize(timing_size, timing_size),
        })
        .collect();
    let (_, _, tel, tpl) = time_paths(model, &large)?;
    Ok(PathReport {
        end_to_end_dice: e2e,
        post_dice: post,
        end_to_end_secs: te,
        post_secs: tp,
        end_to_end_secs_large: tel,
        post_secs_large: tpl,
        timing_size,
    })
}

pub fn paths_csv(r: &PathReport) -> String {
    format!(
        "path,dice,secs_per_image,secs_per_image_{s}\nend-to-end,{},{:.6},{:.6}\npost-processing,{},{:.6},{:.6}\n",
        MeanStd::of(&r.end_to_end_dice),
        r.end_to_end_secs,
        r.end_to_end_secs_large,
        MeanStd::of(&r.post_dice),
        r.post_secs,
        r.post_secs_large,
        s = r.timing_size,
    )
}
