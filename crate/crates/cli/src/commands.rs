use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use dcc_core::data::{export_directory, load_directory, synthetic_dataset, Dataset, Image, ImageFormat, SynthConfig};
use dcc_core::eval::{evaluate_model, Protocol};
use dcc_core::gradcheck::{run_suite, Block, SuiteOptions};
use dcc_core::train::{Checkpoint, RunOptions, Trainer};
use log::{info, warn};

use crate::config::{RunConfig, Stages};
use crate::{DataArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs, VizArgs};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

/// Tags an error with the exit code of the phase it came from.
trait Phase<T> {
    fn usage(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn usage(self) -> Outcome<T> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure { code: 3, error: e.into() })
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_data_args(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(p) = &a.data {
        cfg.data.path = Some(p.clone());
    }
    if a.synthetic {
        cfg.data.path = None;
    }
    if let Some(v) = a.ids {
        cfg.data.ids = v;
    }
    if let Some(v) = a.views {
        cfg.data.views = v;
    }
    if let Some(v) = a.holdout {
        cfg.data.holdout = v;
    }
    if let Some(v) = a.data_seed {
        cfg.data.seed = Some(v);
    }
}

/// Full dataset split into training and held-out identities. With no
/// holdout both halves are the whole set.
fn build_dataset(cfg: &RunConfig) -> anyhow::Result<(Dataset, Dataset)> {
    let side = cfg.data_side();
    let data = match &cfg.data.path {
        Some(root) => {
            let loaded = load_directory(root, side)?;
            for w in &loaded.warnings {
                warn!("{w}");
            }
            if !loaded.warnings.is_empty() {
                eprintln!("skipped {} unreadable file(s) under {}", loaded.warnings.len(), root.display());
            }
            loaded.dataset
        }
        None => synthetic_dataset(&SynthConfig {
            ids: cfg.data.ids,
            views: cfg.data.views,
            side,
            seed: cfg.data_seed(),
        })?,
    };
    if cfg.data.holdout == 0 {
        return Ok((data.clone(), data));
    }
    let n = data.num_identities();
    if cfg.data.holdout >= n {
        bail!("holdout of {} identities leaves none of {n} for training", cfg.data.holdout);
    }
    Ok(data.split_identities(n - cfg.data.holdout))
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref()).usage()?;
    apply_data_args(&mut cfg, &a.data);
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.epoch_episodes {
        cfg.train.epoch_episodes = v;
    }
    if let Some(h) = &a.head {
        cfg.train.model.head = h.parse().usage()?;
    }
    if let Some(v) = a.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = a.stop_accuracy {
        cfg.stop_accuracy = Some(v);
    }
    if let Some(v) = a.accuracy_window {
        cfg.accuracy_window = Some(v);
    }
    if let Some(v) = a.time_limit {
        cfg.time_limit = Some(v);
    }
    if let Some(v) = a.log_every {
        cfg.log_every = v;
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if a.config.is_none() && !a.data.synthetic && a.data.data.is_none() && a.resume.is_none() {
        return Err(anyhow!("give --synthetic, --data DIR or a config with data.path")).usage();
    }
    cfg.resolve_seed(a.seed).usage()?;
    cfg.validate().usage()?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ck = Checkpoint::load(path).usage()?;
            if let Some(e) = a.epochs {
                ck.config.epochs = e;
            }
            if ck.config.model != cfg.train.model && cfg.model_keys {
                return Err(anyhow!("{} was trained with a different model config", path.display())).usage();
            }
            cfg.train = ck.config.clone();
            Trainer::from_checkpoint(&ck).usage()?
        }
        None => Trainer::new(cfg.train.clone()).usage()?,
    };
    let (train_set, _) = build_dataset(&cfg).usage()?;
    let classes = cfg.train.model.classes;
    if train_set.num_identities() < classes {
        return Err(anyhow!(
            "episodes need {classes} identities but only {} are available for training",
            train_set.num_identities()
        ))
        .usage();
    }
    if a.resume.is_none() {
        let stale = cfg.out.join("metrics.csv");
        if stale.exists() {
            fs::remove_file(&stale).with_context(|| format!("cannot replace {}", stale.display())).usage()?;
        }
    }

    let m = &cfg.train.model;
    println!(
        "training {} head: {} identities, {} images | H={} glimpses={} K={} stem {} | batch {} lr {} | {} steps/epoch × {} epochs",
        m.head,
        train_set.num_identities(),
        train_set.samples.len(),
        m.comparator.hidden,
        m.comparator.glimpses,
        m.comparator.glimpse.k,
        Stages(&m.encoder.stages),
        cfg.train.batch,
        cfg.train.lr,
        cfg.train.steps_per_epoch(),
        cfg.train.epochs,
    );
    let opts = RunOptions {
        out_dir: Some(cfg.out.clone()),
        max_steps: cfg.max_steps,
        stop_accuracy: cfg.stop_accuracy,
        accuracy_window: cfg.accuracy_window,
        time_limit: cfg.time_limit.map(Duration::from_secs_f64),
    };
    let every = cfg.log_every;
    let start = Instant::now();
    let summary = trainer
        .run(&train_set, &opts, |s| {
            if s.step % every == 0 {
                println!(
                    "step {:>6}  loss {:.4}  acc {:.3}  lr {:.3e}  |g| {:.3}  {:.0}s",
                    s.step,
                    s.loss,
                    s.acc,
                    s.lr,
                    s.grad_norm,
                    start.elapsed().as_secs_f64()
                );
            }
        })
        .runtime()?;
    println!(
        "stopped after {} steps ({:?}) in {:.1}s: last epoch loss {:.4}, accuracy {:.3}",
        summary.steps,
        summary.reason,
        summary.elapsed.as_secs_f64(),
        summary.last_loss,
        summary.last_acc
    );
    if let Some(p) = summary.checkpoint {
        println!("checkpoint {}", p.display());
    }
    println!("metrics {}", cfg.out.join("metrics.csv").display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref()).usage()?;
    apply_data_args(&mut cfg, &a.data);
    if let Some(t) = a.trials {
        cfg.eval.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    let ck = Checkpoint::load(&a.checkpoint).usage()?;
    if cfg.model_keys && ck.config.model != cfg.train.model {
        return Err(anyhow!("{} was trained with a different model config", a.checkpoint.display())).usage();
    }
    // images are scored at the checkpoint's input size
    let input = ck.config.model.encoder.input_side;
    if cfg.data.path.is_none() && cfg.data.side.is_some_and(|s| s != input) {
        return Err(anyhow!(
            "data.side {} does not match the checkpoint's {input}-pixel input",
            cfg.data_side()
        ))
        .usage();
    }
    cfg.train = ck.config.clone();
    cfg.validate().usage()?;
    let model = ck.model().usage()?;
    let (_, test_set) = build_dataset(&cfg).usage()?;
    Protocol::single_shot(&test_set, cfg.eval.probe_camera).usage()?;
    if let Some(j) = &a.json {
        if let Some(dir) = j.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).usage()?;
        }
    }

    info!("evaluating {} identities over {} trials", test_set.num_identities(), cfg.eval.trials);
    let result = evaluate_model(&model, &test_set, &cfg.eval).runtime()?;
    print!("{}", result.report(&ck.config.model.head.to_string()));
    if let Some(j) = &a.json {
        result.write_json(j).runtime()?;
        println!("wrote {}", j.display());
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    if !(a.epsilon > 0.0 && a.epsilon < 1.0) {
        return Err(anyhow!("--epsilon must lie in (0, 1), got {}", a.epsilon)).usage();
    }
    let blocks = match &a.perturb_weight {
        Some(w) => vec![Block::for_weight(w).usage()?],
        None => Vec::new(),
    };
    let opts = SuiteOptions { eps: a.epsilon, blocks, corrupt: a.corrupt_gradient, seed: a.seed };
    let start = Instant::now();
    let reports = run_suite(&opts).runtime()?;
    println!("{:<12} {:>12} {:>10} {:>8} {:>8}", "block", "max rel err", "tolerance", "entries", "result");
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passed();
        println!(
            "{:<12} {:>12.3e} {:>10.0e} {:>8} {:>8}",
            r.block.to_string(),
            r.report.max_rel_error,
            r.block.tolerance(),
            r.report.entries,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.block.to_string());
        }
    }
    println!("total {:.2}s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed for: {}", failed.join(", "))).runtime()
    }
}

pub fn glimpse_viz(a: VizArgs) -> Outcome {
    if a.scale == 0 {
        return Err(anyhow!("--scale must be at least 1")).usage();
    }
    let ck = Checkpoint::load(&a.checkpoint).usage()?;
    let model = ck.model().usage()?;
    let mcfg = &ck.config.model;
    if model.comparator().is_none() {
        return Err(anyhow!("the {} head has no glimpse comparator to visualize", mcfg.head)).usage();
    }
    let side = mcfg.encoder.input_side;
    let (img_a, img_b) = match &a.pair {
        Some(p) => {
            let read = |path: &Path| -> anyhow::Result<Image> { Ok(Image::read(path)?.resize(side, side)) };
            (read(&p[0]).usage()?, read(&p[1]).usage()?)
        }
        None => {
            let data = synthetic_dataset(&SynthConfig { ids: a.identity + 1, views: 2, side, seed: a.seed }).usage()?;
            let pick = |cam| {
                data.samples
                    .iter()
                    .find(|s| s.identity == a.identity && s.camera == cam)
                    .map(|s| s.image.clone())
                    .expect("generated")
            };
            (pick(0), pick(1))
        }
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display())).usage()?;

    let fa = model.features(&img_a).runtime()?;
    let fb = model.features(&img_b).runtime()?;
    let steps = model.trajectory(&fa, &fb).runtime()?.expect("comparator checked");
    let written =
        crate::viz::write_overlays(&a.out, &img_a, &img_b, &steps, &mcfg.comparator.glimpse, a.scale).runtime()?;
    println!("wrote {} overlays and trajectory.csv to {}", written, a.out.display());
    Ok(())
}

pub fn synth_data(a: SynthArgs) -> Outcome {
    if a.ids == 0 || a.views == 0 || a.side == 0 {
        return Err(anyhow!("--ids, --views and --side must be at least 1")).usage();
    }
    let format = match a.format.as_str() {
        "ppm" => ImageFormat::Ppm,
        "png" => ImageFormat::Png,
        f => return Err(anyhow!("--format must be ppm or png, got {f}")).usage(),
    };
    let mut cfg = RunConfig::default();
    cfg.resolve_seed(a.seed).usage()?;
    let data = synthetic_dataset(&SynthConfig { ids: a.ids, views: a.views, side: a.side, seed: cfg.seed() })
        .runtime()?;
    export_directory(&data, &a.out, format).runtime()?;
    println!(
        "wrote {} images of {} identities to {}",
        data.samples.len(),
        data.num_identities(),
        a.out.display()
    );
    Ok(())
}
