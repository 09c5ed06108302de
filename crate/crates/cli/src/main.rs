use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prince_core::harness::metrics::AMP_DCNN;
use prince_core::harness::pipeline::Phase;
use prince_core::harness::{
    emit_reports, evaluate_network, generate_dataset, prune_stage, run_baselines, run_prince, train_refiner, Dataset,
    ExperimentConfig, MetricsRecord,
};
use prince_core::io::{load_model, save_model, write_file};
use prince_core::nn::{set_parallel, EpochLog, Network, NetworkSpec, TrainLog};
use prince_core::slimming::{count_macs, count_params, refine, LayerShape};

#[derive(Parser)]
#[command(
    name = "prince",
    version,
    about = "Channel estimation experiments: AMP, CNN refinement and pruning"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sequential execution and zeroed wall times, for byte-identical output.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset file from `gen-dataset`; generated from the config when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize channels, observations and AMP estimates.
    GenDataset,
    /// AMP, OMP and LMMSE on the test split.
    RunBaselines(DatasetArg),
    /// Train the refiner with L1 pressure on the BN scales.
    Train(DatasetArg),
    /// Prune a trained model.
    Prune {
        #[arg(long)]
        model: PathBuf,
        /// Pruning ratio; defaults to the first configured ratio.
        #[arg(long)]
        ratio: Option<f64>,
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Fine-tune a pruned model without L1 pressure.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Test-split NMSE of a model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Method label in the metrics files.
        #[arg(long, default_value = AMP_DCNN)]
        name: String,
        #[command(flatten)]
        data: DatasetArg,
    },
    /// Parameter and MAC counts.
    Audit {
        /// Audit a saved model instead of the configured architecture.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Extra input sizes as HxW, e.g. 16x64.
        #[arg(long = "dims", value_parser = parse_dims)]
        dims: Vec<(usize, usize)>,
    },
    /// Baselines, training, pruning at every ratio, refining and reports.
    RunPrince(DatasetArg),
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = h.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let w = w.trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((h, w))
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    deterministic: bool,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.output_dir = o.clone();
        }
        Ok(Self {
            out: cfg.output_dir.clone(),
            cfg,
            deterministic: common.deterministic,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self, arg: &DatasetArg) -> Result<Dataset> {
        match &arg.dataset {
            Some(p) => Dataset::load(p).with_context(|| format!("loading {}", p.display())),
            None => {
                eprintln!("generating {} samples", self.cfg.total_samples());
                Ok(generate_dataset(&self.cfg)?)
            }
        }
    }

    fn finish(&self, mut records: Vec<MetricsRecord>) -> Vec<MetricsRecord> {
        if self.deterministic {
            records.iter_mut().for_each(|r| r.seconds = 0.0);
        }
        records
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        write_file(&self.path(name), text.as_bytes())?;
        Ok(())
    }

    fn write_config(&self) -> Result<()> {
        write_file(&self.path("config.conf"), self.cfg.to_text().as_bytes())?;
        Ok(())
    }
}

fn print_epoch(tag: &str, e: &EpochLog) {
    match e.test_loss {
        Some(t) => eprintln!("[{tag}] epoch {:>3}  train {:.5}  test {:.5}", e.epoch, e.train_loss, t),
        None => eprintln!("[{tag}] epoch {:>3}  train {:.5}", e.epoch, e.train_loss),
    }
}

fn print_records(records: &[MetricsRecord]) {
    for r in records {
        let row: Vec<String> = r
            .points
            .iter()
            .map(|p| format!("{}:{:.2}", p.snr_db, p.nmse_db))
            .collect();
        println!("{:<14} NMSE dB by SNR  {}", r.method, row.join("  "));
    }
}

fn audit(ctx: &Ctx, model: Option<&Path>, extra: &[(usize, usize)]) -> Result<()> {
    let spec: NetworkSpec = match model {
        Some(p) => load_model::<f32>(p)?.spec(),
        None => ctx.cfg.network.clone(),
    };
    let layers: Vec<LayerShape> = spec.layers();
    let params = count_params(&layers);
    let mut dims = vec![(ctx.cfg.system.n_r(), ctx.cfg.system.n_t())];
    for d in extra {
        if !dims.contains(d) {
            dims.push(*d);
        }
    }
    let macs: Vec<serde_json::Value> = dims
        .iter()
        .map(|&(h, w)| serde_json::json!({ "height": h, "width": w, "macs": count_macs(&layers, h, w) }))
        .collect();
    println!("params {}", params.total);
    for m in &macs {
        println!("macs at {}x{}: {}", m["height"], m["width"], m["macs"]);
    }
    ctx.write_json(
        "audit.json",
        &serde_json::json!({
            "params": params.total,
            "per_layer": params.per_layer,
            "macs": macs,
        }),
    )
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    if ctx.deterministic {
        set_parallel(false);
    }
    let cfg = &ctx.cfg;
    match &cli.command {
        Command::GenDataset => {
            let ds = generate_dataset(cfg)?;
            ds.save(&ctx.path("dataset.prnc"))?;
            ctx.write_config()?;
            println!(
                "{} samples ({} train, {} test) -> {}",
                ds.len(),
                ds.train.len(),
                ds.test.len(),
                ctx.path("dataset.prnc").display()
            );
        }
        Command::RunBaselines(d) => {
            let ds = ctx.dataset(d)?;
            let records = ctx.finish(run_baselines(cfg, &ds)?);
            emit_reports(&records, &[], &ctx.out)?;
            print_records(&records);
        }
        Command::Train(d) => {
            let ds = ctx.dataset(d)?;
            let (net, log) = train_refiner(cfg, &ds, |e| print_epoch("train", e))?;
            save_model(&ctx.path("model.prnc"), &net)?;
            ctx.write_json("train_log.json", &log)?;
        }
        Command::Prune { model, ratio, data } => {
            let ratio = match ratio.or_else(|| cfg.prune_ratios.first().copied()) {
                Some(r) => r,
                None => bail!("no pruning ratio given or configured"),
            };
            let net: Network<f32> = load_model(model)?;
            let ds = ctx.dataset(data)?;
            let no_refine = ExperimentConfig {
                prune: prince_core::slimming::PruneConfig {
                    refine_epochs: 0,
                    ..cfg.prune.clone()
                },
                ..cfg.clone()
            };
            let stage = prune_stage(&no_refine, &ds, &net, ratio, 0, |_| {})?;
            save_model(&ctx.path("pruned.prnc"), &stage.net)?;
            emit_prune_report(&ctx, &stage.report)?;
            println!(
                "ratio {ratio}: params {} -> {}, macs {} -> {}",
                stage.report.params_before,
                stage.report.params_after,
                stage.report.macs_before,
                stage.report.macs_after
            );
        }
        Command::Refine { model, data } => {
            let mut net: Network<f32> = load_model(model)?;
            let ds = ctx.dataset(data)?;
            let train_set = ds.network_samples(&ds.train)?;
            let test_set = ds.network_samples(&ds.test)?;
            let tcfg = prince_core::nn::TrainConfig {
                seed: prince_core::harness::derive_seed(cfg.seed, prince_core::harness::Stream::Refine, 0),
                ..cfg.train.clone()
            };
            let log: TrainLog = refine(&mut net, &train_set, Some(&test_set), &cfg.prune, &tcfg, |e| {
                print_epoch("refine", e)
            })?;
            save_model(&ctx.path("refined.prnc"), &net)?;
            ctx.write_json("refine_log.json", &log)?;
        }
        Command::Evaluate { model, name, data } => {
            let net: Network<f32> = load_model(model)?;
            let ds = ctx.dataset(data)?;
            let records = ctx.finish(vec![evaluate_network(name, &net, &ds, cfg.train.batch_size)?]);
            emit_reports(&records, &[], &ctx.out)?;
            print_records(&records);
        }
        Command::Audit { model, dims } => audit(&ctx, model.as_deref(), dims)?,
        Command::RunPrince(d) => {
            let ds = ctx.dataset(d)?;
            let mut records = run_baselines(cfg, &ds)?;
            let outcome = run_prince(cfg, &ds, |phase, e| match phase {
                Phase::Train => print_epoch("train", e),
                Phase::Refine(r) => print_epoch(&format!("refine {r}"), e),
            })?;
            records.extend(outcome.records.iter().cloned());
            let records = ctx.finish(records);
            let reports: Vec<_> = outcome.stages.iter().map(|s| s.report.clone()).collect();
            emit_reports(&records, &reports, &ctx.out)?;
            save_model(&ctx.path("model.prnc"), &outcome.net)?;
            ctx.write_json("train_log.json", &outcome.train_log)?;
            for s in &outcome.stages {
                save_model(&ctx.path(&format!("pruned_{}.prnc", s.ratio)), &s.net)?;
                ctx.write_json(&format!("refine_log_{}.json", s.ratio), &s.refine_log)?;
            }
            ctx.write_config()?;
            print_records(&records);
        }
    }
    Ok(())
}

fn emit_prune_report(ctx: &Ctx, report: &prince_core::slimming::PruneReport) -> Result<()> {
    let stem = format!("prune_report_{}", report.requested_ratio);
    write_file(&ctx.path(&format!("{stem}.json")), report.to_json()?.as_bytes())?;
    write_file(&ctx.path(&format!("{stem}.csv")), report.to_csv().as_bytes())?;
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
