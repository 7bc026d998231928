use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use carpool::agents::{
    train_dqn, train_tabular, DqnAgent, DqnConfig, DqnPolicy, FixedPolicy, QTable, TablePolicy,
};
use carpool::eta::{evaluate, EtaQuery, StnnModel};
use carpool::geo_time::{BBox, DayType, GeoPoint};
use carpool::harness::{
    emit_curves, eta_table, evaluate_policy, generate_synthetic, load_dataset,
    run_policy_experiment, simulator_eta, train_stnn_for, EvalReport, ExperimentConfig, Preset,
    SyntheticDemandSpec,
};
use carpool::simulator::CarpoolEnv;
use carpool::trips::{ingest_csv, write_csv, OutlierRules, SchemaMapping, TripRecord};

#[derive(Parser)]
#[command(
    name = "carpool",
    version,
    about = "Taxi carpool dispatch: data, ETA models, policies"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// uptown | downtown | bbox=LAT_MIN,LAT_MAX,LON_MIN,LON_MAX
    #[arg(long, global = true)]
    region: Option<String>,
    #[arg(long, global = true)]
    day: Option<DayType>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Trip data ingestion and synthetic generation.
    #[command(subcommand)]
    Data(DataCmd),
    /// Travel-time models.
    #[command(subcommand)]
    Eta(EtaCmd),
    /// Train or score a single policy for one seed.
    Train { policy: PolicyKind },
    /// Full policy experiment over all configured seeds and day types.
    Eval,
    /// Print a saved evaluation report as a table.
    Report {
        /// Defaults to OUT/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Filter a trip CSV through the outlier rules; writes OUT/trips.csv and OUT/ingest_report.json.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Keep everything that parses.
        #[arg(long)]
        permissive: bool,
    },
    /// Write synthetic trips to OUT/synthetic.csv.
    Synth {
        #[arg(long, default_value = "dense")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        days: usize,
        /// Share of trips to corrupt.
        #[arg(long, default_value_t = 0.0)]
        outliers: f64,
    },
}

#[derive(Subcommand)]
enum EtaCmd {
    /// Train ST-NN on the config's data; writes OUT/stnn/.
    Train,
    /// Score a saved ST-NN on the held-out split, or compare LRT, TimeNN and ST-NN when no model is given.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Predict travel time and distance for one query.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// LAT,LON
        #[arg(long)]
        from: String,
        /// LAT,LON
        #[arg(long)]
        to: String,
        /// Departure, seconds since midnight.
        #[arg(long, default_value_t = 43_200.0)]
        time: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Fixed,
    Tabq,
    Dqn,
}

fn parse_region(s: &str) -> anyhow::Result<BBox> {
    Ok(match s {
        "uptown" => BBox::uptown(),
        "downtown" => BBox::downtown(),
        _ => {
            let Some(list) = s.strip_prefix("bbox=") else {
                bail!("region must be uptown, downtown or bbox=LAT_MIN,LAT_MAX,LON_MIN,LON_MAX");
            };
            let v: Vec<f64> = list
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("bbox values must be numbers")?;
            let [a, b, c, d] = v[..] else {
                bail!("bbox needs four values");
            };
            BBox::new(a, b, c, d)?
        }
    })
}

fn parse_point(s: &str) -> anyhow::Result<GeoPoint> {
    let (a, b) = s.split_once(',').context("expected LAT,LON")?;
    Ok(GeoPoint::new(a.trim().parse()?, b.trim().parse()?)?)
}

impl Global {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(r) = &self.region {
            cfg.set_region(parse_region(r)?);
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = self.day {
            cfg.days = vec![d];
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn print_json(v: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn data_cmd(g: &Global, cmd: &DataCmd) -> anyhow::Result<()> {
    let dir = g.out_dir()?;
    match cmd {
        DataCmd::Ingest { input, permissive } => {
            let rules = if *permissive {
                OutlierRules::permissive()
            } else {
                OutlierRules::default()
            };
            let (store, report) = ingest_csv(input, &SchemaMapping::default(), &rules)?;
            let trips: Vec<&TripRecord> = store.iter().collect();
            write_csv(fs::File::create(dir.join("trips.csv"))?, trips)?;
            fs::write(
                dir.join("ingest_report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            print_json(&serde_json::to_value(&report)?)
        }
        DataCmd::Synth {
            preset,
            days,
            outliers,
        } => {
            let base: Preset = preset.parse()?;
            let mut spec = SyntheticDemandSpec {
                days: *days,
                outlier_fraction: *outliers,
                ..base.demand()
            };
            if let Some(r) = &g.region {
                spec.region = parse_region(r)?;
            }
            if let Some(d) = g.day {
                spec.day = d;
            }
            let path = dir.join("synthetic.csv");
            let n = generate_synthetic(
                &spec,
                g.seed.unwrap_or(0),
                std::io::BufWriter::new(fs::File::create(&path)?),
            )?;
            print_json(&json!({ "path": path, "trips": n }))
        }
    }
}

fn eta_cmd(g: &Global, cmd: &EtaCmd) -> anyhow::Result<()> {
    match cmd {
        EtaCmd::Predict {
            model,
            from,
            to,
            time,
        } => {
            let m = StnnModel::load(model)?;
            let est = m.predict(&EtaQuery {
                origin: parse_point(from)?,
                destination: parse_point(to)?,
                time_of_day: *time,
                day: g.day.unwrap_or(DayType::Weekday),
            })?;
            print_json(&serde_json::to_value(est)?)
        }
        EtaCmd::Train | EtaCmd::Eval { .. } => {
            let cfg = g.config()?;
            let dir = g.out_dir()?;
            let seed = cfg.seeds[0];
            let day = cfg.days[0];
            let data = load_dataset(&cfg, day, seed)?;
            let (train, test) = data.history.train_test_split(cfg.eta.train_ratio, seed)?;
            let test: Vec<TripRecord> = test.iter().cloned().collect();
            match cmd {
                EtaCmd::Train => {
                    let model = train_stnn_for(&cfg, &train, seed)?;
                    model.save(dir.join("stnn"))?;
                    let m = evaluate(|q| Ok(model.predict(q)?.travel_time), &test)?;
                    print_json(&json!({ "model": dir.join("stnn"), "test": m }))
                }
                EtaCmd::Eval { model: Some(p) } => {
                    let model = StnnModel::load(p)?;
                    let m = evaluate(|q| Ok(model.predict(q)?.travel_time), &test)?;
                    print_json(&serde_json::to_value(m)?)
                }
                _ => {
                    let table = eta_table(&cfg, &train, &test, seed)?;
                    table.write_csv(fs::File::create(dir.join("eta_metrics.csv"))?)?;
                    print_json(&serde_json::to_value(&table)?)
                }
            }
        }
    }
}

fn train_cmd(g: &Global, kind: PolicyKind) -> anyhow::Result<()> {
    let cfg = g.config()?;
    let dir = g.out_dir()?;
    let seed = cfg.seeds[0];
    let day = cfg.days[0];
    let data = load_dataset(&cfg, day, seed)?;
    let (eta, _) = simulator_eta(&cfg, &data.history, seed)?;
    let mut env = CarpoolEnv::new(cfg.env_config(day), Arc::new(data.replay), eta)?;
    let tag = format!("{}_seed{}", day.as_str(), seed);
    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    let (name, mean) = match kind {
        PolicyKind::Fixed => (
            "fixed",
            evaluate_policy(&mut env, &mut FixedPolicy, seed, cfg.eval_episodes)?,
        ),
        PolicyKind::Tabq => {
            let mut table = QTable::new(cfg.tabular.alpha, cfg.tabular.gamma)?;
            table.visit_decay = cfg.tabular.visit_decay;
            let curve = train_tabular(
                &mut env,
                &mut table,
                cfg.tabular_episodes,
                cfg.tabular.epsilon,
                seed,
            )?;
            table.save(models.join(format!("qtable_{tag}.csv")))?;
            curve.write_csv(fs::File::create(dir.join(format!("tabular_{tag}.csv")))?)?;
            let mut p = TablePolicy {
                table: &table,
                epsilon: 0.0,
            };
            (
                "tabular",
                evaluate_policy(&mut env, &mut p, seed, cfg.eval_episodes)?,
            )
        }
        PolicyKind::Dqn => {
            let dqn = DqnConfig {
                seed,
                ..cfg.dqn.clone()
            };
            let mut agent = DqnAgent::new(dqn, cfg.region)?;
            let curve = train_dqn(&mut env, &mut agent, cfg.dqn_episodes, seed)?;
            agent.online.save(models.join(format!("dqn_{tag}.json")))?;
            emit_curves(&dir, &tag, &curve, &Default::default())?;
            let mut p = DqnPolicy {
                agent: &agent,
                epsilon: 0.0,
            };
            (
                "dqn",
                evaluate_policy(&mut env, &mut p, seed, cfg.eval_episodes)?,
            )
        }
    };
    print_json(&json!({
        "policy": name,
        "seed": seed,
        "day": day,
        "eval_episodes": cfg.eval_episodes,
        "mean_cumulative_reward": mean,
    }))
}

fn report_path(g: &Global, input: &Option<PathBuf>) -> PathBuf {
    input.clone().unwrap_or_else(|| {
        g.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join("report.json")
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.cmd {
        Command::Data(c) => data_cmd(g, c),
        Command::Eta(c) => eta_cmd(g, c),
        Command::Train { policy } => train_cmd(g, *policy),
        Command::Eval => {
            let mut cfg = g.config()?;
            cfg.out_dir = Some(g.out_dir()?);
            let out = run_policy_experiment(&cfg)?;
            print!("{}", out.report.to_table());
            Ok(())
        }
        Command::Report { input } => {
            let report = EvalReport::load(report_path(g, input))?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

fn error_json(kind: &str, message: &str) -> ExitCode {
    let v = json!({ "error": kind, "message": message });
    eprintln!("{v}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return error_json("usage", e.to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .downcast_ref::<carpool::Error>()
                .map_or("other", carpool::Error::kind);
            error_json(kind, &format!("{e:#}"))
        }
    }
}
