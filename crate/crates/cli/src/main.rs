use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fleetoffer::format::num;
use fleetoffer::market::{self, DiscountDriver, DiscountProfile, DriverRule, MarketOffer, Mode, UtilityPair};
use fleetoffer::scenario::{self, ScenarioConfig};
use fleetoffer::{feasibility, risk, scheduler};
use fleetoffer::{AssignmentPlan, DiscreteMeasure, MixedRouting, OfferProfile, PenaltySpec, Routing};

#[derive(Parser)]
#[command(name = "fleetoffer", version, about = "Individual travel-time offers for a vehicle fleet")]
struct Cli {
    /// Directory for CSV and summary output.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Draw days at random with this seed instead of sequencing them.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario configs run in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check whether offers can be met by a routing.
    Feasible {
        /// TOML with `flows` and `times`.
        #[arg(long)]
        routing: PathBuf,
        /// CSV with `id,weight,offer`.
        #[arg(long)]
        offers: PathBuf,
        /// Treat offers as upper bounds.
        #[arg(long)]
        not_exceeding: bool,
    },
    /// Turn an assignment plan into a day-by-day vehicle schedule.
    Schedule {
        /// TOML with `flows`, `times` and `[[drivers]]` rows.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 10)]
        days: usize,
    },
    /// Market analysis of a routing or a mixed routing.
    Market { config: PathBuf },
    /// Optimal time budget for a travel-time distribution.
    Risk {
        /// CSV with `location,weight`.
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        late: f64,
        #[arg(long)]
        early: f64,
    },
    /// Run end-to-end scenario configs.
    Scenario {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

/// Outcome of a command: success or a negative answer.
enum Answer {
    Yes,
    No,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Answer::Yes) => ExitCode::SUCCESS,
        Ok(Answer::No) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<Answer> {
    match &cli.command {
        Command::Feasible {
            routing,
            offers,
            not_exceeding,
        } => feasible(cli, routing, offers, *not_exceeding),
        Command::Schedule { plan, days } => schedule(cli, plan, *days),
        Command::Market { config } => market_cmd(cli, config),
        Command::Risk { measure, late, early } => risk_cmd(cli, measure, *late, *early),
        Command::Scenario { configs } => scenarios(cli, configs),
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_summary<T: Serialize>(dir: &Path, summary: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.toml"), toml::to_string(summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct FeasibleSummary {
    feasible: bool,
    mode: &'static str,
}

fn feasible(cli: &Cli, routing: &Path, offers: &Path, not_exceeding: bool) -> Result<Answer> {
    let routing: Routing = read_toml(routing)?;
    let profile = OfferProfile::read_csv(fs::File::open(offers).with_context(|| format!("opening {}", offers.display()))?)?;
    let tau = profile.induced_measure();
    let (ok, nu) = if not_exceeding {
        feasibility::feasible_not_exceeding(&routing, &tau)?
    } else {
        feasibility::feasible(&routing, &tau)?
    };
    let dir = &cli.output_dir;
    write_summary(
        dir,
        &FeasibleSummary {
            feasible: ok,
            mode: if not_exceeding { "not_exceeding" } else { "exact" },
        },
    )?;
    println!("feasible: {ok}");
    if !ok {
        return Ok(Answer::No);
    }
    nu.write_csv(fs::File::create(dir.join("nu.csv"))?, routing.route_count())?;
    let plan = if not_exceeding {
        feasibility::plan_not_exceeding(&nu, &profile, &routing)?
    } else {
        feasibility::plan_from_simplex_measure(&nu, &profile, &routing)?
    };
    fs::write(dir.join("plan.toml"), toml::to_string(&plan)?)?;
    Ok(Answer::Yes)
}

#[derive(Serialize)]
struct ScheduleSummary {
    days: usize,
    terms: usize,
    sampled: bool,
}

fn schedule(cli: &Cli, plan: &Path, days: usize) -> Result<Answer> {
    let plan: AssignmentPlan = read_toml(plan)?;
    let (decomp, mut sched) = scheduler::build_schedule(&plan, days)?;
    if let Some(seed) = cli.seed {
        sched = scheduler::sample_schedule(&decomp, plan.routing().flows(), days, seed)?;
    }
    let dir = &cli.output_dir;
    fs::create_dir_all(dir)?;
    sched.write_csv(fs::File::create(dir.join("schedule.csv"))?, plan.ids())?;
    let mut w = csv::Writer::from_path(dir.join("decomposition.csv"))?;
    let n = plan.driver_count();
    let mut header = vec!["weight".to_string()];
    header.extend((1..=n).map(|i| format!("driver{i}")));
    w.write_record(&header)?;
    for (theta, perm) in &decomp.terms {
        let mut rec = vec![num(*theta)];
        rec.extend(perm.iter().map(|c| (c + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_summary(
        dir,
        &ScheduleSummary {
            days,
            terms: decomp.terms.len(),
            sampled: cli.seed.is_some(),
        },
    )?;
    println!("{} terms, {days} days", decomp.terms.len());
    Ok(Answer::Yes)
}

/// Market input: either `routing` or `mix`, plus the population. For a mix,
/// `rules` maps a driver id to one-based routes per component; unlisted
/// drivers drive themselves.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    #[serde(default)]
    routing: Option<Routing>,
    #[serde(default)]
    mix: Option<MixedRouting>,
    population: Vec<DiscountDriver>,
    #[serde(default)]
    rules: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize)]
struct MarketSummary {
    answer: String,
    detail: String,
}

fn write_utilities(dir: &Path, us: &[UtilityPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("utilities.csv"))?;
    w.write_record(["id", "gamma", "weight", "mode", "u_cav", "u_hdv"])?;
    for u in us {
        let mode = if u.mode == Mode::Cav { "cav" } else { "hdv" };
        let cav = u.u_cav.map(num).unwrap_or_default();
        w.write_record([u.id.clone(), num(u.gamma), num(u.weight), mode.into(), cav, num(u.u_hdv)])?;
    }
    w.flush()?;
    Ok(())
}

fn market_cmd(cli: &Cli, path: &Path) -> Result<Answer> {
    let file: MarketFile = read_toml(path)?;
    let gamma = DiscountProfile::new(file.population)?;
    let dir = &cli.output_dir;
    fs::create_dir_all(dir)?;
    let (yes, answer, detail) = match (file.routing, file.mix) {
        (Some(routing), None) => match market::full_market_offer(&routing, &gamma)? {
            MarketOffer::Yes { offers, .. } => {
                let tmin = routing.min_time();
                let us: Vec<UtilityPair> = gamma
                    .drivers()
                    .iter()
                    .zip(offers.offers())
                    .map(|(d, t)| UtilityPair {
                        id: d.id.clone(),
                        gamma: d.gamma,
                        weight: d.weight,
                        mode: Mode::Cav,
                        u_cav: Some(d.params.cav_disutility(d.gamma, t)),
                        u_hdv: d.params.best_hdv(&[tmin]),
                    })
                    .collect();
                write_utilities(dir, &us)?;
                let mut w = csv::Writer::from_path(dir.join("offers.csv"))?;
                w.write_record(["id", "weight", "offer"])?;
                for d in offers.drivers() {
                    w.write_record([d.id.clone(), num(d.weight), num(d.offer)])?;
                }
                w.flush()?;
                (true, "Yes".to_string(), "every driver accepts".to_string())
            }
            MarketOffer::No { reason } => (false, "No".to_string(), reason),
        },
        (None, Some(mix)) => {
            let rules: Vec<DriverRule> = gamma
                .drivers()
                .iter()
                .map(|d| match file.rules.get(&d.id) {
                    Some(r) => DriverRule::Fleet {
                        routes: r.iter().map(|k| k.saturating_sub(1)).collect(),
                    },
                    None => DriverRule::Human { offer: None },
                })
                .collect();
            let a = market::mixed_market_analysis(&mix, &rules, &gamma)?;
            write_utilities(dir, &a.utilities)?;
            let ok = a.verdict.is_equilibrium();
            let mut detail = format!("share {}", num(a.share));
            if !a.verdict.defectors.is_empty() {
                detail.push_str(&format!("; defectors {}", a.verdict.defectors.join(" ")));
            }
            if !a.verdict.joiners.is_empty() {
                detail.push_str(&format!("; joiners {}", a.verdict.joiners.join(" ")));
            }
            (ok, a.verdict.kind.label().to_string(), detail)
        }
        _ => bail!("{}: give exactly one of [routing] and [mix]", path.display()),
    };
    println!("{answer}: {detail}");
    write_summary(dir, &MarketSummary { answer, detail })?;
    Ok(if yes { Answer::Yes } else { Answer::No })
}

#[derive(Serialize)]
struct RiskSummary {
    rho: f64,
    rho_upper: f64,
    risk: f64,
    expected_time: f64,
    total: f64,
    threshold: f64,
}

fn risk_cmd(cli: &Cli, measure: &Path, late: f64, early: f64) -> Result<Answer> {
    let t = DiscreteMeasure::read_csv(fs::File::open(measure).with_context(|| format!("opening {}", measure.display()))?)?;
    let pen = PenaltySpec::new(late, early)?;
    let r = risk::optimal_rho(&t, &pen)?;
    let round = |x: f64| num(x).parse::<f64>().unwrap_or(x);
    let summary = RiskSummary {
        rho: round(r.rho),
        rho_upper: round(r.interval.1),
        risk: round(r.risk),
        expected_time: round(r.expected_time),
        total: round(r.total),
        threshold: round(risk::schedule_threshold(&pen)),
    };
    println!("rho {} risk {} total {}", num(r.rho), num(r.risk), num(r.total));
    write_summary(&cli.output_dir, &summary)?;
    Ok(Answer::Yes)
}

fn run_one(path: &Path, dir: &Path, seed: Option<u64>) -> Result<bool> {
    let cfg = ScenarioConfig::read(path).with_context(|| format!("loading {}", path.display()))?;
    let report = scenario::run_scenario(&cfg, seed).with_context(|| format!("running {}", cfg.name))?;
    scenario::emit_csv(&report, dir).with_context(|| format!("writing {}", dir.display()))?;
    println!("{}: {}", cfg.name, report.message);
    Ok(report.feasible)
}

fn scenarios(cli: &Cli, configs: &[PathBuf]) -> Result<Answer> {
    let dirs: Vec<PathBuf> = if configs.len() == 1 {
        vec![cli.output_dir.clone()]
    } else {
        configs
            .iter()
            .map(|p| cli.output_dir.join(p.file_stem().unwrap_or_default()))
            .collect()
    };
    let jobs = cli.jobs.max(1);
    let jobs_list: Vec<(&PathBuf, &PathBuf)> = configs.iter().zip(&dirs).collect();
    let mut results = Vec::with_capacity(configs.len());
    for chunk in jobs_list.chunks(jobs) {
        let out: Vec<Result<bool>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(cfg, dir)| s.spawn(move || run_one(cfg, dir, cli.seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("scenario thread panicked"))))
                .collect()
        });
        results.extend(out);
    }
    let mut all = true;
    for r in results {
        all &= r?;
    }
    Ok(if all { Answer::Yes } else { Answer::No })
}
