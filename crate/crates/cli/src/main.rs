//! `hems`: ingest traces, detect events, run reports and the advisor, and
//! serve the HTTP API.

mod backend;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate};
use chrono_tz::Tz;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hems_client::Client;
use hems_core::advisor::{FeedbackAction, RejectCause};
use hems_core::analytics::{
    replacement_annual_kwh, shift_savings, standby_annual_kwh, swap_savings, LabelCoefficients, PeriodKind,
    ReplacementTarget, StandbySchedule,
};
use hems_core::tariff::TariffScheme;
use hems_core::wire::{round4, FeedbackRequest};
use hems_core::{CategoryId, HouseholdId, SlotId};
use hems_server::{Clock, Config, Engine};
use serde_json::{json, Map, Value};

use backend::Backend;
use output::{emit, Events, Figures, Format};

#[derive(Parser)]
#[command(name = "hems", version, about = "Household energy monitoring, pricing and advice")]
struct Cli {
    /// Service configuration file.
    #[arg(long, global = true, env = "HEMS_CONFIG")]
    config: Option<PathBuf>,
    /// Talk to a running server instead of the local store.
    #[arg(long, global = true, env = "HEMS_SERVER")]
    server: Option<String>,
    /// Bearer token for --server.
    #[arg(long, global = true, env = "HEMS_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Household to operate on (defaults to the first configured one).
    #[arg(long, global = true)]
    household: Option<String>,
    /// Pretend the current time is this RFC 3339 instant.
    #[arg(long, global = true)]
    now: Option<DateTime<chrono::FixedOffset>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load one-day trace files (CSV: timestamp,<channel>...).
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Re-run event detection for a device and list its events.
    Detect {
        #[arg(long)]
        device: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consumption reports.
    Analyze(AnalyzeArgs),
    /// Generate and rank advices, optionally applying scripted feedback first.
    Advise {
        #[arg(long)]
        user: Option<String>,
        /// CSV with columns advice_id,action,cause.
        #[arg(long)]
        apply_feedback: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Savings calculators.
    Savings(SavingsArgs),
    /// Tariff lookups.
    Tariff {
        #[command(subcommand)]
        query: TariffQuery,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Report {
    Itemization,
    Slots,
    Estimate,
    Usage,
    Summary,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_enum)]
    report: Report,
    #[arg(long, default_value = "month")]
    period: PeriodKind,
    /// YYYY-MM, for the slot report.
    #[arg(long)]
    month: Option<String>,
    /// Device, for the usage report.
    #[arg(long)]
    device: Option<String>,
    /// Day, for the summary report.
    #[arg(long)]
    date: Option<NaiveDate>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Calc {
    Standby,
    Swap,
    Replacement,
    Shift,
}

#[derive(Args)]
struct SavingsArgs {
    #[arg(long, value_enum)]
    calc: Calc,
    /// Standby draw in watts.
    #[arg(long)]
    power_w: Option<f64>,
    /// Hours powered per weekday (omit both for always on).
    #[arg(long)]
    weekday_hours: Option<f64>,
    #[arg(long)]
    weekend_hours: Option<f64>,
    /// Hourly consumption of appliance A in Wh/h.
    #[arg(long)]
    rate_a: Option<f64>,
    /// Energy used by appliance A in kWh.
    #[arg(long)]
    energy_a: Option<f64>,
    #[arg(long)]
    rate_b: Option<f64>,
    #[arg(long)]
    energy_b: Option<f64>,
    /// Average powers of the appliances being replaced, comma separated.
    #[arg(long, value_delimiter = ',')]
    measured_w: Vec<f64>,
    /// Annual consumption of the replacements, if known.
    #[arg(long)]
    target_kwh: Option<f64>,
    /// Energy efficiency index of each replacement unit.
    #[arg(long)]
    eei: Option<f64>,
    /// Storage volume of each unit in litres.
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long, default_value_t = -18.0, allow_hyphen_values = true)]
    compartment_temp: f64,
    /// Appliance category of the label regulation (1-9).
    #[arg(long)]
    label_category: Option<u8>,
    #[arg(long, default_value_t = 1)]
    units: u32,
    /// Monthly energy to shift, kWh.
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum TariffQuery {
    /// Price energy by slot: --usage T1:19 --usage T2:12.
    Price {
        #[arg(long, required = true)]
        usage: Vec<String>,
        #[arg(long)]
        category: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Category for an annual consumption.
    Category {
        #[arg(long)]
        kwh: f64,
    },
    /// Slot in force at an instant.
    Slot {
        #[arg(long)]
        at: DateTime<chrono::FixedOffset>,
        #[arg(long, default_value = "Europe/Rome")]
        tz: Tz,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, String> {
    let path = cli
        .config
        .as_deref()
        .ok_or("no configuration: pass --config or set HEMS_CONFIG")?;
    Config::load(path).map_err(|e| e.to_string())
}

fn scheme(cli: &Cli) -> Result<TariffScheme, String> {
    match &cli.config {
        Some(_) => Ok(load_config(cli)?.resources().map_err(|e| e.to_string())?.scheme),
        None => Ok(TariffScheme::italian()),
    }
}

fn clock(cli: &Cli) -> Clock {
    cli.now.map_or(Clock::System, |t| Clock::Fixed(t.timestamp()))
}

fn backend(cli: &Cli) -> Result<Backend, String> {
    if let Some(url) = &cli.server {
        if cli.now.is_some() {
            return Err("--now applies to the local store only; the server keeps its own clock".into());
        }
        let token = cli.token.clone().ok_or("--server needs --token (or HEMS_TOKEN)")?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
        return Ok(Backend::Remote {
            client: Client::new(url, token).map_err(|e| e.to_string())?,
            rt,
        });
    }
    let clock = clock(cli);
    let engine = Engine::open(load_config(cli)?, clock).map_err(|e| e.to_string())?;
    let household = match &cli.household {
        Some(h) => HouseholdId::new(h.as_str()),
        None => engine.default_household().cloned().ok_or("no households configured")?,
    };
    engine.timezone(&household).map_err(|e| e.to_string())?;
    Ok(Backend::Local {
        now: clock.now(),
        engine: Arc::new(engine),
        household,
    })
}

fn run(cli: Cli) -> Result<bool, String> {
    match &cli.command {
        Command::Ingest { files } => ingest(&backend(&cli)?, files),
        Command::Detect { device, format, out } => {
            emit(&Events(backend(&cli)?.detect(device)?), *format, out.as_deref())?;
            Ok(true)
        }
        Command::Analyze(a) => analyze(&backend(&cli)?, a),
        Command::Advise {
            user,
            apply_feedback,
            format,
            out,
        } => advise(&backend(&cli)?, user.as_deref(), apply_feedback.as_deref(), *format, out.as_deref()),
        Command::Savings(s) => savings(&cli, s),
        Command::Tariff { query } => tariff(&cli, query),
        Command::Serve { listen } => serve(&cli, listen),
    }
}

fn ingest(b: &Backend, files: &[PathBuf]) -> Result<bool, String> {
    let mut clean = true;
    for f in files {
        match b.ingest_file(f) {
            Ok(r) => {
                println!(
                    "{}\taccepted={}\tduplicates={}\trejected={}",
                    f.display(),
                    r.accepted,
                    r.duplicates,
                    r.rejected
                );
                for w in &r.warnings {
                    eprintln!("{}: warning: {w}", f.display());
                }
                clean &= r.rejected == 0;
            }
            Err(e) => {
                eprintln!("{}: error: {e}", f.display());
                clean = false;
            }
        }
    }
    Ok(clean)
}

fn parse_month(s: &str) -> Result<(i32, u32), String> {
    let bad = || format!("--month must be YYYY-MM, got '{s}'");
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok((y.parse().map_err(|_| bad())?, m))
}

fn analyze(b: &Backend, a: &AnalyzeArgs) -> Result<bool, String> {
    let out = a.out.as_deref();
    match a.report {
        Report::Itemization => emit(&b.itemization(a.period)?, a.format, out)?,
        Report::Slots => {
            let month = a.month.as_deref().map(parse_month).transpose()?;
            emit(&b.slots(month)?, a.format, out)?
        }
        Report::Estimate => emit(&b.estimate()?, a.format, out)?,
        Report::Usage => {
            let device = a.device.as_deref().ok_or("--report usage needs --device")?;
            emit(&b.usage(device, a.period)?, a.format, out)?
        }
        Report::Summary => emit(&b.summary(a.date)?, a.format, out)?,
    }
    Ok(true)
}

#[derive(serde::Deserialize)]
struct FeedbackRow {
    advice_id: String,
    action: String,
    #[serde(default)]
    cause: Option<String>,
}

fn advise(b: &Backend, user: Option<&str>, script: Option<&Path>, format: Format, out: Option<&Path>) -> Result<bool, String> {
    let mut clean = true;
    // generation registers the advices the script refers to
    let mut current = b.advices(user)?;
    if let Some(path) = script {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        for (i, row) in reader.deserialize::<FeedbackRow>().enumerate() {
            let line = i + 2;
            let applied = row.map_err(|e| e.to_string()).and_then(|r| {
                let action: FeedbackAction = r.action.parse()?;
                let cause = match r.cause.as_deref().filter(|c| !c.is_empty()) {
                    Some(c) => Some(c.parse::<RejectCause>()?),
                    None => None,
                };
                b.feedback(user, &r.advice_id, &FeedbackRequest { action, cause })
            });
            if let Err(e) = applied {
                eprintln!("{}:{line}: {e}", path.display());
                clean = false;
            }
        }
        current = b.advices(user)?;
    }
    emit(&current, format, out)?;
    Ok(clean)
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> Result<T, String> {
    v.ok_or_else(|| format!("missing --{flag}"))
}

fn figures(v: Value) -> Figures {
    let Value::Object(map) = v else { unreachable!() };
    Figures(map)
}

fn savings(cli: &Cli, s: &SavingsArgs) -> Result<bool, String> {
    let result = match s.calc {
        Calc::Standby => {
            let power = need(s.power_w, "power-w")?;
            let schedule = match (s.weekday_hours, s.weekend_hours) {
                (None, None) => StandbySchedule::AlwaysOn,
                (Some(weekday_hours), Some(weekend_hours)) => StandbySchedule::Weekly {
                    weekday_hours,
                    weekend_hours,
                },
                _ => return Err("give both --weekday-hours and --weekend-hours, or neither".into()),
            };
            json!({
                "hours_per_year": round4(schedule.hours_per_year()),
                "kwh_year": round4(standby_annual_kwh(power, schedule)),
            })
        }
        Calc::Swap => {
            let r = swap_savings(
                need(s.rate_a, "rate-a")?,
                need(s.energy_a, "energy-a")?,
                need(s.rate_b, "rate-b")?,
                need(s.energy_b, "energy-b")?,
            )
            .map_err(|e| e.to_string())?;
            json!({
                "hours_a": round4(r.hours_a),
                "hours_b": round4(r.hours_b),
                "savings_fraction": round4(r.savings_fraction),
            })
        }
        Calc::Replacement => {
            if s.measured_w.is_empty() {
                return Err("missing --measured-w".into());
            }
            let target = match s.target_kwh {
                Some(kwh_year) => ReplacementTarget::AnnualKwh { kwh_year },
                None => ReplacementTarget::Label {
                    eei: need(s.eei, "eei (or --target-kwh)")?,
                    volume_l: need(s.volume, "volume")?,
                    compartment_temp_c: s.compartment_temp,
                    category: need(s.label_category, "label-category")?,
                    units: s.units,
                },
            };
            let coefficients = match &cli.config {
                Some(_) => load_config(cli)?.resources().map_err(|e| e.to_string())?.coefficients,
                None => LabelCoefficients::default(),
            };
            let r = replacement_annual_kwh(&s.measured_w, &target, &coefficients).map_err(|e| e.to_string())?;
            json!({
                "old_kwh_year": round4(r.old_kwh_year),
                "old_kwh_month": round4(r.old_kwh_month),
                "new_kwh_year": round4(r.new_kwh_year),
                "monthly_saving_kwh": round4(r.monthly_saving_kwh),
            })
        }
        Calc::Shift => {
            let scheme = scheme(cli)?;
            let l = need(s.l, "l")?;
            let from = SlotId::new(s.from.as_deref().ok_or("missing --from")?);
            let to = SlotId::new(s.to.as_deref().ok_or("missing --to")?);
            let category = CategoryId::new(s.category.as_deref().ok_or("missing --category")?);
            let saving = shift_savings(l, &from, &to, &category, &scheme).map_err(|e| e.to_string())?;
            json!({ "saving_eur": round4(saving) })
        }
    };
    emit(&figures(result), s.format, None)?;
    Ok(true)
}

fn tariff(cli: &Cli, q: &TariffQuery) -> Result<bool, String> {
    let scheme = scheme(cli)?;
    match q {
        TariffQuery::Price {
            usage,
            category,
            format,
        } => {
            let category = CategoryId::new(category.as_str());
            let mut total = 0.0;
            let mut parts = Map::new();
            for u in usage {
                let (slot, kwh) = u.split_once(':').ok_or_else(|| format!("--usage wants SLOT:KWH, got '{u}'"))?;
                let kwh: f64 = kwh.parse().map_err(|_| format!("bad energy in '{u}'"))?;
                let cost = scheme
                    .cost_of_energy(kwh, &SlotId::new(slot), &category)
                    .map_err(|e| e.to_string())?;
                total += cost;
                parts.insert(format!("{slot}_eur"), json!(round4(cost)));
            }
            parts.insert("total_eur".into(), json!(round4(total)));
            emit(&Figures(parts), *format, None)?;
        }
        TariffQuery::Category { kwh } => {
            println!("{}", scheme.determine_category(*kwh).map_err(|e| e.to_string())?);
        }
        TariffQuery::Slot { at, tz } => {
            println!("{}", scheme.classify_slot(at.timestamp(), *tz));
        }
    }
    Ok(true)
}

fn serve(cli: &Cli, listen: &str) -> Result<bool, String> {
    tracing_subscriber::fmt().with_target(false).with_writer(std::io::stderr).init();
    let engine = Arc::new(Engine::open(load_config(cli)?, clock(cli)).map_err(|e| e.to_string())?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| format!("{listen}: {e}"))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        tracing::info!(%addr, households = engine.household_ids().count(), "serving");
        println!("listening on {addr}");
        hems_server::api::serve(engine, listener).await.map_err(|e| e.to_string())
    })?;
    Ok(true)
}

