//! `hearth`: run the gateway or talk to a running one.
//!
//! Every command except `serve` is a thin client: one API call per mutation,
//! and output rendered from the response without recomputation.

mod client;
mod render;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hearth_core::exposure::StatsReport;
use hearth_core::flowcap::Device;
use hearth_core::household::ReplaySummary;
use hearth_core::StageConfig;
use hearth_gateway::GatewayConfig;
use reqwest::Method;
use serde_json::{json, Value};

use client::{CliError, Client, EXIT_CODES};
use render::Style;

#[derive(Debug, Parser)]
#[command(name = "hearth", version, about = "Household network privacy gateway", after_help = EXIT_CODES)]
struct Cli {
    /// Gateway config file (TOML).
    #[arg(long, global = true, env = "HEARTH_CONFIG")]
    config: Option<PathBuf>,
    /// Gateway base URL; defaults to the configured bind address and port.
    #[arg(long, global = true, env = "HEARTH_URL")]
    server: Option<String>,
    /// Admin token for privileged calls; defaults to the configured one.
    #[arg(long, global = true, env = "HEARTH_ADMIN_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Print the raw API response as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gateway in the foreground.
    Serve,
    /// Replay a capture file through the gateway.
    Replay {
        pcap: PathBuf,
        /// `MAC<TAB>name` lines naming the household's devices.
        #[arg(long)]
        device_map: Option<PathBuf>,
        /// Replay at this multiple of capture time.
        #[arg(long, conflicts_with = "as_fast_as_possible")]
        speed: Option<f64>,
        #[arg(long)]
        as_fast_as_possible: bool,
    },
    /// List or rename devices.
    #[command(subcommand)]
    Devices(DevicesCmd),
    /// Show or change the deployment stage.
    #[command(subcommand)]
    Stage(StageCmd),
    /// Manage the ownership fixtures.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
    /// Summary statistics over a window.
    Report {
        #[command(flatten)]
        window: WindowArg,
        #[arg(long, default_value_t = 3)]
        top_n: u32,
        /// Region code (e.g. EU, US) for the out-of-region share.
        #[arg(long)]
        home_region: Option<String>,
    },
    /// Export flows (NDJSON) or directives (JSON).
    #[command(subcommand)]
    Export(ExportCmd),
    /// Permanently remove stored data for a device, company or time range.
    #[command(subcommand)]
    Redact(RedactCmd),
}

#[derive(Debug, Subcommand)]
enum DevicesCmd {
    List,
    /// Give a device a friendly name.
    Name {
        device_id: String,
        name: String,
    },
}

#[derive(Debug, Subcommand)]
enum StageCmd {
    Get,
    Set {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Permit moving to a lower stage.
        #[arg(long)]
        allow_regression: bool,
    },
}

#[derive(Debug, Subcommand)]
enum FixturesCmd {
    /// Load a fixture TSV from a path on the gateway host.
    Load { path: PathBuf },
}

#[derive(Debug, Subcommand)]
enum ExportCmd {
    Flows {
        #[command(flatten)]
        window: WindowArg,
        #[arg(long)]
        device: Option<String>,
        #[arg(long)]
        company: Option<String>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Directives {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum RedactCmd {
    Device {
        device_id: String,
    },
    Company {
        name: String,
    },
    Range {
        #[arg(long)]
        start_ms: i64,
        #[arg(long)]
        end_ms: i64,
    },
}

#[derive(Debug, Args)]
struct WindowArg {
    /// `START..END` in epoch milliseconds; either side may be omitted.
    #[arg(long, value_parser = parse_window)]
    window: Option<(Option<i64>, Option<i64>)>,
}

impl WindowArg {
    fn query(&self) -> Vec<(&'static str, String)> {
        let (start, end) = self.window.unwrap_or_default();
        let mut q = Vec::new();
        if let Some(s) = start {
            q.push(("start_ms", s.to_string()));
        }
        if let Some(e) = end {
            q.push(("end_ms", e.to_string()));
        }
        q
    }
}

fn parse_window(s: &str) -> Result<(Option<i64>, Option<i64>), String> {
    let (a, b) = s.split_once("..").ok_or("expected START..END")?;
    let side = |v: &str| -> Result<Option<i64>, String> {
        let v = v.trim();
        if v.is_empty() {
            Ok(None)
        } else {
            v.parse()
                .map(Some)
                .map_err(|_| format!("not a millisecond timestamp: {v}"))
        }
    };
    Ok((side(a)?, side(b)?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = GatewayConfig::from_env(cli.config.as_deref())?;
    if let Command::Serve = cli.command {
        return serve(config);
    }
    let base = cli.server.clone().unwrap_or_else(|| config.local_url());
    let token = cli.token.clone().or_else(|| config.existing_admin_token());
    let api = Client::new(&base, token)?;
    let style = Style::detect();
    let mut out = std::io::stdout().lock();
    let text = match cli.command {
        Command::Serve => unreachable!("handled above"),
        Command::Replay {
            pcap,
            device_map,
            speed,
            as_fast_as_possible,
        } => {
            let device_map = match device_map {
                Some(p) => read(&p)?,
                None => String::new(),
            };
            let body = json!({
                "path": absolute(&pcap),
                "device_map": device_map,
                "speed": if as_fast_as_possible { None } else { speed },
            });
            let s: Value = api.send_json(Method::POST, "/replay", &body)?;
            if cli.json {
                json_line(&s)
            } else {
                let s: ReplaySummary = decode(s)?;
                format!(
                    "{} flows ingested from {} packets ({} already stored, {} refused, {} skipped)\n",
                    s.stored, s.ingest.packets, s.duplicates, s.refused, s.ingest.skipped
                )
            }
        }
        Command::Devices(DevicesCmd::List) => {
            let v: Value = api.get("/devices", &[])?;
            if cli.json {
                json_line(&v)
            } else {
                render::devices(&style, &decode::<Vec<Device>>(v)?)
            }
        }
        Command::Devices(DevicesCmd::Name { device_id, name }) => {
            let v: Value = api.send_json(Method::PUT, &format!("/devices/{device_id}"), &json!({ "name": name }))?;
            if cli.json {
                json_line(&v)
            } else {
                let d: Device = decode(v)?;
                format!("{} is now \"{}\"\n", d.device_id.0, d.friendly_name)
            }
        }
        Command::Stage(cmd) => {
            let v: Value = match cmd {
                StageCmd::Get => api.get("/stage", &[])?,
                StageCmd::Set {
                    stage,
                    allow_regression,
                } => api.send_json(
                    Method::PUT,
                    "/stage",
                    &json!({ "stage": stage, "allow_regression": allow_regression }),
                )?,
            };
            if cli.json {
                json_line(&v)
            } else {
                let c: StageConfig = decode(v)?;
                format!("{}\n", c.stage() as u8)
            }
        }
        Command::Fixtures(FixturesCmd::Load { path }) => {
            let v: Value = api.send_json(Method::POST, "/fixtures", &json!({ "path": absolute(&path) }))?;
            if cli.json {
                json_line(&v)
            } else {
                format!("{} fixture rows loaded\n", v["loaded"])
            }
        }
        Command::Report {
            window,
            top_n,
            home_region,
        } => {
            let mut q = window.query();
            q.push(("top_n", top_n.to_string()));
            if let Some(h) = &home_region {
                q.push(("home_region", h.clone()));
            }
            let v: Value = api.get("/report", &q)?;
            if cli.json {
                json_line(&v)
            } else {
                render::report(&style, &decode::<StatsReport>(v)?, home_region.as_deref())
            }
        }
        Command::Export(ExportCmd::Flows {
            window,
            device,
            company,
            out: dest,
        }) => {
            let mut q = window.query();
            q.extend(device.map(|d| ("device", d)));
            q.extend(company.map(|c| ("company", c)));
            let bytes = api.get_bytes("/flows/export", &q)?;
            return emit(&mut out, dest.as_deref(), &bytes);
        }
        Command::Export(ExportCmd::Directives { out: dest }) => {
            let v: Value = api.get("/directives/export", &[])?;
            let mut bytes = serde_json::to_vec_pretty(&v).map_err(|e| CliError::Usage(e.to_string()))?;
            bytes.push(b'\n');
            return emit(&mut out, dest.as_deref(), &bytes);
        }
        Command::Redact(cmd) => {
            let scope = match cmd {
                RedactCmd::Device { device_id } => json!({"kind": "device", "device_id": device_id}),
                RedactCmd::Company { name } => json!({"kind": "company", "name": name}),
                RedactCmd::Range { start_ms, end_ms } => {
                    json!({"kind": "range", "start_ms": start_ms, "end_ms": end_ms})
                }
            };
            let v: Value = api.send_json(Method::POST, "/redactions", &scope)?;
            if cli.json {
                json_line(&v)
            } else {
                format!(
                    "redaction {}: {} ({} flows, {} buckets removed)\n",
                    v["id"],
                    v["description"].as_str().unwrap_or(""),
                    v["flows_removed"],
                    v["buckets_removed"]
                )
            }
        }
    };
    out.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn serve(config: GatewayConfig) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_ansi(std::env::var_os("NO_COLOR").is_none())
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: PathBuf::from("<runtime>"),
        source,
    })?;
    rt.block_on(hearth_gateway::serve(config))?;
    Ok(())
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Api {
        status: 200,
        body: json!({"error": "internal", "message": format!("unexpected response: {e}")}),
    })
}

/// Stable key order comes from the server's struct field order.
fn json_line(v: &Value) -> String {
    format!("{v}\n")
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Paths are resolved by the gateway, so send them absolute.
fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_owned())
}

fn emit(stdout: &mut impl Write, dest: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let (path, result) = match dest {
        Some(p) => (p.to_owned(), std::fs::write(p, bytes)),
        None => (PathBuf::from("<stdout>"), stdout.write_all(bytes)),
    };
    result.map_err(|source| CliError::Io { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_parse_with_open_ends() {
        assert_eq!(parse_window("10..20"), Ok((Some(10), Some(20))));
        assert_eq!(parse_window("..20"), Ok((None, Some(20))));
        assert_eq!(parse_window("10.."), Ok((Some(10), None)));
        assert!(parse_window("10-20").is_err());
        assert!(parse_window("a..b").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
