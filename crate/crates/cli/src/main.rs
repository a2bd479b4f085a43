use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use wsn_core::gateway::AlertKind;
use wsn_core::scenario::load_scenario;
use wsn_core::sim::{read_report, simulate_to_dir, RunReport};
use wsn_core::store::{
    export, parse_field, parse_room, serve, ExportFormat, LocalStore, RemoteStoreClient, STORE_URL_ENV,
};
use wsn_core::{Scenario, StorageBackend};

#[derive(Parser)]
#[command(name = "wsn", version, about = "Home-monitoring sensor network simulator and time-series store")]
struct Cli {
    /// Remote document store; overrides local store directories.
    #[arg(long, env = STORE_URL_ENV, global = true, hide_env_values = true)]
    store_url: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json and the record store to DIR.
    Simulate {
        /// Scenario JSON file (defaults to the bundled four-room house).
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump one stream as CSV or JSON.
    Export {
        #[arg(long)]
        room: String,
        #[arg(long)]
        field: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        /// Local store directory (e.g. RUN/store).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the read-only query endpoints.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Summarise a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Print the raw report JSON.
        #[arg(long)]
        json: bool,
    },
}

fn open_store(url: Option<&str>, dir: Option<&Path>) -> Result<Arc<dyn StorageBackend>> {
    if let Some(url) = url {
        return Ok(Arc::new(RemoteStoreClient::new(url, 5000, Default::default())));
    }
    let Some(dir) = dir else { bail!("no store given: pass --store DIR or set {STORE_URL_ENV}") };
    let store = LocalStore::open_read_only(dir).with_context(|| format!("opening store {}", dir.display()))?;
    Ok(Arc::new(store))
}

fn simulate(scenario: Option<&Path>, seed: Option<u64>, out: &Path, url: Option<&str>) -> Result<()> {
    let mut s = match scenario {
        Some(p) => load_scenario(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scenario::default_home(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let remote: Option<Arc<dyn StorageBackend>> =
        url.map(|u| Arc::new(RemoteStoreClient::new(u, 5000, Default::default())) as _);
    let result = simulate_to_dir(s, out, remote)?;
    print_summary(&result.report, &mut io::stdout().lock())?;
    if result.report.storage.batches_pending > 0 {
        bail!("{} record batch(es) could not be stored", result.report.storage.batches_pending);
    }
    Ok(())
}

fn print_summary(r: &RunReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "seed {}  duration {} ms  routing {:?}  aggregate at {:?}", r.seed, r.duration_ms, r.routing, r.aggregate_at)?;
    let radio = &r.radio;
    let dropped: u64 = radio.frames_dropped.values().sum();
    writeln!(out, "frames: {} sent, {} delivered, {} dropped, {} in flight", radio.frames_sent, radio.frames_delivered, dropped, radio.frames_in_flight)?;
    for (reason, n) in &radio.frames_dropped {
        writeln!(out, "  dropped ({reason:?}): {n}")?;
    }
    if let Some(l) = &r.latency {
        writeln!(out, "latency: min {:.1} ms, mean {:.1} ms, max {:.1} ms", l.min_ms, l.mean_ms, l.max_ms)?;
    }
    let g = &r.gateway;
    writeln!(
        out,
        "gateway: {} messages, {} records, {} duplicate frames, {} timed out, {} malformed",
        g.messages_reassembled,
        g.records,
        g.frames_duplicate,
        g.messages_timed_out,
        g.grammar_errors + g.unknown_room
    )?;
    let rules = r.alerts.iter().filter(|a| a.kind == AlertKind::ThresholdRule).count();
    writeln!(out, "alerts: {} threshold, {} change", rules, r.alerts.len() - rules)?;
    writeln!(out, "energy: network lifetime {} ms", r.energy.network_lifetime_ms)?;
    for (addr, e) in &r.energy.nodes {
        let death = e.dead_at_ms.map_or(String::new(), |t| format!(", died at {t:.0} ms"));
        writeln!(out, "  {addr}: {:.4} mAh, {:.3} J{death}", e.consumed_mah, e.joules)?;
    }
    let (ascii, packed) = r.compression.iter().fold((0, 0), |(a, c), s| (a + s.ascii_bytes, c + s.compressed_bytes));
    if ascii > 0 {
        writeln!(out, "compression: {ascii} ASCII bytes -> {packed} bytes ({:.1}%)", 100.0 * packed as f64 / ascii as f64)?;
    }
    writeln!(out, "storage: {} batches, {} records", r.storage.batches_committed, r.storage.records_committed)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let url = cli.store_url.as_deref().filter(|u| !u.is_empty());
    match cli.command {
        Command::Simulate { scenario, seed, out } => simulate(scenario.as_deref(), seed, &out, url),
        Command::Export { room, field, from, to, format, store, output } => {
            let backend = open_store(url, store.as_deref())?;
            let room = parse_room(&room)?;
            let field = parse_field(room, &field)?;
            let mut sink: Box<dyn Write> = match &output {
                Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
                None => Box::new(io::stdout().lock()),
            };
            export(backend.as_ref(), room, field, from, to, format, &mut sink)?;
            sink.flush()?;
            Ok(())
        }
        Command::Serve { bind, store } => {
            let backend = open_store(url, store.as_deref())?;
            let server = serve(backend, &bind)?;
            println!("listening on {}", server.url());
            server.wait();
            Ok(())
        }
        Command::Report { run, json } => {
            let report = read_report(&run).with_context(|| format!("reading run {}", run.display()))?;
            let mut out = io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut out, &report)?;
                writeln!(out)?;
            } else {
                print_summary(&report, &mut out)?;
            }
            Ok(())
        }
    }
}
