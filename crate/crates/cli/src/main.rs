use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fidelius_core::cryptowire::KeypairFixture;
use fidelius_core::page::{parse_page_with, sign_page, PageUrl};
use fidelius_core::sim::{self, catalog, transcript_jsonl, ConfigOverrides, RunOutput};

/// Deterministic simulator for a web enclave with a trusted keyboard and
/// display path.
#[derive(Debug, Parser)]
#[command(name = "fidelius-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and print its report.
    ///
    /// Exit status: 0 when every assertion holds and no secret leaked,
    /// 2 when the leak scanner fired, 3 when an assertion failed
    /// otherwise, 1 on usage or fixture errors.
    Run(RunArgs),
    /// Parse a page and print its secure forms and scripts as JSON.
    Parse(PageArgs),
    /// Fill in the `sign` attribute of every secure tag of a page.
    Sign {
        #[command(flatten)]
        page: PageArgs,
        /// Keypair fixture (JSON with origin, secret_key, public_key).
        #[arg(long)]
        key: PathBuf,
        /// Write the signed page here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    Catalog {
        /// Print a JSON array instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file. Fixtures resolve against $FIDELIUS_SIM_FIXTURES, or
    /// else the directory above the scenario file's.
    #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Run a built-in scenario by name (see `catalog`).
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    report: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the transcript as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Tick period in milliseconds [default: 50].
    #[arg(long)]
    tick_ms: Option<u64>,
    /// Exit delay D in ticks [default: 20].
    #[arg(long)]
    exit_delay_ticks: Option<u32>,
    /// Display resolution WIDTHxHEIGHT [default: 320x240].
    #[arg(long)]
    resolution: Option<String>,
}

#[derive(Debug, Args)]
struct PageArgs {
    /// HTML page.
    #[arg(long)]
    page: PathBuf,
    /// URL the page is served from, e.g. https://pay.site.com/checkout.
    #[arg(long)]
    url: String,
    /// Directory holding external scripts [default: the page's directory,
    /// then ../scripts next to it].
    #[arg(long)]
    scripts: Option<PathBuf>,
}

impl PageArgs {
    fn load(&self) -> Result<(String, PageUrl)> {
        let html = std::fs::read_to_string(&self.page).with_context(|| format!("reading {}", self.page.display()))?;
        let url = PageUrl::parse(&self.url)?;
        Ok((html, url))
    }

    fn script_dirs(&self) -> Vec<PathBuf> {
        if let Some(d) = &self.scripts {
            return vec![d.clone()];
        }
        let dir = self.page.parent().unwrap_or(Path::new(".")).to_path_buf();
        vec![dir.clone(), dir.join("..").join("scripts")]
    }

    fn fetch(&self) -> impl Fn(&str) -> Option<Vec<u8>> {
        let dirs = self.script_dirs();
        move |src: &str| {
            if src.contains("://") || src.contains("..") {
                return None;
            }
            dirs.iter().find_map(|d| std::fs::read(d.join(src.trim_start_matches('/'))).ok())
        }
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                // A reader that hung up early (`| head`) is not an error.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing stdout"),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode> {
    let overrides = ConfigOverrides {
        tick_ms: a.tick_ms,
        exit_delay_ticks: a.exit_delay_ticks,
        resolution: a.resolution.clone(),
        ..Default::default()
    };
    let out: RunOutput = match (&a.scenario, &a.builtin) {
        (Some(path), _) => sim::run_scenario_file(path, a.seed, &overrides)?,
        (None, Some(name)) => sim::run_builtin(name, a.seed, &overrides)?,
        (None, None) => bail!("--scenario or --builtin is required"),
    };
    if let Some(p) = &a.transcript {
        std::fs::write(p, transcript_jsonl(&out.transcript)).with_context(|| format!("writing {}", p.display()))?;
    }
    let r = &out.report;
    let text = match a.report {
        ReportFormat::Json => r.to_json(),
        ReportFormat::Text => r.to_text(),
    };
    write_out(a.out.as_deref(), &text)?;
    Ok(if r.pass {
        ExitCode::SUCCESS
    } else if r.has_violation() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    })
}

fn cmd_parse(a: &PageArgs) -> Result<ExitCode> {
    let (html, url) = a.load()?;
    let doc = parse_page_with(&html, &url, a.fetch())?;
    write_out(None, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sign(a: &PageArgs, key: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let (html, url) = a.load()?;
    let fixture: KeypairFixture = serde_json::from_str(
        &std::fs::read_to_string(key).with_context(|| format!("reading {}", key.display()))?,
    )
    .with_context(|| format!("parsing {}", key.display()))?;
    let signed = sign_page(&html, &url, &fixture.signing_key()?, a.fetch())?;
    write_out(out, &signed)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_catalog(json: bool) -> Result<ExitCode> {
    let entries = catalog();
    let text = if json {
        serde_json::to_string_pretty(&entries)? + "\n"
    } else {
        entries
            .iter()
            .map(|e| {
                let class = e.attack_class.map(|c| c.name()).unwrap_or("-");
                format!("{:<20} {:<20} {}\n", e.name, class, e.description)
            })
            .collect()
    };
    write_out(None, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap's own usage status is 2, which is reserved here for leaks.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let r = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Sign { page, key, out } => cmd_sign(page, key, out.as_deref()),
        Command::Catalog { json } => cmd_catalog(*json),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
