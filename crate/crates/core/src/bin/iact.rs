use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::mpsc;
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iact::backend::{Backend, HttpBackend, Scenario, ScriptedBackend};
use iact::config::{BackendChoice, FileConfig, Overrides, RunConfig};
use iact::control_api::{tree_view, ControlServer};
use iact::extmod::docbrowser::DocBrowser;
use iact::extmod::scripter::{Scripter, ScripterConfig};
use iact::extmod::server::serve_forever;
use iact::extmod::synth::LISTEN_ENV;
use iact::extmod::Address;
use iact::observability::reconstruct_from_lines;
use iact::observability::session::event_lines;
use iact::observability::transcript::inspect_report;
use iact::protocol::{render_for_terminal, EmbedSources};
use iact::runtime::control::Target;
use iact::types::AgentSpec;
use iact::Runtime;

#[derive(Parser)]
#[command(name = "iact", version, about = "Recursive agent call-tree runtime")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Talk to the root agent; lines starting with / are operator commands.
    Run(RunArgs),
    /// Like `run`, plus the HTTP control API.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, env = "IACT_CONTROL_BIND", default_value = "127.0.0.1:7700")]
        bind: String,
    },
    /// Print the tree outline and transcripts of a session file or event log.
    Inspect { file: PathBuf },
    /// Serve a bundled tool module.
    Module {
        #[command(subcommand)]
        which: ModuleCmd,
    },
}

#[derive(Subcommand)]
enum ModuleCmd {
    Scripter {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, env = LISTEN_ENV, default_value = "127.0.0.1:0")]
        listen: String,
    },
    Docbrowser {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = LISTEN_ENV, default_value = "127.0.0.1:0")]
        listen: String,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; flags and environment take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `http` or `scripted:<scenario.toml>`.
    #[arg(long, env = "IACT_BACKEND")]
    backend: Option<String>,
    /// Agent type of the root node.
    #[arg(long)]
    root: Option<String>,
    /// Session file, loaded if present and written after every turn.
    #[arg(long, env = "IACT_SESSION")]
    session: Option<PathBuf>,
    /// Module address to load at start (host:port or socket path).
    #[arg(long = "module")]
    modules: Vec<String>,
    /// Launch the scripter module on this workspace directory.
    #[arg(long)]
    scripter: Option<PathBuf>,
    /// Launch the document browser on this corpus directory.
    #[arg(long)]
    docbrowser: Option<PathBuf>,
    /// Environment variable handed to module processes (name only).
    #[arg(long = "module-env")]
    module_env: Vec<String>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_children: Option<usize>,
    /// Enable the associative memory.
    #[arg(long)]
    hippocampus: bool,
    /// Send these messages in order, then exit instead of reading stdin.
    #[arg(long = "message", short = 'm')]
    messages: Vec<String>,
}

fn resolve(args: &RunArgs, bind: Option<String>) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p).map_err(|e| anyhow!(e))?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        root: args.root.clone(),
        backend: args.backend.clone(),
        session: args.session.clone(),
        modules: args.modules.clone(),
        scripter_workspace: args.scripter.clone(),
        docbrowser_corpus: args.docbrowser.clone(),
        module_env: args.module_env.clone(),
        max_depth: args.max_depth,
        max_children: args.max_children,
        hippocampus: args.hippocampus.then_some(true),
        control_bind: bind,
    };
    RunConfig::resolve(flags, file).map_err(|e| anyhow!(e))
}

fn build_runtime(cfg: &RunConfig) -> Result<Runtime> {
    let mut rc = cfg.runtime_config(|k| std::env::var(k).ok());
    let (backend, mut specs, scenario_root): (Box<dyn Backend>, Vec<AgentSpec>, Option<String>) = match &cfg.backend {
        BackendChoice::Scripted(path) => {
            let s = Scenario::load(path).map_err(|e| anyhow!(e))?;
            let (agents, root) = (s.agents.clone(), s.root.clone());
            rc.hippocampus |= s.hippocampus;
            (Box::new(ScriptedBackend::new(s)), agents, root)
        }
        BackendChoice::Http => (
            Box::new(HttpBackend::from_env().map_err(|e| anyhow!(e))?),
            Vec::new(),
            None,
        ),
    };
    for a in &cfg.agents {
        if !specs.iter().any(|s| s.type_name == a.type_name) {
            specs.push(a.clone());
        }
    }
    let mut rt = match &cfg.session {
        Some(p) if p.exists() => {
            let rt = Runtime::restore(p, backend, rc).with_context(|| format!("loading {}", p.display()))?;
            eprintln!("resumed session {} ({} nodes)", p.display(), rt.nodes().len());
            rt
        }
        _ => {
            let root = cfg
                .root
                .clone()
                .or(scenario_root)
                .or_else(|| specs.first().map(|s| s.type_name.clone()))
                .ok_or_else(|| anyhow!("no agent types defined; add [[agent]] tables to the config or scenario"))?;
            Runtime::new(specs, root, backend, rc)?
        }
    };
    let exe = std::env::current_exe().context("locating the iact executable")?;
    if let Some(ws) = &cfg.scripter_workspace {
        std::fs::create_dir_all(ws)?;
        let mut cmd = Command::new(&exe);
        cmd.args(["module", "scripter", "--workspace"]).arg(ws);
        let d = rt.launch_module(cmd).context("starting the scripter")?;
        eprintln!("loaded {} at {}", d.module_name, d.address);
    }
    if let Some(corpus) = &cfg.docbrowser_corpus {
        let mut cmd = Command::new(&exe);
        cmd.args(["module", "docbrowser", "--corpus"]).arg(corpus);
        let d = rt.launch_module(cmd).context("starting the document browser")?;
        eprintln!("loaded {} at {}", d.module_name, d.address);
    }
    for addr in &cfg.modules {
        let d = rt
            .preload_module(&Address::parse(addr))
            .with_context(|| format!("loading module at {addr}"))?;
        eprintln!("loaded {} at {}", d.module_name, d.address);
    }
    if let Some(p) = &cfg.session {
        rt.log().restart_write_ahead(&wal_path(p))?;
    }
    Ok(rt)
}

fn wal_path(session: &Path) -> PathBuf {
    let mut s = session.as_os_str().to_owned();
    s.push(".wal");
    PathBuf::from(s)
}

enum Job {
    Say(String),
    Quit,
}

fn print_reply(rt: &Runtime, body: &str) {
    let vars = rt.root().and_then(|r| rt.node(r)).map(|n| &n.variables);
    let text = render_for_terminal(
        body,
        EmbedSources {
            variables: vars,
            workspace: None,
        },
    );
    println!("{text}");
}

const HELP: &str = "commands: /pause  /resume  /inject [#node] text  /tree  /quit";

fn run(args: RunArgs, bind: Option<String>) -> Result<()> {
    let cfg = resolve(&args, bind)?;
    let mut rt = build_runtime(&cfg)?;
    let control = rt.control();
    let ctx = rt.control_context();
    let _server = match &cfg.control_bind {
        Some(b) => {
            let s = ControlServer::spawn(b, ctx.clone()).with_context(|| format!("binding control API on {b}"))?;
            eprintln!("control API on {}", s.url());
            Some(s)
        }
        None => None,
    };
    {
        let control = control.clone();
        ctrlc::set_handler(move || {
            if control.is_paused() {
                eprintln!("\ninterrupted twice; exiting");
                std::process::exit(130);
            }
            control.pause();
            eprintln!("\npausing at the next step boundary; /resume to continue, /inject <text> to add a message");
        })
        .context("installing the Ctrl-C handler")?;
    }

    let (tx, rx) = mpsc::channel::<Job>();
    let session = cfg.session.clone();
    let interactive = args.messages.is_empty();
    let worker = thread::spawn(move || -> Result<()> {
        for job in rx {
            match job {
                Job::Say(text) => match rt.run_root(&text) {
                    Ok(reply) => print_reply(&rt, &reply.body),
                    Err(e) => eprintln!("error: {e}"),
                },
                Job::Quit => break,
            }
            if let Some(p) = &session {
                rt.persist(p)?;
                rt.log().restart_write_ahead(&wal_path(p))?;
            }
            if interactive {
                print!("> ");
                io::stdout().flush().ok();
            }
        }
        if let Some(p) = &session {
            rt.persist(p)?;
        }
        Ok(())
    });

    if !args.messages.is_empty() {
        for m in args.messages {
            tx.send(Job::Say(m)).ok();
        }
    } else {
        eprintln!("{HELP}");
        print!("> ");
        io::stdout().flush().ok();
        for line in io::stdin().lock().lines() {
            let line = line?;
            let trimmed = line.trim();
            match trimmed.split_once(' ').map_or((trimmed, ""), |(a, b)| (a, b.trim())) {
                ("", _) => {}
                ("/quit", _) | ("/exit", _) => break,
                ("/pause", _) => {
                    control.pause();
                    eprintln!("paused (takes effect at the next step boundary)");
                }
                ("/resume", _) => {
                    control.resume();
                    eprintln!("resumed");
                }
                ("/tree", _) => {
                    let view = tree_view(&ctx);
                    print!(
                        "{}",
                        if view.outline.is_empty() {
                            "(empty)\n".into()
                        } else {
                            view.outline
                        }
                    );
                }
                ("/inject", rest) => {
                    let (target, body) = match rest.split_once(' ') {
                        Some((t, b)) if t.starts_with('#') => (Target::parse(t).unwrap_or(Target::Active), b),
                        _ => (Target::Active, rest),
                    };
                    if body.is_empty() {
                        eprintln!("usage: /inject [#node] text");
                    } else {
                        let ack = control.inject(target, body, ctx.clock.now_ms());
                        eprintln!("{}", ack.status);
                    }
                }
                ("/help", _) => eprintln!("{HELP}"),
                (cmd, _) if cmd.starts_with('/') => eprintln!("unknown command {cmd}; {HELP}"),
                _ => {
                    tx.send(Job::Say(line.clone())).ok();
                }
            }
        }
    }
    tx.send(Job::Quit).ok();
    drop(tx);
    worker.join().map_err(|_| anyhow!("scheduler thread panicked"))?
}

fn inspect(file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let lines = event_lines(&text)?;
    let rebuilt = reconstruct_from_lines(&lines);
    print!("{}", inspect_report(&rebuilt));
    Ok(())
}

fn module(which: ModuleCmd) -> Result<()> {
    match which {
        ModuleCmd::Scripter { workspace, listen } => {
            std::fs::create_dir_all(&workspace)?;
            let s = Scripter::new(ScripterConfig::new(workspace))?;
            serve_forever(&Address::parse(&listen), s)?;
        }
        ModuleCmd::Docbrowser { corpus, listen } => {
            if !corpus.is_dir() {
                bail!("corpus {} is not a directory", corpus.display());
            }
            serve_forever(&Address::parse(&listen), DocBrowser::new(corpus))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run(args) => run(args, None),
        Cmd::Serve { run: args, bind } => run(args, Some(bind)),
        Cmd::Inspect { file } => inspect(&file),
        Cmd::Module { which } => module(which),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
