//! Bundled shell module: `BASH(script)` inside a dedicated workspace.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use super::server::{ModuleHandler, Outcome};
use super::wire::{FunctionDoc, WireArg};
use crate::interpreter::{Param, ParamKind};
use crate::variables::{import_by_value, WireBlob};

pub const DEFAULT_OUTPUT_CAP: usize = 1024 * 1024;
pub const DEFAULT_CPU_SECS: u64 = 60;
pub const DEFAULT_WALL_SECS: u64 = 110;
const INTERNAL_DIR: &str = ".iact";
const LISTING_LIMIT: usize = 20;

pub const BASH_DOC: &str = "Run a shell command or script with bash in the module workspace. \
Returns combined stdout and stderr followed by the exit status.";

#[derive(Debug, Clone)]
pub struct ScripterConfig {
    pub workspace: PathBuf,
    pub output_cap: usize,
    pub cpu_secs: u64,
    pub wall_secs: u64,
}

impl ScripterConfig {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        ScripterConfig {
            workspace: workspace.into(),
            output_cap: DEFAULT_OUTPUT_CAP,
            cpu_secs: DEFAULT_CPU_SECS,
            wall_secs: DEFAULT_WALL_SECS,
        }
    }
}

#[derive(Debug)]
pub struct Scripter {
    config: ScripterConfig,
    cwd: PathBuf,
    runs: u64,
}

type Snapshot = HashMap<PathBuf, (u64, SystemTime)>;

impl Scripter {
    pub fn new(config: ScripterConfig) -> std::io::Result<Scripter> {
        fs::create_dir_all(config.workspace.join(INTERNAL_DIR).join("blobs"))?;
        let workspace = fs::canonicalize(&config.workspace)?;
        Ok(Scripter {
            cwd: workspace.clone(),
            config: ScripterConfig { workspace, ..config },
            runs: 0,
        })
    }

    pub fn workspace(&self) -> &Path {
        &self.config.workspace
    }

    fn snapshot(&self) -> Snapshot {
        walkdir::WalkDir::new(&self.config.workspace)
            .into_iter()
            .filter_entry(|e| e.file_name() != INTERNAL_DIR)
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .filter_map(|e| {
                let md = e.metadata().ok()?;
                Some((e.into_path(), (md.len(), md.modified().ok()?)))
            })
            .collect()
    }

    /// Flattens the script argument. Text references are inlined; binary
    /// ones are written under `.iact/blobs/` and replaced by that path.
    fn script_text(&self, arg: &WireArg, blobs: &[WireBlob]) -> Result<String, String> {
        match arg {
            WireArg::Ref(name) => {
                let blob = blobs
                    .iter()
                    .find(|b| b.name == *name)
                    .ok_or_else(|| format!("reference '{name}' has no attached value"))?;
                let content = import_by_value(blob).map_err(|e| e.to_string())?;
                match content.as_text() {
                    Some(t) => Ok(t.to_string()),
                    None => {
                        let path = self.config.workspace.join(INTERNAL_DIR).join("blobs").join(name);
                        fs::write(&path, content.bytes()).map_err(|e| e.to_string())?;
                        Ok(path.display().to_string())
                    }
                }
            }
            WireArg::Parts(parts) => {
                let mut s = String::new();
                for p in parts {
                    s.push_str(&self.script_text(p, blobs)?);
                }
                Ok(s)
            }
            other => other.to_text(blobs),
        }
    }

    fn run(&mut self, script: &str) -> Result<Outcome, String> {
        self.runs += 1;
        let internal = self.config.workspace.join(INTERNAL_DIR);
        let script_path = internal.join(format!("run_{}.sh", self.runs));
        let cwd_file = internal.join("cwd");
        fs::write(&script_path, script).map_err(|e| format!("cannot write script: {e}"))?;
        if !self.cwd.is_dir() {
            self.cwd = self.config.workspace.clone();
        }
        let before = self.snapshot();

        let wrapper = format!(
            "exec 2>&1\nulimit -t {}\ncd \"$1\" || exit 1\ntrap 'pwd > \"$2\"' EXIT\n. \"$3\"\n",
            self.config.cpu_secs
        );
        let mut child = Command::new("bash")
            .arg("-c")
            .arg(wrapper)
            .arg("iact-scripter")
            .arg(&self.cwd)
            .arg(&cwd_file)
            .arg(&script_path)
            .current_dir(&self.config.workspace)
            .env("IACT_WORKSPACE", &self.config.workspace)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()
            .map_err(|e| format!("cannot start bash: {e}"))?;
        let pgid = child.id() as i32;

        let mut stdout = child.stdout.take().expect("piped");
        let cap = self.config.output_cap;
        let reader = thread::spawn(move || {
            let mut kept = Vec::new();
            let mut total = 0usize;
            let mut buf = [0u8; 64 * 1024];
            loop {
                match stdout.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        total += n;
                        let room = cap.saturating_sub(kept.len());
                        kept.extend_from_slice(&buf[..n.min(room)]);
                    }
                }
            }
            (kept, total)
        });

        let deadline = Instant::now() + Duration::from_secs(self.config.wall_secs);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() >= deadline => {
                    timed_out = true;
                    kill_group(pgid);
                    break child.wait().ok();
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(_) => break None,
            }
        };
        // Background jobs would otherwise hold the pipe open.
        kill_group(pgid);
        let (kept, total) = reader.join().unwrap_or_default();

        if let Ok(dir) = fs::read_to_string(&cwd_file) {
            let dir = PathBuf::from(dir.trim_end());
            if dir.is_dir() {
                self.cwd = dir;
            }
        }

        let mut text = String::from_utf8_lossy(&kept).into_owned();
        let mut notices = Vec::new();
        if total > kept.len() {
            notices.push(format!(
                "[output truncated: {total} bytes produced, first {} shown]",
                kept.len()
            ));
        }
        if timed_out {
            notices.push(format!(
                "[wall-clock limit of {} s reached; process group killed]",
                self.config.wall_secs
            ));
        }
        match status {
            Some(s) => {
                if let Some(code) = s.code() {
                    if code != 0 {
                        notices.push(format!("[exit status: {code}]"));
                    }
                } else if let Some(sig) = s.signal() {
                    if !timed_out {
                        let why = if sig == libc::SIGXCPU || sig == libc::SIGKILL {
                            " (cpu time limit or external kill)"
                        } else {
                            ""
                        };
                        notices.push(format!("[terminated by signal {sig}{why}]"));
                    }
                }
            }
            None => notices.push("[exit status unknown]".into()),
        }
        if text.is_empty() && notices.is_empty() {
            text.push_str("(no output)");
        }
        for n in notices {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&n);
        }

        let after = self.snapshot();
        let mut written: Vec<String> = after
            .iter()
            .filter(|(p, meta)| before.get(*p) != Some(meta))
            .filter_map(|(p, _)| p.strip_prefix(&self.config.workspace).ok())
            .map(|p| p.display().to_string())
            .collect();
        written.sort();
        Ok(Outcome {
            text,
            blobs: Vec::new(),
            written,
        })
    }
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall on a process group we created.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

impl ModuleHandler for Scripter {
    fn name(&self) -> &str {
        "scripter"
    }

    fn functions(&self) -> Vec<FunctionDoc> {
        vec![FunctionDoc {
            name: "BASH".into(),
            params: vec![Param::new("script", ParamKind::HeredocBody)],
            documentation: BASH_DOC.into(),
            visible_in_states: None,
        }]
    }

    fn invoke(
        &mut self,
        function: &str,
        args: &BTreeMap<String, WireArg>,
        blobs: &[WireBlob],
    ) -> Result<Outcome, String> {
        match function {
            "BASH" => {
                let arg = args.get("script").ok_or("BASH requires a script body")?;
                let script = self.script_text(arg, blobs)?;
                self.run(&script)
            }
            other => Err(format!("unknown function {other}")),
        }
    }

    fn report(&mut self) -> String {
        let mut entries: Vec<String> = fs::read_dir(&self.cwd)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.file_name() != INTERNAL_DIR)
                    .map(|e| {
                        let mut n = e.file_name().to_string_lossy().into_owned();
                        if e.file_type().is_ok_and(|t| t.is_dir()) {
                            n.push('/');
                        }
                        n
                    })
                    .collect()
            })
            .unwrap_or_default();
        entries.sort();
        let more = entries.len().saturating_sub(LISTING_LIMIT);
        entries.truncate(LISTING_LIMIT);
        let mut files = if entries.is_empty() {
            "(empty)".to_string()
        } else {
            entries.join(", ")
        };
        if more > 0 {
            files.push_str(&format!(", ... {more} more"));
        }
        format!(
            "workspace: {}\ncwd: {}\nfiles: {files}",
            self.config.workspace.display(),
            self.cwd.display()
        )
    }
}
