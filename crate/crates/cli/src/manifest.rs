//! Run manifests and atomic file output.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "run.json";
pub const VERSION: &str = env!("COMMITBART_VERSION");

/// Record of one command invocation, written next to its outputs.
/// Everything except the two timing fields is a function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to replay the run.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

pub struct RunClock {
    started_unix: u64,
    start: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            start: Instant::now(),
        }
    }
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        args: Vec<String>,
        config: serde_json::Value,
        seed: u64,
        threads: usize,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        clock: &RunClock,
    ) -> Self {
        Self {
            command: command.to_string(),
            args,
            config,
            seed,
            threads,
            inputs,
            outputs,
            version: VERSION.to_string(),
            started_unix: clock.started_unix,
            wall_clock_secs: clock.start.elapsed().as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}
