//! Run manifests: the canonical argument list of a run plus descriptive
//! fields. Replaying a manifest re-parses the recorded arguments.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use tradeoff::{Error, Result};

pub const FILE_NAME: &str = "manifest.txt";
const HEADER: &str = "# tradeoff run manifest";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    /// Full argument list after the program name, paths made absolute.
    pub args: Vec<String>,
    /// Descriptive `key=value` fields; ignored on replay.
    pub fields: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            fields: Vec::new(),
        }
    }

    pub fn field(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let mut out = format!("{HEADER}\ncommand={}\n", self.command);
        for a in &self.args {
            let _ = writeln!(out, "arg={a}");
        }
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "timestamp={timestamp}");
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(FILE_NAME), self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, format!("{} is not a run manifest", path.display()))),
        }
        let mut command = None;
        let mut args = Vec::new();
        let mut fields = Vec::new();
        for (i, line) in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected key=value, found '{line}'")))?;
            match k {
                "command" => command = Some(v.to_string()),
                "arg" => args.push(v.to_string()),
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Self {
            command: command.ok_or_else(|| bad(0, "manifest names no command".into()))?,
            args,
            fields,
        })
    }
}

/// Absolute form of `path` when it exists, otherwise unchanged.
pub fn absolute(path: &Path) -> String {
    std::fs::canonicalize(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}
