//! CSV flight logs with a JSON metadata sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{CommandFPQR, QuadState, Vec3};
use crate::netsim::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Flying,
    Shutdown,
}

impl AgentStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentStatus::Flying => "flying",
            AgentStatus::Shutdown => "shutdown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
    None,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
            Role::None => "none",
        }
    }
}

/// One agent after one physics tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightLogRecord {
    pub tick: u64,
    /// Time at the end of the tick, s.
    pub time: f64,
    pub agent: AgentId,
    pub state: QuadState,
    /// Command applied during the tick.
    pub command: CommandFPQR,
    /// Acceleration requested by the guidance layer (feed-forward part).
    pub guidance_acceleration: Vec3,
    /// Position reference, when guidance produced one.
    pub reference: Option<Vec3>,
    pub status: AgentStatus,
}

pub const CSV_HEADER: [&str; 24] = [
    "tick",
    "time",
    "agent",
    "status",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "roll",
    "pitch",
    "yaw",
    "thrust",
    "p",
    "q",
    "r",
    "ax_ref",
    "ay_ref",
    "az_ref",
    "px_ref",
    "py_ref",
    "pz_ref",
    "reference",
];

impl FlightLogRecord {
    fn fields(&self) -> Vec<String> {
        let s = &self.state;
        let mut out = vec![
            self.tick.to_string(),
            self.time.to_string(),
            self.agent.0.to_string(),
            self.status.as_str().to_string(),
        ];
        for v in [&s.position, &s.velocity, &s.attitude] {
            out.extend(v.iter().map(f64::to_string));
        }
        out.push(self.command.thrust.to_string());
        out.extend(self.command.rates.iter().map(f64::to_string));
        out.extend(self.guidance_acceleration.iter().map(f64::to_string));
        match self.reference {
            Some(r) => {
                out.extend(r.iter().map(f64::to_string));
                out.push("1".into());
            }
            None => {
                out.extend(["0", "0", "0", "0"].map(String::from));
            }
        }
        out
    }
}

/// Streams records to a CSV file in a fixed column order.
pub struct FlightLogWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    records: u64,
}

impl FlightLogWriter {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
        writer
            .write_record(CSV_HEADER)
            .map_err(std::io::Error::other)?;
        Ok(Self {
            path,
            writer,
            records: 0,
        })
    }

    pub fn write(&mut self, record: &FlightLogRecord) -> std::io::Result<()> {
        self.records += 1;
        self.writer
            .write_record(record.fields())
            .map_err(std::io::Error::other)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Reproducibility metadata written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub schema_version: u32,
    pub physics_hz: f64,
    pub ticks: u64,
    pub records: u64,
    pub engine_version: String,
}

pub fn metadata_path(log_path: &Path) -> PathBuf {
    let mut name = log_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    log_path.with_file_name(name)
}

pub fn write_metadata(log_path: &Path, meta: &LogMetadata) -> std::io::Result<PathBuf> {
    let path = metadata_path(log_path);
    let mut f = File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, meta).map_err(std::io::Error::other)?;
    f.write_all(b"\n")?;
    Ok(path)
}
