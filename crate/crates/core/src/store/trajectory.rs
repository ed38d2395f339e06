//! JSON-lines trajectory logs.
//!
//! The first line may be a header record (`"record":"header"`) carrying the
//! run id, task and free-form metadata; every other line is one step
//! (`"record":"step"`). Steps are strictly increasing in `(episode, t)`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TwoStep,
    GridWorld,
    Graph,
}

impl TaskKind {
    pub fn has_rewards(self) -> bool {
        !matches!(self, TaskKind::Graph)
    }

    pub fn has_actions(self) -> bool {
        !matches!(self, TaskKind::Graph)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub t: u64,
    pub state: usize,
    pub action: Option<usize>,
    pub reward: Option<f64>,
    pub next_state: usize,
    /// The transition ended the episode (bootstrap target is zero).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminal: bool,
}

impl StepRecord {
    pub fn key(&self) -> (u64, u64) {
        (self.episode, self.t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub run_id: String,
    pub task: Option<TaskKind>,
    pub steps: Vec<StepRecord>,
    pub meta: BTreeMap<String, String>,
}

impl TrajectoryLog {
    pub fn new(run_id: impl Into<String>, task: TaskKind) -> Self {
        TrajectoryLog {
            run_id: run_id.into(),
            task: Some(task),
            steps: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    /// Appends in memory, enforcing the `(episode, t)` order.
    pub fn push(&mut self, step: StepRecord) -> Result<()> {
        check_order(self.steps.last(), &step)?;
        self.steps.push(step);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of distinct episodes.
    pub fn n_episodes(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for s in &self.steps {
            if last != Some(s.episode) {
                n += 1;
                last = Some(s.episode);
            }
        }
        n
    }

    /// Checks step order and the per-task presence rules for actions/rewards.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<&StepRecord> = None;
        for (i, step) in self.steps.iter().enumerate() {
            check_order(prev, step)?;
            if let Some(task) = self.task {
                if task.has_actions() != step.action.is_some() {
                    return Err(StoreError::HeaderMismatch(format!(
                        "step {i}: action presence does not match task {task:?}"
                    )));
                }
            }
            prev = Some(step);
        }
        Ok(())
    }
}

fn check_order(last: Option<&StepRecord>, next: &StepRecord) -> Result<()> {
    match last {
        Some(last) if next.key() <= last.key() => Err(StoreError::OrderViolation {
            episode: next.episode,
            t: next.t,
            last_episode: last.episode,
            last_t: last.t,
        }),
        _ => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header {
        run_id: String,
        task: Option<TaskKind>,
        #[serde(default)]
        meta: BTreeMap<String, String>,
    },
    Step(StepRecord),
}

fn to_line(line: &Line) -> String {
    // Serializing these plain structs cannot fail.
    serde_json::to_string(line).expect("trajectory line serializes")
}

/// Loads a log; an empty file yields an empty log.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<TrajectoryLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    parse_lines(&text, path)
}

fn parse_lines(text: &str, path: &Path) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::default();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header { run_id, task, meta } => {
                if seen_header || !log.steps.is_empty() {
                    return Err(StoreError::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: "header record must be the first line".into(),
                    });
                }
                seen_header = true;
                log.run_id = run_id;
                log.task = task;
                log.meta = meta;
            }
            Line::Step(step) => log.push(step)?,
        }
    }
    Ok(log)
}

/// Writes a complete log (header + steps), replacing any existing file.
pub fn write_trajectory(path: impl AsRef<Path>, log: &TrajectoryLog) -> Result<()> {
    let mut w = TrajectoryWriter::create(path, &log.run_id, log.task, &log.meta)?;
    for step in &log.steps {
        w.append(step)?;
    }
    w.flush()
}

/// Appends one step to the log at `path`, creating the file if needed.
///
/// The existing file is scanned to enforce ordering; use [`TrajectoryWriter`]
/// for bulk appends.
pub fn append_trajectory(path: impl AsRef<Path>, step: &StepRecord) -> Result<()> {
    let mut w = TrajectoryWriter::open_append(path)?;
    w.append(step)?;
    w.flush()
}

/// Single-writer appender that remembers the last `(episode, t)` key.
pub struct TrajectoryWriter {
    path: PathBuf,
    out: BufWriter<File>,
    last: Option<StepRecord>,
}

impl TrajectoryWriter {
    pub fn create(
        path: impl AsRef<Path>,
        run_id: &str,
        task: Option<TaskKind>,
        meta: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| StoreError::io(&path, e))?;
        let mut w = TrajectoryWriter {
            out: BufWriter::new(file),
            path,
            last: None,
        };
        let header = Line::Header {
            run_id: run_id.to_string(),
            task,
            meta: meta.clone(),
        };
        w.write_line(&to_line(&header))?;
        Ok(w)
    }

    pub fn open_append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let last = if path.exists() {
            load_trajectory(&path)?.steps.pop()
        } else {
            None
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        Ok(TrajectoryWriter {
            out: BufWriter::new(file),
            path,
            last,
        })
    }

    pub fn append(&mut self, step: &StepRecord) -> Result<()> {
        check_order(self.last.as_ref(), step)?;
        let line = to_line(&Line::Step(step.clone()));
        self.write_line(&line)?;
        self.last = Some(step.clone());
        Ok(())
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| StoreError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| StoreError::io(&self.path, e))
    }
}
