use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MemoryMode, ReplayResult, RolloutError, RolloutResult, TraceEvent};
use crate::membank::MergeTrace;
use crate::worldsim::Action;

pub const MEMTRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MemTraceStep {
    pub t: usize,
    pub events: Vec<TraceEvent>,
    pub merge: Option<MergeTrace>,
}

/// Contents of `memtrace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MemTrace {
    pub schema_version: u32,
    pub trajectory: usize,
    pub memory_mode: MemoryMode,
    pub truncated: bool,
    pub cross_size: usize,
    pub steps: Vec<MemTraceStep>,
}

impl MemTrace {
    pub fn from_result(r: &RolloutResult) -> Self {
        let t_of = |e: &TraceEvent| match *e {
            TraceEvent::Reset { t }
            | TraceEvent::Deposit { t }
            | TraceEvent::Merge { t, .. }
            | TraceEvent::Action { t, .. }
            | TraceEvent::Observation { t }
            | TraceEvent::AppendCross { t, .. } => t,
        };
        let mut steps: Vec<MemTraceStep> = Vec::new();
        for e in &r.trace {
            let t = t_of(e);
            if steps.last().map(|s| s.t) != Some(t) {
                steps.push(MemTraceStep {
                    t,
                    events: Vec::new(),
                    merge: r.merges.iter().find(|m| m.step == t).cloned(),
                });
            }
            steps.last_mut().unwrap().events.push(*e);
        }
        Self {
            schema_version: MEMTRACE_SCHEMA_VERSION,
            trajectory: r.id,
            memory_mode: r.memory_mode,
            truncated: r.truncated,
            cross_size: r.cross_size,
            steps,
        }
    }
}

/// JSON schema of `memtrace.json`, as published in `schemas/memtrace.schema.json`.
pub fn memtrace_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(MemTrace)).expect("schema serializes")
}

pub fn rollout_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("rollout_{id:06}"))
}

/// Writes `rollout_%06d/` under `root`: `actions.csv`, `poses.csv`, and on
/// request the imagined frames, the true renders from `replay`, and
/// `memtrace.json`.
pub fn write_dump(
    root: &Path,
    r: &RolloutResult,
    replay: Option<&ReplayResult>,
    frames: bool,
    memtrace: bool,
) -> Result<PathBuf, RolloutError> {
    let dir = rollout_dir(root, r.id);
    fs::create_dir_all(&dir)?;
    let mut a = String::from("t,dx,dy,dyaw\n");
    for (i, act) in r.actions.iter().enumerate() {
        match act {
            Action::Move { dx, dy, dyaw } => writeln!(a, "{},{dx},{dy},{dyaw}", i + 1),
            Action::Stop => writeln!(a, "{},STOP,,", i + 1),
        }
        .expect("string write");
    }
    fs::write(dir.join("actions.csv"), a)?;
    let mut p = String::from("t,x,y,yaw\n");
    for (i, pose) in r.poses.iter().enumerate() {
        writeln!(p, "{i},{},{},{}", pose.x, pose.y, pose.yaw).expect("string write");
    }
    fs::write(dir.join("poses.csv"), p)?;
    if frames {
        for (i, img) in r.imagined.iter().enumerate() {
            img.write_ppm(&dir.join(format!("imag_{:03}.ppm", i + 1)))?;
        }
        if let Some(rep) = replay {
            for (i, v) in rep.true_views.iter().enumerate() {
                if let Some(img) = v {
                    img.write_ppm(&dir.join(format!("true_{:03}.ppm", i + 1)))?;
                }
            }
        }
    }
    if memtrace {
        fs::write(dir.join("memtrace.json"), serde_json::to_vec_pretty(&MemTrace::from_result(r))?)?;
    }
    Ok(dir)
}
