//! Trajectory export as CSV and JSON.
//!
//! Both formats carry one row per sample and node. Numbers are written in
//! shortest round-trip form, so identical trajectories give identical bytes.

use std::io::{self, Write};

use serde::Serialize;

use crate::scalar::Real;
use crate::sim::Trajectory;

/// Column names for a trajectory with state dimension `n` and input
/// dimension `p`.
pub fn columns(n: usize, p: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "node".to_string()];
    for prefix in ["x", "s", "p", "r"] {
        cols.extend((0..n).map(|k| format!("{prefix}_{k}")));
    }
    cols.extend((0..p).map(|k| format!("u_{k}")));
    for c in ["mu", "alpha", "V1", "V2", "consensus_err", "avg_track_err"] {
        cols.push(c.to_string());
    }
    cols
}

/// Numeric rows in [`columns`] order.
pub fn rows<T: Real>(traj: &Trajectory<T>) -> Vec<Vec<f64>> {
    let f = |v: T| v.to_f64_lossy();
    let mut out = Vec::with_capacity(traj.samples.len() * traj.n_nodes);
    for s in &traj.samples {
        for (i, nd) in s.nodes.iter().enumerate() {
            let mut row = vec![f(s.t), i as f64];
            for v in [&nd.x, &nd.s, &nd.p, &nd.r, &nd.u] {
                row.extend(v.iter().map(|&e| f(e)));
            }
            row.extend([
                f(nd.mu),
                f(nd.alpha),
                f(s.v1),
                f(s.v2),
                f(s.consensus_err),
                f(nd.avg_track_err),
            ]);
            out.push(row);
        }
    }
    out
}

pub fn write_csv<T: Real, W: Write>(traj: &Trajectory<T>, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns(traj.state_dim, traj.input_dim))?;
    for row in rows(traj) {
        w.write_record(row.iter().enumerate().map(|(k, v)| {
            if k == 1 {
                format!("{}", *v as usize)
            } else {
                format!("{v}")
            }
        }))?;
    }
    let mut inner = w.into_inner().map_err(|e| e.into_error())?;
    if let Some(a) = &traj.aborted {
        writeln!(inner, "# ABORTED t={} node={}", a.time, a.node)?;
    }
    inner.flush()
}

#[derive(Serialize)]
struct AbortJson {
    time: f64,
    node: usize,
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    variant: &'a str,
    n_nodes: usize,
    state_dim: usize,
    input_dim: usize,
    dt: f64,
    monitor_stride: usize,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    aborted: Option<AbortJson>,
}

pub fn write_json<T: Real, W: Write>(traj: &Trajectory<T>, out: W) -> io::Result<()> {
    let doc = TrajectoryJson {
        variant: traj.variant,
        n_nodes: traj.n_nodes,
        state_dim: traj.state_dim,
        input_dim: traj.input_dim,
        dt: traj.dt.to_f64_lossy(),
        monitor_stride: traj.monitor_stride,
        columns: columns(traj.state_dim, traj.input_dim),
        rows: rows(traj),
        aborted: traj.aborted.as_ref().map(|a| AbortJson {
            time: a.time,
            node: a.node,
        }),
    };
    serde_json::to_writer(out, &doc).map_err(io::Error::from)
}
