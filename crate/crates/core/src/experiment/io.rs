//! Trajectory files: `t,X,Y,Z` CSV with 17 significant digits plus a
//! `key = value` sidecar holding the metadata.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{ModelKind, SirParams, SirState};
use crate::simulator::{Trajectory, TrajectoryMeta};
use crate::transmission::ThetaParams;

use super::config::fmt_f64;

/// Scientific notation with 17 significant digits; parses back exactly.
pub fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

pub fn write_states(path: &Path, times: &[f64], states: &[SirState]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["t", "X", "Y", "Z"]).map_err(|e| csv_error(path, e))?;
    for (t, s) in times.iter().zip(states) {
        w.write_record([fmt_exact(*t), fmt_exact(s.x), fmt_exact(s.y), fmt_exact(s.z)])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn render_meta(traj: &Trajectory) -> String {
    let m = &traj.meta;
    let mut lines = vec![format!("model = {}", traj.model)];
    for (name, v) in ThetaParams::names(m.theta.order()).iter().zip(m.theta.to_vec()) {
        lines.push(format!("theta0_{name} = {}", fmt_f64(v)));
    }
    lines.push(format!("lambda = {}", fmt_f64(m.lambda)));
    lines.push(format!("seed = {}", m.seed.map_or("none".to_string(), |s| s.to_string())));
    lines.push(format!("clamp_count = {}", m.clamp_count));
    lines.push(format!("flagged = {}", m.flagged()));
    lines.push(format!("birth = {}", fmt_f64(m.params.birth)));
    lines.push(format!("mortality = {}", fmt_f64(m.params.mortality)));
    lines.push(format!("recovery = {}", fmt_f64(m.params.recovery)));
    lines.push(format!("sigma = {}", fmt_f64(m.params.sigma)));
    lines.push(format!("eps = {}", fmt_f64(m.params.eps)));
    lines.join("\n") + "\n"
}

/// Writes `path` and its `.meta` sidecar.
pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_states(path, &traj.times, &traj.states)?;
    std::fs::write(meta_path(path), render_meta(traj))?;
    Ok(())
}

pub fn read_states(path: &Path) -> Result<(Vec<f64>, Vec<SirState>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "X", "Y", "Z"] {
        return Err(Error::Parse(format!("{}: expected header t,X,Y,Z", path.display())));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("{}: bad number `{f}`", path.display()))))
            .collect::<Result<_>>()?;
        times.push(v[0]);
        states.push(SirState::new(v[1], v[2], v[3]));
    }
    Ok((times, states))
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}: bad line `{line}`", path.display())))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Reads a trajectory written by [`save_trajectory`].
pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let (times, states) = read_states(path)?;
    let mpath = meta_path(path);
    let meta = parse_meta(&mpath)?;
    let get = |k: &str| -> Result<&String> {
        meta.get(k).ok_or_else(|| Error::Parse(format!("{}: missing key `{k}`", mpath.display())))
    };
    let float = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| Error::Parse(format!("{}: bad value for `{k}`", mpath.display())))
    };
    let model: ModelKind = get("model")?.parse()?;
    let n_theta = meta.keys().filter(|k| k.starts_with("theta0_")).count();
    if n_theta < 4 || n_theta % 2 != 0 {
        return Err(Error::Parse(format!("{}: incomplete theta0 entries", mpath.display())));
    }
    let order = (n_theta - 2) / 2;
    let theta_vec: Vec<f64> = ThetaParams::names(order)
        .iter()
        .map(|n| float(&format!("theta0_{n}")))
        .collect::<Result<_>>()?;
    let seed = match get("seed")?.as_str() {
        "none" => None,
        s => Some(s.parse().map_err(|_| Error::Parse(format!("{}: bad seed", mpath.display())))?),
    };
    Ok(Trajectory {
        model,
        times,
        states,
        meta: TrajectoryMeta {
            theta: ThetaParams::from_slice(&theta_vec)?,
            params: SirParams {
                birth: float("birth")?,
                mortality: float("mortality")?,
                recovery: float("recovery")?,
                sigma: float("sigma")?,
                eps: float("eps")?,
            },
            seed,
            lambda: float("lambda")?,
            clamp_count: get("clamp_count")?
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad clamp_count", mpath.display())))?,
        },
    })
}
