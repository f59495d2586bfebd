//! Time-threshold accuracy curves, their normalized area, and paired
//! policy comparison.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::StartPose;
use crate::error::{Error, Result};

/// Calibration-time window of the accuracy curve, s.
pub const EVAL_WINDOW_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Heuristic,
    Rl,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Heuristic => "heuristic",
            Policy::Rl => "rl",
        })
    }
}

/// Outcome of one alignment attempt from one starting pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: u64,
    pub policy: Policy,
    pub seed: u64,
    pub start: StartPose,
    pub converged: bool,
    /// Simulated seconds to reach the success rate; present iff converged.
    pub time_s: Option<f64>,
}

impl TrialResult {
    pub fn converged_at(
        trial_id: u64,
        policy: Policy,
        seed: u64,
        start: StartPose,
        time_s: f64,
    ) -> Self {
        Self {
            trial_id,
            policy,
            seed,
            start,
            converged: true,
            time_s: Some(time_s),
        }
    }

    pub fn failed(trial_id: u64, policy: Policy, seed: u64, start: StartPose) -> Self {
        Self {
            trial_id,
            policy,
            seed,
            start,
            converged: false,
            time_s: None,
        }
    }

    /// Convergence time, `+∞` for failures.
    pub fn time_or_inf(&self) -> f64 {
        match (self.converged, self.time_s) {
            (true, Some(t)) => t,
            _ => f64::INFINITY,
        }
    }
}

fn check_non_empty(results: &[TrialResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Input("empty result set".into()));
    }
    Ok(())
}

/// Fraction of all trials that converged strictly before `threshold_s`.
pub fn accuracy_at(results: &[TrialResult], threshold_s: f64) -> Result<f64> {
    check_non_empty(results)?;
    let hits = results
        .iter()
        .filter(|r| r.time_or_inf() < threshold_s)
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// `(1/T)·∫₀ᵀ A(t) dt` evaluated in closed form: each trial converging at
/// `t_j < T` contributes a rectangle of width `T − t_j` and height `1/N`.
pub fn exact_auc(results: &[TrialResult], window_s: f64) -> Result<f64> {
    check_non_empty(results)?;
    if !(window_s > 0.0) {
        return Err(Error::domain("window_s", window_s, "> 0"));
    }
    let area: f64 = results
        .iter()
        .map(|r| (window_s - r.time_or_inf().max(0.0)).max(0.0))
        .sum();
    Ok(area / (window_s * results.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds_s: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// Curve CSV: `threshold_s,accuracy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold_s", "accuracy"])?;
        for (t, a) in self.thresholds_s.iter().zip(&self.accuracy) {
            w.write_record([t.to_string(), a.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<curve csv>", e))?;
        Ok(())
    }
}

/// Accuracy on `n_thresholds` evenly spaced thresholds over the default
/// window, plus the exact area.
pub fn roc_curve(results: &[TrialResult], n_thresholds: usize) -> Result<RocCurve> {
    roc_curve_in_window(results, n_thresholds, EVAL_WINDOW_S)
}

pub fn roc_curve_in_window(
    results: &[TrialResult],
    n_thresholds: usize,
    window_s: f64,
) -> Result<RocCurve> {
    if n_thresholds < 2 {
        return Err(Error::domain("n_thresholds", n_thresholds as f64, ">= 2"));
    }
    let auc = exact_auc(results, window_s)?;
    let mut times: Vec<f64> = results.iter().map(TrialResult::time_or_inf).collect();
    times.sort_by(f64::total_cmp);
    let n = results.len() as f64;
    let thresholds_s: Vec<f64> = (0..n_thresholds)
        .map(|i| window_s * i as f64 / (n_thresholds - 1) as f64)
        .collect();
    let accuracy = thresholds_s
        .iter()
        .map(|&t| times.partition_point(|&x| x < t) as f64 / n)
        .collect();
    Ok(RocCurve {
        thresholds_s,
        accuracy,
        auc,
    })
}

/// Median with failures ranked last as `+∞`.
pub fn median_time(results: &[TrialResult]) -> Result<f64> {
    check_non_empty(results)?;
    let mut times: Vec<f64> = results.iter().map(TrialResult::time_or_inf).collect();
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        let (a, b) = (times[n / 2 - 1], times[n / 2]);
        if b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_trials: usize,
    pub auc_ha: f64,
    pub auc_rl: f64,
    /// `auc_rl − auc_ha`.
    pub delta: f64,
    pub median_ha_s: f64,
    pub median_rl_s: f64,
    /// Fraction of paired starts where RL converged first; ties count one half.
    pub win_rate: f64,
    pub roc_ha: RocCurve,
    pub roc_rl: RocCurve,
}

impl ComparisonReport {
    /// Header line and value line.
    pub fn to_text(&self) -> String {
        format!(
            "auc_ha,auc_rl,delta,median_ha_s,median_rl_s,win_rate\n{},{},{},{},{},{}\n",
            self.auc_ha, self.auc_rl, self.delta, self.median_ha_s, self.median_rl_s, self.win_rate
        )
    }
}

/// Pairs trials by id; the two sets must cover the same ids with the same
/// seeds and starting poses.
pub fn compare_policies(
    ha: &[TrialResult],
    rl: &[TrialResult],
    n_thresholds: usize,
) -> Result<ComparisonReport> {
    check_non_empty(ha)?;
    check_non_empty(rl)?;
    let index = |set: &[TrialResult]| -> Result<BTreeMap<u64, TrialResult>> {
        let mut m = BTreeMap::new();
        for r in set {
            if m.insert(r.trial_id, *r).is_some() {
                return Err(Error::Pairing(format!("duplicate trial_id {}", r.trial_id)));
            }
        }
        Ok(m)
    };
    let (ha_map, rl_map) = (index(ha)?, index(rl)?);
    if ha_map.len() != rl_map.len() {
        return Err(Error::Pairing(format!(
            "{} heuristic vs {} rl trials",
            ha_map.len(),
            rl_map.len()
        )));
    }
    let mut wins = 0.0;
    for (id, h) in &ha_map {
        let r = rl_map
            .get(id)
            .ok_or_else(|| Error::Pairing(format!("trial_id {id} missing from rl results")))?;
        if h.seed != r.seed || h.start != r.start {
            return Err(Error::Pairing(format!(
                "trial_id {id}: seeds or starting poses differ"
            )));
        }
        wins += match r.time_or_inf().partial_cmp(&h.time_or_inf()) {
            Some(Ordering::Less) => 1.0,
            Some(Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    let roc_ha = roc_curve(ha, n_thresholds)?;
    let roc_rl = roc_curve(rl, n_thresholds)?;
    Ok(ComparisonReport {
        n_trials: ha_map.len(),
        auc_ha: roc_ha.auc,
        auc_rl: roc_rl.auc,
        delta: roc_rl.auc - roc_ha.auc,
        median_ha_s: median_time(ha)?,
        median_rl_s: median_time(rl)?,
        win_rate: wins / ha_map.len() as f64,
        roc_ha,
        roc_rl,
    })
}

pub const TRIALS_HEADER: [&str; 8] = [
    "trial_id",
    "policy",
    "seed",
    "r0_um",
    "theta0_rad",
    "z0_um",
    "converged",
    "time_s",
];

/// Trials CSV; `time_s` is empty for failed trials.
pub fn write_trials_csv<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER)?;
    for r in results {
        w.write_record([
            r.trial_id.to_string(),
            r.policy.to_string(),
            r.seed.to_string(),
            r.start.r_um.to_string(),
            r.start.theta_rad.to_string(),
            r.start.z_um.to_string(),
            r.converged.to_string(),
            r.time_s.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trials csv>", e))?;
    Ok(())
}

pub fn read_trials_csv<R: Read>(input: R) -> Result<Vec<TrialResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRIALS_HEADER) {
        return Err(Error::Input(format!(
            "unexpected trials header: {header:?}"
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Input(format!("trials row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let policy = match &rec[1] {
            "heuristic" => Policy::Heuristic,
            "rl" => Policy::Rl,
            _ => return Err(bad("policy")),
        };
        let converged: bool = rec[6].parse().map_err(|_| bad("converged"))?;
        let time_s = if rec[7].is_empty() {
            None
        } else {
            Some(num(7, "time_s")?)
        };
        if converged != time_s.is_some() {
            return Err(bad("converged/time_s combination"));
        }
        out.push(TrialResult {
            trial_id: rec[0].parse().map_err(|_| bad("trial_id"))?,
            policy,
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            start: StartPose {
                r_um: num(3, "r0_um")?,
                theta_rad: num(4, "theta0_rad")?,
                z_um: num(5, "z0_um")?,
            },
            converged,
            time_s,
        });
    }
    Ok(out)
}
