//! Rolling-enrollment panel data: trajectories of timestamped instances.
//!
//! A trajectory is the sequence of repeated measures for one subject. Treated
//! trajectories enter treatment exactly once (the first instance with `z = 1`);
//! control trajectories are never treated and offer every eligible instance as
//! a pseudo-treatment time.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(subject, timepoint)` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub time: i64,
    /// Timepoints since treatment entry, inclusive; 0 while untreated.
    pub z: u32,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    /// Sorted by strictly increasing time.
    pub instances: Vec<Instance>,
    /// Time with `z = 1`, or `None` for never-treated subjects.
    pub treatment_time: Option<i64>,
}

impl Trajectory {
    /// Builds a trajectory from unordered instances, deriving the treatment time.
    pub fn new(id: impl Into<String>, mut instances: Vec<Instance>) -> Result<Self> {
        let id = id.into();
        instances.sort_by_key(|inst| inst.time);
        for pair in instances.windows(2) {
            if pair[0].time == pair[1].time {
                return Err(Error::DuplicateTime {
                    id,
                    time: pair[0].time,
                });
            }
        }
        let mut previous = 0u32;
        let mut treatment_time = None;
        for inst in &instances {
            let ok = if previous == 0 {
                inst.z <= 1
            } else {
                inst.z == previous + 1
            };
            if !ok {
                return Err(Error::ZSequence {
                    id,
                    previous,
                    found: inst.z,
                });
            }
            if inst.z == 1 {
                treatment_time = Some(inst.time);
            }
            previous = inst.z;
        }
        Ok(Self {
            id,
            instances,
            treatment_time,
        })
    }

    pub fn is_treated(&self) -> bool {
        self.treatment_time.is_some()
    }

    pub fn position(&self, time: i64) -> Option<usize> {
        self.instances.binary_search_by_key(&time, |i| i.time).ok()
    }

    pub fn instance_at(&self, time: i64) -> Option<&Instance> {
        self.position(time).map(|p| &self.instances[p])
    }
}

/// Study-level settings shared by matching and estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Lag depth `L` of the covariate history.
    pub lag: usize,
    /// Controls per treated unit, `C`.
    pub controls_per_treated: usize,
    pub covariates: Vec<String>,
    /// Explicit candidate comparison times for controls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_times: Option<Vec<i64>>,
    /// Difference-in-differences analysis: histories are also needed at `t - 1`.
    #[serde(default)]
    pub did: bool,
}

impl StudyConfig {
    pub fn new(lag: usize, controls_per_treated: usize, covariates: Vec<String>) -> Self {
        Self {
            lag,
            controls_per_treated,
            covariates,
            pseudo_times: None,
            did: false,
        }
    }

    /// Initial window during which nobody may be treated.
    pub fn burn_in(&self) -> usize {
        if self.did {
            self.lag
        } else {
            self.lag - 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::Config("lag must be at least 1".into()));
        }
        if self.controls_per_treated == 0 {
            return Err(Error::Config("controls_per_treated must be at least 1".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::Config("at least one covariate is required".into()));
        }
        if let Some(times) = &self.pseudo_times {
            if let Some(t) = times.iter().find(|&&t| t < self.lag as i64) {
                return Err(Error::Config(format!(
                    "pseudo time {t} is below the lag depth {}",
                    self.lag
                )));
            }
        }
        Ok(())
    }
}

/// Reference to an instance by trajectory id and time; ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub id: String,
    pub time: i64,
}

/// Index-based reference into a [`PanelDataset`]. Trajectories are stored
/// sorted by id, so the derived ordering agrees with [`InstanceKey`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceRef {
    pub trajectory: usize,
    pub time: i64,
}

#[derive(Debug, Clone)]
pub struct PanelDataset {
    trajectories: Vec<Trajectory>,
    config: StudyConfig,
    index: HashMap<String, usize>,
}

impl PartialEq for PanelDataset {
    fn eq(&self, other: &Self) -> bool {
        self.trajectories == other.trajectories && self.config == other.config
    }
}

impl PanelDataset {
    /// Validates trajectories against the configuration and sorts them by id.
    pub fn new(mut trajectories: Vec<Trajectory>, config: StudyConfig) -> Result<Self> {
        config.validate()?;
        let k = config.covariates.len();
        trajectories.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::with_capacity(trajectories.len());
        for (pos, traj) in trajectories.iter().enumerate() {
            if index.insert(traj.id.clone(), pos).is_some() {
                return Err(Error::Config(format!("trajectory id `{}` is repeated", traj.id)));
            }
            for inst in &traj.instances {
                if inst.covariates.len() != k {
                    return Err(Error::Dimension {
                        expected: k,
                        found: inst.covariates.len(),
                    });
                }
                if inst.time < 1 {
                    return Err(Error::Config(format!(
                        "trajectory {}: time {} is before the first timepoint",
                        traj.id, inst.time
                    )));
                }
            }
        }
        let dataset = Self {
            trajectories,
            config,
            index,
        };
        dataset.validate_treated()?;
        Ok(dataset)
    }

    fn validate_treated(&self) -> Result<()> {
        let burn_in = self.config.burn_in();
        for (pos, traj) in self.trajectories.iter().enumerate() {
            let Some(t) = traj.treatment_time else {
                continue;
            };
            if t <= burn_in as i64 {
                return Err(Error::BurnIn {
                    id: traj.id.clone(),
                    treatment_time: t,
                    burn_in,
                });
            }
            self.history(pos, t)?;
            if self.config.did {
                self.history(pos, t - 1)?;
            }
        }
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn n_treated(&self) -> usize {
        self.trajectories.iter().filter(|t| t.is_treated()).count()
    }

    pub fn n_control(&self) -> usize {
        self.trajectories.len() - self.n_treated()
    }

    pub fn n_covariates(&self) -> usize {
        self.config.covariates.len()
    }

    /// Length `k * L` of a lagged history.
    pub fn history_len(&self) -> usize {
        self.n_covariates() * self.config.lag
    }

    pub fn trajectory_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownTrajectory(id.to_string()))
    }

    pub fn key(&self, r: InstanceRef) -> InstanceKey {
        InstanceKey {
            id: self.trajectories[r.trajectory].id.clone(),
            time: r.time,
        }
    }

    pub fn resolve(&self, key: &InstanceKey) -> Result<InstanceRef> {
        let trajectory = self.trajectory_index(&key.id)?;
        if self.trajectories[trajectory].position(key.time).is_none() {
            return Err(Error::DesignMismatch(format!(
                "no instance at ({}, {})",
                key.id, key.time
            )));
        }
        Ok(InstanceRef {
            trajectory,
            time: key.time,
        })
    }

    pub fn instance(&self, r: InstanceRef) -> Option<&Instance> {
        self.trajectories[r.trajectory].instance_at(r.time)
    }

    pub fn outcome(&self, r: InstanceRef) -> Option<f64> {
        self.instance(r).map(|i| i.outcome)
    }

    /// Lagged covariate history of `id` at `t`, oldest timepoint first.
    pub fn lagged_history(&self, id: &str, t: i64) -> Result<Vec<f64>> {
        self.history(self.trajectory_index(id)?, t)
    }

    pub fn history(&self, trajectory: usize, t: i64) -> Result<Vec<f64>> {
        self.history_with_lag(trajectory, t, self.config.lag)
    }

    /// History at `t` spanning `lag` consecutive timepoints `t - lag + 1 ..= t`.
    pub fn history_with_lag(&self, trajectory: usize, t: i64, lag: usize) -> Result<Vec<f64>> {
        let traj = &self.trajectories[trajectory];
        let insufficient = || Error::InsufficientHistory {
            id: traj.id.clone(),
            time: t,
            lag,
        };
        if t < lag as i64 {
            return Err(insufficient());
        }
        let end = traj.position(t).ok_or_else(insufficient)?;
        if end + 1 < lag {
            return Err(insufficient());
        }
        let window = &traj.instances[end + 1 - lag..=end];
        if window[0].time != t - lag as i64 + 1 {
            return Err(insufficient());
        }
        let mut out = Vec::with_capacity(lag * self.n_covariates());
        for inst in window {
            out.extend_from_slice(&inst.covariates);
        }
        Ok(out)
    }

    fn has_history(&self, trajectory: usize, t: i64) -> bool {
        self.history(trajectory, t).is_ok()
    }

    /// Candidate comparison instances: never-treated trajectories at times with
    /// a full lagged history (and a full history at `t - 1` for DiD), restricted
    /// to the configured pseudo times when present. Sorted by `(id, time)`.
    pub fn eligible_controls(&self) -> Vec<InstanceRef> {
        let mut out = Vec::new();
        for (pos, traj) in self.trajectories.iter().enumerate() {
            if traj.is_treated() {
                continue;
            }
            for inst in &traj.instances {
                let t = inst.time;
                if let Some(times) = &self.config.pseudo_times {
                    if !times.contains(&t) {
                        continue;
                    }
                }
                if !self.has_history(pos, t) {
                    continue;
                }
                if self.config.did && !self.has_history(pos, t - 1) {
                    continue;
                }
                out.push(InstanceRef {
                    trajectory: pos,
                    time: t,
                });
            }
        }
        out
    }

    /// Every treated trajectory at its entry time, sorted by id.
    pub fn treated_instances(&self) -> Vec<InstanceRef> {
        self.trajectories
            .iter()
            .enumerate()
            .filter_map(|(pos, traj)| {
                traj.treatment_time.map(|time| InstanceRef {
                    trajectory: pos,
                    time,
                })
            })
            .collect()
    }

    /// Parses a long-format CSV with columns `id,time,z,outcome,<covariates…>`.
    pub fn from_csv_reader<R: Read>(reader: R, config: StudyConfig) -> Result<Self> {
        config.validate()?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_col = column("id")?;
        let time_col = column("time")?;
        let z_col = column("z")?;
        let outcome_col = column("outcome")?;
        let cov_cols = config
            .covariates
            .iter()
            .map(|c| column(c))
            .collect::<Result<Vec<_>>>()?;

        let mut groups: Vec<(String, Vec<Instance>)> = Vec::new();
        let mut group_of: HashMap<String, usize> = HashMap::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let field = |col: usize| record.get(col).unwrap_or("");
            let parse_err = |what: &str, value: &str| Error::Parse {
                line,
                message: format!("cannot parse {what} from `{value}`"),
            };
            let id = field(id_col).to_string();
            let time: i64 = field(time_col)
                .parse()
                .map_err(|_| parse_err("time", field(time_col)))?;
            let z: u32 = field(z_col)
                .parse()
                .map_err(|_| parse_err("z", field(z_col)))?;
            let outcome: f64 = field(outcome_col)
                .parse()
                .map_err(|_| parse_err("outcome", field(outcome_col)))?;
            let covariates = cov_cols
                .iter()
                .zip(&config.covariates)
                .map(|(&col, name)| field(col).parse::<f64>().map_err(|_| parse_err(name, field(col))))
                .collect::<Result<Vec<_>>>()?;
            let g = *group_of.entry(id.clone()).or_insert_with(|| {
                groups.push((id.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(Instance {
                time,
                z,
                outcome,
                covariates,
            });
        }
        if groups.is_empty() {
            return Err(Error::NoRows);
        }
        let trajectories = groups
            .into_iter()
            .map(|(id, instances)| Trajectory::new(id, instances))
            .collect::<Result<Vec<_>>>()?;
        Self::new(trajectories, config)
    }

    /// Writes the dataset back in the long-format CSV layout it is read from.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "time".into(), "z".into(), "outcome".into()];
        header.extend(self.config.covariates.iter().cloned());
        wtr.write_record(&header)?;
        for traj in &self.trajectories {
            for inst in &traj.instances {
                let mut rec = vec![
                    traj.id.clone(),
                    inst.time.to_string(),
                    inst.z.to_string(),
                    inst.outcome.to_string(),
                ];
                rec.extend(inst.covariates.iter().map(|v| v.to_string()));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads and validates a panel CSV from disk.
pub fn load_panel(path: impl AsRef<Path>, config: StudyConfig) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    PanelDataset::from_csv_reader(std::io::BufReader::new(file), config)
}
