//! Matched designs under rolling enrollment.
//!
//! Three variants differ in how control trajectories may be reused:
//!
//! * [`Variant::WithoutReplacement`]: a control trajectory appears in at most
//!   one matched set.
//! * [`Variant::TrajectoryReplacement`]: each control instance is used at most
//!   once, but distinct instances of one trajectory may serve different sets.
//! * [`Variant::InstanceReplacement`]: instances may be reused freely across
//!   sets. Sets are formed independently per treated instance.
//!
//! In every variant a matched set holds exactly `C` controls from distinct
//! trajectories. The two constrained variants are solved as integer min-cost
//! flow problems on distances quantized by [`COST_SCALE`].

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{fit_scaling, transformed_distance, CovariancePool, DistanceSpec, Metric, Scaling};
use crate::error::{Error, Result};
use crate::flow::{assignment, MinCostFlow};
use crate::panel::{InstanceKey, InstanceRef, PanelDataset};

/// Distances are multiplied by this factor and rounded to obtain integer flow costs.
pub const COST_SCALE: f64 = 1e6;

pub fn quantize(distance: f64) -> i64 {
    (distance * COST_SCALE).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithoutReplacement,
    TrajectoryReplacement,
    InstanceReplacement,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "without" | "without_replacement" => Ok(Variant::WithoutReplacement),
            "trajectory" | "trajectory_replacement" => Ok(Variant::TrajectoryReplacement),
            "instance" | "instance_replacement" => Ok(Variant::InstanceReplacement),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedControl {
    #[serde(flatten)]
    pub instance: InstanceKey,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub treated: InstanceKey,
    /// Ordered nearest first, ties by `(id, time)`.
    pub controls: Vec<MatchedControl>,
}

/// `K_M(i, t)`: how many matched sets use each control instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchWeights {
    counts: BTreeMap<InstanceKey, u32>,
}

impl MatchWeights {
    pub fn get(&self, key: &InstanceKey) -> u32 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&k| k as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&InstanceKey, u32)> {
        self.counts.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct WeightRow {
    id: String,
    time: i64,
    k: u32,
}

impl Serialize for MatchWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<WeightRow> = self
            .counts
            .iter()
            .map(|(key, &k)| WeightRow {
                id: key.id.clone(),
                time: key.time,
                k,
            })
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatchWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<WeightRow>::deserialize(d)?;
        Ok(Self {
            counts: rows
                .into_iter()
                .map(|r| (InstanceKey { id: r.id, time: r.time }, r.k))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDesign {
    pub variant: Variant,
    pub controls_per_treated: usize,
    pub lag: usize,
    pub matched_sets: Vec<MatchedSet>,
    pub weights: MatchWeights,
    pub total_distance: f64,
    /// Sum of quantized distances, the objective the flow solvers minimize.
    pub total_cost: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<InstanceKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
}

impl MatchedDesign {
    fn from_sets(
        variant: Variant,
        controls_per_treated: usize,
        lag: usize,
        matched_sets: Vec<MatchedSet>,
        dropped: Vec<InstanceKey>,
    ) -> Self {
        let mut design = Self {
            variant,
            controls_per_treated,
            lag,
            total_distance: 0.0,
            total_cost: 0,
            weights: MatchWeights::default(),
            matched_sets,
            dropped,
            dataset_sha256: None,
        };
        for set in &design.matched_sets {
            for c in &set.controls {
                design.total_distance += c.distance;
                design.total_cost += quantize(c.distance);
            }
        }
        design.weights = compute_weights(&design);
        design
    }

    /// Number of matched treated instances, `N1`.
    pub fn n_treated(&self) -> usize {
        self.matched_sets.len()
    }

    /// Checks the structural invariants of the variant against a dataset.
    pub fn validate(&self, dataset: &PanelDataset) -> Result<()> {
        let c = self.controls_per_treated;
        let mut trajectory_owner: BTreeMap<&str, usize> = BTreeMap::new();
        let mut instance_used: BTreeMap<&InstanceKey, usize> = BTreeMap::new();
        for (s, set) in self.matched_sets.iter().enumerate() {
            let treated = dataset.resolve(&set.treated)?;
            if dataset.trajectories()[treated.trajectory].treatment_time != Some(set.treated.time) {
                return Err(Error::DesignMismatch(format!(
                    "{} is not treated at time {}",
                    set.treated.id, set.treated.time
                )));
            }
            if set.controls.len() != c {
                return Err(Error::DesignMismatch(format!(
                    "matched set for {} has {} controls, expected {c}",
                    set.treated.id,
                    set.controls.len()
                )));
            }
            let mut ids: Vec<&str> = set.controls.iter().map(|m| m.instance.id.as_str()).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::DesignMismatch(format!(
                    "matched set for {} reuses a control trajectory",
                    set.treated.id
                )));
            }
            for m in &set.controls {
                let r = dataset.resolve(&m.instance)?;
                if dataset.trajectories()[r.trajectory].is_treated() {
                    return Err(Error::DesignMismatch(format!(
                        "{} is not a control trajectory",
                        m.instance.id
                    )));
                }
                match self.variant {
                    Variant::WithoutReplacement => {
                        if let Some(&o) = trajectory_owner.get(m.instance.id.as_str()) {
                            if o != s {
                                return Err(Error::DesignMismatch(format!(
                                    "control trajectory {} used by two matched sets",
                                    m.instance.id
                                )));
                            }
                        }
                        trajectory_owner.insert(&m.instance.id, s);
                    }
                    Variant::TrajectoryReplacement => {
                        if instance_used.insert(&m.instance, s).is_some() {
                            return Err(Error::DesignMismatch(format!(
                                "control instance ({}, {}) used twice",
                                m.instance.id, m.instance.time
                            )));
                        }
                    }
                    Variant::InstanceReplacement => {}
                }
            }
        }
        Ok(())
    }
}

/// Counts how many matched sets use each control instance.
pub fn compute_weights(design: &MatchedDesign) -> MatchWeights {
    let mut counts = BTreeMap::new();
    for set in &design.matched_sets {
        for c in &set.controls {
            *counts.entry(c.instance.clone()).or_insert(0) += 1;
        }
    }
    MatchWeights { counts }
}

/// Treated and candidate control instances with their transformed histories.
///
/// Matching and the enumeration oracles in the tests read distances from
/// the same context so that both see identical floating-point values.
pub struct MatchContext<'a> {
    dataset: &'a PanelDataset,
    spec: DistanceSpec,
    scaling: Scaling,
    treated: Vec<InstanceRef>,
    treated_x: Vec<Vec<f64>>,
    controls: Vec<InstanceRef>,
    control_x: Vec<Vec<f64>>,
    groups: Vec<Range<usize>>,
}

impl<'a> MatchContext<'a> {
    pub fn new(dataset: &'a PanelDataset, spec: &DistanceSpec) -> Result<Self> {
        spec.validate()?;
        let treated = dataset.treated_instances();
        if treated.is_empty() {
            return Err(Error::Degenerate("dataset has no treated trajectories".into()));
        }
        let controls = dataset.eligible_controls();
        let histories = |refs: &[InstanceRef]| -> Result<Vec<Vec<f64>>> {
            refs.iter().map(|r| dataset.history(r.trajectory, r.time)).collect()
        };
        let treated_h = histories(&treated)?;
        let control_h = histories(&controls)?;
        let scaling = if spec.metric == Metric::Euclidean {
            Scaling::identity(dataset.history_len())
        } else {
            match spec.covariance_pool {
                CovariancePool::EligibleControls => fit_scaling(&control_h, spec)?,
                CovariancePool::TreatedAndControls => {
                    let mut pool = control_h.clone();
                    pool.extend(treated_h.iter().cloned());
                    fit_scaling(&pool, spec)?
                }
            }
        };
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=controls.len() {
            if i == controls.len() || controls[i].trajectory != controls[start].trajectory {
                groups.push(start..i);
                start = i;
            }
        }
        Ok(Self {
            dataset,
            spec: spec.clone(),
            treated_x: treated_h.iter().map(|h| scaling.transform(h)).collect(),
            control_x: control_h.iter().map(|h| scaling.transform(h)).collect(),
            scaling,
            treated,
            controls,
            groups,
        })
    }

    pub fn dataset(&self) -> &PanelDataset {
        self.dataset
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn treated(&self) -> &[InstanceRef] {
        &self.treated
    }

    pub fn controls(&self) -> &[InstanceRef] {
        &self.controls
    }

    /// Index ranges into [`Self::controls`], one per control trajectory.
    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn distance(&self, treated: usize, control: usize) -> f64 {
        transformed_distance(&self.treated_x[treated], &self.control_x[control])
    }

    /// Whether a control instance lies within the caliper of a treated instance.
    pub fn admissible(&self, treated: usize, control: usize) -> bool {
        self.spec.admits(self.distance(treated, control))
    }

    /// Nearest admissible instance of each control trajectory, as
    /// `(distance, control index)` sorted nearest first with ties broken by
    /// `(id, time)`.
    pub fn ranked_trajectories(&self, treated: usize) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let mut pick: Option<(f64, usize)> = None;
            for c in g.clone() {
                let d = self.distance(treated, c);
                if !self.spec.admits(d) {
                    continue;
                }
                if pick.is_none_or(|(bd, _)| d < bd) {
                    pick = Some((d, c));
                }
            }
            best.extend(pick);
        }
        best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        best
    }

    fn treated_key(&self, t: usize) -> InstanceKey {
        self.dataset.key(self.treated[t])
    }

    fn matched_control(&self, t: usize, c: usize) -> MatchedControl {
        MatchedControl {
            instance: self.dataset.key(self.controls[c]),
            distance: self.distance(t, c),
        }
    }

    fn build_set(&self, t: usize, mut picks: Vec<usize>) -> MatchedSet {
        picks.sort_by(|&a, &b| self.distance(t, a).total_cmp(&self.distance(t, b)).then(a.cmp(&b)));
        MatchedSet {
            treated: self.treated_key(t),
            controls: picks.into_iter().map(|c| self.matched_control(t, c)).collect(),
        }
    }

    /// Treated instances with at least `c` admissible distinct trajectories.
    fn screen(&self, c: usize, allow_drop: bool) -> Result<(Vec<usize>, Vec<InstanceKey>)> {
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for t in 0..self.treated.len() {
            let admissible = self
                .groups
                .iter()
                .filter(|g| (g.start..g.end).any(|ci| self.admissible(t, ci)))
                .count();
            if admissible >= c {
                keep.push(t);
            } else if allow_drop {
                warn!("dropping treated {} with {admissible} admissible control trajectories", self.treated_key(t).id);
                dropped.push(self.treated_key(t));
            } else {
                return Err(Error::InfeasibleTreated(self.treated_key(t).id));
            }
        }
        if keep.is_empty() {
            return Err(Error::InfeasibleDesign("every treated instance was dropped".into()));
        }
        Ok((keep, dropped))
    }
}

/// Options shared by the three matching routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub variant: Variant,
    pub distance: DistanceSpec,
    pub controls_per_treated: usize,
    /// Drop infeasible treated instances with a warning instead of failing.
    #[serde(default)]
    pub allow_drop: bool,
}

pub fn build_design(dataset: &PanelDataset, options: &MatchOptions) -> Result<MatchedDesign> {
    let ctx = MatchContext::new(dataset, &options.distance)?;
    let c = options.controls_per_treated;
    if c == 0 {
        return Err(Error::Config("controls_per_treated must be at least 1".into()));
    }
    match options.variant {
        Variant::InstanceReplacement => instance_replacement(&ctx, c, options.allow_drop),
        Variant::TrajectoryReplacement => trajectory_replacement(&ctx, c, options.allow_drop),
        Variant::WithoutReplacement => without_replacement(&ctx, c, options.allow_drop),
    }
}

fn options(variant: Variant, spec: &DistanceSpec, c: usize) -> MatchOptions {
    MatchOptions {
        variant,
        distance: spec.clone(),
        controls_per_treated: c,
        allow_drop: false,
    }
}

/// Each treated instance takes its `c` nearest admissible control instances
/// from distinct trajectories. Instances may be shared between sets.
pub fn match_instance_replacement(dataset: &PanelDataset, spec: &DistanceSpec, c: usize) -> Result<MatchedDesign> {
    build_design(dataset, &options(Variant::InstanceReplacement, spec, c))
}

/// Minimum-total-distance design in which each control instance is used once.
pub fn match_trajectory_replacement(dataset: &PanelDataset, spec: &DistanceSpec, c: usize) -> Result<MatchedDesign> {
    build_design(dataset, &options(Variant::TrajectoryReplacement, spec, c))
}

/// Minimum-total-distance design in which each control trajectory serves one set.
pub fn match_without_replacement(dataset: &PanelDataset, spec: &DistanceSpec, c: usize) -> Result<MatchedDesign> {
    build_design(dataset, &options(Variant::WithoutReplacement, spec, c))
}

fn instance_replacement(ctx: &MatchContext<'_>, c: usize, allow_drop: bool) -> Result<MatchedDesign> {
    let picks: Vec<Option<Vec<usize>>> = (0..ctx.treated.len())
        .into_par_iter()
        .map(|t| {
            let ranked = ctx.ranked_trajectories(t);
            (ranked.len() >= c).then(|| ranked[..c].iter().map(|&(_, ci)| ci).collect())
        })
        .collect();
    let mut sets = Vec::new();
    let mut dropped = Vec::new();
    for (t, pick) in picks.into_iter().enumerate() {
        match pick {
            Some(p) => sets.push(ctx.build_set(t, p)),
            None if allow_drop => {
                warn!("dropping infeasible treated {}", ctx.treated_key(t).id);
                dropped.push(ctx.treated_key(t));
            }
            None => return Err(Error::InfeasibleTreated(ctx.treated_key(t).id)),
        }
    }
    if sets.is_empty() {
        return Err(Error::InfeasibleDesign("every treated instance was dropped".into()));
    }
    Ok(MatchedDesign::from_sets(
        Variant::InstanceReplacement,
        c,
        ctx.dataset.config().lag,
        sets,
        dropped,
    ))
}

fn trajectory_replacement(ctx: &MatchContext<'_>, c: usize, allow_drop: bool) -> Result<MatchedDesign> {
    let (keep, dropped) = ctx.screen(c, allow_drop)?;
    let n_controls = ctx.controls.len();
    // source, sink, treated nodes, instance nodes, then one node per
    // admissible (treated, trajectory) pair.
    let source = 0;
    let sink = 1;
    let treated_node = |k: usize| 2 + k;
    let instance_node = |ci: usize| 2 + keep.len() + ci;
    let mut g = MinCostFlow::new(2 + keep.len() + n_controls);
    for ci in 0..n_controls {
        g.add_edge(instance_node(ci), sink, 1, 0);
    }
    let mut arcs = Vec::new();
    for (k, &t) in keep.iter().enumerate() {
        g.add_edge(source, treated_node(k), c as i64, 0);
        for grp in &ctx.groups {
            let members: Vec<usize> = grp.clone().filter(|&ci| ctx.admissible(t, ci)).collect();
            if members.is_empty() {
                continue;
            }
            let pair = g.add_node();
            g.add_edge(treated_node(k), pair, 1, 0);
            for ci in members {
                let e = g.add_edge(pair, instance_node(ci), 1, quantize(ctx.distance(t, ci)));
                arcs.push((k, ci, e));
            }
        }
    }
    let demand = (c * keep.len()) as i64;
    let sol = g.solve(source, sink, demand);
    if sol.flow < demand {
        return Err(Error::InfeasibleDesign(format!(
            "only {} of {demand} control slots can be filled with distinct instances",
            sol.flow
        )));
    }
    let mut picks = vec![Vec::with_capacity(c); keep.len()];
    for (k, ci, e) in arcs {
        if g.flow_on(e) > 0 {
            picks[k].push(ci);
        }
    }
    let sets = keep
        .iter()
        .zip(picks)
        .map(|(&t, p)| ctx.build_set(t, p))
        .collect();
    Ok(MatchedDesign::from_sets(
        Variant::TrajectoryReplacement,
        c,
        ctx.dataset.config().lag,
        sets,
        dropped,
    ))
}

fn without_replacement(ctx: &MatchContext<'_>, c: usize, allow_drop: bool) -> Result<MatchedDesign> {
    let (keep, dropped) = ctx.screen(c, allow_drop)?;
    let n_groups = ctx.groups.len();
    let rows = keep.len() * c;
    if rows > n_groups {
        return Err(Error::InfeasibleDesign(format!(
            "{rows} control trajectories needed, {n_groups} available"
        )));
    }
    // Each treated instance is replicated c times; a trajectory offers its
    // nearest admissible instance to each treated instance.
    let mut nearest = vec![None; keep.len() * n_groups];
    for (k, &t) in keep.iter().enumerate() {
        for (gi, grp) in ctx.groups.iter().enumerate() {
            let mut pick: Option<(f64, usize)> = None;
            for ci in grp.clone() {
                let d = ctx.distance(t, ci);
                if ctx.spec.admits(d) && pick.is_none_or(|(bd, _)| d < bd) {
                    pick = Some((d, ci));
                }
            }
            nearest[k * n_groups + gi] = pick.map(|(_, ci)| ci);
        }
    }
    let mut costs = vec![None; rows * n_groups];
    for r in 0..rows {
        let k = r / c;
        for gi in 0..n_groups {
            costs[r * n_groups + gi] =
                nearest[k * n_groups + gi].map(|ci| quantize(ctx.distance(keep[k], ci)));
        }
    }
    let sol = assignment(&costs, rows, n_groups);
    if sol.matched() < rows {
        return Err(Error::InfeasibleDesign(format!(
            "only {} of {rows} control slots can be filled with distinct trajectories",
            sol.matched()
        )));
    }
    let mut picks = vec![Vec::with_capacity(c); keep.len()];
    for (r, col) in sol.row_to_col.iter().enumerate() {
        let k = r / c;
        let gi = col.expect("full assignment");
        picks[k].push(nearest[k * n_groups + gi].expect("admissible cell"));
    }
    let sets = keep
        .iter()
        .zip(picks)
        .map(|(&t, p)| ctx.build_set(t, p))
        .collect();
    Ok(MatchedDesign::from_sets(
        Variant::WithoutReplacement,
        c,
        ctx.dataset.config().lag,
        sets,
        dropped,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub treated_mean: f64,
    pub control_mean_raw: f64,
    pub control_mean_matched: f64,
    pub std_diff_raw: f64,
    pub std_diff_matched: f64,
    /// Treated standard deviation was zero; standardized differences set to 0.
    pub degenerate_scale: bool,
}

fn history_names(dataset: &PanelDataset) -> Vec<String> {
    let lag = dataset.config().lag;
    let mut names = Vec::with_capacity(dataset.history_len());
    for l in 0..lag {
        let offset = lag - 1 - l;
        for cov in &dataset.config().covariates {
            names.push(match (lag, offset) {
                (1, _) => cov.clone(),
                (_, 0) => format!("{cov}[t]"),
                _ => format!("{cov}[t-{offset}]"),
            });
        }
    }
    names
}

/// Covariate balance before and after matching, one row per history coordinate.
pub fn balance_table(dataset: &PanelDataset, design: &MatchedDesign) -> Result<Vec<BalanceRow>> {
    let dim = dataset.history_len();
    let n1 = design.n_treated();
    if n1 == 0 {
        return Err(Error::Degenerate("design has no matched sets".into()));
    }
    let c = design.controls_per_treated as f64;
    let treated: Vec<Vec<f64>> = design
        .matched_sets
        .iter()
        .map(|s| {
            let r = dataset.resolve(&s.treated)?;
            dataset.history(r.trajectory, r.time)
        })
        .collect::<Result<_>>()?;
    let raw: Vec<Vec<f64>> = dataset
        .eligible_controls()
        .into_iter()
        .map(|r| dataset.history(r.trajectory, r.time))
        .collect::<Result<_>>()?;
    let mut matched_sum = vec![0.0; dim];
    for (key, k) in design.weights.iter() {
        let r = dataset.resolve(key)?;
        let h = dataset.history(r.trajectory, r.time)?;
        for (s, v) in matched_sum.iter_mut().zip(&h) {
            *s += k as f64 / c * v;
        }
    }
    let names = history_names(dataset);
    let mut rows = Vec::with_capacity(dim);
    for j in 0..dim {
        let tm = treated.iter().map(|h| h[j]).sum::<f64>() / n1 as f64;
        let sd = if n1 > 1 {
            (treated.iter().map(|h| (h[j] - tm).powi(2)).sum::<f64>() / (n1 - 1) as f64).sqrt()
        } else {
            0.0
        };
        let raw_mean = if raw.is_empty() {
            f64::NAN
        } else {
            raw.iter().map(|h| h[j]).sum::<f64>() / raw.len() as f64
        };
        let matched_mean = matched_sum[j] / n1 as f64;
        let degenerate = !(sd > 0.0);
        if degenerate {
            warn!("treated standard deviation of {} is zero; standardized differences reported as 0", names[j]);
        }
        let std_diff = |m: f64| if degenerate { 0.0 } else { (tm - m) / sd };
        rows.push(BalanceRow {
            covariate: names[j].clone(),
            treated_mean: tm,
            control_mean_raw: raw_mean,
            control_mean_matched: matched_mean,
            std_diff_raw: std_diff(raw_mean),
            std_diff_matched: std_diff(matched_mean),
            degenerate_scale: degenerate,
        });
    }
    Ok(rows)
}

pub fn write_balance_csv<W: Write>(rows: &[BalanceRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Instance, StudyConfig, Trajectory};

    fn inst(time: i64, z: u32, x: f64, y: f64) -> Instance {
        Instance {
            time,
            z,
            outcome: y,
            covariates: vec![x],
        }
    }

    /// Two injured players and two non-injured players with two pseudo-injury
    /// times each, matched on a single performance covariate.
    pub(crate) fn figure_one() -> PanelDataset {
        let trajectories = vec![
            Trajectory::new("T1", vec![inst(1, 0, 0.250, 0.0), inst(2, 1, 0.300, 0.0)]).unwrap(),
            Trajectory::new("T2", vec![inst(1, 1, 0.305, 0.0)]).unwrap(),
            Trajectory::new("C1", vec![inst(1, 0, 0.302, 0.0), inst(2, 0, 0.310, 0.0)]).unwrap(),
            Trajectory::new("C2", vec![inst(1, 0, 0.315, 0.0), inst(2, 0, 0.340, 0.0)]).unwrap(),
        ];
        PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["obp".into()])).unwrap()
    }

    fn controls_of<'a>(d: &'a MatchedDesign, treated: &str) -> Vec<(&'a str, i64)> {
        d.matched_sets
            .iter()
            .find(|s| s.treated.id == treated)
            .unwrap()
            .controls
            .iter()
            .map(|c| (c.instance.id.as_str(), c.instance.time))
            .collect()
    }

    #[test]
    fn figure_one_instance_replacement_shares_c1a() {
        let ds = figure_one();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        assert_eq!(controls_of(&d, "T1"), vec![("C1", 1)]);
        assert_eq!(controls_of(&d, "T2"), vec![("C1", 1)]);
        let key = InstanceKey { id: "C1".into(), time: 1 };
        assert_eq!(d.weights.get(&key), 2);
        assert_eq!(d.weights.len(), 1);
        d.validate(&ds).unwrap();
    }

    #[test]
    fn figure_one_two_controls_never_from_one_trajectory() {
        let ds = figure_one();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 2).unwrap();
        for t in ["T1", "T2"] {
            let ids: Vec<&str> = controls_of(&d, t).iter().map(|c| c.0).collect();
            assert_eq!(ids, vec!["C1", "C2"]);
        }
        assert_eq!(controls_of(&d, "T1")[0], ("C1", 1));
        assert_eq!(d.weights.total(), 4);
    }

    #[test]
    fn figure_one_trajectory_replacement() {
        let ds = figure_one();
        let d = match_trajectory_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        assert_eq!(controls_of(&d, "T1"), vec![("C1", 1)]);
        assert_eq!(controls_of(&d, "T2"), vec![("C1", 2)]);
        d.validate(&ds).unwrap();
    }

    #[test]
    fn figure_one_without_replacement() {
        let ds = figure_one();
        let d = match_without_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        assert_eq!(controls_of(&d, "T1"), vec![("C1", 1)]);
        assert_eq!(controls_of(&d, "T2")[0].0, "C2");
        d.validate(&ds).unwrap();
    }

    #[test]
    fn without_replacement_counting_infeasibility() {
        let ds = figure_one();
        let err = match_without_replacement(&ds, &DistanceSpec::euclidean(), 2).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn caliper_infeasibility_and_drop() {
        let ds = figure_one();
        let spec = DistanceSpec::euclidean().with_caliper(0.0025);
        let err = match_instance_replacement(&ds, &spec, 1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTreated(ref id) if id == "T2"));
        let opts = MatchOptions {
            variant: Variant::InstanceReplacement,
            distance: spec,
            controls_per_treated: 1,
            allow_drop: true,
        };
        let d = build_design(&ds, &opts).unwrap();
        assert_eq!(d.n_treated(), 1);
        assert_eq!(d.dropped[0].id, "T2");
    }

    #[test]
    fn equal_distances_tie_total() {
        let trajectories = vec![
            Trajectory::new("a", vec![inst(1, 1, 0.0, 0.0)]).unwrap(),
            Trajectory::new("b", vec![inst(1, 1, 0.0, 0.0)]).unwrap(),
            Trajectory::new("c", vec![inst(1, 0, 1.0, 0.0), inst(2, 0, -1.0, 0.0)]).unwrap(),
            Trajectory::new("d", vec![inst(1, 0, 1.0, 0.0)]).unwrap(),
        ];
        let ds = PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["x".into()])).unwrap();
        let spec = DistanceSpec::euclidean();
        let tr = match_trajectory_replacement(&ds, &spec, 1).unwrap();
        let wo = match_without_replacement(&ds, &spec, 1).unwrap();
        assert_eq!(tr.total_cost, 2 * quantize(1.0));
        assert_eq!(wo.total_cost, 2 * quantize(1.0));
    }

    #[test]
    fn balance_for_identical_match() {
        let trajectories = vec![
            Trajectory::new("t1", vec![inst(1, 1, 1.0, 0.0)]).unwrap(),
            Trajectory::new("t2", vec![inst(1, 1, 3.0, 0.0)]).unwrap(),
            Trajectory::new("c1", vec![inst(1, 0, 1.0, 0.0), inst(2, 0, 7.0, 0.0)]).unwrap(),
            Trajectory::new("c2", vec![inst(1, 0, 3.0, 0.0)]).unwrap(),
        ];
        let ds = PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["x".into()])).unwrap();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        let rows = balance_table(&ds, &d).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.treated_mean, 2.0);
        assert_eq!(r.control_mean_matched, 2.0);
        assert_eq!(r.std_diff_matched, 0.0);
        // raw controls: 1, 7, 3
        assert!((r.control_mean_raw - 11.0 / 3.0).abs() < 1e-12);
        let sd = 2f64.sqrt();
        assert!((r.std_diff_raw - (2.0 - 11.0 / 3.0) / sd).abs() < 1e-12);
    }

    #[test]
    fn balance_weighted_by_match_counts() {
        // t1 (x=0), t2 (x=0.1) both match c1 at x=0; c2 unused.
        let trajectories = vec![
            Trajectory::new("t1", vec![inst(1, 1, 0.0, 0.0)]).unwrap(),
            Trajectory::new("t2", vec![inst(1, 1, 0.1, 0.0)]).unwrap(),
            Trajectory::new("c1", vec![inst(1, 0, 0.0, 0.0)]).unwrap(),
            Trajectory::new("c2", vec![inst(1, 0, 5.0, 0.0)]).unwrap(),
        ];
        let ds = PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["x".into()])).unwrap();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        let r = &balance_table(&ds, &d).unwrap()[0];
        // K(c1) = 2 => matched mean = (2/1 * 0.0) / 2
        assert_eq!(r.control_mean_matched, 0.0);
        assert!((r.control_mean_raw - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constant_covariate_degenerate_scale() {
        let trajectories = vec![
            Trajectory::new("t1", vec![inst(1, 1, 1.0, 0.0)]).unwrap(),
            Trajectory::new("t2", vec![inst(1, 1, 1.0, 0.0)]).unwrap(),
            Trajectory::new("c1", vec![inst(1, 0, 0.5, 0.0)]).unwrap(),
        ];
        let ds = PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["x".into()])).unwrap();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 1).unwrap();
        let r = &balance_table(&ds, &d).unwrap()[0];
        assert!(r.degenerate_scale);
        assert_eq!(r.std_diff_raw, 0.0);
    }

    #[test]
    fn design_json_round_trip() {
        let ds = figure_one();
        let d = match_instance_replacement(&ds, &DistanceSpec::euclidean(), 2).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: MatchedDesign = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
    }
}
