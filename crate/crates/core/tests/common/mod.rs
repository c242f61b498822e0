//! Random panels and brute-force matching optima shared by the integration suites.
//!
//! The optima below compute distances and integer costs from the raw
//! covariates and search every feasible design, so they share no code with
//! the flow and assignment solvers they check.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rollmatch::design::{MatchedDesign, Variant};
use rollmatch::panel::{Instance, PanelDataset, StudyConfig, Trajectory};

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn scaled_cost(d: f64) -> i64 {
    (d * 1e6).round() as i64
}

fn coordinate(rng: &mut ChaCha8Rng, grid: bool) -> f64 {
    if grid {
        f64::from(rng.random_range(0..4u8))
    } else {
        rng.sample(StandardNormal)
    }
}

/// A small random panel: `n_treated` treated subjects with one instance
/// each (some with an earlier untreated row), and control subjects with
/// one to three timepoints until `max_control_instances` is reached.
pub fn random_panel(
    rng: &mut ChaCha8Rng,
    n_treated: usize,
    max_control_instances: usize,
    min_control_trajectories: usize,
    grid: bool,
) -> PanelDataset {
    let mut trajectories = Vec::new();
    for i in 0..n_treated {
        let time = rng.random_range(1..=3i64);
        let mut instances = Vec::new();
        if time > 1 && rng.random_bool(0.3) {
            instances.push(Instance {
                time: time - 1,
                z: 0,
                outcome: rng.sample(StandardNormal),
                covariates: vec![coordinate(rng, grid), coordinate(rng, grid)],
            });
        }
        instances.push(Instance {
            time,
            z: 1,
            outcome: rng.sample(StandardNormal),
            covariates: vec![coordinate(rng, grid), coordinate(rng, grid)],
        });
        trajectories.push(Trajectory::new(format!("t{i}"), instances).unwrap());
    }
    let mut used = 0;
    let mut j = 0;
    while used < max_control_instances || j < min_control_trajectories {
        let room = max_control_instances.saturating_sub(used).max(1);
        let count = rng.random_range(1..=3usize).min(room);
        let mut times = vec![1i64, 2, 3];
        times.shuffle(rng);
        let instances = times[..count]
            .iter()
            .map(|&time| Instance {
                time,
                z: 0,
                outcome: rng.sample(StandardNormal),
                covariates: vec![coordinate(rng, grid), coordinate(rng, grid)],
            })
            .collect();
        trajectories.push(Trajectory::new(format!("c{j}"), instances).unwrap());
        used += count;
        j += 1;
    }
    PanelDataset::new(trajectories, StudyConfig::new(1, 1, vec!["a".into(), "b".into()])).unwrap()
}

/// A candidate control instance as the oracles see it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub trajectory: usize,
    pub time: i64,
    pub x: Vec<f64>,
}

pub struct Problem {
    pub treated: Vec<Vec<f64>>,
    pub candidates: Vec<Candidate>,
    pub n_trajectories: usize,
    /// `cost[t][k]` for candidate `k`, `None` outside the caliper.
    pub cost: Vec<Vec<Option<i64>>>,
    pub c: usize,
}

impl Problem {
    pub fn new(dataset: &PanelDataset, c: usize, caliper: Option<f64>) -> Self {
        let mut treated = Vec::new();
        let mut candidates = Vec::new();
        let mut n_trajectories = 0;
        for traj in dataset.trajectories() {
            match traj.treatment_time {
                Some(t) => treated.push(traj.instance_at(t).unwrap().covariates.clone()),
                None => {
                    for inst in &traj.instances {
                        candidates.push(Candidate {
                            trajectory: n_trajectories,
                            time: inst.time,
                            x: inst.covariates.clone(),
                        });
                    }
                    n_trajectories += 1;
                }
            }
        }
        let cost = treated
            .iter()
            .map(|t| {
                candidates
                    .iter()
                    .map(|k| {
                        let d = euclid(t, &k.x);
                        caliper.is_none_or(|cal| d <= cal).then(|| scaled_cost(d))
                    })
                    .collect()
            })
            .collect();
        Self {
            treated,
            candidates,
            n_trajectories,
            cost,
            c,
        }
    }

    /// Every way to pick `c` admissible candidates from distinct trajectories
    /// for treated `t`, skipping candidates rejected by `allowed`.
    fn subsets(&self, t: usize, allowed: &dyn Fn(usize) -> bool, mut visit: impl FnMut(&[usize], i64)) {
        fn go(
            p: &Problem,
            t: usize,
            start: usize,
            chosen: &mut Vec<usize>,
            cost: i64,
            allowed: &dyn Fn(usize) -> bool,
            visit: &mut dyn FnMut(&[usize], i64),
        ) {
            if chosen.len() == p.c {
                visit(chosen, cost);
                return;
            }
            for k in start..p.candidates.len() {
                let Some(q) = p.cost[t][k] else { continue };
                if !allowed(k) || chosen.iter().any(|&o| p.candidates[o].trajectory == p.candidates[k].trajectory) {
                    continue;
                }
                chosen.push(k);
                go(p, t, k + 1, chosen, cost + q, allowed, visit);
                chosen.pop();
            }
        }
        go(self, t, 0, &mut Vec::new(), 0, allowed, &mut visit);
    }

    /// Minimum total cost, or `None` when no design exists.
    pub fn optimum(&self, variant: Variant) -> Option<i64> {
        match variant {
            Variant::InstanceReplacement => (0..self.treated.len()).try_fold(0, |acc, t| {
                let mut best: Option<i64> = None;
                self.subsets(t, &|_| true, |_, cost| {
                    if best.is_none_or(|b| cost < b) {
                        best = Some(cost);
                    }
                });
                best.map(|b| acc + b)
            }),
            Variant::TrajectoryReplacement => {
                let mut used = vec![false; self.candidates.len()];
                let mut best = None;
                self.search_instances(0, 0, &mut used, &mut best);
                best
            }
            Variant::WithoutReplacement => {
                let mut used = vec![false; self.n_trajectories];
                let mut best = None;
                self.search_trajectories(0, 0, &mut used, &mut best);
                best
            }
        }
    }

    fn search_instances(&self, t: usize, acc: i64, used: &mut Vec<bool>, best: &mut Option<i64>) {
        if t == self.treated.len() {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        let mut options = Vec::new();
        {
            let snapshot = used.clone();
            self.subsets(t, &|k| !snapshot[k], |set, cost| options.push((set.to_vec(), cost)));
        }
        for (set, cost) in options {
            for &k in &set {
                used[k] = true;
            }
            self.search_instances(t + 1, acc + cost, used, best);
            for &k in &set {
                used[k] = false;
            }
        }
    }

    /// Nearest admissible cost of trajectory `g` for treated `t`.
    fn trajectory_cost(&self, t: usize, g: usize) -> Option<i64> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, k)| k.trajectory == g)
            .filter_map(|(i, _)| self.cost[t][i])
            .min()
    }

    fn search_trajectories(&self, t: usize, acc: i64, used: &mut Vec<bool>, best: &mut Option<i64>) {
        if t == self.treated.len() {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        fn choose(
            p: &Problem,
            t: usize,
            start: usize,
            left: usize,
            acc: i64,
            used: &mut Vec<bool>,
            best: &mut Option<i64>,
        ) {
            if left == 0 {
                p.search_trajectories(t + 1, acc, used, best);
                return;
            }
            for g in start..p.n_trajectories {
                if used[g] {
                    continue;
                }
                let Some(q) = p.trajectory_cost(t, g) else { continue };
                used[g] = true;
                choose(p, t, g + 1, left - 1, acc + q, used, best);
                used[g] = false;
            }
        }
        choose(self, t, 0, self.c, acc, used, best);
    }
}

/// Structural invariants every design must satisfy.
pub fn check_design(dataset: &PanelDataset, design: &MatchedDesign) -> Result<(), String> {
    let c = design.controls_per_treated;
    let mut instance_uses = std::collections::HashMap::new();
    let mut trajectory_sets = std::collections::HashMap::new();
    for (s, set) in design.matched_sets.iter().enumerate() {
        if set.controls.len() != c {
            return Err(format!("set {s} has {} controls, expected {c}", set.controls.len()));
        }
        let mut ids: Vec<&str> = set.controls.iter().map(|m| m.instance.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != c {
            return Err(format!("set {s} reuses a trajectory"));
        }
        for m in &set.controls {
            let idx = dataset.trajectory_index(&m.instance.id).map_err(|e| e.to_string())?;
            if dataset.trajectories()[idx].is_treated() {
                return Err(format!("set {s} uses a treated subject as control"));
            }
            *instance_uses.entry(m.instance.clone()).or_insert(0) += 1;
            trajectory_sets.entry(m.instance.id.clone()).or_insert_with(Vec::new).push(s);
        }
    }
    match design.variant {
        Variant::TrajectoryReplacement if instance_uses.values().any(|&u| u > 1) => {
            Err("an instance serves two sets".into())
        }
        Variant::WithoutReplacement if trajectory_sets.values().any(|v| v.len() > 1) => {
            Err("a trajectory serves two sets".into())
        }
        _ => {
            let total: u64 = design.weights.total();
            let expected = (c * design.matched_sets.len()) as u64;
            if total != expected {
                return Err(format!("weights sum to {total}, expected {expected}"));
            }
            Ok(())
        }
    }
}
