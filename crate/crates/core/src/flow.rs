//! Integer network-flow solvers used by the optimal matching designs.
//!
//! [`MinCostFlow`] implements successive shortest paths with Johnson
//! potentials; [`assignment`] is the dense Hungarian method for rectangular
//! cost matrices with forbidden cells.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const INF: i64 = i64::MAX / 4;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: i64,
}

/// Directed network with integer capacities and non-negative integer costs.
#[derive(Debug, Clone, Default)]
pub struct MinCostFlow {
    adj: Vec<Vec<usize>>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowSolution {
    pub flow: i64,
    pub cost: i64,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            edges: Vec::new(),
        }
    }

    pub fn add_node(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `from -> to` and its residual twin; returns the forward edge id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        assert!(cost >= 0, "edge costs must be non-negative");
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently routed through a forward edge.
    pub fn flow_on(&self, edge: usize) -> i64 {
        self.edges[edge ^ 1].cap
    }

    /// Sends up to `demand` units from `source` to `sink` at minimum cost.
    /// The returned flow is smaller than `demand` when the network cannot
    /// carry it.
    pub fn solve(&mut self, source: usize, sink: usize, demand: i64) -> FlowSolution {
        let n = self.adj.len();
        let mut potential = vec![0i64; n];
        let mut dist = vec![INF; n];
        let mut parent = vec![usize::MAX; n];
        let mut flow = 0;
        let mut cost = 0;
        while flow < demand {
            dist.fill(INF);
            parent.fill(usize::MAX);
            dist[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap <= 0 {
                        continue;
                    }
                    let nd = d + edge.cost + potential[u] - potential[edge.to];
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        parent[edge.to] = e;
                        heap.push(Reverse((nd, edge.to)));
                    }
                }
            }
            if dist[sink] >= INF {
                break;
            }
            for v in 0..n {
                if dist[v] < INF {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand - flow;
            let mut v = sink;
            while v != source {
                let e = parent[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = parent[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                cost += push * self.edges[e].cost;
                v = self.edges[e ^ 1].to;
            }
            flow += push;
        }
        FlowSolution { flow, cost }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Column assigned to each row, `None` when the row stays unmatched.
    pub row_to_col: Vec<Option<usize>>,
    /// Total cost over assigned cells.
    pub cost: i64,
}

impl Assignment {
    pub fn matched(&self) -> usize {
        self.row_to_col.iter().filter(|c| c.is_some()).count()
    }
}

/// Solves a rectangular assignment problem on a row-major `rows x cols`
/// matrix where `None` marks forbidden cells.
///
/// The solution first maximizes the number of assigned pairs in the smaller
/// dimension and then minimizes total cost among those maximum assignments.
pub fn assignment(costs: &[Option<i64>], rows: usize, cols: usize) -> Assignment {
    assert_eq!(costs.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return Assignment {
            row_to_col: vec![None; rows],
            cost: 0,
        };
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cell = |i: usize, j: usize| {
        if transposed {
            costs[j * cols + i]
        } else {
            costs[i * cols + j]
        }
    };
    let max_cost = costs.iter().flatten().copied().max().unwrap_or(0).max(0);
    // Any assignment with fewer forbidden cells beats every assignment with more.
    let penalty = (max_cost + 1) * (n as i64) + 1;
    let mut dense = vec![0i64; n * m];
    for i in 0..n {
        for j in 0..m {
            dense[i * m + j] = cell(i, j).unwrap_or(penalty);
        }
    }
    let cols_of_rows = hungarian(&dense, n, m);

    let mut row_to_col = vec![None; rows];
    let mut cost = 0;
    for (i, &j) in cols_of_rows.iter().enumerate() {
        if let Some(c) = cell(i, j) {
            cost += c;
            if transposed {
                row_to_col[j] = Some(i);
            } else {
                row_to_col[i] = Some(j);
            }
        }
    }
    Assignment { row_to_col, cost }
}

/// Hungarian method with potentials, `n <= m`; returns the column of each row.
fn hungarian(a: &[i64], n: usize, m: usize) -> Vec<usize> {
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![INF; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(INF);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &a[(i0 - 1) * m..i0 * m];
            let ui0 = u[i0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}
