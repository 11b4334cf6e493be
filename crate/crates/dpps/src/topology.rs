//! Time-varying directed graph schedules and their doubly stochastic
//! weight matrices.
//!
//! A schedule assigns every round `t` an edge set `E^(t)` over `N` nodes;
//! an edge `(i, j)` means node `i` sends to node `j` during round `t`.
//! Every round contains the self-loop `(i, i)` for every node. The weight
//! matrix of a round gives receiver `i` the weight `1 / outdeg(j)` for each
//! sender `j`, which is doubly stochastic for the built-in d-Out and EXP
//! schedules; custom schedules are validated eagerly and rejected if the
//! uniform weights are not doubly stochastic or the schedule is not
//! strongly connected over one period.

use std::fs;
use std::path::Path;

use thiserror::Error;

/// Row/column sums of a weight matrix may deviate from 1 by at most this.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("d-Out degree {d} out of range for {n} nodes (need 2 <= d <= N)")]
    DegreeOutOfRange { d: usize, n: usize },
    #[error("EXP schedule needs at least 2 nodes, got {n}")]
    TooFewNodes { n: usize },
    #[error("custom schedule has no rounds")]
    EmptyCustomSchedule,
    #[error("round {round}: node {node} is missing its self-loop")]
    MissingSelfLoop { round: usize, node: usize },
    #[error("round {round}: edge ({from}, {to}) out of range for {n} nodes")]
    EdgeOutOfRange {
        round: usize,
        from: usize,
        to: usize,
        n: usize,
    },
    #[error("round {round}: uniform weights are not doubly stochastic (row {index} sums to {sum})")]
    NotDoublyStochastic {
        round: usize,
        index: usize,
        sum: f64,
    },
    #[error("no window B <= {max_window} makes every aggregate graph strongly connected")]
    NotConnected { max_window: usize },
    #[error("cannot read schedule file {path}: {message}")]
    ScheduleFile { path: String, message: String },
}

/// Which family of graphs the schedule draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Every node sends to `(i+0) mod N` through `(i+d-1) mod N`; time-invariant.
    DOut { d: usize },
    /// Node `i` sends to itself and `(i + 2^(t mod period)) mod N`.
    Exp,
    /// Explicit per-round edge lists `(from, to)`, repeated with period
    /// equal to the number of listed rounds.
    Custom { rounds: Vec<Vec<(usize, usize)>> },
}

/// A periodic generator of directed graphs and their weight matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSchedule {
    n_nodes: usize,
    kind: ScheduleKind,
    period: usize,
}

/// Result of [`GraphSchedule::verify_connectivity`]: the smallest window
/// `B` such that every `B`-round aggregate over one period is strongly
/// connected, and the largest diameter among those aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub window: usize,
    pub max_diameter: usize,
}

impl GraphSchedule {
    /// Fixed out-degree-`d` schedule: node `i` sends to `i, i+1, ..., i+d-1 (mod N)`.
    pub fn d_out(n_nodes: usize, d: usize) -> Result<Self, TopologyError> {
        if d < 2 || d > n_nodes {
            return Err(TopologyError::DegreeOutOfRange { d, n: n_nodes });
        }
        Ok(Self {
            n_nodes,
            kind: ScheduleKind::DOut { d },
            period: 1,
        })
    }

    /// Exponential-offset schedule with period `floor(log2(N-1)) + 1`.
    pub fn exp(n_nodes: usize) -> Result<Self, TopologyError> {
        if n_nodes < 2 {
            return Err(TopologyError::TooFewNodes { n: n_nodes });
        }
        let period = ((n_nodes - 1) as f64).log2().floor() as usize + 1;
        Ok(Self {
            n_nodes,
            kind: ScheduleKind::Exp,
            period,
        })
    }

    /// Custom periodic schedule from explicit per-round edge lists.
    ///
    /// Rejected unless every round has all self-loops, every round's uniform
    /// weight matrix is doubly stochastic, and some window `B <= period`
    /// makes every aggregate strongly connected.
    pub fn custom(
        n_nodes: usize,
        rounds: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self, TopologyError> {
        if rounds.is_empty() {
            return Err(TopologyError::EmptyCustomSchedule);
        }
        let period = rounds.len();
        let schedule = Self {
            n_nodes,
            kind: ScheduleKind::Custom { rounds },
            period,
        };
        schedule.validate_custom()?;
        Ok(schedule)
    }

    /// Parse a custom schedule from newline-delimited `t i j` triples.
    pub fn from_edge_file(n_nodes: usize, path: &Path) -> Result<Self, TopologyError> {
        let text = fs::read_to_string(path).map_err(|e| TopologyError::ScheduleFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut parsed: Vec<(usize, usize, usize)> = Vec::new();
        let mut max_round = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |message: String| TopologyError::ScheduleFile {
                path: path.display().to_string(),
                message,
            };
            if fields.len() != 3 {
                return Err(bad(format!(
                    "line {}: expected `t i j`, got {:?}",
                    lineno + 1,
                    line
                )));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|_| bad(format!("line {}: bad round index", lineno + 1)))?;
            let i: usize = fields[1]
                .parse()
                .map_err(|_| bad(format!("line {}: bad sender index", lineno + 1)))?;
            let j: usize = fields[2]
                .parse()
                .map_err(|_| bad(format!("line {}: bad receiver index", lineno + 1)))?;
            max_round = max_round.max(t);
            parsed.push((t, i, j));
        }
        if parsed.is_empty() {
            return Err(TopologyError::EmptyCustomSchedule);
        }
        let mut rounds = vec![Vec::new(); max_round + 1];
        for (t, i, j) in parsed {
            rounds[t].push((i, j));
        }
        Self::custom(n_nodes, rounds)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Out-neighbors of `node` at round `t`, self-loop included.
    pub fn out_neighbors(&self, node: usize, t: u64) -> Vec<usize> {
        match &self.kind {
            ScheduleKind::DOut { d } => (0..*d).map(|k| (node + k) % self.n_nodes).collect(),
            ScheduleKind::Exp => {
                let offset = 1usize << (t as usize % self.period);
                vec![node, (node + offset) % self.n_nodes]
            }
            ScheduleKind::Custom { rounds } => {
                let round = &rounds[(t as usize) % self.period];
                round
                    .iter()
                    .filter(|(from, _)| *from == node)
                    .map(|(_, to)| *to)
                    .collect()
            }
        }
    }

    /// Edge set `E^(t)` as `(from, to)` pairs.
    pub fn edges(&self, t: u64) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..self.n_nodes {
            for j in self.out_neighbors(i, t) {
                edges.push((i, j));
            }
        }
        edges
    }

    /// The weight matrix `W^(t)`: `w[i][j] = 1 / outdeg(j)` for every edge
    /// `(j, i)`, zero elsewhere.
    pub fn weight_matrix(&self, t: u64) -> WeightMatrix {
        let n = self.n_nodes;
        let mut out_degree = vec![0usize; n];
        let edges = self.edges(t);
        for &(from, _) in &edges {
            out_degree[from] += 1;
        }
        let mut entries = vec![0.0; n * n];
        for &(from, to) in &edges {
            entries[to * n + from] = 1.0 / out_degree[from] as f64;
        }
        WeightMatrix {
            n,
            round: t,
            entries,
        }
    }

    /// Find the smallest `B <= max_window` such that every aggregate graph
    /// over `B` consecutive rounds (all window starts within one period) is
    /// strongly connected; also report the maximum diameter among those
    /// aggregates.
    pub fn verify_connectivity(&self, max_window: usize) -> Result<Connectivity, TopologyError> {
        for window in 1..=max_window {
            if let Some(max_diameter) = self.window_connectivity(window) {
                return Ok(Connectivity {
                    window,
                    max_diameter,
                });
            }
        }
        Err(TopologyError::NotConnected { max_window })
    }

    /// If every aggregate over `window` rounds is strongly connected,
    /// return the max diameter; otherwise `None`.
    fn window_connectivity(&self, window: usize) -> Option<usize> {
        let n = self.n_nodes;
        let mut max_diameter = 0usize;
        for start in 0..self.period {
            let mut adj = vec![vec![false; n]; n];
            for k in 0..window {
                for (from, to) in self.edges((start + k) as u64) {
                    adj[from][to] = true;
                }
            }
            for source in 0..n {
                let dist = bfs_distances(&adj, source);
                for &d in &dist {
                    max_diameter = max_diameter.max(d?); // None: unreachable node
                }
            }
        }
        Some(max_diameter)
    }

    fn validate_custom(&self) -> Result<(), TopologyError> {
        let ScheduleKind::Custom { rounds } = &self.kind else {
            return Ok(());
        };
        let n = self.n_nodes;
        for (round, edges) in rounds.iter().enumerate() {
            for &(from, to) in edges {
                if from >= n || to >= n {
                    return Err(TopologyError::EdgeOutOfRange {
                        round,
                        from,
                        to,
                        n,
                    });
                }
            }
            for node in 0..n {
                if !edges.contains(&(node, node)) {
                    return Err(TopologyError::MissingSelfLoop { round, node });
                }
            }
        }
        // Uniform 1/outdeg weights must be doubly stochastic in every round.
        for round in 0..self.period {
            let w = self.weight_matrix(round as u64);
            for i in 0..n {
                let row = w.row_sum(i);
                if (row - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(TopologyError::NotDoublyStochastic {
                        round,
                        index: i,
                        sum: row,
                    });
                }
                let col = w.col_sum(i);
                if (col - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(TopologyError::NotDoublyStochastic {
                        round,
                        index: i,
                        sum: col,
                    });
                }
            }
        }
        self.verify_connectivity(self.period).map(|_| ())
    }
}

/// Dense `N x N` mixing matrix for one round. `get(i, j)` is the weight
/// node `i` applies to the message received from node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    round: u64,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }
}

fn bfs_distances(adj: &[Vec<bool>], source: usize) -> Vec<Option<usize>> {
    let n = adj.len();
    let mut dist = vec![None; n];
    dist[source] = Some(0);
    let mut frontier = vec![source];
    let mut depth = 0usize;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &u in &frontier {
            for (v, &has_edge) in adj[u].iter().enumerate() {
                if has_edge && dist[v].is_none() {
                    dist[v] = Some(depth);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}
