//! Monte Carlo of coalescing particles started from a finite grid.
//!
//! Two backends sample the cluster count exactly in law up to grid and
//! time discretization:
//!
//! * `RandomWalk` - synchronous simple random walks on the half-step
//!   lattice: particles start on even multiples of h = spacing/2 and move
//!   by one h per step, so every pair keeps an even lattice distance,
//!   meetings are exact integer collisions, and crossings cannot happen.
//!   Step time is h^2. The adjacent-pair survival probability is the
//!   classical ballot value P(S_{2k} in {0,2}), which reproduces the
//!   Brownian pair law with O(1/k) bias.
//! * `GaussBridge` - Euler steps with independent Gaussian increments; a
//!   pair that did not cross during a step still merges with the
//!   Brownian-bridge hitting probability exp(-d0*d1/dt) of the gap
//!   process (variance rate 2), so the two-particle meeting law is exact
//!   for any dt.
//!
//! Clusters are tracked in a union-find over starting-grid indices; order
//! preservation makes every cluster a contiguous interval of origins,
//! which is what makes interval counting and the additivity identity
//! exact per path.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::unionfind::UnionFind;

const MAX_GRID: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Backend {
    RandomWalk,
    GaussBridge,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "randomwalk" | "random-walk" | "rw" => Ok(Backend::RandomWalk),
            "gaussbridge" | "gauss-bridge" | "gb" => Ok(Backend::GaussBridge),
            other => Err(format!("unknown backend '{other}'")),
        }
    }
}

/// Full specification of one replica.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SimConfig {
    /// Interval length (> 0); the grid includes both endpoints 0 and u.
    pub u: f64,
    /// Time horizon (>= 0; 0 means "no evolution", useful as a degenerate check).
    pub t: f64,
    /// Start-grid spacing; must divide u.
    pub spacing: f64,
    /// GaussBridge step; defaults to (spacing/4)^2. Must stay unset for RandomWalk.
    pub dt: Option<f64>,
    pub backend: Backend,
    /// Extension of the start grid on each side (for particle counting).
    pub margin: f64,
    pub seed: u64,
    pub replica_index: u64,
}

impl SimConfig {
    /// Defaults: spacing 0.005 sqrt(t), no margin, seed 0, replica 0.
    pub fn new(u: f64, t: f64, backend: Backend) -> Self {
        SimConfig {
            u,
            t,
            spacing: 0.005 * t.max(1e-300).sqrt(),
            dt: None,
            backend,
            margin: 0.0,
            seed: 0,
            replica_index: 0,
        }
    }

    /// Default GaussBridge step: (spacing/4)^2, so one step moves particles
    /// well under one grid cell.
    pub fn default_dt(&self) -> f64 {
        let q = self.spacing / 4.0;
        q * q
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if !self.u.is_finite() || self.u <= 0.0 {
            return Err(Error::config(format!("u must be positive, got {}", self.u)));
        }
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::config(format!("t must be >= 0, got {}", self.t)));
        }
        if !self.spacing.is_finite() || self.spacing <= 0.0 || self.spacing > self.u {
            return Err(Error::config(format!(
                "spacing must be in (0, u], got {}",
                self.spacing
            )));
        }
        let cells = self.u / self.spacing;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::config(format!(
                "spacing {} does not divide u {}",
                self.spacing, self.u
            )));
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::config("margin must be >= 0".to_string()));
        }
        if self.backend == Backend::RandomWalk && self.dt.is_some() {
            return Err(Error::config(
                "RandomWalk derives its step from the spacing; dt must be unset".to_string(),
            ));
        }
        if let Some(dt) = self.dt {
            if !dt.is_finite() || dt <= 0.0 {
                return Err(Error::domain(format!("dt must be positive, got {dt}")));
            }
        }
        let n_interval = cells.round() as usize;
        let n_margin = (self.margin / self.spacing - 1e-9).ceil().max(0.0) as usize;
        let n_total = n_interval + 2 * n_margin + 1;
        if n_total > MAX_GRID {
            return Err(Error::Size(format!("grid of {n_total} sites exceeds {MAX_GRID}")));
        }
        Ok((n_margin, n_interval))
    }
}

/// Horizon-time statistics of one path.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct PathStats {
    /// Distinct clusters among starting points in [0, u].
    pub nu: u32,
    /// Distinct particle positions inside [0, u] (margin-extended grid).
    pub n_in_interval: u32,
    /// Cluster count per unit subinterval [k-1, k], when u is a whole
    /// number of unit blocks resolvable on the grid; empty otherwise.
    pub block_counts: Vec<u32>,
}

/// Ordered coalescing particle positions with cluster labels.
pub struct ParticleSystem {
    cfg: SimConfig,
    n_left: usize,
    n_total: usize,
    half_step: f64, // h = spacing / 2 (RandomWalk lattice unit)
    uf: UnionFind,
    // active clusters, ascending; exactly one of lat/pos is authoritative
    lat: Vec<i64>,
    pos: Vec<f64>,
    leftmost: Vec<u32>,
    // scratch buffers for the bridge step
    new_pos: Vec<f64>,
    out_pos: Vec<f64>,
    out_left: Vec<u32>,
    time: f64,
    step_index: u64,
    stream: StreamRng,
}

/// Build the initial system: one cluster per grid point of
/// {-margin, ..., 0, ..., u, ..., u+margin}, deterministic RNG stream
/// keyed by (seed, replica_index).
pub fn init(cfg: &SimConfig) -> Result<ParticleSystem> {
    let (n_left, n_interval) = cfg.validate()?;
    let n_total = n_interval + 2 * n_left + 1;
    let mut lat = Vec::new();
    let mut pos = Vec::new();
    match cfg.backend {
        Backend::RandomWalk => {
            lat = (0..n_total)
                .map(|i| 2 * (i as i64 - n_left as i64))
                .collect();
        }
        Backend::GaussBridge => {
            pos = (0..n_total)
                .map(|i| (i as f64 - n_left as f64) * cfg.spacing)
                .collect();
        }
    }
    Ok(ParticleSystem {
        cfg: *cfg,
        n_left,
        n_total,
        half_step: cfg.spacing / 2.0,
        uf: UnionFind::new(n_total),
        lat,
        pos,
        leftmost: (0..n_total as u32).collect(),
        new_pos: Vec::new(),
        out_pos: Vec::new(),
        out_left: Vec::new(),
        time: 0.0,
        step_index: 0,
        stream: StreamRng::new(cfg.seed, cfg.replica_index),
    })
}

/// Advance one configuration to its horizon and report path statistics.
pub fn run_to_horizon(cfg: &SimConfig) -> Result<PathStats> {
    run_full(cfg).map(|(_, stats)| stats)
}

/// Like [`run_to_horizon`], also returning the final system for
/// interval-count queries.
pub fn run_full(cfg: &SimConfig) -> Result<(ParticleSystem, PathStats)> {
    let mut sys = init(cfg)?;
    sys.run()?;
    let stats = sys.path_stats();
    Ok((sys, stats))
}

impl ParticleSystem {
    fn run(&mut self) -> Result<()> {
        if self.cfg.t == 0.0 {
            return Ok(());
        }
        match self.cfg.backend {
            Backend::RandomWalk => {
                let dt = self.half_step * self.half_step;
                let steps = (self.cfg.t / dt).round();
                let residual = (self.cfg.t - steps * dt).abs();
                if residual > 0.01 * self.cfg.t {
                    return Err(Error::config(format!(
                        "horizon t={} is not a multiple of the lattice step {dt} \
                         (residual {residual}); use a smaller spacing",
                        self.cfg.t
                    )));
                }
                for _ in 0..steps as u64 {
                    self.step_random_walk()?;
                }
            }
            Backend::GaussBridge => {
                let dt = self.cfg.dt.unwrap_or_else(|| self.cfg.default_dt());
                let full = (self.cfg.t / dt).floor();
                for _ in 0..full as u64 {
                    self.step_gauss_bridge(dt)?;
                }
                let last = self.cfg.t - full * dt;
                if last > 1e-12 * self.cfg.t {
                    self.step_gauss_bridge(last)?;
                }
            }
        }
        Ok(())
    }

    /// One synchronous lattice step: every cluster moves one half-step up
    /// or down; clusters landing on the same site merge. Time advances by
    /// (spacing/2)^2.
    pub fn step_random_walk(&mut self) -> Result<()> {
        if self.cfg.backend != Backend::RandomWalk {
            return Err(Error::contract("step_random_walk requires the RandomWalk backend"));
        }
        let key = self.stream.at_step(self.step_index);
        self.step_random_walk_with(|p| key.coin(p as u64));
        Ok(())
    }

    pub(crate) fn step_random_walk_with(&mut self, mut dir_up: impl FnMut(u32) -> bool) {
        let m = self.lat.len();
        let mut w = 0usize;
        for r in 0..m {
            let x = self.lat[r] + if dir_up(self.leftmost[r]) { 1 } else { -1 };
            if w > 0 && x == self.lat[w - 1] {
                self.uf.union(self.leftmost[w - 1], self.leftmost[r]);
                continue;
            }
            self.lat[w] = x;
            self.leftmost[w] = self.leftmost[r];
            w += 1;
        }
        self.lat.truncate(w);
        self.leftmost.truncate(w);
        self.time += self.half_step * self.half_step;
        self.step_index += 1;
        debug_assert!(self.lat.windows(2).all(|p| p[0] < p[1]));
    }

    /// One Euler step with bridge-corrected merging. Each cluster gains an
    /// independent N(0, dt) increment; sweeping adjacent pairs left to
    /// right, crossed pairs merge at the midpoint of their crossed
    /// positions, uncrossed pairs merge with probability
    /// exp(-d0*d1/dt) (gap before/after; difference process has variance
    /// rate 2) keeping the left representative's position. The sweep
    /// repeats until the order is consistent.
    pub fn step_gauss_bridge(&mut self, dt: f64) -> Result<()> {
        if self.cfg.backend != Backend::GaussBridge {
            return Err(Error::contract("step_gauss_bridge requires the GaussBridge backend"));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        let key = self.stream.at_step(self.step_index);
        self.step_gauss_bridge_with(dt, |p| key.normal(p as u64), |p| key.bridge_uniform(p as u64));
        Ok(())
    }

    pub(crate) fn step_gauss_bridge_with(
        &mut self,
        dt: f64,
        mut gauss: impl FnMut(u32) -> f64,
        mut unif: impl FnMut(u32) -> f64,
    ) {
        let m = self.pos.len();
        let sd = dt.sqrt();
        self.new_pos.clear();
        self.new_pos
            .extend((0..m).map(|c| self.pos[c] + sd * gauss(self.leftmost[c])));

        self.out_pos.clear();
        self.out_left.clear();
        if m > 0 {
            self.out_pos.push(self.new_pos[0]);
            self.out_left.push(self.leftmost[0]);
        }
        for c in 1..m {
            let d0 = self.pos[c] - self.pos[c - 1];
            let d1 = self.new_pos[c] - self.new_pos[c - 1];
            let top = self.out_pos.len() - 1;
            if d1 <= 0.0 {
                // crossed within the step
                self.out_pos[top] = 0.5 * (self.out_pos[top] + self.new_pos[c]);
                self.uf.union(self.out_left[top], self.leftmost[c]);
            } else {
                let prod = d0 * d1;
                // exp(-prod/dt) < 4e-18 beyond 40 dt
                if prod < 40.0 * dt && unif(self.leftmost[c - 1]) < (-prod / dt).exp() {
                    self.uf.union(self.out_left[top], self.leftmost[c]);
                } else {
                    self.out_pos.push(self.new_pos[c]);
                    self.out_left.push(self.leftmost[c]);
                }
            }
        }
        // midpoint moves can invert the order against an earlier neighbour;
        // such pairs have met within the step, merge until consistent
        loop {
            let mut merged = false;
            let mut w = 0usize;
            for r in 1..self.out_pos.len() {
                if self.out_pos[r] <= self.out_pos[w] {
                    self.out_pos[w] = 0.5 * (self.out_pos[w] + self.out_pos[r]);
                    self.uf.union(self.out_left[w], self.out_left[r]);
                    merged = true;
                } else {
                    w += 1;
                    self.out_pos[w] = self.out_pos[r];
                    self.out_left[w] = self.out_left[r];
                }
            }
            self.out_pos.truncate(w + 1);
            self.out_left.truncate(w + 1);
            if !merged {
                break;
            }
        }
        std::mem::swap(&mut self.pos, &mut self.out_pos);
        std::mem::swap(&mut self.leftmost, &mut self.out_left);
        self.time += dt;
        self.step_index += 1;
        debug_assert!(self.pos.windows(2).all(|p| p[0] < p[1]));
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of distinct clusters (equals the number of distinct positions).
    pub fn cluster_count(&self) -> usize {
        self.leftmost.len()
    }

    pub fn origin_count(&self) -> usize {
        self.n_total
    }

    /// Starting position of grid index `i`.
    pub fn origin_position(&self, i: usize) -> f64 {
        (i as f64 - self.n_left as f64) * self.cfg.spacing
    }

    /// Current positions, ascending.
    pub fn positions(&self) -> Vec<f64> {
        match self.cfg.backend {
            Backend::RandomWalk => self.lat.iter().map(|&l| l as f64 * self.half_step).collect(),
            Backend::GaussBridge => self.pos.clone(),
        }
    }

    fn grid_index(&self, x: f64) -> Result<usize> {
        let r = x / self.cfg.spacing + self.n_left as f64;
        let k = r.round();
        if (r - k).abs() > 1e-9 * r.abs().max(1.0) || k < 0.0 || k as usize >= self.n_total {
            return Err(Error::contract(format!("{x} is not a start-grid point")));
        }
        Ok(k as usize)
    }

    /// Cluster index (into the active list) containing origin `i`; clusters
    /// are contiguous origin ranges, so this is a binary search over the
    /// leftmost-origin array.
    fn cluster_of_origin(&self, i: usize) -> usize {
        self.leftmost.partition_point(|&l| l as usize <= i) - 1
    }

    /// Distinct clusters among starting points in [lo, hi] (both grid points).
    pub fn cluster_count_in(&self, lo: f64, hi: f64) -> Result<u32> {
        if !(lo < hi) {
            return Err(Error::contract(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        let a = self.grid_index(lo)?;
        let b = self.grid_index(hi)?;
        Ok((self.cluster_of_origin(b) - self.cluster_of_origin(a) + 1) as u32)
    }

    /// Distinct clusters among an arbitrary set of origin indices
    /// (union-find route; used by the refinement coupling checks).
    pub fn cluster_count_over(&self, origins: impl IntoIterator<Item = usize>) -> u32 {
        let mut roots: Vec<u32> = origins.into_iter().map(|i| self.uf.find(i as u32)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len() as u32
    }

    /// Distinct particle positions inside [lo, hi].
    pub fn distinct_positions_in(&self, lo: f64, hi: f64) -> u32 {
        match self.cfg.backend {
            Backend::RandomWalk => {
                let l = (lo / self.half_step).ceil() as i64;
                let h = (hi / self.half_step).floor() as i64;
                let a = self.lat.partition_point(|&x| x < l);
                let b = self.lat.partition_point(|&x| x <= h);
                (b - a) as u32
            }
            Backend::GaussBridge => {
                let a = self.pos.partition_point(|&x| x < lo);
                let b = self.pos.partition_point(|&x| x <= hi);
                (b - a) as u32
            }
        }
    }

    /// Per-path additivity identity: counting over [0,u] and over the two
    /// halves [0,s], [s,u] double-counts exactly the cluster containing
    /// the split point.
    pub fn check_additivity(&self, split: f64) -> Result<bool> {
        if !(split > 0.0 && split < self.cfg.u) {
            return Err(Error::contract(format!(
                "split {split} must lie strictly inside (0, {})",
                self.cfg.u
            )));
        }
        let total = self.cluster_count_in(0.0, self.cfg.u)?;
        let left = self.cluster_count_in(0.0, split)?;
        let right = self.cluster_count_in(split, self.cfg.u)?;
        Ok(total + 1 == left + right)
    }

    /// Horizon statistics for this path.
    pub fn path_stats(&self) -> PathStats {
        let nu = self
            .cluster_count_in(0.0, self.cfg.u)
            .expect("0 and u are grid points by construction");
        let n_in_interval = self.distinct_positions_in(0.0, self.cfg.u);
        let mut block_counts = Vec::new();
        let blocks = self.cfg.u.round();
        let cells_per_block = 1.0 / self.cfg.spacing;
        if (self.cfg.u - blocks).abs() < 1e-9
            && blocks >= 1.0
            && (cells_per_block - cells_per_block.round()).abs() < 1e-6
        {
            for k in 1..=blocks as usize {
                let c = self
                    .cluster_count_in((k - 1) as f64, k as f64)
                    .expect("block endpoints are grid points");
                block_counts.push(c);
            }
        }
        PathStats { nu, n_in_interval, block_counts }
    }

    /// Union-find route to the same count as [`Self::cluster_count_in`];
    /// the two must agree (cluster contiguity). Test support.
    #[cfg(test)]
    fn cluster_count_in_by_roots(&self, lo: f64, hi: f64) -> u32 {
        let a = self.grid_index(lo).unwrap();
        let b = self.grid_index(hi).unwrap();
        self.cluster_count_over(a..=b)
    }
}
