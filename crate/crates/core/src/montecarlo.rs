//! Monte Carlo checks of the exact results: direct simulation of the
//! players' game sequence, a large-ring estimator for the infinite-lattice
//! limit, and the finite-N convergence table.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; replica `k` reads
//! stream `k` of that generator, so results depend only on
//! `(seed, replica)` and are identical across platforms and thread counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodicity::{check_spin_ergodicity, SpinErgodicityReport};
use crate::error::{invalid, Result};
use crate::kernels::{check_ring, state_mask, Params, Pattern};
use crate::profit::{self, ExactOptions, MAX_EXACT_PLAYERS};

/// Smallest ring accepted by the spin-system estimator.
pub const MIN_SPIN_RING: usize = 64;

/// Batches per replica for the batch-means error bar.
pub const BATCHES_PER_REPLICA: u64 = 16;

pub(crate) fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// Which game is played at each turn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    /// Deterministic schedule `A^r B^s`.
    Pattern(Pattern),
    /// Game A with probability `gamma` each turn, else game B.
    Mixed(f64),
    PureB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub params: Params,
    pub mode: GameMode,
    /// Total games per replica, burn-in included.
    pub turns: u64,
    /// Leading games per replica left out of the average.
    pub burn_in: u64,
    pub seed: u64,
    pub replicas: usize,
    /// Starting configuration as a bit mask (player `i` in bit `i - 1`).
    pub initial: u32,
    /// Number of evenly spaced running-mean checkpoints to record.
    pub trace_points: usize,
}

impl SimConfig {
    /// Eight replicas, all-losers start, and burn-in `max(10^4, 100 N)`.
    pub fn new(n: usize, params: Params, mode: GameMode, turns: u64, seed: u64) -> Self {
        SimConfig {
            n,
            params,
            mode,
            turns,
            burn_in: default_burn_in(n),
            seed,
            replicas: 8,
            initial: 0,
            trace_points: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_ring(self.n)?;
        if self.turns <= self.burn_in {
            return Err(invalid(format!(
                "turns ({}) must exceed burn-in ({})",
                self.turns, self.burn_in
            )));
        }
        if self.replicas == 0 {
            return Err(invalid("at least one replica is required"));
        }
        if self.initial & !state_mask(self.n) != 0 {
            return Err(invalid(format!("initial state {:#b} has bits beyond N = {}", self.initial, self.n)));
        }
        if let GameMode::Mixed(g) = self.mode {
            if !(g > 0.0 && g < 1.0) {
                return Err(invalid(format!("mixing weight gamma = {g} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

pub fn default_burn_in(n: usize) -> u64 {
    10_000u64.max(100 * n as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Games counted after burn-in.
    pub games: u64,
    /// Running mean `S_n / n`, averaged over replicas.
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean: f64,
    /// Batch-means standard error over all replicas.
    pub std_error: f64,
    /// Standard error of the replica means (0 for a single replica).
    pub replica_std_error: f64,
    /// Games counted over all replicas.
    pub n_effective: u64,
    pub replicas: usize,
    pub replica_means: Vec<f64>,
    /// Counted games that were game-A plays, over all replicas.
    pub a_plays: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub running_means: Option<Vec<TracePoint>>,
}

struct ReplicaRun {
    profit: i64,
    a_plays: u64,
    batches: Vec<i64>,
    trace: Vec<f64>,
}

fn checkpoints(counted: u64, points: usize) -> Vec<u64> {
    (1..=points as u64)
        .map(|k| (k * counted).div_ceil(points as u64))
        .filter(|&c| c > 0)
        .collect()
}

fn run_replica(cfg: &SimConfig, replica: usize) -> ReplicaRun {
    let n = cfg.n;
    let mut rng = replica_rng(cfg.seed, replica);
    let mut x = cfg.initial;
    let p = cfg.params.as_array();
    let counted = cfg.turns - cfg.burn_in;
    let marks = checkpoints(counted, cfg.trace_points);
    let mut next_mark = 0;

    let mut profit = 0i64;
    let mut a_plays = 0u64;
    let mut batches = vec![0i64; BATCHES_PER_REPLICA as usize];
    let mut trace = Vec::with_capacity(marks.len());

    for t in 0..cfg.turns {
        let i = rng.random_range(0..n);
        let game_a = match cfg.mode {
            GameMode::Pattern(pat) => pat.is_a_turn(t),
            GameMode::Mixed(gamma) => rng.random::<f64>() < gamma,
            GameMode::PureB => false,
        };
        let bias = if game_a {
            0.5
        } else {
            let left = (x >> ((i + n - 1) % n)) & 1;
            let right = (x >> ((i + 1) % n)) & 1;
            p[(2 * left + right) as usize]
        };
        let win = rng.random::<f64>() < bias;
        if win {
            x |= 1 << i;
        } else {
            x &= !(1 << i);
        }
        if t >= cfg.burn_in {
            let k = t - cfg.burn_in;
            let pay = if win { 1 } else { -1 };
            profit += pay;
            batches[batch_of(k, counted)] += pay;
            if game_a {
                a_plays += 1;
            }
            if next_mark < marks.len() && k + 1 == marks[next_mark] {
                trace.push(profit as f64 / (k + 1) as f64);
                next_mark += 1;
            }
        }
    }
    ReplicaRun { profit, a_plays, batches, trace }
}

/// Batch `b` holds the counted games `k` with `b = floor(k B / counted)`.
fn batch_of(k: u64, counted: u64) -> usize {
    (u128::from(k) * u128::from(BATCHES_PER_REPLICA) / u128::from(counted)) as usize
}

fn batch_len(b: u64, counted: u64) -> u64 {
    let edge = |b: u64| (u128::from(b) * u128::from(counted)).div_ceil(u128::from(BATCHES_PER_REPLICA)) as u64;
    edge(b + 1) - edge(b)
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Plays the games turn by turn and averages the +1/-1 payoffs after
/// burn-in. The error bar comes from batch means: each replica's counted
/// games are cut into equal consecutive batches and the standard error is
/// that of the pooled batch means.
pub fn simulate_pattern(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let runs: Vec<ReplicaRun> = (0..cfg.replicas).into_par_iter().map(|k| run_replica(cfg, k)).collect();
    let counted = cfg.turns - cfg.burn_in;
    let replica_means: Vec<f64> = runs.iter().map(|r| r.profit as f64 / counted as f64).collect();
    let (mean, replica_std_error) = mean_and_se(&replica_means);
    let batch_means: Vec<f64> = runs
        .iter()
        .flat_map(|r| {
            r.batches
                .iter()
                .enumerate()
                .map(|(b, &sum)| (sum, batch_len(b as u64, counted)))
                .filter(|&(_, len)| len > 0)
                .map(|(sum, len)| sum as f64 / len as f64)
        })
        .collect();
    let std_error = mean_and_se(&batch_means).1;
    let running_means = (cfg.trace_points > 0).then(|| {
        let marks = checkpoints(counted, cfg.trace_points);
        marks
            .iter()
            .enumerate()
            .map(|(j, &games)| TracePoint {
                games,
                mean: runs.iter().map(|r| r.trace[j]).sum::<f64>() / runs.len() as f64,
            })
            .collect()
    });
    Ok(SimResult {
        mean,
        std_error,
        replica_std_error,
        n_effective: counted * cfg.replicas as u64,
        replicas: cfg.replicas,
        replica_means,
        a_plays: runs.iter().map(|r| r.a_plays).sum(),
        running_means,
    })
}

/// Settings for the large-ring spin-system estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    /// Biases driving the dynamics.
    pub params: Params,
    /// Weights `w_m` in `mu = sum_{w,z} pi(w, z) w_{2w+z}`.
    pub payoff: [f64; 4],
    pub ring: usize,
    pub sweeps: u64,
    pub burn_in_sweeps: u64,
    pub seed: u64,
    pub replicas: usize,
}

impl RingConfig {
    /// Dynamics and payoff weights both taken from `params`
    /// (`w_m = p_m - q_m`).
    pub fn new(params: Params, ring: usize, sweeps: u64, burn_in_sweeps: u64, seed: u64, replicas: usize) -> Self {
        let payoff = [0, 1, 2, 3].map(|m| params.payoff(m));
        RingConfig { params, payoff, ring, sweeps, burn_in_sweeps, seed, replicas }
    }

    /// The mixture `gamma A + (1 - gamma) B`: dynamics at `p(gamma)` and
    /// weights `(1 - gamma)(p_m - q_m)`.
    pub fn for_mixture(
        base: Params,
        gamma: f64,
        ring: usize,
        sweeps: u64,
        burn_in_sweeps: u64,
        seed: u64,
        replicas: usize,
    ) -> Result<Self> {
        let mut cfg = RingConfig::new(base.mixed(gamma)?, ring, sweeps, burn_in_sweeps, seed, replicas);
        cfg.payoff = [0, 1, 2, 3].map(|m| (1.0 - gamma) * base.payoff(m));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ring < MIN_SPIN_RING {
            return Err(invalid(format!("ring size {} below the minimum {MIN_SPIN_RING}", self.ring)));
        }
        if self.sweeps == 0 {
            return Err(invalid("at least one measured sweep is required"));
        }
        if self.replicas == 0 {
            return Err(invalid("at least one replica is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingEstimate {
    pub ring: usize,
    /// Translation-averaged law of `(x_{i-1}, x_{i+1})`, indexed `[w][z]`.
    pub marginal_13: [[f64; 2]; 2],
    pub marginal_se: [[f64; 2]; 2],
    pub mu_limit: f64,
    pub std_error: f64,
    pub sweeps: u64,
    pub replicas: usize,
    pub ergodicity: SpinErgodicityReport,
}

/// Per-batch frequencies of the neighbor codes, one entry per batch of
/// measured sweeps.
fn ring_replica(cfg: &RingConfig, replica: usize) -> Vec<[f64; 4]> {
    let l = cfg.ring;
    let p = cfg.params.as_array();
    let mut rng = replica_rng(cfg.seed, replica);
    let mut x = vec![0u8; l];
    let mut counts = vec![[0u64; 4]; BATCHES_PER_REPLICA as usize];
    let total_sweeps = cfg.burn_in_sweeps + cfg.sweeps;
    for sweep in 0..total_sweeps {
        for _ in 0..l {
            let i = rng.random_range(0..l);
            let left = x[(i + l - 1) % l];
            let right = x[(i + 1) % l];
            let bias = p[usize::from(2 * left + right)];
            x[i] = u8::from(rng.random::<f64>() < bias);
        }
        if sweep >= cfg.burn_in_sweeps {
            let batch = &mut counts[batch_of(sweep - cfg.burn_in_sweeps, cfg.sweeps)];
            for i in 0..l {
                let code = 2 * x[(i + l - 1) % l] + x[(i + 1) % l];
                batch[usize::from(code)] += 1;
            }
        }
    }
    counts
        .iter()
        .filter(|c| c.iter().sum::<u64>() > 0)
        .map(|c| {
            let total = c.iter().sum::<u64>() as f64;
            c.map(|v| v as f64 / total)
        })
        .collect()
}

/// Runs the `L`-player dynamics (one sweep = `L` single-site updates) as a
/// finite-volume stand-in for the spin system on the integers and measures
/// the two-site law around a site plus the limiting mean profit. Error bars
/// are batch-means standard errors over all replicas.
pub fn simulate_ring_spin(cfg: &RingConfig) -> Result<RingEstimate> {
    cfg.validate()?;
    let batches: Vec<[f64; 4]> =
        (0..cfg.replicas).into_par_iter().map(|k| ring_replica(cfg, k)).collect::<Vec<_>>().concat();
    let mut marginal_13 = [[0.0; 2]; 2];
    let mut marginal_se = [[0.0; 2]; 2];
    for code in 0..4 {
        let samples: Vec<f64> = batches.iter().map(|m| m[code]).collect();
        let (mean, se) = mean_and_se(&samples);
        marginal_13[code / 2][code % 2] = mean;
        marginal_se[code / 2][code % 2] = se;
    }
    let mus: Vec<f64> = batches.iter().map(|m| (0..4).map(|c| m[c] * cfg.payoff[c]).sum()).collect();
    let (mu_limit, std_error) = mean_and_se(&mus);
    Ok(RingEstimate {
        ring: cfg.ring,
        marginal_13,
        marginal_se,
        mu_limit,
        std_error,
        sweeps: cfg.sweeps,
        replicas: cfg.replicas,
        ergodicity: check_spin_ergodicity(cfg.params),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mu_pattern: f64,
    pub mu_mixed: f64,
    pub gap: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ConvergenceRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub params: Params,
    pub pattern: Pattern,
    pub gamma: f64,
    pub rows: Vec<ConvergenceRow>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ring: Option<RingEstimate>,
}

impl ConvergenceTable {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(ConvergenceRow::failed)
    }

    pub fn row(&self, n: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConvergenceOptions {
    pub exact: ExactOptions,
    /// Ring size, sweeps, burn-in sweeps, seed and replicas for the optional
    /// estimate of the common limit.
    pub ring: Option<(usize, u64, u64, u64, usize)>,
}

/// `mu_[r,s]^N` and `mu_(gamma,1-gamma)^N` with `gamma = r/(r+s)` for each
/// requested `N`. A row whose solve fails carries NaN values and the error.
pub fn convergence_table(
    params: Params,
    pattern: Pattern,
    n_values: &[usize],
    opts: &ConvergenceOptions,
) -> Result<ConvergenceTable> {
    for &n in n_values {
        check_ring(n)?;
        if n > MAX_EXACT_PLAYERS {
            return Err(invalid(format!("N = {n} exceeds {MAX_EXACT_PLAYERS}")));
        }
    }
    let gamma = pattern.gamma();
    let rows = n_values
        .iter()
        .map(|&n| {
            let pat = profit::mu_pattern_with(n, params, pattern, profit::Formula::Mu1, &opts.exact);
            let mix = profit::mu_mixed_with(n, params, gamma, &opts.exact);
            match (pat, mix) {
                (Ok(a), Ok(b)) => ConvergenceRow {
                    n,
                    mu_pattern: a.mu,
                    mu_mixed: b.mu,
                    gap: (a.mu - b.mu).abs(),
                    error: None,
                },
                (a, b) => ConvergenceRow {
                    n,
                    mu_pattern: a.as_ref().map_or(f64::NAN, |r| r.mu),
                    mu_mixed: b.as_ref().map_or(f64::NAN, |r| r.mu),
                    gap: f64::NAN,
                    error: Some(
                        [a.err(), b.err()].into_iter().flatten().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
                    ),
                },
            }
        })
        .collect();
    let ring = opts
        .ring
        .map(|(l, sweeps, burn, seed, replicas)| {
            simulate_ring_spin(&RingConfig::for_mixture(params, gamma, l, sweeps, burn, seed, replicas)?)
        })
        .transpose()?;
    Ok(ConvergenceTable { params, pattern, gamma, rows, ring })
}
