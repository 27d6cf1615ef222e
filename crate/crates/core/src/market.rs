//! The stochastic bidding process.
//!
//! Each step every speculator buys with probability
//! `clamp((d_prev - N_r/2) / N_s, 0, 1)` and every random trader buys with
//! probability 1/2, so the expected demand equals the previous demand
//! whenever the clamp is inactive.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Random stream used for every seeded run in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Buy probabilities are clamped to [0, 1]; without random traders the
    /// states 0 and N are absorbing.
    #[default]
    Clamp,
    /// When the previous demand is 0 or N every agent buys with probability 1/2.
    ResetRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_speculators: u32,
    pub n_random: u32,
    #[serde(default)]
    pub boundary_mode: BoundaryMode,
    #[serde(default)]
    pub seed: u64,
}

impl ModelParams {
    pub fn new(n_speculators: u32, n_random: u32) -> Result<Self> {
        let params = Self {
            n_speculators,
            n_random,
            boundary_mode: BoundaryMode::Clamp,
            seed: 0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_boundary(mut self, mode: BoundaryMode) -> Result<Self> {
        self.boundary_mode = mode;
        self.validate()?;
        Ok(self)
    }

    /// Total number of agents `N = N_s + N_r`.
    pub fn n_total(&self) -> u32 {
        self.n_speculators + self.n_random
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speculators == 0 {
            return Err(Error::InvalidParams("n_speculators must be at least 1".into()));
        }
        let total = self.n_speculators as u64 + self.n_random as u64;
        if total < 2 {
            return Err(Error::InvalidParams("at least two agents are required".into()));
        }
        if total > u32::MAX as u64 {
            return Err(Error::InvalidParams(format!("{total} agents overflow the demand type")));
        }
        if self.boundary_mode == BoundaryMode::ResetRule && self.n_random > 0 {
            return Err(Error::InvalidParams(
                "the reset rule applies only to markets without random traders".into(),
            ));
        }
        Ok(())
    }

    /// Flat `key = value` representation.
    pub fn to_config_string(&self) -> String {
        let mode = match self.boundary_mode {
            BoundaryMode::Clamp => "clamp",
            BoundaryMode::ResetRule => "reset_rule",
        };
        format!(
            "n_speculators = {}\nn_random = {}\nboundary_mode = \"{}\"\nseed = {}\n",
            self.n_speculators, self.n_random, mode, self.seed
        )
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let params: ModelParams =
            toml::from_str(text).map_err(|e| Error::InvalidParams(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketState {
    pub demand: u32,
    pub time: u64,
}

/// Demand/supply price `d / (N - d)`.
pub fn price(demand: u32, n_total: u32) -> Result<f64> {
    if demand > n_total {
        return Err(Error::DemandOutOfRange {
            demand: demand as i64,
            n_total,
        });
    }
    if demand == n_total {
        return Err(Error::UndefinedPrice(n_total));
    }
    Ok(demand as f64 / (n_total - demand) as f64)
}

/// Per-speculator buy probability that makes the demand a martingale.
///
/// `1/2 + (d - N/2)/N_s` and `(d - N_r/2)/N_s` are the same rational
/// `(2d - N_r) / (2 N_s)`; it is evaluated from exact integers so both forms
/// agree bit for bit.
pub fn speculator_buy_prob(prev_demand: u32, params: &ModelParams) -> f64 {
    let numerator = 2 * prev_demand as i64 - params.n_random as i64;
    let q = numerator as f64 / (2 * params.n_speculators as u64) as f64;
    q.clamp(0.0, 1.0)
}

/// Advances the market by one step.
pub fn step<R: Rng + ?Sized>(state: MarketState, params: &ModelParams, rng: &mut R) -> MarketState {
    let n = params.n_total();
    let demand = if params.boundary_mode == BoundaryMode::ResetRule
        && (state.demand == 0 || state.demand == n)
    {
        sample_binomial(n, 0.5, rng)
    } else {
        let q = speculator_buy_prob(state.demand, params);
        sample_binomial(params.n_speculators, q, rng) + sample_binomial(params.n_random, 0.5, rng)
    };
    MarketState {
        demand,
        time: state.time + 1,
    }
}

fn sample_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let dist = Binomial::new(n as u64, p).expect("probability checked to lie in (0, 1)");
    dist.sample(rng) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialDemand {
    /// `floor(N / 2)`.
    #[default]
    Center,
    Value(u32),
}

impl InitialDemand {
    pub fn resolve(self, n_total: u32) -> Result<u32> {
        match self {
            InitialDemand::Center => Ok(n_total / 2),
            InitialDemand::Value(d) if d <= n_total => Ok(d),
            InitialDemand::Value(d) => Err(Error::DemandOutOfRange {
                demand: d as i64,
                n_total,
            }),
        }
    }
}

/// Seeded record of demands; element `t` is the demand at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ModelParams,
    pub demands: Vec<u32>,
}

/// Runs `steps` steps from `initial`, seeding the generator with `params.seed`.
pub fn simulate(params: &ModelParams, steps: usize, initial: InitialDemand) -> Result<Trajectory> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::InvalidParams("steps must be at least 1".into()));
    }
    let n = params.n_total();
    let start = initial.resolve(n)?;
    let len = steps
        .checked_add(1)
        .ok_or_else(|| Error::Resource("trajectory length overflows usize".into()))?;
    let mut demands = Vec::new();
    demands
        .try_reserve_exact(len)
        .map_err(|e| Error::Resource(format!("cannot allocate {len} demands: {e}")))?;

    let mut rng = seeded_rng(params.seed);
    let mut state = MarketState {
        demand: start,
        time: 0,
    };
    demands.push(start);
    for _ in 0..steps {
        state = step(state, params, &mut rng);
        demands.push(state.demand);
    }
    Ok(Trajectory {
        params: *params,
        demands,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: u64,
    demand: u32,
    price: Option<f64>,
}

impl Trajectory {
    pub fn n_total(&self) -> u32 {
        self.params.n_total()
    }

    pub fn steps(&self) -> usize {
        self.demands.len().saturating_sub(1)
    }

    /// Writes `t,demand,price`; the price cell is empty when `d = N`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.n_total();
        let mut out = csv::Writer::from_writer(writer);
        for (t, &demand) in self.demands.iter().enumerate() {
            out.serialize(TrajectoryRow {
                t: t as u64,
                demand,
                price: price(demand, n).ok(),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. Only the
    /// demand column is used; prices are derived.
    pub fn read_csv<R: Read>(reader: R, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_total();
        let mut input = csv::Reader::from_reader(reader);
        let mut demands = Vec::new();
        for (i, row) in input.deserialize::<TrajectoryRow>().enumerate() {
            let row = row?;
            if row.t != i as u64 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected t = {i}, found {}", row.t),
                });
            }
            if row.demand > n {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("demand {} exceeds N = {n}", row.demand),
                });
            }
            demands.push(row.demand);
        }
        Ok(Self { params, demands })
    }
}
