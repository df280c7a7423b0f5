//! Synthetic populations and planted-cluster instances.
//!
//! [`generate_population`] produces client and transaction tables shaped
//! like a retail dealer's book: age, income, residency, knowledge and
//! account-count marginals, realistic missingness, and five behavioural
//! archetypes that drive each client's trades over a one-year window.
//! [`generate_planted`] produces feature matrices with known labels.

use std::collections::HashMap;
use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, TradeType};
use crate::ingest::{ClientRecord, TransactionRecord, MAX_AGE, MIN_AGE};
use crate::numeric::{derive_seed, rng_from_seed};
use crate::stats::dist::norm_cdf;

/// Discrete distribution over labelled outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical<T> {
    pub values: Vec<T>,
    pub weights: Vec<f64>,
}

impl<T: Clone> Categorical<T> {
    pub fn new(pairs: Vec<(T, f64)>) -> Self {
        let (values, weights) = pairs.into_iter().unzip();
        Self { values, weights }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "{name}: values and weights must be non-empty and aligned"
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::invalid(format!(
                "{name}: weights must be non-negative with positive sum"
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> T {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (v, w) in self.values.iter().zip(&self.weights) {
            if u < *w {
                return v.clone();
            }
            u -= w;
        }
        self.values.last().expect("non-empty").clone()
    }
}

/// Behaviour of one archetype. Rates are per year; amounts in CAD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub weight: f64,
    pub age_offset: f64,
    /// Mean number of ad hoc (periodic class) trades over the window.
    pub periodic_rate: f64,
    pub periodic_median: f64,
    pub periodic_sigma: f64,
    /// Probability of running a scheduled plan, and its cadence choices.
    pub systematic_prob: f64,
    pub systematic_interval_days: Vec<u32>,
    pub systematic_median: f64,
    /// Relative jitter of each scheduled amount.
    pub systematic_jitter: f64,
    /// Plans end at a uniform point in the window when true.
    pub systematic_lapses: bool,
    pub systematic_types: Categorical<TradeType>,
    /// Probability of receiving monthly distributions.
    pub third_party_prob: f64,
    pub third_party_median: f64,
    pub third_party_sigma: f64,
    pub account_types: Categorical<String>,
    pub rt_mean: f64,
    pub rt_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRates {
    pub age: f64,
    pub residency: f64,
    pub risk_tolerance: f64,
    pub investment_objective: f64,
    pub annual_income: f64,
    pub investment_knowledge: f64,
    pub gender: f64,
    pub marital_status: f64,
}

impl Default for MissingRates {
    fn default() -> Self {
        Self {
            age: 0.022,
            residency: 0.0047,
            risk_tolerance: 0.1416,
            investment_objective: 0.067,
            annual_income: 0.0013,
            investment_knowledge: 0.078,
            gender: 0.0804,
            marital_status: 0.11,
        }
    }
}

/// Parameters of a synthetic client population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_clients: usize,
    pub window_start: NaiveDate,
    pub snapshot: NaiveDate,
    /// Target marginal mean and SD of age (years), truncated to 18–98.
    pub age_mean: f64,
    pub age_sd: f64,
    /// Target mean income; the log-normal base is calibrated to hit it.
    pub income_mean: f64,
    pub income_sigma: f64,
    pub income_min: f64,
    pub income_max: f64,
    pub income_spikes: Categorical<f64>,
    pub income_spike_prob: f64,
    pub residency: Categorical<String>,
    pub gender: Categorical<String>,
    pub knowledge: Categorical<u8>,
    pub accounts: Categorical<u32>,
    pub marital: Categorical<String>,
    pub jobs: Categorical<String>,
    pub objectives: Categorical<String>,
    pub missing: MissingRates,
    /// Share of orders that are not filled.
    pub unfilled_rate: f64,
    pub archetypes: Vec<Archetype>,
}

fn s(v: &str) -> String {
    v.to_string()
}

fn accounts(pairs: &[(&str, f64)]) -> Categorical<String> {
    Categorical::new(pairs.iter().map(|(a, w)| (s(a), *w)).collect())
}

impl Default for PopulationSpec {
    fn default() -> Self {
        let spread = accounts(&[
            ("RSP", 0.35),
            ("TFSA", 0.25),
            ("Non-registered", 0.2),
            ("Cash", 0.1),
            ("RESP", 0.06),
            ("RIF", 0.04),
        ]);
        let archetypes = vec![
            Archetype {
                name: s("active_trader"),
                weight: 0.19,
                age_offset: 0.6,
                periodic_rate: 60.0,
                periodic_median: 25_000.0,
                periodic_sigma: 0.7,
                systematic_prob: 0.3,
                systematic_interval_days: vec![30],
                systematic_median: 350.0,
                systematic_jitter: 0.05,
                systematic_lapses: false,
                systematic_types: Categorical::new(vec![
                    (TradeType::PreAuthorizedContribution, 0.6),
                    (TradeType::ReinvestDividend, 0.4),
                ]),
                third_party_prob: 0.8,
                third_party_median: 90.0,
                third_party_sigma: 0.7,
                account_types: spread.clone(),
                rt_mean: 3.19,
                rt_sd: 0.63,
            },
            Archetype {
                name: s("early_saver"),
                weight: 0.35,
                age_offset: -2.6,
                periodic_rate: 0.0,
                periodic_median: 70.0,
                periodic_sigma: 0.1,
                systematic_prob: 0.9,
                systematic_interval_days: vec![14, 30],
                systematic_median: 22.0,
                systematic_jitter: 0.005,
                systematic_lapses: true,
                systematic_types: Categorical::new(vec![
                    (TradeType::PreAuthorizedContribution, 0.6),
                    (TradeType::AutoWithdrawal, 0.25),
                    (TradeType::AssetAllocation, 0.15),
                ]),
                third_party_prob: 0.2,
                third_party_median: 17.0,
                third_party_sigma: 0.4,
                account_types: accounts(&[
                    ("Cash", 0.45),
                    ("TFSA", 0.25),
                    ("RSP", 0.2),
                    ("RESP", 0.06),
                    ("Non-registered", 0.03),
                    ("RIF", 0.01),
                ]),
                rt_mean: 3.18,
                rt_sd: 0.75,
            },
            Archetype {
                name: s("just_in_time"),
                weight: 0.27,
                age_offset: 1.5,
                periodic_rate: 2.0,
                periodic_median: 18_000.0,
                periodic_sigma: 0.6,
                systematic_prob: 0.0,
                systematic_interval_days: vec![30],
                systematic_median: 290.0,
                systematic_jitter: 0.001,
                systematic_lapses: false,
                systematic_types: Categorical::new(vec![(
                    TradeType::PreAuthorizedContribution,
                    1.0,
                )]),
                third_party_prob: 0.5,
                third_party_median: 100.0,
                third_party_sigma: 0.5,
                account_types: spread.clone(),
                rt_mean: 3.12,
                rt_sd: 0.73,
            },
            Archetype {
                name: s("older_investor"),
                weight: 0.07,
                age_offset: 6.4,
                periodic_rate: 0.5,
                periodic_median: 9_000.0,
                periodic_sigma: 0.9,
                systematic_prob: 1.0,
                systematic_interval_days: vec![30],
                systematic_median: 900.0,
                systematic_jitter: 0.6,
                systematic_lapses: false,
                systematic_types: Categorical::new(vec![
                    (TradeType::AutoWithdrawal, 0.8),
                    (TradeType::ReinvestDividend, 0.2),
                ]),
                third_party_prob: 0.9,
                third_party_median: 60.0,
                third_party_sigma: 0.6,
                account_types: accounts(&[
                    ("RIF", 0.5),
                    ("Non-registered", 0.2),
                    ("TFSA", 0.15),
                    ("Cash", 0.1),
                    ("RSP", 0.05),
                ]),
                rt_mean: 2.95,
                rt_sd: 0.71,
            },
            Archetype {
                name: s("systematic_saver"),
                weight: 0.12,
                age_offset: -0.2,
                periodic_rate: 4.0,
                periodic_median: 12_000.0,
                periodic_sigma: 0.7,
                systematic_prob: 1.0,
                systematic_interval_days: vec![60, 90, 120],
                systematic_median: 250.0,
                systematic_jitter: 0.001,
                systematic_lapses: false,
                systematic_types: Categorical::new(vec![
                    (TradeType::PreAuthorizedContribution, 0.8),
                    (TradeType::AssetAllocation, 0.2),
                ]),
                third_party_prob: 0.6,
                third_party_median: 105.0,
                third_party_sigma: 0.5,
                account_types: spread,
                rt_mean: 3.19,
                rt_sd: 0.76,
            },
        ];
        Self {
            n_clients: 5_000,
            window_start: NaiveDate::from_ymd_opt(2018, 8, 13).expect("valid date"),
            snapshot: NaiveDate::from_ymd_opt(2019, 8, 12).expect("valid date"),
            age_mean: 58.1,
            age_sd: 14.1,
            income_mean: 70_658.0,
            income_sigma: 0.6,
            income_min: 1_000.0,
            income_max: 220_000.0,
            income_spikes: Categorical::new(vec![
                (50_000.0, 0.45),
                (100_000.0, 0.35),
                (150_000.0, 0.12),
                (200_000.0, 0.08),
            ]),
            income_spike_prob: 0.15,
            residency: accounts(&[
                ("ON", 65.19),
                ("BC", 14.63),
                ("AB", 12.00),
                ("MB", 3.94),
                ("NS", 2.59),
                ("CA", 0.92),
                ("USA", 0.26),
                ("UK", 0.06),
            ]),
            gender: accounts(&[("M", 50.5), ("F", 49.5)]),
            knowledge: Categorical::new(vec![(1, 0.02), (2, 0.44), (3, 0.37), (4, 0.17)]),
            accounts: Categorical::new(vec![
                (1, 5475.0),
                (2, 7659.0),
                (3, 6661.0),
                (4, 3051.0),
                (5, 775.0),
                (6, 222.0),
                (7, 79.0),
                (8, 40.0),
                (9, 4.0),
                (10, 4.0),
            ]),
            marital: accounts(&[("M", 67.0), ("S", 18.0), ("D", 4.0)]),
            jobs: accounts(&[
                ("professional", 0.22),
                ("management", 0.12),
                ("clerical", 0.16),
                ("trades", 0.14),
                ("sales", 0.1),
                ("self_employed", 0.1),
                ("student", 0.03),
                ("other", 0.13),
            ]),
            objectives: accounts(&[
                ("growth", 0.4),
                ("balanced", 0.3),
                ("income", 0.18),
                ("preservation", 0.1),
                ("speculation", 0.02),
            ]),
            missing: MissingRates::default(),
            unfilled_rate: 0.05,
            archetypes,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.age_sd > 0.0) || !self.age_mean.is_finite() {
            return bad("age SD must be positive");
        }
        if !(self.income_sigma > 0.0)
            || !(self.income_mean > 0.0)
            || !(self.income_min < self.income_max)
        {
            return bad("income parameters are infeasible");
        }
        if !(0.0..1.0).contains(&self.income_spike_prob)
            || !(0.0..1.0).contains(&self.unfilled_rate)
        {
            return bad("probabilities must lie in [0, 1)");
        }
        if self.snapshot <= self.window_start {
            return bad("snapshot must follow the window start");
        }
        let m = &self.missing;
        for r in [
            m.age,
            m.residency,
            m.risk_tolerance,
            m.investment_objective,
            m.annual_income,
            m.investment_knowledge,
            m.gender,
            m.marital_status,
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad("missing rates must lie in [0, 1)");
            }
        }
        self.income_spikes.validate("income spikes")?;
        self.residency.validate("residency")?;
        self.gender.validate("gender")?;
        self.knowledge.validate("knowledge")?;
        self.accounts.validate("accounts")?;
        self.marital.validate("marital")?;
        self.jobs.validate("jobs")?;
        self.objectives.validate("objectives")?;
        if self.archetypes.is_empty() {
            return bad("at least one archetype is required");
        }
        for a in &self.archetypes {
            if !(a.weight >= 0.0)
                || a.periodic_rate < 0.0
                || !(a.periodic_sigma > 0.0)
                || !(a.third_party_sigma > 0.0)
            {
                return Err(Error::invalid(format!(
                    "archetype `{}` has infeasible parameters",
                    a.name
                )));
            }
            if !(0.0..=1.0).contains(&a.systematic_prob)
                || !(0.0..=1.0).contains(&a.third_party_prob)
                || a.rt_sd <= 0.0
            {
                return Err(Error::invalid(format!(
                    "archetype `{}` has infeasible probabilities",
                    a.name
                )));
            }
            if a.systematic_interval_days.iter().any(|&d| d == 0)
                || a.systematic_interval_days.is_empty()
            {
                return Err(Error::invalid(format!(
                    "archetype `{}` needs positive plan intervals",
                    a.name
                )));
            }
            a.systematic_types.validate(&a.name)?;
            a.account_types.validate(&a.name)?;
        }
        if self.archetypes.iter().map(|a| a.weight).sum::<f64>() <= 0.0 {
            return bad("archetype weights must have positive sum");
        }
        Ok(())
    }

    fn window_days(&self) -> u64 {
        (self.snapshot - self.window_start).num_days() as u64
    }

    /// SD of the base age normal such that the archetype offsets bring the
    /// overall SD to the target.
    fn base_age_sd(&self) -> f64 {
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        let mean: f64 = self
            .archetypes
            .iter()
            .map(|a| a.weight * a.age_offset)
            .sum::<f64>()
            / total;
        let var: f64 = self
            .archetypes
            .iter()
            .map(|a| a.weight * (a.age_offset - mean).powi(2))
            .sum::<f64>()
            / total;
        (self.age_sd * self.age_sd - var).max(1e-6).sqrt()
    }

    /// Location of the log-normal income base so the overall mean, after
    /// clipping and mixing with the spikes, equals the target.
    fn income_mu(&self) -> f64 {
        let spikes = &self.income_spikes;
        let wsum: f64 = spikes.weights.iter().sum();
        let spike_mean: f64 = spikes
            .values
            .iter()
            .zip(&spikes.weights)
            .map(|(v, w)| v * w)
            .sum::<f64>()
            / wsum;
        let w = self.income_spike_prob;
        let (a, b, sg) = (self.income_min, self.income_max, self.income_sigma);
        let clipped_mean = |mu: f64| {
            let za = (a.ln() - mu) / sg;
            let zb = (b.ln() - mu) / sg;
            let body = (mu + 0.5 * sg * sg).exp() * (norm_cdf(zb - sg) - norm_cdf(za - sg));
            body + a * norm_cdf(za) + b * (1.0 - norm_cdf(zb))
        };
        let target = (self.income_mean - w * spike_mean) / (1.0 - w);
        let (mut lo, mut hi) = (a.ln(), b.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clipped_mean(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// A generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub clients: Vec<ClientRecord>,
    pub transactions: Vec<TransactionRecord>,
    /// Archetype index per client.
    pub archetypes: Vec<usize>,
}

fn maybe<T>(rng: &mut ChaCha8Rng, missing_rate: f64, v: T) -> Option<T> {
    if rng.random::<f64>() < missing_rate {
        None
    } else {
        Some(v)
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 30.0 {
        let n = Normal::new(lambda, lambda.sqrt()).expect("valid normal");
        return n.sample(rng).round().max(0.0) as usize;
    }
    let l = (-lambda).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.random::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

struct Ctx<'a> {
    spec: &'a PopulationSpec,
    base_age_sd: f64,
    income: LogNormal<f64>,
    archetypes: Categorical<usize>,
}

fn gen_client(ctx: &Ctx<'_>, idx: usize, rng: &mut ChaCha8Rng) -> (ClientRecord, usize) {
    let spec = ctx.spec;
    let arche = ctx.archetypes.sample(rng);
    let a = &spec.archetypes[arche];
    let mut c = ClientRecord::empty(format!("C{idx:06}"));

    let age_dist =
        Normal::new(spec.age_mean + a.age_offset, ctx.base_age_sd).expect("validated SD");
    let age = loop {
        let v = age_dist.sample(rng).round();
        if v >= MIN_AGE as f64 && v <= MAX_AGE as f64 {
            break v as u32;
        }
    };
    let income = if rng.random::<f64>() < spec.income_spike_prob {
        spec.income_spikes.sample(rng)
    } else {
        let v = ctx
            .income
            .sample(rng)
            .clamp(spec.income_min, spec.income_max);
        ((v / 100.0).round() * 100.0).clamp(spec.income_min, spec.income_max)
    };
    let retired_p = if age >= 65 {
        0.8
    } else if age >= 55 {
        0.3
    } else {
        0.03
    };
    let retired = rng.random::<f64>() < retired_p;
    let job = if retired {
        s("retired")
    } else {
        spec.jobs.sample(rng)
    };
    let rt = Normal::new(a.rt_mean, a.rt_sd)
        .expect("validated SD")
        .sample(rng);
    let rt = ((rt * 2.0).round() / 2.0).clamp(1.0, 5.0);

    let m = &spec.missing;
    c.age = maybe(rng, m.age, age);
    c.gender = {
        let v = spec.gender.sample(rng);
        maybe(rng, m.gender, v)
    };
    c.residency = {
        let v = spec.residency.sample(rng);
        maybe(rng, m.residency, v)
    };
    c.annual_income = maybe(rng, m.annual_income, income);
    c.investment_knowledge = {
        let v = spec.knowledge.sample(rng);
        maybe(rng, m.investment_knowledge, v)
    };
    c.num_accounts = Some(spec.accounts.sample(rng));
    c.marital_status = {
        let v = spec.marital.sample(rng);
        maybe(rng, m.marital_status, v)
    };
    c.retired = Some(retired);
    c.risk_tolerance = maybe(rng, m.risk_tolerance, rt);
    c.job_category = Some(job);
    c.investment_objective = {
        let v = spec.objectives.sample(rng);
        maybe(rng, m.investment_objective, v)
    };
    (c, arche)
}

const PERIODIC_TYPES: [(TradeType, f64); 11] = [
    (TradeType::Buy, 0.35),
    (TradeType::Sell, 0.25),
    (TradeType::Contribution, 0.08),
    (TradeType::Redeem, 0.08),
    (TradeType::Exchange, 0.05),
    (TradeType::Payment, 0.03),
    (TradeType::EftWithdrawal, 0.04),
    (TradeType::EftDeposit, 0.04),
    (TradeType::Tfsa, 0.03),
    (TradeType::SpousalContribution, 0.02),
    (TradeType::Withdrawal, 0.03),
];

const THIRD_PARTY_TYPES: [(TradeType, f64); 3] = [
    (TradeType::Dividend, 0.5),
    (TradeType::IncomeDistribution, 0.35),
    (TradeType::Interest, 0.15),
];

fn gen_transactions(
    spec: &PopulationSpec,
    client: &ClientRecord,
    arche: &Archetype,
    rng: &mut ChaCha8Rng,
) -> Vec<TransactionRecord> {
    let days = spec.window_days();
    let n_acc = client.num_accounts.unwrap_or(1).max(1);
    let accounts: Vec<(String, String)> = (0..n_acc)
        .map(|j| {
            (
                format!("{}-A{}", client.client_id, j + 1),
                arche.account_types.sample(rng),
            )
        })
        .collect();
    let periodic = Categorical::new(PERIODIC_TYPES.to_vec());
    let third = Categorical::new(THIRD_PARTY_TYPES.to_vec());
    let mut out = Vec::new();
    let mut push =
        |rng: &mut ChaCha8Rng, ty: TradeType, amount: f64, offset: u64, account: usize| {
            let unit = (rng.random_range(5.0..150.0) * 100.0f64).round() / 100.0;
            let size = ((amount / unit) * 10_000.0).round() / 10_000.0;
            let size = if size > 0.0 { size } else { 0.0001 };
            let status = if rng.random::<f64>() < spec.unfilled_rate {
                ["cancelled", "rejected", "expired"][rng.random_range(0..3)]
            } else {
                "filled"
            };
            let (id, ty_acc) = &accounts[account];
            out.push(TransactionRecord {
                account_id: id.clone(),
                client_id: client.client_id.clone(),
                account_type: Some(ty_acc.clone()),
                trade_type: ty,
                size,
                unit_value: unit,
                order_date: spec.window_start + Days::new(offset.min(days)),
                status: status.to_string(),
            });
        };

    let n_periodic = poisson(rng, arche.periodic_rate);
    let periodic_amt =
        LogNormal::new(arche.periodic_median.ln(), arche.periodic_sigma).expect("validated sigma");
    for _ in 0..n_periodic {
        let off = rng.random_range(0..=days);
        let acc = rng.random_range(0..accounts.len());
        let amt = periodic_amt.sample(rng);
        let ty = periodic.sample(rng);
        push(rng, ty, amt, off, acc);
    }

    if rng.random::<f64>() < arche.systematic_prob {
        let interval = arche.systematic_interval_days
            [rng.random_range(0..arche.systematic_interval_days.len())]
            as u64;
        let level = arche.systematic_median * (1.0 + 0.3 * (rng.random::<f64>() - 0.5));
        let ty = arche.systematic_types.sample(rng);
        let acc = rng.random_range(0..accounts.len());
        let end = if arche.systematic_lapses {
            rng.random_range(0..=days)
        } else {
            days
        };
        let mut off = rng.random_range(0..interval.min(days + 1));
        while off <= end {
            let jitter = 1.0 + arche.systematic_jitter * (2.0 * rng.random::<f64>() - 1.0);
            push(rng, ty, (level * jitter).max(0.01), off, acc);
            off += interval;
        }
    }

    if rng.random::<f64>() < arche.third_party_prob {
        let amt = LogNormal::new(arche.third_party_median.ln(), arche.third_party_sigma)
            .expect("validated sigma");
        let acc = rng.random_range(0..accounts.len());
        let mut off = rng.random_range(0..30u64.min(days + 1));
        while off <= days {
            let ty = third.sample(rng);
            let a = amt.sample(rng);
            push(rng, ty, a, off, acc);
            off += 30;
        }
    }
    out.sort_by(|a, b| {
        a.order_date
            .cmp(&b.order_date)
            .then(a.account_id.cmp(&b.account_id))
    });
    out
}

/// Generate a synthetic population. Each client uses its own generator
/// stream derived from `seed`, so results do not depend on iteration order.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Population> {
    spec.validate()?;
    let ctx = Ctx {
        spec,
        base_age_sd: spec.base_age_sd(),
        income: LogNormal::new(spec.income_mu(), spec.income_sigma).expect("validated sigma"),
        archetypes: Categorical::new(
            spec.archetypes
                .iter()
                .enumerate()
                .map(|(i, a)| (i, a.weight))
                .collect(),
        ),
    };
    let mut clients = Vec::with_capacity(spec.n_clients);
    let mut transactions = Vec::new();
    let mut archetypes = Vec::with_capacity(spec.n_clients);
    for idx in 0..spec.n_clients {
        let mut rng = rng_from_seed(derive_seed(seed, idx as u64));
        let (c, a) = gen_client(&ctx, idx, &mut rng);
        transactions.extend(gen_transactions(spec, &c, &spec.archetypes[a], &mut rng));
        clients.push(c);
        archetypes.push(a);
    }
    Ok(Population {
        clients,
        transactions,
        archetypes,
    })
}

/// Write clients in the delimited layout the ingest module reads.
/// Missing marital status is written as `*`, other gaps as empty cells.
pub fn write_clients_csv<W: Write>(clients: &[ClientRecord], w: W) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "client_id",
        "age",
        "gender",
        "residency",
        "annual_income",
        "investment_knowledge",
        "num_accounts",
        "marital_status",
        "retired",
        "risk_tolerance",
        "job_category",
        "investment_objective",
    ])?;
    fn opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map_or_else(String::new, ToString::to_string)
    }
    for c in clients {
        cw.write_record([
            c.client_id.clone(),
            opt(&c.age),
            opt(&c.gender),
            opt(&c.residency),
            opt(&c.annual_income),
            opt(&c.investment_knowledge),
            opt(&c.num_accounts),
            c.marital_status.clone().unwrap_or_else(|| "*".to_string()),
            c.retired
                .map_or_else(String::new, |r| if r { s("yes") } else { s("no") }),
            opt(&c.risk_tolerance),
            opt(&c.job_category),
            opt(&c.investment_objective),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

/// Write transactions in the delimited layout the ingest module reads.
pub fn write_transactions_csv<W: Write>(txns: &[TransactionRecord], w: W) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record([
        "account_id",
        "client_id",
        "account_type",
        "trade_type",
        "size",
        "unit_value",
        "order_date",
        "status",
    ])?;
    for t in txns {
        cw.write_record([
            t.account_id.clone(),
            t.client_id.clone(),
            t.account_type.clone().unwrap_or_default(),
            t.trade_type.label().to_string(),
            t.size.to_string(),
            t.unit_value.to_string(),
            t.order_date.format("%Y-%m-%d").to_string(),
            t.status.clone(),
        ])?;
    }
    cw.flush()?;
    Ok(())
}

/// Mixed-type instance with known cluster structure.
///
/// Cluster ℓ's numeric mean is `separation · sd` along axis ℓ mod p (zero
/// elsewhere). Each categorical column has `levels` categories; cluster ℓ
/// takes category (ℓ + j) mod levels in column j with probability `purity`
/// and a uniformly chosen other category otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub levels: usize,
    pub separation: f64,
    pub sd: f64,
    pub purity: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            k: 5,
            p: 8,
            q: 3,
            levels: 5,
            separation: 5.0,
            sd: 1.0,
            purity: 0.95,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.p == 0 || self.levels < 2 {
            return Err(Error::invalid(
                "planted spec needs k >= 2, p >= 1 and at least two levels",
            ));
        }
        if !(self.separation >= 0.0) || !(self.sd > 0.0) || !(0.0..=1.0).contains(&self.purity) {
            return Err(Error::invalid(
                "planted spec has infeasible separation, SD or purity",
            ));
        }
        Ok(())
    }

    pub fn mean(&self, cluster: usize, j: usize) -> f64 {
        if cluster % self.p == j {
            self.separation * self.sd
        } else {
            0.0
        }
    }
}

/// Planted instance: `n_per_cluster` points per cluster, in cluster order.
pub fn generate_planted(
    spec: &PlantedSpec,
    n_per_cluster: usize,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, spec.sd).expect("validated SD");
    let n = spec.k * n_per_cluster;
    let mut numeric = Vec::with_capacity(n * spec.p);
    let mut categorical = Vec::with_capacity(n * spec.q);
    let mut labels = Vec::with_capacity(n);
    for l in 0..spec.k {
        for _ in 0..n_per_cluster {
            for j in 0..spec.p {
                numeric.push(spec.mean(l, j) + noise.sample(&mut rng));
            }
            for j in 0..spec.q {
                let dominant = (l + j) % spec.levels;
                let code = if rng.random::<f64>() < spec.purity {
                    dominant
                } else {
                    let other = rng.random_range(0..spec.levels - 1);
                    if other >= dominant {
                        other + 1
                    } else {
                        other
                    }
                };
                categorical.push(code as u32);
            }
            labels.push(l);
        }
    }
    let width = format!("{}", spec.levels.saturating_sub(1)).len();
    let levels: Vec<Vec<String>> = (0..spec.q)
        .map(|_| (0..spec.levels).map(|c| format!("L{c:0width$}")).collect())
        .collect();
    let m = FeatureMatrix::from_coded(
        (0..n).map(|i| format!("P{i:06}")).collect(),
        (0..spec.p).map(|j| format!("x{j}")).collect(),
        (0..spec.q).map(|j| format!("g{j}")).collect(),
        numeric,
        categorical,
        levels,
    )?;
    Ok((m, labels))
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} vs {} labels",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both labelings trivial (all-in-one or all-singletons)
        return Ok(if sa == sb { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
