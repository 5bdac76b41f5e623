//! Token-budget allocation across code, text and math, deterministic
//! selection to fill it, and multi-epoch repetition plans.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocumentRecord, Modality, QualityBucket};
use crate::hashing::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("{modality} pool holds {available} tokens, {shortfall} short of its {target} target")]
    InsufficientPool {
        modality: Modality,
        target: u64,
        available: u64,
        shortfall: u64,
    },
    #[error("invalid mix configuration: {0}")]
    ConfigError(String),
}

/// Modalities that take part in the pre-training mix, in ratio order.
pub const MIX_MODALITIES: [Modality; 3] = [Modality::Code, Modality::Text, Modality::Math];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixRatio {
    pub code: f64,
    pub text: f64,
    pub math: f64,
}

impl MixRatio {
    pub fn new(code: f64, text: f64, math: f64) -> Result<Self, MixError> {
        let r = Self { code, text, math };
        let ws = [code, text, math];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(MixError::ConfigError(format!("bad mix ratio {code}:{text}:{math}")));
        }
        Ok(r)
    }

    pub fn weight(&self, m: Modality) -> f64 {
        match m {
            Modality::Code => self.code,
            Modality::Text => self.text,
            Modality::Math => self.math,
            Modality::Instruction => 0.0,
        }
    }

    /// Weights normalized to sum to 1.
    pub fn fraction(&self, m: Modality) -> f64 {
        self.weight(m) / (self.code + self.text + self.math)
    }

    /// Integer token targets summing exactly to `budget` (largest remainder).
    pub fn targets(&self, budget: u64) -> BTreeMap<Modality, u64> {
        let raw: Vec<(Modality, f64)> = MIX_MODALITIES.iter().map(|&m| (m, budget as f64 * self.fraction(m))).collect();
        let mut targets: BTreeMap<Modality, u64> = raw.iter().map(|&(m, x)| (m, x.floor() as u64)).collect();
        let assigned: u64 = targets.values().sum();
        let mut order: Vec<(usize, Modality, f64)> =
            raw.iter().enumerate().map(|(i, &(m, x))| (i, m, x - x.floor())).collect();
        order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut left = budget.saturating_sub(assigned);
        for (_, m, _) in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if self.weight(*m) > 0.0 {
                *targets.get_mut(m).expect("all modalities") += 1;
                left -= 1;
            }
        }
        targets
    }
}

impl FromStr for MixRatio {
    type Err = MixError;

    /// `code:text:math`, e.g. `78:12:10`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| MixError::ConfigError(format!("mix.ratio {s:?} is not code:text:math")))?;
        match parts.as_slice() {
            [c, t, m] => MixRatio::new(*c, *t, *m),
            _ => Err(MixError::ConfigError(format!("mix.ratio {s:?} needs three parts"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketWeights {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
}

impl Default for BucketWeights {
    fn default() -> Self {
        Self {
            high: 1.0,
            medium: 1.0,
            low: 1.0,
        }
    }
}

impl BucketWeights {
    /// Unbucketed records weigh as Medium.
    pub fn weight(&self, b: Option<QualityBucket>) -> f64 {
        match b {
            Some(QualityBucket::High) => self.high,
            Some(QualityBucket::Low) => self.low,
            _ => self.medium,
        }
    }

    fn is_uniform(&self) -> bool {
        self.high == self.medium && self.medium == self.low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixParams {
    /// `code:text:math`.
    pub ratio: String,
    /// Defaults to the largest budget every pool can cover.
    pub budget_tokens: Option<u64>,
    pub epochs: usize,
    pub seed: u64,
    pub bucket_weights: BucketWeights,
    pub include_instruction: bool,
}

impl Default for MixParams {
    fn default() -> Self {
        Self {
            ratio: "78:12:10".into(),
            budget_tokens: None,
            epochs: 3,
            seed: 42,
            bucket_weights: BucketWeights::default(),
            include_instruction: false,
        }
    }
}

impl MixParams {
    pub fn validate(&self) -> Result<MixRatio, MixError> {
        if self.epochs == 0 {
            return Err(MixError::ConfigError("mix.epochs must be >= 1".into()));
        }
        let w = self.bucket_weights;
        if [w.high, w.medium, w.low].iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(MixError::ConfigError("mix.bucket_weights must be positive".into()));
        }
        self.ratio.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub id: String,
    pub tokens: u64,
    pub bucket: Option<QualityBucket>,
}

impl From<&DocumentRecord> for PoolItem {
    fn from(r: &DocumentRecord) -> Self {
        Self {
            id: r.id.clone(),
            tokens: r.est_tokens,
            bucket: r.quality_bucket,
        }
    }
}

pub type Pools = BTreeMap<Modality, Vec<PoolItem>>;

/// Groups records by modality. Instruction records are skipped unless asked
/// for, in which case they are mixed in as code.
pub fn pools_from_records(records: &[DocumentRecord], include_instruction: bool) -> Pools {
    let mut pools: Pools = MIX_MODALITIES.iter().map(|&m| (m, Vec::new())).collect();
    for r in records {
        let m = match r.modality {
            Modality::Instruction if include_instruction => Modality::Code,
            Modality::Instruction => continue,
            m => m,
        };
        pools.get_mut(&m).expect("mix modality").push(PoolItem::from(r));
    }
    pools
}

/// Largest budget whose targets every pool can cover.
pub fn max_budget(pools: &Pools, ratio: &MixRatio) -> u64 {
    let mut best = u64::MAX;
    for m in MIX_MODALITIES {
        let f = ratio.fraction(m);
        if f > 0.0 {
            let avail: u64 = pools.get(&m).map_or(0, |p| p.iter().map(|i| i.tokens).sum());
            best = best.min((avail as f64 / f).floor() as u64);
        }
    }
    let mut budget = if best == u64::MAX { 0 } else { best };
    // Rounding in `targets` may push one modality a token over its pool.
    while budget > 0 && check_pools(pools, &ratio.targets(budget)).is_err() {
        budget -= 1;
    }
    budget
}

fn check_pools(pools: &Pools, targets: &BTreeMap<Modality, u64>) -> Result<(), MixError> {
    for (&m, &target) in targets {
        let available: u64 = pools.get(&m).map_or(0, |p| p.iter().map(|i| i.tokens).sum());
        if available < target {
            return Err(MixError::InsufficientPool {
                modality: m,
                target,
                available,
                shortfall: target - available,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixPlan {
    pub budget_tokens: u64,
    pub targets: BTreeMap<Modality, u64>,
    /// Selected items per modality, in selection order.
    pub selected: BTreeMap<Modality, Vec<PoolItem>>,
}

impl MixPlan {
    pub fn selected_tokens(&self, m: Modality) -> u64 {
        self.selected.get(&m).map_or(0, |v| v.iter().map(|i| i.tokens).sum())
    }

    pub fn total_tokens(&self) -> u64 {
        MIX_MODALITIES.iter().map(|&m| self.selected_tokens(m)).sum()
    }

    pub fn total_records(&self) -> usize {
        self.selected.values().map(Vec::len).sum()
    }

    /// Realized token share of a modality.
    pub fn share(&self, m: Modality) -> f64 {
        let total = self.total_tokens();
        if total == 0 {
            0.0
        } else {
            self.selected_tokens(m) as f64 / total as f64
        }
    }

    pub fn selected_ids(&self, m: Modality) -> Vec<&str> {
        self.selected.get(&m).map_or_else(Vec::new, |v| v.iter().map(|i| i.id.as_str()).collect())
    }

    pub fn report(&self, ratio: &MixRatio) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "budget_tokens {}", self.budget_tokens);
        let _ = writeln!(out, "selected_tokens {}", self.total_tokens());
        let _ = writeln!(out, "{:<8} {:>12} {:>12} {:>9} {:>9} {:>9}", "modality", "target", "selected", "records", "share", "ratio");
        for m in MIX_MODALITIES {
            let _ = writeln!(
                out,
                "{:<8} {:>12} {:>12} {:>9} {:>8.2}% {:>8.2}%",
                m.as_str(),
                self.targets.get(&m).copied().unwrap_or(0),
                self.selected_tokens(m),
                self.selected.get(&m).map_or(0, Vec::len),
                100.0 * self.share(m),
                100.0 * ratio.fraction(m),
            );
        }
        out
    }
}

/// Seeded order over a pool: a uniform shuffle, or weighted sampling without
/// replacement (keys `u^(1/w)`, largest first) when bucket weights differ.
fn pool_order(items: &[PoolItem], weights: &BucketWeights, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    if weights.is_uniform() {
        idx.shuffle(rng);
        return idx;
    }
    let keys: Vec<f64> = items
        .iter()
        .map(|it| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            u.powf(1.0 / weights.weight(it.bucket))
        })
        .collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx
}

pub fn plan_mix(pools: &Pools, ratio: &MixRatio, budget: u64, seed: u64) -> Result<MixPlan, MixError> {
    plan_mix_weighted(pools, ratio, budget, seed, &BucketWeights::default())
}

/// Greedy fill per modality over a seeded order, stopping at the first record
/// that reaches the target (that record is kept).
pub fn plan_mix_weighted(
    pools: &Pools,
    ratio: &MixRatio,
    budget: u64,
    seed: u64,
    weights: &BucketWeights,
) -> Result<MixPlan, MixError> {
    let targets = ratio.targets(budget);
    check_pools(pools, &targets)?;
    let mut selected = BTreeMap::new();
    for (&m, &target) in &targets {
        let items = pools.get(&m).map_or(&[][..], Vec::as_slice);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mix-pool", m.as_str()));
        let mut chosen = Vec::new();
        let mut acc = 0u64;
        for i in pool_order(items, weights, &mut rng) {
            if acc >= target {
                break;
            }
            acc += items[i].tokens;
            chosen.push(items[i].clone());
        }
        selected.insert(m, chosen);
    }
    Ok(MixPlan {
        budget_tokens: budget,
        targets,
        selected,
    })
}

/// Seeded global shuffle of every selected id.
pub fn interleave(plan: &MixPlan, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = MIX_MODALITIES
        .iter()
        .flat_map(|m| plan.selected_ids(*m))
        .map(String::from)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mix-interleave", ""));
    ids.shuffle(&mut rng);
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochPlan {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub orders: Vec<Vec<String>>,
    pub tokens_per_epoch: u64,
}

impl EpochPlan {
    pub fn total_tokens(&self) -> u64 {
        self.tokens_per_epoch * self.epochs as u64
    }
}

/// Epoch 0 uses `seed` itself, so a one-epoch plan equals [`interleave`].
pub fn plan_epochs(plan: &MixPlan, epochs: usize, seed: u64) -> Result<EpochPlan, MixError> {
    if epochs == 0 {
        return Err(MixError::ConfigError("mix.epochs must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..epochs)
        .map(|k| if k == 0 { seed } else { derive_seed(seed, "mix-epoch", &k.to_string()) })
        .collect();
    let orders = seeds.iter().map(|&s| interleave(plan, s)).collect();
    Ok(EpochPlan {
        epochs,
        seeds,
        orders,
        tokens_per_epoch: plan.total_tokens(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(prefix: &str, n: usize, tokens: u64) -> Vec<PoolItem> {
        (0..n)
            .map(|i| PoolItem {
                id: format!("{prefix}{i:05}"),
                tokens,
                bucket: None,
            })
            .collect()
    }

    fn ratio() -> MixRatio {
        "78:12:10".parse().unwrap()
    }

    #[test]
    fn paper_ratio_targets() {
        let t = ratio().targets(10_000_000);
        assert_eq!(t[&Modality::Code], 7_800_000);
        assert_eq!(t[&Modality::Text], 1_200_000);
        assert_eq!(t[&Modality::Math], 1_000_000);
        let odd = ratio().targets(7);
        assert_eq!(odd.values().sum::<u64>(), 7);
    }

    #[test]
    fn ratio_parsing() {
        assert!("78:12".parse::<MixRatio>().is_err());
        assert!("0:0:0".parse::<MixRatio>().is_err());
        assert!("a:b:c".parse::<MixRatio>().is_err());
        assert!("-1:2:3".parse::<MixRatio>().is_err());
        assert_eq!("1:1:2".parse::<MixRatio>().unwrap().fraction(Modality::Math), 0.5);
    }

    #[test]
    fn degenerate_ratio_all_code() {
        let r: MixRatio = "1:0:0".parse().unwrap();
        let t = r.targets(1000);
        assert_eq!(t[&Modality::Code], 1000);
        assert_eq!(t[&Modality::Text] + t[&Modality::Math], 0);
        let pools: Pools = BTreeMap::from([(Modality::Code, pool("c", 20, 100))]);
        let plan = plan_mix(&pools, &r, 1000, 1).unwrap();
        assert_eq!(plan.selected_tokens(Modality::Code), 1000);
        assert_eq!(plan.share(Modality::Code), 1.0);
    }

    #[test]
    fn first_overshoot_is_kept() {
        let r: MixRatio = "1:0:0".parse().unwrap();
        let pools: Pools = BTreeMap::from([(Modality::Code, pool("c", 50, 100))]);
        let plan = plan_mix(&pools, &r, 1050, 3).unwrap();
        assert_eq!(plan.selected[&Modality::Code].len(), 11);
    }

    #[test]
    fn insufficient_pool_names_modality() {
        let pools: Pools = BTreeMap::from([
            (Modality::Code, pool("c", 100, 100)),
            (Modality::Text, pool("t", 1, 100)),
            (Modality::Math, pool("m", 100, 100)),
        ]);
        let err = plan_mix(&pools, &ratio(), 10_000, 0).unwrap_err();
        assert_eq!(
            err,
            MixError::InsufficientPool {
                modality: Modality::Text,
                target: 1200,
                available: 100,
                shortfall: 1100
            }
        );
    }

    #[test]
    fn interleave_and_epochs() {
        let pools: Pools = BTreeMap::from([
            (Modality::Code, pool("c", 1000, 10)),
            (Modality::Text, pool("t", 200, 10)),
            (Modality::Math, pool("m", 200, 10)),
        ]);
        let plan = plan_mix(&pools, &ratio(), 10_000, 5).unwrap();
        let a = interleave(&plan, 9);
        assert_eq!(a, interleave(&plan, 9));
        assert_eq!(a.len(), plan.total_records());

        let ep = plan_epochs(&plan, 1, 9).unwrap();
        assert_eq!(ep.orders[0], a);
        let ep = plan_epochs(&plan, 3, 9).unwrap();
        assert_eq!(ep.total_tokens(), 3 * plan.total_tokens());
        let mut s0 = ep.orders[0].clone();
        let mut s1 = ep.orders[1].clone();
        assert_ne!(s0, s1);
        s0.sort();
        s1.sort();
        assert_eq!(s0, s1);
        assert!(plan_epochs(&plan, 0, 9).is_err());
    }

    #[test]
    fn high_bucket_weight_prefers_high_records() {
        let mut items = pool("c", 1000, 10);
        for (i, it) in items.iter_mut().enumerate() {
            it.bucket = Some(if i % 2 == 0 { QualityBucket::High } else { QualityBucket::Low });
        }
        let pools: Pools = BTreeMap::from([(Modality::Code, items)]);
        let r: MixRatio = "1:0:0".parse().unwrap();
        let w = BucketWeights {
            high: 4.0,
            medium: 1.0,
            low: 1.0,
        };
        let plan = plan_mix_weighted(&pools, &r, 1000, 1, &w).unwrap();
        let highs = plan.selected[&Modality::Code]
            .iter()
            .filter(|i| i.bucket == Some(QualityBucket::High))
            .count();
        assert!(highs > 70, "{highs}");
    }

    #[test]
    fn max_budget_fits_pools() {
        let pools: Pools = BTreeMap::from([
            (Modality::Code, pool("c", 100, 100)),
            (Modality::Text, pool("t", 100, 100)),
            (Modality::Math, pool("m", 100, 100)),
        ]);
        let b = max_budget(&pools, &ratio());
        assert!(plan_mix(&pools, &ratio(), b, 0).is_ok());
        assert!(plan_mix(&pools, &ratio(), b + 2, 0).is_err());
    }

    #[test]
    fn instruction_records_excluded_by_default() {
        let recs = vec![
            DocumentRecord::new("i", Modality::Instruction, "x"),
            DocumentRecord::new("c", Modality::Code, "x"),
        ];
        let pools = pools_from_records(&recs, false);
        assert_eq!(pools[&Modality::Code].len(), 1);
        let pools = pools_from_records(&recs, true);
        assert_eq!(pools[&Modality::Code].len(), 2);
    }
}
