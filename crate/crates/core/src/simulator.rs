//! Genealogical tree of a fragmentation chain, grown down to a screening
//! threshold, and the (optionally noisy) frozen frontier observed there.

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::KahanSum;
use crate::rng::{derive, domain_key, root_key, stream, unit_from_key, Domain};
use crate::DislocationLaw;

/// Default truncation fraction `t_eps = gamma0 * eps` for noisy observations.
pub const DEFAULT_GAMMA0: f64 = 1e-3;

/// Fragments below this size are discarded as dust.
pub const DEFAULT_MACHINE_FLOOR: f64 = 1e-15;

/// Default cap on the number of fragments held at once.
pub const DEFAULT_BUDGET: usize = 20_000_000;

/// Growth limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub budget: usize,
    pub machine_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            budget: DEFAULT_BUDGET,
            machine_floor: DEFAULT_MACHINE_FLOOR,
        }
    }
}

/// Everything needed to regrow a tree: the label-keyed streams make it a
/// pure function of these fields.
#[derive(Clone, Debug)]
pub struct TreeSource {
    pub law: Arc<DislocationLaw>,
    pub alpha: f64,
    pub seed: u64,
    pub with_times: bool,
    pub config: SimConfig,
}

/// One frozen fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub label: Vec<u32>,
    pub size: f64,
    pub noisy_size: f64,
    pub parent_size: f64,
    pub parent_noisy_size: f64,
    pub birth_time: Option<f64>,
    pub lifetime: Option<f64>,
    pub truncated: bool,
}

/// Frozen frontier observed at threshold `epsilon` with noise level `sigma`.
#[derive(Clone, Debug)]
pub struct ObservationSet {
    pub epsilon: f64,
    pub sigma: f64,
    pub gamma0: f64,
    pub alpha: f64,
    pub seed: u64,
    pub noise_seed: Option<u64>,
    pub law: String,
    pub mass_defect: f64,
    pub records: Vec<FragmentRecord>,
    source: Option<TreeSource>,
}

struct Pending {
    key: u64,
    label: Vec<u32>,
    size: f64,
    noisy: f64,
    parent_size: f64,
    parent_noisy: f64,
    birth: f64,
}

/// Noise draw `U_u` in `[-1, 1]` for the node with key `key`.
#[inline]
fn noise_unit(key: u64, noise_seed: u64) -> f64 {
    2.0 * unit_from_key(derive(domain_key(key, Domain::Noise), noise_seed)) - 1.0
}

/// Exponential lifetime with rate `size^alpha`.
#[inline]
fn lifetime(key: u64, size: f64, alpha: f64) -> f64 {
    let u = unit_from_key(domain_key(key, Domain::Lifetime));
    -(-u).ln_1p() / size.powf(alpha)
}

fn grow(
    src: &TreeSource,
    epsilon: f64,
    sigma: f64,
    noise_seed: Option<u64>,
    gamma0: f64,
) -> Result<ObservationSet> {
    let cap = src.config.budget;
    let floor = src.config.machine_floor;
    let cut = gamma0 * epsilon;
    let mut records = Vec::new();
    let mut defect = KahanSum::default();
    let mut fractions = Vec::with_capacity(4);
    let mut stack = vec![Pending {
        key: root_key(src.seed),
        label: Vec::new(),
        size: 1.0,
        noisy: 1.0,
        parent_size: f64::INFINITY,
        parent_noisy: f64::INFINITY,
        birth: 0.0,
    }];
    while let Some(node) = stack.pop() {
        let life = src.with_times.then(|| lifetime(node.key, node.size, src.alpha));
        if node.noisy < epsilon {
            records.push(FragmentRecord {
                truncated: sigma > 0.0 && node.noisy < cut,
                label: node.label,
                size: node.size,
                noisy_size: node.noisy,
                parent_size: node.parent_size,
                parent_noisy_size: node.parent_noisy,
                birth_time: src.with_times.then_some(node.birth),
                lifetime: life,
            });
            if records.len() + stack.len() > cap {
                return Err(Error::BudgetExceeded { cap });
            }
            continue;
        }
        let mut rng = stream(node.key, Domain::Split);
        src.law.split_into(&mut rng, &mut fractions);
        let child_birth = node.birth + life.unwrap_or(0.0);
        let mut assigned = 0.0;
        let last = fractions.len() - 1;
        // push in reverse so records come out in lexicographic label order
        let mut children = Vec::with_capacity(fractions.len());
        for (i, &frac) in fractions.iter().enumerate() {
            let size = if i == last {
                (node.size - assigned).max(0.0)
            } else {
                node.size * frac
            };
            assigned += size;
            if size < floor {
                defect.add(size);
                continue;
            }
            let key = derive(node.key, i as u64);
            let noisy = match noise_seed {
                Some(ns) if sigma > 0.0 => size + sigma * noise_unit(key, ns),
                _ => size,
            };
            let mut label = Vec::with_capacity(node.label.len() + 1);
            label.extend_from_slice(&node.label);
            label.push(i as u32);
            children.push(Pending {
                key,
                label,
                size,
                noisy,
                parent_size: node.size,
                parent_noisy: node.noisy,
                birth: child_birth,
            });
        }
        stack.extend(children.into_iter().rev());
        if records.len() + stack.len() > cap {
            return Err(Error::BudgetExceeded { cap });
        }
    }
    Ok(ObservationSet {
        epsilon,
        sigma,
        gamma0,
        alpha: src.alpha,
        seed: src.seed,
        noise_seed,
        law: src.law.name().to_string(),
        mass_defect: defect.value(),
        records,
        source: Some(src.clone()),
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidThreshold(epsilon));
    }
    Ok(())
}

/// Grow the chain from a unit mass and freeze every fragment on first
/// falling strictly below `epsilon`.
pub fn simulate_tree(
    law: &DislocationLaw,
    epsilon: f64,
    alpha: f64,
    seed: u64,
    with_times: bool,
) -> Result<ObservationSet> {
    simulate_tree_with(SimConfig::default(), law, epsilon, alpha, seed, with_times)
}

pub fn simulate_tree_with(
    config: SimConfig,
    law: &DislocationLaw,
    epsilon: f64,
    alpha: f64,
    seed: u64,
    with_times: bool,
) -> Result<ObservationSet> {
    check_epsilon(epsilon)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let src = TreeSource {
        law: Arc::new(law.clone()),
        alpha,
        seed,
        with_times,
        config,
    };
    grow(&src, epsilon, 0.0, None, DEFAULT_GAMMA0)
}

/// Attach i.i.d. uniform noise to every node of the tree behind `obs` and
/// recompute the frontier on noisy sizes.
pub fn add_noise(obs: &ObservationSet, sigma: f64, noise_seed: u64) -> Result<ObservationSet> {
    add_noise_with_gamma0(obs, sigma, noise_seed, obs.gamma0)
}

pub fn add_noise_with_gamma0(
    obs: &ObservationSet,
    sigma: f64,
    noise_seed: u64,
    gamma0: f64,
) -> Result<ObservationSet> {
    if !(sigma >= 0.0 && sigma < obs.epsilon / 2.0) {
        return Err(Error::NoiseTooLarge {
            sigma,
            epsilon: obs.epsilon,
        });
    }
    if !(gamma0 > 0.0 && gamma0 < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma0 must lie in (0, 1), got {gamma0}")));
    }
    let src = obs
        .source
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("observation set has no tree behind it".into()))?;
    grow(src, obs.epsilon, sigma, Some(noise_seed), gamma0)
}

impl ObservationSet {
    /// Hand-built observation set with no tree behind it.
    pub fn from_records(epsilon: f64, sigma: f64, gamma0: f64, records: Vec<FragmentRecord>) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(ObservationSet {
            epsilon,
            sigma,
            gamma0,
            alpha: 0.0,
            seed: 0,
            noise_seed: None,
            law: "manual".into(),
            mass_defect: 0.0,
            records,
            source: None,
        })
    }

    /// Convenience constructor from exact sizes (parents taken as `epsilon`).
    pub fn from_sizes(epsilon: f64, sizes: &[f64]) -> Result<Self> {
        let records = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| FragmentRecord {
                label: vec![i as u32],
                size: s,
                noisy_size: s,
                parent_size: 1.0,
                parent_noisy_size: 1.0,
                birth_time: None,
                lifetime: None,
                truncated: false,
            })
            .collect();
        ObservationSet::from_records(epsilon, 0.0, DEFAULT_GAMMA0, records)
    }

    pub fn source(&self) -> Option<&TreeSource> {
        self.source.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Compensated sum of true sizes.
    pub fn total_size(&self) -> f64 {
        self.records.iter().map(|r| r.size).sum::<KahanSum>().value()
    }

    /// Write the set as JSON lines: a header object, then one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header = Header {
            epsilon: self.epsilon,
            sigma: self.sigma,
            gamma0: self.gamma0,
            alpha: self.alpha,
            seed: self.seed,
            noise_seed: self.noise_seed,
            law: self.law.clone(),
            mass_defect: self.mass_defect,
            count: self.records.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parse the format written by [`ObservationSet::write_jsonl`]. The
    /// result carries no tree, so it cannot be re-noised.
    pub fn read_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::parse(1, e.to_string()))?;
        check_epsilon(header.epsilon).map_err(|e| Error::parse(1, e.to_string()))?;
        if !(header.sigma >= 0.0) || !(header.gamma0 > 0.0 && header.gamma0 < 1.0) {
            return Err(Error::parse(1, "sigma or gamma0 out of range"));
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: FragmentRecord = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            if !r.size.is_finite() || !r.noisy_size.is_finite() {
                return Err(Error::parse(i + 1, "non-finite size"));
            }
            records.push(r);
        }
        if records.len() != header.count {
            return Err(Error::parse(
                0,
                format!("header announces {} records, found {}", header.count, records.len()),
            ));
        }
        Ok(ObservationSet {
            epsilon: header.epsilon,
            sigma: header.sigma,
            gamma0: header.gamma0,
            alpha: header.alpha,
            seed: header.seed,
            noise_seed: header.noise_seed,
            law: header.law,
            mass_defect: header.mass_defect,
            records,
            source: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    epsilon: f64,
    sigma: f64,
    gamma0: f64,
    alpha: f64,
    seed: u64,
    noise_seed: Option<u64>,
    law: String,
    mass_defect: f64,
    count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{BinaryDislocationLaw, DiscreteDislocationLaw};

    fn uniform() -> DislocationLaw {
        BinaryDislocationLaw::uniform().into()
    }

    #[test]
    fn dyadic_freezes_four_quarters() {
        let obs = simulate_tree(&DiscreteDislocationLaw::dyadic().into(), 0.3, 1.0, 9, false).unwrap();
        assert_eq!(obs.len(), 4);
        assert!(obs.records.iter().all(|r| r.size == 0.25 && r.parent_size == 0.5));
    }

    #[test]
    fn binary_uniform_conserves_and_counts() {
        // the count is 2/eps on average (mean of eps/chi over the overshoot
        // density 2b), not almost surely
        let counts: Vec<f64> = (0..400)
            .map(|seed| {
                let obs = simulate_tree(&uniform(), 1e-2, 1.0, seed, false).unwrap();
                assert!((obs.total_size() - 1.0).abs() < 1e-12);
                obs.len() as f64
            })
            .collect();
        let (m, se) = crate::estimators::mean_se(&counts);
        assert!((m - 200.0).abs() < 4.0 * se, "{m} +- {se}");
    }

    #[test]
    fn ternary_frontier() {
        let obs = simulate_tree(&DiscreteDislocationLaw::ternary_uniform_discrete().into(), 0.5, 0.0, 3, false).unwrap();
        for r in &obs.records {
            assert!(r.parent_size >= 0.5 && r.size < 0.5);
        }
    }

    #[test]
    fn zero_noise_reproduces_tree() {
        let obs = simulate_tree(&uniform(), 1e-2, 1.0, 5, true).unwrap();
        let noisy = add_noise(&obs, 0.0, 77).unwrap();
        assert_eq!(obs.records.len(), noisy.records.len());
        for (a, b) in obs.records.iter().zip(&noisy.records) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.size, b.size);
            assert_eq!(a.noisy_size, b.noisy_size);
        }
    }

    #[test]
    fn dyadic_frontier_survives_small_noise() {
        let obs = simulate_tree(&DiscreteDislocationLaw::dyadic().into(), 0.3, 1.0, 1, false).unwrap();
        let noisy = add_noise(&obs, 0.01, 4).unwrap();
        assert_eq!(noisy.len(), 4);
        for r in &noisy.records {
            assert_eq!(r.size, 0.25);
            assert!((r.noisy_size - 0.25).abs() <= 0.01);
        }
    }

    #[test]
    fn noise_bounds_and_errors() {
        let eps = 1e-2;
        let obs = simulate_tree(&uniform(), eps, 1.0, 5, false).unwrap();
        let sigma = eps * eps * eps;
        let noisy = add_noise(&obs, sigma, 8).unwrap();
        for r in &noisy.records {
            assert!((r.noisy_size - r.size).abs() <= sigma);
            assert!(r.noisy_size < eps && r.parent_noisy_size >= eps);
        }
        assert!(matches!(add_noise(&obs, eps / 2.0, 1), Err(Error::NoiseTooLarge { .. })));
        assert!(matches!(
            simulate_tree(&uniform(), 1.0, 1.0, 1, false),
            Err(Error::InvalidThreshold(_))
        ));
    }

    #[test]
    fn budget_cap_trips() {
        let cfg = SimConfig {
            budget: 100,
            ..Default::default()
        };
        assert_eq!(
            simulate_tree_with(cfg, &uniform(), 1e-4, 0.0, 1, false).unwrap_err(),
            Error::BudgetExceeded { cap: 100 }
        );
    }

    #[test]
    fn times_accumulate_along_lineage() {
        let obs = simulate_tree(&DiscreteDislocationLaw::dyadic().into(), 0.3, 1.0, 2, true).unwrap();
        let births: Vec<f64> = obs.records.iter().map(|r| r.birth_time.unwrap()).collect();
        assert!(births.iter().all(|&b| b > 0.0));
        // siblings share a birth time
        assert_eq!(births[0], births[1]);
        assert_eq!(births[2], births[3]);
        assert!(obs.records.iter().all(|r| r.lifetime.unwrap() > 0.0));
    }

    #[test]
    fn jsonl_round_trip() {
        let obs = simulate_tree(&uniform(), 0.05, 1.0, 11, true).unwrap();
        let noisy = add_noise(&obs, 1e-4, 3).unwrap();
        let mut buf = Vec::new();
        noisy.write_jsonl(&mut buf).unwrap();
        let back = ObservationSet::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.records, noisy.records);
        assert_eq!(back.epsilon, noisy.epsilon);
        assert_eq!(back.noise_seed, Some(3));
        assert!(ObservationSet::read_jsonl("").is_err());
        assert!(ObservationSet::read_jsonl("{\"epsilon\":2}").is_err());
    }
}
