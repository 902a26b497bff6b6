use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_field, unknown_key, KvConfig};
use crate::error::{Error, Result};
use crate::gauge::compute_interior_point;
use crate::problem::{AgentInput, ProblemInstance};

const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct DataGenConfig {
    pub n_agents_max: usize,
    /// Range (kW) for base capabilities and base demands.
    pub cap_range: (f64, f64),
    /// Relative per-sample fluctuation around the base values.
    pub fluctuation: f64,
    pub n_samples: usize,
    pub n_test: usize,
    pub subset_min: usize,
    pub p_omax: f64,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            n_agents_max: 20,
            cap_range: (10.0, 25.0),
            fluctuation: 0.10,
            n_samples: 400,
            n_test: 100,
            subset_min: 5,
            p_omax: 100.0,
            seed: 2024,
        }
    }
}

impl KvConfig for DataGenConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_agents_max" => self.n_agents_max = parse_field(key, value)?,
            "cap_range" => {
                let (lo, hi) = value
                    .split_once(',')
                    .ok_or_else(|| Error::config(key, "expected `low, high`"))?;
                self.cap_range = (parse_field(key, lo.trim())?, parse_field(key, hi.trim())?);
            }
            "fluctuation" => self.fluctuation = parse_field(key, value)?,
            "n_samples" => self.n_samples = parse_field(key, value)?,
            "n_test" => self.n_test = parse_field(key, value)?,
            "subset_min" => self.subset_min = parse_field(key, value)?,
            "p_omax" => self.p_omax = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn render(&self) -> String {
        format!(
            "n_agents_max = {}\ncap_range = {}, {}\nfluctuation = {}\nn_samples = {}\nn_test = {}\nsubset_min = {}\np_omax = {}\nseed = {}\n",
            self.n_agents_max,
            self.cap_range.0,
            self.cap_range.1,
            self.fluctuation,
            self.n_samples,
            self.n_test,
            self.subset_min,
            self.p_omax,
            self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents_max == 0 {
            return Err(Error::config("n_agents_max", "must be >= 1"));
        }
        if self.subset_min < 1 || self.subset_min > self.n_agents_max {
            return Err(Error::config(
                "subset_min",
                format!("must lie in 1..={}", self.n_agents_max),
            ));
        }
        let (lo, hi) = self.cap_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::config("cap_range", "need 0 < low < high"));
        }
        if !(0.0..1.0).contains(&self.fluctuation) {
            return Err(Error::config("fluctuation", "must lie in [0, 1)"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        if self.n_test > self.n_samples {
            return Err(Error::config("n_test", "cannot exceed n_samples"));
        }
        if !(self.p_omax > 0.0 && self.p_omax.is_finite()) {
            return Err(Error::config("p_omax", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<ProblemInstance>,
    /// Draws discarded because they had no strictly feasible interior.
    pub rejections: usize,
}

impl Dataset {
    /// Leading samples for training, trailing `n_test` for evaluation.
    pub fn split(&self, n_test: usize) -> (&[ProblemInstance], &[ProblemInstance]) {
        let cut = self.instances.len().saturating_sub(n_test);
        self.instances.split_at(cut)
    }
}

/// Samples around one fixed fleet of base agents.
///
/// Base capability and demand of every agent are drawn once. Each sample scales
/// them by independent factors in `1 ± fluctuation`, then keeps a uniformly
/// random subset of agents whose size is uniform in `subset_min..=n_agents_max`.
/// Draws without a strictly feasible interior are rejected and redrawn.
pub fn generate_dataset(cfg: &DataGenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.cap_range;
    let base: Vec<(f64, f64)> = (0..cfg.n_agents_max)
        .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
        .collect();
    let f = cfg.fluctuation;
    let factor = |rng: &mut ChaCha8Rng| {
        if f == 0.0 {
            1.0
        } else {
            rng.random_range(1.0 - f..=1.0 + f)
        }
    };

    let mut instances = Vec::with_capacity(cfg.n_samples);
    let mut rejections = 0;
    for sample in 0..cfg.n_samples {
        let mut retries = 0;
        let instance = loop {
            let scaled: Vec<AgentInput> = base
                .iter()
                .map(|&(c, d)| AgentInput {
                    p_cap: c * factor(&mut rng),
                    p_dem: d * factor(&mut rng),
                })
                .collect();
            let size = rng.random_range(cfg.subset_min..=cfg.n_agents_max);
            let mut chosen = index::sample(&mut rng, cfg.n_agents_max, size).into_vec();
            chosen.sort_unstable();
            let candidate = ProblemInstance::new(chosen.iter().map(|&i| scaled[i]).collect(), cfg.p_omax)?;
            if compute_interior_point(&candidate).is_ok() {
                break candidate;
            }
            retries += 1;
            rejections += 1;
            log::debug!("sample {sample}: rejected draw without interior (retry {retries})");
            if retries >= MAX_RETRIES {
                return Err(Error::RejectionBudget {
                    sample,
                    retries,
                });
            }
        };
        instances.push(instance);
    }
    if rejections > 0 {
        log::info!("rejected {rejections} draws without a strictly feasible interior");
    }
    Ok(Dataset {
        instances,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(seed: u64) -> DataGenConfig {
        DataGenConfig {
            n_samples: 60,
            n_test: 10,
            seed,
            ..DataGenConfig::default()
        }
    }

    #[test]
    fn default_shape_and_bounds() {
        let ds = generate_dataset(&DataGenConfig::default()).unwrap();
        assert_eq!(ds.instances.len(), 400);
        for x in &ds.instances {
            assert!((5..=20).contains(&x.len()));
            assert!(x.is_feasible());
            assert_eq!(x.p_omax, 100.0);
            for a in &x.agents {
                assert!((9.0..=27.5).contains(&a.p_cap), "{}", a.p_cap);
                assert!((9.0..=27.5).contains(&a.p_dem));
            }
        }
        let (train, test) = ds.split(100);
        assert_eq!((train.len(), test.len()), (300, 100));
    }

    #[test]
    fn no_fluctuation_full_subset_gives_identical_samples() {
        let cfg = DataGenConfig {
            fluctuation: 0.0,
            subset_min: 20,
            ..small(5)
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.instances.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seed_determines_dataset() {
        assert_eq!(generate_dataset(&small(1)).unwrap(), generate_dataset(&small(1)).unwrap());
        assert_ne!(generate_dataset(&small(1)).unwrap(), generate_dataset(&small(2)).unwrap());
    }

    #[test]
    fn config_validation_names_fields() {
        let err = parse_config::<DataGenConfig>("subset_min = 21").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "subset_min"));
        let err = parse_config::<DataGenConfig>("cap_range = 25, 10").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "cap_range"));
        let err = parse_config::<DataGenConfig>("fluctuation = 1.0").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "fluctuation"));
    }

    #[test]
    fn render_round_trips() {
        let cfg = DataGenConfig {
            cap_range: (8.5, 30.0),
            seed: 99,
            ..DataGenConfig::default()
        };
        let back: DataGenConfig = parse_config(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn impossible_demand_exhausts_retries() {
        // Demand matches capability and the net-output cap is negligible, so no
        // draw has an interior scale factor below 1 − ε.
        let bad = DataGenConfig {
            p_omax: 1e-9,
            cap_range: (1.0, 1.0 + 1e-12),
            fluctuation: 0.0,
            subset_min: 20,
            ..small(0)
        };
        assert!(matches!(generate_dataset(&bad), Err(Error::RejectionBudget { .. })));
    }
}
