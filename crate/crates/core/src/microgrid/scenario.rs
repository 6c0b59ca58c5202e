use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Battery, Generator, Microgrid, MicrogridError, MicrogridScenario};

/// How units are spread over microgrids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnitMix {
    /// `total` units; the first one per microgrid is placed in order, the rest
    /// uniformly at random. Each unit is a battery with `battery_probability`.
    Random { total: usize, battery_probability: f64 },
    /// Explicit generator and battery counts per microgrid.
    Counts {
        generators: Vec<usize>,
        batteries: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub clusters: usize,
    pub horizon: usize,
    pub units: UnitMix,
    /// Demand per slot is uniform on this range.
    pub demand: [f64; 2],
    pub zeta: f64,
    pub varrho: f64,
    pub smoothing_eps: f64,
    pub pg_max: f64,
    /// Terminal charge tolerance of every battery.
    pub terminal_eps: f64,
    /// Generators are drawn uniformly from this table; defaults to
    /// [`default_generator_table`].
    pub generators: Option<Vec<Generator>>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            clusters: 3,
            horizon: 8,
            units: UnitMix::Random {
                total: 10,
                battery_probability: 0.3,
            },
            demand: [500.0, 2000.0],
            zeta: 0.01,
            varrho: 0.8,
            smoothing_eps: 1e-3,
            pg_max: 1e4,
            terminal_eps: 1.0,
            generators: None,
        }
    }
}

/// Thermal units with quadratic costs from a 30-bus test system.
pub fn default_generator_table() -> Vec<Generator> {
    [
        (0.02, 2.0, 80.0),
        (0.0175, 1.75, 80.0),
        (0.0625, 1.0, 50.0),
        (0.00834, 3.25, 55.0),
        (0.025, 3.0, 30.0),
        (0.025, 3.0, 40.0),
    ]
    .into_iter()
    .map(|(a, b, pr_max)| Generator {
        a,
        b,
        c: 0.0,
        pr_min: 0.0,
        pr_max,
    })
    .collect()
}

fn sample_battery(rng: &mut ChaCha8Rng, terminal_eps: f64) -> Battery {
    let capacity = rng.random_range(50.0..=200.0);
    let rate = rng.random_range(0.8..=1.0) * capacity;
    Battery {
        a: rng.random_range(0.1..=5.0),
        b: rng.random_range(5.0..=50.0),
        c: rng.random_range(-50.0..=50.0),
        pb_min: -rate,
        pb_max: rate,
        pc_max: capacity,
        eta: rng.random_range(0.95..=0.99),
        pc_init: rng.random_range(0.2..=0.5) * capacity,
        pc_des: rng.random_range(0.2..=0.5) * capacity,
        eps: terminal_eps,
    }
}

impl ScenarioParams {
    fn validate(&self) -> Result<(), MicrogridError> {
        let bad = |m: &str| Err(MicrogridError::InvalidParams(m.to_string()));
        if self.clusters == 0 || self.horizon == 0 {
            return bad("clusters and horizon must be positive");
        }
        if !(0.0 <= self.demand[0] && self.demand[0] <= self.demand[1]) {
            return bad("demand range must be nonnegative and ordered");
        }
        if !(self.terminal_eps > 0.0) {
            return bad("terminal_eps must be positive");
        }
        if self.generators.as_ref().is_some_and(Vec::is_empty) {
            return bad("generator table is empty");
        }
        match &self.units {
            UnitMix::Random {
                total,
                battery_probability,
            } => {
                if *total < self.clusters {
                    return bad("need at least one unit per microgrid");
                }
                if !(0.0..=1.0).contains(battery_probability) {
                    return bad("battery_probability must lie in [0, 1]");
                }
            }
            UnitMix::Counts {
                generators,
                batteries,
            } => {
                if generators.len() != self.clusters || batteries.len() != self.clusters {
                    return bad("unit counts must list every microgrid");
                }
                if generators.iter().zip(batteries).any(|(g, b)| g + b == 0) {
                    return bad("every microgrid needs a unit");
                }
            }
        }
        Ok(())
    }
}

/// Deterministic scenario for `seed`. Battery coefficients, capacities,
/// leakage, rates and charges follow the documented ranges.
pub fn generate_scenario(
    params: &ScenarioParams,
    seed: u64,
) -> Result<MicrogridScenario, MicrogridError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = params
        .generators
        .clone()
        .unwrap_or_else(default_generator_table);
    let mut microgrids: Vec<Microgrid> = (0..params.clusters)
        .map(|_| Microgrid {
            generators: Vec::new(),
            batteries: Vec::new(),
            demand: Vec::new(),
            pg_max: params.pg_max,
        })
        .collect();
    let add_generator = |mg: &mut Microgrid, rng: &mut ChaCha8Rng| {
        mg.generators
            .push(table[rng.random_range(0..table.len())].clone());
    };
    match &params.units {
        UnitMix::Random {
            total,
            battery_probability,
        } => {
            for u in 0..*total {
                let h = if u < params.clusters {
                    u
                } else {
                    rng.random_range(0..params.clusters)
                };
                if rng.random::<f64>() < *battery_probability {
                    let bat = sample_battery(&mut rng, params.terminal_eps);
                    microgrids[h].batteries.push(bat);
                } else {
                    add_generator(&mut microgrids[h], &mut rng);
                }
            }
        }
        UnitMix::Counts {
            generators,
            batteries,
        } => {
            for (h, mg) in microgrids.iter_mut().enumerate() {
                for _ in 0..generators[h] {
                    add_generator(mg, &mut rng);
                }
                for _ in 0..batteries[h] {
                    mg.batteries
                        .push(sample_battery(&mut rng, params.terminal_eps));
                }
            }
        }
    }
    let [lo, hi] = params.demand;
    for mg in &mut microgrids {
        mg.demand = (0..params.horizon)
            .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
    }
    let scenario = MicrogridScenario {
        horizon: params.horizon,
        zeta: params.zeta,
        varrho: params.varrho,
        smoothing_eps: params.smoothing_eps,
        microgrids,
    };
    scenario
        .validate()
        .map_err(|e| MicrogridError::InvalidParams(e.to_string()))?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let p = ScenarioParams::default();
        assert_eq!(generate_scenario(&p, 42).unwrap(), generate_scenario(&p, 42).unwrap());
        assert_ne!(generate_scenario(&p, 42).unwrap(), generate_scenario(&p, 43).unwrap());
    }

    #[test]
    fn counts_are_respected() {
        let p = ScenarioParams {
            units: UnitMix::Counts {
                generators: vec![2, 2, 2],
                batteries: vec![1, 1, 1],
            },
            ..ScenarioParams::default()
        };
        let s = generate_scenario(&p, 1).unwrap();
        assert_eq!(s.cluster_count(), 3);
        assert_eq!(s.unit_count(), 9);
        assert!(s.microgrids.iter().all(|m| m.generators.len() == 2 && m.batteries.len() == 1));
    }

    #[test]
    fn sampled_values_within_ranges() {
        let p = ScenarioParams {
            units: UnitMix::Random {
                total: 60,
                battery_probability: 0.5,
            },
            ..ScenarioParams::default()
        };
        let table = default_generator_table();
        for seed in 0..5 {
            let s = generate_scenario(&p, seed).unwrap();
            assert_eq!(s.unit_count(), 60);
            for mg in &s.microgrids {
                assert!(mg.unit_count() > 0);
                assert!(mg.demand.iter().all(|d| (500.0..=2000.0).contains(d)));
                assert!(mg.generators.iter().all(|g| table.contains(g)));
                for b in &mg.batteries {
                    assert!((0.1..=5.0).contains(&b.a));
                    assert!((5.0..=50.0).contains(&b.b));
                    assert!((-50.0..=50.0).contains(&b.c));
                    assert!((50.0..=200.0).contains(&b.pc_max));
                    assert!((0.95..=0.99).contains(&b.eta));
                    let rate = b.pb_max / b.pc_max;
                    assert!((0.8..=1.0).contains(&rate) && b.pb_min == -b.pb_max);
                    assert!((0.2..=0.5).contains(&(b.pc_init / b.pc_max)));
                    assert!((0.2..=0.5).contains(&(b.pc_des / b.pc_max)));
                }
            }
        }
    }

    #[test]
    fn bad_params_rejected() {
        let p = ScenarioParams {
            units: UnitMix::Random {
                total: 2,
                battery_probability: 0.5,
            },
            ..ScenarioParams::default()
        };
        assert!(matches!(
            generate_scenario(&p, 0),
            Err(MicrogridError::InvalidParams(_))
        ));
    }
}
