//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and
//! defaults to the full-scale experiment recipe; unknown or repeated keys are
//! rejected by name.
//!
//! | key | meaning |
//! |---|---|
//! | `d`, `k`, `r` | teacher input dim, units, rank |
//! | `depth`, `widths` | student depth `L` and comma-separated linear widths (last = `k`) |
//! | `lr_main`, `lr_fine` | Adam learning rates of the two phases |
//! | `epochs_main`, `epochs_fine` | full-batch epochs of the two phases |
//! | `weight_decay` | `λ` in the main phase |
//! | `decay_mode` | `coupled` or `decoupled` |
//! | `decay_biases` | `true` to decay `b` and `c` as well |
//! | `seed` | master seed for every stream |
//! | `n_train` | training samples |
//! | `train_box_halfwidth`, `ood_box_halfwidth` | sampling boxes |
//! | `n_test`, `n_grad` | test samples and gradient samples |
//! | `eps_rel` | effective-rank threshold |
//! | `phi_random_starts`, `phi_max_iters`, `phi_rel_tol`, `phi_seed` | Φ solver |

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::network::format::fmt_num;
use crate::penalty::PhiOptions;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub phi: PhiOptions,
}

const PHI_KEYS: [&str; 4] = ["phi_random_starts", "phi_max_iters", "phi_rel_tol", "phi_seed"];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.to_string(),
        msg: format!("cannot parse `{value}`"),
    })
}

impl Config {
    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::KEYS.iter().chain(PHI_KEYS.iter()).copied().collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if self.experiment.set(key, value)? {
            return Ok(());
        }
        match key {
            "phi_random_starts" => self.phi.random_starts = parse_value(key, value)?,
            "phi_max_iters" => self.phi.max_iters = parse_value(key, value)?,
            "phi_rel_tol" => self.phi.rel_tol = parse_value(key, value)?,
            "phi_seed" => self.phi.seed = parse_value(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    msg: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    key: key.to_string(),
                    msg: format!("repeated on line {}", idx + 1),
                });
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        let mut out = self.experiment.to_text();
        let phi = [
            self.phi.random_starts.to_string(),
            self.phi.max_iters.to_string(),
            fmt_num(self.phi.rel_tol),
            self.phi.seed.to_string(),
        ];
        for (k, v) in PHI_KEYS.iter().zip(phi) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
