//! Layered run settings: built-in defaults, then the config file (`[params]`,
//! `[run]`, then the section named after the subcommand), then flags.
//!
//! A config file is TOML with one nesting level:
//!
//! ```toml
//! [params]
//! alpha = 0.8
//! lambda0 = -0.5
//!
//! [run]
//! seed = 7
//!
//! [consistency]
//! n_list = [1000, 10000, 100000, 1000000]
//! replicates = 10
//! ```
//!
//! A `manifest.json` written by an earlier run is accepted in place of a
//! config file and reproduces that run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::CloneMode;
use crate::model::ModelParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<CloneMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_at_crossing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_range: Option<[f64; 2]>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        Settings { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Settings {
    /// Fields set in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        overlay!(self, top;
            n, alpha, beta, lambda0, lambda1, r0, d0, d1, k, nu,
            seed, t_max, out, mode, max_points, stop_at_crossing, input,
            n_list, replicates, workers, bins,
            lambda0_range, lambda1_range, alpha_range, beta_range, k_range,
        )
    }

    /// Reference parameters with every set field applied. `lambda0` moves
    /// `r0` to `d0 + lambda0`; giving both `r0` and a different `lambda0` is
    /// an error.
    pub fn params(&self, default_n: u64) -> Result<ModelParams> {
        let mut p = ModelParams::reference(self.n.unwrap_or(default_n));
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.d0, self.d0);
        set(&mut p.r0, self.r0);
        set(&mut p.d1, self.d1);
        set(&mut p.lambda1, self.lambda1);
        set(&mut p.k, self.k);
        set(&mut p.nu, self.nu);
        if let Some(lambda0) = self.lambda0 {
            if self.r0.is_some() && p.lambda0() != lambda0 {
                return Err(Error::Config(format!(
                    "r0 - d0 = {} contradicts lambda0 = {lambda0}",
                    p.lambda0()
                )));
            }
            p = p.with_lambda0(lambda0);
        }
        Ok(p)
    }

    /// Settings that reproduce `p` exactly (rates as `r0`, `d0`).
    pub fn from_params(p: &ModelParams) -> Settings {
        Settings {
            n: Some(p.n),
            alpha: Some(p.alpha),
            beta: Some(p.beta),
            r0: Some(p.r0),
            d0: Some(p.d0),
            d1: Some(p.d1),
            lambda1: Some(p.lambda1),
            k: Some(p.k),
            nu: Some(p.nu),
            ..Settings::default()
        }
    }
}

/// Written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub build_id: String,
    /// The seed was drawn from system entropy rather than given.
    pub seed_from_entropy: bool,
    /// Fully resolved settings; feeding the manifest back as `--config`
    /// reproduces the run.
    pub config: Settings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// SHA-256 of each output file.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    params: Settings,
    #[serde(default)]
    run: Settings,
    #[serde(default)]
    simulate: Settings,
    #[serde(default)]
    ode: Settings,
    #[serde(default)]
    estimate: Settings,
    #[serde(default)]
    convergence: Settings,
    #[serde(default)]
    consistency: Settings,
    #[serde(default)]
    robustness: Settings,
}

impl ConfigFile {
    fn for_command(self, command: &str) -> Settings {
        let section = match command {
            "simulate" => self.simulate,
            "ode" => self.ode,
            "estimate" => self.estimate,
            "convergence" => self.convergence,
            "consistency" => self.consistency,
            "robustness" => self.robustness,
            _ => Settings::default(),
        };
        self.params.overlay(self.run).overlay(section)
    }
}

/// Settings from a TOML config or a JSON manifest, for `command`.
pub fn parse_config(text: &str, command: &str) -> Result<Settings> {
    if text.trim_start().starts_with('{') {
        let manifest: Manifest = serde_json::from_str(text)?;
        if manifest.command != command {
            return Err(Error::Config(format!(
                "manifest was written by `{}`, not `{command}`",
                manifest.command
            )));
        }
        return Ok(manifest.config);
    }
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(file.for_command(command))
}

pub fn load_config(path: &Path, command: &str) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, command).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        Error::Json(err) => Error::Config(format!("{}: {err}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_layer_in_order() {
        let text = r#"
            [params]
            alpha = 0.7
            k = 4.0

            [run]
            seed = 3
            replicates = 5

            [consistency]
            replicates = 12
            n_list = [1000, 10000]
        "#;
        let s = parse_config(text, "consistency").unwrap();
        assert_eq!(s.alpha, Some(0.7));
        assert_eq!(s.seed, Some(3));
        assert_eq!(s.replicates, Some(12));
        assert_eq!(s.n_list, Some(vec![1000, 10000]));
        let other = parse_config(text, "simulate").unwrap();
        assert_eq!(other.replicates, Some(5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[params]\nalpah = 0.7\n", "simulate").is_err());
        assert!(parse_config("[bogus]\nn = 1\n", "simulate").is_err());
    }

    #[test]
    fn lambda0_sets_r0() {
        let s = Settings {
            lambda0: Some(-0.3),
            ..Settings::default()
        };
        let p = s.params(1000).unwrap();
        assert!((p.lambda0() + 0.3).abs() < 1e-15);
        assert_eq!(p.d0, ModelParams::DEFAULT_D0);
        let clash = Settings {
            r0: Some(0.9),
            lambda0: Some(-0.5),
            ..Settings::default()
        };
        assert!(clash.params(1000).is_err());
    }

    #[test]
    fn params_round_trip_through_settings() {
        let p = ModelParams::reference(12345).with_lambda0(-0.37);
        assert_eq!(Settings::from_params(&p).params(1).unwrap(), p);
    }

    #[test]
    fn manifest_is_a_config() {
        let manifest = Manifest {
            command: "simulate".into(),
            build_id: "x".into(),
            seed_from_entropy: true,
            config: Settings {
                seed: Some(99),
                ..Settings::default()
            },
            config_hash: None,
            outputs: BTreeMap::new(),
        };
        let text = serde_json::to_string(&manifest).unwrap();
        assert_eq!(parse_config(&text, "simulate").unwrap().seed, Some(99));
        assert!(parse_config(&text, "ode").is_err());
    }
}
