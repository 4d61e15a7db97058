//! Run configuration: a small sectioned key-value format (`[section]`,
//! `key = value`, `#` comments), with JSON accepted as an alternative
//! encoding of the same `section.key` tree.

use crate::energy::{LinearCoefficients, MaterialModel, NonlinearParams, TensorCoefficient};
use crate::geometry::{DomainSpec, Vec3};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// The experiments the batch front door can orchestrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Solve,
    VerifyTransforms,
    Korn,
    Helmholtz,
    Probe,
    FullRegularity,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => Experiment::Solve,
            "verify-transforms" => Experiment::VerifyTransforms,
            "korn" => Experiment::Korn,
            "helmholtz" => Experiment::Helmholtz,
            "probe" => Experiment::Probe,
            "full-regularity" => Experiment::FullRegularity,
            other => {
                return Err(Error::ConfigError(format!(
                    "experiment must be one of solve, verify-transforms, korn, helmholtz, \
                     probe, full-regularity; got \"{other}\""
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::VerifyTransforms => "verify-transforms",
            Experiment::Korn => "korn",
            Experiment::Helmholtz => "helmholtz",
            Experiment::Probe => "probe",
            Experiment::FullRegularity => "full-regularity",
        }
    }
}

/// Analytic load presets.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadPreset {
    Zero,
    /// constant body force, zero moment load
    Uniform(Vec3),
    /// loads derived from the polynomial manufactured solution
    Manufactured,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: DomainSpec,
    /// mesh subdivision of the finest level
    pub level: usize,
    /// number of nested levels for multi-level experiments
    pub levels: usize,
    pub model: MaterialModel,
    pub load: LoadPreset,
    pub cg_tol: f64,
    pub grad_tol: f64,
    pub tol_s: f64,
    pub grid_per_unit: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
}

struct KeyTable {
    entries: BTreeMap<String, String>,
}

impl KeyTable {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn parse_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| {
                Error::ConfigError(format!("{key}: expected a number, got \"{v}\""))
            }),
        }
    }

    fn parse_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| {
                Error::ConfigError(format!("{key}: expected a non-negative integer, got \"{v}\""))
            }),
        }
    }

    fn parse_coefficient(&self, key: &str) -> Result<Option<TensorCoefficient>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(|p| {
                p.parse::<f64>().map_err(|_| {
                    Error::ConfigError(format!("{key}: expected numbers, got \"{v}\""))
                })
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [c0] => Ok(Some(TensorCoefficient::constant(*c0))),
            [c0, gx, gy, gz] => {
                Ok(Some(TensorCoefficient::affine(*c0, Vec3::new(*gx, *gy, *gz))))
            }
            _ => Err(Error::ConfigError(format!(
                "{key}: expected \"c0\" or \"c0 gx gy gz\", got \"{v}\""
            ))),
        }
    }
}

fn parse_key_value(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigError(format!(
                "line {}: expected \"key = value\", got \"{line}\"",
                lineno + 1
            )));
        };
        let full = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        entries.insert(full, value.trim().to_string());
    }
    Ok(entries)
}

fn flatten_json(prefix: &str, value: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, v, out);
            }
        }
        serde_json::Value::Array(items) => {
            let joined: Vec<String> = items.iter().map(json_scalar).collect();
            out.insert(prefix.to_string(), joined.join(" "));
        }
        _ => {
            out.insert(prefix.to_string(), json_scalar(value));
        }
    }
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries = if text.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::ConfigError(format!("invalid JSON config: {e}")))?;
            let mut out = BTreeMap::new();
            flatten_json("", &value, &mut out);
            out
        } else {
            parse_key_value(&text)?
        };
        Self::from_table(KeyTable { entries })
    }

    fn from_table(t: KeyTable) -> Result<Self> {
        let domain = match t.get("mesh.domain").unwrap_or("cube") {
            "cube" => DomainSpec::UnitCube,
            "l-prism" => DomainSpec::LPrism,
            other => {
                return Err(Error::ConfigError(format!(
                    "mesh.domain: expected \"cube\" or \"l-prism\", got \"{other}\""
                )))
            }
        };
        let level = t.parse_usize("mesh.level")?.unwrap_or(2);
        if level == 0 {
            return Err(Error::ConfigError("mesh.level: must be at least 1".into()));
        }
        let levels = t.parse_usize("mesh.levels")?.unwrap_or(3);
        if levels == 0 {
            return Err(Error::ConfigError("mesh.levels: must be at least 1".into()));
        }

        let model = match t.get("model.kind").unwrap_or("linear") {
            "linear" => {
                let defaults = LinearCoefficients::identity();
                MaterialModel::Linear(LinearCoefficients {
                    c_e: t.parse_coefficient("model.c_e")?.unwrap_or(defaults.c_e),
                    c_micro: t.parse_coefficient("model.c_micro")?.unwrap_or(defaults.c_micro),
                    l_c: t.parse_coefficient("model.l_c")?.unwrap_or(defaults.l_c),
                })
            }
            "nonlinear" => {
                let q = t.parse_f64("model.q")?.unwrap_or(1.5);
                let params = match t.parse_f64("model.alpha")? {
                    Some(alpha) => NonlinearParams::new(q, alpha),
                    None => NonlinearParams::canonical(q),
                }?;
                MaterialModel::Nonlinear(params)
            }
            other => {
                return Err(Error::ConfigError(format!(
                    "model.kind: expected \"linear\" or \"nonlinear\", got \"{other}\""
                )))
            }
        };

        let load = match t.get("loads.preset").unwrap_or("zero") {
            "zero" => LoadPreset::Zero,
            "uniform" => {
                let f = t.get("loads.f").unwrap_or("0 0 1");
                let parts: Vec<f64> = f
                    .split_whitespace()
                    .map(|p| {
                        p.parse::<f64>().map_err(|_| {
                            Error::ConfigError(format!(
                                "loads.f: expected three numbers, got \"{f}\""
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                let [fx, fy, fz] = parts.as_slice() else {
                    return Err(Error::ConfigError(format!(
                        "loads.f: expected three numbers, got \"{f}\""
                    )));
                };
                LoadPreset::Uniform(Vec3::new(*fx, *fy, *fz))
            }
            "manufactured" => LoadPreset::Manufactured,
            other => {
                return Err(Error::ConfigError(format!(
                    "loads.preset: expected \"zero\", \"uniform\" or \"manufactured\", \
                     got \"{other}\""
                )))
            }
        };

        let cg_tol = t.parse_f64("tolerances.cg_tol")?.unwrap_or(1e-10);
        let grad_tol = t.parse_f64("tolerances.grad_tol")?.unwrap_or(1e-8);
        let tol_s = t.parse_f64("tolerances.tol_s")?.unwrap_or(0.15);
        for (key, v) in [("tolerances.cg_tol", cg_tol), ("tolerances.grad_tol", grad_tol),
                         ("tolerances.tol_s", tol_s)] {
            if v <= 0.0 {
                return Err(Error::ConfigError(format!("{key}: must be positive, got {v}")));
            }
        }
        let grid_per_unit = t.parse_usize("probe.grid_per_unit")?.unwrap_or(48);
        if grid_per_unit < 8 {
            return Err(Error::ConfigError(format!(
                "probe.grid_per_unit: must be at least 8, got {grid_per_unit}"
            )));
        }
        let seed = t
            .parse_usize("run.seed")?
            .map(|s| s as u64)
            .unwrap_or(42);
        let out_dir = PathBuf::from(t.get("run.out").unwrap_or("out"));

        Ok(RunConfig {
            domain,
            level,
            levels,
            model,
            load,
            cg_tol,
            grad_tol,
            tol_s,
            grid_per_unit,
            seed,
            out_dir,
            threads: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, contents: &str) -> PathBuf {
        let path = std::env::temp_dir().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn key_value_round_trip() {
        let path = write_temp(
            "micromorph_cfg_kv.cfg",
            "# a comment\n[mesh]\ndomain = l-prism\nlevel = 3\n\n[model]\nkind = nonlinear\n\
             q = 1.5\nalpha = 0.6666666666666666\n\n[loads]\npreset = uniform\nf = 0 0 1\n\n\
             [run]\nseed = 7\nout = artifacts\n",
        );
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.domain, DomainSpec::LPrism);
        assert_eq!(cfg.level, 3);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.load, LoadPreset::Uniform(Vec3::new(0.0, 0.0, 1.0)));
        match cfg.model {
            MaterialModel::Nonlinear(p) => assert_eq!(p.q, 1.5),
            _ => panic!("expected nonlinear model"),
        }
    }

    #[test]
    fn json_encoding_is_equivalent() {
        let path = write_temp(
            "micromorph_cfg.json",
            r#"{"mesh": {"domain": "cube", "level": 2},
                "model": {"kind": "linear", "c_e": [2.0, 0.1, 0.0, 0.0]},
                "loads": {"preset": "zero"}, "run": {"seed": 9}}"#,
        );
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        match cfg.model {
            MaterialModel::Linear(c) => {
                assert_eq!(c.c_e.c0, 2.0);
                assert_eq!(c.c_e.grad[0], 0.1);
            }
            _ => panic!("expected linear model"),
        }
    }

    #[test]
    fn invalid_q_names_the_key() {
        let path = write_temp(
            "micromorph_cfg_badq.cfg",
            "[model]\nkind = nonlinear\nq = 2.5\n",
        );
        let err = RunConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('q'), "message should name the key: {msg}");
    }

    #[test]
    fn unknown_domain_and_bad_numbers_are_rejected() {
        let path = write_temp("micromorph_cfg_baddom.cfg", "[mesh]\ndomain = dodecahedron\n");
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("mesh.domain"));
        let path = write_temp("micromorph_cfg_badlvl.cfg", "[mesh]\nlevel = two\n");
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("mesh.level"));
        let path = write_temp("micromorph_cfg_badtol.cfg", "[tolerances]\ntol_s = -0.1\n");
        assert!(RunConfig::load(&path).unwrap_err().to_string().contains("tol_s"));
    }
}
