//! `key=value` serialization of [`HyperParams`], one key per line, `#`
//! starts a comment.

use std::fmt::Write as _;

use super::{HyperParams, InitScheme, StepRule};
use crate::error::{Error, Result};

/// Every recognised key, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "lambda3",
    "k",
    "dim",
    "outer_iters",
    "inner_fista",
    "step",
    "epsilon",
    "seed",
    "init",
    "step_rule",
    "inner_steps_c",
    "inner_steps_w",
    "alpha",
    "beta",
];

impl HyperParams {
    /// Parses a config file body. Keys that are absent keep their default
    /// and are returned in the second element so callers can report them.
    pub fn from_config_str(text: &str) -> Result<(HyperParams, Vec<&'static str>)> {
        let mut hp = HyperParams::default();
        let mut seen = vec![false; CONFIG_KEYS.len()];
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected key=value, got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let slot = CONFIG_KEYS
                .iter()
                .position(|&k| k == key)
                .ok_or_else(|| Error::parse(line, format!("unknown config key '{key}'")))?;
            if seen[slot] {
                return Err(Error::parse(line, format!("duplicate config key '{key}'")));
            }
            seen[slot] = true;
            hp.set(key, value).map_err(|e| Error::parse(line, e.to_string()))?;
        }
        hp.validate()?;
        let defaulted = CONFIG_KEYS
            .iter()
            .zip(&seen)
            .filter(|(_, &s)| !s)
            .map(|(&k, _)| k)
            .collect();
        Ok((hp, defaulted))
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("bad value '{value}' for {key}")))
        }
        fn list(key: &str, value: &str) -> Result<Vec<f64>> {
            value.split(',').map(|v| num(key, v.trim())).collect()
        }
        match key {
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "lambda3" => self.lambda3 = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "outer_iters" => self.outer_iters = num(key, value)?,
            "inner_fista" => self.inner_max_iter = num(key, value)?,
            "step" => self.eta = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "init" => self.init = value.parse::<InitScheme>()?,
            "step_rule" => self.step_rule = value.parse::<StepRule>()?,
            "inner_steps_c" => self.inner_steps_c = num(key, value)?,
            "inner_steps_w" => self.inner_steps_w = num(key, value)?,
            "alpha" => self.alpha = list(key, value)?,
            "beta" => self.beta = list(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Writes every key. Floats use the shortest representation that parses
    /// back to the same bits.
    pub fn to_config_string(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "lambda1={}", self.lambda1);
        let _ = writeln!(out, "lambda2={}", self.lambda2);
        let _ = writeln!(out, "lambda3={}", self.lambda3);
        let _ = writeln!(out, "k={}", self.k);
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "outer_iters={}", self.outer_iters);
        let _ = writeln!(out, "inner_fista={}", self.inner_max_iter);
        let _ = writeln!(out, "step={}", self.eta);
        let _ = writeln!(out, "epsilon={}", self.epsilon);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "init={}", self.init);
        let _ = writeln!(out, "step_rule={}", self.step_rule);
        let _ = writeln!(out, "inner_steps_c={}", self.inner_steps_c);
        let _ = writeln!(out, "inner_steps_w={}", self.inner_steps_w);
        let _ = writeln!(out, "alpha={}", join(&self.alpha));
        let _ = writeln!(out, "beta={}", join(&self.beta));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let (hp, defaulted) = HyperParams::from_config_str("# nothing\n\n").unwrap();
        assert_eq!(hp, HyperParams::default());
        assert_eq!(defaulted.len(), CONFIG_KEYS.len());
    }

    #[test]
    fn defaults_match_reference_setup() {
        let hp = HyperParams::default();
        assert_eq!(hp.outer_iters, 50);
        assert_eq!(hp.dim, 100);
        assert_eq!(hp.inner_max_iter, 50);
        assert_eq!(hp.eta, 1e-5);
        assert_eq!(hp.k, 10);
        assert_eq!(hp.epsilon, 1e-4);
    }

    #[test]
    fn parses_values_and_reports_missing_keys() {
        let text = "lambda1 = 10  # strong\nstep=1e-3\ninit=ones\nbeta=0.25,0.75\n";
        let (hp, defaulted) = HyperParams::from_config_str(text).unwrap();
        assert_eq!(hp.lambda1, 10.0);
        assert_eq!(hp.eta, 1e-3);
        assert_eq!(hp.init, InitScheme::Ones);
        assert_eq!(hp.beta, vec![0.25, 0.75]);
        assert!(defaulted.contains(&"lambda2"));
        assert!(!defaulted.contains(&"step"));
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = HyperParams::from_config_str("k=3\nlambda4=1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn config_string_round_trips() {
        let hp = HyperParams {
            lambda1: 0.1 + 0.2,
            eta: 1.0 / 3.0,
            init: InitScheme::UniformRandom(0.3),
            step_rule: StepRule::Lipschitz,
            alpha: vec![0.3, 0.7],
            seed: u64::MAX,
            ..HyperParams::default()
        };
        let (back, _) = HyperParams::from_config_str(&hp.to_config_string()).unwrap();
        assert_eq!(back, hp);
        assert_eq!(back.lambda1.to_bits(), hp.lambda1.to_bits());
    }
}
