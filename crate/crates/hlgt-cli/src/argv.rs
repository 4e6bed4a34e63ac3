//! Argument-vector rewriting for config files and parameter sweeps.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};

/// Parses `key = value` lines; `#` starts a comment.
pub fn read_config(path: &str) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config file {path}"))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{path}:{}: expected `key = value`", i + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn has_flag(argv: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    argv.iter()
        .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Appends config entries as flags unless the command line already sets them.
pub fn merge_config(mut argv: Vec<String>, entries: &[(String, String)]) -> Vec<String> {
    for (k, v) in entries {
        if has_flag(&argv, k) {
            continue;
        }
        match v.as_str() {
            "true" => argv.push(format!("--{k}")),
            "false" => {}
            _ => {
                argv.push(format!("--{k}"));
                argv.push(v.clone());
            }
        }
    }
    argv
}

/// Removes `--name value` or `--name=value`, returning the value.
pub fn take_flag(argv: &mut Vec<String>, name: &str) -> Option<String> {
    let flag = format!("--{name}");
    let prefix = format!("{flag}=");
    let i = argv
        .iter()
        .position(|a| *a == flag || a.starts_with(&prefix))?;
    if let Some(v) = argv[i].strip_prefix(&prefix) {
        let v = v.to_string();
        argv.remove(i);
        return Some(v);
    }
    argv.remove(i);
    (i < argv.len()).then(|| argv.remove(i))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

/// `key=start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_sweep(s: &str) -> Result<Sweep> {
    let (key, range) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("sweep must look like key=start:stop:step, got '{s}'"))?;
    let parts: Vec<f64> = range
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad sweep range '{range}'"))?;
    let [a, b, step] = parts[..] else {
        bail!("sweep range needs start:stop:step, got '{range}'");
    };
    if !(step > 0.0) || b < a {
        bail!("sweep needs step > 0 and start <= stop");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        bail!("sweep has {} points; at most 100000", n + 1);
    }
    let values = (0..=n).map(|i| a + step * i as f64).collect();
    Ok(Sweep {
        key: key.trim().to_string(),
        values,
    })
}

/// One argument vector per sweep value, with the swept flag replaced.
pub fn expand_sweep(argv: &[String], sweep: &Sweep) -> Vec<Vec<String>> {
    sweep
        .values
        .iter()
        .map(|v| {
            let mut a = argv.to_vec();
            while take_flag(&mut a, &sweep.key).is_some() {}
            a.push(format!("--{}", sweep.key));
            a.push(format!("{v}"));
            a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn sweep_points() {
        let s = parse_sweep("beta=0.1:2:0.1").unwrap();
        assert_eq!(s.values.len(), 20);
        assert!((s.values[19] - 2.0).abs() < 1e-12);
        assert!(parse_sweep("beta=1:0:0.1").is_err());
        assert!(parse_sweep("beta").is_err());
    }

    #[test]
    fn sweep_replaces_flag() {
        let s = Sweep {
            key: "beta".into(),
            values: vec![0.5],
        };
        let out = expand_sweep(&v("hlgt heat-kernel --beta 1 --group z2"), &s);
        assert_eq!(out[0], v("hlgt heat-kernel --group z2 --beta 0.5"));
    }

    #[test]
    fn config_does_not_override_flags() {
        let merged = merge_config(
            v("hlgt rg flow --nu 1"),
            &[("nu".into(), "2".into()), ("beta0".into(), "3".into()), ("csv".into(), "true".into())],
        );
        assert_eq!(merged, v("hlgt rg flow --nu 1 --beta0 3 --csv"));
    }
}
