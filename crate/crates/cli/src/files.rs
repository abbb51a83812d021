//! Input files and atomic output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use opamp_core::design::{DesignConfig, DesignState};
use opamp_core::netlist::si::parse_si;

/// `key = value` lines; `#` starts a comment. Values accept SI suffixes.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, f64)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        let value = value.trim();
        let v = parse_si(value).ok_or_else(|| anyhow!("line {}: `{value}` is not a number", i + 1))?;
        out.push((i + 1, key.trim().to_string(), v));
    }
    Ok(out)
}

/// Apply a spec file to a design configuration. Besides the spec targets it
/// accepts every hypothesis margin so ablations can be scripted.
pub fn apply_spec_file(text: &str, cfg: &mut DesignConfig) -> Result<()> {
    for (line, key, v) in parse_key_values(text)? {
        let s = &mut cfg.specs;
        let m = &mut cfg.margins;
        let slot = match key.as_str() {
            "gain_min_db" => &mut s.gain_min_db,
            "gbw_min_hz" => &mut s.gbw_min_hz,
            "pm_lo_deg" => &mut s.pm_lo_deg,
            "pm_hi_deg" => &mut s.pm_hi_deg,
            "power_max_w" => &mut s.power_max_w,
            "pm_opt_lo_deg" => &mut s.pm_opt_lo_deg,
            "pm_opt_hi_deg" => &mut s.pm_opt_hi_deg,
            "k_dom" => &mut m.k_dom,
            "k_sep" => &mut m.k_sep,
            "k_auto" => &mut m.k_auto,
            "kappa_p" => &mut m.kappa_p,
            "kappa_z" => &mut m.kappa_z,
            "zeta_min" => &mut m.zeta_min,
            "zero_lhp" => &mut m.zero_lhp,
            "max_iter" => {
                cfg.max_iter = as_count(v, line)?;
                continue;
            }
            "starts" => {
                cfg.settings.starts = as_count(v, line)?;
                continue;
            }
            _ => bail!("line {line}: unknown key `{key}`"),
        };
        *slot = v;
    }
    Ok(())
}

fn as_count(v: f64, line: usize) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        bail!("line {line}: expected a positive integer, got {v}")
    }
}

/// Design values from a `key = value` file, or the final x* of a JSON report.
pub fn read_values(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let state: DesignState = serde_json::from_str(&text).context("parsing design report")?;
        return state
            .x_star()
            .cloned()
            .ok_or_else(|| anyhow!("report has no optimized point"));
    }
    Ok(parse_key_values(&text)?.into_iter().map(|(_, k, v)| (k, v)).collect())
}

/// Write through a temporary sibling and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_with_suffixes_and_comments() {
        let kv = parse_key_values("# specs\ngain_min_db = 60\npower_max_w=250u # budget\n\n").unwrap();
        assert_eq!(kv.len(), 2);
        assert_eq!(kv[1].1, "power_max_w");
        assert!((kv[1].2 - 250e-6).abs() < 1e-18);
        assert!(parse_key_values("gain 60").unwrap_err().to_string().contains("line 1"));
    }

    #[test]
    fn spec_file_sets_targets_and_margins() {
        let mut cfg = DesignConfig::default();
        apply_spec_file("gbw_min_hz = 1Meg\nk_dom = 1.5\nmax_iter = 5", &mut cfg).unwrap();
        assert_eq!(cfg.specs.gbw_min_hz, 1e6);
        assert_eq!(cfg.margins.k_dom, 1.5);
        assert_eq!(cfg.max_iter, 5);
        assert!(apply_spec_file("bogus = 1", &mut cfg).is_err());
        assert!(apply_spec_file("max_iter = 0.5", &mut cfg).is_err());
    }
}
