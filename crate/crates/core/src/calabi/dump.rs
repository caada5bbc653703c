//! Plain-text profile dumps: `#`-prefixed `key = value` metadata lines, a
//! column header `rho u uprime uprime2`, then one node per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{AnsatzModel, Profile};
use crate::scalar::Real;

pub const PROFILE_COLUMNS: [&str; 4] = ["rho", "u", "uprime", "uprime2"];

pub fn write_profile_dump<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
    t: S,
    extra: &[(&str, String)],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# krflow profile v1");
    let _ = writeln!(out, "# kind = {}", model.kind);
    let _ = writeln!(out, "# n = {}", model.n);
    let _ = writeln!(out, "# nodes = {}", profile.grid().len());
    let _ = writeln!(out, "# half_width = {}", profile.grid().half_width());
    let _ = writeln!(out, "# t = {t}");
    if let Some(b) = profile.base_level() {
        let _ = writeln!(out, "# base_level = {b}");
    }
    for (k, v) in extra {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "{}", PROFILE_COLUMNS.join(" "));
    let d2 = profile.d2u();
    for (i, r) in profile.rho().iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            r,
            profile.u()[i],
            profile.du()[i],
            d2[i]
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDump {
    pub metadata: BTreeMap<String, String>,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub uprime: Vec<f64>,
    pub uprime2: Vec<f64>,
}

pub fn read_profile_dump(text: &str) -> Result<ProfileDump, String> {
    let mut metadata = BTreeMap::new();
    let mut header_seen = false;
    let mut dump = ProfileDump {
        metadata: BTreeMap::new(),
        rho: vec![],
        u: vec![],
        uprime: vec![],
        uprime2: vec![],
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols != PROFILE_COLUMNS {
                return Err(format!(
                    "line {}: expected header `{}`",
                    lineno + 1,
                    PROFILE_COLUMNS.join(" ")
                ));
            }
            header_seen = true;
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if vals.len() != 4 {
            return Err(format!(
                "line {}: expected 4 columns, found {}",
                lineno + 1,
                vals.len()
            ));
        }
        dump.rho.push(vals[0]);
        dump.u.push(vals[1]);
        dump.uprime.push(vals[2]);
        dump.uprime2.push(vals[3]);
    }
    if !header_seen {
        return Err("missing column header".into());
    }
    dump.metadata = metadata;
    Ok(dump)
}
