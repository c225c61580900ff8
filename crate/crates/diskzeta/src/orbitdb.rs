//! Line-delimited persistence of the solved orbit set. Every numeric field
//! is written with 17 significant digits so the round trip is exact for
//! binary64, and loading revalidates the full orbit invariants against the
//! configuration before anything downstream consumes the records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::Configuration;
use crate::linearization::poincare_map;
use crate::orbit::rebuild_orbit;
use crate::symbolic::Word;

const FORMAT_HEADER: &str = "# diskzeta orbit database v1";

#[derive(Debug, Error)]
pub enum DbError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("record {index} ({word}): {msg}")]
    Integrity {
        index: usize,
        word: String,
        msg: String,
    },
    #[error("database built for config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
}

#[derive(Debug, Clone)]
pub struct OrbitRecord {
    pub word: Word,
    pub m: usize,
    pub tau: f64,
    pub tau_primitive: f64,
    pub angles: Vec<f64>,
    pub trace: f64,
    pub det_id_minus: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct OrbitDatabase {
    pub config_hash: String,
    /// Coverage horizon: every ray with tau at or below this is present.
    pub horizon: f64,
    pub records: Vec<OrbitRecord>,
}

impl OrbitDatabase {
    pub fn primitives(&self) -> impl Iterator<Item = &OrbitRecord> {
        self.records.iter().filter(|r| r.word.is_primitive())
    }

    pub fn primitive_lengths(&self) -> Vec<f64> {
        self.primitives().map(|r| r.tau).collect()
    }
}

pub fn render_orbits(db: &OrbitDatabase) -> String {
    let mut out = String::new();
    writeln!(out, "{FORMAT_HEADER}").unwrap();
    writeln!(out, "# config {}", db.config_hash).unwrap();
    writeln!(out, "# horizon {:.16e}", db.horizon).unwrap();
    for r in &db.records {
        let angles: Vec<String> = r.angles.iter().map(|a| format!("{a:.16e}")).collect();
        writeln!(
            out,
            "{} {} {:.16e} {:.16e} {} {:.16e} {:.16e} {:.16e}",
            r.word,
            r.m,
            r.tau,
            r.tau_primitive,
            angles.join(";"),
            r.trace,
            r.det_id_minus,
            r.residual
        )
        .unwrap();
    }
    out
}

pub fn save_orbits(db: &OrbitDatabase, path: &Path) -> Result<(), DbError> {
    std::fs::write(path, render_orbits(db)).map_err(|e| DbError::Io(path.to_path_buf(), e))
}

/// Parses the textual database; structural validation only (word grammar,
/// field counts, numbers). Geometric revalidation is a separate pass.
pub fn parse_orbits(text: &str) -> Result<OrbitDatabase, DbError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(DbError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    if first.trim() != FORMAT_HEADER {
        return Err(DbError::Parse {
            line: 1,
            msg: format!("bad format header {first:?}"),
        });
    }
    let mut config_hash = None;
    let mut horizon = None;
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(h) = rest.strip_prefix("config ") {
                config_hash = Some(h.trim().to_string());
            } else if let Some(h) = rest.strip_prefix("horizon ") {
                horizon = Some(parse_field::<f64>(h.trim(), lineno, "horizon")?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(DbError::Parse {
                line: lineno,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let word: Word = fields[0].parse().map_err(|e| DbError::Parse {
            line: lineno,
            msg: format!("bad word {:?}: {e}", fields[0]),
        })?;
        let m: usize = parse_field(fields[1], lineno, "m")?;
        let tau: f64 = parse_field(fields[2], lineno, "tau")?;
        let tau_primitive: f64 = parse_field(fields[3], lineno, "tau_primitive")?;
        let mut angles = Vec::new();
        for part in fields[4].split(';') {
            angles.push(parse_field::<f64>(part, lineno, "angle")?);
        }
        let trace: f64 = parse_field(fields[5], lineno, "trace")?;
        let det_id_minus: f64 = parse_field(fields[6], lineno, "det_id_minus")?;
        let residual: f64 = parse_field(fields[7], lineno, "residual")?;
        if m != word.len() || angles.len() != m {
            return Err(DbError::Parse {
                line: lineno,
                msg: format!(
                    "field lengths disagree: word {} has {} symbols, m = {m}, {} angles",
                    word,
                    word.len(),
                    angles.len()
                ),
            });
        }
        if ![tau, tau_primitive, trace, det_id_minus, residual]
            .iter()
            .all(|v| v.is_finite())
            || angles.iter().any(|a| !a.is_finite())
        {
            return Err(DbError::Parse {
                line: lineno,
                msg: "non-finite numeric field".into(),
            });
        }
        records.push(OrbitRecord {
            word,
            m,
            tau,
            tau_primitive,
            angles,
            trace,
            det_id_minus,
            residual,
        });
    }
    Ok(OrbitDatabase {
        config_hash: config_hash.ok_or(DbError::Parse {
            line: 1,
            msg: "missing `# config` header".into(),
        })?,
        horizon: horizon.ok_or(DbError::Parse {
            line: 1,
            msg: "missing `# horizon` header".into(),
        })?,
        records,
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T, DbError> {
    s.parse::<T>().map_err(|_| DbError::Parse {
        line,
        msg: format!("bad {name} field {s:?}"),
    })
}

/// Rebuilds every record from its stored angles and checks the stored
/// values against the recomputation: reflection residual within
/// 1e-10 d0, stored lengths and monodromy data consistent.
pub fn revalidate(db: &OrbitDatabase, config: &Configuration) -> Result<(), DbError> {
    let residual_cap = 1e-10 * config.d0();
    for (index, r) in db.records.iter().enumerate() {
        let fail = |msg: String| DbError::Integrity {
            index,
            word: r.word.to_string(),
            msg,
        };
        let orbit = rebuild_orbit(config, &r.word, &r.angles)
            .map_err(|e| fail(format!("rebuild failed: {e}")))?;
        if orbit.residual_norm > residual_cap {
            return Err(fail(format!(
                "reflection residual {} exceeds {residual_cap}",
                orbit.residual_norm
            )));
        }
        if (orbit.tau - r.tau).abs() > 1e-9 * r.tau.abs().max(1.0) {
            return Err(fail(format!(
                "stored tau {} disagrees with recomputed {}",
                r.tau, orbit.tau
            )));
        }
        let repetition = r.word.primitive_decomposition().repetition as f64;
        if (r.tau_primitive * repetition - r.tau).abs() > 1e-9 * r.tau.abs().max(1.0) {
            return Err(fail("tau_primitive is not tau over the repetition count".into()));
        }
        let mono = poincare_map(config, &orbit).map_err(|e| fail(e.to_string()))?;
        if (mono.trace - r.trace).abs() > 1e-8 * r.trace.abs().max(1.0) {
            return Err(fail(format!(
                "stored trace {} disagrees with recomputed {}",
                r.trace, mono.trace
            )));
        }
        if (mono.det_id_minus - r.det_id_minus).abs() > 1e-8 * r.det_id_minus.abs().max(1.0) {
            return Err(fail(format!(
                "stored det_id_minus {} disagrees with recomputed {}",
                r.det_id_minus, mono.det_id_minus
            )));
        }
    }
    Ok(())
}

/// Load with structural parsing, config-hash pinning, and full
/// revalidation.
pub fn load_orbits(
    path: &Path,
    config: &Configuration,
    expected_hash: &str,
) -> Result<OrbitDatabase, DbError> {
    let text = std::fs::read_to_string(path).map_err(|e| DbError::Io(path.to_path_buf(), e))?;
    let db = parse_orbits(&text)?;
    if db.config_hash != expected_hash {
        return Err(DbError::ConfigMismatch {
            expected: expected_hash.to_string(),
            found: db.config_hash,
        });
    }
    revalidate(&db, config)?;
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::equilateral_config;
    use crate::linearization::poincare_map;
    use crate::orbit::locate_orbit;
    use std::str::FromStr;

    fn sample_db(config: &Configuration) -> OrbitDatabase {
        let mut records = Vec::new();
        for s in ["12", "123", "1213"] {
            let word = Word::from_str(s).unwrap();
            let orbit = locate_orbit(config, &word, 1e-12).unwrap();
            let mono = poincare_map(config, &orbit).unwrap();
            records.push(OrbitRecord {
                m: orbit.m(),
                tau: orbit.tau,
                tau_primitive: orbit.tau_primitive,
                angles: orbit.angles.clone(),
                trace: mono.trace,
                det_id_minus: mono.det_id_minus,
                residual: orbit.residual_norm,
                word,
            });
        }
        OrbitDatabase {
            config_hash: "deadbeef".into(),
            horizon: 20.0,
            records,
        }
    }

    #[test]
    fn round_trip_is_field_exact() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let db = sample_db(&config);
        let text = render_orbits(&db);
        let back = parse_orbits(&text).unwrap();
        assert_eq!(back.config_hash, db.config_hash);
        assert_eq!(back.horizon, db.horizon);
        assert_eq!(back.records.len(), db.records.len());
        for (a, b) in db.records.iter().zip(&back.records) {
            assert_eq!(a.word, b.word);
            assert_eq!(a.tau, b.tau);
            assert_eq!(a.tau_primitive, b.tau_primitive);
            assert_eq!(a.angles, b.angles);
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.det_id_minus, b.det_id_minus);
            assert_eq!(a.residual, b.residual);
        }
        revalidate(&back, &config).unwrap();
    }

    #[test]
    fn truncated_record_reports_line() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let db = sample_db(&config);
        let mut text = render_orbits(&db);
        // Chop the last line mid-field.
        text.truncate(text.len() - 30);
        match parse_orbits(&text) {
            Err(DbError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edited_tau_fails_integrity() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let mut db = sample_db(&config);
        db.records[0].tau += 1e-3;
        let back = parse_orbits(&render_orbits(&db)).unwrap();
        match revalidate(&back, &config) {
            Err(DbError::Integrity { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edited_angle_fails_residual() {
        let config = equilateral_config(6.0, 1.0).unwrap();
        let mut db = sample_db(&config);
        db.records[1].angles[0] += 1e-4;
        match revalidate(&db, &config) {
            Err(DbError::Integrity { index: 1, msg, .. }) => {
                assert!(msg.contains("residual"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(
            parse_orbits("not a database\n"),
            Err(DbError::Parse { line: 1, .. })
        ));
    }
}
