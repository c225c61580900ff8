//! Run configuration: a line-oriented `key = value` file with `[section]`
//! headers and per-disk `disk cx cy r` lines in the geometry section.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing [geometry] section or no disks declared")]
    NoGeometry,
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub m_max: usize,
    /// Truncation horizon; defaults to just under (m_max + 1) d0 so the
    /// enumerated itineraries are provably complete below it.
    pub x_max: Option<f64>,
    /// Frequency grouping tolerance; defaults to 1e-9 d0.
    pub group_tol: Option<f64>,
    pub solver_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            m_max: 8,
            x_max: None,
            group_tol: None,
            solver_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Counting-band epsilon.
    pub eps: f64,
    /// Window-count eta; defaults to half its admissible maximum.
    pub eta: Option<f64>,
    /// Gap exponent; defaults to h + 2.5 once h is fitted.
    pub delta: Option<f64>,
    /// Tail exponent; defaults to max(d2/2 + 2, 10 |sigma_c|).
    pub gamma: Option<f64>,
    pub c_gap: f64,
    /// Unit-window bases for the clustering scans; defaults derived from
    /// the horizon.
    pub b_windows: Option<Vec<f64>>,
    pub q_max: u64,
    pub tol_rational: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            eps: 0.3,
            eta: None,
            delta: None,
            gamma: None,
            c_gap: 1.0,
            b_windows: None,
            q_max: 1000,
            tol_rational: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub ell: Option<f64>,
    pub m_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Raw (cx, cy, r) triples in declaration order.
    pub disks: Vec<(f64, f64, f64)>,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    pub probe: ProbeConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig {
            disks: Vec::new(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
            probe: ProbeConfig {
                ell: None,
                m_scale: None,
            },
            output: OutputConfig::default(),
        };
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: lineno,
                    msg: "unterminated section header".into(),
                })?;
                match name {
                    "geometry" | "sweep" | "analysis" | "probe" | "output" => {
                        section = Some(name.to_string());
                    }
                    other => {
                        return Err(ConfigError::Parse {
                            line: lineno,
                            msg: format!("unknown section [{other}]"),
                        })
                    }
                }
                continue;
            }
            let section = section.as_deref().ok_or(ConfigError::Parse {
                line: lineno,
                msg: "content before any [section] header".into(),
            })?;
            if section == "geometry" {
                if let Some(rest) = line.strip_prefix("disk") {
                    let fields: Vec<&str> = rest.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(ConfigError::Parse {
                            line: lineno,
                            msg: format!("disk line needs `disk cx cy r`, got {line:?}"),
                        });
                    }
                    let mut vals = [0.0f64; 3];
                    for (slot, field) in vals.iter_mut().zip(&fields) {
                        *slot = parse_f64(field, lineno)?;
                    }
                    cfg.disks.push((vals[0], vals[1], vals[2]));
                    continue;
                }
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: lineno,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            match (section, key) {
                ("sweep", "m_max") => cfg.sweep.m_max = parse_usize(value, lineno)?,
                ("sweep", "x_max") => cfg.sweep.x_max = Some(parse_f64(value, lineno)?),
                ("sweep", "group_tol") => cfg.sweep.group_tol = Some(parse_f64(value, lineno)?),
                ("sweep", "solver_tol") => cfg.sweep.solver_tol = parse_f64(value, lineno)?,
                ("analysis", "eps") => cfg.analysis.eps = parse_f64(value, lineno)?,
                ("analysis", "eta") => cfg.analysis.eta = Some(parse_f64(value, lineno)?),
                ("analysis", "delta") => cfg.analysis.delta = Some(parse_f64(value, lineno)?),
                ("analysis", "gamma") => cfg.analysis.gamma = Some(parse_f64(value, lineno)?),
                ("analysis", "c_gap") => cfg.analysis.c_gap = parse_f64(value, lineno)?,
                ("analysis", "b_windows") => {
                    let mut windows = Vec::new();
                    for item in value.split(',') {
                        windows.push(parse_f64(item.trim(), lineno)?);
                    }
                    cfg.analysis.b_windows = Some(windows);
                }
                ("analysis", "q_max") => cfg.analysis.q_max = parse_u64(value, lineno)?,
                ("analysis", "tol_rational") => {
                    cfg.analysis.tol_rational = parse_f64(value, lineno)?
                }
                ("probe", "ell") => cfg.probe.ell = Some(parse_f64(value, lineno)?),
                ("probe", "m_scale") => cfg.probe.m_scale = Some(parse_f64(value, lineno)?),
                ("output", "dir") => cfg.output.dir = PathBuf::from(value),
                (section, key) => {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        msg: format!("unknown key {key:?} in section [{section}]"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        RunConfig::parse(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.disks.is_empty() {
            return Err(ConfigError::NoGeometry);
        }
        let bad = |msg: String| ConfigError::Parse { line: 0, msg };
        if self.sweep.m_max < 2 {
            return Err(bad(format!("m_max must be at least 2, got {}", self.sweep.m_max)));
        }
        for (name, v) in [
            ("solver_tol", Some(self.sweep.solver_tol)),
            ("x_max", self.sweep.x_max),
            ("group_tol", self.sweep.group_tol),
            ("eps", Some(self.analysis.eps)),
            ("eta", self.analysis.eta),
            ("gamma", self.analysis.gamma),
            ("c_gap", Some(self.analysis.c_gap)),
            ("tol_rational", Some(self.analysis.tol_rational)),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(bad(format!("{name} must be positive and finite, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Canonical rendering of the resolved configuration; its digest is
    /// embedded in every output for provenance.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[geometry]").unwrap();
        for (x, y, r) in &self.disks {
            writeln!(s, "disk {x:.17e} {y:.17e} {r:.17e}").unwrap();
        }
        writeln!(s, "[sweep]").unwrap();
        writeln!(s, "m_max = {}", self.sweep.m_max).unwrap();
        if let Some(x) = self.sweep.x_max {
            writeln!(s, "x_max = {x:.17e}").unwrap();
        }
        if let Some(g) = self.sweep.group_tol {
            writeln!(s, "group_tol = {g:.17e}").unwrap();
        }
        writeln!(s, "solver_tol = {:.17e}", self.sweep.solver_tol).unwrap();
        writeln!(s, "[analysis]").unwrap();
        writeln!(s, "eps = {:.17e}", self.analysis.eps).unwrap();
        if let Some(v) = self.analysis.eta {
            writeln!(s, "eta = {v:.17e}").unwrap();
        }
        if let Some(v) = self.analysis.delta {
            writeln!(s, "delta = {v:.17e}").unwrap();
        }
        if let Some(v) = self.analysis.gamma {
            writeln!(s, "gamma = {v:.17e}").unwrap();
        }
        writeln!(s, "c_gap = {:.17e}", self.analysis.c_gap).unwrap();
        if let Some(ws) = &self.analysis.b_windows {
            let joined: Vec<String> = ws.iter().map(|w| format!("{w:.17e}")).collect();
            writeln!(s, "b_windows = {}", joined.join(", ")).unwrap();
        }
        writeln!(s, "q_max = {}", self.analysis.q_max).unwrap();
        writeln!(s, "tol_rational = {:.17e}", self.analysis.tol_rational).unwrap();
        if let Some(ell) = self.probe.ell {
            writeln!(s, "[probe]").unwrap();
            writeln!(s, "ell = {ell:.17e}").unwrap();
            if let Some(m) = self.probe.m_scale {
                writeln!(s, "m_scale = {m:.17e}").unwrap();
            }
        }
        s
    }

    /// Hex digest identifying the run inputs (output paths excluded).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            write!(out, "{byte:02x}").unwrap();
        }
        out
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, ConfigError> {
    s.parse::<f64>().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("expected a number, got {s:?}"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize, ConfigError> {
    s.parse::<usize>().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("expected a nonnegative integer, got {s:?}"),
    })
}

fn parse_u64(s: &str, line: usize) -> Result<u64, ConfigError> {
    s.parse::<u64>().map_err(|_| ConfigError::Parse {
        line,
        msg: format!("expected a nonnegative integer, got {s:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# three-disk table
[geometry]
disk 0.0 0.0 1.0
disk 6.0 0.0 1.0
disk 3.0 5.196152422706632 1.0

[sweep]
m_max = 6
solver_tol = 1e-12

[analysis]
eps = 0.3
q_max = 500

[output]
dir = results
";

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.disks.len(), 3);
        assert_eq!(cfg.sweep.m_max, 6);
        assert_eq!(cfg.analysis.q_max, 500);
        assert_eq!(cfg.output.dir, PathBuf::from("results"));
        assert!(cfg.sweep.x_max.is_none());
    }

    #[test]
    fn rejects_unknown_key_with_line_number() {
        let text = "[sweep]\nm_max = 4\nbogus = 1\n";
        match RunConfig::parse(text) {
            Err(ConfigError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_disk_line() {
        let text = "[geometry]\ndisk 1.0 2.0\n";
        assert!(matches!(
            RunConfig::parse(text),
            Err(ConfigError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn requires_geometry() {
        assert!(matches!(
            RunConfig::parse("[sweep]\nm_max = 4\n"),
            Err(ConfigError::NoGeometry)
        ));
    }

    #[test]
    fn hash_ignores_output_dir_but_not_geometry() {
        let a = RunConfig::parse(SAMPLE).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.disks[0].2 = 1.5;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "\n# top\n[geometry]\ndisk 0 0 1 # inline\ndisk 5 0 1\ndisk 0 9 1\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.disks.len(), 3);
    }
}
