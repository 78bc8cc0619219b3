//! Experiment configuration.
//!
//! Values are layered, later layers winning: built-in defaults, a flat
//! `key = value` file (`#` starts a comment), `LOD_<KEY>` environment
//! variables, then command-line flags.
//!
//! | key                 | default     | meaning                                        |
//! |---------------------|-------------|------------------------------------------------|
//! | `method`            | `splod`     | comma list of `splod`, `plod`, `prototype`, `fem` |
//! | `p`                 | `0`         | comma list of polynomial degrees               |
//! | `ell`               | `rule`      | `rule`, `full`, or a comma list of integers    |
//! | `coarse_levels`     | `2,3,4,5`   | comma list; `H = 2^-level`                     |
//! | `fine_level`        | `7`         | fine mesh level                                |
//! | `coefficient`       | `a1`        | `a1` or `a2`                                   |
//! | `coefficient_file`  | empty       | load the coefficient from a file instead       |
//! | `coefficient_level` | `5`         | level of generated coefficients                |
//! | `seed`              | `1`         | generator seed                                 |
//! | `rhs`               | `default`   | `default` for `(x + cos(3 pi x)) y^3`, `one` for 1 |
//! | `out`               | `out`       | output directory                               |
//! | `threads`           | `0`         | worker threads, 0 for one per core             |
//! | `decay_level`       | `3`         | coarse level of the decay study                |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lod_core::MethodKind;

pub const KEYS: &[(&str, &str)] = &[
    ("method", "splod"),
    ("p", "0"),
    ("ell", "rule"),
    ("coarse_levels", "2,3,4,5"),
    ("fine_level", "7"),
    ("coefficient", "a1"),
    ("coefficient_file", ""),
    ("coefficient_level", "5"),
    ("seed", "1"),
    ("rhs", "default"),
    ("out", "out"),
    ("threads", "0"),
    ("decay_level", "3"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = std::result::Result<T, ConfigError>;

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Raw key-value layers before typing.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CResult<()> {
        let key = key.trim();
        if !self.values.contains_key(key) {
            return Err(bad(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    /// Applies a `key = value` text.
    pub fn apply_text(&mut self, text: &str) -> CResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies `LOD_<KEY>` variables from an environment listing.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> CResult<()> {
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix("LOD_") {
                let key = key.to_ascii_lowercase();
                if self.values.contains_key(&key) {
                    self.set(&key, &value)?;
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_assignment(&mut self, s: &str) -> CResult<()> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{s}'")))?;
        self.set(k, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllChoice {
    Rule,
    Full,
    Fixed(usize),
}

impl EllChoice {
    pub fn resolve(&self, p: usize, coarse_level: u32) -> usize {
        match *self {
            EllChoice::Rule => lod_core::ell_rule(p, coarse_level),
            EllChoice::Full => 2usize << coarse_level,
            EllChoice::Fixed(l) => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    A1,
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rhs {
    Default,
    One,
}

impl Rhs {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Rhs::Default => (x + (3.0 * std::f64::consts::PI * x).cos()) * y.powi(3),
            Rhs::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub methods: Vec<MethodKind>,
    pub p: Vec<usize>,
    pub ell: Vec<EllChoice>,
    pub coarse_levels: Vec<u32>,
    pub fine_level: u32,
    pub family: Family,
    pub coefficient_file: Option<PathBuf>,
    pub coefficient_level: u32,
    pub seed: u64,
    pub rhs: Rhs,
    pub out: PathBuf,
    pub threads: usize,
    pub decay_level: u32,
}

fn list<T>(key: &str, s: &str, parse: impl Fn(&str) -> CResult<T>) -> CResult<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(parse)
        .collect::<CResult<_>>()?;
    if items.is_empty() {
        return Err(bad(format!("'{key}' must not be empty")));
    }
    Ok(items)
}

fn number<T: std::str::FromStr>(key: &str, s: &str) -> CResult<T> {
    s.trim()
        .parse()
        .map_err(|_| bad(format!("'{key}': cannot parse '{s}' as a number")))
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> CResult<Self> {
        let methods = list("method", raw.get("method"), |s| {
            s.parse::<MethodKind>().map_err(|e| bad(e.to_string()))
        })?;
        let p = list("p", raw.get("p"), |s| number("p", s))?;
        let ell = match raw.get("ell") {
            "rule" => vec![EllChoice::Rule],
            "full" => vec![EllChoice::Full],
            s => list("ell", s, |x| {
                let l: usize = number("ell", x)?;
                if l == 0 {
                    return Err(bad("'ell' values must be at least 1"));
                }
                Ok(EllChoice::Fixed(l))
            })?,
        };
        let coarse_levels = list("coarse_levels", raw.get("coarse_levels"), |s| number("coarse_levels", s))?;
        let family = match raw.get("coefficient") {
            "a1" => Family::A1,
            "a2" => Family::A2,
            s => return Err(bad(format!("unknown coefficient family '{s}' (expected a1 or a2)"))),
        };
        let rhs = match raw.get("rhs") {
            "default" => Rhs::Default,
            "one" => Rhs::One,
            s => return Err(bad(format!("unknown right-hand side '{s}' (expected default or one)"))),
        };
        let file = raw.get("coefficient_file");
        let cfg = Self {
            methods,
            p,
            ell,
            coarse_levels,
            fine_level: number("fine_level", raw.get("fine_level"))?,
            family,
            coefficient_file: (!file.is_empty()).then(|| PathBuf::from(file)),
            coefficient_level: number("coefficient_level", raw.get("coefficient_level"))?,
            seed: number("seed", raw.get("seed"))?,
            rhs,
            out: PathBuf::from(raw.get("out")),
            threads: number("threads", raw.get("threads"))?,
            decay_level: number("decay_level", raw.get("decay_level"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CResult<()> {
        let max_coarse = *self.coarse_levels.iter().max().expect("nonempty");
        if self.fine_level < max_coarse.max(self.decay_level) + 2 {
            return Err(bad(format!(
                "fine level {} must be at least the largest coarse level plus 2",
                self.fine_level
            )));
        }
        if self.fine_level > lod_core::mesh::MAX_LEVEL {
            return Err(bad(format!("fine level {} exceeds {}", self.fine_level, lod_core::mesh::MAX_LEVEL)));
        }
        if self.coefficient_file.is_none() && self.coefficient_level > self.fine_level {
            return Err(bad("coefficient level must not exceed the fine level"));
        }
        if self.coarse_levels.contains(&0) {
            return Err(bad("coarse levels must be at least 1"));
        }
        Ok(())
    }
}

/// Defaults, then `file`, then environment, then flag assignments.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    assignments: &[String],
) -> CResult<ExperimentConfig> {
    let mut raw = RawConfig::default();
    if let Some(f) = file {
        raw.apply_file(f)?;
    }
    raw.apply_env(env)?;
    for a in assignments {
        raw.apply_assignment(a)?;
    }
    ExperimentConfig::from_raw(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::from_raw(&RawConfig::default()).unwrap();
        assert_eq!(c.fine_level, 7);
        assert_eq!(c.coarse_levels, vec![2, 3, 4, 5]);
        assert_eq!(c.coefficient_level, 5);
        assert_eq!(c.ell, vec![EllChoice::Rule]);
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = std::env::temp_dir().join(format!("lod-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.txt");
        std::fs::write(&path, "# comment\np = 1\nseed = 5\nell = 1, 2,3\n").unwrap();
        let env = vec![
            ("LOD_SEED".to_string(), "9".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = resolve(Some(&path), env, &["p=0,1".to_string()]).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.p, vec![0, 1]);
        assert_eq!(c.ell, vec![EllChoice::Fixed(1), EllChoice::Fixed(2), EllChoice::Fixed(3)]);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(resolve(None, vec![], &["nope=1".into()]).is_err());
        assert!(resolve(None, vec![], &["fine_level=6".into()]).is_err());
        assert!(resolve(None, vec![], &["coefficient=a3".into()]).is_err());
        assert!(resolve(None, vec![], &["ell=0".into()]).is_err());
        assert!(resolve(None, vec![], &["method=lod".into()]).is_err());
        assert!(RawConfig::default().apply_text("p 1").is_err());
    }

    #[test]
    fn default_rhs_value() {
        assert!((Rhs::Default.eval(0.5, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ell_resolution() {
        assert_eq!(EllChoice::Rule.resolve(1, 4), 4);
        assert_eq!(EllChoice::Full.resolve(0, 3), 16);
        assert_eq!(EllChoice::Fixed(2).resolve(3, 5), 2);
    }
}
