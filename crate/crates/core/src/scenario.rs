//! Scenario files: `[section]` headers, `key = value` lines, `#` comments.
//!
//! Parsing collects every problem it finds, each located by section and key,
//! instead of stopping at the first one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::bsde_solver::{BsdeConfig, LinearDriver, Scheme};
use crate::control_value::{Lattice, McConfig};
use crate::error::{ConfigError, Error, Result};
use crate::grid::SpatialGrid;
use crate::hjb_solver::{Differencing, HjbConfig};
use crate::levy_model::{JumpMeasure, LevyModel, LevyTriplet};
use crate::output::sha256_hex;
use crate::problem::{ControlDriver, ControlProblem, Forward, Terminal};
use crate::rng::{derive_seed, label};
use crate::teugels_basis::OrthoBasis;

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "b",
            "sigma2",
            "i_max",
            "jump.kind",
            "jump.atoms",
            "jump.lambda",
            "jump.p",
            "jump.alpha",
            "jump.beta",
        ],
    ),
    ("basis", &["k"]),
    ("paths", &["steps", "paths", "seed", "horizon", "sample"]),
    (
        "bsde",
        &[
            "x0",
            "degree",
            "scheme",
            "driver.constant",
            "driver.time",
            "driver.x",
            "driver.y",
            "driver.z",
            "terminal.kind",
            "terminal.a",
            "terminal.b",
            "terminal.c",
        ],
    ),
    (
        "problem",
        &[
            "forward.kind",
            "forward.c0",
            "forward.cx",
            "forward.cu",
            "driver.constant",
            "driver.time",
            "driver.x",
            "driver.y",
            "driver.u",
            "driver.uu",
            "driver.z",
            "driver.zu",
            "terminal.kind",
            "terminal.a",
            "terminal.b",
            "terminal.c",
            "controls",
            "horizon",
            "lipschitz",
        ],
    ),
    ("lattice", &["t_start", "x_min", "x_max", "nodes", "slices"]),
    ("mc", &["paths", "substeps", "degree"]),
    ("grid", &["x_min", "x_max", "nodes"]),
    (
        "hjb",
        &["time_steps", "cfl_safety", "quadrature_order", "slope_bound", "differencing"],
    ),
    ("outputs", &["directory"]),
];

/// Ensemble settings shared by `simulate` and `bsde`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSettings {
    /// Time steps `M`.
    pub steps: usize,
    /// Paths `N`.
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
    /// Paths written out in full by `simulate`.
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSettings {
    pub x0: f64,
    pub driver: LinearDriver,
    pub terminal: Terminal,
    pub config: BsdeConfig,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: LevyModel,
    pub basis: OrthoBasis,
    pub paths: PathSettings,
    pub bsde: Option<BsdeSettings>,
    pub problem: Option<ControlProblem>,
    pub lattice: Option<Lattice>,
    pub mc: Option<McConfig>,
    pub grid: Option<SpatialGrid>,
    pub hjb: HjbConfig,
    pub output_dir: Option<PathBuf>,
    /// SHA-256 of the file bytes.
    pub digest: String,
}

impl Scenario {
    /// A section needed by `subcommand` that the file did not provide.
    pub fn require(&self, subcommand: &str) -> Result<()> {
        let needs: &[(&str, bool)] = match subcommand {
            "bsde" => &[("bsde", self.bsde.is_some())],
            "value-mc" => &[
                ("problem", self.problem.is_some()),
                ("lattice", self.lattice.is_some()),
                ("mc", self.mc.is_some()),
            ],
            "hjb" => &[("problem", self.problem.is_some()), ("grid", self.grid.is_some())],
            "compare" => &[
                ("problem", self.problem.is_some()),
                ("lattice", self.lattice.is_some()),
                ("mc", self.mc.is_some()),
                ("grid", self.grid.is_some()),
            ],
            _ => &[],
        };
        let missing: Vec<ConfigError> = needs
            .iter()
            .filter(|(_, present)| !present)
            .map(|(s, _)| ConfigError {
                section: s.to_string(),
                key: String::new(),
                reason: format!("section required by `{subcommand}`"),
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(missing))
        }
    }
}

pub fn parse_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse(&text)
}

type Raw = BTreeMap<String, BTreeMap<String, String>>;

pub fn parse(text: &str) -> Result<Scenario> {
    let mut errors = Vec::new();
    let raw = tokenize(text, &mut errors);
    let mut r = Reader { raw: &raw, errors };
    let scenario = r.build(text);
    if r.errors.is_empty() {
        Ok(scenario.expect("a scenario is built whenever no error was recorded"))
    } else {
        Err(Error::Config(r.errors))
    }
}

fn err(section: &str, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        section: section.to_string(),
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn tokenize(text: &str, errors: &mut Vec<ConfigError>) -> Raw {
    let mut raw = Raw::new();
    let mut current: Option<String> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            match SECTIONS.iter().find(|(s, _)| *s == name) {
                Some(_) if raw.contains_key(&name) => {
                    errors.push(err(&name, "", format!("line {}: duplicate section", lineno + 1)));
                }
                Some(_) => {
                    raw.insert(name.clone(), BTreeMap::new());
                }
                None => errors.push(err(&name, "", format!("line {}: unknown section", lineno + 1))),
            }
            current = Some(name);
            continue;
        }
        let Some(section) = current.clone() else {
            errors.push(err("", "", format!("line {}: key outside any section", lineno + 1)));
            continue;
        };
        let Some((key, value)) = line.split_once('=') else {
            errors.push(err(&section, "", format!("line {}: expected `key = value`", lineno + 1)));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some((_, allowed)) = SECTIONS.iter().find(|(s, _)| *s == section) else {
            continue;
        };
        if !allowed.contains(&key.as_str()) {
            errors.push(err(&section, &key, "unknown key"));
            continue;
        }
        let entries = raw.entry(section.clone()).or_default();
        if entries.insert(key.clone(), value).is_some() {
            errors.push(err(&section, &key, "duplicate key"));
        }
    }
    raw
}

struct Reader<'a> {
    raw: &'a Raw,
    errors: Vec<ConfigError>,
}

impl Reader<'_> {
    fn has(&self, section: &str) -> bool {
        self.raw.contains_key(section)
    }

    fn text(&self, section: &str, key: &str) -> Option<&str> {
        self.raw.get(section)?.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let v = self.text(section, key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(err(section, key, format!("expected {what}, got `{v}`")));
                None
            }
        }
    }

    fn real_opt(&mut self, section: &str, key: &str) -> Option<f64> {
        let x: f64 = self.parsed(section, key, "a real number")?;
        if x.is_finite() {
            Some(x)
        } else {
            self.errors.push(err(section, key, "must be finite"));
            None
        }
    }

    fn real_or(&mut self, section: &str, key: &str, default: f64) -> f64 {
        self.real_opt(section, key).unwrap_or(default)
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        if self.text(section, key).is_none() {
            self.errors.push(err(section, key, "missing required key"));
            return None;
        }
        self.real_opt(section, key)
    }

    fn count(&mut self, section: &str, key: &str, min: usize) -> Option<usize> {
        if self.text(section, key).is_none() {
            self.errors.push(err(section, key, "missing required key"));
            return None;
        }
        self.count_opt(section, key, min)
    }

    fn count_opt(&mut self, section: &str, key: &str, min: usize) -> Option<usize> {
        let n: usize = self.parsed(section, key, "a nonnegative integer")?;
        if n < min {
            self.errors.push(err(section, key, format!("must be at least {min}, got {n}")));
            return None;
        }
        Some(n)
    }

    fn reals(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        let v = self.text(section, key)?.to_string();
        let mut out = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<f64>() {
                Ok(x) if x.is_finite() => out.push(x),
                _ => {
                    self.errors.push(err(section, key, format!("expected a list of reals, got `{item}`")));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn choice<'c>(&mut self, section: &str, key: &str, options: &[&'c str]) -> Option<&'c str> {
        let v = self.text(section, key)?.to_string();
        match options.iter().find(|o| **o == v) {
            Some(o) => Some(*o),
            None => {
                self.errors.push(err(section, key, format!("expected one of {}, got `{v}`", options.join(", "))));
                None
            }
        }
    }

    fn build(&mut self, text: &str) -> Option<Scenario> {
        for s in ["model", "basis", "paths"] {
            if !self.has(s) {
                self.errors.push(err(s, "", "missing required section"));
            }
        }
        let k = self.count("basis", "k", 1);
        let model = self.model(k);
        let basis = match (&model, k) {
            (Some(m), Some(k)) => match OrthoBasis::build(m, k) {
                Ok(b) if b.rank() < k => {
                    self.errors.push(err("basis", "k", format!("K = {k} exceeds basis rank {}", b.rank())));
                    None
                }
                Ok(b) => Some(b),
                Err(e) => {
                    self.errors.push(err("basis", "k", e.to_string()));
                    None
                }
            },
            _ => None,
        };
        let paths = self.paths();
        let bsde = if self.has("bsde") { self.bsde() } else { None };
        let problem = if self.has("problem") { self.problem() } else { None };
        let lattice = if self.has("lattice") {
            self.lattice(problem.as_ref())
        } else {
            None
        };
        let mc = match (self.has("mc"), paths) {
            (true, Some(p)) => self.mc(p.seed),
            _ => None,
        };
        let grid = if self.has("grid") { self.spatial("grid") } else { None };
        let hjb = self.hjb();
        let output_dir = self.text("outputs", "directory").map(PathBuf::from);
        if !self.errors.is_empty() {
            return None;
        }
        Some(Scenario {
            model: model?,
            basis: basis?,
            paths: paths?,
            bsde,
            problem,
            lattice,
            mc,
            grid,
            hjb,
            output_dir,
            digest: sha256_hex(text.as_bytes()),
        })
    }

    fn model(&mut self, k: Option<usize>) -> Option<LevyModel> {
        let s = "model";
        let b = self.real_or(s, "b", 0.0);
        let sigma2 = self.real_or(s, "sigma2", 0.0);
        let nu = match self.choice(s, "jump.kind", &["none", "point_masses", "two_sided_exponential"]) {
            None if self.text(s, "jump.kind").is_some() => return None,
            None | Some("none") => JumpMeasure::None,
            Some("point_masses") => JumpMeasure::PointMasses(self.atoms()?),
            Some(_) => JumpMeasure::TwoSidedExponential {
                lambda: self.real(s, "jump.lambda")?,
                p: self.real(s, "jump.p")?,
                alpha: self.real(s, "jump.alpha")?,
                beta: self.real(s, "jump.beta")?,
            },
        };
        let needed = 2 * k? + 2;
        let i_max = self.count_opt(s, "i_max", 2).unwrap_or(needed);
        if i_max < needed {
            self.errors.push(err(s, "i_max", format!("K = {} needs i_max ≥ {needed}", k?)));
            return None;
        }
        match LevyModel::new(LevyTriplet { b, sigma2, nu, i_max }) {
            Ok(m) => Some(m),
            Err(e) => {
                self.errors.push(err(s, "", e.to_string()));
                None
            }
        }
    }

    /// `jump.atoms = x1:w1, x2:w2, …`
    fn atoms(&mut self) -> Option<Vec<(f64, f64)>> {
        let Some(v) = self.text("model", "jump.atoms").map(str::to_string) else {
            self.errors.push(err("model", "jump.atoms", "missing required key"));
            return None;
        };
        let mut atoms = Vec::new();
        for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let pair = item
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
            match pair {
                Some(p) => atoms.push(p),
                None => {
                    self.errors
                        .push(err("model", "jump.atoms", format!("expected `location:intensity`, got `{item}`")));
                    return None;
                }
            }
        }
        Some(atoms)
    }

    fn paths(&mut self) -> Option<PathSettings> {
        let s = "paths";
        let steps = self.count(s, "steps", 1);
        let paths = self.count(s, "paths", 1);
        let seed = if self.text(s, "seed").is_none() {
            self.errors.push(err(s, "seed", "missing required key; seeds are never implicit"));
            None
        } else {
            self.parsed::<u64>(s, "seed", "an unsigned integer")
        };
        let horizon = self.real_or(s, "horizon", 1.0);
        if !(horizon > 0.0) {
            self.errors.push(err(s, "horizon", "must be positive"));
        }
        let sample = self.count_opt(s, "sample", 0).unwrap_or(10);
        Some(PathSettings {
            steps: steps?,
            paths: paths?,
            seed: seed?,
            horizon,
            sample,
        })
    }

    fn terminal(&mut self, s: &str) -> Option<Terminal> {
        let a = self.real_or(s, "terminal.a", 0.0);
        let b = self.real_or(s, "terminal.b", 0.0);
        let c = self.real_or(s, "terminal.c", 0.0);
        if self.text(s, "terminal.kind").is_none() {
            self.errors.push(err(s, "terminal.kind", "missing required key"));
            return None;
        }
        // constant: c; linear: a·x + b; quadratic: a·x² + b·x + c
        Some(match self.choice(s, "terminal.kind", &["constant", "linear", "quadratic"])? {
            "constant" => Terminal::Constant(c),
            "linear" => Terminal::Linear {
                slope: a,
                intercept: b,
            },
            _ => Terminal::Quadratic { a, b, c },
        })
    }

    fn bsde(&mut self) -> Option<BsdeSettings> {
        let s = "bsde";
        let x0 = self.real_or(s, "x0", 0.0);
        let driver = LinearDriver {
            constant: self.real_or(s, "driver.constant", 0.0),
            time: self.real_or(s, "driver.time", 0.0),
            x: self.real_or(s, "driver.x", 0.0),
            y: self.real_or(s, "driver.y", 0.0),
            z: self.reals(s, "driver.z").unwrap_or_default(),
        };
        let degree = self.count_opt(s, "degree", 0).unwrap_or(BsdeConfig::default().degree);
        let scheme = match self.choice(s, "scheme", &["euler", "heun"]) {
            Some("euler") => Scheme::Euler,
            _ => Scheme::Heun,
        };
        let terminal = self.terminal(s)?;
        Some(BsdeSettings {
            x0,
            driver,
            terminal,
            config: BsdeConfig { degree, scheme },
        })
    }

    fn problem(&mut self) -> Option<ControlProblem> {
        let s = "problem";
        let c0 = self.real_or(s, "forward.c0", 0.0);
        let cx = self.real_or(s, "forward.cx", 0.0);
        let cu = self.real_or(s, "forward.cu", 0.0);
        if self.text(s, "forward.kind").is_none() {
            self.errors.push(err(s, "forward.kind", "missing required key"));
        }
        let forward = match self.choice(s, "forward.kind", &["constant", "linear", "affine_control"]) {
            Some("constant") => Some(Forward::Constant(c0)),
            Some("linear") => Some(Forward::Linear(cx)),
            Some(_) => Some(Forward::AffineControl { c0, cx, cu }),
            None => None,
        };
        let driver = ControlDriver {
            constant: self.real_or(s, "driver.constant", 0.0),
            time: self.real_or(s, "driver.time", 0.0),
            x: self.real_or(s, "driver.x", 0.0),
            y: self.real_or(s, "driver.y", 0.0),
            u: self.real_or(s, "driver.u", 0.0),
            u2: self.real_or(s, "driver.uu", 0.0),
            z: self.reals(s, "driver.z").unwrap_or_default(),
            zu: self.reals(s, "driver.zu").unwrap_or_default(),
        };
        let terminal = self.terminal(s);
        let controls = self.reals(s, "controls");
        if self.text(s, "controls").is_none() {
            self.errors.push(err(s, "controls", "missing required key"));
        }
        let horizon = self.real(s, "horizon");
        let lipschitz = match self.reals(s, "lipschitz") {
            Some(l) if l.len() == 3 => Some((l[0], l[1], l[2])),
            Some(_) => {
                self.errors.push(err(s, "lipschitz", "expected three constants `L1, L2, L3`"));
                None
            }
            None => {
                if self.text(s, "lipschitz").is_none() {
                    self.errors.push(err(s, "lipschitz", "missing required key"));
                }
                None
            }
        };
        match ControlProblem::new(forward?, driver, terminal?, controls?, horizon?, lipschitz?) {
            Ok(p) => Some(p),
            Err(e) => {
                self.errors.push(err(s, "", e.to_string()));
                None
            }
        }
    }

    fn spatial(&mut self, s: &str) -> Option<SpatialGrid> {
        let x_min = self.real(s, "x_min");
        let x_max = self.real(s, "x_max");
        let nodes = self.count(s, "nodes", 3);
        match SpatialGrid::new(x_min?, x_max?, nodes?) {
            Ok(g) => Some(g),
            Err(e) => {
                self.errors.push(err(s, "", e.to_string()));
                None
            }
        }
    }

    fn lattice(&mut self, problem: Option<&ControlProblem>) -> Option<Lattice> {
        let s = "lattice";
        let t_start = self.real_or(s, "t_start", 0.0);
        let slices = self.count(s, "slices", 1);
        let grid = self.spatial(s);
        let horizon = problem?.horizon;
        if !(t_start < horizon) {
            self.errors.push(err(s, "t_start", format!("must lie before the horizon {horizon}")));
            return None;
        }
        match Lattice::new(t_start, horizon, slices?, grid?) {
            Ok(l) => Some(l),
            Err(e) => {
                self.errors.push(err(s, "", e.to_string()));
                None
            }
        }
    }

    fn mc(&mut self, seed: u64) -> Option<McConfig> {
        let s = "mc";
        let paths = self.count(s, "paths", 2);
        let substeps = self.count_opt(s, "substeps", 1).unwrap_or(2);
        let degree = self.count_opt(s, "degree", 0).unwrap_or(BsdeConfig::default().degree);
        Some(McConfig {
            paths: paths?,
            substeps,
            bsde: BsdeConfig {
                degree,
                ..BsdeConfig::default()
            },
            seed: derive_seed(seed, label::SLICE, 0),
        })
    }

    fn hjb(&mut self) -> HjbConfig {
        let s = "hjb";
        let d = HjbConfig::default();
        let cfl_safety = self.real_or(s, "cfl_safety", d.cfl_safety);
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            self.errors.push(err(s, "cfl_safety", "must lie in (0, 1]"));
        }
        HjbConfig {
            time_steps: self.count_opt(s, "time_steps", 1),
            cfl_safety,
            quadrature_order: self.count_opt(s, "quadrature_order", 1),
            slope_bound: self.real_opt(s, "slope_bound"),
            differencing: match self.choice(s, "differencing", &["central", "monotone"]) {
                Some("central") => Differencing::Central,
                _ => d.differencing,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "
# linear benchmark
[model]
b = 0.2
sigma2 = 0.01
jump.kind = point_masses
jump.atoms = 0.1:1, -0.1:1

[basis]
k = 2

[paths]
steps = 10
paths = 100
seed = 7

[problem]
forward.kind = linear
forward.cx = 1
terminal.kind = linear
terminal.a = 1
controls = 0
horizon = 1
lipschitz = 1, 0, 0
";

    fn config_errors(text: &str) -> Vec<ConfigError> {
        match parse(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected configuration errors, got {other:?}"),
        }
    }

    #[test]
    fn parses_well_formed_file() {
        let sc = parse(GOOD).unwrap();
        assert_eq!(sc.basis.rank(), 2);
        assert_eq!(sc.paths.seed, 7);
        assert!((sc.model.m1() - 0.2).abs() < 1e-15);
        let p = sc.problem.unwrap();
        assert_eq!(p.controls, vec![0.0]);
        assert!(sc.lattice.is_none());
        assert_eq!(sc.digest.len(), 64);
    }

    #[test]
    fn missing_seed_names_the_key() {
        let e = config_errors(&GOOD.replace("seed = 7\n", ""));
        assert!(e.iter().any(|c| c.section == "paths" && c.key == "seed"), "{e:?}");
    }

    #[test]
    fn k_beyond_rank_is_refused() {
        let text = "[model]\nsigma2 = 0\njump.kind = point_masses\njump.atoms = 1:1\n[basis]\nk = 5\n[paths]\nsteps = 1\npaths = 1\nseed = 1\n";
        let e = config_errors(text);
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].section.as_str(), e[0].key.as_str()), ("basis", "k"));
        assert!(e[0].reason.contains("exceeds basis rank 1"), "{}", e[0].reason);
    }

    #[test]
    fn unknown_keys_and_type_mismatches_are_errors() {
        let text = GOOD.replace("b = 0.2", "b = fast\ncolour = blue");
        let e = config_errors(&text);
        assert!(e.iter().any(|c| c.key == "colour" && c.reason == "unknown key"));
        assert!(e.iter().any(|c| c.key == "b" && c.reason.contains("real number")));
    }

    #[test]
    fn zero_paths_is_a_validation_error() {
        let e = config_errors(&GOOD.replace("paths = 100", "paths = 0"));
        assert!(e.iter().any(|c| c.section == "paths" && c.key == "paths"));
    }

    #[test]
    fn subcommands_name_missing_sections() {
        let sc = parse(GOOD).unwrap();
        assert!(sc.require("basis").is_ok());
        match sc.require("compare") {
            Err(Error::Config(e)) => {
                let names: Vec<&str> = e.iter().map(|c| c.section.as_str()).collect();
                assert_eq!(names, ["lattice", "mc", "grid"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
