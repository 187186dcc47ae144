//! Scenario configurations and the run pipeline behind the command line.
//!
//! A scenario is a JSON document naming a model (a filtered space plus its
//! natural state process), the equation data, the generator, the solver, the
//! checks to assert and where to write the reports. Missing data fall back to
//! the model's defaults where it has them (the two-point counterexample) or to
//! a random preset drawn from the scenario seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{canonical_bound, check_lp_estimate, jump_formula_check, EmpiricalConstants};
use crate::dynkin::{game_value_enum, game_value_induction, GamePayoff};
use crate::error::{Error, Result};
use crate::filtration::{counterexample_space, FilteredSpace, SpaceFile};
use crate::generator::{Generator, GeneratorRegistry};
use crate::martrep::MartingaleBasis;
use crate::process::{AdaptedProcess, FvDecomposition};
use crate::random::{self, TreeShape};
use crate::rbsde::{
    driver_along, dyadic_schedule, penalization_sweep, solve_penalized, solve_picard, solve_reflected, verify_solution,
    ConvergenceReport, PicardConfig, RbsdeInput, Solution,
};
use crate::report::solution_csv;
use crate::snell::{check_identity_20b, check_identity_2b, snell_oracle, SnellProblem};
use crate::suites::{SuiteReport, SuiteRow, INVARIANT_TOL};

fn one() -> f64 {
    1.0
}

fn hundred() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: Model,
    #[serde(default)]
    pub data: DataConfig,
    /// Overrides the preset's generator; `zero` when neither is given.
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Dyadic penalty exponents for the convergence sweep.
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub checks: Vec<String>,
    /// Output directory; the caller's choice when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    /// Two outcomes of probability 1/2 revealed at grid index 1 of 2.
    Counterexample,
    /// Path space of `steps` up/down moves; the state is
    /// `S = s0 up^(#ups) down^(#downs)`.
    Binomial {
        steps: usize,
        #[serde(default = "one")]
        dt: f64,
        up: f64,
        down: f64,
        p: f64,
        #[serde(default = "hundred")]
        s0: f64,
    },
    /// Up, middle, down moves with factors `up`, 1, `1/up`.
    Trinomial {
        steps: usize,
        #[serde(default = "one")]
        dt: f64,
        up: f64,
        probs: [f64; 3],
        #[serde(default = "hundred")]
        s0: f64,
    },
    RandomTree {
        seed: u64,
        depth: usize,
        max_branch: usize,
        #[serde(default = "one")]
        dt: f64,
    },
    /// A space file given inline or by path (relative to the config file).
    Explicit { space: SpaceSource },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSource {
    Inline(SpaceFile),
    Path(PathBuf),
}

/// Equation data. Each entry is interpreted by [`DataConfig`] rules:
/// a number is a constant; `xi` takes an array over outcomes, processes an
/// array of per-step rows over outcomes; `{"by_outcome": {id: ...}}` keys the
/// same values by outcome id; `{"put": K}` / `{"call": K}` are payoffs of the
/// model's state, with an optional `"plus": c` shift; `{"uniform": [lo, hi]}`
/// draws from the scenario seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `one_barrier`, `two_barrier`, `two_barrier_walk` or
    /// `semimartingale_barrier`: random data (and generator) from the seed.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub xi: Option<Value>,
    #[serde(default)]
    pub v: Option<Value>,
    #[serde(default)]
    pub lower: Option<Value>,
    #[serde(default)]
    pub upper: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    #[default]
    Projection,
    Penalization { n: f64, m: f64 },
    Picard {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_windows")]
        windows: usize,
    },
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    50
}

fn default_windows() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub from: u32,
    pub to: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { from: 4, to: 12 }
    }
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    /// Parses a config; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            config_err(key, e.into_inner().to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Known check names, in report order.
pub const CHECKS: [&str; 9] = [
    "invariants",
    "identity_2B",
    "identity_20B_violation",
    "snell_oracle",
    "dynkin",
    "penalization_sweep",
    "jump_formula",
    "picard_vs_direct",
    "lp_estimate",
];

/// Built-in scenarios by name.
#[derive(Clone)]
pub struct ScenarioRegistry {
    entries: BTreeMap<String, fn() -> ScenarioConfig>,
}

impl Default for ScenarioRegistry {
    fn default() -> Self {
        let mut entries: BTreeMap<String, fn() -> ScenarioConfig> = BTreeMap::new();
        entries.insert("counterexample".into(), counterexample_scenario);
        entries.insert("american-put-binomial".into(), american_put_scenario);
        entries.insert("two-barrier-random".into(), two_barrier_scenario);
        entries.insert("trinomial-game".into(), trinomial_game_scenario);
        entries.insert("z-linear-binomial".into(), z_linear_scenario);
        Self { entries }
    }
}

impl ScenarioRegistry {
    /// Sorted names.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn register(&mut self, name: impl Into<String>, build: fn() -> ScenarioConfig) {
        self.entries.insert(name.into(), build);
    }

    pub fn get(&self, name: &str) -> Option<ScenarioConfig> {
        self.entries.get(name).map(|f| f())
    }
}

fn base(name: &str, model: Model) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        model,
        data: DataConfig::default(),
        generator: None,
        solver: SolverConfig::Projection,
        sweep: None,
        checks: Vec::new(),
        output: None,
        seed: 0,
    }
}

fn counterexample_scenario() -> ScenarioConfig {
    ScenarioConfig {
        checks: ["identity_2B", "identity_20B_violation", "invariants", "snell_oracle"]
            .map(String::from)
            .to_vec(),
        ..base("counterexample", Model::Counterexample)
    }
}

fn american_put_scenario() -> ScenarioConfig {
    let mut c = base(
        "american-put-binomial",
        Model::Binomial {
            steps: 4,
            dt: 0.25,
            up: 1.1,
            down: 1.0 / 1.1,
            p: 0.5,
            s0: 100.0,
        },
    );
    c.data.xi = Some(serde_json::json!({"put": 100.0}));
    c.data.lower = Some(serde_json::json!({"put": 100.0}));
    // discounting at rate 0.05
    c.generator = Some(GeneratorConfig {
        name: "linear_y".into(),
        params: serde_json::json!({"a": -0.05, "b": 0.0}),
    });
    c.sweep = Some(SweepConfig::default());
    c.checks = ["invariants", "identity_2B", "snell_oracle", "penalization_sweep", "jump_formula"]
        .map(String::from)
        .to_vec();
    c
}

fn two_barrier_scenario() -> ScenarioConfig {
    let mut c = base(
        "two-barrier-random",
        Model::RandomTree {
            seed: 11,
            depth: 4,
            max_branch: 3,
            dt: 1.0,
        },
    );
    c.data.preset = Some("two_barrier_walk".into());
    c.seed = 11;
    c.sweep = Some(SweepConfig::default());
    c.checks = ["invariants", "dynkin", "penalization_sweep"].map(String::from).to_vec();
    c
}

fn trinomial_game_scenario() -> ScenarioConfig {
    let mut c = base(
        "trinomial-game",
        Model::Trinomial {
            steps: 3,
            dt: 0.25,
            up: 1.15,
            probs: [0.3, 0.4, 0.3],
            s0: 100.0,
        },
    );
    // cancellable put: the writer may cancel by paying the payoff plus 5
    c.data.xi = Some(serde_json::json!({"put": 100.0}));
    c.data.lower = Some(serde_json::json!({"put": 100.0}));
    c.data.upper = Some(serde_json::json!({"put": 100.0, "plus": 5.0}));
    c.checks = ["invariants", "dynkin", "jump_formula"].map(String::from).to_vec();
    c
}

fn z_linear_scenario() -> ScenarioConfig {
    let mut c = base(
        "z-linear-binomial",
        Model::Binomial {
            steps: 8,
            dt: 0.125,
            up: 1.1,
            down: 1.0 / 1.1,
            p: 0.5,
            s0: 100.0,
        },
    );
    c.data.xi = Some(serde_json::json!({"call": 100.0}));
    c.data.lower = Some(serde_json::json!({"call": 100.0}));
    c.generator = Some(GeneratorConfig {
        name: "z_linear".into(),
        params: serde_json::json!({"a": -0.05, "b": 0.4, "c": 0.0}),
    });
    c.solver = SolverConfig::Picard {
        tol: 1e-12,
        max_iter: 50,
        windows: 2,
    };
    c.checks = ["invariants", "picard_vs_direct", "lp_estimate"].map(String::from).to_vec();
    c
}

/// A model realized: the space and its state process (when it has one).
struct Built {
    space: FilteredSpace,
    state: Option<AdaptedProcess>,
}

fn lattice(steps: usize, dt: f64, probs: Vec<f64>, factors: Vec<f64>, s0: f64, key: &str) -> Result<Built> {
    if steps == 0 {
        return Err(config_err(format!("model.{key}.steps"), "needs at least one step"));
    }
    if !(dt > 0.0) {
        return Err(config_err(format!("model.{key}.dt"), "must be positive"));
    }
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(config_err(format!("model.{key}"), "move probabilities must lie in (0, 1) and sum to 1"));
    }
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    let space = FilteredSpace::tree(times, |_, _| probs.clone())?;
    let state = AdaptedProcess::from_atoms(&space, |k, a| {
        let w = space.representative(k, a);
        (0..k).map(|j| factors[space.child_position(j, w)]).product::<f64>() * s0
    });
    Ok(Built {
        space,
        state: Some(state),
    })
}

fn build_model(model: &Model, base_dir: &Path) -> Result<Built> {
    match model {
        Model::Counterexample => Ok(Built {
            space: counterexample_space(),
            state: None,
        }),
        Model::Binomial {
            steps,
            dt,
            up,
            down,
            p,
            s0,
        } => {
            if !(up > down && *down > 0.0) {
                return Err(config_err("model.binomial", "need 0 < down < up"));
            }
            lattice(*steps, *dt, vec![*p, 1.0 - p], vec![*up, *down], *s0, "binomial")
        }
        Model::Trinomial {
            steps,
            dt,
            up,
            probs,
            s0,
        } => {
            if !(*up > 1.0) {
                return Err(config_err("model.trinomial.up", "must exceed 1"));
            }
            lattice(*steps, *dt, probs.to_vec(), vec![*up, 1.0, 1.0 / up], *s0, "trinomial")
        }
        Model::RandomTree {
            seed,
            depth,
            max_branch,
            dt,
        } => {
            if *depth == 0 || *max_branch == 0 {
                return Err(config_err("model.random_tree", "depth and max_branch must be positive"));
            }
            if !(*dt > 0.0) {
                return Err(config_err("model.random_tree.dt", "must be positive"));
            }
            let mut rng = random::rng(*seed);
            let space = random::random_tree(&mut rng, TreeShape::new(*depth, *max_branch).with_dt(*dt))?;
            Ok(Built { space, state: None })
        }
        Model::Explicit { space } => {
            let space = match space {
                SpaceSource::Inline(file) => FilteredSpace::from_file(file.clone()),
                SpaceSource::Path(p) => {
                    let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| config_err("model.space", format!("{}: {e}", path.display())))?;
                    FilteredSpace::from_json(&text)
                }
            }
            .map_err(|e| match e {
                Error::Config { .. } => e,
                other => config_err("model.space", other.to_string()),
            })?;
            Ok(Built { space, state: None })
        }
    }
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| config_err(key, format!("expected a number, got {v}")))
}

fn as_array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| config_err(key, format!("expected an array, got {v}")))
}

fn numbers(v: &Value, key: &str, len: usize) -> Result<Vec<f64>> {
    let arr = as_array(v, key)?;
    if arr.len() != len {
        return Err(config_err(key, format!("expected {len} entries, got {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{key}[{i}]")))
        .collect()
}

/// Per-step rows over outcomes for process entries; a single row for `xi`.
fn interpret(
    space: &FilteredSpace,
    state: Option<&AdaptedProcess>,
    v: &Value,
    key: &str,
    rng: &mut random::Rng64,
) -> Result<Vec<Vec<f64>>> {
    let n = space.steps();
    let outcomes = space.n_outcomes();
    let terminal = key == "data.xi";
    let rows = if terminal { 1 } else { n + 1 };
    if let Some(c) = v.as_f64() {
        return Ok(vec![vec![c; outcomes]; rows]);
    }
    if let Some(arr) = v.as_array() {
        if terminal {
            return Ok(vec![numbers(v, key, outcomes)?]);
        }
        if arr.len() != n + 1 {
            return Err(config_err(key, format!("expected {} per-step rows, got {}", n + 1, arr.len())));
        }
        return arr
            .iter()
            .enumerate()
            .map(|(k, row)| numbers(row, &format!("{key}[{k}]"), outcomes))
            .collect();
    }
    let obj = v
        .as_object()
        .ok_or_else(|| config_err(key, format!("unsupported value {v}")))?;
    let known = ["by_outcome", "put", "call", "plus", "uniform"];
    if let Some(bad) = obj.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(config_err(format!("{key}.{bad}"), format!("unknown entry (known: {})", known.join(", "))));
    }
    let plus = match obj.get("plus") {
        Some(p) => as_f64(p, &format!("{key}.plus"))?,
        None => 0.0,
    };
    let shifted = |mut out: Vec<Vec<f64>>| {
        for x in out.iter_mut().flatten() {
            *x += plus;
        }
        out
    };
    if let Some(map) = obj.get("by_outcome") {
        let map = map
            .as_object()
            .ok_or_else(|| config_err(format!("{key}.by_outcome"), "expected an object keyed by outcome id"))?;
        let mut out = vec![vec![f64::NAN; outcomes]; rows];
        for (id, val) in map {
            let sub = format!("{key}.by_outcome.{id}");
            let w = space
                .outcome_index(id)
                .ok_or_else(|| config_err(&sub, "unknown outcome id"))?;
            if terminal {
                out[0][w] = as_f64(val, &sub)?;
            } else {
                for (k, x) in numbers(val, &sub, n + 1)?.into_iter().enumerate() {
                    out[k][w] = x;
                }
            }
        }
        if let Some(w) = (0..outcomes).find(|&w| out[0][w].is_nan()) {
            return Err(config_err(
                format!("{key}.by_outcome"),
                format!("missing outcome `{}`", space.ids()[w]),
            ));
        }
        return Ok(shifted(out));
    }
    for (name, sign) in [("put", 1.0), ("call", -1.0)] {
        if let Some(strike) = obj.get(name) {
            let strike = as_f64(strike, &format!("{key}.{name}"))?;
            let s = state.ok_or_else(|| config_err(format!("{key}.{name}"), "this model has no state process"))?;
            let pay = |x: f64| (sign * (strike - x)).max(0.0);
            let out = if terminal {
                vec![s.terminal().iter().map(|&x| pay(x)).collect()]
            } else {
                s.rows().iter().map(|row| row.iter().map(|&x| pay(x)).collect()).collect()
            };
            return Ok(shifted(out));
        }
    }
    if let Some(range) = obj.get("uniform") {
        let sub = format!("{key}.uniform");
        let r = numbers(range, &sub, 2)?;
        if !(r[0] < r[1]) {
            return Err(config_err(sub, "need lo < hi"));
        }
        let out = if terminal {
            vec![random::terminal(space, rng, r[0], r[1])]
        } else {
            random::adapted(space, rng, r[0], r[1]).rows().to_vec()
        };
        return Ok(shifted(out));
    }
    Err(config_err(key, "expected one of by_outcome, put, call, uniform"))
}

fn process(space: &FilteredSpace, rows: Vec<Vec<f64>>, key: &str) -> Result<AdaptedProcess> {
    AdaptedProcess::new(space, rows).map_err(|e| config_err(key, e.to_string()))
}

/// Input assembled from the config; `v` entries are taken as the process
/// itself (its value at 0 must be 0).
fn build_input(config: &ScenarioConfig, built: &Built) -> Result<RbsdeInput> {
    let space = &built.space;
    let mut rng = random::rng(config.seed);
    let registry = GeneratorRegistry::default();
    let explicit_generator = config
        .generator
        .as_ref()
        .map(|g| registry.build(&g.name, &g.params))
        .transpose()?;

    let mut input = match config.data.preset.as_deref() {
        None => {
            let xi = match (&config.data.xi, &config.model) {
                (Some(v), _) => interpret(space, built.state.as_ref(), v, "data.xi", &mut rng)?.remove(0),
                (None, Model::Counterexample) => space.ids().iter().map(|id| if id == "w1" { 5.0 } else { 1.0 }).collect(),
                (None, _) => return Err(config_err("data.xi", "missing terminal value")),
            };
            let mut input = RbsdeInput::new(space, xi, Generator::zero());
            if config.data.lower.is_none() && matches!(config.model, Model::Counterexample) {
                input = input.with_lower(AdaptedProcess::from_atoms(space, |k, _| if k == 0 { 2.0 } else { 0.0 }));
            }
            input
        }
        Some(name) => {
            let mut input = match name {
                "one_barrier" => random::one_barrier(space, &mut rng),
                "two_barrier" => random::two_barrier(space, &mut rng),
                "two_barrier_walk" => random::two_barrier_walk(space, &mut rng),
                "semimartingale_barrier" => random::semimartingale_barrier(space, &mut rng).input,
                other => {
                    return Err(config_err(
                        "data.preset",
                        format!("unknown preset `{other}` (known: one_barrier, two_barrier, two_barrier_walk, semimartingale_barrier)"),
                    ))
                }
            };
            if let Some(v) = &config.data.xi {
                input.xi = interpret(space, built.state.as_ref(), v, "data.xi", &mut rng)?.remove(0);
            }
            input
        }
    };
    if let Some(g) = explicit_generator {
        input.generator = g;
    }
    if let Some(v) = &config.data.v {
        input.v = process(space, interpret(space, built.state.as_ref(), v, "data.v", &mut rng)?, "data.v")?;
    }
    if let Some(v) = &config.data.lower {
        input.lower = Some(process(space, interpret(space, built.state.as_ref(), v, "data.lower", &mut rng)?, "data.lower")?);
    }
    if let Some(v) = &config.data.upper {
        input.upper = Some(process(space, interpret(space, built.state.as_ref(), v, "data.upper", &mut rng)?, "data.upper")?);
    }
    input.validate(space).map_err(|e| config_err("data", e.to_string()))?;
    Ok(input)
}

/// Everything a run produces, as in-memory CSV text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub name: String,
    pub solution_csv: String,
    /// Present when a penalization sweep ran.
    pub convergence_csv: Option<String>,
    /// Present when checks were requested.
    pub report: Option<SuiteReport>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_none_or(SuiteReport::all_pass)
    }

    /// One line naming the first failed assertion.
    pub fn failure_cause(&self) -> Option<String> {
        let row = self.report.as_ref()?.failures().into_iter().next()?;
        Some(format!(
            "scenario `{}`: check `{}` failed: worst {:e} exceeds {:e}",
            self.name, row.check, row.worst, row.threshold
        ))
    }

    /// Writes `<name>.solution.csv`, and the convergence and report CSVs when
    /// present, into `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |suffix: &str, text: &str| -> Result<()> {
            let p = dir.join(format!("{}.{suffix}.csv", self.name));
            std::fs::write(&p, text)?;
            files.push(p);
            Ok(())
        };
        put("solution", &self.solution_csv)?;
        if let Some(c) = &self.convergence_csv {
            put("convergence", c)?;
        }
        if let Some(r) = &self.report {
            put("report", &r.to_csv()?)?;
        }
        Ok(files)
    }
}

fn with_context(name: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::InvalidArgument(format!("scenario `{name}`: {other}")),
    }
}

fn solve(config: &ScenarioConfig, space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput) -> Result<Solution> {
    match config.solver {
        SolverConfig::Projection => solve_reflected(space, basis, input),
        SolverConfig::Penalization { n, m } => {
            let p = solve_penalized(space, basis, input, n, m)?;
            Ok(Solution {
                y: p.y,
                z: p.z,
                m: p.m,
                r: FvDecomposition { plus: p.k, minus: p.a },
            })
        }
        SolverConfig::Picard { tol, max_iter, windows } => Ok(solve_picard(
            space,
            basis,
            input,
            PicardConfig {
                tol,
                max_iter,
                windows,
            },
        )?
        .solution),
    }
}

/// Runs the pipeline in memory. `force_sweep` adds the penalization sweep
/// even when no check asks for it.
pub fn execute(config: &ScenarioConfig, base_dir: &Path, force_sweep: bool) -> Result<RunOutput> {
    if let Some((i, bad)) = config.checks.iter().enumerate().find(|(_, c)| !CHECKS.contains(&c.as_str())) {
        return Err(config_err(
            format!("checks[{i}]"),
            format!("unknown check `{bad}` (known: {})", CHECKS.join(", ")),
        ));
    }
    let built = build_model(&config.model, base_dir)?;
    let input = build_input(config, &built)?;
    let space = &built.space;
    let basis = MartingaleBasis::build(space);
    let name = &config.name;
    let sol = solve(config, space, &basis, &input).map_err(|e| with_context(name, e))?;

    let wants = |c: &str| config.checks.iter().any(|x| x == c);
    let mut convergence = None;
    if force_sweep || wants("penalization_sweep") {
        let sw = config.sweep.unwrap_or_default();
        if sw.from > sw.to || sw.to > 30 {
            return Err(config_err("sweep", "need from <= to <= 30"));
        }
        convergence = Some(
            penalization_sweep(space, &basis, &input, &dyadic_schedule(sw.from, sw.to)).map_err(|e| with_context(name, e))?,
        );
    }
    let report = if config.checks.is_empty() {
        None
    } else {
        let mut rows = Vec::new();
        for check in CHECKS.iter().filter(|c| wants(c)) {
            rows.extend(run_check(check, space, &basis, &input, &sol, convergence.as_ref()).map_err(|e| with_context(name, e))?);
        }
        Some(SuiteReport { rows })
    };
    Ok(RunOutput {
        name: name.clone(),
        solution_csv: solution_csv(space, &sol)?,
        convergence_csv: convergence.as_ref().map(ConvergenceReport::to_csv).transpose()?,
        report,
    })
}

fn single(check: impl Into<String>, value: f64, threshold: f64) -> SuiteRow {
    SuiteRow::at_most(check, &[value], threshold)
}

/// The optimal-stopping problem the solution must solve when `f` is folded
/// into the running reward.
fn stopping_problem(space: &FilteredSpace, basis: &MartingaleBasis, input: &RbsdeInput, sol: &Solution) -> Result<SnellProblem> {
    let lower = input
        .lower
        .clone()
        .ok_or_else(|| Error::InvalidArgument("needs a lower barrier".into()))?;
    let f = driver_along(space, basis, &input.generator, sol);
    let mut rows = vec![input.v.step(0).to_vec()];
    let mut acc = vec![0.0; space.n_outcomes()];
    for k in 1..=space.steps() {
        for (w, a) in acc.iter_mut().enumerate() {
            *a += f.at(k - 1, w) * space.dt(k - 1);
        }
        rows.push((0..space.n_outcomes()).map(|w| input.v.at(k, w) + acc[w]).collect());
    }
    Ok(SnellProblem::new(space, lower, input.xi.clone()).with_v(AdaptedProcess::new(space, rows)?))
}

const ORACLE_LIMIT: u128 = 1_000_000;

fn run_check(
    check: &str,
    space: &FilteredSpace,
    basis: &MartingaleBasis,
    input: &RbsdeInput,
    sol: &Solution,
    convergence: Option<&ConvergenceReport>,
) -> Result<Vec<SuiteRow>> {
    Ok(match check {
        "invariants" => vec![single("invariants", verify_solution(space, basis, input, sol).max(), INVARIANT_TOL)],
        "identity_2B" => {
            let p = stopping_problem(space, basis, input, sol)?;
            vec![single("identity_2B", check_identity_2b(space, &p, &sol.y)?.max, 1e-10)]
        }
        // A measurement: the pathwise identity is not expected to hold, so
        // each outcome's deviation is reported without a bound.
        "identity_20B_violation" => {
            let p = stopping_problem(space, basis, input, sol)?;
            let v = check_identity_20b(space, &p, &sol.y)?;
            space
                .ids()
                .iter()
                .zip(&v.per_outcome)
                .map(|(id, x)| single(format!("identity_20B_violation[{id}]"), *x, f64::INFINITY))
                .collect()
        }
        "snell_oracle" => {
            if input.upper.is_some() {
                return Err(Error::InvalidArgument("snell_oracle needs a single lower barrier".into()));
            }
            let p = stopping_problem(space, basis, input, sol)?;
            let o = snell_oracle(space, &p, 0, ORACLE_LIMIT)?;
            vec![single("snell_oracle", (o.values[0] - sol.y.at(0, 0)).abs(), 1e-10)]
        }
        "dynkin" => {
            let gp = GamePayoff::new(space, basis, input, sol, 0)?;
            let w = game_value_induction(space, &gp)?;
            let g = game_value_enum(space, &gp, ORACLE_LIMIT)?;
            let y0 = sol.y.at(0, 0);
            vec![
                single("dynkin_lower_vs_upper", (g.lower[0] - g.upper[0]).abs(), 1e-10),
                single("dynkin_enum_vs_solver", (g.lower[0] - y0).abs().max((g.upper[0] - y0).abs()), 1e-10),
                single("dynkin_induction_vs_solver", w.max_abs_diff(&sol.y), 1e-10),
            ]
        }
        "penalization_sweep" => {
            let c = convergence.expect("sweep runs before checks");
            vec![
                single("penalization_error_not_decreasing", f64::from(u8::from(!c.strictly_decreasing_from(0))), 0.0),
                single("penalization_monotonicity_failures", f64::from(u8::from(!c.monotone())), 0.0),
                single("penalization_last_rung_error", c.last().max_err_y, f64::INFINITY),
            ]
        }
        "jump_formula" => {
            let r = jump_formula_check(space, basis, input, sol)?;
            vec![single("jump_formula_excess", r.worst_deviation - r.tolerance, 1e-12)]
        }
        "picard_vs_direct" => {
            let direct = solve_reflected(space, basis, input)?;
            let pic = solve_picard(space, basis, input, PicardConfig::default())?;
            vec![single(
                "picard_vs_direct",
                pic.solution.y.max_abs_diff(&direct.y).max(pic.solution.z.sub(&direct.z).max_abs()),
                1e-9,
            )]
        }
        "lp_estimate" => {
            let constants = EmpiricalConstants::bundled()?;
            let g = &input.generator;
            let alpha = if g.depends_on_z() { g.mu() + g.lambda().powi(2) } else { g.mu() };
            let fb = canonical_bound(space, basis, g, sol);
            let r = check_lp_estimate(space, basis, input, sol, 2.0, alpha, &fb)?;
            vec![single("lp_estimate_p2", r.ratio, constants.star("2")?)]
        }
        other => unreachable!("unvalidated check {other}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(c: &ScenarioConfig) -> RunOutput {
        execute(c, Path::new("."), false).unwrap()
    }

    #[test]
    fn builtins_parse_round_trip() {
        let reg = ScenarioRegistry::default();
        for name in reg.names() {
            let c = reg.get(name).unwrap();
            assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn counterexample_reports_pathwise_violation() {
        let out = run(&ScenarioRegistry::default().get("counterexample").unwrap());
        let rep = out.report.as_ref().unwrap();
        assert!(out.passed(), "{:?}", rep.failures());
        assert_eq!(rep.row("identity_2B").unwrap().worst, 0.0);
        assert_eq!(rep.row("identity_20B_violation[w2]").unwrap().worst, 1.0);
    }

    #[test]
    fn builtins_pass_their_checks() {
        let reg = ScenarioRegistry::default();
        for name in reg.names() {
            let out = run(&reg.get(name).unwrap());
            assert!(out.passed(), "{name}: {:?}", out.failure_cause());
        }
    }

    #[test]
    fn empty_checks_give_solution_only() {
        let mut c = ScenarioRegistry::default().get("counterexample").unwrap();
        c.checks.clear();
        let out = run(&c);
        assert!(out.report.is_none() && out.convergence_csv.is_none());
        assert!(out.passed());
    }

    #[test]
    fn errors_name_the_key() {
        let bad = r#"{"name": "x", "model": {"binomial": {"steps": 2, "up": 1.1, "down": 0.9, "p": "half"}}}"#;
        match ScenarioConfig::from_json(bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.binomial.p"),
            other => panic!("{other:?}"),
        }
        let unknown = r#"{"name": "x", "model": "counterexample", "checks": ["nope"]}"#;
        let c = ScenarioConfig::from_json(unknown).unwrap();
        assert!(matches!(execute(&c, Path::new("."), false), Err(Error::Config { key, .. }) if key == "checks[0]"));
        let short = r#"{"name": "x", "model": "counterexample", "data": {"xi": [1.0]}}"#;
        let c = ScenarioConfig::from_json(short).unwrap();
        assert!(matches!(execute(&c, Path::new("."), false), Err(Error::Config { key, .. }) if key == "data.xi"));
    }

    #[test]
    fn by_outcome_matches_array() {
        let a = r#"{"name": "a", "model": "counterexample", "data": {"xi": [4.0, 0.0]}}"#;
        let b = r#"{"name": "a", "model": "counterexample", "data": {"xi": {"by_outcome": {"w2": 0.0, "w1": 4.0}}}}"#;
        let ra = run(&ScenarioConfig::from_json(a).unwrap());
        let rb = run(&ScenarioConfig::from_json(b).unwrap());
        assert_eq!(ra.solution_csv, rb.solution_csv);
    }
}
