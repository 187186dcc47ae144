//! Drivers `f(t, w, y, z)` with their declared constants.
//!
//! A generator is any total function of `(point, y, z)`; integrability and
//! continuity in `y` are vacuous for finite evaluations. What is checked is
//! the declared monotonicity constant `mu`,
//! `(f(y, z) - f(y', z)) (y - y') <= mu |y - y'|^2`, and the declared
//! Lipschitz constant `lambda` in `z` with respect to `||.||_{M_t}`,
//! `|f(y, z) - f(y, z')| <= lambda ||z - z'||_{M_t}`.
//! [`Generator::probe`] spot-checks both by random sampling.
//!
//! The driver must be progressively measurable: the solvers evaluate it once
//! per atom at the atom's first outcome.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filtration::FilteredSpace;
use crate::martrep::{MartingaleBasis, ZCoefficients};
use crate::process::AdaptedProcess;

/// Where a driver is evaluated.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub outcome: usize,
    pub atom: usize,
    /// Bracket densities `m^i_k` of the atom (length `d*`).
    pub densities: &'a [f64],
}

impl Point<'_> {
    /// `||z||_{M_t}` at this point.
    pub fn m_norm(&self, z: &[f64]) -> f64 {
        self.densities
            .iter()
            .zip(z)
            .map(|(m, zi)| zi * zi * m)
            .sum::<f64>()
            .sqrt()
    }
}

type DriverFn = dyn Fn(&Point<'_>, f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct Generator {
    name: String,
    mu: f64,
    lambda: f64,
    depends_on_z: bool,
    eval: Arc<DriverFn>,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("lambda", &self.lambda)
            .field("depends_on_z", &self.depends_on_z)
            .finish()
    }
}

impl Generator {
    pub fn new<F>(name: impl Into<String>, mu: f64, lambda: f64, depends_on_z: bool, eval: F) -> Self
    where
        F: Fn(&Point<'_>, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            mu,
            lambda,
            depends_on_z,
            eval: Arc::new(eval),
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", 0.0, 0.0, false, |_, _, _| 0.0)
    }

    /// `f = a y + b`.
    pub fn linear(a: f64, b: f64) -> Self {
        Self::new("linear_y", a.max(0.0), 0.0, false, move |_, y, _| a * y + b)
    }

    /// `f = -c y^3 + b`, `c >= 0`.
    pub fn cubic(c: f64, b: f64) -> Self {
        Self::new("cubic", 0.0, 0.0, false, move |_, y, _| -c * y * y * y + b)
    }

    /// `f = a y + b z^1 sqrt(m^1) + c`; Lipschitz in `z` with `lambda = |b|`.
    pub fn z_linear(a: f64, b: f64, c: f64) -> Self {
        Self::new("z_linear", a.max(0.0), b.abs(), true, move |pt, y, z| {
            let zz = z.first().copied().unwrap_or(0.0);
            let m = pt.densities.first().copied().unwrap_or(0.0);
            a * y + b * zz * m.sqrt() + c
        })
    }

    /// `f = n (y - l)^- - m (y - u)^+` for constant levels `l <= u`.
    pub fn two_sided_penalty(n: f64, m: f64, l: f64, u: f64) -> Self {
        Self::new("two_sided_penalty", 0.0, 0.0, false, move |_, y, _| {
            n * (l - y).max(0.0) - m * (y - u).max(0.0)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn depends_on_z(&self) -> bool {
        self.depends_on_z
    }

    pub fn eval(&self, at: &Point<'_>, y: f64, z: &[f64]) -> f64 {
        (self.eval)(at, y, z)
    }

    /// `f + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.clone();
        Self {
            name: format!("{}+{c}", self.name),
            eval: Arc::new(move |pt, y, z| inner.eval(pt, y, z) + c),
            ..self.clone()
        }
    }

    /// `f(t, y, H_t)` with `H` frozen; no longer depends on `z`.
    pub fn frozen(&self, h: Arc<ZCoefficients>) -> Self {
        let inner = self.clone();
        Self {
            name: format!("{}|frozen", self.name),
            depends_on_z: false,
            lambda: 0.0,
            eval: Arc::new(move |pt, y, _| inner.eval(pt, y, h.get(pt.step, pt.atom))),
            ..self.clone()
        }
    }

    /// `f + n (y - L)^- - m (y - U)^+` with barrier processes read at the
    /// evaluation point. Penalties only lower the monotonicity constant.
    pub fn penalized(
        &self,
        n: f64,
        lower: Option<Arc<AdaptedProcess>>,
        m: f64,
        upper: Option<Arc<AdaptedProcess>>,
    ) -> Self {
        let inner = self.clone();
        Self {
            name: format!("{}+pen({n},{m})", self.name),
            eval: Arc::new(move |pt, y, z| {
                let mut v = inner.eval(pt, y, z);
                if let Some(l) = &lower {
                    v += n * (l.at(pt.step, pt.outcome) - y).max(0.0);
                }
                if let Some(u) = &upper {
                    v -= m * (y - u.at(pt.step, pt.outcome)).max(0.0);
                }
                v
            }),
            ..self.clone()
        }
    }

    /// Randomized spot check of the declared `mu` and `lambda` on the
    /// space's grid. `y` is sampled in `[-y_range, y_range]`.
    pub fn probe(&self, space: &FilteredSpace, basis: &MartingaleBasis, seed: u64, samples: usize, y_range: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = basis.basis_count();
        for _ in 0..samples {
            let k = rng.gen_range(0..space.steps());
            let a = rng.gen_range(0..space.n_atoms(k));
            let dens = basis.densities(k, a);
            let pt = Point {
                step: k,
                time: space.time(k),
                dt: space.dt(k),
                outcome: space.representative(k, a),
                atom: a,
                densities: &dens,
            };
            let y1 = rng.gen_range(-y_range..=y_range);
            let y2 = rng.gen_range(-y_range..=y_range);
            let z1: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..=5.0)).collect();
            let z2: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..=5.0)).collect();
            let f11 = self.eval(&pt, y1, &z1);
            let f21 = self.eval(&pt, y2, &z1);
            let f12 = self.eval(&pt, y1, &z2);
            let scale = 1e-9 * (1.0 + f11.abs() + f21.abs() + f12.abs());
            let lhs = (f11 - f21) * (y1 - y2);
            let rhs = self.mu * (y1 - y2).powi(2);
            if lhs > rhs + scale * (y1 - y2).abs() {
                return Err(Error::GeneratorDeclaration {
                    name: self.name.clone(),
                    constant: "monotonicity mu",
                    detail: format!("step {k}, y = {y1}, y' = {y2}: {lhs} > {rhs}"),
                });
            }
            let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
            let lip = self.lambda * pt.m_norm(&dz);
            if (f11 - f12).abs() > lip + scale {
                return Err(Error::GeneratorDeclaration {
                    name: self.name.clone(),
                    constant: "z-Lipschitz lambda",
                    detail: format!("step {k}: |df| = {} > {lip}", (f11 - f12).abs()),
                });
            }
            if !self.depends_on_z && f11 != f12 {
                return Err(Error::GeneratorDeclaration {
                    name: self.name.clone(),
                    constant: "z-independence",
                    detail: format!("step {k}: value changes with z"),
                });
            }
        }
        Ok(())
    }
}

type Builder = fn(&Value) -> Result<Generator>;

/// Named generator constructors, parameterized by a JSON record.
#[derive(Clone)]
pub struct GeneratorRegistry {
    builders: BTreeMap<String, Builder>,
}

fn param(params: &Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| Error::Config {
            key: format!("generator.params.{key}"),
            message: format!("expected a number, got {v}"),
        }),
    }
}

impl Default for GeneratorRegistry {
    fn default() -> Self {
        let mut builders: BTreeMap<String, Builder> = BTreeMap::new();
        builders.insert("zero".into(), |_| Ok(Generator::zero()));
        builders.insert("linear_y".into(), |p| {
            Ok(Generator::linear(param(p, "a", -1.0)?, param(p, "b", 0.0)?))
        });
        builders.insert("cubic".into(), |p| {
            let c = param(p, "c", 1.0)?;
            if c < 0.0 {
                return Err(Error::Config {
                    key: "generator.params.c".into(),
                    message: "cubic coefficient must be nonnegative".into(),
                });
            }
            Ok(Generator::cubic(c, param(p, "b", 0.0)?))
        });
        builders.insert("z_linear".into(), |p| {
            Ok(Generator::z_linear(param(p, "a", -1.0)?, param(p, "b", 0.5)?, param(p, "c", 0.0)?))
        });
        builders.insert("two_sided_penalty".into(), |p| {
            let (l, u) = (param(p, "l", -1.0)?, param(p, "u", 1.0)?);
            if l > u {
                return Err(Error::Config {
                    key: "generator.params".into(),
                    message: format!("l = {l} exceeds u = {u}"),
                });
            }
            Ok(Generator::two_sided_penalty(param(p, "n", 1.0)?, param(p, "m", 1.0)?, l, u))
        });
        Self { builders }
    }
}

impl GeneratorRegistry {
    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn register(&mut self, name: impl Into<String>, builder: Builder) {
        self.builders.insert(name.into(), builder);
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Generator> {
        let builder = self.builders.get(name).ok_or_else(|| Error::Config {
            key: "generator.name".into(),
            message: format!("unknown generator `{name}` (known: {})", self.names().join(", ")),
        })?;
        builder(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> (FilteredSpace, MartingaleBasis) {
        let s = FilteredSpace::tree(vec![0.0, 0.5, 1.0], |_, _| vec![0.2, 0.3, 0.5]).unwrap();
        let b = MartingaleBasis::build(&s);
        (s, b)
    }

    #[test]
    fn registry_generators_honour_their_declarations() {
        let (s, b) = space();
        let reg = GeneratorRegistry::default();
        assert_eq!(reg.names(), ["cubic", "linear_y", "two_sided_penalty", "z_linear", "zero"]);
        let params = serde_json::json!({"a": 0.7, "b": -0.4});
        for name in reg.names() {
            let g = reg.build(name, &params).unwrap();
            g.probe(&s, &b, 7, 2000, 3.0).unwrap();
        }
    }

    #[test]
    fn probe_catches_false_declarations() {
        let (s, b) = space();
        let liar = Generator::new("liar", 0.0, 0.0, false, |_, y, _| 2.0 * y);
        assert!(matches!(
            liar.probe(&s, &b, 1, 100, 1.0),
            Err(Error::GeneratorDeclaration { constant: "monotonicity mu", .. })
        ));
        let z_liar = Generator::new("z", 0.0, 0.1, true, |pt, _, z| 2.0 * z[0] * pt.densities[0].sqrt());
        assert!(z_liar.probe(&s, &b, 1, 100, 1.0).is_err());
    }

    #[test]
    fn unknown_generator_is_a_config_error() {
        let reg = GeneratorRegistry::default();
        let err = reg.build("nope", &Value::Null).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "generator.name"));
    }

    #[test]
    fn penalized_adds_both_terms() {
        let (s, _) = space();
        let l = Arc::new(AdaptedProcess::constant(&s, 1.0));
        let u = Arc::new(AdaptedProcess::constant(&s, 2.0));
        let g = Generator::zero().penalized(10.0, Some(l), 3.0, Some(u));
        let pt = Point { step: 0, time: 0.0, dt: 0.5, outcome: 0, atom: 0, densities: &[] };
        assert_eq!(g.eval(&pt, 0.5, &[]), 5.0);
        assert_eq!(g.eval(&pt, 1.5, &[]), 0.0);
        assert_eq!(g.eval(&pt, 3.0, &[]), -3.0);
    }
}
