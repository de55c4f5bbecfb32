//! Line-based run configuration: `section.key = value` with `#` comments.
//!
//! Parsing is strict: unknown or duplicate keys are errors, so a typo in a
//! tolerance name cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::assembly::ProblemSpec;
use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::field::DiscreteField;
use crate::field_io::read_field_csv;
use crate::mesh::{build_interval_mesh, build_rectangle_mesh, Mesh};
use crate::reaction::{ExampleReactionParams, ReactionSpec};
use crate::solver::{ArmijoOptions, EpsilonSchedule, SolverOptions};

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "ROBINP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum MeshKind {
    Interval {
        a: f64,
        b: f64,
        n: usize,
    },
    Rectangle {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BetaSpec {
    Constant(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReactionKind {
    Zero,
    /// c x^{p-1}
    Linear {
        coefficient: f64,
    },
    Example {
        eta: f64,
        theta: f64,
        q: f64,
        tau: f64,
        r: f64,
    },
}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: MeshKind,
    pub p: f64,
    pub beta: BetaSpec,
    /// Flux regularization; None keeps the p-dependent default.
    pub delta: Option<f64>,
    /// Perturbation direction e as a field CSV; None means e = 1.
    pub e_file: Option<PathBuf>,
    pub reaction: ReactionKind,
    pub solver: SolverOptions,
    pub eigen_tol: Option<f64>,
    pub eigen_max_iter: usize,
    pub schedule_start: f64,
    pub schedule_ratio: f64,
    pub schedule_steps: usize,
    pub output_dir: PathBuf,
    pub write_fields: bool,
    pub write_mesh: bool,
}

struct KeyStore {
    path: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyStore {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<f64>()
                .map(Some)
                .map_err(|_| validation(key, format!("expected a number, got `{raw}`"))),
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<usize>().map(Some).map_err(|_| {
                validation(key, format!("expected a nonnegative integer, got `{raw}`"))
            }),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => match raw.as_str() {
                "true" | "1" | "yes" => Ok(Some(true)),
                "false" | "0" | "no" => Ok(Some(false)),
                other => Err(validation(
                    key,
                    format!("expected a boolean, got `{other}`"),
                )),
            },
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::Parse {
                path: self.path,
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

fn validation(field: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses config text. `path_label` only annotates error messages.
pub fn parse_config(text: &str, path_label: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path_label.to_string(),
            line: line_no,
            message: "expected `section.key = value`".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !key.contains('.') {
            return Err(Error::Parse {
                path: path_label.to_string(),
                line: line_no,
                message: format!("key `{key}` is missing its section prefix"),
            });
        }
        if entries.insert(key.clone(), (line_no, value)).is_some() {
            return Err(Error::Parse {
                path: path_label.to_string(),
                line: line_no,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    let mut store = KeyStore {
        path: path_label.to_string(),
        entries,
    };
    build_config(&mut store).and_then(|cfg| {
        store.finish()?;
        Ok(cfg)
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text, &path.display().to_string())
}

fn build_config(store: &mut KeyStore) -> Result<RunConfig> {
    let mesh = {
        let kind = store
            .take("mesh.kind")
            .ok_or_else(|| validation("mesh.kind", "required (interval or rectangle)"))?;
        match kind.as_str() {
            "interval" => MeshKind::Interval {
                a: store.take_f64("mesh.a")?.unwrap_or(0.0),
                b: store.take_f64("mesh.b")?.unwrap_or(1.0),
                n: store.take_usize("mesh.n")?.unwrap_or(64),
            },
            "rectangle" => MeshKind::Rectangle {
                lx: store.take_f64("mesh.lx")?.unwrap_or(1.0),
                ly: store.take_f64("mesh.ly")?.unwrap_or(1.0),
                nx: store.take_usize("mesh.nx")?.unwrap_or(16),
                ny: store.take_usize("mesh.ny")?.unwrap_or(16),
            },
            other => {
                return Err(validation(
                    "mesh.kind",
                    format!("must be `interval` or `rectangle`, got `{other}`"),
                ))
            }
        }
    };

    let p = store.take_f64("problem.p")?.unwrap_or(2.0);
    if !(p > 1.0) {
        return Err(validation("problem.p", "p must exceed 1"));
    }
    let beta = match (
        store.take_f64("problem.beta")?,
        store.take("problem.beta_file"),
    ) {
        (Some(_), Some(_)) => {
            return Err(validation(
                "problem.beta",
                "give either problem.beta or problem.beta_file, not both",
            ))
        }
        (None, Some(file)) => BetaSpec::File(PathBuf::from(file)),
        (c, None) => {
            let c = c.unwrap_or(1.0);
            if c < 0.0 {
                return Err(validation("problem.beta", "beta must be nonnegative"));
            }
            BetaSpec::Constant(c)
        }
    };
    let delta = store.take_f64("problem.delta")?;
    if let Some(d) = delta {
        if d < 0.0 {
            return Err(validation("problem.delta", "delta must be nonnegative"));
        }
    }
    let e_file = store.take("problem.e_file").map(PathBuf::from);

    let reaction = {
        let name = store.take("reaction.name").unwrap_or_else(|| "zero".into());
        match name.as_str() {
            "zero" => ReactionKind::Zero,
            "linear" => ReactionKind::Linear {
                coefficient: store
                    .take_f64("reaction.coefficient")?
                    .ok_or_else(|| validation("reaction.coefficient", "required for `linear`"))?,
            },
            "example" => ReactionKind::Example {
                eta: store
                    .take_f64("reaction.eta")?
                    .ok_or_else(|| validation("reaction.eta", "required for `example`"))?,
                theta: store
                    .take_f64("reaction.theta")?
                    .ok_or_else(|| validation("reaction.theta", "required for `example`"))?,
                q: store.take_f64("reaction.q")?.unwrap_or((1.0 + p) / 2.0),
                tau: store.take_f64("reaction.tau")?.unwrap_or((1.0 + p) / 2.0),
                r: store.take_f64("reaction.r")?.unwrap_or(p + 1.0),
            },
            other => {
                return Err(validation(
                    "reaction.name",
                    format!("must be `zero`, `linear` or `example`, got `{other}`"),
                ))
            }
        }
    };

    let mut solver = SolverOptions::default();
    if let Some(v) = store.take_f64("solver.newton_tol")? {
        solver.newton_tol = v;
    }
    if let Some(v) = store.take_usize("solver.newton_max_iter")? {
        solver.newton_max_iter = v;
    }
    if let Some(v) = store.take_f64("solver.picard_tol")? {
        solver.picard_tol = v;
    }
    if let Some(v) = store.take_usize("solver.picard_max_iter")? {
        solver.picard_max_iter = v;
    }
    if let Some(v) = store.take_f64("solver.relaxation")? {
        solver.relaxation = v;
    }
    let mut armijo = ArmijoOptions::default();
    if let Some(v) = store.take_f64("solver.armijo_factor")? {
        armijo.factor = v;
    }
    if let Some(v) = store.take_f64("solver.armijo_slope")? {
        armijo.slope = v;
    }
    if let Some(v) = store.take_usize("solver.armijo_max_halvings")? {
        armijo.max_halvings = v;
    }
    solver.armijo = armijo;
    if let Some(v) = store.take_f64("solver.negative_part_tol")? {
        solver.negative_part_tol_rel = v;
    }
    solver.validate().map_err(|e| match e {
        Error::InvalidArgument(msg) => validation("solver", msg),
        other => other,
    })?;

    let eigen_tol = store.take_f64("eigen.tol")?;
    if let Some(t) = eigen_tol {
        if !(t > 0.0) {
            return Err(validation("eigen.tol", "tolerance must be positive"));
        }
    }
    let eigen_max_iter = store.take_usize("eigen.max_iter")?.unwrap_or(100_000);

    let schedule_start = store.take_f64("schedule.start")?.unwrap_or(1.0);
    let schedule_ratio = store.take_f64("schedule.ratio")?.unwrap_or(0.5);
    let schedule_steps = store.take_usize("schedule.steps")?.unwrap_or(21);
    if !(schedule_start > 0.0 && schedule_start <= 1.0) {
        return Err(validation("schedule.start", "must lie in (0, 1]"));
    }
    if !(schedule_ratio > 0.0 && schedule_ratio < 1.0) {
        return Err(validation("schedule.ratio", "must lie in (0, 1)"));
    }
    if schedule_steps == 0 {
        return Err(validation("schedule.steps", "must be at least 1"));
    }

    let output_dir = PathBuf::from(store.take("output.dir").unwrap_or_else(|| "out".into()));
    let write_fields = store.take_bool("output.write_fields")?.unwrap_or(true);
    let write_mesh = store.take_bool("output.write_mesh")?.unwrap_or(false);

    Ok(RunConfig {
        mesh,
        p,
        beta,
        delta,
        e_file,
        reaction,
        solver,
        eigen_tol,
        eigen_max_iter,
        schedule_start,
        schedule_ratio,
        schedule_steps,
        output_dir,
        write_fields,
        write_mesh,
    })
}

impl RunConfig {
    pub fn build_mesh(&self) -> Result<Mesh> {
        match self.mesh {
            MeshKind::Interval { a, b, n } => build_interval_mesh(a, b, n),
            MeshKind::Rectangle { lx, ly, nx, ny } => build_rectangle_mesh(lx, ly, nx, ny),
        }
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let mesh = self.build_mesh()?;
        let spec = match &self.beta {
            BetaSpec::Constant(c) => ProblemSpec::new(mesh, self.p, *c)?,
            BetaSpec::File(path) => {
                let beta = read_field_csv(path, &mesh)?;
                ProblemSpec::with_beta_field(mesh, self.p, &beta)?
            }
        };
        match self.delta {
            Some(d) => spec.with_flux_regularization(d),
            None => Ok(spec),
        }
    }

    pub fn build_reaction(&self) -> Result<ReactionSpec> {
        match &self.reaction {
            ReactionKind::Zero => Ok(ReactionSpec::zero()),
            ReactionKind::Linear { coefficient } => Ok(ReactionSpec::power(*coefficient, self.p)),
            ReactionKind::Example {
                eta,
                theta,
                q,
                tau,
                r,
            } => ReactionSpec::example(ExampleReactionParams {
                eta: *eta,
                theta: *theta,
                q: *q,
                tau: *tau,
                r: *r,
                p: self.p,
            }),
        }
    }

    pub fn perturbation(&self, mesh: &Mesh) -> Result<DiscreteField> {
        match &self.e_file {
            None => Ok(DiscreteField::constant(mesh, 1.0)),
            Some(path) => read_field_csv(path, mesh),
        }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen_tol,
            max_iter: self.eigen_max_iter,
            ..EigenOptions::default()
        }
    }

    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        EpsilonSchedule::geometric(
            self.schedule_start,
            self.schedule_ratio,
            self.schedule_steps,
        )
    }

    /// Output directory, honoring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
