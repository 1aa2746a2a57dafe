//! Run configuration: one JSON document, with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dichotomy::{DataFamily, ExperimentSpec};
use crate::error::{invalid, Error, Result};
use crate::evolution::EvolveConfig;
use crate::functionals::{RawConstants, SystemParams};
use crate::ground_state::GroundStateConfig;
use crate::radial_grid::MAX_DIM;
use crate::report::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub n: usize,
    pub r_max: f64,
    pub num_nodes: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            n: 5,
            r_max: 32.0,
            num_nodes: 2048,
        }
    }
}

/// Either `kappa` or the raw constants (from which κ = m/M).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawConstants>,
}

impl SystemBlock {
    pub fn params(&self) -> Result<SystemParams> {
        match (self.kappa, self.raw) {
            (None, None) => SystemParams::new(0.5),
            (Some(k), None) => SystemParams::new(k),
            (k, Some(raw)) => {
                let p = SystemParams::from_raw(raw)?;
                if let Some(k) = k {
                    if (k - p.kappa).abs() > 1e-12 * k.abs().max(1.0) {
                        return Err(invalid("system.kappa", format!("{k} disagrees with m/M = {}", p.kappa)));
                    }
                }
                Ok(p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub max_iters: usize,
    pub tol_j: f64,
    pub window: usize,
    pub rearrange_every: usize,
    pub tol_pohozaev: f64,
    pub tol_pde: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let d = GroundStateConfig::default();
        Self {
            max_iters: d.max_iters,
            tol_j: d.tol_j,
            window: d.window,
            rearrange_every: d.rearrange_every,
            tol_pohozaev: d.tol_pohozaev,
            tol_pde: d.tol_pde,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBlock {
    #[serde(flatten)]
    pub data: DataFamily,
    #[serde(default = "default_evolve_nodes")]
    pub evolve_num_nodes: usize,
}

fn default_evolve_nodes() -> usize {
    4096
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            data: DataFamily::ScaledGroundState { scale_factor: 1.1 },
            evolve_num_nodes: default_evolve_nodes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub scaling_draws: usize,
    pub gn_samples: usize,
    /// Horizon of the conservation/virial run.
    pub t_max: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            scaling_draws: 100,
            gn_samples: 200,
            t_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    pub emit_plot_scripts: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
            emit_plot_scripts: false,
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub grid: GridBlock,
    pub system: SystemBlock,
    pub solver: SolverBlock,
    pub evolve: EvolveConfig,
    pub experiment: ExperimentBlock,
    pub verify: VerifyBlock,
    pub output: OutputBlock,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            grid: GridBlock::default(),
            system: SystemBlock::default(),
            solver: SolverBlock::default(),
            evolve: EvolveConfig::default(),
            experiment: ExperimentBlock::default(),
            verify: VerifyBlock::default(),
            output: OutputBlock::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the file at `path`, overlaid by `key=value`
    /// assignments with dotted keys. Values parse as JSON, else as strings.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        match path {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                Self::layered(Some((&text, &path.display().to_string())), sets)
            }
            None => Self::layered(None, sets),
        }
    }

    /// Defaults overlaid by a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::layered(Some((text, "config")), &[])
    }

    fn layered(file: Option<(&str, &str)>, sets: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some((text, label)) = file {
            let de = &mut serde_json::Deserializer::from_str(text);
            // Checked on its own first so diagnostics carry line and field.
            let _: Self = serde_path_to_error::deserialize(de)
                .map_err(|e| Error::Parse(format!("{label}: field `{}`: {}", e.path(), e.inner())))?;
            let over: Value = serde_json::from_str(text)?;
            merge(&mut doc, over);
        }
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("--set `{s}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            assign(&mut doc, key, value)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(doc)
            .map_err(|e| Error::Parse(format!("field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.grid.n == 0 || self.grid.n > MAX_DIM {
            return Err(Error::UnsupportedDimension(self.grid.n));
        }
        self.ground_state_config().validate()?;
        self.system.params()?;
        self.evolve.validate()?;
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "at least one of csv, json"));
        }
        Ok(())
    }

    pub fn ground_state_config(&self) -> GroundStateConfig {
        GroundStateConfig {
            r_max: self.grid.r_max,
            num_nodes: self.grid.num_nodes,
            max_iters: self.solver.max_iters,
            tol_j: self.solver.tol_j,
            window: self.solver.window,
            rearrange_every: self.solver.rearrange_every,
            tol_pohozaev: self.solver.tol_pohozaev,
            tol_pde: self.solver.tol_pde,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.system.params().map(|p| p.kappa).unwrap_or(0.5)
    }

    /// The evolve block with κ taken from the system block.
    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            kappa: self.kappa(),
            ..self.evolve
        }
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            data: self.experiment.data,
            evolve: self.evolve_config(),
            evolve_num_nodes: self.experiment.evolve_num_nodes,
        }
    }
}

/// Deep merge; `parameters` objects are replaced wholesale because their
/// shape depends on the data family.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if k != "parameters" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn assign(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Parse(format!("--set key `{key}` has an empty segment")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Parse(format!("--set `{key}`: `{part}` is not inside an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked above")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    match node {
        Value::Object(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(Error::Parse(format!("--set `{key}`: parent is not an object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = RunConfig::load(
            None,
            &[
                "grid.n=3".into(),
                "evolve.t_max=0.5".into(),
                "experiment.parameters.scale_factor=0.9".into(),
                "output.directory=results".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.grid.n, 3);
        assert_eq!(cfg.evolve.t_max, 0.5);
        assert_eq!(cfg.experiment.data, DataFamily::ScaledGroundState { scale_factor: 0.9 });
        assert_eq!(cfg.output.directory, PathBuf::from("results"));
    }

    #[test]
    fn dimension_seven_is_rejected() {
        let err = RunConfig::load(None, &["grid.n=7".into()]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDimension(7)));
        assert!(err.to_string().contains("n <= 5"));
    }

    #[test]
    fn unknown_field_names_its_path() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{{\n  \"grid\": {{\"n\": 5, \"nodes\": 10}}\n}}").unwrap();
        let err = RunConfig::load(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(err.contains("grid"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn file_can_switch_family() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"{{"experiment": {{"family": "gaussian", "parameters": {{"amplitude_u": 1, "amplitude_v": 1, "width": 2}}}}}}"#
        )
        .unwrap();
        let cfg = RunConfig::load(Some(f.path()), &[]).unwrap();
        assert!(matches!(cfg.experiment.data, DataFamily::Gaussian { .. }));
    }

    #[test]
    fn raw_constants_fix_kappa() {
        let cfg = RunConfig::load(
            None,
            &[r#"system.raw={"m":1,"M":2,"lambda":[1,0],"mu":[0.5,0],"c":2}"#.into()],
        )
        .unwrap();
        assert_eq!(cfg.kappa(), 0.5);
        assert!(RunConfig::load(
            None,
            &[
                r#"system.raw={"m":1,"M":2,"lambda":[1,0],"mu":[0.5,0],"c":2}"#.into(),
                "system.kappa=1".into()
            ],
        )
        .is_err());
    }
}
