//! End-to-end experiment driver: configuration, the four pipeline stages,
//! the evaluation report and CSV exports.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{build_corpus, load_corpus, perturb_gaussian, save_corpus, Corpus};
use crate::error::{Error, Result};
use crate::eval::{tabulate_potential, Comparison, Metrics, Region};
use crate::fokker_planck::{AdvectionScheme, SolverConfig};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::neural::{load_checkpoint, save_checkpoint, Mlp};
use crate::oracle::benchmark;
use crate::training::{tabulate_vector, train_phase1, train_phase2, Phase1Config, Phase2Config};

pub const CORPUS_FILE: &str = "corpus.bin";
pub const DRIFT_NET_FILE: &str = "drift_net.ckpt";
pub const POTENTIAL_NET_FILE: &str = "potential_net.ckpt";
pub const PHASE1_LOSS_FILE: &str = "phase1_loss.csv";
pub const PHASE2_LOSS_FILE: &str = "phase2_loss.csv";
pub const REPORT_FILE: &str = "report.toml";
pub const POTENTIAL_CSV: &str = "potential.csv";
pub const QUIVER_FILES: [&str; 4] = ["drift_nn.csv", "drift_true.csv", "rotation_nn.csv", "rotation_true.csv"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub dt: f64,
    #[serde(default)]
    pub scheme: AdvectionScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub sigma2: f64,
    pub m: usize,
    pub t1: f64,
    pub t2: f64,
    pub noise_variance: f64,
    pub corpus_seed: u64,
    /// Half width of the interior box used for the second set of metrics.
    pub interior_half_width: f64,
    pub output_dir: PathBuf,
    pub grid: Grid2D,
    pub solver: SolverSection,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_benchmark("double-well").expect("built-in benchmark")
    }
}

impl ExperimentConfig {
    /// Default protocol for a named benchmark.
    pub fn for_benchmark(name: &str) -> Result<Self> {
        let bm = benchmark(name)?;
        Ok(ExperimentConfig {
            benchmark: bm.name.to_string(),
            sigma2: bm.sigma2,
            m: bm.m,
            t1: 0.015,
            t2: 0.016,
            noise_variance: 0.1,
            corpus_seed: 7,
            interior_half_width: 3.0,
            output_dir: PathBuf::from("runs").join(bm.name),
            grid: Grid2D::square(4.0, 80)?,
            solver: SolverSection { dt: 1e-4, scheme: AdvectionScheme::default() },
            phase1: Phase1Config { epochs: bm.epochs, seed: 11, ..Phase1Config::default() },
            phase2: Phase2Config { epochs: bm.epochs, seed: 13, ..Phase2Config::default() },
        })
    }

    /// Derives every seed from one base value.
    pub fn reseed(&mut self, seed: u64) {
        self.corpus_seed = seed;
        self.phase1.seed = seed.wrapping_add(1);
        self.phase2.seed = seed.wrapping_add(2);
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::new(self.solver.dt, self.sigma2, self.t2).with_scheme(self.solver.scheme)
    }

    pub fn validate(&self) -> Result<()> {
        benchmark(&self.benchmark)?;
        self.grid.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be finite and non-negative, got {}", self.sigma2));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.t1 > 0.0 && self.t2 > self.t1) {
            return bad(format!("need 0 < t1 < t2, got t1 = {}, t2 = {}", self.t1, self.t2));
        }
        if !(self.noise_variance >= 0.0) {
            return bad(format!("noise_variance must be non-negative, got {}", self.noise_variance));
        }
        if !(self.solver.dt > 0.0) {
            return bad(format!("solver.dt must be positive, got {}", self.solver.dt));
        }
        if !(self.interior_half_width > 0.0) {
            return bad("interior_half_width must be positive".into());
        }
        if self.phase1.epochs == 0 || self.phase2.epochs == 0 {
            return bad("epochs must be at least 1 in both phases".into());
        }
        if self.phase1.batch_size == 0 || self.phase1.batch_size > self.m {
            return bad(format!("phase1.batch_size must lie in 1..={}", self.m));
        }
        if !(self.phase1.learning_rate > 0.0 && self.phase2.learning_rate > 0.0) {
            return bad("learning rates must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Applies `dotted.key=value`; the value is parsed as a TOML literal and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}' is not a table path")))?;
            if i + 1 == parts.len() {
                let old = table.get(*part).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
                let value = match (old, value.clone()) {
                    (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                    (_, v) => v,
                };
                table.insert(part.to_string(), value);
                break;
            }
            slot = table.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        }
        *self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML form with `output_dir` blanked, hex
    /// encoded.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Outcome of one experiment. Written as TOML; contains no timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub config_hash: String,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2_final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_loss_curve: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2_loss_curve: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior: Option<Metrics>,
}

impl EvalReport {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(EvalReport {
            benchmark: cfg.benchmark.clone(),
            config_hash: cfg.hash()?,
            complete: false,
            failed_stage: None,
            error: None,
            phase1_final_loss: None,
            phase2_final_loss: None,
            phase1_loss_curve: None,
            phase2_loss_curve: None,
            full: None,
            interior: None,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `epoch,loss` rows, epochs counted from 1.
pub fn write_loss_csv(curve: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["epoch", "loss"]).map_err(csv_error)?;
    for (i, loss) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), loss.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x,y,u,v` rows in storage order.
pub fn write_quiver_csv(field: &VectorField, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "y", "u", "v"]).map_err(csv_error)?;
    for (i, (x, y)) in field.grid().nodes().enumerate() {
        let (u, v) = field.at(i);
        w.write_record([x, y, u, v].map(|f| f.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x,y,<names...>` rows for scalar fields sharing one grid.
pub fn write_scalar_csv(names: &[&str], fields: &[&ScalarField], path: impl AsRef<Path>) -> Result<()> {
    let grid = fields.first().map(|f| *f.grid()).ok_or(Error::EmptyBatch)?;
    if fields.iter().any(|f| f.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "y"].iter().chain(names)).map_err(csv_error)?;
    for (i, (x, y)) in grid.nodes().enumerate() {
        let row = [x, y].into_iter().chain(fields.iter().map(|f| f.values()[i]));
        w.write_record(row.map(|f| f.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            rec.get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::FormatVersionMismatch(format!("bad loss row in {}", path.display())))
        })
        .collect()
}

/// Stage 1: simulate (and optionally smooth) the training corpus.
pub fn generate(cfg: &ExperimentConfig) -> Result<Corpus> {
    cfg.validate()?;
    let drift = benchmark(&cfg.benchmark)?.drift_spec();
    info!("generating {} pairs for {} (sigma2 = {})", cfg.m, cfg.benchmark, cfg.sigma2);
    let corpus = build_corpus(&drift, cfg.solver_config(), cfg.m, cfg.corpus_seed, &cfg.grid, cfg.t1, cfg.t2)?;
    if cfg.noise_variance > 0.0 {
        perturb_gaussian(&corpus, cfg.noise_variance)
    } else {
        Ok(corpus)
    }
}

/// The stored artefacts of a run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(RunDir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn save_corpus(&self, corpus: &Corpus) -> Result<()> {
        save_corpus(corpus, self.path(CORPUS_FILE))
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        load_corpus(self.path(CORPUS_FILE))
    }

    pub fn load_net(&self, name: &str) -> Result<Mlp> {
        load_checkpoint(self.path(name))
    }
}

/// Stage 2: fit the drift network and store it with its loss curve.
pub fn run_phase1(cfg: &ExperimentConfig, corpus: &Corpus, dir: &RunDir) -> Result<(Mlp, f64)> {
    let run = train_phase1(corpus, &cfg.phase1)?;
    save_checkpoint(&run.net, dir.path(DRIFT_NET_FILE))?;
    write_loss_csv(&run.loss_curve, dir.path(PHASE1_LOSS_FILE))?;
    Ok((run.net, *run.loss_curve.last().expect("at least one epoch")))
}

/// Stage 3: fit the potential network against the frozen drift network.
pub fn run_phase2(cfg: &ExperimentConfig, net_b: &Mlp, dir: &RunDir) -> Result<(Mlp, f64)> {
    let run = train_phase2(net_b, &cfg.grid, &cfg.phase2)?;
    let windows = crate::training::window_means(&run.loss_curve, 100);
    if windows.windows(2).any(|w| w[1] > w[0]) {
        warn!("phase 2 loss is not monotone in 100-epoch window averages");
    }
    save_checkpoint(&run.net, dir.path(POTENTIAL_NET_FILE))?;
    write_loss_csv(&run.loss_curve, dir.path(PHASE2_LOSS_FILE))?;
    Ok((run.net, *run.loss_curve.last().expect("at least one epoch")))
}

/// Learned and true fields for a trained pair of networks.
pub fn compare(cfg: &ExperimentConfig, net_b: &Mlp, net_psi: &Mlp) -> Result<Comparison> {
    let bm = benchmark(&cfg.benchmark)?;
    let grid = &cfg.grid;
    let b_nn = tabulate_vector(net_b, grid)?;
    let (psi_nn, psi_nn_grad) = tabulate_potential(net_psi, grid)?;
    Comparison::new(
        b_nn,
        bm.sample_drift(grid),
        &psi_nn,
        &psi_nn_grad,
        bm.sample_psi(grid),
        bm.sample_rotation(grid),
    )
}

/// Writes the potential heatmap table and the four quiver tables.
pub fn export_fields(cmp: &Comparison, dir: &RunDir) -> Result<()> {
    let diff = cmp.psi_nn.axpby(1.0, &cmp.psi, -1.0)?;
    write_scalar_csv(&["psi_nn", "psi_true", "psi_diff"], &[&cmp.psi_nn, &cmp.psi, &diff], dir.path(POTENTIAL_CSV))?;
    for (name, field) in QUIVER_FILES.iter().zip([&cmp.b_nn, &cmp.b, &cmp.r_nn, &cmp.r]) {
        write_quiver_csv(field, dir.path(name))?;
    }
    Ok(())
}

/// Stage 4: metrics on the full grid and on the interior box.
pub fn evaluate(cfg: &ExperimentConfig, net_b: &Mlp, net_psi: &Mlp, dir: &RunDir) -> Result<EvalReport> {
    let mut report = EvalReport::new(cfg)?;
    let cmp = compare(cfg, net_b, net_psi)?;
    export_fields(&cmp, dir)?;
    report.full = Some(cmp.metrics(Region::Full)?);
    report.interior = Some(cmp.metrics(Region::Interior { half: cfg.interior_half_width })?);
    for (file, loss, curve) in [
        (PHASE1_LOSS_FILE, &mut report.phase1_final_loss, &mut report.phase1_loss_curve),
        (PHASE2_LOSS_FILE, &mut report.phase2_final_loss, &mut report.phase2_loss_curve),
    ] {
        let path = dir.path(file);
        if path.exists() {
            *loss = read_loss_csv(&path)?.last().copied();
            *curve = Some(file.to_string());
        }
    }
    if [report.full, report.interior].iter().flatten().any(|m| !m.is_valid()) {
        return Err(Error::Precondition("metrics must be finite and non-negative".into()));
    }
    report.complete = true;
    report.save(dir.path(REPORT_FILE))?;
    Ok(report)
}

/// Runs generate, both training phases and evaluation, writing every
/// artefact into `cfg.output_dir`. On failure a partial report naming the
/// failed stage is written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let dir = RunDir::create(&cfg.output_dir)?;
    cfg.save(dir.path("config.toml"))?;
    let mut partial = EvalReport::new(cfg)?;
    let outcome = (|| {
        let stage = |name: &'static str| move |e: Error| (name, e);
        let corpus = generate(cfg).map_err(stage("generate"))?;
        dir.save_corpus(&corpus).map_err(stage("generate"))?;
        let (net_b, l1) = run_phase1(cfg, &corpus, &dir).map_err(stage("phase1"))?;
        partial.phase1_final_loss = Some(l1);
        partial.phase1_loss_curve = Some(PHASE1_LOSS_FILE.to_string());
        let (net_psi, l2) = run_phase2(cfg, &net_b, &dir).map_err(stage("phase2"))?;
        partial.phase2_final_loss = Some(l2);
        partial.phase2_loss_curve = Some(PHASE2_LOSS_FILE.to_string());
        evaluate(cfg, &net_b, &net_psi, &dir).map_err(stage("evaluate"))
    })();
    match outcome {
        Ok(report) => {
            info!("{}: {:?}", cfg.benchmark, report.full);
            Ok(report)
        }
        Err((stage, e)) => {
            partial.failed_stage = Some(stage.to_string());
            partial.error = Some(e.to_string());
            if let Err(write_err) = partial.save(dir.path(REPORT_FILE)) {
                warn!("could not write partial report: {write_err}");
            }
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_benchmark() {
        let cfg = ExperimentConfig::for_benchmark("oscillatory-rotation").unwrap();
        assert_eq!((cfg.m, cfg.phase1.epochs, cfg.phase2.epochs), (80, 50_000, 50_000));
        assert_eq!((cfg.grid.nx, cfg.grid.dx()), (80, 0.1));
        cfg.validate().unwrap();
        assert!(matches!(ExperimentConfig::for_benchmark("nope"), Err(Error::UnknownBenchmark(_))));
    }

    #[test]
    fn toml_round_trip_is_stable() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string().unwrap(), text);
        let keys: Vec<&str> = text.lines().filter_map(|l| l.split_once(" = ").map(|(k, _)| k)).take(3).collect();
        assert_eq!(keys, ["benchmark", "sigma2", "m"]);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("phase1.epochs=12").unwrap();
        cfg.apply_override("sigma2 = 0").unwrap();
        cfg.apply_override("benchmark=rough").unwrap();
        cfg.apply_override("grid.nx=41").unwrap();
        cfg.apply_override("solver.scheme=upwind").unwrap();
        assert_eq!(cfg.phase1.epochs, 12);
        assert_eq!(cfg.sigma2, 0.0);
        assert_eq!(cfg.benchmark, "rough");
        assert_eq!(cfg.grid.nx, 41);
        assert_eq!(cfg.solver.scheme, AdvectionScheme::Upwind);
        assert!(matches!(cfg.apply_override("phase1.nope=1"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_override("novalue"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_override("m=-3"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let base = ExperimentConfig::default();
        type Edit = Box<dyn Fn(&mut ExperimentConfig)>;
        let cases: Vec<Edit> = vec![
            Box::new(|c| c.m = 0),
            Box::new(|c| c.t1 = 0.0),
            Box::new(|c| c.t2 = c.t1),
            Box::new(|c| c.sigma2 = -1.0),
            Box::new(|c| c.phase1.batch_size = c.m + 1),
            Box::new(|c| c.phase2.epochs = 0),
            Box::new(|c| c.solver.dt = 0.0),
        ];
        for f in cases {
            let mut cfg = base.clone();
            f(&mut cfg);
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let mut cfg = base;
        cfg.benchmark = "unknown".into();
        assert!(matches!(cfg.validate(), Err(Error::UnknownBenchmark(_))));
    }

    #[test]
    fn csv_exports() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::square(1.0, 3).unwrap();
        let path = dir.path().join("q.csv");
        write_quiver_csv(&VectorField::from_fn(g, |x, y| (y, -x)), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], "x,y,u,v");
        assert!(lines[2].starts_with("0,-0.6666666666666667,"));
        let path = dir.path().join("loss.csv");
        write_loss_csv(&[3.5, 0.25], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "epoch,loss\n1,3.5\n2,0.25\n");
        assert_eq!(read_loss_csv(&path).unwrap(), vec![3.5, 0.25]);
    }

    #[test]
    fn failing_stage_leaves_a_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        // t1 is not a multiple of dt, so generation fails
        let mut cfg = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            m: 2,
            grid: Grid2D::square(4.0, 20).unwrap(),
            t1: 0.01505,
            ..ExperimentConfig::default()
        };
        cfg.phase1.batch_size = 1;
        assert!(run_experiment(&cfg).is_err());
        let report = EvalReport::load(dir.path().join(REPORT_FILE)).unwrap();
        assert!(!report.complete);
        assert_eq!(report.failed_stage.as_deref(), Some("generate"));
        assert!(report.full.is_none());
    }
}
