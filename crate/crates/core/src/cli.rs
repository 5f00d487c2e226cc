//! What the `tns` binary does, kept in the library so it can be tested:
//! resolved run configuration, the four commands, result rows and the
//! run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::coarsegrain2d;
use crate::coarsegrain3d;
use crate::driver::{ObservableRequest, RunResult, DEFAULT_OBSERVABLE_FIELD};
use crate::error::{arg_err, Result, TnsError};
use crate::lattice::{LevelDiag, TnsConfig};
use crate::models::{sample_ea_couplings, CouplingDistribution, DisorderRealization, ImpurityKind, IsingSpec};
use crate::reference::{
    brute_force, exact_internal_energy, onsager_log_z_per_site, t_c_2d, yang_magnetization, MAX_BRUTE_SPINS,
};

/// Everything a run depends on. Serialized into every manifest; feeding a
/// manifest's `config` back through `--config` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    /// Lattice side is `2^l`.
    pub l: u32,
    pub temps: Vec<f64>,
    /// Uniform field. Free-energy runs default to 0; observable and
    /// disorder runs to a small symmetry-breaking value.
    pub field: Option<f64>,
    /// Base seed of the coupling realizations and of the ALS restarts.
    pub seed: u64,
    pub realizations: usize,
    pub distribution: CouplingDistribution,
    /// Replace sampled couplings by all `J = +1`.
    pub ferro: bool,
    /// Realization files to run instead of sampling.
    pub realization_files: Vec<PathBuf>,
    /// Whether disorder runs compute per-site magnetizations and `q`.
    pub per_site: bool,
    pub threads: Option<usize>,
    pub tns: TnsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            l: 10,
            temps: Vec::new(),
            field: None,
            seed: 0,
            realizations: 5,
            distribution: CouplingDistribution::PlusMinusOne,
            ferro: false,
            realization_files: Vec::new(),
            per_site: true,
            threads: None,
            tns: TnsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| arg_err!("config {}: {}", path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| arg_err!("config {}: {}", path.display(), e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(arg_err!("dim must be 2 or 3"));
        }
        if self.l == 0 || self.l > 20 {
            return Err(arg_err!("L must lie in 1..=20"));
        }
        if self.temps.is_empty() {
            return Err(arg_err!("no temperatures given"));
        }
        if let Some(t) = self.temps.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(arg_err!("temperatures must be positive and finite, got {}", t));
        }
        if self.field.is_some_and(|b| !b.is_finite()) {
            return Err(arg_err!("field must be finite"));
        }
        if self.threads == Some(0) {
            return Err(arg_err!("threads must be at least 1"));
        }
        self.tns.validate()
    }

    fn spec(&self, t: f64) -> IsingSpec {
        IsingSpec::uniform(self.dim, self.l, 1.0 / t)
    }
}

/// Parses `a:b:step` (inclusive), a comma list, or a single value.
/// `tc` stands for the 2D critical temperature.
pub fn parse_temps(s: &str) -> Result<Vec<f64>> {
    let num = |x: &str| -> Result<f64> {
        let x = x.trim();
        if x.eq_ignore_ascii_case("tc") {
            return Ok(t_c_2d());
        }
        x.parse::<f64>().map_err(|_| arg_err!("bad temperature '{}'", x))
    };
    let out = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(arg_err!("temperature range must be start:stop:step"));
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || b < a {
            return Err(arg_err!("temperature range needs stop >= start and step > 0"));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        (0..=n).map(|i| a + i as f64 * h).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if let Some(t) = out.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(arg_err!("temperatures must be positive, got {}", t));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub beta: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub f_site: f64,
    /// Relative error of `f` against `reference`.
    pub delta_f: Option<f64>,
    /// `brute_force`, `onsager` or `none`.
    pub reference: String,
    pub seconds_per_iteration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservablesRow {
    #[serde(rename = "T")]
    pub t: f64,
    pub beta: f64,
    pub field: f64,
    pub u_tns: f64,
    pub u_exact: Option<f64>,
    pub m_tns: f64,
    pub m_plus_exact: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: f64,
    pub beta: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub q: Option<f64>,
    /// File the realization was written to or read from.
    pub realization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSummary {
    pub count: usize,
    pub mean_q: f64,
    /// Standard error of the mean; zero for a single realization.
    pub stderr_q: f64,
}

/// Per-point diagnostics kept out of the flat CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointDiagnostics {
    #[serde(rename = "T")]
    pub t: f64,
    pub seconds: f64,
    pub levels: Vec<LevelDiag>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest<R> {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub rows: Vec<R>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<QSummary>,
    pub diagnostics: Vec<PointDiagnostics>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn manifest<R>(command: &str, cfg: &RunConfig, started: f64) -> Manifest<R> {
    Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        started_unix: started,
        finished_unix: 0.0,
        rows: Vec::new(),
        summary: None,
        diagnostics: Vec::new(),
    }
}

fn diag(t: f64, r: &RunResult) -> PointDiagnostics {
    PointDiagnostics { t, seconds: r.seconds, levels: r.levels.clone() }
}

fn free_energy_run(spec: &IsingSpec, cfg: &TnsConfig) -> Result<RunResult> {
    if spec.dim == 2 {
        coarsegrain2d::run_free_energy(spec, cfg)
    } else {
        coarsegrain3d::run_free_energy_3d(spec, cfg)
    }
}

pub fn cmd_free_energy(cfg: &RunConfig) -> Result<Manifest<FreeEnergyRow>> {
    cfg.validate()?;
    let mut m = manifest("free-energy", cfg, now());
    let field = cfg.field.unwrap_or(0.0);
    for &t in &cfg.temps {
        let spec = cfg.spec(t).with_field(field);
        let r = free_energy_run(&spec, &cfg.tns)?;
        let sites = spec.lattice().sites();
        // exact enumeration when the lattice is small enough, else Onsager in 2D
        let (reference, exact) = if sites <= MAX_BRUTE_SPINS {
            ("brute_force", Some(brute_force(&spec, &ImpurityKind::None)?.log_abs() / sites as f64))
        } else if spec.dim == 2 && field == 0.0 {
            ("onsager", Some(onsager_log_z_per_site(spec.beta)))
        } else {
            ("none", None)
        };
        m.rows.push(FreeEnergyRow {
            t,
            beta: spec.beta,
            log_z: r.log_z.log_abs(),
            f_site: r.free_energy_per_site,
            delta_f: exact.map(|e| ((r.log_z_per_site - e) / e).abs()),
            reference: reference.into(),
            seconds_per_iteration: r.seconds_per_iteration,
        });
        m.diagnostics.push(diag(t, &r));
    }
    m.finished_unix = now();
    Ok(m)
}

pub fn cmd_observables(cfg: &RunConfig) -> Result<Manifest<ObservablesRow>> {
    cfg.validate()?;
    let mut m = manifest("observables", cfg, now());
    let field = cfg.field.unwrap_or(DEFAULT_OBSERVABLE_FIELD);
    if !(field > 0.0) {
        return Err(arg_err!("the magnetization needs a positive field"));
    }
    let req = ObservableRequest { internal_energy: true, magnetization_field: Some(field) };
    for &t in &cfg.temps {
        let spec = cfg.spec(t);
        let r = if spec.dim == 2 {
            coarsegrain2d::run_observables(&spec, &cfg.tns, &req)?
        } else {
            coarsegrain3d::run_observables_3d(&spec, &cfg.tns, &req)?
        };
        let exact = spec.dim == 2;
        m.rows.push(ObservablesRow {
            t,
            beta: spec.beta,
            field,
            u_tns: r.internal_energy.unwrap_or(f64::NAN),
            u_exact: exact.then(|| exact_internal_energy(spec.beta)),
            m_tns: r.magnetization.unwrap_or(f64::NAN),
            m_plus_exact: exact.then(|| yang_magnetization(spec.beta)),
        });
        m.diagnostics.push(diag(t, &r));
    }
    m.finished_unix = now();
    Ok(m)
}

fn distribution_name(d: CouplingDistribution) -> &'static str {
    match d {
        CouplingDistribution::PlusMinusOne => "plus_minus_one",
        CouplingDistribution::Gaussian => "gaussian",
    }
}

/// Realizations of a disorder run: loaded from files, or sampled from
/// consecutive seeds. Sampled ones are written next to `out` when given.
pub fn disorder_realizations(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<(DisorderRealization, String)>> {
    if !cfg.realization_files.is_empty() {
        return cfg
            .realization_files
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p)?;
                let r: DisorderRealization = serde_json::from_str(&text)?;
                Ok((r, p.display().to_string()))
            })
            .collect();
    }
    if cfg.realizations == 0 {
        return Err(arg_err!("need at least one realization"));
    }
    let lat = cfg.spec(1.0).lattice();
    if let Some(dir) = out.and_then(Path::parent).filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    (0..cfg.realizations as u64)
        .map(|k| {
            let seed = cfg.seed + k;
            let (j, name) = if cfg.ferro {
                (vec![1.0; lat.edges()], "ferro")
            } else {
                (sample_ea_couplings(&lat, cfg.distribution, seed), distribution_name(cfg.distribution))
            };
            let r = DisorderRealization::new(&lat, seed, name, &j);
            let file = match out {
                Some(base) => {
                    let p = sibling(base, &format!("realization-{seed}.json"));
                    fs::write(&p, serde_json::to_string_pretty(&r)?)?;
                    p.display().to_string()
                }
                None => String::new(),
            };
            Ok((r, file))
        })
        .collect()
}

pub fn cmd_disorder(cfg: &RunConfig, out: Option<&Path>) -> Result<Manifest<DisorderRow>> {
    cfg.validate()?;
    let mut m = manifest("disorder", cfg, now());
    let field = cfg.field.unwrap_or(DEFAULT_OBSERVABLE_FIELD);
    let reals = disorder_realizations(cfg, out)?;
    for &t in &cfg.temps {
        for (real, file) in &reals {
            let spec = real.to_spec(1.0 / t, field)?;
            let r = if spec.dim == 2 {
                coarsegrain2d::run_disordered(&spec, &cfg.tns, cfg.per_site)?
            } else {
                coarsegrain3d::run_disordered_3d(&spec, &cfg.tns, cfg.per_site)?
            };
            m.rows.push(DisorderRow {
                seed: real.seed,
                t,
                beta: spec.beta,
                log_z: r.run.log_z.log_abs(),
                q: r.q,
                realization: file.clone(),
            });
            m.diagnostics.push(diag(t, &r.run));
        }
    }
    let qs: Vec<f64> = m.rows.iter().filter_map(|r| r.q).collect();
    if !qs.is_empty() {
        let n = qs.len() as f64;
        let mean = qs.iter().sum::<f64>() / n;
        let var = if qs.len() > 1 { qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        m.summary = Some(QSummary { count: qs.len(), mean_q: mean, stderr_q: (var / n).sqrt() });
    }
    m.finished_unix = now();
    Ok(m)
}

/// `base` with `suffix` appended to its file name (`out` → `out.suffix`).
pub fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    base.with_file_name(name)
}

/// CSV text of the rows, header first.
pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| TnsError::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| TnsError::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| TnsError::Io(std::io::Error::other(e)))
}

/// Writes `<base>.csv` and `<base>.json`; returns the CSV text.
pub fn write_outputs<R: Serialize>(m: &Manifest<R>, base: &Path) -> Result<String> {
    if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let csv = to_csv(&m.rows)?;
    fs::write(sibling(base, "csv"), &csv)?;
    fs::write(sibling(base, "json"), serde_json::to_string_pretty(m)?)?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(temps: Vec<f64>) -> RunConfig {
        RunConfig { l: 2, temps, tns: TnsConfig::with_chi(16), ..RunConfig::default() }
    }

    #[test]
    fn temperature_syntax() {
        assert_eq!(parse_temps("2.1:2.4:0.1").unwrap().len(), 4);
        assert_eq!(parse_temps("1,2.5").unwrap(), vec![1.0, 2.5]);
        assert!((parse_temps("tc").unwrap()[0] - t_c_2d()).abs() < 1e-15);
        assert!(parse_temps("-1").is_err());
        assert!(parse_temps("0").is_err());
        assert!(parse_temps("2:1:0.1").is_err());
        assert!(parse_temps("x").is_err());
    }

    #[test]
    fn small_lattice_is_checked_by_enumeration() {
        let m = cmd_free_energy(&small(vec![3.33])).unwrap();
        assert_eq!(m.rows[0].reference, "brute_force");
        assert!(m.rows[0].delta_f.unwrap() < 1e-8);
    }

    #[test]
    fn bad_config_is_an_argument_error() {
        let err = cmd_free_energy(&small(vec![])).unwrap_err();
        assert!(matches!(err, TnsError::Argument(_)));
        let err = cmd_free_energy(&RunConfig { dim: 4, ..small(vec![1.0]) }).unwrap_err();
        assert!(matches!(err, TnsError::Argument(_)));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small(vec![2.0, 2.5]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"chi": 3}"#).is_err(), "unknown keys are rejected");
    }

    #[test]
    fn csv_has_stable_header() {
        let m = cmd_free_energy(&small(vec![2.0])).unwrap();
        let csv = to_csv(&m.rows).unwrap();
        assert!(csv.starts_with("T,beta,log_Z,f_site,delta_f,reference,seconds_per_iteration\n"));
    }

    #[test]
    fn ferro_disorder_q_matches_magnetization_squared() {
        let t = 2.0;
        let cfg = RunConfig {
            ferro: true,
            realizations: 1,
            field: Some(1e-3),
            tns: TnsConfig::with_chi(8),
            ..small(vec![t])
        };
        let d = cmd_disorder(&cfg, None).unwrap();
        let o = cmd_observables(&cfg).unwrap();
        let m = o.rows[0].m_tns;
        // on a homogeneous torus every site has the same magnetization
        assert!((d.rows[0].q.unwrap() - m * m).abs() < 5e-2);
    }
}
