//! Stages of the identification pipeline. Each stage reads the files written
//! by the previous one from the output directory, so they can be run one at
//! a time or chained with [`pipeline`].
//!
//! Output directory layout:
//!
//! | file | stage |
//! |---|---|
//! | `config.json` | every stage (resolved configuration) |
//! | `network.json` | gen |
//! | `initial_state.json`, `trajectory.csv`, `snapshots.csv`, `derivatives.csv` | simulate |
//! | `model.json`, `model_basis.csv`, `model_spectrum.csv`, `hd_estimates.json` | identify |
//! | `prediction.csv` | predict |
//! | `report.json`, `averages.csv`, `errors.csv` | evaluate |
//! | `timing/*.json` | wall-clock times, the only non-reproducible files |

pub mod config;

use std::fmt;
use std::fs;
use std::path::Path;

use log::info;
use lsindy::grid_model::{self, EffectiveNetwork};
use lsindy::library::Coordinates;
use lsindy::metrics::{timed, EvaluationReport};
use lsindy::ode::integrate;
use lsindy::reduction::{self, compute_basis};
use lsindy::snapshots::{self, add_noise, assemble};
use lsindy::sparse_id::{self, estimate_hd, fit, simulate_model, SparseModel};
use lsindy::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use config::{NetworkSource, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Gen,
    Simulate,
    Identify,
    Predict,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Gen => "gen",
            Stage::Simulate => "simulate",
            Stage::Identify => "identify",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// 1 configuration, 2 numerical failure, 3 I/O or unreadable file.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            e if e.is_numerical() => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            _ => 1,
        }
    }
}

fn at<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn prepare_dir(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out.join("timing")).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_json(&out.join("config.json"), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub equilibrium_delta: Vec<f64>,
    pub equilibrium_omega: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

impl InitialState {
    pub fn stacked(&self) -> Vec<f64> {
        self.delta.iter().chain(&self.omega).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct FomTiming {
    fom_time_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RomTiming {
    rom_time_s: f64,
}

/// Writes `network.json`, either generated or validated from a file.
pub fn gen(cfg: &PipelineConfig, out: &Path) -> std::result::Result<EffectiveNetwork, StageError> {
    at(Stage::Config, prepare_dir(cfg, out))?;
    at(
        Stage::Gen,
        (|| {
            let net = match &cfg.network {
                NetworkSource::File { path } => grid_model::load_network(path)?,
                NetworkSource::Synthetic(s) => {
                    grid_model::generate_synthetic(s.n_g, s.topology, s.seed, &s.ranges)?.network
                }
            };
            grid_model::save_network(&net, out.join("network.json"))?;
            info!(
                "network with {} generators and {} couplings",
                net.n_g(),
                net.coupling_count()
            );
            Ok(net)
        })(),
    )
}

/// Equilibrium plus the seeded disturbance.
pub fn initial_state(cfg: &PipelineConfig, net: &EffectiveNetwork) -> Result<InitialState> {
    let n = net.n_g();
    let eq = net.find_equilibrium()?;
    let angle = cfg.disturbance.angle.expand(n, "disturbance angle")?;
    let freq = cfg
        .disturbance
        .frequency
        .expand(n, "disturbance frequency")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.disturbance.seed);
    let delta = (0..n)
        .map(|i| eq.delta[i] + angle[i] * rng.random_range(-1.0..=1.0))
        .collect();
    let omega = (0..n)
        .map(|i| eq.omega[i] + freq[i] * rng.random_range(-1.0..=1.0))
        .collect();
    Ok(InitialState {
        equilibrium_delta: eq.delta,
        equilibrium_omega: eq.omega,
        delta,
        omega,
    })
}

/// Integrates the full model and writes the truth trajectory plus the
/// snapshot pair used for identification.
pub fn simulate(cfg: &PipelineConfig, out: &Path) -> std::result::Result<(), StageError> {
    at(Stage::Config, prepare_dir(cfg, out))?;
    at(
        Stage::Simulate,
        (|| {
            let net = grid_model::load_network(out.join("network.json"))?;
            let x0 = initial_state(cfg, &net)?;
            write_json(&out.join("initial_state.json"), &x0)?;
            let (traj, fom_time_s) =
                timed(|| integrate(|_, x, dx| net.rhs(x, dx), &x0.stacked(), &cfg.integration));
            let traj = traj?;
            info!(
                "{} samples, {} steps ({} rejected)",
                traj.len(),
                traj.stats.accepted,
                traj.stats.rejected
            );
            snapshots::write_states_csv(&out.join("trajectory.csv"), &traj.times, &traj.states)?;
            let mut snaps = assemble(&traj, &net, cfg.derivatives)?;
            if let Some(noise) = &cfg.noise {
                snaps = add_noise(&snaps, noise.sigma_rel, noise.seed)?;
            }
            snapshots::write_csv(
                &snaps,
                &out.join("snapshots.csv"),
                &out.join("derivatives.csv"),
            )?;
            write_json(&out.join("timing/simulate.json"), &FomTiming { fom_time_s })
        })(),
    )
}

/// Reduces the snapshots (unless full-state), fits the sparse model and
/// writes it. Full-state models also get inertia/damping estimates.
pub fn identify(cfg: &PipelineConfig, out: &Path) -> std::result::Result<SparseModel, StageError> {
    at(Stage::Config, prepare_dir(cfg, out))?;
    at(
        Stage::Identify,
        (|| {
            let snaps =
                snapshots::read_csv(&out.join("snapshots.csv"), &out.join("derivatives.csv"))?;
            let model = match cfg.reduction.criterion() {
                Some(criterion) => {
                    let basis = compute_basis(&snaps, criterion, cfg.reduction.center)?;
                    info!(
                        "rank {} captures {:.6} of the energy",
                        basis.rank(),
                        basis.energy_captured()
                    );
                    let latent = reduction::project(&snaps, &basis)?;
                    let lib = lsindy::library::build(&latent.z, &cfg.library, Coordinates::Latent)?;
                    fit(&lib, &latent.zdot.transpose(), &cfg.regression)?.with_basis(basis)?
                }
                None => {
                    let lib =
                        lsindy::library::build(snaps.x(), &cfg.library, Coordinates::FullState)?;
                    let model = fit(&lib, &snaps.xdot().transpose(), &cfg.regression)?;
                    let net = grid_model::load_network(out.join("network.json"))?;
                    write_json(&out.join("hd_estimates.json"), &estimate_hd(&model, &net)?)?;
                    model
                }
            };
            info!("{} nonzero coefficients", model.nonzero_count());
            sparse_id::save_model(&model, out, "model")?;
            Ok(model)
        })(),
    )
}

/// Integrates the identified model from the recorded initial state and
/// writes the full-state prediction.
pub fn predict(cfg: &PipelineConfig, out: &Path) -> std::result::Result<(), StageError> {
    at(Stage::Config, prepare_dir(cfg, out))?;
    at(
        Stage::Predict,
        (|| {
            let model = sparse_id::load_model(&out.join("model.json"))?;
            let x0: InitialState = read_json(&out.join("initial_state.json"))?;
            let x0 = x0.stacked();
            let z0 = match model.basis() {
                Some(b) => b.project_state(&x0)?,
                None => x0,
            };
            let (sim, rom_time_s) = timed(|| simulate_model(&model, &z0, &cfg.integration));
            let sim = sim?;
            let x = sim.full_state.as_ref().unwrap_or(&sim.coordinates.states);
            snapshots::write_states_csv(&out.join("prediction.csv"), &sim.coordinates.times, x)?;
            write_json(&out.join("timing/predict.json"), &RomTiming { rom_time_s })
        })(),
    )
}

/// Compares prediction and truth; writes the report and the plot tables.
pub fn evaluate(
    cfg: &PipelineConfig,
    out: &Path,
) -> std::result::Result<EvaluationReport, StageError> {
    at(Stage::Config, prepare_dir(cfg, out))?;
    at(
        Stage::Evaluate,
        (|| {
            let (times, truth) = snapshots::read_states_csv(&out.join("trajectory.csv"))?;
            let (t2, estimate) = snapshots::read_states_csv(&out.join("prediction.csv"))?;
            if t2 != times {
                return Err(Error::Parse {
                    path: out.join("prediction.csv"),
                    reason: "time column differs from the trajectory".into(),
                });
            }
            let model = sparse_id::load_model(&out.join("model.json"))?;
            let mut report = EvaluationReport::compare(
                &times,
                &truth,
                &estimate,
                model.coordinate_dim(),
                model.lambda(),
                model.library_spec(),
            )?;
            report
                .series
                .write_averages_csv(&out.join("averages.csv"))?;
            report.series.write_errors_csv(&out.join("errors.csv"))?;
            write_json(&out.join("report.json"), &report)?;
            let fom = read_json::<FomTiming>(&out.join("timing/simulate.json")).ok();
            let rom = read_json::<RomTiming>(&out.join("timing/predict.json")).ok();
            report.fom_time_s = fom.map(|t| t.fom_time_s);
            report.rom_time_s = rom.map(|t| t.rom_time_s);
            write_json(&out.join("timing/report.json"), &report)?;
            Ok(report)
        })(),
    )
}

/// gen, simulate, identify, predict, evaluate; stops at the first failure.
pub fn pipeline(
    cfg: &PipelineConfig,
    out: &Path,
) -> std::result::Result<EvaluationReport, StageError> {
    gen(cfg, out)?;
    simulate(cfg, out)?;
    identify(cfg, out)?;
    predict(cfg, out)?;
    evaluate(cfg, out)
}

pub fn summary(report: &EvaluationReport) -> String {
    let time = |t: Option<f64>| t.map_or("n/a".to_string(), |t| format!("{t:.3}"));
    format!(
        "err_delta={:.3e} err_omega={:.3e} fom_time_s={} rom_time_s={} r={} lambda={} poly_order={}",
        report.err_delta,
        report.err_omega,
        time(report.fom_time_s),
        time(report.rom_time_s),
        report.r,
        report.lambda,
        report.poly_order
    )
}
