//! Start-up identification of influence vectors and characterization of the
//! approximation-error dispersion.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    apply_switch, superpose, updated_jacobian, DispersionModel, InfluenceKind, InfluenceMatrix,
    InputVector, StateVector, SwitchVector,
};
use crate::plant::{matrix_from_rows, matrix_rows, FaultState, LoadState, PlantModel};
use crate::rng::StreamRng;
use crate::stats::{spearman, RankCorrelation};

pub const MIN_TRIALS: usize = 30;
/// Per-actuator mode is used only when some DOF shows a max/min spread above this.
pub const PER_ACTUATOR_SPREAD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrialBase {
    /// Base input drawn with each bit Bernoulli(½).
    #[default]
    Random,
    AllOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub repeats: usize,
    pub trials: usize,
    pub max_sn: usize,
    pub base: TrialBase,
    /// Also derive force vectors `K d_k` from the plant stiffness.
    pub force_vectors: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            repeats: 1,
            trials: 100,
            max_sn: 10,
            base: TrialBase::Random,
            force_vectors: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("calibration repeats must be at least 1".into()));
        }
        if self.trials < MIN_TRIALS {
            return Err(Error::Calibration(format!(
                "dispersion characterization needs at least {MIN_TRIALS} trials, got {}",
                self.trials
            )));
        }
        if self.max_sn == 0 {
            return Err(Error::Config("max_sn must be at least 1".into()));
        }
        Ok(())
    }
}

/// One random correction used to characterize the approximation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionTrial {
    pub trial: usize,
    pub u: InputVector,
    pub b: SwitchVector,
    pub s_n: usize,
    pub on_count: usize,
    /// Distance of the trial's base state from the all-OFF baseline.
    pub base_distance: f64,
    pub eps_a: Vec<f64>,
}

/// Per-DOF diagnostics of |ε_a|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofDiagnostics {
    pub vs_switch_count: RankCorrelation,
    pub vs_base_distance: RankCorrelation,
    pub vs_on_count: RankCorrelation,
}

/// Mean and standard deviation of ε_a per DOF for one switch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBin {
    pub s_n: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub j: InfluenceMatrix,
    pub f: Option<InfluenceMatrix>,
    pub x0: StateVector,
    pub dispersion: DispersionModel,
    pub sample_count: usize,
    pub residual_stats: Vec<ResidualBin>,
    pub diagnostics: Vec<DofDiagnostics>,
    pub trials: Vec<DispersionTrial>,
}

fn readout_checked(
    plant: &PlantModel,
    u: &InputVector,
    rng: &mut StreamRng,
) -> Result<DVector<f64>> {
    let n = plant.n();
    plant
        .steady_state(u, &FaultState::none(), &LoadState::zero(n), rng)
        .map(StateVector::into_vector)
        .map_err(|e| Error::Calibration(format!("non-finite readout: {e}")))
}

/// Sequential single-actuator activation. Returns the all-OFF baseline and the
/// displacement influence matrix, each averaged over `repeats`.
pub fn identify_influence_vectors(
    plant: &PlantModel,
    repeats: usize,
    rng: &mut StreamRng,
) -> Result<(StateVector, InfluenceMatrix)> {
    if repeats == 0 {
        return Err(Error::Config("calibration repeats must be at least 1".into()));
    }
    let (n, m) = (plant.n(), plant.m());
    let mut x0 = DVector::zeros(n);
    let mut sums = DMatrix::zeros(n, m);
    for _ in 0..repeats {
        x0 += readout_checked(plant, &InputVector::zeros(m), rng)?;
        for k in 0..m {
            let x = readout_checked(plant, &InputVector::unit(m, k), rng)?;
            let mut col = sums.column_mut(k);
            col += &x;
        }
    }
    let r = repeats as f64;
    x0 /= r;
    let mut j = sums / r;
    for k in 0..m {
        let mut col = j.column_mut(k);
        col -= &x0;
    }
    Ok((
        StateVector::from_vector(x0)?,
        InfluenceMatrix::new(j, InfluenceKind::Displacement)?,
    ))
}

/// Column-wise `f_k = K d_k`.
pub fn force_from_displacement(j: &InfluenceMatrix, stiffness: &DMatrix<f64>) -> Result<InfluenceMatrix> {
    if j.kind() != InfluenceKind::Displacement {
        return Err(Error::Contract("expected displacement influence vectors".into()));
    }
    if stiffness.nrows() != j.n() || stiffness.ncols() != j.n() {
        return Err(Error::DimensionMismatch {
            what: "stiffness",
            expected: j.n(),
            actual: stiffness.nrows(),
        });
    }
    if stiffness.clone().cholesky().is_none() {
        return Err(Error::Config("stiffness is singular or not positive-definite".into()));
    }
    InfluenceMatrix::new(stiffness * j.matrix(), InfluenceKind::Force)
}

/// Runs random corrections and fits the dispersion law `σ_i √s_n` per DOF.
#[allow(clippy::too_many_arguments)]
pub fn characterize_dispersion(
    plant: &PlantModel,
    x0: &StateVector,
    j: &InfluenceMatrix,
    trials: usize,
    max_sn: usize,
    base: TrialBase,
    rng: &mut StreamRng,
) -> Result<(DispersionModel, Vec<DispersionTrial>)> {
    if trials < MIN_TRIALS {
        return Err(Error::Calibration(format!(
            "dispersion characterization needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let (n, m) = (plant.n(), plant.m());
    Error::check_dim("calibration J rows", n, j.n())?;
    Error::check_dim("calibration J columns", m, j.m())?;
    let max_sn = max_sn.clamp(1, m);

    // one independent stream per trial so trials can be evaluated in any order
    let seeds: Vec<u64> = (0..trials).map(|_| rng.random()).collect();
    let mut records = Vec::with_capacity(trials);
    for (t, seed) in seeds.into_iter().enumerate() {
        let mut trng = StreamRng::seed_from_u64(seed);
        let u = match base {
            TrialBase::Random => InputVector::from_bools((0..m).map(|_| trng.random_bool(0.5)).collect()),
            TrialBase::AllOff => InputVector::zeros(m),
        };
        let s = trng.random_range(1..=max_sn);
        let mut b = SwitchVector::zeros(m);
        for k in sample(&mut trng, m, s) {
            b.set(k, true);
        }
        let before = readout_checked(plant, &u, &mut trng)?;
        let after = readout_checked(plant, &apply_switch(&u, &b)?, &mut trng)?;
        let jt = updated_jacobian(j, &u, &StateVector::from_vector(before.clone())?, None)?;
        let eps = (&after - &before) - superpose(&jt, &b)?;
        records.push(DispersionTrial {
            trial: t,
            on_count: u.count_ones(),
            base_distance: (&before - x0.vector()).norm(),
            u,
            b,
            s_n: s,
            eps_a: eps.as_slice().to_vec(),
        });
    }
    Ok((fit_dispersion(&records, n, m)?, records))
}

/// Least-squares fit of `|ε_a,i| ≈ c_i √s_n`, converted to a Gaussian σ via
/// `E|N(0, σ²)| = σ √(2/π)`. Per-actuator σ come from a ratio estimator
/// `E[ε² | k switched] / E[s_n | k switched]`.
pub fn fit_dispersion(records: &[DispersionTrial], n: usize, m: usize) -> Result<DispersionModel> {
    let mut shared = DVector::zeros(n);
    let den: f64 = records.iter().map(|r| r.s_n as f64).sum();
    if den <= 0.0 {
        return Err(Error::Calibration("no switching trials to fit".into()));
    }
    for i in 0..n {
        let num: f64 = records.iter().map(|r| (r.s_n as f64).sqrt() * r.eps_a[i].abs()).sum();
        shared[i] = num / den * (std::f64::consts::PI / 2.0).sqrt();
    }

    let mut per = DMatrix::from_fn(n, m, |i, _| shared[i]);
    for k in 0..m {
        let chosen: Vec<&DispersionTrial> = records.iter().filter(|r| r.b.get(k)).collect();
        if chosen.is_empty() {
            continue;
        }
        let s_sum: f64 = chosen.iter().map(|r| r.s_n as f64).sum();
        for i in 0..n {
            let e2: f64 = chosen.iter().map(|r| r.eps_a[i] * r.eps_a[i]).sum();
            per[(i, k)] = (e2 / s_sum).sqrt();
        }
    }
    let spread = (0..n).any(|i| {
        let row = per.row(i);
        let (lo, hi) = (row.min(), row.max());
        lo > 0.0 && hi / lo > PER_ACTUATOR_SPREAD
    });
    if spread {
        DispersionModel::per_actuator(per)
    } else {
        DispersionModel::shared(shared, m)
    }
}

fn diagnostics(records: &[DispersionTrial], n: usize) -> Vec<DofDiagnostics> {
    let s: Vec<f64> = records.iter().map(|r| r.s_n as f64).collect();
    let dist: Vec<f64> = records.iter().map(|r| r.base_distance).collect();
    let ons: Vec<f64> = records.iter().map(|r| r.on_count as f64).collect();
    (0..n)
        .map(|i| {
            let e: Vec<f64> = records.iter().map(|r| r.eps_a[i].abs()).collect();
            DofDiagnostics {
                vs_switch_count: spearman(&s, &e),
                vs_base_distance: spearman(&dist, &e),
                vs_on_count: spearman(&ons, &e),
            }
        })
        .collect()
}

fn residual_bins(records: &[DispersionTrial], n: usize) -> Vec<ResidualBin> {
    let mut by_sn: BTreeMap<usize, Vec<&DispersionTrial>> = BTreeMap::new();
    for r in records {
        by_sn.entry(r.s_n).or_default().push(r);
    }
    by_sn
        .into_iter()
        .map(|(s_n, rs)| {
            let c = rs.len() as f64;
            let mean: Vec<f64> = (0..n).map(|i| rs.iter().map(|r| r.eps_a[i]).sum::<f64>() / c).collect();
            let std = (0..n)
                .map(|i| {
                    if rs.len() < 2 {
                        0.0
                    } else {
                        let v = rs.iter().map(|r| (r.eps_a[i] - mean[i]).powi(2)).sum::<f64>() / (c - 1.0);
                        v.sqrt()
                    }
                })
                .collect();
            ResidualBin {
                s_n,
                count: rs.len(),
                mean,
                std,
            }
        })
        .collect()
}

/// Full start-up calibration.
pub fn calibrate(plant: &PlantModel, config: &CalibrationConfig, rng: &mut StreamRng) -> Result<CalibrationReport> {
    config.validate()?;
    let (x0, j) = identify_influence_vectors(plant, config.repeats, rng)?;
    let f = if config.force_vectors {
        Some(force_from_displacement(&j, plant.stiffness())?)
    } else {
        None
    };
    let (dispersion, trials) =
        characterize_dispersion(plant, &x0, &j, config.trials, config.max_sn, config.base, rng)?;
    let n = plant.n();
    Ok(CalibrationReport {
        residual_stats: residual_bins(&trials, n),
        diagnostics: diagnostics(&trials, n),
        sample_count: trials.len(),
        j,
        f,
        x0,
        dispersion,
        trials,
    })
}

impl CalibrationReport {
    pub fn n(&self) -> usize {
        self.j.n()
    }

    pub fn m(&self) -> usize {
        self.j.m()
    }

    /// Checks the report against a plant's dimensions.
    pub fn check_plant(&self, plant: &PlantModel) -> Result<()> {
        Error::check_dim("calibration DOFs", plant.n(), self.n())?;
        Error::check_dim("calibration actuators", plant.m(), self.m())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = ReportDoc {
            schema_version: 1,
            n: self.n(),
            m: self.m(),
            x0: self.x0.as_slice().to_vec(),
            j: matrix_rows(self.j.matrix()),
            f: self.f.as_ref().map(|f| matrix_rows(f.matrix())),
            dispersion: DispersionDoc {
                mode: if self.dispersion.shared_sigma().is_some() { "shared" } else { "per_actuator" }.into(),
                shared_sigma: self.dispersion.shared_sigma().map(|s| s.as_slice().to_vec()),
                per_actuator_sigma: matrix_rows(self.dispersion.per_actuator_sigma()),
            },
            sample_count: self.sample_count,
            residual_stats: self.residual_stats.clone(),
            diagnostics: self.diagnostics.iter().map(DiagnosticsDoc::from).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ReportDoc = serde_json::from_str(text)?;
        if doc.schema_version != 1 {
            return Err(Error::validation(format!(
                "unsupported calibration schema_version {}",
                doc.schema_version
            )));
        }
        let j = InfluenceMatrix::new(matrix_from_rows(&doc.j, doc.m, "j")?, InfluenceKind::Displacement)?;
        Error::check_dim("calibration J rows", doc.n, j.n())?;
        Error::check_dim("calibration J columns", doc.m, j.m())?;
        let f = doc
            .f
            .map(|rows| InfluenceMatrix::new(matrix_from_rows(&rows, doc.m, "f")?, InfluenceKind::Force))
            .transpose()?;
        let dispersion = match doc.dispersion.shared_sigma {
            Some(s) if doc.dispersion.mode == "shared" => DispersionModel::shared(DVector::from_vec(s), doc.m)?,
            _ => DispersionModel::per_actuator(matrix_from_rows(&doc.dispersion.per_actuator_sigma, doc.m, "sigma")?)?,
        };
        Ok(CalibrationReport {
            j,
            f,
            x0: StateVector::new(doc.x0)?,
            dispersion,
            sample_count: doc.sample_count,
            residual_stats: doc.residual_stats,
            diagnostics: Vec::new(),
            trials: Vec::new(),
        })
    }

    /// Trial rows: `trial,s_n,on_count,base_distance,eps_a_0..`.
    pub fn write_dispersion_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["trial".to_string(), "s_n".into(), "on_count".into(), "base_distance".into()];
        header.extend((0..self.n()).map(|i| format!("eps_a_{i}")));
        w.write_record(&header)?;
        for t in &self.trials {
            let mut row = vec![
                t.trial.to_string(),
                t.s_n.to_string(),
                t.on_count.to_string(),
                t.base_distance.to_string(),
            ];
            row.extend(t.eps_a.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DispersionDoc {
    mode: String,
    #[serde(default)]
    shared_sigma: Option<Vec<f64>>,
    per_actuator_sigma: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsDoc {
    rho_switch_count: f64,
    p_switch_count: f64,
    rho_base_distance: f64,
    p_base_distance: f64,
    rho_on_count: f64,
    p_on_count: f64,
}

impl From<&DofDiagnostics> for DiagnosticsDoc {
    fn from(d: &DofDiagnostics) -> Self {
        DiagnosticsDoc {
            rho_switch_count: d.vs_switch_count.rho,
            p_switch_count: d.vs_switch_count.p_positive,
            rho_base_distance: d.vs_base_distance.rho,
            p_base_distance: d.vs_base_distance.p_positive,
            rho_on_count: d.vs_on_count.rho,
            p_on_count: d.vs_on_count.p_positive,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    schema_version: u32,
    n: usize,
    m: usize,
    x0: Vec<f64>,
    j: Vec<Vec<f64>>,
    #[serde(default)]
    f: Option<Vec<Vec<f64>>>,
    dispersion: DispersionDoc,
    sample_count: usize,
    #[serde(default)]
    residual_stats: Vec<ResidualBin>,
    #[serde(default)]
    diagnostics: Vec<DiagnosticsDoc>,
}
