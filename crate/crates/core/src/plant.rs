//! Simulated ground-truth robot.
//!
//! The plant obeys `M ẍ + C ẋ + K (x − x_rest) = A û + f_ext + γ K q(û)`
//! where `û` is the commanded input after fault masking and
//! `q_i(û) = Σ_{j≠k} Q_i[j,k] û_j û_k` is a pure cross-coupling term. At rest
//! this gives `x = x_rest + K⁻¹(A û + f_ext) + γ q(û)`. Readouts add
//! per-DOF Gaussian noise.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputVector, StateVector};

pub const PLANT_SCHEMA_VERSION: u32 = 1;

/// Actuators forced ON or OFF regardless of the command.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultState {
    pub stuck_on: BTreeSet<usize>,
    pub stuck_off: BTreeSet<usize>,
}

impl FaultState {
    pub fn none() -> Self {
        FaultState::default()
    }

    pub fn stuck_on(indices: impl IntoIterator<Item = usize>) -> Self {
        FaultState {
            stuck_on: indices.into_iter().collect(),
            stuck_off: BTreeSet::new(),
        }
    }

    pub fn stuck_off(indices: impl IntoIterator<Item = usize>) -> Self {
        FaultState {
            stuck_on: BTreeSet::new(),
            stuck_off: indices.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stuck_on.is_empty() && self.stuck_off.is_empty()
    }

    pub fn is_stuck(&self, k: usize) -> bool {
        self.stuck_on.contains(&k) || self.stuck_off.contains(&k)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if let Some(k) = self.stuck_on.intersection(&self.stuck_off).next() {
            return Err(Error::Config(format!(
                "actuator {k} is both stuck on and stuck off"
            )));
        }
        if let Some(k) = self.stuck_on.iter().chain(&self.stuck_off).find(|&&k| k >= m) {
            return Err(Error::Config(format!(
                "fault on actuator {k} but plant has {m} actuators"
            )));
        }
        Ok(())
    }
}

/// External force applied to the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadState {
    pub f_ext: DVector<f64>,
}

impl LoadState {
    pub fn zero(n: usize) -> Self {
        LoadState {
            f_ext: DVector::zeros(n),
        }
    }

    pub fn new(f_ext: Vec<f64>) -> Result<Self> {
        if f_ext.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("load has non-finite entries".into()));
        }
        Ok(LoadState {
            f_ext: DVector::from_vec(f_ext),
        })
    }
}

/// Masks the command with stuck actuators.
pub fn effective_input(u: &InputVector, faults: &FaultState) -> Result<InputVector> {
    faults.validate(u.len())?;
    let mut out = u.clone();
    for &k in &faults.stuck_on {
        out.set(k, true);
    }
    for &k in &faults.stuck_off {
        out.set(k, false);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    name: Option<String>,
    force_map: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    damping: DMatrix<f64>,
    inertia: DMatrix<f64>,
    nonlin_gain: f64,
    coupling: Vec<DMatrix<f64>>,
    noise_sigma: DVector<f64>,
    x_rest: DVector<f64>,
    isotropic: bool,
    dof_scale: DVector<f64>,
    dispersion_target: Option<DVector<f64>>,
    // derived
    stiffness_chol: Cholesky<f64, Dyn>,
    displacement_map: DMatrix<f64>,
    max_dt: f64,
}

/// Raw plant parameters; validated by [`PlantModel::new`].
#[derive(Debug, Clone)]
pub struct PlantParams {
    pub name: Option<String>,
    pub force_map: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub inertia: DMatrix<f64>,
    pub nonlin_gain: f64,
    pub coupling: Vec<DMatrix<f64>>,
    pub noise_sigma: DVector<f64>,
    pub x_rest: DVector<f64>,
    pub isotropic: bool,
    pub dof_scale: DVector<f64>,
    pub dispersion_target: Option<DVector<f64>>,
}

impl PlantParams {
    /// Linear noise-free plant with unit inertia and the given maps.
    pub fn linear(force_map: DMatrix<f64>, stiffness: DMatrix<f64>, damping: DMatrix<f64>) -> Self {
        let n = force_map.nrows();
        let m = force_map.ncols();
        PlantParams {
            name: None,
            force_map,
            stiffness,
            damping,
            inertia: DMatrix::identity(n, n),
            nonlin_gain: 0.0,
            coupling: vec![DMatrix::zeros(m, m); n],
            noise_sigma: DVector::zeros(n),
            x_rest: DVector::zeros(n),
            isotropic: false,
            dof_scale: DVector::from_element(n, 1.0),
            dispersion_target: None,
        }
    }
}

fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= 1e-9 * scale
}

/// Eigenvalues of `L⁻¹ A L⁻ᵀ` where `M = L Lᵀ`.
fn mass_normalised_eigs(a: &DMatrix<f64>, m_chol: &Cholesky<f64, Dyn>) -> DVector<f64> {
    let l = m_chol.l();
    let l_inv = l.clone().try_inverse().expect("cholesky factor is invertible");
    let sym = symmetric_part(&(&l_inv * symmetric_part(a) * l_inv.transpose()));
    SymmetricEigen::new(sym).eigenvalues
}

impl PlantModel {
    pub fn new(p: PlantParams) -> Result<Self> {
        let n = p.force_map.nrows();
        let m = p.force_map.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Config("plant needs at least one DOF and one actuator".into()));
        }
        for (what, mat) in [("stiffness", &p.stiffness), ("damping", &p.damping), ("inertia", &p.inertia)] {
            if mat.nrows() != n || mat.ncols() != n {
                return Err(Error::Config(format!("{what} must be {n}x{n}")));
            }
        }
        Error::check_dim("noise_sigma", n, p.noise_sigma.len()).map_err(cfg)?;
        Error::check_dim("x_rest", n, p.x_rest.len()).map_err(cfg)?;
        Error::check_dim("dof_scale", n, p.dof_scale.len()).map_err(cfg)?;
        Error::check_dim("coupling tensors", n, p.coupling.len()).map_err(cfg)?;
        if let Some(t) = &p.dispersion_target {
            Error::check_dim("dispersion_target", n, t.len()).map_err(cfg)?;
        }
        for q in &p.coupling {
            if q.nrows() != m || q.ncols() != m || !is_symmetric(q) {
                return Err(Error::Config(format!("coupling matrices must be symmetric {m}x{m}")));
            }
        }
        let all_finite = [&p.force_map, &p.stiffness, &p.damping, &p.inertia]
            .iter()
            .all(|mat| mat.iter().all(|v| v.is_finite()))
            && p.coupling.iter().all(|q| q.iter().all(|v| v.is_finite()))
            && p.x_rest.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("plant has non-finite parameters".into()));
        }
        if !(p.nonlin_gain >= 0.0 && p.nonlin_gain.is_finite()) {
            return Err(Error::Config("nonlinear gain must be finite and non-negative".into()));
        }
        if p.noise_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise sigma must be finite and non-negative".into()));
        }
        if !is_symmetric(&p.stiffness) {
            return Err(Error::Config("stiffness must be symmetric".into()));
        }
        let stiffness_chol = Cholesky::new(p.stiffness.clone())
            .ok_or_else(|| Error::Config("stiffness is singular or not positive-definite".into()))?;
        let m_chol = Cholesky::new(symmetric_part(&p.inertia))
            .ok_or_else(|| Error::Config("inertia is not positive-definite".into()))?;
        if Cholesky::new(symmetric_part(&p.damping)).is_none() {
            return Err(Error::Config("damping is not positive-definite".into()));
        }
        let displacement_map = stiffness_chol.solve(&p.force_map);

        let k_eigs = mass_normalised_eigs(&p.stiffness, &m_chol);
        let c_eigs = mass_normalised_eigs(&p.damping, &m_chol);
        let omega_max = k_eigs.max().sqrt();
        let dissipative_dt = 2.0 * c_eigs.min() / k_eigs.max();
        let max_dt = (1.0 / omega_max).min(dissipative_dt);

        Ok(PlantModel {
            name: p.name,
            force_map: p.force_map,
            stiffness: p.stiffness,
            damping: p.damping,
            inertia: p.inertia,
            nonlin_gain: p.nonlin_gain,
            coupling: p.coupling,
            noise_sigma: p.noise_sigma,
            x_rest: p.x_rest,
            isotropic: p.isotropic,
            dof_scale: p.dof_scale,
            dispersion_target: p.dispersion_target,
            stiffness_chol,
            displacement_map,
            max_dt,
        })
    }

    pub fn params(&self) -> PlantParams {
        PlantParams {
            name: self.name.clone(),
            force_map: self.force_map.clone(),
            stiffness: self.stiffness.clone(),
            damping: self.damping.clone(),
            inertia: self.inertia.clone(),
            nonlin_gain: self.nonlin_gain,
            coupling: self.coupling.clone(),
            noise_sigma: self.noise_sigma.clone(),
            x_rest: self.x_rest.clone(),
            isotropic: self.isotropic,
            dof_scale: self.dof_scale.clone(),
            dispersion_target: self.dispersion_target.clone(),
        }
    }

    /// Number of DOFs.
    pub fn n(&self) -> usize {
        self.force_map.nrows()
    }

    /// Number of actuators.
    pub fn m(&self) -> usize {
        self.force_map.ncols()
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn force_map(&self) -> &DMatrix<f64> {
        &self.force_map
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn inertia(&self) -> &DMatrix<f64> {
        &self.inertia
    }

    pub fn nonlin_gain(&self) -> f64 {
        self.nonlin_gain
    }

    pub fn noise_sigma(&self) -> &DVector<f64> {
        &self.noise_sigma
    }

    pub fn x_rest(&self) -> &DVector<f64> {
        &self.x_rest
    }

    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }

    pub fn dof_scale(&self) -> &DVector<f64> {
        &self.dof_scale
    }

    /// Per-DOF `σ` of the `σ√s_n` dispersion law the preset was tuned for.
    pub fn dispersion_target(&self) -> Option<&DVector<f64>> {
        self.dispersion_target.as_ref()
    }

    /// True displacement influence vectors `K⁻¹ A`.
    pub fn displacement_map(&self) -> &DMatrix<f64> {
        &self.displacement_map
    }

    /// Largest integration step accepted by [`PlantModel::step`].
    pub fn max_dt(&self) -> f64 {
        self.max_dt
    }

    /// Runtime abort when a state leaves any physically plausible range.
    pub fn check_bounded(&self, x: &DVector<f64>) -> Result<()> {
        match x.iter().position(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            Some(i) => Err(Error::Runtime(format!("plant state diverged: x[{i}] = {:e}", x[i]))),
            None => Ok(()),
        }
    }

    pub fn with_noise(&self, noise_sigma: DVector<f64>) -> Result<Self> {
        let mut p = self.params();
        p.noise_sigma = noise_sigma;
        PlantModel::new(p)
    }

    /// Cross-coupling term `q(û)`.
    pub fn coupling_term(&self, u_hat: &InputVector) -> DVector<f64> {
        let ons: Vec<usize> = u_hat.ones_indices().collect();
        DVector::from_iterator(
            self.n(),
            self.coupling.iter().map(|q| {
                let mut acc = 0.0;
                for &a in &ons {
                    for &b in &ons {
                        if a != b {
                            acc += q[(a, b)];
                        }
                    }
                }
                acc
            }),
        )
    }

    /// Generalised force produced by the (already fault-masked) input.
    fn input_force(&self, u_hat: &InputVector, load: &LoadState) -> DVector<f64> {
        let mut f = load.f_ext.clone();
        for k in u_hat.ones_indices() {
            f += self.force_map.column(k);
        }
        if self.nonlin_gain != 0.0 {
            f += &self.stiffness * self.coupling_term(u_hat) * self.nonlin_gain;
        }
        f
    }

    fn check_inputs(&self, u: &InputVector, load: &LoadState) -> Result<()> {
        Error::check_dim("plant input", self.m(), u.len())?;
        Error::check_dim("plant load", self.n(), load.f_ext.len())?;
        Ok(())
    }

    /// Noise-free equilibrium for command `u`.
    pub fn steady_state_exact(
        &self,
        u: &InputVector,
        faults: &FaultState,
        load: &LoadState,
    ) -> Result<DVector<f64>> {
        self.check_inputs(u, load)?;
        let u_hat = effective_input(u, faults)?;
        let mut f = load.f_ext.clone();
        for k in u_hat.ones_indices() {
            f += self.force_map.column(k);
        }
        let mut x = &self.x_rest + self.stiffness_chol.solve(&f);
        if self.nonlin_gain != 0.0 {
            x += self.coupling_term(&u_hat) * self.nonlin_gain;
        }
        Ok(x)
    }

    /// Adds readout noise to a true state. Always draws `n` normals so stream
    /// consumption does not depend on the noise level.
    pub fn readout<R: Rng + ?Sized>(&self, x_true: &DVector<f64>, rng: &mut R) -> Result<StateVector> {
        let noisy = DVector::from_iterator(
            self.n(),
            x_true.iter().zip(self.noise_sigma.iter()).map(|(&x, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                x + s * z
            }),
        );
        StateVector::from_vector(noisy).map_err(|e| Error::Runtime(format!("readout: {e}")))
    }

    /// Noisy steady-state readout for command `u`.
    pub fn steady_state<R: Rng + ?Sized>(
        &self,
        u: &InputVector,
        faults: &FaultState,
        load: &LoadState,
        rng: &mut R,
    ) -> Result<StateVector> {
        let x = self.steady_state_exact(u, faults, load)?;
        self.readout(&x, rng)
    }

    /// One semi-implicit Euler step: velocity first, with damping taken
    /// implicitly, then position from the new velocity.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        x: &DVector<f64>,
        x_dot: &DVector<f64>,
        u: &InputVector,
        faults: &FaultState,
        load: &LoadState,
        dt: f64,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_inputs(u, load)?;
        Error::check_dim("step state", self.n(), x.len())?;
        Error::check_dim("step velocity", self.n(), x_dot.len())?;
        if !(dt > 0.0) || dt > self.max_dt {
            return Err(Error::Config(format!(
                "integration step {dt} s outside (0, {:.6}] s for this plant",
                self.max_dt
            )));
        }
        let u_hat = effective_input(u, faults)?;
        let force = self.input_force(&u_hat, load);
        let spring = &self.stiffness * (x - &self.x_rest);
        let lhs = &self.inertia + &self.damping * dt;
        let rhs = &self.inertia * x_dot + (force - spring) * dt;
        let v_next = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Runtime("singular integration matrix".into()))?;
        let x_next = x + &v_next * dt;
        Ok((x_next, v_next))
    }

    /// Mechanical energy relative to the rest configuration.
    pub fn energy(&self, x: &DVector<f64>, x_dot: &DVector<f64>) -> f64 {
        let dx = x - &self.x_rest;
        0.5 * x_dot.dot(&(&self.inertia * x_dot)) + 0.5 * dx.dot(&(&self.stiffness * &dx))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PlantDoc::from(self)).expect("plant document serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PlantDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

fn cfg(e: Error) -> Error {
    Error::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// JSON document

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols_hint: usize, what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(ncols_hint, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::validation(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantDoc {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    n: usize,
    m: usize,
    force_map: Vec<Vec<f64>>,
    stiffness: Vec<Vec<f64>>,
    damping: Vec<Vec<f64>>,
    inertia: Vec<Vec<f64>>,
    nonlin_gain: f64,
    coupling: Vec<Vec<Vec<f64>>>,
    noise_sigma: Vec<f64>,
    x_rest: Vec<f64>,
    #[serde(default)]
    isotropic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dof_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dispersion_target: Option<Vec<f64>>,
}

impl From<&PlantModel> for PlantDoc {
    fn from(p: &PlantModel) -> Self {
        PlantDoc {
            schema_version: PLANT_SCHEMA_VERSION,
            name: p.name.clone(),
            n: p.n(),
            m: p.m(),
            force_map: matrix_rows(&p.force_map),
            stiffness: matrix_rows(&p.stiffness),
            damping: matrix_rows(&p.damping),
            inertia: matrix_rows(&p.inertia),
            nonlin_gain: p.nonlin_gain,
            coupling: p.coupling.iter().map(matrix_rows).collect(),
            noise_sigma: p.noise_sigma.as_slice().to_vec(),
            x_rest: p.x_rest.as_slice().to_vec(),
            isotropic: p.isotropic,
            dof_scale: Some(p.dof_scale.as_slice().to_vec()),
            dispersion_target: p.dispersion_target.as_ref().map(|t| t.as_slice().to_vec()),
        }
    }
}

impl TryFrom<PlantDoc> for PlantModel {
    type Error = Error;
    fn try_from(d: PlantDoc) -> Result<Self> {
        if d.schema_version != PLANT_SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported plant schema_version {} (expected {PLANT_SCHEMA_VERSION})",
                d.schema_version
            )));
        }
        let force_map = matrix_from_rows(&d.force_map, d.m, "force_map")?;
        if force_map.nrows() != d.n || force_map.ncols() != d.m {
            return Err(Error::validation(format!("force_map must be {}x{}", d.n, d.m)));
        }
        let coupling = if d.coupling.is_empty() {
            vec![DMatrix::zeros(d.m, d.m); d.n]
        } else {
            d.coupling
                .iter()
                .map(|q| matrix_from_rows(q, d.m, "coupling"))
                .collect::<Result<Vec<_>>>()?
        };
        PlantModel::new(PlantParams {
            name: d.name,
            force_map,
            stiffness: matrix_from_rows(&d.stiffness, d.n, "stiffness")?,
            damping: matrix_from_rows(&d.damping, d.n, "damping")?,
            inertia: matrix_from_rows(&d.inertia, d.n, "inertia")?,
            nonlin_gain: d.nonlin_gain,
            coupling,
            noise_sigma: DVector::from_vec(d.noise_sigma),
            x_rest: DVector::from_vec(d.x_rest),
            isotropic: d.isotropic,
            dof_scale: DVector::from_vec(d.dof_scale.unwrap_or_else(|| vec![1.0; d.n])),
            dispersion_target: d.dispersion_target.map(DVector::from_vec),
        })
    }
}

// ---------------------------------------------------------------------------
// Reference presets

/// Translation DOFs are in mm; rotation DOFs in degrees scaled so that a
/// rotation dispersion of 0.025° matches a translation dispersion of 0.35 mm.
pub const ROTATION_SCALE: f64 = 0.025 / 0.35;
/// Per-switch dispersion of the nonlinear presets on translation DOFs (mm).
pub const DISPERSION_TARGET: f64 = 0.35;
/// Readout noise of the nonlinear presets on translation DOFs (mm).
pub const NOISE_SIGMA: f64 = 0.05;
/// Largest switch count used when tuning the nonlinear presets.
pub const TUNING_MAX_SWITCHES: usize = 10;
const STIFFNESS_RANGE: (f64, f64) = (300.0, 600.0);
const ISOTROPIC_STIFFNESS: f64 = 400.0;
/// Scaled-coordinate inertia. Slow enough that every mode settles over a few
/// seconds, like a pneumatic muscle robot.
const INERTIA: f64 = 400.0;
const DAMPING_MASS: f64 = 200.0;
const DAMPING_STIFF: f64 = 1.0;
const INFLUENCE_MAGNITUDE: (f64, f64) = (2.0, 5.0);
const MIN_COLUMN_ANGLE_DEG: f64 = 5.0;
const MAX_PROJECTION_CONDITION: f64 = 50.0;
/// States beyond this magnitude (mm or deg) count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Linear,
    Nonlinear,
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetName {
    pub kind: PresetKind,
    pub m: usize,
    pub n: usize,
}

impl PresetName {
    /// Parses `linear<m>x<n>`, `nonlinear<m>x<n>` or `isotropic<m>x<n>`.
    pub fn parse(name: &str) -> Result<Self> {
        let (kind, rest) = if let Some(r) = name.strip_prefix("nonlinear") {
            (PresetKind::Nonlinear, r)
        } else if let Some(r) = name.strip_prefix("linear") {
            (PresetKind::Linear, r)
        } else if let Some(r) = name.strip_prefix("isotropic") {
            (PresetKind::Isotropic, r)
        } else {
            return Err(Error::Config(format!("unknown plant preset {name:?}")));
        };
        let parsed = rest
            .split_once('x')
            .and_then(|(m, n)| Some((m.parse::<usize>().ok()?, n.parse::<usize>().ok()?)));
        match parsed {
            Some((m, n)) if (1..=64).contains(&m) && (1..=12).contains(&n) => Ok(PresetName { kind, m, n }),
            _ => Err(Error::Config(format!(
                "unknown plant preset {name:?}: expected <kind><m>x<n> with 1 ≤ m ≤ 64, 1 ≤ n ≤ 12"
            ))),
        }
    }
}

/// Descriptions of the preset families, for `list-presets`.
pub fn preset_families() -> Vec<(&'static str, &'static str)> {
    vec![
        ("linear20x4", "20 actuators, 4 DOFs (2 translation mm, 2 rotation deg); exact superposition, no noise"),
        ("nonlinear20x4", "linear20x4 plus quadratic cross-coupling tuned to 0.35*sqrt(s_n) mm dispersion and 0.05 mm readout noise"),
        ("isotropic20x2", "isotropic stiffness (K = kI), displacement vectors usable for bang-bang control"),
        ("<kind><m>x<n>", "any kind in {linear, nonlinear, isotropic} with 1<=m<=64 actuators and 1<=n<=12 DOFs"),
    ]
}

fn dof_scales(n: usize) -> DVector<f64> {
    if n >= 4 {
        DVector::from_fn(n, |i, _| if i < n / 2 { 1.0 } else { ROTATION_SCALE })
    } else {
        DVector::from_element(n, 1.0)
    }
}

fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    g.qr().q()
}

fn random_direction<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Largest |cos| between two columns, and the worst 2-row condition number.
pub fn column_geometry(d: &DMatrix<f64>, scale: &DVector<f64>) -> (f64, f64) {
    let scaled = DMatrix::from_fn(d.nrows(), d.ncols(), |i, k| d[(i, k)] / scale[i]);
    let mut max_cos: f64 = 0.0;
    for a in 0..scaled.ncols() {
        for b in (a + 1)..scaled.ncols() {
            let ca = scaled.column(a);
            let cb = scaled.column(b);
            max_cos = max_cos.max((ca.dot(&cb) / (ca.norm() * cb.norm())).abs());
        }
    }
    let mut max_cond: f64 = 1.0;
    for i in 0..d.nrows() {
        for j in (i + 1)..d.nrows() {
            let sub = DMatrix::from_rows(&[d.row(i).into_owned(), d.row(j).into_owned()]);
            let sv = sub.singular_values();
            let cond = sv.max() / sv.min();
            max_cond = max_cond.max(if cond.is_finite() { cond } else { f64::INFINITY });
        }
    }
    (max_cos, max_cond)
}

/// Least-squares slope of `E|ε|` against `√s_n` (converted to σ) per unit
/// `γ·σ_Q` for switch counts uniform in `1..=max_sn`, with base bits
/// Bernoulli(½).
pub fn dispersion_gain(m: usize, max_sn: usize) -> f64 {
    let top = max_sn.min(m);
    let (mut num, mut den) = (0.0, 0.0);
    for s in 1..=top {
        let s = s as f64;
        // Var(Δq_i) = σ_Q² s (2m − s − 1)
        num += s * (2.0 * m as f64 - s - 1.0).max(0.0).sqrt();
        den += s;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Builds a reproducible reference plant.
pub fn make_reference_plant(preset: &str, seed: u64) -> Result<PlantModel> {
    let spec = PresetName::parse(preset)?;
    let (n, m) = (spec.n, spec.m);
    let mut rng = crate::rng::stream(seed, "plant");

    let isotropic = spec.kind == PresetKind::Isotropic;
    let scale = if isotropic {
        DVector::from_element(n, 1.0)
    } else {
        dof_scales(n)
    };

    // Mechanics in scaled coordinates y = S⁻¹ x, where every DOF is mm-like.
    let k_hat = if isotropic {
        DMatrix::identity(n, n) * ISOTROPIC_STIFFNESS
    } else {
        let r = random_orthogonal(n, &mut rng);
        let eig = DVector::from_fn(n, |_, _| rng.random_range(STIFFNESS_RANGE.0..STIFFNESS_RANGE.1));
        symmetric_part(&(&r * DMatrix::from_diagonal(&eig) * r.transpose()))
    };
    let c_hat = DMatrix::identity(n, n) * DAMPING_MASS + &k_hat * DAMPING_STIFF;

    let cos_limit = MIN_COLUMN_ANGLE_DEG.to_radians().cos();
    let mut d_hat = DMatrix::zeros(n, m);
    let mut accepted = false;
    for _attempt in 0..200 {
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m);
        for _ in 0..m {
            let mut placed = None;
            for _try in 0..1000 {
                let dir = random_direction(n, &mut rng);
                if n == 1 || cols.iter().all(|c| (c.dot(&dir) / c.norm()).abs() < cos_limit) {
                    placed = Some(dir);
                    break;
                }
            }
            let Some(dir) = placed else { break };
            let mag = rng.random_range(INFLUENCE_MAGNITUDE.0..INFLUENCE_MAGNITUDE.1);
            cols.push(dir * mag);
        }
        if cols.len() < m {
            continue;
        }
        d_hat = DMatrix::from_columns(&cols);
        let d = DMatrix::from_fn(n, m, |i, k| d_hat[(i, k)] * scale[i]);
        let (_, cond) = column_geometry(&d, &scale);
        if n < 2 || cond < MAX_PROJECTION_CONDITION {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Config(format!(
            "could not draw {m} sufficiently diverse influence vectors in {n} DOFs"
        )));
    }

    let s_inv = DMatrix::from_diagonal(&scale.map(|s| 1.0 / s));
    let inertia = &s_inv * &s_inv * INERTIA;
    let stiffness = symmetric_part(&(&s_inv * &k_hat * &s_inv));
    let damping = symmetric_part(&(&s_inv * &c_hat * &s_inv));
    let force_map = &s_inv * &k_hat * &d_hat;

    let (nonlin_gain, coupling, noise_sigma, dispersion_target) = if spec.kind == PresetKind::Nonlinear && m >= 2 {
        let coupling: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                let mut q = DMatrix::zeros(m, m);
                for a in 0..m {
                    for b in (a + 1)..m {
                        let v: f64 = Normal::new(0.0, 1.0).expect("valid").sample(&mut rng);
                        q[(a, b)] = v;
                        q[(b, a)] = v;
                    }
                }
                // normalise off-diagonal RMS to the DOF unit scale
                let pairs = (m * (m - 1)) as f64;
                let rms = (q.iter().map(|v| v * v).sum::<f64>() / pairs).sqrt();
                q * (scale[i] / rms)
            })
            .collect();
        let gain = DISPERSION_TARGET / dispersion_gain(m, TUNING_MAX_SWITCHES);
        (
            gain,
            coupling,
            &scale * NOISE_SIGMA,
            Some(&scale * DISPERSION_TARGET),
        )
    } else {
        (0.0, vec![DMatrix::zeros(m, m); n], DVector::zeros(n), None)
    };

    PlantModel::new(PlantParams {
        name: Some(preset.to_string()),
        force_map,
        stiffness,
        damping,
        inertia,
        nonlin_gain,
        coupling,
        noise_sigma,
        x_rest: DVector::zeros(n),
        isotropic,
        dof_scale: scale,
        dispersion_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> InputVector {
        InputVector::from_bits(v).unwrap()
    }

    fn input_from_mask(mask: u64, m: usize) -> InputVector {
        InputVector::from_bools((0..m).map(|k| mask >> k & 1 == 1).collect())
    }

    #[test]
    fn effective_input_examples() {
        assert_eq!(effective_input(&bits(&[0, 1, 0]), &FaultState::none()).unwrap(), bits(&[0, 1, 0]));
        assert_eq!(effective_input(&bits(&[0, 0, 0]), &FaultState::stuck_on([1])).unwrap(), bits(&[0, 1, 0]));
        assert_eq!(effective_input(&bits(&[1, 1, 1]), &FaultState::stuck_off([0, 2])).unwrap(), bits(&[0, 1, 0]));
        let overlap = FaultState {
            stuck_on: [1].into(),
            stuck_off: [1].into(),
        };
        assert!(matches!(effective_input(&bits(&[0, 0, 0]), &overlap), Err(Error::Config(_))));
        assert!(effective_input(&bits(&[0, 0, 0]), &FaultState::stuck_on([3])).is_err());
    }

    #[test]
    fn presets_are_deterministic() {
        let a = make_reference_plant("nonlinear20x4", 3).unwrap();
        let b = make_reference_plant("nonlinear20x4", 3).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = make_reference_plant("nonlinear20x4", 4).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn linear_preset_shape_and_geometry() {
        let p = make_reference_plant("linear20x4", 1).unwrap();
        assert_eq!((p.n(), p.m()), (4, 20));
        assert_eq!(p.nonlin_gain(), 0.0);
        assert_eq!(p.noise_sigma(), &DVector::zeros(4));
        let (max_cos, cond) = column_geometry(p.displacement_map(), p.dof_scale());
        assert!(max_cos < 5f64.to_radians().cos(), "max cos {max_cos}");
        assert!(cond < 50.0, "cond {cond}");
    }

    #[test]
    fn nonlinear_preset_shares_linear_structure() {
        let lin = make_reference_plant("linear20x4", 9).unwrap();
        let nl = make_reference_plant("nonlinear20x4", 9).unwrap();
        assert_eq!(lin.force_map(), nl.force_map());
        assert!(nl.nonlin_gain() > 0.0);
        assert!(nl.dispersion_target().is_some());
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(make_reference_plant("banana", 0).is_err());
        assert!(make_reference_plant("linear0x4", 0).is_err());
    }

    #[test]
    fn steady_state_examples() {
        let p = make_reference_plant("linear20x4", 2).unwrap();
        let mut rng = stream(0, "noise");
        let none = FaultState::none();
        let load = LoadState::zero(4);
        let rest = p.steady_state(&InputVector::zeros(20), &none, &load, &mut rng).unwrap();
        assert_eq!(rest.vector(), p.x_rest());
        let d = p.displacement_map();
        for k in [0, 7, 19] {
            let x = p.steady_state(&InputVector::unit(20, k), &none, &load, &mut rng).unwrap();
            assert!((x.vector() - p.x_rest() - d.column(k)).amax() < 1e-12);
        }
        let mut two = InputVector::zeros(20);
        two.set(3, true);
        two.set(11, true);
        let x = p.steady_state(&two, &none, &load, &mut rng).unwrap();
        let expect = p.x_rest() + d.column(3) + d.column(11);
        assert!((x.vector() - expect).amax() < 1e-12);
    }

    #[test]
    fn linear_superposition_exhaustive_small() {
        let p = make_reference_plant("linear10x3", 5).unwrap();
        let d = p.displacement_map();
        let none = FaultState::none();
        let load = LoadState::zero(3);
        for mask in 0u64..(1 << 10) {
            let u = input_from_mask(mask, 10);
            let x = p.steady_state_exact(&u, &none, &load).unwrap();
            let mut expect = p.x_rest().clone();
            for k in u.ones_indices() {
                expect += d.column(k);
            }
            assert!((x - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn single_actuator_response_exact_on_nonlinear_plant() {
        let p = make_reference_plant("nonlinear20x4", 2).unwrap();
        let none = FaultState::none();
        let load = LoadState::zero(4);
        for k in 0..20 {
            let x = p.steady_state_exact(&InputVector::unit(20, k), &none, &load).unwrap();
            assert!((x - p.x_rest() - p.displacement_map().column(k)).amax() < 1e-12);
        }
    }

    #[test]
    fn load_superposes_on_linear_plant() {
        let p = make_reference_plant("linear20x4", 2).unwrap();
        let u = input_from_mask(0b1011_0110_0001, 20);
        let f = LoadState::new(vec![50.0, -20.0, 3.0, 1.0]).unwrap();
        let base = p.steady_state_exact(&u, &FaultState::none(), &LoadState::zero(4)).unwrap();
        let loaded = p.steady_state_exact(&u, &FaultState::none(), &f).unwrap();
        let k_inv_f = p.stiffness().clone().cholesky().unwrap().solve(&f.f_ext);
        assert!((loaded - base - k_inv_f).amax() < 1e-10);
    }

    #[test]
    fn step_keeps_equilibrium() {
        let p = make_reference_plant("nonlinear20x4", 2).unwrap();
        let u = input_from_mask(0b1100_1010_0111_0001, 20);
        let none = FaultState::none();
        let load = LoadState::zero(4);
        let x = p.steady_state_exact(&u, &none, &load).unwrap();
        let (x1, v1) = p.step(&x, &DVector::zeros(4), &u, &none, &load, 1e-3).unwrap();
        assert!((x1 - &x).amax() < 1e-9);
        assert!(v1.amax() < 1e-9);
    }

    #[test]
    fn step_converges_to_closed_form_steady_state() {
        let p = make_reference_plant("linear20x4", 4).unwrap();
        let u = input_from_mask(0b0110_1001_1100_0101, 20);
        let none = FaultState::none();
        let load = LoadState::zero(4);
        let target = p.steady_state_exact(&u, &none, &load).unwrap();
        let mut x = p.x_rest().clone();
        let mut v = DVector::zeros(4);
        for _ in 0..6_000 {
            (x, v) = p.step(&x, &v, &u, &none, &load, 1e-2).unwrap();
        }
        let rel = (&x - &target).norm() / target.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn step_rejects_unstable_dt() {
        let p = make_reference_plant("linear20x4", 4).unwrap();
        let x = DVector::zeros(4);
        let err = p
            .step(&x, &x, &InputVector::zeros(20), &FaultState::none(), &LoadState::zero(4), 5.0)
            .unwrap_err();
        assert!(err.to_string().contains("outside"));
        assert!(p.step(&x, &x, &InputVector::zeros(20), &FaultState::none(), &LoadState::zero(4), 0.0).is_err());
    }

    #[test]
    fn step_is_bitwise_reproducible() {
        let p = make_reference_plant("nonlinear20x4", 8).unwrap();
        let run = || {
            let mut x = DVector::from_vec(vec![1.0, -2.0, 0.1, 0.0]);
            let mut v = DVector::zeros(4);
            let u = input_from_mask(0b1010_1010_1010_1010_1010, 20);
            for _ in 0..500 {
                (x, v) = p.step(&x, &v, &u, &FaultState::none(), &LoadState::zero(4), 1e-3).unwrap();
            }
            (x, v)
        };
        let (a, b) = (run(), run());
        assert!(a.0.iter().zip(b.0.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert!(a.1.iter().zip(b.1.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn json_round_trip_and_schema_version() {
        let p = make_reference_plant("nonlinear6x4", 1).unwrap();
        let q = PlantModel::from_json(&p.to_json()).unwrap();
        assert_eq!(p.to_json(), q.to_json());
        let bumped = p.to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(PlantModel::from_json(&bumped), Err(Error::Validation { .. })));
        let missing = p.to_json().replace("\"schema_version\": 1,", "");
        assert!(PlantModel::from_json(&missing).is_err());
    }

    #[test]
    fn singular_stiffness_is_a_configuration_error() {
        let mut params = make_reference_plant("linear4x2", 1).unwrap().params();
        params.stiffness = DMatrix::zeros(2, 2);
        assert!(matches!(PlantModel::new(params), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stuck_bits_are_ignored(seed in 0u64..1000, mask in any::<u64>(), k in 0usize..12, on in any::<bool>()) {
            let p = make_reference_plant("nonlinear12x3", seed).unwrap();
            let faults = if on { FaultState::stuck_on([k]) } else { FaultState::stuck_off([k]) };
            let mut u = input_from_mask(mask, 12);
            u.set(k, false);
            let a = p.steady_state_exact(&u, &faults, &LoadState::zero(3)).unwrap();
            u.set(k, true);
            let b = p.steady_state_exact(&u, &faults, &LoadState::zero(3)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn linear_superposition_random(seed in 0u64..1000, mask in any::<u64>()) {
            let p = make_reference_plant("linear20x4", seed).unwrap();
            let u = input_from_mask(mask, 20);
            let x = p.steady_state_exact(&u, &FaultState::none(), &LoadState::zero(4)).unwrap();
            let mut expect = p.x_rest().clone();
            for k in u.ones_indices() {
                expect += p.displacement_map().column(k);
            }
            prop_assert!((x - expect).amax() < 1e-10);
        }

        #[test]
        fn unforced_energy_is_non_increasing(
            seed in 0u64..1000,
            x0 in proptest::collection::vec(-5.0f64..5.0, 4),
            v0 in proptest::collection::vec(-50.0f64..50.0, 4),
            frac in 0.05f64..1.0,
        ) {
            let p = make_reference_plant("linear20x4", seed).unwrap();
            let dt = p.max_dt() * frac;
            let mut x = DVector::from_vec(x0);
            let mut v = DVector::from_vec(v0);
            let u = InputVector::zeros(20);
            let mut e = p.energy(&x, &v);
            for _ in 0..400 {
                (x, v) = p.step(&x, &v, &u, &FaultState::none(), &LoadState::zero(4), dt).unwrap();
                let e_next = p.energy(&x, &v);
                prop_assert!(e_next <= e * (1.0 + 1e-12) + 1e-12, "energy rose {} -> {}", e, e_next);
                e = e_next;
            }
        }
    }
}
