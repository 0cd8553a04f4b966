//! Shared domain types and the influence-vector algebra.
//!
//! Each actuator `k` is summarised by its influence vector `d_k`, the
//! steady-state change of the output state when that actuator alone is ON.
//! A correction is a [`SwitchVector`] `b` toggling a subset of actuators; its
//! predicted effect is the superposition `J̃ b` of the *updated* influence
//! vectors, whose sign depends on the current [`InputVector`].

use std::fmt;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued output state of an `n`-DOF system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("state vector must have at least one DOF".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("state entry {i} is not finite")));
        }
        Ok(StateVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(DVector::zeros(n.max(1)))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(s: StateVector) -> Self {
        s.0.as_slice().to_vec()
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        StateVector::new(v)
    }
}

macro_rules! bit_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub struct $name(Vec<bool>);

        impl $name {
            pub fn zeros(m: usize) -> Self {
                $name(vec![false; m])
            }

            pub fn ones(m: usize) -> Self {
                $name(vec![true; m])
            }

            pub fn from_bools(bits: Vec<bool>) -> Self {
                $name(bits)
            }

            /// Builds from integer entries, rejecting anything other than 0 or 1.
            pub fn from_bits(bits: &[u8]) -> Result<Self> {
                bits.iter()
                    .enumerate()
                    .map(|(k, &b)| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::Contract(format!(
                            "entry {k} is {other}, expected 0 or 1"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map($name)
            }

            /// Vector with only bit `k` set.
            pub fn unit(m: usize, k: usize) -> Self {
                let mut bits = vec![false; m];
                bits[k] = true;
                $name(bits)
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn get(&self, k: usize) -> bool {
                self.0[k]
            }

            pub fn set(&mut self, k: usize, value: bool) {
                self.0[k] = value;
            }

            pub fn bits(&self) -> &[bool] {
                &self.0
            }

            pub fn count_ones(&self) -> usize {
                self.0.iter().filter(|&&b| b).count()
            }

            pub fn ones_indices(&self) -> impl Iterator<Item = usize> + '_ {
                self.0.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
            }

            pub fn to_bitstring(&self) -> String {
                self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
            }

            pub fn parse_bitstring(s: &str) -> Result<Self> {
                s.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(Error::Contract(format!(
                            "bitstring contains {other:?}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map($name)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_bitstring())
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.to_bitstring()
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                $name::parse_bitstring(&s)
            }
        }
    };
}

bit_vector!(
    /// ON/OFF state of the `m` binary actuators.
    InputVector
);

bit_vector!(
    /// Toggle command: bit `k` set means actuator `k` changes state.
    SwitchVector
);

impl SwitchVector {
    /// Number of switching actuators `s_n`.
    pub fn switch_count(&self) -> usize {
        self.count_ones()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceKind {
    Displacement,
    Force,
}

/// `n × m` matrix whose column `k` is the influence vector of actuator `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    matrix: DMatrix<f64>,
    kind: InfluenceKind,
}

impl InfluenceMatrix {
    pub fn new(matrix: DMatrix<f64>, kind: InfluenceKind) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Contract("influence matrix must be non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("influence matrix has non-finite entries".into()));
        }
        Ok(InfluenceMatrix { matrix, kind })
    }

    pub fn from_columns(columns: &[DVector<f64>], kind: InfluenceKind) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Contract("influence matrix needs at least one column".into()));
        }
        let n = columns[0].len();
        for c in columns {
            Error::check_dim("influence column", n, c.len())?;
        }
        Self::new(DMatrix::from_columns(columns), kind)
    }

    /// Number of DOFs.
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of actuators.
    pub fn m(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn kind(&self) -> InfluenceKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column(&self, k: usize) -> DVectorView<'_, f64> {
        self.matrix.column(k)
    }

    pub fn negated(&self) -> Self {
        InfluenceMatrix {
            matrix: -&self.matrix,
            kind: self.kind,
        }
    }
}

/// Desired state with per-DOF tolerance box and weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetDoc", into = "TargetDoc")]
pub struct TargetSpec {
    x_d: StateVector,
    tolerance: DVector<f64>,
    weights: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct TargetDoc {
    x_d: Vec<f64>,
    tolerance: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<TargetDoc> for TargetSpec {
    type Error = Error;
    fn try_from(d: TargetDoc) -> Result<Self> {
        TargetSpec::new(StateVector::new(d.x_d)?, d.tolerance, d.weights)
    }
}

impl From<TargetSpec> for TargetDoc {
    fn from(t: TargetSpec) -> Self {
        TargetDoc {
            x_d: t.x_d.into(),
            tolerance: t.tolerance.as_slice().to_vec(),
            weights: t.weights.as_slice().to_vec(),
        }
    }
}

impl TargetSpec {
    pub fn new(x_d: StateVector, tolerance: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = x_d.dim();
        Error::check_dim("target tolerance", n, tolerance.len())?;
        Error::check_dim("target weights", n, weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Contract("at least one DOF weight must be positive".into()));
        }
        for (i, (&t, &w)) in tolerance.iter().zip(&weights).enumerate() {
            if w > 0.0 && !(t > 0.0 && t.is_finite()) {
                return Err(Error::Contract(format!(
                    "tolerance on weighted DOF {i} must be positive, got {t}"
                )));
            }
        }
        Ok(TargetSpec {
            x_d,
            tolerance: DVector::from_vec(tolerance),
            weights: DVector::from_vec(weights),
        })
    }

    pub fn x_d(&self) -> &StateVector {
        &self.x_d
    }

    pub fn tolerance(&self) -> &DVector<f64> {
        &self.tolerance
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.x_d.dim()
    }

    /// Indices of DOFs with positive weight.
    pub fn weighted_dofs(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    /// Euclidean norm of `W v` where `W = diag(weights)`.
    pub fn weighted_norm(&self, v: &DVector<f64>) -> f64 {
        weighted_norm(&self.weights, v)
    }

    /// True when every weighted DOF of the error is strictly inside the tolerance.
    pub fn within_tolerance(&self, x_e: &DVector<f64>) -> bool {
        (0..self.dim())
            .filter(|&i| self.weights[i] > 0.0)
            .all(|i| x_e[i].abs() < self.tolerance[i])
    }

    /// Unweighted Euclidean error restricted to weighted DOFs.
    pub fn masked_error(&self, x_e: &DVector<f64>) -> f64 {
        (0..self.dim())
            .filter(|&i| self.weights[i] > 0.0)
            .map(|i| x_e[i] * x_e[i])
            .sum::<f64>()
            .sqrt()
    }
}

pub fn weighted_norm(weights: &DVector<f64>, v: &DVector<f64>) -> f64 {
    weights
        .iter()
        .zip(v.iter())
        .map(|(w, x)| (w * x) * (w * x))
        .sum::<f64>()
        .sqrt()
}

/// Standard deviation of the approximation error as a function of the switch
/// vector. Variances of independent actuator contributions add.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    per_actuator_sigma: DMatrix<f64>,
    shared_sigma: Option<DVector<f64>>,
}

impl DispersionModel {
    pub fn per_actuator(per_actuator_sigma: DMatrix<f64>) -> Result<Self> {
        check_sigma(per_actuator_sigma.iter())?;
        Ok(DispersionModel {
            per_actuator_sigma,
            shared_sigma: None,
        })
    }

    /// All actuators share the same contribution `sigma`.
    pub fn shared(sigma: DVector<f64>, m: usize) -> Result<Self> {
        check_sigma(sigma.iter())?;
        let per = DMatrix::from_fn(sigma.len(), m, |i, _| sigma[i]);
        Ok(DispersionModel {
            per_actuator_sigma: per,
            shared_sigma: Some(sigma),
        })
    }

    pub fn zero(n: usize, m: usize) -> Self {
        DispersionModel::shared(DVector::zeros(n), m).expect("zeros are valid")
    }

    pub fn n(&self) -> usize {
        self.per_actuator_sigma.nrows()
    }

    pub fn m(&self) -> usize {
        self.per_actuator_sigma.ncols()
    }

    pub fn per_actuator_sigma(&self) -> &DMatrix<f64> {
        &self.per_actuator_sigma
    }

    pub fn shared_sigma(&self) -> Option<&DVector<f64>> {
        self.shared_sigma.as_ref()
    }

    /// Predicted per-DOF standard deviation for switch vector `b`.
    pub fn sigma_for(&self, b: &SwitchVector) -> DVector<f64> {
        match &self.shared_sigma {
            Some(sigma) => sigma * (b.switch_count() as f64).sqrt(),
            None => {
                let mut var = DVector::zeros(self.n());
                for k in b.ones_indices() {
                    for i in 0..self.n() {
                        let s = self.per_actuator_sigma[(i, k)];
                        var[i] += s * s;
                    }
                }
                var.map(f64::sqrt)
            }
        }
    }

    /// Per-DOF variance predicted for `b` by summing the selected actuator variances.
    pub fn variance_for(&self, b: &SwitchVector) -> DVector<f64> {
        let mut var = DVector::zeros(self.n());
        for k in b.ones_indices() {
            for i in 0..self.n() {
                let s = self.per_actuator_sigma[(i, k)];
                var[i] += s * s;
            }
        }
        var
    }
}

fn check_sigma<'a>(mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Contract(
            "dispersion entries must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Static state error `x_d − x`.
pub fn state_error(x_d: &StateVector, x: &StateVector) -> Result<StateVector> {
    Error::check_dim("state_error", x_d.dim(), x.dim())?;
    Ok(StateVector(&x_d.0 - &x.0))
}

/// Applies a switch vector by exclusive-or.
pub fn apply_switch(u: &InputVector, b: &SwitchVector) -> Result<InputVector> {
    Error::check_dim("apply_switch", u.len(), b.len())?;
    Ok(InputVector(
        u.0.iter().zip(&b.0).map(|(&x, &y)| x ^ y).collect(),
    ))
}

/// Sign update of one influence vector: `+d_k` when the actuator is OFF,
/// `−d_k` when it is ON (the only possible move is back to OFF).
pub fn update_influence(d_k: &DVector<f64>, u_k: bool) -> DVector<f64> {
    if u_k {
        -d_k
    } else {
        d_k.clone()
    }
}

/// State- and input-dependent correction of the influence vectors, applied
/// before the sign update.
pub trait Linearizer: Send + Sync {
    fn correct(
        &self,
        k: usize,
        d_k: DVectorView<'_, f64>,
        u: &InputVector,
        x: &StateVector,
    ) -> DVector<f64>;
}

/// Leaves every influence vector unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityLinearizer;

impl Linearizer for IdentityLinearizer {
    fn correct(
        &self,
        _k: usize,
        d_k: DVectorView<'_, f64>,
        _u: &InputVector,
        _x: &StateVector,
    ) -> DVector<f64> {
        d_k.into_owned()
    }
}

/// Builds `J̃` for the current input `u`: optional linearizer correction,
/// then the sign update of each column.
pub fn updated_jacobian(
    j: &InfluenceMatrix,
    u: &InputVector,
    x: &StateVector,
    linearizer: Option<&dyn Linearizer>,
) -> Result<InfluenceMatrix> {
    Error::check_dim("updated_jacobian input", j.m(), u.len())?;
    Error::check_dim("updated_jacobian state", j.n(), x.dim())?;
    let mut out = j.matrix.clone();
    for k in 0..j.m() {
        let corrected = match linearizer {
            Some(lin) => {
                let c = lin.correct(k, j.column(k), u, x);
                Error::check_dim("linearizer output", j.n(), c.len())
                    .map_err(|e| Error::Calibration(e.to_string()))?;
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Calibration(format!(
                        "linearizer returned non-finite correction for actuator {k}"
                    )));
                }
                c
            }
            None => j.column(k).into_owned(),
        };
        out.set_column(k, &update_influence(&corrected, u.get(k)));
    }
    Ok(InfluenceMatrix {
        matrix: out,
        kind: j.kind,
    })
}

/// First-order prediction `a = J̃ b = Σ b_k d̃_k`.
pub fn superpose(jt: &InfluenceMatrix, b: &SwitchVector) -> Result<DVector<f64>> {
    Error::check_dim("superpose", jt.m(), b.len())?;
    let mut a = DVector::zeros(jt.n());
    for k in b.ones_indices() {
        a += jt.column(k);
    }
    Ok(a)
}

/// Resolution error `ε_r = J̃ b − x_e`.
pub fn residual(jt: &InfluenceMatrix, b: &SwitchVector, x_e: &DVector<f64>) -> Result<DVector<f64>> {
    Error::check_dim("residual", jt.n(), x_e.len())?;
    Ok(superpose(jt, b)? - x_e)
}
