//! Constant-velocity Kalman filter over `(cx, cy, s, r)` box states,
//! where `s` is the box area and `r = w / h` its aspect ratio.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::schema::BBox;

pub type StateVector = SVector<f64, 7>;
pub type StateCovariance = SMatrix<f64, 7, 7>;
pub type MeasurementVector = SVector<f64, 4>;
pub type MeasurementCovariance = SMatrix<f64, 4, 4>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum KalmanError {
    #[error("numerical blowup: non-finite or non-positive state")]
    NumericalBlowup,
    #[error("degenerate measurement: singular innovation covariance")]
    DegenerateMeasurement,
}

/// Mean `(cx, cy, s, r, vcx, vcy, vs)` and its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        state_to_bbox(&self.mean)
    }

    fn is_valid(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.covariance.iter().all(|v| v.is_finite())
            && self.mean[2] > 0.0
            && self.mean[3] > 0.0
    }
}

pub fn bbox_to_measurement(b: &BBox) -> MeasurementVector {
    let (cx, cy) = b.center();
    MeasurementVector::new(cx, cy, b.width() * b.height(), b.width() / b.height())
}

pub fn state_to_bbox(mean: &StateVector) -> BBox {
    let (s, r) = (mean[2].max(0.0), mean[3].max(f64::MIN_POSITIVE));
    let w = (s * r).sqrt();
    let h = if w > 0.0 { s / w } else { 0.0 };
    BBox::from_center(mean[0], mean[1], w, h)
}

/// Noise scales, expressed as fractions of the box size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub measurement_weight: f64,
    pub aspect_weight: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            position_weight: 1.0 / 20.0,
            velocity_weight: 1.0 / 160.0,
            measurement_weight: 1.0 / 20.0,
            aspect_weight: 1.0 / 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KalmanFilter {
    pub config: KalmanConfig,
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> SMatrix<f64, 4, 7> {
    let mut h = SMatrix::<f64, 4, 7>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

impl KalmanFilter {
    pub fn new(config: KalmanConfig) -> Self {
        Self { config }
    }

    /// State for a new track: zero velocity, position variance `(w/2)^2`
    /// and wide velocity variance.
    pub fn initiate(&self, b: &BBox) -> KalmanState {
        let z = bbox_to_measurement(b);
        let (w, h, s, r) = (b.width(), b.height(), z[2], z[3]);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let diag = StateVector::from_column_slice(&[
            (w / 2.0).powi(2),
            (h / 2.0).powi(2),
            (s / 2.0).powi(2),
            (r / 10.0).powi(2),
            w.powi(2),
            h.powi(2),
            s.powi(2),
        ]);
        KalmanState { mean, covariance: StateCovariance::from_diagonal(&diag) }
    }

    fn process_noise(&self, mean: &StateVector) -> StateCovariance {
        let c = &self.config;
        let s = mean[2].abs();
        let scale = s.sqrt();
        let diag = StateVector::from_column_slice(&[
            (c.position_weight * scale).powi(2),
            (c.position_weight * scale).powi(2),
            (2.0 * c.position_weight * s).powi(2),
            (c.aspect_weight * mean[3]).powi(2),
            (c.velocity_weight * scale).powi(2),
            (c.velocity_weight * scale).powi(2),
            (2.0 * c.velocity_weight * s).powi(2),
        ]);
        StateCovariance::from_diagonal(&diag)
    }

    pub fn measurement_noise(&self, z: &MeasurementVector) -> MeasurementCovariance {
        let c = &self.config;
        let scale = z[2].abs().sqrt();
        let diag = MeasurementVector::new(
            (c.measurement_weight * scale).powi(2),
            (c.measurement_weight * scale).powi(2),
            (2.0 * c.measurement_weight * z[2]).powi(2),
            (5.0 * c.aspect_weight * z[3]).powi(2),
        );
        MeasurementCovariance::from_diagonal(&diag)
    }

    /// One constant-velocity step. Area velocity is zeroed if it would make the area non-positive.
    pub fn predict(&self, state: &KalmanState) -> Result<KalmanState, KalmanError> {
        let mut mean = state.mean;
        if mean[2] + mean[6] <= 0.0 {
            mean[6] = 0.0;
        }
        let f = transition();
        let q = self.process_noise(&mean);
        let out = KalmanState {
            mean: f * mean,
            covariance: symmetrize(&(f * state.covariance * f.transpose() + q)),
        };
        if out.is_valid() {
            Ok(out)
        } else {
            Err(KalmanError::NumericalBlowup)
        }
    }

    pub fn update(&self, state: &KalmanState, b: &BBox) -> Result<KalmanState, KalmanError> {
        let z = bbox_to_measurement(b);
        self.update_with_noise(state, &z, &self.measurement_noise(&z))
    }

    /// Kalman correction with explicit measurement noise (Joseph form).
    pub fn update_with_noise(
        &self,
        state: &KalmanState,
        z: &MeasurementVector,
        noise: &MeasurementCovariance,
    ) -> Result<KalmanState, KalmanError> {
        let h = observation();
        let p = &state.covariance;
        let innovation_cov = h * p * h.transpose() + noise;
        let inv = innovation_cov.try_inverse().ok_or(KalmanError::DegenerateMeasurement)?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(KalmanError::DegenerateMeasurement);
        }
        let gain = p * h.transpose() * inv;
        let mean = state.mean + gain * (z - h * state.mean);
        let i_kh = StateCovariance::identity() - gain * h;
        let covariance =
            symmetrize(&(i_kh * p * i_kh.transpose() + gain * noise * gain.transpose()));
        let out = KalmanState { mean, covariance };
        if out.is_valid() {
            Ok(out)
        } else {
            Err(KalmanError::NumericalBlowup)
        }
    }
}
