//! Extended Kalman filter for the attacker state `[x_A, y_A, alpha_A, a_A]`
//! from target/defender range and LOS-angle measurements.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engagement::{relative_geometry, wrap_angle, EngagementState};

/// Ranges below this make the measurement Jacobian singular.
pub const MIN_MODEL_RANGE: f64 = 1e-9;
/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EstimatorError {
    #[error("predicted attacker position coincides with a sensor (range {range})")]
    SingularGeometry { range: f64 },
    #[error("innovation covariance is numerically singular (condition {condition:e})")]
    SingularInnovationCov { condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// `[x_A, y_A, alpha_A, a_A]`.
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl EstimatorState {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Self {
        Self { mean, cov }
    }

    /// Filter start from the first measurement: attacker placed along the
    /// measured target LOS, heading and acceleration zero, broad prior.
    pub fn from_measurement(z: &Measurement, target_pos: [f64; 2]) -> Self {
        let mean = Vector4::new(
            target_pos[0] - z.range_at * z.theta.cos(),
            target_pos[1] - z.range_at * z.theta.sin(),
            0.0,
            0.0,
        );
        Self {
            mean,
            cov: Matrix4::from_diagonal(&Vector4::new(10.0, 10.0, 1.0, 1.0)),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.mean[0], self.mean[1]]
    }

    /// One-sigma values of the four states.
    pub fn sigmas(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.cov[(i, i)].max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub range_at: f64,
    pub range_ad: f64,
    pub theta: f64,
    pub xi: f64,
}

impl Measurement {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.range_at, self.range_ad, self.theta, self.xi)
    }
}

/// Covariance matrix given either as its diagonal or in full.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceSpec {
    Diagonal([f64; 4]),
    Full([[f64; 4]; 4]),
}

impl CovarianceSpec {
    pub fn matrix(&self) -> Matrix4<f64> {
        match self {
            CovarianceSpec::Diagonal(d) => Matrix4::from_diagonal(&Vector4::from_row_slice(d)),
            CovarianceSpec::Full(rows) => Matrix4::from_fn(|i, j| rows[i][j]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Process covariance used by the filter.
    pub q: CovarianceSpec,
    /// Measurement covariance for `[R, r, theta, xi]`.
    pub sigma: CovarianceSpec,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q: CovarianceSpec::Diagonal([0.1, 0.1, 0.01, 0.1]),
            sigma: CovarianceSpec::Diagonal([0.1, 0.1, 0.01, 0.01]),
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, m) in [("noise.q", self.q.matrix()), ("noise.sigma", self.sigma.matrix())] {
            if !is_symmetric_psd(&m, 1e-12) {
                return Err(format!("{name} must be symmetric positive semidefinite"));
            }
        }
        Ok(())
    }
}

pub fn is_symmetric_psd(m: &Matrix4<f64>, tol: f64) -> bool {
    if (m - m.transpose()).abs().max() > tol {
        return false;
    }
    SymmetricEigen::new(*m).eigenvalues.iter().all(|&e| e >= -tol)
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Continuous attacker motion model `[v cos a, v sin a, acc / v, -acc]`.
/// A motionless attacker (`v = 0`) does not turn.
pub fn attacker_dynamics(mean: &Vector4<f64>, v_a: f64) -> Vector4<f64> {
    let (alpha, acc) = (mean[2], mean[3]);
    let turn = if v_a > 0.0 { acc / v_a } else { 0.0 };
    Vector4::new(v_a * alpha.cos(), v_a * alpha.sin(), turn, -acc)
}

/// Jacobian of [`attacker_dynamics`] with respect to the state.
pub fn dynamics_jacobian(mean: &Vector4<f64>, v_a: f64) -> Matrix4<f64> {
    let alpha = mean[2];
    #[rustfmt::skip]
    let j = Matrix4::new(
        0.0, 0.0, -v_a * alpha.sin(), 0.0,
        0.0, 0.0,  v_a * alpha.cos(), 0.0,
        0.0, 0.0, 0.0, 1.0 / v_a,
        0.0, 0.0, 0.0, -1.0,
    );
    j
}

/// One Euler step of the attacker model, heading wrapped.
pub fn propagate_mean(mean: &Vector4<f64>, dt: f64, v_a: f64) -> Vector4<f64> {
    let mut next = mean + attacker_dynamics(mean, v_a) * dt;
    next[2] = wrap_angle(next[2]);
    next
}

pub fn ekf_predict(est: &EstimatorState, dt: f64, v_a: f64, q: &Matrix4<f64>) -> EstimatorState {
    debug_assert!(dt > 0.0 && v_a > 0.0);
    let f = Matrix4::identity() + dynamics_jacobian(&est.mean, v_a) * dt;
    EstimatorState {
        mean: propagate_mean(&est.mean, dt, v_a),
        cov: symmetrize(&(f * est.cov * f.transpose() + q)),
    }
}

/// Predicted measurement and its Jacobian at `mean`.
pub fn measurement_model(
    mean: &Vector4<f64>,
    target_pos: [f64; 2],
    defender_pos: [f64; 2],
) -> Result<(Vector4<f64>, Matrix4<f64>), EstimatorError> {
    let (xa, ya) = (mean[0], mean[1]);
    let (dxt, dyt) = (target_pos[0] - xa, target_pos[1] - ya);
    let (dxd, dyd) = (defender_pos[0] - xa, defender_pos[1] - ya);
    let rt = dxt.hypot(dyt);
    let rd = dxd.hypot(dyd);
    let range = rt.min(rd);
    if range < MIN_MODEL_RANGE {
        return Err(EstimatorError::SingularGeometry { range });
    }
    let h = Vector4::new(rt, rd, dyt.atan2(dxt), dyd.atan2(dxd));
    let (rt2, rd2) = (rt * rt, rd * rd);
    #[rustfmt::skip]
    let jac = Matrix4::new(
        -dxt / rt, -dyt / rt, 0.0, 0.0,
        -dxd / rd, -dyd / rd, 0.0, 0.0,
        dyt / rt2, -dxt / rt2, 0.0, 0.0,
        dyd / rd2, -dxd / rd2, 0.0, 0.0,
    );
    Ok((h, jac))
}

/// Measurement residual with both angle components wrapped.
pub fn innovation(z: &Measurement, predicted: &Vector4<f64>) -> Vector4<f64> {
    let mut nu = z.as_vector() - predicted;
    nu[2] = wrap_angle(nu[2]);
    nu[3] = wrap_angle(nu[3]);
    nu
}

fn condition_number(s: &Matrix4<f64>) -> f64 {
    let eig = SymmetricEigen::new(*s).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn ekf_update(
    est: &EstimatorState,
    z: &Measurement,
    target_pos: [f64; 2],
    defender_pos: [f64; 2],
    sigma: &Matrix4<f64>,
) -> Result<EstimatorState, EstimatorError> {
    let (h, jac) = measurement_model(&est.mean, target_pos, defender_pos)?;
    let nu = innovation(z, &h);
    let s = symmetrize(&(jac * est.cov * jac.transpose() + sigma));
    let condition = condition_number(&s);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(EstimatorError::SingularInnovationCov { condition });
    }
    let s_inv = s
        .try_inverse()
        .ok_or(EstimatorError::SingularInnovationCov { condition })?;
    let gain = est.cov * jac.transpose() * s_inv;
    let mut mean = est.mean + gain * nu;
    mean[2] = wrap_angle(mean[2]);
    let cov = symmetrize(&(est.cov - gain * s * gain.transpose()));
    Ok(EstimatorState { mean, cov })
}

/// True range/LOS values corrupted by zero-mean Gaussian noise with
/// covariance `sigma`. Always consumes four normal draws from `rng`.
pub fn simulate_measurement<R: Rng + ?Sized>(
    truth: &EngagementState,
    sigma: &Matrix4<f64>,
    rng: &mut R,
) -> Measurement {
    let g = relative_geometry(truth);
    let white = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = noise_factor(sigma) * white;
    Measurement {
        range_at: (g.range_at + noise[0]).max(0.0),
        range_ad: (g.range_ad + noise[1]).max(0.0),
        theta: wrap_angle(g.theta + noise[2]),
        xi: wrap_angle(g.xi + noise[3]),
    }
}

/// `L` with `L L^T = sigma`, tolerant of semidefinite input.
fn noise_factor(sigma: &Matrix4<f64>) -> Matrix4<f64> {
    if let Some(ch) = sigma.cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(symmetrize(sigma));
    let sqrt_vals = Matrix4::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    eig.eigenvectors * sqrt_vals
}

/// Normalized estimation error squared of the position block.
pub fn position_nees(est: &EstimatorState, true_pos: [f64; 2]) -> f64 {
    let e = nalgebra::Vector2::new(true_pos[0] - est.mean[0], true_pos[1] - est.mean[1]);
    let p = est.cov.fixed_view::<2, 2>(0, 0).into_owned();
    match p.try_inverse() {
        Some(inv) => (e.transpose() * inv * e)[0],
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::AgentState;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;

    fn random_psd(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
        let a = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + Matrix4::identity() * 0.01
    }

    #[test]
    fn predict_straight_line() {
        let est = EstimatorState::new(Vector4::zeros(), Matrix4::identity());
        let p = ekf_predict(&est, 1.0, 4.0, &Matrix4::zeros());
        assert_eq!(p.mean, Vector4::new(4.0, 0.0, 0.0, 0.0));
        // Heading variance couples into y through v * dt.
        assert_relative_eq!(p.cov[(1, 1)], 1.0 + 16.0, epsilon = 1e-12);
        assert_relative_eq!(p.cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_turn_and_decay() {
        let est = EstimatorState::new(Vector4::new(0.0, 0.0, 0.0, 1.0), Matrix4::identity());
        let p = ekf_predict(&est, 0.05, 4.0, &Matrix4::zeros());
        assert_relative_eq!(p.mean[2], 0.0125, epsilon = 1e-15);
        assert_relative_eq!(p.mean[3], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn predict_matches_elementwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mean = Vector4::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let cov = random_psd(&mut rng);
            let q = random_psd(&mut rng);
            let (dt, v) = (rng.gen_range(0.01..0.2), rng.gen_range(1.0..10.0));
            let p = ekf_predict(&EstimatorState::new(mean, cov), dt, v, &q);

            // Elementwise F P F^T + Q with F written out by hand.
            let al = mean[2];
            let mut f = [[0.0; 4]; 4];
            for (i, row) in f.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            f[0][2] = -v * al.sin() * dt;
            f[1][2] = v * al.cos() * dt;
            f[2][3] = dt / v;
            f[3][3] = 1.0 - dt;
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = q[(i, j)];
                    for k in 0..4 {
                        for l in 0..4 {
                            acc += f[i][k] * cov[(k, l)] * f[j][l];
                        }
                    }
                    assert!((p.cov[(i, j)] - acc).abs() < 1e-12 * acc.abs().max(1.0));
                }
            }
            assert!(p.cov.trace() >= q.trace());
        }
    }

    fn sensors() -> ([f64; 2], [f64; 2]) {
        ([20.0, 10.0], [-15.0, 5.0])
    }

    fn exact_measurement(mean: &Vector4<f64>) -> Measurement {
        let (t, d) = sensors();
        let (h, _) = measurement_model(mean, t, d).unwrap();
        Measurement {
            range_at: h[0],
            range_ad: h[1],
            theta: h[2],
            xi: h[3],
        }
    }

    #[test]
    fn zero_innovation_contracts() {
        let mean = Vector4::new(1.0, 2.0, 0.3, 0.1);
        let est = EstimatorState::new(mean, Matrix4::identity() * 2.0);
        let (t, d) = sensors();
        let sigma = NoiseConfig::default().sigma.matrix();
        let post = ekf_update(&est, &exact_measurement(&mean), t, d, &sigma).unwrap();
        assert_relative_eq!(post.mean, mean, epsilon = 1e-12);
        assert!(post.cov.trace() < est.cov.trace());
    }

    #[test]
    fn angle_residual_wraps() {
        let mean = Vector4::new(1.0, 2.0, 0.3, 0.1);
        let est = EstimatorState::new(mean, Matrix4::identity());
        let (t, d) = sensors();
        let sigma = NoiseConfig::default().sigma.matrix();
        let mut z1 = exact_measurement(&mean);
        let mut z2 = z1;
        z1.theta = wrap_angle(z1.theta + 0.01);
        z2.theta = z2.theta + 0.01 - 2.0 * std::f64::consts::PI;
        let p1 = ekf_update(&est, &z1, t, d, &sigma).unwrap();
        let p2 = ekf_update(&est, &z2, t, d, &sigma).unwrap();
        assert_relative_eq!(p1.mean, p2.mean, epsilon = 1e-9);
    }

    #[test]
    fn singular_geometry() {
        let est = EstimatorState::new(Vector4::new(20.0, 10.0, 0.0, 0.0), Matrix4::identity());
        let (t, d) = sensors();
        let z = Measurement { range_at: 1.0, range_ad: 1.0, theta: 0.0, xi: 0.0 };
        let err = ekf_update(&est, &z, t, d, &Matrix4::identity()).unwrap_err();
        assert!(matches!(err, EstimatorError::SingularGeometry { .. }));
    }

    #[test]
    fn singular_innovation() {
        let est = EstimatorState::new(Vector4::new(0.0, 0.0, 0.0, 0.0), Matrix4::zeros());
        let (t, d) = sensors();
        let z = exact_measurement(&est.mean);
        let err = ekf_update(&est, &z, t, d, &Matrix4::zeros()).unwrap_err();
        assert!(matches!(err, EstimatorError::SingularInnovationCov { .. }));
    }

    fn truth() -> EngagementState {
        EngagementState {
            t: 0.0,
            target: AgentState::new(25.0, 30.0, 0.0, 2.0),
            attacker: AgentState::new(50.0, 50.0, -2.2, 4.0),
            defender: AgentState::new(0.0, 0.0, 0.78, 4.0),
        }
    }

    #[test]
    fn noiseless_channel_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = simulate_measurement(&truth(), &Matrix4::zeros(), &mut rng);
        let g = relative_geometry(&truth());
        assert_eq!((z.range_at, z.range_ad, z.theta, z.xi), (g.range_at, g.range_ad, g.theta, g.xi));
    }

    #[test]
    fn measurement_sequence_is_seeded() {
        let sigma = NoiseConfig::default().sigma.matrix();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| simulate_measurement(&truth(), &sigma, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn monte_carlo_noise_covariance() {
        let sigma = NoiseConfig::default().sigma.matrix();
        let g = relative_geometry(&truth());
        let truth_v = Vector4::new(g.range_at, g.range_ad, g.theta, g.xi);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut sum_sq = Vector4::zeros();
        for _ in 0..n {
            let z = simulate_measurement(&truth(), &sigma, &mut rng);
            let mut e = z.as_vector() - truth_v;
            e[2] = wrap_angle(e[2]);
            e[3] = wrap_angle(e[3]);
            sum_sq += e.component_mul(&e);
        }
        for i in 0..4 {
            let var = sum_sq[i] / n as f64;
            assert!((var - sigma[(i, i)]).abs() < 0.05 * sigma[(i, i)], "entry {i}: {var}");
        }
    }

    #[test]
    fn noise_free_straight_line_tracking() {
        let v = 4.0;
        let mut attacker = AgentState::new(50.0, 50.0, -2.2, v);
        let target = AgentState::new(100.0, -20.0, 0.0, 0.0);
        let defender = AgentState::new(-40.0, 10.0, 0.0, 0.0);
        let q = Matrix4::zeros();
        let sigma = Matrix4::from_diagonal(&Vector4::new(1e-12, 1e-12, 1e-14, 1e-14));
        let mut est = EstimatorState::new(
            Vector4::new(attacker.x, attacker.y, attacker.alpha, 0.0),
            Matrix4::from_diagonal(&Vector4::new(1e-6, 1e-6, 1e-8, 1e-8)),
        );
        let dt = 0.05;
        for _ in 0..100 {
            attacker = crate::engagement::step_agent(&attacker, 0.0, dt);
            est = ekf_predict(&est, dt, v, &q);
            let s = EngagementState { t: 0.0, target, attacker, defender };
            let g = relative_geometry(&s);
            let z = Measurement { range_at: g.range_at, range_ad: g.range_ad, theta: g.theta, xi: g.xi };
            est = ekf_update(&est, &z, target.position(), defender.position(), &sigma).unwrap();
            let err = (est.mean[0] - attacker.x).hypot(est.mean[1] - attacker.y);
            assert!(err < 1e-6, "err {err}");
        }
    }

    proptest! {
        #[test]
        fn update_keeps_cov_psd_and_matches_joseph(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mean = Vector4::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0),
                                    rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
            let prior = random_psd(&mut rng);
            let sigma = random_psd(&mut rng);
            let est = EstimatorState::new(mean, prior);
            let (t, d) = sensors();
            let mut z = exact_measurement(&mean);
            z.range_at += rng.gen_range(-0.5..0.5);
            z.theta += rng.gen_range(-0.1..0.1);
            let post = ekf_update(&est, &z, t, d, &sigma).unwrap();
            prop_assert!(is_symmetric_psd(&post.cov, 1e-9));

            let (_, h) = measurement_model(&mean, t, d).unwrap();
            let s = h * prior * h.transpose() + sigma;
            let k = prior * h.transpose() * s.try_inverse().unwrap();
            let ikh = Matrix4::identity() - k * h;
            let joseph = ikh * prior * ikh.transpose() + k * sigma * k.transpose();
            prop_assert!((joseph - post.cov).abs().max() < 1e-8);
        }
    }
}
