//! Time-indexed point clouds, synthetic trajectory generators and the
//! SNR-relative observation-noise model.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// An ordered, uniformly sampled trajectory in `R^d`.
///
/// Index `i` corresponds to time `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPointCloud {
    points: Vec<DVector<f64>>,
    dt: f64,
    t0: f64,
}

impl TimeSeriesPointCloud {
    /// Builds a cloud from points that must all share a dimension `d >= 1`.
    pub fn new(points: Vec<DVector<f64>>, dt: f64, t0: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("point cloud is empty".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::InvalidParameter("points must have dimension >= 1".into()));
        }
        if let Some(pos) = points.iter().position(|p| p.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "point {pos} has dimension {} but point 0 has {d}",
                points[pos].len()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidParameter(format!("t0 must be finite, got {t0}")));
        }
        Ok(Self { points, dt, t0 })
    }

    /// Builds a cloud from row-major coordinates.
    pub fn from_rows(rows: &[Vec<f64>], dt: f64, t0: f64) -> Result<Self> {
        let points = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
        Self::new(points, dt, t0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// State-space dimension `d`.
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Sample time of index `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    /// Euclidean distance between samples `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (&self.points[i] - &self.points[j]).norm()
    }

    /// The series of coordinate `a` over time.
    pub fn axis(&self, a: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[a]).collect()
    }

    /// A new cloud with the same sampling metadata but different points.
    pub fn with_points(&self, points: Vec<DVector<f64>>) -> Result<Self> {
        if points.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} points, got {}",
                self.len(),
                points.len()
            )));
        }
        Self::new(points, self.dt, self.t0)
    }
}

/// Parameters of the nonlinear-potential Hamiltonian test system
/// `dq/dt = p`, `dp/dt = -(q^r - q - eps * omega * sin(omega q))`.
///
/// `r_exp` and `eps_pert` are named to avoid clashing with filtration scales
/// and recurrence radii elsewhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianParams {
    pub total_time: f64,
    pub step: f64,
    pub r_exp: u32,
    pub eps_pert: f64,
    pub omega: f64,
    pub q0: f64,
    pub p0: f64,
}

impl Default for HamiltonianParams {
    fn default() -> Self {
        Self {
            total_time: 17.22,
            step: 0.08,
            r_exp: 5,
            eps_pert: 0.39,
            omega: 3.0,
            q0: 0.5,
            p0: 1.0,
        }
    }
}

impl HamiltonianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "total_time must be positive, got {}",
                self.total_time
            )));
        }
        if self.r_exp == 0 {
            return Err(Error::InvalidParameter("r_exp must be a positive integer".into()));
        }
        for (name, v) in [("eps_pert", self.eps_pert), ("omega", self.omega), ("q0", self.q0), ("p0", self.p0)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    /// The force `F(q) = -(q^r - q - eps * omega * sin(omega q))`.
    pub fn force(&self, q: f64) -> f64 {
        -(q.powi(self.r_exp as i32) - q - self.eps_pert * self.omega * (self.omega * q).sin())
    }
}

/// Integrates the Hamiltonian system with the Störmer–Verlet (leapfrog)
/// scheme and returns `floor(T / h) + 1` states `(q, p)`.
///
/// Each step is
/// `p_half = p + (h/2) F(q)`, `q' = q + h p_half`, `p' = p_half + (h/2) F(q')`.
pub fn generate_hamiltonian(params: &HamiltonianParams) -> Result<TimeSeriesPointCloud> {
    params.validate()?;
    let h = params.step;
    let n_steps = (params.total_time / h).floor() as usize;
    let mut states = Vec::with_capacity(n_steps + 1);
    let (mut q, mut p) = (params.q0, params.p0);
    states.push(DVector::from_column_slice(&[q, p]));
    for step in 1..=n_steps {
        let p_half = p + 0.5 * h * params.force(q);
        q += h * p_half;
        p = p_half + 0.5 * h * params.force(q);
        if !q.is_finite() || !p.is_finite() {
            return Err(Error::Divergence { step });
        }
        states.push(DVector::from_column_slice(&[q, p]));
    }
    TimeSeriesPointCloud::new(states, h, 0.0)
}

/// Parameters of the two-dimensional chirp trajectory
/// `x(t) = amp_x cos(phi(t))`, `y(t) = amp_y sin(phi(t)) S(x(t))` with a
/// linearly increasing instantaneous frequency and a Gaussian notch `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpParams {
    pub f_start: f64,
    pub f_end: f64,
    pub t_max: f64,
    pub n: usize,
    pub amp_x: f64,
    pub amp_y: f64,
    pub notch_depth: f64,
    /// Normalization of the notch argument; the analytic maximum of `|x(t)|`.
    pub notch_width_ref: f64,
}

impl Default for ChirpParams {
    fn default() -> Self {
        Self {
            f_start: 1.0,
            f_end: 10.0,
            t_max: 2.0,
            n: 500,
            amp_x: 10.0,
            amp_y: 2.0,
            notch_depth: 0.9,
            notch_width_ref: 10.0,
        }
    }
}

impl ChirpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_start > 0.0) || self.f_end < self.f_start {
            return Err(Error::InvalidParameter(format!(
                "need f_end >= f_start > 0, got ({}, {})",
                self.f_start, self.f_end
            )));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("need n >= 2 samples, got {}", self.n)));
        }
        if !(0.0..1.0).contains(&self.notch_depth) {
            return Err(Error::InvalidParameter(format!(
                "notch_depth must be in [0, 1), got {}",
                self.notch_depth
            )));
        }
        if !(self.notch_width_ref > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "notch_width_ref must be positive, got {}",
                self.notch_width_ref
            )));
        }
        Ok(())
    }

    /// Exact quadratic phase `phi(t) = 2 pi (f_start t + (f_end - f_start) / (2 t_max) t^2)`.
    pub fn phase(&self, t: f64) -> f64 {
        2.0 * std::f64::consts::PI
            * (self.f_start * t + (self.f_end - self.f_start) / (2.0 * self.t_max) * t * t)
    }

    /// Instantaneous frequency `f(t) = f_start + (f_end - f_start) / t_max * t`.
    pub fn frequency(&self, t: f64) -> f64 {
        self.f_start + (self.f_end - self.f_start) / self.t_max * t
    }

    /// The notch factor `S(x) = 1 - depth * exp(-(x / ref)^2 / 2)`.
    pub fn notch(&self, x: f64) -> f64 {
        1.0 - self.notch_depth * (-0.5 * (x / self.notch_width_ref).powi(2)).exp()
    }

    /// Sampling rate of the generated cloud in Hz.
    pub fn sample_rate(&self) -> f64 {
        (self.n - 1) as f64 / self.t_max
    }
}

/// Generates the chirp trajectory on `n` uniform samples of `[0, t_max]`,
/// together with the analytic phase at each sample.
pub fn generate_chirp(params: &ChirpParams) -> Result<(TimeSeriesPointCloud, Vec<f64>)> {
    params.validate()?;
    let dt = params.t_max / (params.n - 1) as f64;
    let mut points = Vec::with_capacity(params.n);
    let mut phases = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let t = i as f64 * dt;
        let phi = params.phase(t);
        let x = params.amp_x * phi.cos();
        let y = params.amp_y * phi.sin() * params.notch(x);
        points.push(DVector::from_column_slice(&[x, y]));
        phases.push(phi);
    }
    Ok((TimeSeriesPointCloud::new(points, dt, 0.0)?, phases))
}

/// Additive Gaussian observation-noise specification.
///
/// Axis `a` receives i.i.d. zero-mean Gaussian noise with variance
/// `per_axis_power[a] / snr_linear`. The stream is drawn from a seeded
/// ChaCha8 generator, so outputs are reproducible across platforms.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Signal-to-noise ratio as a linear power ratio; `f64::INFINITY` disables noise.
    pub snr_linear: f64,
    pub seed: u64,
    /// Mean-square power of each clean axis.
    pub per_axis_power: Vec<f64>,
}

impl NoiseSpec {
    /// Builds a spec from an SNR in dB, measuring each axis power as the
    /// mean square of the clean samples.
    pub fn from_snr_db(snr_db: f64, seed: u64, clean: &TimeSeriesPointCloud) -> Self {
        let snr_linear = 10f64.powf(snr_db / 10.0);
        Self {
            snr_linear,
            seed,
            per_axis_power: axis_mean_square(clean),
        }
    }

    /// A spec with absolute per-axis variances, independent of signal power.
    pub fn absolute(variances: Vec<f64>, seed: u64) -> Self {
        Self { snr_linear: 1.0, seed, per_axis_power: variances }
    }

    /// Noise standard deviation applied to axis `a`.
    pub fn axis_stddev(&self, a: usize) -> f64 {
        let var = self.per_axis_power[a] / self.snr_linear;
        var.sqrt()
    }
}

/// Per-axis mean-square power of a cloud.
pub fn axis_mean_square(cloud: &TimeSeriesPointCloud) -> Vec<f64> {
    let n = cloud.len() as f64;
    (0..cloud.dim())
        .map(|a| cloud.points().iter().map(|p| p[a] * p[a]).sum::<f64>() / n)
        .collect()
}

/// Adds axis-wise Gaussian noise to a copy of `cloud`; the input is untouched
/// and the output is a deterministic function of `spec.seed`.
pub fn add_noise(cloud: &TimeSeriesPointCloud, spec: &NoiseSpec) -> Result<TimeSeriesPointCloud> {
    if !(spec.snr_linear > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "snr_linear must be positive, got {}",
            spec.snr_linear
        )));
    }
    if spec.per_axis_power.len() != cloud.dim() {
        return Err(Error::ShapeMismatch(format!(
            "per_axis_power has {} entries for a {}-dimensional cloud",
            spec.per_axis_power.len(),
            cloud.dim()
        )));
    }
    if let Some(p) = spec.per_axis_power.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidParameter(format!("axis power must be >= 0, got {p}")));
    }
    let sigmas: Vec<f64> = (0..cloud.dim()).map(|a| spec.axis_stddev(a)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = p.clone();
            for (a, sigma) in sigmas.iter().enumerate() {
                let z: f64 = normal.sample(&mut rng);
                q[a] += sigma * z;
            }
            q
        })
        .collect();
    cloud.with_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamiltonian_first_state_is_initial_condition() {
        let cloud = generate_hamiltonian(&HamiltonianParams::default()).unwrap();
        assert_eq!(cloud.point(0)[0], 0.5);
        assert_eq!(cloud.point(0)[1], 1.0);
    }

    #[test]
    fn hamiltonian_default_length() {
        let cloud = generate_hamiltonian(&HamiltonianParams::default()).unwrap();
        assert_eq!(cloud.len(), 216);
        assert_eq!(cloud.dim(), 2);
        assert_eq!(cloud.dt(), 0.08);
    }

    #[test]
    fn hamiltonian_zero_fixed_point() {
        let params = HamiltonianParams { q0: 0.0, p0: 0.0, ..Default::default() };
        assert_eq!(params.force(0.0), 0.0);
        let cloud = generate_hamiltonian(&params).unwrap();
        for p in cloud.points() {
            assert_eq!(p[0], 0.0);
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn hamiltonian_is_time_reversible() {
        let params = HamiltonianParams::default();
        let h = params.step;
        let (mut q, mut p) = (params.q0, params.p0);
        // one forward step
        let p_half = p + 0.5 * h * params.force(q);
        q += h * p_half;
        p = p_half + 0.5 * h * params.force(q);
        // one step with -h must return to the start
        let p_half = p + 0.5 * (-h) * params.force(q);
        q += -h * p_half;
        p = p_half + 0.5 * (-h) * params.force(q);
        assert!((q - params.q0).abs() < 1e-12);
        assert!((p - params.p0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_divergence_reports_step() {
        // A huge step on a stiff potential blows up quickly.
        let params = HamiltonianParams { step: 10.0, total_time: 1000.0, ..Default::default() };
        match generate_hamiltonian(&params) {
            Err(Error::Divergence { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn chirp_starts_on_the_x_axis() {
        let (cloud, phase) = generate_chirp(&ChirpParams::default()).unwrap();
        assert_eq!(phase[0], 0.0);
        assert_eq!(cloud.point(0)[0], 10.0);
        assert_eq!(cloud.point(0)[1], 0.0);
    }

    #[test]
    fn chirp_phase_at_end_matches_closed_form() {
        let params = ChirpParams::default();
        // phi(2) = 2 pi (1 * 2 + (9 / 4) * 4) = 22 pi
        let expected = 22.0 * std::f64::consts::PI;
        assert!((params.phase(2.0) - expected).abs() < 1e-12 * expected);
        let (_, phase) = generate_chirp(&params).unwrap();
        assert!((phase[params.n - 1] - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn chirp_notch_is_deepest_at_zero() {
        let params = ChirpParams::default();
        assert!((params.notch(0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn chirp_finite_difference_phase_matches_midpoint_frequency() {
        let params = ChirpParams::default();
        let (cloud, phase) = generate_chirp(&params).unwrap();
        let dt = cloud.dt();
        for i in 0..cloud.len() - 1 {
            let f_mid = params.frequency((cloud.time(i) + cloud.time(i + 1)) / 2.0);
            let f_emp = (phase[i + 1] - phase[i]) / (2.0 * std::f64::consts::PI * dt);
            assert!((f_mid - f_emp).abs() < 1e-9, "index {i}: {f_mid} vs {f_emp}");
        }
    }

    #[test]
    fn noise_is_deterministic_and_preserves_metadata() {
        let (cloud, _) = generate_chirp(&ChirpParams::default()).unwrap();
        let spec = NoiseSpec::from_snr_db(20.0, 7, &cloud);
        let a = add_noise(&cloud, &spec).unwrap();
        let b = add_noise(&cloud, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), cloud.len());
        assert_eq!(a.dim(), cloud.dim());
        assert_eq!(a.dt(), cloud.dt());
        assert_eq!(a.t0(), cloud.t0());
        assert_ne!(a, cloud);
    }

    #[test]
    fn infinite_snr_is_a_no_op() {
        let (cloud, _) = generate_chirp(&ChirpParams::default()).unwrap();
        let spec = NoiseSpec {
            snr_linear: f64::INFINITY,
            seed: 1,
            per_axis_power: axis_mean_square(&cloud),
        };
        assert_eq!(add_noise(&cloud, &spec).unwrap(), cloud);
        let zero_power = NoiseSpec { snr_linear: 10.0, seed: 1, per_axis_power: vec![0.0, 0.0] };
        assert_eq!(add_noise(&cloud, &zero_power).unwrap(), cloud);
    }

    #[test]
    fn nonpositive_snr_is_rejected() {
        let (cloud, _) = generate_chirp(&ChirpParams::default()).unwrap();
        let spec = NoiseSpec { snr_linear: 0.0, seed: 1, per_axis_power: vec![1.0, 1.0] };
        assert!(add_noise(&cloud, &spec).is_err());
    }

    #[test]
    fn noise_variance_tracks_the_requested_snr() {
        // Monte-Carlo check of the P_a / SNR variance law at 20 dB.
        let (cloud, _) = generate_chirp(&ChirpParams::default()).unwrap();
        let powers = axis_mean_square(&cloud);
        let snr = 100.0;
        let n_seeds = 100;
        let mut mean_var = vec![0.0; cloud.dim()];
        for seed in 0..n_seeds {
            let spec = NoiseSpec { snr_linear: snr, seed, per_axis_power: powers.clone() };
            let noisy = add_noise(&cloud, &spec).unwrap();
            for a in 0..cloud.dim() {
                let var = noisy
                    .points()
                    .iter()
                    .zip(cloud.points())
                    .map(|(q, p)| (q[a] - p[a]).powi(2))
                    .sum::<f64>()
                    / cloud.len() as f64;
                mean_var[a] += var / n_seeds as f64;
            }
        }
        for a in 0..cloud.dim() {
            let target = powers[a] / snr;
            assert!(
                (mean_var[a] - target).abs() < 0.1 * target,
                "axis {a}: measured {} vs target {target}",
                mean_var[a]
            );
        }
    }
}
