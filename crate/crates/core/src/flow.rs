//! Drivers: measure-preserving flows supplying the time dependence of the
//! coefficients.
//!
//! Three kinds are supported. Torus rotations move a point of the d-torus
//! with constant frequency vector. Smoothed switching paths follow a
//! continuous-time jump process whose state amplitudes are mollified to a C^2
//! signal. The unbounded-amplitude rotation is a torus rotation that
//! additionally exposes `dist(w, singularity)^(-exponent)` through the
//! amplitude variable `s`, giving an integrable but unbounded coefficient
//! driver.
//!
//! A [`FlowPoint`] keeps the sampled origin and the elapsed time separately;
//! advancing only adds to the elapsed time. Two advances therefore compose
//! through one floating-point addition and the group law holds exactly, not
//! just up to round-off.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    TorusRotation,
    SmoothedSwitching,
    UnboundedAmplitudeRotation,
}

/// Declarative description of a driver. Deserialized from configuration;
/// optional fields are required or forbidden depending on `kind`, which
/// [`MetricFlowSpec::validate`] enforces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricFlowSpec {
    pub kind: DriverKind,
    /// Rotation frequencies, one per torus dimension (rotation kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_vector: Option<Vec<f64>>,
    /// Jump intensity of the switching process (1/time).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching_rate: Option<f64>,
    /// Unnormalized weights of the embedded jump chain; jumps are drawn
    /// independently, so these are also the stationary state probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_weights: Option<Vec<f64>>,
    /// Amplitude the variable `s` takes in each state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_amplitudes: Option<Vec<f64>>,
    /// Half-width of the C^2 mollifier applied to the switching signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollification_width: Option<f64>,
    /// Realizations are generated on `[-path_window, path_window]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_window: Option<f64>,
    /// Exponent p of the amplitude factor `dist^(-p)`; integrability on the
    /// torus requires p < d, and the accepted range is (0, 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity_exponent: Option<f64>,
    /// Location of the amplitude singularity on the torus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity_point: Option<Vec<f64>>,
}

pub const DEFAULT_PATH_WINDOW: f64 = 256.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow spec invalid: {0}")]
    InvalidSpec(String),
    #[error("time {t} leaves the pre-generated path window [-{window}, {window}]")]
    PathWindowExceeded { t: f64, window: f64 },
}

impl MetricFlowSpec {
    pub fn rotation(frequencies: Vec<f64>) -> Self {
        MetricFlowSpec {
            kind: DriverKind::TorusRotation,
            frequency_vector: Some(frequencies),
            switching_rate: None,
            transition_weights: None,
            state_amplitudes: None,
            mollification_width: None,
            path_window: None,
            singularity_exponent: None,
            singularity_point: None,
        }
    }

    pub fn switching(
        rate: f64,
        weights: Vec<f64>,
        amplitudes: Vec<f64>,
        mollification_width: f64,
        path_window: f64,
    ) -> Self {
        MetricFlowSpec {
            kind: DriverKind::SmoothedSwitching,
            frequency_vector: None,
            switching_rate: Some(rate),
            transition_weights: Some(weights),
            state_amplitudes: Some(amplitudes),
            mollification_width: Some(mollification_width),
            path_window: Some(path_window),
            singularity_exponent: None,
            singularity_point: None,
        }
    }

    pub fn unbounded_rotation(frequencies: Vec<f64>, exponent: f64, point: Vec<f64>) -> Self {
        MetricFlowSpec {
            kind: DriverKind::UnboundedAmplitudeRotation,
            frequency_vector: Some(frequencies),
            switching_rate: None,
            transition_weights: None,
            state_amplitudes: None,
            mollification_width: None,
            path_window: None,
            singularity_exponent: Some(exponent),
            singularity_point: Some(point),
        }
    }

    /// Torus dimension: number of coordinates `w1..wd` the driver provides.
    pub fn torus_dim(&self) -> usize {
        self.frequency_vector.as_ref().map_or(0, Vec::len)
    }

    pub fn path_window(&self) -> f64 {
        self.path_window.unwrap_or(DEFAULT_PATH_WINDOW)
    }

    fn is_rotation_like(&self) -> bool {
        matches!(
            self.kind,
            DriverKind::TorusRotation | DriverKind::UnboundedAmplitudeRotation
        )
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let fail = |msg: String| Err(FlowError::InvalidSpec(msg));
        if self.is_rotation_like() {
            let nu = match &self.frequency_vector {
                Some(nu) if !nu.is_empty() => nu,
                _ => return fail("frequency_vector must be a non-empty list".into()),
            };
            if nu.iter().any(|v| !v.is_finite()) {
                return fail("frequency_vector entries must be finite".into());
            }
        } else if self.frequency_vector.is_some() {
            return fail("frequency_vector is only valid for rotation kinds".into());
        }
        match self.kind {
            DriverKind::TorusRotation => {
                if self.singularity_exponent.is_some() || self.singularity_point.is_some() {
                    return fail("singularity fields require the unbounded kind".into());
                }
                if self.switching_rate.is_some() {
                    return fail("switching fields require the switching kind".into());
                }
            }
            DriverKind::UnboundedAmplitudeRotation => {
                let p = self
                    .singularity_exponent
                    .ok_or_else(|| FlowError::InvalidSpec("singularity_exponent required".into()))?;
                if !(p > 0.0 && p < 1.0) {
                    return fail(format!(
                        "singularity_exponent must lie in (0, 1), got {p}"
                    ));
                }
                let pt = self
                    .singularity_point
                    .as_ref()
                    .ok_or_else(|| FlowError::InvalidSpec("singularity_point required".into()))?;
                if pt.len() != self.torus_dim() {
                    return fail(format!(
                        "singularity_point has {} coordinates, frequency_vector has {}",
                        pt.len(),
                        self.torus_dim()
                    ));
                }
                if pt.iter().any(|c| !(0.0..1.0).contains(c)) {
                    return fail("singularity_point coordinates must lie in [0, 1)".into());
                }
            }
            DriverKind::SmoothedSwitching => {
                let rate = self
                    .switching_rate
                    .ok_or_else(|| FlowError::InvalidSpec("switching_rate required".into()))?;
                if !(rate > 0.0 && rate.is_finite()) {
                    return fail(format!("switching_rate must be positive, got {rate}"));
                }
                let weights = self
                    .transition_weights
                    .as_ref()
                    .ok_or_else(|| FlowError::InvalidSpec("transition_weights required".into()))?;
                if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return fail("transition_weights must be nonnegative and non-empty".into());
                }
                if weights.iter().sum::<f64>() <= 0.0 {
                    return fail("transition_weights must not all be zero".into());
                }
                let amps = self
                    .state_amplitudes
                    .as_ref()
                    .ok_or_else(|| FlowError::InvalidSpec("state_amplitudes required".into()))?;
                if amps.len() != weights.len() {
                    return fail(format!(
                        "state_amplitudes has {} entries, transition_weights has {}",
                        amps.len(),
                        weights.len()
                    ));
                }
                let eps = self.mollification_width.ok_or_else(|| {
                    FlowError::InvalidSpec("mollification_width required".into())
                })?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return fail("mollification_width must be positive".into());
                }
                let window = self.path_window();
                if !(window > 0.0 && window.is_finite()) || window < 4.0 * eps {
                    return fail(format!(
                        "path_window must be positive and at least 4 mollification widths, got {window}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Non-fatal diagnostics: zero frequencies and (near-)rational frequency
    /// ratios break ergodicity of the rotation but not the computation.
    pub fn ergodicity_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(nu) = &self.frequency_vector {
            for (i, v) in nu.iter().enumerate() {
                if *v == 0.0 {
                    out.push(format!(
                        "frequency component {} is zero: the orbit is not dense in that coordinate",
                        i + 1
                    ));
                }
            }
            for i in 0..nu.len() {
                for j in (i + 1)..nu.len() {
                    if nu[j] == 0.0 || nu[i] == 0.0 {
                        continue;
                    }
                    let r = nu[i] / nu[j];
                    for q in 1..=32u32 {
                        let p = (r * q as f64).round();
                        if (r * q as f64 - p).abs() < 1e-9 * q as f64 {
                            out.push(format!(
                                "frequencies {} and {} have ratio close to {}/{q}: orbit closure may be a subtorus",
                                i + 1,
                                j + 1,
                                p as i64,
                            ));
                            break;
                        }
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Switching realization
// ---------------------------------------------------------------------------

/// One realization of the switching process on `[-window, window]`, immutable
/// after creation and shareable across threads.
#[derive(Debug)]
pub struct SwitchPath {
    window: f64,
    eps: f64,
    amplitudes: Vec<f64>,
    /// Segment k occupies `[times[k], times[k+1])` in state `states[k]`.
    /// The first and last segment extend one mollification width beyond the
    /// window so every evaluation inside it sees a complete neighborhood.
    times: Vec<f64>,
    states: Vec<usize>,
    seed: u64,
}

impl SwitchPath {
    fn generate(spec: &MetricFlowSpec, seed: u64) -> Arc<SwitchPath> {
        let rate = spec.switching_rate.expect("validated spec");
        let weights = spec.transition_weights.as_ref().expect("validated spec");
        let amplitudes = spec.state_amplitudes.clone().expect("validated spec");
        let eps = spec.mollification_width.expect("validated spec");
        let window = spec.path_window();
        let total: f64 = weights.iter().sum();

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let draw_state = |rng: &mut ChaCha12Rng| -> usize {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return k;
                }
            }
            weights.len() - 1
        };

        let lo = -window - 2.0 * eps;
        let hi = window + 2.0 * eps;
        let mut times = vec![lo];
        let mut states = Vec::new();
        let mut t = lo;
        while t < hi {
            states.push(draw_state(&mut rng));
            // Exponential holding time; 1 - U lies in (0, 1] so ln is finite.
            let u: f64 = rng.gen();
            let dt = -((1.0 - u).ln()) / rate;
            t += dt.max(f64::MIN_POSITIVE);
            times.push(t);
        }
        Arc::new(SwitchPath {
            window,
            eps,
            amplitudes,
            times,
            states,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    fn segment_index(&self, t: f64) -> usize {
        // First segment whose right endpoint exceeds t.
        match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times"))
        {
            Ok(k) => k.min(self.states.len() - 1),
            Err(k) => k.saturating_sub(1).min(self.states.len() - 1),
        }
    }

    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.segment_index(t)]
    }

    /// Mollified amplitude: the piecewise-constant state signal convolved
    /// with the C^2 bump `(35/32eps) (1 - (u/eps)^2)^3` on `[-eps, eps]`.
    pub fn amplitude(&self, t: f64) -> f64 {
        let eps = self.eps;
        let cdf = |u: f64| -> f64 {
            if u <= -eps {
                0.0
            } else if u >= eps {
                1.0
            } else {
                let s = u / eps;
                let p = s - s.powi(3) + 0.6 * s.powi(5) - s.powi(7) / 7.0;
                (35.0 / 32.0) * (p + 16.0 / 35.0)
            }
        };
        let mut k = self.segment_index(t - eps);
        let mut acc = 0.0;
        while k < self.states.len() && self.times[k] < t + eps {
            let a = self.times[k];
            let b = self.times[k + 1];
            acc += self.amplitudes[self.states[k]] * (cdf(t - a) - cdf(t - b));
            k += 1;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Flow points
// ---------------------------------------------------------------------------

/// A point of the driver space together with its elapsed time from the
/// sampled origin. Construct through [`sample_invariant`] or [`FlowPoint::at_origin`];
/// move it with [`advance`]. Torus coordinates always lie in `[0, 1)`.
#[derive(Clone, Debug)]
pub struct FlowPoint {
    origin: Vec<f64>,
    elapsed: f64,
    path: Option<Arc<SwitchPath>>,
    coords: Vec<f64>,
    amp: f64,
    state: Option<usize>,
}

impl FlowPoint {
    /// Point with the given torus coordinates and zero elapsed time.
    /// Coordinates are wrapped into `[0, 1)`.
    pub fn at_origin(spec: &MetricFlowSpec, coords: Vec<f64>) -> Result<FlowPoint, FlowError> {
        spec.validate()?;
        if spec.kind == DriverKind::SmoothedSwitching {
            return Err(FlowError::InvalidSpec(
                "switching drivers need a realization; use sample_invariant".into(),
            ));
        }
        if coords.len() != spec.torus_dim() {
            return Err(FlowError::InvalidSpec(format!(
                "expected {} torus coordinates, got {}",
                spec.torus_dim(),
                coords.len()
            )));
        }
        let origin: Vec<f64> = coords.iter().map(|c| wrap_unit(*c)).collect();
        Ok(materialize(spec, origin, 0.0, None))
    }

    /// Torus coordinates in `[0, 1)`; empty for switching drivers.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Value bound to the expression variable `s` at this point.
    pub fn amp(&self) -> f64 {
        self.amp
    }

    /// Time since the sampled origin.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Switching state index, when driven by a switching path.
    pub fn state_index(&self) -> Option<usize> {
        self.state
    }

    pub fn path(&self) -> Option<&Arc<SwitchPath>> {
        self.path.as_ref()
    }
}

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid of a tiny negative number can round up to exactly 1.0.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Distance of two coordinates on the unit circle.
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn materialize(
    spec: &MetricFlowSpec,
    origin: Vec<f64>,
    elapsed: f64,
    path: Option<Arc<SwitchPath>>,
) -> FlowPoint {
    let coords: Vec<f64> = match &spec.frequency_vector {
        Some(nu) => origin
            .iter()
            .zip(nu)
            .map(|(o, v)| wrap_unit(o + elapsed * v))
            .collect(),
        None => Vec::new(),
    };
    let (amp, state) = match spec.kind {
        DriverKind::TorusRotation => (1.0, None),
        DriverKind::UnboundedAmplitudeRotation => {
            let p = spec.singularity_exponent.expect("validated spec");
            let point = spec.singularity_point.as_ref().expect("validated spec");
            let dist2: f64 = coords
                .iter()
                .zip(point)
                .map(|(c, s)| {
                    let d = circle_dist(*c, *s);
                    d * d
                })
                .sum();
            (dist2.sqrt().powf(-p), None)
        }
        DriverKind::SmoothedSwitching => {
            let path_ref = path.as_ref().expect("switching point carries its path");
            (path_ref.amplitude(elapsed), Some(path_ref.state_at(elapsed)))
        }
    };
    FlowPoint {
        origin,
        elapsed,
        path,
        coords,
        amp,
        state,
    }
}

/// Moves a point by time `t` (either sign). For rotation kinds this is exact:
/// only the stored elapsed time changes, by one floating-point addition.
pub fn advance(spec: &MetricFlowSpec, point: &FlowPoint, t: f64) -> Result<FlowPoint, FlowError> {
    let elapsed = point.elapsed + t;
    if let Some(path) = &point.path {
        if elapsed.abs() > path.window() {
            return Err(FlowError::PathWindowExceeded {
                t: elapsed,
                window: path.window(),
            });
        }
    }
    Ok(materialize(
        spec,
        point.origin.clone(),
        elapsed,
        point.path.clone(),
    ))
}

/// Draws `n` points distributed by the invariant measure: uniform on the
/// torus for rotation kinds, and independent stationary realizations for the
/// switching driver. Deterministic in `seed`.
pub fn sample_invariant(
    spec: &MetricFlowSpec,
    seed: u64,
    n: usize,
) -> Result<Vec<FlowPoint>, FlowError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = spec.torus_dim();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        match spec.kind {
            DriverKind::TorusRotation | DriverKind::UnboundedAmplitudeRotation => {
                let coords: Vec<f64> = (0..d).map(|_| wrap_unit(rng.gen::<f64>())).collect();
                out.push(materialize(spec, coords, 0.0, None));
            }
            DriverKind::SmoothedSwitching => {
                let path_seed: u64 = rng.gen();
                let path = SwitchPath::generate(spec, path_seed);
                out.push(materialize(spec, Vec::new(), 0.0, Some(path)));
            }
        }
    }
    Ok(out)
}

/// Deviation between advancing by `t1` then `t2` and advancing by `t1 + t2`
/// in one jump: the max-coordinate torus distance for rotation kinds, and the
/// larger of phase and amplitude deviation for switching paths. Exactly zero
/// for rotation kinds by construction.
pub fn group_law_residual(
    spec: &MetricFlowSpec,
    point: &FlowPoint,
    t1: f64,
    t2: f64,
) -> Result<f64, FlowError> {
    let two_step = advance(spec, &advance(spec, point, t1)?, t2)?;
    let one_step = advance(spec, point, t1 + t2)?;
    let coord_dev = two_step
        .coords
        .iter()
        .zip(&one_step.coords)
        .map(|(a, b)| circle_dist(*a, *b))
        .fold(0.0, f64::max);
    let phase_dev = (two_step.elapsed - one_step.elapsed).abs();
    let amp_dev = (two_step.amp - one_step.amp).abs();
    Ok(coord_dev.max(phase_dev).max(amp_dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rotation2() -> MetricFlowSpec {
        MetricFlowSpec::rotation(vec![1.0, 0.5])
    }

    #[test]
    fn rotation_advance_matches_hand_values() {
        let spec = rotation2();
        let p = FlowPoint::at_origin(&spec, vec![0.25, 0.25]).unwrap();
        let q = advance(&spec, &p, 1.0).unwrap();
        assert_eq!(q.coords(), &[0.25, 0.75]);
        assert_eq!(q.amp(), 1.0);
    }

    #[test]
    fn rotation_wraps_into_unit_interval() {
        let spec = MetricFlowSpec::rotation(vec![1.0]);
        let p = FlowPoint::at_origin(&spec, vec![0.9]).unwrap();
        let q = advance(&spec, &p, 0.2).unwrap();
        assert!(circle_dist(q.coords()[0], 0.1) < 1e-12);
        assert!((0.0..1.0).contains(&q.coords()[0]));
    }

    #[test]
    fn zero_advance_is_identity() {
        let spec = rotation2();
        let p = FlowPoint::at_origin(&spec, vec![0.123, 0.456]).unwrap();
        let q = advance(&spec, &p, 0.0).unwrap();
        assert_eq!(p.coords(), q.coords());
    }

    #[test]
    fn group_law_is_exact_for_rotations() {
        let spec = rotation2();
        let p = FlowPoint::at_origin(&spec, vec![0.37, 0.61]).unwrap();
        assert_eq!(group_law_residual(&spec, &p, 0.3, 0.7).unwrap(), 0.0);
        assert_eq!(
            group_law_residual(&spec, &p, std::f64::consts::SQRT_2, -0.31).unwrap(),
            0.0
        );
    }

    #[test]
    fn negative_advance_returns_exactly() {
        let spec = rotation2();
        let p = FlowPoint::at_origin(&spec, vec![0.2, 0.8]).unwrap();
        let away = advance(&spec, &p, -3.7).unwrap();
        let back = advance(&spec, &away, 3.7).unwrap();
        assert_eq!(p.coords(), back.coords());
    }

    #[test]
    fn invariant_sampling_is_uniform_and_deterministic() {
        let spec = MetricFlowSpec::rotation(vec![1.0]);
        let pts = sample_invariant(&spec, 7, 100_000).unwrap();
        let mean: f64 = pts.iter().map(|p| p.coords()[0]).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        let again = sample_invariant(&spec, 7, 100_000).unwrap();
        for (a, b) in pts.iter().zip(&again) {
            assert_eq!(a.coords(), b.coords());
        }
    }

    #[test]
    fn unbounded_amplitude_matches_hand_value() {
        let spec =
            MetricFlowSpec::unbounded_rotation(vec![1.0, 0.5], 0.5, vec![0.5, 0.5]);
        let p = FlowPoint::at_origin(&spec, vec![0.25, 0.5]).unwrap();
        // dist = 0.25, amp = 0.25^(-1/2) = 2.
        assert!((p.amp() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_amplitude_mean_is_finite() {
        let spec =
            MetricFlowSpec::unbounded_rotation(vec![1.0, 0.5], 0.5, vec![0.5, 0.5]);
        let pts = sample_invariant(&spec, 3, 20_000).unwrap();
        let mean: f64 = pts.iter().map(FlowPoint::amp).sum::<f64>() / 2e4;
        assert!(mean.is_finite());
        // Monte-Carlo estimate of E[dist^(-1/2)] on the 2-torus; the true
        // value is near 1.4, far below the blow-up scale.
        assert!(mean < 3.0, "mean {mean}");
    }

    #[test]
    fn exponent_outside_unit_interval_is_rejected() {
        let spec = MetricFlowSpec::unbounded_rotation(vec![1.0], 1.5, vec![0.5]);
        assert!(spec.validate().is_err());
        let spec = MetricFlowSpec::unbounded_rotation(vec![1.0], 0.5, vec![0.5]);
        assert!(spec.validate().is_ok());
    }

    fn switching_spec() -> MetricFlowSpec {
        MetricFlowSpec::switching(
            2.0,
            vec![0.3, 0.5, 0.2],
            vec![-0.5, 0.2, 1.0],
            0.02,
            64.0,
        )
    }

    #[test]
    fn switching_group_law_within_window() {
        let spec = switching_spec();
        let p = &sample_invariant(&spec, 11, 1).unwrap()[0];
        let r = group_law_residual(&spec, p, 1.25, -0.75).unwrap();
        assert!(r <= 1e-12, "residual {r}");
    }

    #[test]
    fn switching_window_excess_is_reported() {
        let spec = switching_spec();
        let p = &sample_invariant(&spec, 11, 1).unwrap()[0];
        match advance(&spec, p, 65.0) {
            Err(FlowError::PathWindowExceeded { window, .. }) => assert_eq!(window, 64.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn switching_amplitude_is_a_state_average() {
        let spec = switching_spec();
        let p = &sample_invariant(&spec, 4, 1).unwrap()[0];
        for k in -40..40 {
            let q = advance(&spec, p, k as f64 * 0.37).unwrap();
            assert!(q.amp() >= -0.5 - 1e-12 && q.amp() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn switching_amplitude_is_continuous() {
        let spec = switching_spec();
        let p = &sample_invariant(&spec, 9, 1).unwrap()[0];
        // The mollified signal has slope bounded by amp range / width scale;
        // check small increments shrink proportionally.
        let jump = |dt: f64| -> f64 {
            let mut worst: f64 = 0.0;
            for k in 0..4000 {
                let t = -20.0 + k as f64 * 0.01;
                let a = advance(&spec, p, t).unwrap().amp();
                let b = advance(&spec, p, t + dt).unwrap().amp();
                worst = worst.max((a - b).abs());
            }
            worst
        };
        let j1 = jump(1e-3);
        let j2 = jump(5e-4);
        assert!(j1 < 0.2, "jump {j1}");
        assert!(j2 < 0.75 * j1 + 1e-9, "no decay: {j1} -> {j2}");
    }

    #[test]
    fn switching_states_follow_the_weights() {
        let spec = switching_spec();
        let pts = sample_invariant(&spec, 21, 4000).unwrap();
        let mut counts = [0usize; 3];
        for p in &pts {
            counts[p.state_index().unwrap()] += 1;
        }
        for (k, &w) in [0.3f64, 0.5, 0.2].iter().enumerate() {
            let freq = counts[k] as f64 / 4000.0;
            let se = (w * (1.0 - w) / 4000.0).sqrt();
            assert!(
                (freq - w).abs() < 4.0 * se,
                "state {k}: freq {freq} vs weight {w}"
            );
        }
    }

    #[test]
    fn rational_frequencies_warn_irrational_do_not() {
        let spec = MetricFlowSpec::rotation(vec![1.0, 2.0]);
        assert!(!spec.ergodicity_warnings().is_empty());
        let spec = MetricFlowSpec::rotation(vec![1.0, 0.618_033_988_749_894_9]);
        assert!(spec.ergodicity_warnings().is_empty());
        let spec = MetricFlowSpec::rotation(vec![1.0, 0.0]);
        assert!(!spec.ergodicity_warnings().is_empty());
    }

    proptest! {
        #[test]
        fn rotation_group_law_residual_is_zero(
            o1 in 0.0..1.0f64, o2 in 0.0..1.0f64,
            t1 in -50.0..50.0f64, t2 in -50.0..50.0f64,
        ) {
            let spec = rotation2();
            let p = FlowPoint::at_origin(&spec, vec![o1, o2]).unwrap();
            prop_assert_eq!(group_law_residual(&spec, &p, t1, t2).unwrap(), 0.0);
        }

        #[test]
        fn coords_stay_in_unit_interval(o in 0.0..1.0f64, t in -1e4..1e4f64) {
            let spec = MetricFlowSpec::rotation(vec![std::f64::consts::SQRT_2]);
            let p = FlowPoint::at_origin(&spec, vec![o]).unwrap();
            let q = advance(&spec, &p, t).unwrap();
            prop_assert!((0.0..1.0).contains(&q.coords()[0]));
        }
    }
}
