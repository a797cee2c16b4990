//! Metastable-switch drift model.
//!
//! A device is `N` independent two-state switches. `n` of them conduct, and
//! the readout maps `n` to a resistance. At rest each switch hops with
//! Arrhenius rates whose asymmetry is set by the offset voltage, so the
//! population relaxes toward a stationary count `n_eq` and the resistance
//! drifts toward the matching equilibrium value.

use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Physical constants of the drift model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceParams {
    /// Number of metastable switches.
    pub n_switches: u64,
    /// Readout threshold (switch count).
    pub n_thresh: u64,
    /// Barrier height, volts.
    pub barrier_voltage: f64,
    /// Parallel conductance, siemens.
    pub g_parallel: f64,
    /// Conductance added per conducting switch, siemens.
    pub g_step: f64,
    /// Offset voltage setting the equilibrium, volts.
    pub v_off: f64,
    /// Bath temperature, kelvin.
    pub temperature: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Electronic charge, C.
    pub q_e: f64,
    /// Attempt frequency, Hz.
    pub attempt_freq: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            n_switches: 1_800_000,
            n_thresh: 0,
            barrier_voltage: 0.256,
            g_parallel: 1e-6,
            g_step: 1e-2 / 1e6,
            v_off: 0.2532,
            temperature: 300.0,
            k_b: 1.38064e-23,
            q_e: 1.602176e-19,
            attempt_freq: 1.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if self.n_switches < 1 {
            return Err(Error::invalid("n_switches must be at least 1"));
        }
        if self.n_thresh > self.n_switches {
            return Err(Error::invalid("n_thresh must not exceed n_switches"));
        }
        positive(self.g_step, "g_step")?;
        positive(self.g_parallel, "g_parallel")?;
        positive(self.temperature, "temperature")?;
        positive(self.k_b, "k_b")?;
        positive(self.q_e, "q_e")?;
        // zero attempt frequency freezes the device, which the tests rely on
        if !(self.attempt_freq.is_finite() && self.attempt_freq >= 0.0) {
            return Err(Error::invalid("attempt_freq must be finite and non-negative"));
        }
        if !self.barrier_voltage.is_finite() || !self.v_off.is_finite() {
            return Err(Error::invalid("voltages must be finite"));
        }
        Ok(())
    }

    /// `k_B·T/q`, volts.
    pub fn thermal_voltage(&self) -> f64 {
        self.k_b * self.temperature / self.q_e
    }

    /// Readout resistance for a (possibly fractional) conducting count.
    pub fn resistance(&self, n: f64) -> f64 {
        1.0 / (self.g_step * n.max(self.n_thresh as f64) + self.g_parallel)
    }

    /// Nearest switch count for a resistance, clamped to `[n_thresh, N]`.
    pub fn state_for_resistance(&self, r: f64) -> Result<DeviceState> {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::invalid(format!("resistance must be positive and finite, got {r}")));
        }
        let n = ((1.0 / r - self.g_parallel) / self.g_step).round();
        let n = n.clamp(self.n_thresh as f64, self.n_switches as f64);
        Ok(DeviceState { n: n as u64 })
    }

    /// Stationary conducting count implied by the offset voltage.
    pub fn equilibrium_state(&self) -> f64 {
        self.n_switches as f64 / (1.0 + (self.v_off / self.thermal_voltage()).exp())
    }

    /// Offset voltage whose stationary count is `n_eq`.
    pub fn v_off_for_equilibrium(&self, n_eq: f64) -> Result<f64> {
        let total = self.n_switches as f64;
        if !(n_eq > 0.0 && n_eq < total) {
            return Err(Error::invalid(format!(
                "equilibrium count must lie strictly inside (0, {total}), got {n_eq}"
            )));
        }
        Ok(((total - n_eq) / n_eq).ln() * self.thermal_voltage())
    }

    /// Per-switch hop rates `(up, down)` in Hz.
    ///
    /// The barrier is split symmetrically by the offset, so
    /// `up/down = exp(-V_off/V_t)` and the stationary point of
    /// `(N-n)·up = n·down` is exactly [`Self::equilibrium_state`].
    pub fn switch_rates(&self) -> SwitchRates {
        let vt = self.thermal_voltage();
        let half = 0.5 * self.v_off;
        SwitchRates {
            up: self.attempt_freq * (-(self.barrier_voltage + half) / vt).exp(),
            down: self.attempt_freq * (-(self.barrier_voltage - half) / vt).exp(),
        }
    }

    /// Relaxation rate of the mean count, `up + down`.
    pub fn relaxation_rate(&self) -> f64 {
        let r = self.switch_rates();
        r.up + r.down
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchRates {
    pub up: f64,
    pub down: f64,
}

/// Number of switches currently conducting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceState {
    pub n: u64,
}

impl DeviceState {
    pub fn new(n: u64, p: &DeviceParams) -> Result<Self> {
        if n > p.n_switches {
            return Err(Error::invalid(format!(
                "state {n} exceeds switch count {}",
                p.n_switches
            )));
        }
        Ok(Self { n })
    }

    pub fn resistance(&self, p: &DeviceParams) -> f64 {
        p.resistance(self.n as f64)
    }
}

/// How the switch population is advanced in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteppingMethod {
    /// Exact event-by-event simulation.
    Gillespie,
    /// Binomial leaping over fixed intervals.
    #[default]
    TauLeap,
    /// Closed-form transition of independent two-state switches; any step length.
    Exact,
}

impl std::str::FromStr for SteppingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gillespie" => Ok(Self::Gillespie),
            "tau_leap" | "tau-leap" => Ok(Self::TauLeap),
            "exact" => Ok(Self::Exact),
            other => Err(Error::invalid(format!("unknown stepping method '{other}'"))),
        }
    }
}

fn binomial(trials: u64, p: f64, rng: &mut Rng) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials, p)
        .expect("probability checked to lie in (0, 1)")
        .sample(rng)
}

/// One fixed-interval binomial leap of length `dt`.
pub fn step_tau_leap(s: DeviceState, dt: f64, p: &DeviceParams, rng: &mut Rng) -> DeviceState {
    debug_assert!(dt > 0.0);
    let rates = p.switch_rates();
    let p_up = -(-rates.up * dt).exp_m1();
    let p_down = -(-rates.down * dt).exp_m1();
    let k_up = binomial(p.n_switches - s.n, p_up, rng);
    let k_down = binomial(s.n, p_down, rng);
    let n = (s.n + k_up).saturating_sub(k_down).min(p.n_switches);
    DeviceState { n }
}

/// Exact transition over `dt`: each switch relaxes independently towards
/// its stationary occupation `up / (up + down)`.
pub fn step_exact(s: DeviceState, dt: f64, p: &DeviceParams, rng: &mut Rng) -> DeviceState {
    debug_assert!(dt > 0.0);
    let rates = p.switch_rates();
    let total = rates.up + rates.down;
    if total <= 0.0 {
        return s;
    }
    let relaxed = -(-total * dt).exp_m1();
    let p_on = rates.up / total * relaxed;
    let p_off = rates.down / total * relaxed;
    let stay = s.n - binomial(s.n, p_off, rng);
    let join = binomial(p.n_switches - s.n, p_on, rng);
    DeviceState { n: stay + join }
}

/// Direction of a single switch flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hop {
    Up,
    Down,
}

/// Waiting time and direction of the next flip from count `n`, or `None`
/// when the total rate vanishes.
pub fn next_event(n: u64, rates: SwitchRates, p: &DeviceParams, rng: &mut Rng) -> Option<(f64, Hop)> {
    let up_total = (p.n_switches - n) as f64 * rates.up;
    let down_total = n as f64 * rates.down;
    let total = up_total + down_total;
    if total <= 0.0 {
        return None;
    }
    let wait: f64 = Exp1.sample(rng);
    let hop = if rng.random::<f64>() * total < up_total {
        Hop::Up
    } else {
        Hop::Down
    };
    Some((wait / total, hop))
}

/// Exact event-driven evolution over `[0, dt]`.
pub fn step_gillespie(s: DeviceState, dt: f64, p: &DeviceParams, rng: &mut Rng) -> DeviceState {
    debug_assert!(dt > 0.0);
    let rates = p.switch_rates();
    let mut n = s.n;
    let mut remaining = dt;
    while let Some((wait, hop)) = next_event(n, rates, p, rng) {
        if wait > remaining {
            break;
        }
        remaining -= wait;
        match hop {
            Hop::Up => n += 1,
            Hop::Down => n -= 1,
        }
    }
    DeviceState { n }
}

/// Advance by `dt` with the chosen method.
pub fn step(
    s: DeviceState,
    dt: f64,
    method: SteppingMethod,
    p: &DeviceParams,
    rng: &mut Rng,
) -> DeviceState {
    match method {
        SteppingMethod::Gillespie => step_gillespie(s, dt, p, rng),
        SteppingMethod::TauLeap => step_tau_leap(s, dt, p, rng),
        SteppingMethod::Exact => step_exact(s, dt, p, rng),
    }
}

/// One resistance trajectory sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSeries {
    /// Initial resistance (the readout of the quantized initial state).
    pub r_init: f64,
    pub t_sample: f64,
    pub values: Vec<f64>,
}

impl DriftSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("series is never empty")
    }
}

pub(crate) fn sample_count(t_tot: f64, t_sample: f64) -> Result<usize> {
    if !(t_tot.is_finite() && t_tot > 0.0) {
        return Err(Error::invalid(format!("t_tot must be positive, got {t_tot}")));
    }
    if !(t_sample.is_finite() && t_sample > 0.0) {
        return Err(Error::invalid(format!("t_sample must be positive, got {t_sample}")));
    }
    let ratio = t_tot / t_sample;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
        return Err(Error::invalid(format!(
            "t_tot / t_sample must be a positive integer, got {ratio}"
        )));
    }
    Ok(steps as usize)
}

/// Simulate a drift series starting from `r_init` and sampled every `t_sample`.
pub fn simulate_series(
    r_init: f64,
    t_tot: f64,
    t_sample: f64,
    method: SteppingMethod,
    p: &DeviceParams,
    rng: &mut Rng,
) -> Result<DriftSeries> {
    let steps = sample_count(t_tot, t_sample)?;
    let mut state = p.state_for_resistance(r_init)?;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(state.resistance(p));
    for _ in 0..steps {
        state = step(state, t_sample, method, p, rng);
        values.push(state.resistance(p));
    }
    Ok(DriftSeries {
        r_init: values[0],
        t_sample,
        values,
    })
}

/// Resistance after `delay` seconds from `r_init`, one sample of the true model.
///
/// Uses leaps of at most `max_dt` so arbitrary (also fractional) delays are
/// covered; an infinite `max_dt` takes the whole delay in one step.
pub fn sample_final(
    r_init: f64,
    delay: f64,
    max_dt: f64,
    method: SteppingMethod,
    p: &DeviceParams,
    rng: &mut Rng,
) -> Result<f64> {
    if !(delay.is_finite() && delay > 0.0) {
        return Err(Error::invalid(format!("delay must be positive, got {delay}")));
    }
    let mut state = p.state_for_resistance(r_init)?;
    let leaps = (delay / max_dt).ceil().max(1.0) as u64;
    let dt = delay / leaps as f64;
    for _ in 0..leaps {
        state = step(state, dt, method, p, rng);
    }
    Ok(state.resistance(p))
}
