//! Synthetic soft-fin rig: a rate-limited servo with a trapezoidal velocity
//! profile, a first-order lag from motor angle to effective fin angle, and a
//! quasi-steady drag plus added-mass force normal to the fin.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sample period (100 Hz).
pub const DT: f64 = 0.01;

/// Lowest / highest admissible command angle (open interval).
pub const ANGLE_LIMIT: f64 = FRAC_PI_2;
/// Open interval of admissible command speeds in rad/s.
pub const SPEED_MIN: f64 = 1.0;
pub const SPEED_MAX: f64 = std::f64::consts::PI;
/// Slack allowed on the motor angle beyond the command range.
pub const ANGLE_SLACK: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PlantFault {
    #[error("invalid plant parameters: {0}")]
    Params(String),
    #[error("command out of range: angle {angle} rad, speed {speed} rad/s")]
    Command { angle: f64, speed: f64 },
    #[error("non-finite plant state: {0:?}")]
    NonFinite(PlantState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Normal drag coefficient, N·s²/rad².
    pub c_n: f64,
    /// Added-mass coefficient, N·s²/rad.
    pub c_a: f64,
    /// Fin deformation lag, s.
    pub tau: f64,
    /// Motor angular acceleration limit, rad/s².
    pub a_max: f64,
    /// Force noise standard deviation per axis, N.
    pub sigma: f64,
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            c_n: 6.0,
            c_a: 0.05,
            tau: 0.12,
            a_max: 40.0,
            sigma: 0.05,
            dt: DT,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantFault> {
        let fields = [
            ("c_n", self.c_n),
            ("c_a", self.c_a),
            ("tau", self.tau),
            ("a_max", self.a_max),
            ("sigma", self.sigma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantFault::Params(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.dt != DT {
            return Err(PlantFault::Params(format!("dt must be {DT}, got {}", self.dt)));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical text form of the parameters.
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "c_n={:e};c_a={:e};tau={:e};a_max={:e};sigma={:e};dt={:e}",
            self.c_n, self.c_a, self.tau, self.a_max, self.sigma, self.dt
        );
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Target angle and cruise speed for the servo; the only actuation input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorCommand {
    pub target_angle: f64,
    pub target_angular_velocity: f64,
}

impl MotorCommand {
    /// Hold at zero with the slowest admissible speed.
    pub const NEUTRAL: MotorCommand = MotorCommand {
        target_angle: 0.0,
        target_angular_velocity: SPEED_MIN,
    };

    pub fn new(target_angle: f64, target_angular_velocity: f64) -> Self {
        MotorCommand {
            target_angle,
            target_angular_velocity,
        }
    }

    /// Both fields inside their admissible intervals. The neutral command's
    /// speed sits on the closed lower bound and is accepted.
    pub fn is_valid(&self) -> bool {
        self.target_angle > -ANGLE_LIMIT
            && self.target_angle < ANGLE_LIMIT
            && self.target_angular_velocity >= SPEED_MIN
            && self.target_angular_velocity < SPEED_MAX
    }

    pub fn mirrored(&self) -> Self {
        MotorCommand {
            target_angle: -self.target_angle,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub theta_m: f64,
    pub omega_m: f64,
    pub theta_f: f64,
    pub omega_f: f64,
    pub command: MotorCommand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub fx: f64,
    pub fy: f64,
    pub t: f64,
}

/// Noise-free force split into its drag and added-mass contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceParts {
    pub drag: [f64; 2],
    pub added_mass: [f64; 2],
}

/// Stepping plant with its own noise stream.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    state: PlantState,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    steps: u64,
    last_parts: ForceParts,
}

impl Plant {
    pub fn new(params: PlantParams, seed: u64) -> Result<Self, PlantFault> {
        params.validate()?;
        Ok(Plant {
            params,
            state: plant_reset(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, params.sigma).expect("sigma validated"),
            steps: 0,
            last_parts: ForceParts {
                drag: [0.0; 2],
                added_mass: [0.0; 2],
            },
        })
    }

    /// Noise-free variant used by the physics checks.
    pub fn noiseless(params: PlantParams) -> Result<Self, PlantFault> {
        let mut p = Self::new(params, 0)?;
        p.noise = Normal::new(0.0, 0.0).unwrap();
        Ok(p)
    }

    pub fn reset(&mut self, seed: u64) {
        self.state = plant_reset();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn last_parts(&self) -> ForceParts {
        self.last_parts
    }

    pub fn step(&mut self, command: MotorCommand) -> Result<ForceSample, PlantFault> {
        if !command.is_valid() {
            return Err(PlantFault::Command {
                angle: command.target_angle,
                speed: command.target_angular_velocity,
            });
        }
        let (next, parts) = advance(&self.state, command, &self.params);
        if ![next.theta_m, next.omega_m, next.theta_f, next.omega_f]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(PlantFault::NonFinite(next));
        }
        self.state = next;
        self.last_parts = parts;
        self.steps += 1;
        let nx = self.noise.sample(&mut self.rng);
        let ny = self.noise.sample(&mut self.rng);
        Ok(ForceSample {
            fx: parts.drag[0] + parts.added_mass[0] + nx,
            fy: parts.drag[1] + parts.added_mass[1] + ny,
            t: self.steps as f64 * self.params.dt,
        })
    }
}

/// At rest at zero, holding the neutral command.
pub fn plant_reset() -> PlantState {
    PlantState {
        theta_m: 0.0,
        omega_m: 0.0,
        theta_f: 0.0,
        omega_f: 0.0,
        command: MotorCommand::NEUTRAL,
    }
}

/// Deterministic part of one plant step.
pub fn advance(s: &PlantState, command: MotorCommand, p: &PlantParams) -> (PlantState, ForceParts) {
    let dt = p.dt;
    let dv_max = p.a_max * dt;
    let target = command.target_angle;
    let dist = target - s.theta_m;
    // Speed that still allows stopping at the target under a_max.
    let v_stop = (2.0 * p.a_max * dist.abs()).sqrt();
    let v_des = dist.signum() * command.target_angular_velocity.min(v_stop);
    let mut omega_m = s.omega_m + (v_des - s.omega_m).clamp(-dv_max, dv_max);
    let mut theta_m = s.theta_m + omega_m * dt;
    // Moving toward the target and about to pass it: stop on it.
    if dist != 0.0 && (theta_m - target) * dist.signum() >= 0.0 && omega_m * dist.signum() > 0.0 {
        theta_m = target;
        omega_m = 0.0;
    }
    if dist == 0.0 && s.omega_m == 0.0 {
        omega_m = 0.0;
        theta_m = target;
    }

    let theta_f = s.theta_f + (dt / p.tau) * (theta_m - s.theta_f);
    let omega_f = (theta_f - s.theta_f) / dt;
    let alpha_f = (omega_f - s.omega_f) / dt;

    let (sin, cos) = theta_f.sin_cos();
    // F = −(drag + added mass)·n with n = (−sin θ_f, cos θ_f)
    let drag = p.c_n * (omega_f * omega_f.abs());
    let added = p.c_a * alpha_f;
    let parts = ForceParts {
        drag: [drag * sin, -(drag * cos)],
        added_mass: [added * sin, -(added * cos)],
    };
    (
        PlantState {
            theta_m,
            omega_m,
            theta_f,
            omega_f,
            command,
        },
        parts,
    )
}
