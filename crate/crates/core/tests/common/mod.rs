//! Checks shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softfin::plant::{MotorCommand, Plant, PlantParams, ANGLE_LIMIT, SPEED_MAX, SPEED_MIN};

/// Random admissible commands, each held for 10–60 ticks.
pub fn command_stream(seed: u64, ticks: usize) -> Vec<MotorCommand> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ticks);
    while out.len() < ticks {
        let c = MotorCommand::new(
            rng.random_range(-0.95 * ANGLE_LIMIT..0.95 * ANGLE_LIMIT),
            rng.random_range(SPEED_MIN..SPEED_MAX),
        );
        let hold = rng.random_range(10..60);
        out.extend(std::iter::repeat_n(c, hold));
    }
    out.truncate(ticks);
    out
}

/// Neutral command held from rest: mean force per axis against 3σ/√N.
pub fn zero_motion(params: PlantParams, seed: u64, n: usize) -> Result<String, String> {
    let mut p = Plant::new(params, seed).map_err(|e| e.to_string())?;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let f = p.step(MotorCommand::NEUTRAL).map_err(|e| e.to_string())?;
        sum[0] += f.fx;
        sum[1] += f.fy;
    }
    let mean = [sum[0] / n as f64, sum[1] / n as f64];
    let bound = 3.0 * params.sigma / (n as f64).sqrt();
    let msg = format!("mean force ({:.2e}, {:.2e}), bound {bound:.2e}", mean[0], mean[1]);
    if mean[0].abs() <= bound && mean[1].abs() <= bound {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Noise-free runs of a command stream and of its mirror: the angle is
/// negated, F_x repeats and F_y is negated, bit for bit.
pub fn mirror(params: PlantParams, seed: u64, ticks: usize) -> Result<String, String> {
    let cmds = command_stream(seed, ticks);
    let mut a = Plant::noiseless(params).map_err(|e| e.to_string())?;
    let mut b = Plant::noiseless(params).map_err(|e| e.to_string())?;
    let mut max_fx = 0.0f64;
    for (k, c) in cmds.iter().enumerate() {
        let fa = a.step(*c).map_err(|e| e.to_string())?;
        let fb = b.step(c.mirrored()).map_err(|e| e.to_string())?;
        max_fx = max_fx.max(fa.fx.abs());
        if b.state().theta_m != -a.state().theta_m || b.state().theta_f != -a.state().theta_f {
            return Err(format!("tick {k}: angle not mirrored"));
        }
        if fb.fx != fa.fx || fb.fy != -fa.fy {
            return Err(format!("tick {k}: force ({}, {}) vs mirrored ({}, {})", fa.fx, fa.fy, fb.fx, fb.fy));
        }
    }
    Ok(format!("{ticks} ticks exact, max |F_x| {max_fx:.2}"))
}

/// Noise-free: doubling c_n doubles the drag part of every sample exactly
/// and leaves kinematics and added mass untouched.
pub fn cn_doubling(params: PlantParams, seed: u64, ticks: usize) -> Result<String, String> {
    let cmds = command_stream(seed, ticks);
    let doubled = PlantParams {
        c_n: 2.0 * params.c_n,
        ..params
    };
    let mut a = Plant::noiseless(params).map_err(|e| e.to_string())?;
    let mut b = Plant::noiseless(doubled).map_err(|e| e.to_string())?;
    for (k, c) in cmds.iter().enumerate() {
        a.step(*c).map_err(|e| e.to_string())?;
        b.step(*c).map_err(|e| e.to_string())?;
        let (pa, pb) = (a.last_parts(), b.last_parts());
        if a.state() != b.state() || pa.added_mass != pb.added_mass {
            return Err(format!("tick {k}: kinematics changed with c_n"));
        }
        if pb.drag != [2.0 * pa.drag[0], 2.0 * pa.drag[1]] {
            return Err(format!("tick {k}: drag {:?} vs {:?}", pa.drag, pb.drag));
        }
    }
    Ok(format!("{ticks} ticks exact"))
}
