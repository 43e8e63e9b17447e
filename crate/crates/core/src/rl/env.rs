use super::RlError;
use crate::plant::{MotorCommand, Plant, PlantParams};
use crate::surrogate::{SurrogateModel, SurrogateSim};

/// What one 100 Hz tick reports back to the control loop.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TickSample {
    pub theta: f64,
    pub fx: f64,
    pub fy: f64,
}

/// Batch of independent 100 Hz force environments stepped in lockstep. The
/// control loop only ever sees this interface, whether the dynamics come
/// from the surrogate or the plant.
pub trait ForceEnv {
    fn num_envs(&self) -> usize;

    /// Returns env `e` to rest; `seed` drives any noise it has.
    fn reset(&mut self, e: usize, seed: u64);

    fn tick(&mut self, cmds: &[MotorCommand], out: &mut [TickSample]) -> Result<(), RlError>;
}

/// Learned dynamics, run in single precision for speed.
pub struct SurrogateEnv {
    sim: SurrogateSim<f32>,
    force: Vec<[f64; 2]>,
}

impl SurrogateEnv {
    pub fn new(model: &SurrogateModel, n: usize) -> Self {
        SurrogateEnv {
            sim: SurrogateSim::new(model, n),
            force: vec![[0.0; 2]; n],
        }
    }
}

impl ForceEnv for SurrogateEnv {
    fn num_envs(&self) -> usize {
        self.sim.num_envs()
    }

    fn reset(&mut self, e: usize, _seed: u64) {
        self.sim.reset(e);
    }

    fn tick(&mut self, cmds: &[MotorCommand], out: &mut [TickSample]) -> Result<(), RlError> {
        self.sim.tick(cmds, &mut self.force)?;
        for ((o, f), th) in out.iter_mut().zip(&self.force).zip(self.sim.theta()) {
            *o = TickSample {
                theta: *th,
                fx: f[0],
                fy: f[1],
            };
        }
        Ok(())
    }
}

/// Ground-truth plants, one per env.
pub struct PlantEnv {
    plants: Vec<Plant>,
}

impl PlantEnv {
    pub fn new(params: PlantParams, n: usize) -> Result<Self, RlError> {
        Ok(PlantEnv {
            plants: (0..n).map(|_| Plant::new(params, 0)).collect::<Result<_, _>>()?,
        })
    }
}

impl ForceEnv for PlantEnv {
    fn num_envs(&self) -> usize {
        self.plants.len()
    }

    fn reset(&mut self, e: usize, seed: u64) {
        self.plants[e].reset(seed);
    }

    fn tick(&mut self, cmds: &[MotorCommand], out: &mut [TickSample]) -> Result<(), RlError> {
        for ((p, c), o) in self.plants.iter_mut().zip(cmds).zip(out.iter_mut()) {
            let f = p.step(*c)?;
            *o = TickSample {
                theta: p.state().theta_m,
                fx: f.fx,
                fy: f.fy,
            };
        }
        Ok(())
    }
}

/// Instrumented stand-in: the angle jumps to the command, force is a fixed
/// function of the command, and every call is counted.
#[derive(Debug, Clone, Default)]
pub struct MockEnv {
    pub n: usize,
    pub ticks: usize,
    pub resets: usize,
    pub commands: Vec<MotorCommand>,
}

impl MockEnv {
    pub fn new(n: usize) -> Self {
        MockEnv {
            n,
            ..Default::default()
        }
    }
}

impl ForceEnv for MockEnv {
    fn num_envs(&self) -> usize {
        self.n
    }

    fn reset(&mut self, _e: usize, _seed: u64) {
        self.resets += 1;
    }

    fn tick(&mut self, cmds: &[MotorCommand], out: &mut [TickSample]) -> Result<(), RlError> {
        self.ticks += 1;
        self.commands.extend_from_slice(cmds);
        for (c, o) in cmds.iter().zip(out.iter_mut()) {
            *o = TickSample {
                theta: c.target_angle,
                fx: c.target_angular_velocity - 1.0,
                fy: c.target_angle.sin(),
            };
        }
        Ok(())
    }
}
