//! Messages exchanged between agents during a relative update.
//!
//! The belief payload is serialization-format agnostic: [`BeliefPayload::to_flat`]
//! gives the canonical field order as a flat `f64` sequence, and the serde
//! derive gives the same order for any self-describing format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat15, Mat3, Vec15, Vec3};
use crate::nav::{NavState, RobotId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavPayload {
    /// Body→nav rotation, row-major.
    pub c: [f64; 9],
    pub v: [f64; 3],
    pub r: [f64; 3],
}

impl NavPayload {
    pub fn from_state(s: &NavState) -> Self {
        let mut c = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                c[3 * i + j] = s.c_bn[(i, j)];
            }
        }
        Self {
            c,
            v: s.v.into(),
            r: s.r.into(),
        }
    }

    pub fn to_state(&self, t: f64) -> NavState {
        NavState::new(
            Mat3::from_row_slice(&self.c),
            Vec3::from(self.v),
            Vec3::from(self.r),
            t,
        )
    }
}

/// Reply from a detected robot: everything the detector needs to couple.
///
/// Field order: `sender_id, timestamp, x_err[15], P[225] row-major,
/// sigma_toward_sender[225] row-major, nav_state{C[9], v[3], r[3]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefPayload {
    pub sender_id: RobotId,
    pub timestamp: f64,
    pub x_err: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma_toward_sender: Vec<f64>,
    pub nav_state: NavPayload,
}

/// Number of scalars in [`BeliefPayload::to_flat`].
pub const BELIEF_FLAT_LEN: usize = 2 + 15 + 225 + 225 + 9 + 3 + 3;

pub(crate) fn mat_to_row_major(m: &Mat15) -> Vec<f64> {
    let mut out = Vec::with_capacity(225);
    for i in 0..15 {
        for j in 0..15 {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn mat_from_row_major(v: &[f64], field: &str) -> Result<Mat15> {
    if v.len() != 225 {
        return Err(Error::config(field, format!("expected 225 values, got {}", v.len())));
    }
    Ok(Mat15::from_row_slice(v))
}

fn vec15(v: &[f64], field: &str) -> Result<Vec15> {
    if v.len() != 15 {
        return Err(Error::config(field, format!("expected 15 values, got {}", v.len())));
    }
    Ok(Vec15::from_row_slice(v))
}

impl BeliefPayload {
    pub fn new(
        sender_id: RobotId,
        timestamp: f64,
        x_err: &Vec15,
        p: &Mat15,
        sigma_toward_sender: &Mat15,
        nav: &NavState,
    ) -> Self {
        Self {
            sender_id,
            timestamp,
            x_err: x_err.iter().copied().collect(),
            p: mat_to_row_major(p),
            sigma_toward_sender: mat_to_row_major(sigma_toward_sender),
            nav_state: NavPayload::from_state(nav),
        }
    }

    pub fn x_err(&self) -> Result<Vec15> {
        vec15(&self.x_err, "x_err")
    }
    pub fn p(&self) -> Result<Mat15> {
        mat_from_row_major(&self.p, "P")
    }
    pub fn sigma(&self) -> Result<Mat15> {
        mat_from_row_major(&self.sigma_toward_sender, "sigma_toward_sender")
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(BELIEF_FLAT_LEN);
        out.push(self.sender_id as f64);
        out.push(self.timestamp);
        out.extend_from_slice(&self.x_err);
        out.extend_from_slice(&self.p);
        out.extend_from_slice(&self.sigma_toward_sender);
        out.extend_from_slice(&self.nav_state.c);
        out.extend_from_slice(&self.nav_state.v);
        out.extend_from_slice(&self.nav_state.r);
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != BELIEF_FLAT_LEN {
            return Err(Error::config(
                "belief_payload",
                format!("expected {BELIEF_FLAT_LEN} values, got {}", v.len()),
            ));
        }
        let sender = v[0];
        if sender < 0.0 || sender.fract() != 0.0 {
            return Err(Error::config("sender_id", "not a non-negative integer"));
        }
        let mut at = 2;
        let mut take = |n: usize| {
            let s = &v[at..at + n];
            at += n;
            s.to_vec()
        };
        let x_err = take(15);
        let p = take(225);
        let sigma = take(225);
        let c = take(9);
        let vel = take(3);
        let r = take(3);
        Ok(Self {
            sender_id: sender as RobotId,
            timestamp: v[1],
            x_err,
            p,
            sigma_toward_sender: sigma,
            nav_state: NavPayload {
                c: c.try_into().expect("9 values"),
                v: vel.try_into().expect("3 values"),
                r: r.try_into().expect("3 values"),
            },
        })
    }
}

/// Posterior sent back by the detecting robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPayload {
    pub sender_id: RobotId,
    pub timestamp: f64,
    pub x_err: Vec<f64>,
    pub p: Vec<f64>,
    /// The receiver's new factor toward the sender.
    pub sigma_toward_sender: Vec<f64>,
    pub innovation: f64,
}

impl PosteriorPayload {
    pub fn x_err(&self) -> Result<Vec15> {
        vec15(&self.x_err, "x_err")
    }
    pub fn p(&self) -> Result<Mat15> {
        mat_from_row_major(&self.p, "P")
    }
    pub fn sigma(&self) -> Result<Mat15> {
        mat_from_row_major(&self.sigma_toward_sender, "sigma_toward_sender")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rot_z;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn flat_round_trip(seed in any::<u64>(), id in 0u32..1000, t in 0.0f64..1e4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Vec15::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = Mat15::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let s = Mat15::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let nav = NavState::new(rot_z(rng.random_range(-3.0..3.0)), Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0), t);
            let msg = BeliefPayload::new(id, t, &x, &p, &s, &nav);
            let flat = msg.to_flat();
            prop_assert_eq!(flat.len(), BELIEF_FLAT_LEN);
            let back = BeliefPayload::from_flat(&flat).unwrap();
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(back.p().unwrap(), p);
            prop_assert_eq!(back.nav_state.to_state(t).c_bn, nav.c_bn);
        }
    }

    #[test]
    fn field_order_is_fixed() {
        let mut p = Mat15::zeros();
        p[(0, 1)] = 7.0;
        let msg = BeliefPayload::new(3, 1.5, &Vec15::repeat(0.5), &p, &Mat15::identity(), &NavState::at_rest(Vec3::new(4.0, 5.0, 6.0), 0.0, 1.5));
        let flat = msg.to_flat();
        assert_eq!(&flat[..2], &[3.0, 1.5]);
        assert_eq!(flat[2], 0.5);
        // P row-major: element (0,1) right after (0,0).
        assert_eq!(flat[17 + 1], 7.0);
        assert_eq!(&flat[BELIEF_FLAT_LEN - 3..], &[4.0, 5.0, 6.0]);
        let json = serde_json::to_string(&msg).unwrap();
        let i_sender = json.find("sender_id").unwrap();
        let i_nav = json.find("nav_state").unwrap();
        assert!(i_sender < i_nav);
        assert!(BeliefPayload::from_flat(&flat[1..]).is_err());
    }
}
