//! Controller parameter vectors and the 15-gene chromosome.

use serde::{Deserialize, Serialize};

/// Number of genes: six follower genes followed by nine leader genes.
pub const GENE_COUNT: usize = 15;
/// Index of the first leader gene.
pub const LEADER_OFFSET: usize = 6;

pub const GENE_NAMES: [&str; GENE_COUNT] = [
    "f_alpha_sep",
    "f_alpha_align",
    "f_alpha_coh",
    "f_r_sep",
    "f_r_align",
    "f_r_coh",
    "l_alpha_sep",
    "l_alpha_align",
    "l_alpha_coh",
    "l_r_sep",
    "l_r_align",
    "l_r_coh",
    "l_omega",
    "l_init_x",
    "l_init_y",
];

/// Reynolds gains and radii shared by every follower.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerParams {
    pub alpha_sep: f64,
    pub alpha_align: f64,
    pub alpha_coh: f64,
    pub r_sep: f64,
    pub r_align: f64,
    pub r_coh: f64,
}

impl FollowerParams {
    /// Checks gains are non-negative and radii lie in `(0, sensing_range]`.
    pub fn validate(&self, sensing_range: f64) -> Result<(), String> {
        for (name, g) in [
            ("alpha_sep", self.alpha_sep),
            ("alpha_align", self.alpha_align),
            ("alpha_coh", self.alpha_coh),
        ] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(format!("{name} must be a finite value >= 0, got {g}"));
            }
        }
        for (name, r) in [("r_sep", self.r_sep), ("r_align", self.r_align), ("r_coh", self.r_coh)] {
            if !(r > 0.0 && r <= sensing_range) {
                return Err(format!("{name} must lie in (0, {sensing_range}], got {r}"));
            }
        }
        Ok(())
    }
}

/// The leader's own flocking gains plus trajectory tracking and its initial
/// offset inside the formation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderParams {
    pub flocking: FollowerParams,
    pub omega: f64,
    pub init_x: f64,
    pub init_y: f64,
}

impl LeaderParams {
    pub fn validate(&self, sensing_range: f64) -> Result<(), String> {
        self.flocking.validate(sensing_range)?;
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(format!("omega must be a finite value >= 0, got {}", self.omega));
        }
        for (name, v) in [("init_x", self.init_x), ("init_y", self.init_y)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [-1, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// The GA search point: follower parameters concatenated with leader
/// parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chromosome {
    pub follower: FollowerParams,
    pub leader: LeaderParams,
}

impl Chromosome {
    pub fn genes(&self) -> [f64; GENE_COUNT] {
        let f = &self.follower;
        let l = &self.leader;
        [
            f.alpha_sep,
            f.alpha_align,
            f.alpha_coh,
            f.r_sep,
            f.r_align,
            f.r_coh,
            l.flocking.alpha_sep,
            l.flocking.alpha_align,
            l.flocking.alpha_coh,
            l.flocking.r_sep,
            l.flocking.r_align,
            l.flocking.r_coh,
            l.omega,
            l.init_x,
            l.init_y,
        ]
    }

    pub fn from_genes(g: &[f64; GENE_COUNT]) -> Self {
        Self {
            follower: FollowerParams {
                alpha_sep: g[0],
                alpha_align: g[1],
                alpha_coh: g[2],
                r_sep: g[3],
                r_align: g[4],
                r_coh: g[5],
            },
            leader: LeaderParams {
                flocking: FollowerParams {
                    alpha_sep: g[6],
                    alpha_align: g[7],
                    alpha_coh: g[8],
                    r_sep: g[9],
                    r_align: g[10],
                    r_coh: g[11],
                },
                omega: g[12],
                init_x: g[13],
                init_y: g[14],
            },
        }
    }

    pub fn validate(&self, sensing_range: f64) -> Result<(), String> {
        self.follower
            .validate(sensing_range)
            .map_err(|e| format!("follower: {e}"))?;
        self.leader
            .validate(sensing_range)
            .map_err(|e| format!("leader: {e}"))
    }

    /// Same chromosome with the leader's initial offset replaced.
    pub fn with_leader_offset(mut self, init_x: f64, init_y: f64) -> Self {
        self.leader.init_x = init_x;
        self.leader.init_y = init_y;
        self
    }

    /// Every gain zero: nobody moves.
    pub fn stationary() -> Self {
        let f = FollowerParams {
            alpha_sep: 0.0,
            alpha_align: 0.0,
            alpha_coh: 0.0,
            r_sep: 1.0,
            r_align: 1.0,
            r_coh: 1.0,
        };
        Self {
            follower: f,
            leader: LeaderParams { flocking: f, omega: 0.0, init_x: 0.0, init_y: 0.0 },
        }
    }

    /// Moderate hand-tuned flocking used to seed pre-training.
    pub fn hand_tuned() -> Self {
        Self {
            follower: FollowerParams {
                alpha_sep: 1.0,
                alpha_align: 1.0,
                alpha_coh: 0.4,
                r_sep: 2.5,
                r_align: 6.0,
                r_coh: 8.0,
            },
            leader: LeaderParams {
                flocking: FollowerParams {
                    alpha_sep: 1.0,
                    alpha_align: 0.3,
                    alpha_coh: 0.1,
                    r_sep: 2.5,
                    r_align: 6.0,
                    r_coh: 8.0,
                },
                omega: 0.8,
                init_x: 0.0,
                init_y: 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gene_roundtrip_and_order() {
        let c = Chromosome::hand_tuned().with_leader_offset(0.25, -0.5);
        let g = c.genes();
        assert_eq!(Chromosome::from_genes(&g), c);
        assert_eq!(g[LEADER_OFFSET], c.leader.flocking.alpha_sep);
        assert_eq!(g[12], 0.8);
        assert_eq!(g[13], 0.25);
        assert_eq!(g[14], -0.5);
    }

    #[test]
    fn validation() {
        let mut c = Chromosome::hand_tuned();
        assert!(c.validate(10.0).is_ok());
        assert!(c.validate(5.0).unwrap_err().contains("r_align"));
        c.leader.init_x = 1.5;
        assert!(c.validate(10.0).unwrap_err().starts_with("leader"));
        c = Chromosome::hand_tuned();
        c.follower.alpha_coh = -0.1;
        assert!(c.validate(10.0).unwrap_err().starts_with("follower"));
    }

    #[test]
    fn json_shape() {
        let c = Chromosome::hand_tuned();
        let v = serde_json::to_value(c).unwrap();
        assert_eq!(v["leader"]["omega"], 0.8);
        assert_eq!(v["leader"]["flocking"]["r_coh"], 8.0);
        let back: Chromosome = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }
}
