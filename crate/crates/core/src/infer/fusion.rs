use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScoreBundle;
use crate::error::{Error, Result};

/// Per-channel fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub w_pc: f64,
    pub w_pc_text: f64,
    pub w_rgb: f64,
    pub w_rgb_text: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            w_pc: 1.0,
            w_pc_text: 1.0,
            w_rgb: 1.0,
            w_rgb_text: 1.0,
        }
    }
}

impl FusionWeights {
    pub fn new(w_pc: f64, w_pc_text: f64, w_rgb: f64, w_rgb_text: f64) -> Self {
        Self {
            w_pc,
            w_pc_text,
            w_rgb,
            w_rgb_text,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_pc, self.w_pc_text, self.w_rgb, self.w_rgb_text]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Argument(format!("fusion weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Argument("fusion weights are all zero".into()));
        }
        Ok(())
    }
}

/// `"w_pc,w_pc_text,w_rgb,w_rgb_text"`.
impl FromStr for FusionWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Argument(format!("fusion weights {s:?}: {e}")))?;
        let [a, b, c, d] = parts[..] else {
            return Err(Error::Argument(format!("fusion weights {s:?}: expected 4 comma-separated values")));
        };
        let w = Self::new(a, b, c, d);
        w.validate()?;
        Ok(w)
    }
}

/// Which of the four channels take part in fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMask {
    pub pc: bool,
    pub pc_text: bool,
    pub rgb: bool,
    pub rgb_text: bool,
}

impl ChannelMask {
    pub const ALL: Self = Self {
        pc: true,
        pc_text: true,
        rgb: true,
        rgb_text: true,
    };
    pub const PC: Self = Self {
        pc: true,
        pc_text: false,
        rgb: false,
        rgb_text: false,
    };
    pub const PC_TEXT: Self = Self {
        pc: false,
        pc_text: true,
        rgb: false,
        rgb_text: false,
    };

    pub fn as_array(&self) -> [bool; 4] {
        [self.pc, self.pc_text, self.rgb, self.rgb_text]
    }
}

const CHANNEL_NAMES: [&str; 4] = ["pc", "pc_text", "rgb", "rgb_text"];

/// Comma-separated channel names, e.g. `pc,pc_text`, or `all`.
impl FromStr for ChannelMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::ALL);
        }
        let mut on = [false; 4];
        for name in s.split(',').map(str::trim) {
            let i = CHANNEL_NAMES
                .iter()
                .position(|&n| n == name)
                .ok_or_else(|| Error::Argument(format!("unknown channel {name:?}; expected one of {CHANNEL_NAMES:?}")))?;
            on[i] = true;
        }
        Ok(Self {
            pc: on[0],
            pc_text: on[1],
            rgb: on[2],
            rgb_text: on[3],
        })
    }
}

impl fmt::Display for ChannelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = CHANNEL_NAMES
            .iter()
            .zip(self.as_array())
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        f.write_str(&names.join("+"))
    }
}

/// Channel combinations of the score-combination table, single channels
/// first and the full ensemble last.
pub const TABLE_MASKS: [ChannelMask; 6] = [
    ChannelMask::PC,
    ChannelMask::PC_TEXT,
    ChannelMask {
        pc: true,
        pc_text: true,
        rgb: false,
        rgb_text: false,
    },
    ChannelMask {
        pc: true,
        pc_text: false,
        rgb: true,
        rgb_text: false,
    },
    ChannelMask {
        pc: true,
        pc_text: true,
        rgb: true,
        rgb_text: false,
    },
    ChannelMask::ALL,
];

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `Σ w_c·v_c / Σ w_c` over the channels that are present, unmasked and
/// carry a positive weight, and its argmax (lowest index on ties).
pub fn fuse(bundle: &ScoreBundle, weights: &FusionWeights, mask: ChannelMask) -> Result<(Vec<f64>, usize)> {
    weights.validate()?;
    let channels = [
        Some(&bundle.pc),
        Some(&bundle.pc_text),
        bundle.rgb.as_ref(),
        bundle.rgb_text.as_ref(),
    ];
    let k = bundle.pc.len();
    let mut acc = vec![0.0; k];
    let mut total = 0.0;
    for ((v, w), on) in channels.into_iter().zip(weights.as_array()).zip(mask.as_array()) {
        let Some(v) = v else { continue };
        if !on || w == 0.0 {
            continue;
        }
        if v.len() != k {
            return Err(Error::Dimension(format!("channel of {} scores, expected {k}", v.len())));
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
        total += w;
    }
    if total == 0.0 {
        return Err(Error::Argument(format!(
            "no channel with positive weight among {mask} (weights {:?})",
            weights.as_array()
        )));
    }
    acc.iter_mut().for_each(|a| *a /= total);
    let pred = argmax(&acc);
    Ok((acc, pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ScoreBundle {
        ScoreBundle {
            pc: vec![0.6, 0.4],
            pc_text: vec![0.2, 0.8],
            rgb: Some(vec![0.7, 0.3]),
            rgb_text: Some(vec![0.55, 0.45]),
        }
    }

    #[test]
    fn hand_case() {
        let (v, c) = fuse(&bundle(), &FusionWeights::new(1.0, 1.0, 0.0, 0.0), ChannelMask::ALL).unwrap();
        assert!((v[0] - 0.4).abs() < 1e-15 && (v[1] - 0.6).abs() < 1e-15);
        assert_eq!(c, 1);
    }

    #[test]
    fn one_hot_is_exact() {
        let b = bundle();
        let chans = [b.pc.clone(), b.pc_text.clone(), b.rgb.clone().unwrap(), b.rgb_text.clone().unwrap()];
        for (i, want) in chans.iter().enumerate() {
            let mut w = [0.0; 4];
            w[i] = 1.0;
            let (v, _) = fuse(&b, &FusionWeights::new(w[0], w[1], w[2], w[3]), ChannelMask::ALL).unwrap();
            assert_eq!(&v, want);
        }
    }

    #[test]
    fn identical_channels_give_same_vector() {
        let v = vec![0.1, 0.7, 0.2];
        let b = ScoreBundle {
            pc: v.clone(),
            pc_text: v.clone(),
            rgb: Some(v.clone()),
            rgb_text: Some(v.clone()),
        };
        let (out, c) = fuse(&b, &FusionWeights::new(0.3, 2.0, 0.5, 1.0), ChannelMask::ALL).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(c, 1);
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(fuse(&bundle(), &FusionWeights::new(0.0, 0.0, 0.0, 0.0), ChannelMask::ALL).is_err());
        // weights only on masked-out channels
        assert!(fuse(&bundle(), &FusionWeights::new(0.0, 1.0, 0.0, 0.0), ChannelMask::PC).is_err());
    }

    #[test]
    fn missing_channels_are_skipped() {
        let mut b = bundle();
        b.rgb = None;
        b.rgb_text = None;
        let (v, _) = fuse(&b, &FusionWeights::default(), ChannelMask::ALL).unwrap();
        assert!((v[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let b = ScoreBundle {
            pc: vec![0.5, 0.5],
            pc_text: vec![0.5, 0.5],
            rgb: None,
            rgb_text: None,
        };
        assert_eq!(fuse(&b, &FusionWeights::default(), ChannelMask::ALL).unwrap().1, 0);
    }

    #[test]
    fn parse_weights_and_masks() {
        let w: FusionWeights = "1,0,0.5,2".parse().unwrap();
        assert_eq!(w.as_array(), [1.0, 0.0, 0.5, 2.0]);
        assert!("1,0".parse::<FusionWeights>().is_err());
        assert!("0,0,0,0".parse::<FusionWeights>().is_err());
        let m: ChannelMask = "pc, rgb".parse().unwrap();
        assert_eq!(m.as_array(), [true, false, true, false]);
        assert_eq!(m.to_string(), "pc+rgb");
        assert_eq!("all".parse::<ChannelMask>().unwrap(), ChannelMask::ALL);
        assert!("depth".parse::<ChannelMask>().is_err());
    }
}
