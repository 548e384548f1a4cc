//! Blockwise learning-rate decay.
//!
//! The top transformer block trains at `top_lr`; every block below it trains
//! at `decay` times the rate of the block above. Layers outside the blocks
//! follow the same chain: the patch embedding sits one decay step below
//! block 0, and the post-block layers and the classification head sit at
//! `top_lr`.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::arcface::ArcFaceHead;
use crate::encoder::{ParamId, VitEncoder};
use crate::error::{Error, Result};

pub const DEFAULT_TOP_LR: f64 = 2e-4;
pub const DEFAULT_DECAY: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLrSchedule {
    pub top_lr: f64,
    pub decay: f64,
    /// `rates[i]` is block `i`'s rate, bottom to top.
    pub rates: Vec<f64>,
    pub head_lr: f64,
}

impl BlockLrSchedule {
    pub fn new(num_blocks: usize, top_lr: f64, decay: f64) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("need at least one block".into()));
        }
        if !top_lr.is_finite() || top_lr <= 0.0 {
            return Err(Error::Config(format!("top learning rate must be positive, got {top_lr}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {decay}")));
        }
        let top = num_blocks - 1;
        let rates = (0..num_blocks)
            .map(|i| top_lr * decay.powi((top - i) as i32))
            .collect();
        Ok(Self { top_lr, decay, rates, head_lr: top_lr })
    }

    pub fn num_blocks(&self) -> usize {
        self.rates.len()
    }

    /// Rate for the layers below block 0.
    pub fn pre_block_lr(&self) -> f64 {
        self.rates[0] * self.decay
    }

    /// Rate for the layers above the top block.
    pub fn post_block_lr(&self) -> f64 {
        self.top_lr
    }

    /// `block_index,lr` table, one row per block, bottom to top.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_index,lr\n");
        for (i, r) in self.rates.iter().enumerate() {
            let _ = writeln!(out, "{i},{}", format_rate(*r));
        }
        out
    }
}

pub fn blockwise_lrs(num_blocks: usize, top_lr: f64, decay: f64) -> Result<BlockLrSchedule> {
    BlockLrSchedule::new(num_blocks, top_lr, decay)
}

/// Scientific notation with a two-digit exponent and at most twelve
/// significant digits, e.g. `9.8e-05`, `2.0e-04`.
pub fn format_rate(v: f64) -> String {
    let s = format!("{v:.11e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let mut mantissa = mantissa.trim_end_matches('0').to_string();
    if mantissa.ends_with('.') {
        mantissa.push('0');
    }
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// What a parameter slot refers to: an encoder tensor or the head's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Encoder(ParamId),
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    pub params: Vec<ParamRef>,
}

/// One group per block plus the pre-block, post-block and head groups,
/// ordered by depth from the input. Groups partition the trainable parameters.
pub fn build_param_groups(
    encoder: &VitEncoder,
    _head: &ArcFaceHead,
    schedule: &BlockLrSchedule,
) -> Result<Vec<ParamGroup>> {
    if schedule.num_blocks() != encoder.num_blocks() {
        return Err(Error::Config(format!(
            "schedule has {} blocks, encoder has {}",
            schedule.num_blocks(),
            encoder.num_blocks()
        )));
    }
    let enc = |ids: Vec<ParamId>| ids.into_iter().map(ParamRef::Encoder).collect::<Vec<_>>();
    let trainable: HashSet<ParamId> = encoder.trainable_params().into_iter().collect();

    let mut groups = vec![ParamGroup {
        name: "pre_blocks".into(),
        lr: schedule.pre_block_lr(),
        params: enc(encoder.pre_block_params()),
    }];
    for block in encoder.parameter_blocks() {
        let ids = block.params.into_iter().filter(|id| trainable.contains(id)).collect();
        groups.push(ParamGroup {
            name: format!("block.{}", block.block_index),
            lr: schedule.rates[block.block_index],
            params: enc(ids),
        });
    }
    groups.push(ParamGroup {
        name: "post_blocks".into(),
        lr: schedule.post_block_lr(),
        params: enc(encoder.post_block_params()),
    });
    groups.push(ParamGroup { name: "head".into(), lr: schedule.head_lr, params: vec![ParamRef::Head] });
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn three_blocks_match_hand_values() {
        let s = blockwise_lrs(3, 2e-4, 0.7).unwrap();
        let expected = [9.8e-5, 1.4e-4, 2.0e-4];
        for (r, e) in s.rates.iter().zip(expected) {
            assert!((r - e).abs() <= 1e-12 * e, "{r} vs {e}");
        }
        assert_eq!(s.head_lr, 2e-4);
    }

    #[test]
    fn single_block() {
        assert_eq!(blockwise_lrs(1, 2e-4, 0.7).unwrap().rates, vec![2e-4]);
    }

    #[test]
    fn common_rate_when_decay_is_one() {
        let s = blockwise_lrs(6, 1e-3, 1.0).unwrap();
        assert!(s.rates.iter().all(|r| *r == 1e-3));
        assert_eq!(s.pre_block_lr(), 1e-3);
    }

    #[test]
    fn invalid_inputs() {
        assert!(blockwise_lrs(0, 2e-4, 0.7).is_err());
        assert!(blockwise_lrs(3, 0.0, 0.7).is_err());
        assert!(blockwise_lrs(3, 2e-4, 0.0).is_err());
        assert!(blockwise_lrs(3, 2e-4, 1.5).is_err());
    }

    #[test]
    fn csv_table() {
        let csv = blockwise_lrs(3, 2e-4, 0.7).unwrap().to_csv();
        assert_eq!(csv, "block_index,lr\n0,9.8e-05\n1,1.4e-04\n2,2.0e-04\n");
    }

    #[test]
    fn rate_formatting() {
        assert_eq!(format_rate(2e-4), "2.0e-04");
        assert_eq!(format_rate(1.5), "1.5e+00");
        assert_eq!(format_rate(5.473_569_387_5e-8), "5.4735693875e-08");
    }

    #[test]
    fn seven_groups_for_four_blocks() {
        let enc = VitEncoder::new(EncoderConfig { num_blocks: 4, ..Default::default() }).unwrap();
        let head = ArcFaceHead::new(64, 3, 0.5, 64.0, 0).unwrap();
        let sched = blockwise_lrs(4, 2e-4, 0.7).unwrap();
        let groups = build_param_groups(&enc, &head, &sched).unwrap();
        assert_eq!(groups.len(), 7);

        let mut seen = HashSet::new();
        for g in &groups {
            for p in &g.params {
                assert!(seen.insert(*p));
            }
        }
        assert_eq!(seen.len(), enc.trainable_params().len() + 1);

        let rates: Vec<f64> = groups.iter().map(|g| g.lr).collect();
        assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
        assert!((rates[0] - 2e-4 * 0.7f64.powi(4)).abs() < 1e-18);
    }

    #[test]
    fn length_mismatch() {
        let enc = VitEncoder::new(EncoderConfig { num_blocks: 4, ..Default::default() }).unwrap();
        let head = ArcFaceHead::new(64, 3, 0.5, 64.0, 0).unwrap();
        let sched = blockwise_lrs(3, 2e-4, 0.7).unwrap();
        assert!(matches!(build_param_groups(&enc, &head, &sched), Err(Error::Config(_))));
    }
}
