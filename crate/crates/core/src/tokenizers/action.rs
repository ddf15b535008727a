use std::f64::consts::PI;

use super::vocab::{ActionDim, Special, TokenKind, VocabLayout};
use super::TokenizerError;
use crate::worldsim::{Action, Pose};

/// Bin width for every action dimension.
pub const BIN_SIZE: f64 = 0.01;

// absorbs representation error so that 0.03 lands in bin 3, not 2
const FLOOR_SLACK: f64 = 1e-7;

pub fn bin_index(v: f64, bins: usize) -> Result<(bool, usize), TokenizerError> {
    if !v.is_finite() {
        return Err(TokenizerError::ActionOutOfRange(v));
    }
    let idx = (v.abs() / BIN_SIZE + FLOOR_SLACK).floor();
    if idx >= bins as f64 {
        return Err(TokenizerError::ActionOutOfRange(v));
    }
    Ok((v.is_sign_negative(), idx as usize))
}

pub fn encode_action(layout: &VocabLayout, a: &Action) -> Result<Vec<u32>, TokenizerError> {
    let Some((dx, dy, dyaw)) = a.components() else {
        return Ok(vec![Special::Stop.id()]);
    };
    ActionDim::ALL
        .iter()
        .zip([dx, dy, dyaw])
        .map(|(&dim, v)| {
            let (neg, idx) = bin_index(v, layout.action_bins)?;
            Ok(layout.action_token(dim, neg, idx))
        })
        .collect()
}

pub fn decode_action(layout: &VocabLayout, tokens: &[u32]) -> Result<Action, TokenizerError> {
    if tokens == [Special::Stop.id()] {
        return Ok(Action::Stop);
    }
    if tokens.len() != 3 {
        return Err(TokenizerError::MalformedAction(format!("expected 3 tokens, got {}", tokens.len())));
    }
    let mut vals = [0.0; 3];
    for (k, (&t, want)) in tokens.iter().zip(ActionDim::ALL).enumerate() {
        match layout.kind(t)? {
            TokenKind::Action { dim, negative, bin } if dim == want => {
                // dividing keeps k/100 exact where k*0.01 would not be
                let mag = bin as f64 / (1.0 / BIN_SIZE).round();
                vals[k] = if negative { -mag } else { mag };
            }
            _ => {
                return Err(TokenizerError::MalformedAction(format!(
                    "position {k} holds {}, expected a {want:?} bin",
                    layout.token_name(t)
                )))
            }
        }
    }
    Ok(Action::Move {
        dx: vals[0],
        dy: vals[1],
        dyaw: vals[2],
    })
}

/// Physical extent of the map in meters (cells are 1 m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapExtent {
    pub width: f64,
    pub height: f64,
}

pub fn pose_bins_of(pose: &Pose, extent: MapExtent, bins: usize) -> Result<[usize; 3], TokenizerError> {
    let inside = |v: f64, hi: f64| (0.0..=hi).contains(&v);
    if !inside(pose.x, extent.width) || !inside(pose.y, extent.height) {
        return Err(TokenizerError::PoseOutOfExtent { x: pose.x, y: pose.y });
    }
    let q = |u: f64| ((u * bins as f64).floor() as usize).min(bins - 1);
    Ok([
        q(pose.x / extent.width),
        q(pose.y / extent.height),
        q((pose.yaw + PI) / (2.0 * PI)),
    ])
}

pub fn encode_pose(layout: &VocabLayout, pose: &Pose, extent: MapExtent) -> Result<[u32; 3], TokenizerError> {
    let b = pose_bins_of(pose, extent, layout.pose_bins)?;
    Ok([
        layout.pose_token(0, b[0]),
        layout.pose_token(1, b[1]),
        layout.pose_token(2, b[2]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> VocabLayout {
        VocabLayout::new(64, 16)
    }

    fn mv(dx: f64, dy: f64, dyaw: f64) -> Action {
        Action::Move { dx, dy, dyaw }
    }

    #[test]
    fn named_examples() {
        let l = v();
        let t = encode_action(&l, &mv(0.03, -0.23, 0.0)).unwrap();
        assert_eq!(l.token_name(t[0]), "<dx_pos_bin_03>");
        assert_eq!(l.token_name(t[1]), "<dy_neg_bin_23>");
        let t = encode_action(&l, &mv(0.057, 0.0, 0.0)).unwrap();
        assert_eq!(l.token_name(t[0]), "<dx_pos_bin_05>");
        assert_eq!(l.token_name(t[1]), "<dy_pos_bin_00>");
        // negative zero keeps its sign so every bin token round trips
        let t = encode_action(&l, &mv(0.0, -0.004, -0.0)).unwrap();
        assert_eq!(l.token_name(t[1]), "<dy_neg_bin_00>");
        assert_eq!(l.token_name(t[2]), "<dyaw_neg_bin_00>");
        assert_eq!(encode_action(&l, &decode_action(&l, &t).unwrap()).unwrap(), t);
    }

    #[test]
    fn legend_decodes() {
        let l = v();
        let toks = [
            l.action_token(ActionDim::X, false, 2),
            l.action_token(ActionDim::Y, true, 23),
            l.action_token(ActionDim::Yaw, false, 26),
        ];
        let Action::Move { dx, dy, dyaw } = decode_action(&l, &toks).unwrap() else { panic!() };
        assert!((dx - 0.02).abs() < 1e-12 && (dy + 0.23).abs() < 1e-12 && (dyaw - 0.26).abs() < 1e-12);
        assert_eq!(decode_action(&l, &[Special::Stop.id()]).unwrap(), Action::Stop);
        assert_eq!(encode_action(&l, &Action::Stop).unwrap(), vec![Special::Stop.id()]);
    }

    #[test]
    fn wrong_order_rejected() {
        let l = v();
        let toks = [
            l.action_token(ActionDim::Y, false, 2),
            l.action_token(ActionDim::X, true, 23),
            l.action_token(ActionDim::Yaw, false, 26),
        ];
        assert!(matches!(decode_action(&l, &toks), Err(TokenizerError::MalformedAction(_))));
        assert!(decode_action(&l, &toks[..2]).is_err());
    }

    #[test]
    fn out_of_range_component() {
        assert!(matches!(
            encode_action(&v(), &mv(1.2, 0.0, 0.0)),
            Err(TokenizerError::ActionOutOfRange(_))
        ));
    }

    #[test]
    fn pose_quantization() {
        let l = v();
        let e = MapExtent { width: 16.0, height: 16.0 };
        let corner = Pose { x: 0.0, y: 0.0, yaw: -PI + 1e-9 };
        assert_eq!(pose_bins_of(&corner, e, 64).unwrap(), [0, 0, 0]);
        let mid = Pose { x: 8.0, y: 8.0, yaw: 1e-9 };
        assert_eq!(pose_bins_of(&mid, e, 64).unwrap(), [32, 32, 32]);
        let a = Pose { x: 8.01, y: 8.02, yaw: 0.01 };
        assert_eq!(encode_pose(&l, &mid, e).unwrap(), encode_pose(&l, &a, e).unwrap());
        let out = Pose { x: 17.0, y: 1.0, yaw: 0.0 };
        assert!(encode_pose(&l, &out, e).is_err());
        let top = Pose { x: 16.0, y: 16.0, yaw: PI };
        assert_eq!(pose_bins_of(&top, e, 64).unwrap(), [63, 63, 63]);
    }
}
