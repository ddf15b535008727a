use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TokenizerError;

/// Structural tokens, ids `0..Special::COUNT` in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Special {
    Bos = 0,
    Eos,
    TaskPlan,
    TaskWorld,
    Stop,
    Boss,
    Eoss,
    PoseMark,
    ActMark,
    StartMark,
    GoalMark,
    /// Prefixes each extra history frame.
    CurMark,
    /// Separates the action from the predicted frame in world samples.
    NextMark,
}

impl Special {
    pub const COUNT: usize = 13;
    pub const ALL: [Special; Self::COUNT] = [
        Special::Bos,
        Special::Eos,
        Special::TaskPlan,
        Special::TaskWorld,
        Special::Stop,
        Special::Boss,
        Special::Eoss,
        Special::PoseMark,
        Special::ActMark,
        Special::StartMark,
        Special::GoalMark,
        Special::CurMark,
        Special::NextMark,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn name(self) -> &'static str {
        match self {
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::TaskPlan => "<task_plan>",
            Special::TaskWorld => "<task_world>",
            Special::Stop => "<stop>",
            Special::Boss => "<boss>",
            Special::Eoss => "<eoss>",
            Special::PoseMark => "<pose>",
            Special::ActMark => "<act>",
            Special::StartMark => "<start>",
            Special::GoalMark => "<goal>",
            Special::CurMark => "<cur>",
            Special::NextMark => "<next>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionDim {
    X,
    Y,
    Yaw,
}

impl ActionDim {
    pub const ALL: [ActionDim; 3] = [ActionDim::X, ActionDim::Y, ActionDim::Yaw];

    fn prefix(self) -> &'static str {
        match self {
            ActionDim::X => "dx",
            ActionDim::Y => "dy",
            ActionDim::Yaw => "dyaw",
        }
    }
}

/// Partition membership of a token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Special(Special),
    Pose { dim: usize, bin: usize },
    Action { dim: ActionDim, negative: bool, bin: usize },
    Image(usize),
}

/// Contiguous id ranges: specials, pose bins (3 dims), the three action
/// sets, then image codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabLayout {
    pub pose_bins: usize,
    /// Bins per sign per action dimension.
    pub action_bins: usize,
    pub n_image: usize,
}

impl VocabLayout {
    pub fn new(pose_bins: usize, n_image: usize) -> Self {
        Self {
            pose_bins,
            action_bins: 100,
            n_image,
        }
    }

    pub fn pose_base(&self) -> u32 {
        Special::COUNT as u32
    }

    pub fn action_base(&self, dim: ActionDim) -> u32 {
        let start = self.pose_base() + 3 * self.pose_bins as u32;
        let per = 2 * self.action_bins as u32;
        start
            + per
                * match dim {
                    ActionDim::X => 0,
                    ActionDim::Y => 1,
                    ActionDim::Yaw => 2,
                }
    }

    pub fn action_range(&self, dim: ActionDim) -> Range<u32> {
        let b = self.action_base(dim);
        b..b + 2 * self.action_bins as u32
    }

    pub fn image_base(&self) -> u32 {
        self.action_range(ActionDim::Yaw).end
    }

    pub fn image_range(&self) -> Range<u32> {
        self.image_base()..self.image_base() + self.n_image as u32
    }

    pub fn vocab_size(&self) -> usize {
        self.image_range().end as usize
    }

    pub fn pose_token(&self, dim: usize, bin: usize) -> u32 {
        debug_assert!(dim < 3 && bin < self.pose_bins);
        self.pose_base() + (dim * self.pose_bins + bin) as u32
    }

    pub fn action_token(&self, dim: ActionDim, negative: bool, bin: usize) -> u32 {
        debug_assert!(bin < self.action_bins);
        self.action_base(dim) + (usize::from(negative) * self.action_bins + bin) as u32
    }

    pub fn image_token(&self, code: u32) -> u32 {
        debug_assert!((code as usize) < self.n_image);
        self.image_base() + code
    }

    pub fn image_code(&self, id: u32) -> Result<u32, TokenizerError> {
        if self.image_range().contains(&id) {
            Ok(id - self.image_base())
        } else {
            Err(TokenizerError::OutOfRange { id, what: "image" })
        }
    }

    pub fn kind(&self, id: u32) -> Result<TokenKind, TokenizerError> {
        let idu = id as usize;
        if idu < Special::COUNT {
            return Ok(TokenKind::Special(Special::ALL[idu]));
        }
        let p = id - self.pose_base();
        if (p as usize) < 3 * self.pose_bins {
            return Ok(TokenKind::Pose {
                dim: p as usize / self.pose_bins,
                bin: p as usize % self.pose_bins,
            });
        }
        for dim in ActionDim::ALL {
            let r = self.action_range(dim);
            if r.contains(&id) {
                let off = (id - r.start) as usize;
                return Ok(TokenKind::Action {
                    dim,
                    negative: off >= self.action_bins,
                    bin: off % self.action_bins,
                });
            }
        }
        if self.image_range().contains(&id) {
            return Ok(TokenKind::Image((id - self.image_base()) as usize));
        }
        Err(TokenizerError::OutOfRange { id, what: "vocabulary" })
    }

    pub fn token_name(&self, id: u32) -> String {
        match self.kind(id) {
            Ok(TokenKind::Special(s)) => s.name().to_string(),
            Ok(TokenKind::Pose { dim, bin }) => format!("<pose{}_{bin:02}>", ["x", "y", "yaw"][dim]),
            Ok(TokenKind::Action { dim, negative, bin }) => {
                format!("<{}_{}_bin_{bin:02}>", dim.prefix(), if negative { "neg" } else { "pos" })
            }
            Ok(TokenKind::Image(c)) => format!("<img_{c}>"),
            Err(_) => format!("<unk_{id}>"),
        }
    }
}
