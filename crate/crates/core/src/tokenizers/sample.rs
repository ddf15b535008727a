use serde::{Deserialize, Serialize};

use super::action::encode_action;
use super::vocab::{Special, VocabLayout};
use super::TokenizerError;
use crate::worldsim::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    WorldModel,
    /// Action and next frame predicted jointly from the planner prompt.
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSample {
    pub tokens: Vec<u32>,
    pub target_mask: Vec<bool>,
    pub role: Role,
    /// Half-open range of the current-observation tokens inside BOSS/EOSS.
    pub obs_span: (usize, usize),
}

impl TokenSample {
    pub fn target_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.target_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn target_len(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }
}

/// Conditioning shared by both substeps. Image slices hold codebook
/// indices; `history` lists older frames, oldest first.
#[derive(Debug, Clone, Copy)]
pub struct PromptParts<'a> {
    pub pose: [u32; 3],
    pub start: &'a [u32],
    pub goal: &'a [u32],
    pub history: &'a [Vec<u32>],
    pub current: &'a [u32],
}

/// Token sequence that ends right after the action marker.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    pub obs_span: (usize, usize),
}

fn push_image(out: &mut Vec<u32>, layout: &VocabLayout, codes: &[u32]) -> Result<(), TokenizerError> {
    for &c in codes {
        if c as usize >= layout.n_image {
            return Err(TokenizerError::OutOfRange { id: c, what: "codebook" });
        }
        out.push(layout.image_token(c));
    }
    Ok(())
}

pub fn build_prompt(layout: &VocabLayout, parts: &PromptParts, task: Special) -> Result<Prompt, TokenizerError> {
    let n_img = parts.current.len();
    if parts.start.len() != n_img || parts.goal.len() != n_img || parts.history.iter().any(|h| h.len() != n_img) {
        return Err(TokenizerError::Dimension("prompt frames differ in token count".into()));
    }
    let mut t = Vec::with_capacity(8 + (3 + parts.history.len()) * (n_img + 1));
    t.extend([Special::Bos.id(), task.id(), Special::PoseMark.id()]);
    t.extend(parts.pose);
    t.push(Special::StartMark.id());
    push_image(&mut t, layout, parts.start)?;
    t.push(Special::GoalMark.id());
    push_image(&mut t, layout, parts.goal)?;
    for h in parts.history {
        t.push(Special::CurMark.id());
        push_image(&mut t, layout, h)?;
    }
    t.push(Special::Boss.id());
    let begin = t.len();
    push_image(&mut t, layout, parts.current)?;
    let obs_span = (begin, t.len());
    t.extend([Special::Eoss.id(), Special::ActMark.id()]);
    Ok(Prompt { tokens: t, obs_span })
}

/// Planner prompt extended with the conditioning action and the next-frame
/// marker; decoding continues with image tokens.
pub fn build_world_prompt(layout: &VocabLayout, parts: &PromptParts, action: &Action) -> Result<Prompt, TokenizerError> {
    if action.is_stop() {
        return Err(TokenizerError::StopAsInput);
    }
    let mut p = build_prompt(layout, parts, Special::TaskWorld)?;
    p.tokens.extend(encode_action(layout, action)?);
    p.tokens.push(Special::NextMark.id());
    Ok(p)
}

fn finish(prompt: Prompt, target: Vec<u32>, role: Role, context_len: usize) -> Result<TokenSample, TokenizerError> {
    let mut tokens = prompt.tokens;
    let split = tokens.len();
    tokens.extend(target);
    tokens.push(Special::Eos.id());
    if tokens.len() > context_len {
        return Err(TokenizerError::ContextOverflow {
            len: tokens.len(),
            max: context_len,
        });
    }
    let end = tokens.len() - 1;
    let target_mask = (0..tokens.len()).map(|i| i >= split && i < end).collect();
    Ok(TokenSample {
        tokens,
        target_mask,
        role,
        obs_span: prompt.obs_span,
    })
}

pub fn build_planner_sample(
    layout: &VocabLayout,
    parts: &PromptParts,
    target: &Action,
    context_len: usize,
) -> Result<TokenSample, TokenizerError> {
    let prompt = build_prompt(layout, parts, Special::TaskPlan)?;
    finish(prompt, encode_action(layout, target)?, Role::Planner, context_len)
}

pub fn build_world_sample(
    layout: &VocabLayout,
    parts: &PromptParts,
    action: &Action,
    next: &[u32],
    context_len: usize,
) -> Result<TokenSample, TokenizerError> {
    if next.len() != parts.current.len() {
        return Err(TokenizerError::Dimension("target frame token count".into()));
    }
    let prompt = build_world_prompt(layout, parts, action)?;
    let mut target = Vec::with_capacity(next.len());
    push_image(&mut target, layout, next)?;
    finish(prompt, target, Role::WorldModel, context_len)
}

/// Joint target: three action tokens then the next frame, or a lone STOP.
pub fn build_both_sample(
    layout: &VocabLayout,
    parts: &PromptParts,
    action: &Action,
    next: Option<&[u32]>,
    context_len: usize,
) -> Result<TokenSample, TokenizerError> {
    let prompt = build_prompt(layout, parts, Special::TaskPlan)?;
    let mut target = encode_action(layout, action)?;
    match (action.is_stop(), next) {
        (true, _) => {}
        (false, Some(n)) if n.len() == parts.current.len() => push_image(&mut target, layout, n)?,
        (false, _) => return Err(TokenizerError::Dimension("joint sample needs the next frame".into())),
    }
    finish(prompt, target, Role::Both, context_len)
}
