//! Word tokens for trajectories and the language-modelling loss.
//!
//! Each waypoint renders as `x,y;` with both coordinates in fixed point with
//! two fractional digits. Every character is one token.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token vocabulary; a token id is an index into this table.
pub const VOCAB: [char; 14] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '-', '.', ',', ';'];
pub const MAX_COORDINATE: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("waypoint {waypoint}: non-finite coordinate")]
    NonFinite { waypoint: usize },
    #[error("waypoint {waypoint}: coordinate {value} outside +-{MAX_COORDINATE}")]
    OutOfRange { waypoint: usize, value: f64 },
    #[error("parse error at waypoint {waypoint} (token {position}): {message}")]
    Parse {
        waypoint: usize,
        position: usize,
        message: String,
    },
    #[error("character {0:?} is not in the vocabulary")]
    UnknownCharacter(char),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{targets} target tokens but {distributions} distributions")]
    LengthMismatch { targets: usize, distributions: usize },
    #[error("distribution {position} sums to {sum}, not 1")]
    NotNormalized { position: usize, sum: f64 },
    #[error("target token {token} at position {position} is outside a vocabulary of {vocab}")]
    OutOfVocabulary { position: usize, token: usize, vocab: usize },
    #[error("infinite loss: target token at position {position} has probability 0")]
    InfiniteLoss { position: usize },
    #[error("empty target sequence")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u8>);

impl TokenSequence {
    pub fn from_text(text: &str) -> Result<Self, TokenError> {
        text.chars()
            .map(|c| {
                VOCAB
                    .iter()
                    .position(|v| *v == c)
                    .map(|i| i as u8)
                    .ok_or(TokenError::UnknownCharacter(c))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|&t| t as usize).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &t in &self.0 {
            write!(f, "{}", VOCAB[t as usize])?;
        }
        Ok(())
    }
}

fn render(q: i64, out: &mut String) {
    if q < 0 {
        out.push('-');
    }
    let a = q.unsigned_abs();
    out.push_str(&format!("{}.{:02}", a / 100, a % 100));
}

pub fn tokenize_trajectory(points: &[[f64; 2]]) -> Result<TokenSequence, TokenError> {
    let mut text = String::with_capacity(points.len() * 12);
    for (i, p) in points.iter().enumerate() {
        for (k, &v) in p.iter().enumerate() {
            if !v.is_finite() {
                return Err(TokenError::NonFinite { waypoint: i });
            }
            if v.abs() > MAX_COORDINATE {
                return Err(TokenError::OutOfRange { waypoint: i, value: v });
            }
            render((v * 100.0).round() as i64, &mut text);
            text.push(if k == 0 { ',' } else { ';' });
        }
    }
    TokenSequence::from_text(&text)
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
    waypoint: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> TokenError {
        TokenError::Parse {
            waypoint: self.waypoint,
            position: self.pos,
            message: message.into(),
        }
    }

    fn digits(&mut self, exact: Option<usize>) -> Result<i64, TokenError> {
        let start = self.pos;
        let mut value: i64 = 0;
        while let Some(d) = self.chars.get(self.pos).and_then(|c| c.to_digit(10)) {
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(d as i64))
                .ok_or_else(|| self.error("number too large"))?;
            self.pos += 1;
        }
        let n = self.pos - start;
        match exact {
            Some(e) if n != e => Err(self.error(format!("expected {e} fractional digits"))),
            None if n == 0 => Err(self.error("expected a digit")),
            _ => Ok(value),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), TokenError> {
        match self.chars.get(self.pos) {
            Some(&got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            Some(&got) => Err(self.error(format!("expected {c:?}, found {got:?}"))),
            None => Err(self.error(format!("expected {c:?}, found end of input"))),
        }
    }

    fn number(&mut self) -> Result<f64, TokenError> {
        let negative = self.chars.get(self.pos) == Some(&'-');
        if negative {
            self.pos += 1;
        }
        let whole = self.digits(None)?;
        self.expect('.')?;
        let frac = self.digits(Some(2))?;
        let q = whole
            .checked_mul(100)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(|| self.error("number too large"))?;
        Ok(if negative { -q } else { q } as f64 / 100.0)
    }
}

pub fn detokenize_trajectory(tokens: &TokenSequence) -> Result<Vec<[f64; 2]>, TokenError> {
    let chars: Vec<char> = tokens.0.iter().map(|&t| VOCAB[t as usize]).collect();
    let mut p = Parser {
        chars: &chars,
        pos: 0,
        waypoint: 0,
    };
    let mut out = Vec::new();
    while p.pos < chars.len() {
        let x = p.number()?;
        p.expect(',')?;
        let y = p.number()?;
        p.expect(';')?;
        out.push([x, y]);
        p.waypoint += 1;
    }
    Ok(out)
}

/// Negative log-likelihood summed over target positions. `distributions[i]`
/// is the model's distribution for position `i` given the earlier targets.
pub fn lm_loss(target: &[usize], distributions: &[Vec<f64>]) -> Result<f64, LossError> {
    if target.len() != distributions.len() {
        return Err(LossError::LengthMismatch {
            targets: target.len(),
            distributions: distributions.len(),
        });
    }
    let mut total = 0.0;
    for (position, (&token, dist)) in target.iter().zip(distributions).enumerate() {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::NotNormalized { position, sum });
        }
        let p = *dist.get(token).ok_or(LossError::OutOfVocabulary {
            position,
            token,
            vocab: dist.len(),
        })?;
        if !(p > 0.0) {
            return Err(LossError::InfiniteLoss { position });
        }
        total -= p.ln();
    }
    Ok(total)
}

/// Length-normalized variant of [`lm_loss`].
pub fn mean_lm_loss(target: &[usize], distributions: &[Vec<f64>]) -> Result<f64, LossError> {
    if target.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(lm_loss(target, distributions)? / target.len() as f64)
}
