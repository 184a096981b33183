//! Token layout of the packed multi-modal sequence and `cu_seqlens` helpers.
//!
//! The packed sequence is always ordered `video | others | audio`:
//!
//! ```text
//! [ v(f=0) .. v(f=F-1) | others | a(f=0) .. a(f=F-1) ]
//!   F*N tokens           others   F*L tokens
//! ```
//!
//! Video and audio blocks are frame-major. The others block (reference
//! images, text) has no frame structure.

use std::ops::Range;

use crate::error::{AttnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenLayout {
    pub frames: usize,
    pub video_per_frame: usize,
    pub audio_per_frame: usize,
    pub others_len: usize,
}

/// Half-open index ranges of the three segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub video: Range<usize>,
    pub others: Range<usize>,
    pub audio: Range<usize>,
}

impl TokenLayout {
    pub fn new(
        frames: usize,
        video_per_frame: usize,
        audio_per_frame: usize,
        others_len: usize,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(AttnError::Invalid("frame count must be positive".into()));
        }
        let layout = TokenLayout {
            frames,
            video_per_frame,
            audio_per_frame,
            others_len,
        };
        layout.checked_total_len()?;
        Ok(layout)
    }

    fn checked_total_len(&self) -> Result<usize> {
        let video = self.frames.checked_mul(self.video_per_frame);
        let audio = self.frames.checked_mul(self.audio_per_frame);
        video
            .zip(audio)
            .and_then(|(v, a)| v.checked_add(a))
            .and_then(|s| s.checked_add(self.others_len))
            .ok_or_else(|| AttnError::Invalid(format!("layout length overflows: {self:?}")))
    }

    pub fn video_len(&self) -> usize {
        self.frames * self.video_per_frame
    }

    pub fn audio_len(&self) -> usize {
        self.frames * self.audio_per_frame
    }

    pub fn total_len(&self) -> usize {
        self.video_len() + self.others_len + self.audio_len()
    }

    pub fn segment_offsets(&self) -> Segments {
        let v_end = self.video_len();
        let o_end = v_end + self.others_len;
        Segments {
            video: 0..v_end,
            others: v_end..o_end,
            audio: o_end..o_end + self.audio_len(),
        }
    }

    /// Frame index of a video token given its packed position.
    pub fn video_frame(&self, pos: usize) -> Option<usize> {
        (pos < self.video_len()).then(|| pos / self.video_per_frame)
    }

    /// Frame index of an audio token given its packed position.
    pub fn audio_frame(&self, pos: usize) -> Option<usize> {
        let audio = self.segment_offsets().audio;
        audio
            .contains(&pos)
            .then(|| (pos - audio.start) / self.audio_per_frame)
    }
}

/// Cumulative boundaries of a packed batch of variable-length groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuSeqlens(Vec<usize>);

impl CuSeqlens {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        match boundaries.first() {
            None => return Err(AttnError::CuSeqlens("empty boundary vector".into())),
            Some(&b) if b != 0 => {
                return Err(AttnError::CuSeqlens(format!(
                    "first boundary is {b}, not 0"
                )))
            }
            _ => {}
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[1] < w[0]) {
            return Err(AttnError::CuSeqlens(format!(
                "boundaries decrease: {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(CuSeqlens(boundaries))
    }

    /// `count` tokens in each of `frames` consecutive groups.
    pub fn per_frame(count: usize, frames: usize) -> Self {
        CuSeqlens((0..=frames).map(|i| i * count).collect())
    }

    pub fn groups(&self) -> usize {
        self.0.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.0.last().expect("non-empty by construction")
    }

    pub fn group(&self, g: usize) -> Range<usize> {
        self.0[g]..self.0[g + 1]
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.0
    }
}
