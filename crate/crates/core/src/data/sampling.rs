use super::features::{FeatureSequence, Modality};
use super::manifest::Label;
use crate::error::{Error, Result};

pub const WINDOW: usize = 64;
pub const DEFAULT_STRIDE: usize = 16;
pub const VIDEO_STEPS: usize = 16;
pub const IMAGE_STEPS: usize = 16;
pub const TEXT_STEPS: usize = 4;

pub fn steps_for(modality: Modality) -> usize {
    match modality {
        Modality::Video => VIDEO_STEPS,
        Modality::Image => IMAGE_STEPS,
        Modality::Text => TEXT_STEPS,
    }
}

/// Start frames of every full window. Clips shorter than one window get a
/// single window at 0; the caller pads by repeating the last frame.
pub fn window_starts(n_frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if n_frames == 0 || window == 0 || stride == 0 {
        return Err(Error::contract(format!(
            "window_starts needs n_frames, window, stride >= 1 (got {n_frames}, {window}, {stride})"
        )));
    }
    if n_frames < window {
        return Ok(vec![0]);
    }
    Ok((0..=n_frames - window).step_by(stride).collect())
}

/// `k` evenly spaced offsets into a window: `floor(j * window / k)`.
pub fn uniform_subsample(window: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > window {
        return Err(Error::contract(format!(
            "uniform_subsample needs 1 <= k <= window, got k={k}, window={window}"
        )));
    }
    Ok((0..k).map(|j| j * window / k).collect())
}

/// Aligned video / image / text features for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub video: FeatureSequence,
    pub image: FeatureSequence,
    pub text: FeatureSequence,
    pub label: Label,
}

impl WindowSample {
    pub fn new(
        video: FeatureSequence,
        image: FeatureSequence,
        text: FeatureSequence,
        label: Label,
    ) -> Result<Self> {
        for (seq, want) in [
            (&video, Modality::Video),
            (&image, Modality::Image),
            (&text, Modality::Text),
        ] {
            if seq.modality() != want || seq.steps() != steps_for(want) {
                return Err(Error::contract(format!(
                    "{want} stream must have {} steps, got {} ({})",
                    steps_for(want),
                    seq.steps(),
                    seq.modality()
                )));
            }
        }
        Ok(Self {
            video,
            image,
            text,
            label,
        })
    }

    pub fn stream(&self, m: Modality) -> &FeatureSequence {
        match m {
            Modality::Video => &self.video,
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn stream_mut(&mut self, m: Modality) -> &mut FeatureSequence {
        match m {
            Modality::Video => &mut self.video,
            Modality::Image => &mut self.image,
            Modality::Text => &mut self.text,
        }
    }
}

/// Cuts per-frame streams of one clip into window samples. The three
/// streams must have the same frame count.
pub fn clip_windows(
    video: &FeatureSequence,
    image: &FeatureSequence,
    text: &FeatureSequence,
    label: Label,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    let n = video.steps();
    if image.steps() != n || text.steps() != n {
        return Err(Error::Data(format!(
            "stream lengths differ: video {n}, image {}, text {}",
            image.steps(),
            text.steps()
        )));
    }
    let offsets: Vec<Vec<usize>> = Modality::ALL
        .iter()
        .map(|&m| uniform_subsample(WINDOW, steps_for(m)))
        .collect::<Result<_>>()?;
    window_starts(n, WINDOW, stride)?
        .into_iter()
        .map(|start| {
            let pick = |seq: &FeatureSequence, offs: &[usize]| {
                let idx: Vec<usize> = offs.iter().map(|o| start + o).collect();
                seq.gather_rows(&idx)
            };
            WindowSample::new(
                pick(video, &offsets[0])?,
                pick(image, &offsets[1])?,
                pick(text, &offsets[2])?,
                label,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_start_examples() {
        assert_eq!(window_starts(64, 64, 16).unwrap(), vec![0]);
        assert_eq!(window_starts(96, 64, 16).unwrap(), vec![0, 16, 32]);
        assert_eq!(window_starts(10, 64, 16).unwrap(), vec![0]);
        assert!(window_starts(10, 64, 0).is_err());
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(
            uniform_subsample(64, 16).unwrap(),
            (0..16).map(|j| 4 * j).collect::<Vec<_>>()
        );
        assert_eq!(uniform_subsample(64, 4).unwrap(), vec![0, 16, 32, 48]);
        assert_eq!(
            uniform_subsample(64, 64).unwrap(),
            (0..64).collect::<Vec<_>>()
        );
        assert!(uniform_subsample(64, 65).is_err());
        assert!(uniform_subsample(64, 0).is_err());
    }

    fn ramp(m: Modality, frames: usize) -> FeatureSequence {
        FeatureSequence::new(m, frames, 1, (0..frames).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn clip_windows_picks_aligned_frames() {
        let (v, i, t) = (
            ramp(Modality::Video, 96),
            ramp(Modality::Image, 96),
            ramp(Modality::Text, 96),
        );
        let ws = clip_windows(&v, &i, &t, Label::Class(1), 16).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[1].video.row(0), &[16.0]);
        assert_eq!(ws[1].video.row(15), &[76.0]);
        assert_eq!(ws[2].text.data(), &[32.0, 48.0, 64.0, 80.0]);
    }

    #[test]
    fn short_clip_is_padded_with_last_frame() {
        let (v, i, t) = (
            ramp(Modality::Video, 10),
            ramp(Modality::Image, 10),
            ramp(Modality::Text, 10),
        );
        let ws = clip_windows(&v, &i, &t, Label::Class(0), 16).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].video.steps(), 16);
        assert_eq!(ws[0].video.row(15), &[9.0]);
        assert_eq!(ws[0].text.data(), &[0.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn mismatched_stream_lengths_fail() {
        let (v, i, t) = (
            ramp(Modality::Video, 64),
            ramp(Modality::Image, 65),
            ramp(Modality::Text, 64),
        );
        assert!(clip_windows(&v, &i, &t, Label::Class(0), 16).is_err());
    }
}
