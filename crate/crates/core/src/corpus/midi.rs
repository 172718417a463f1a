//! Ground-truth melody extraction from Standard MIDI Files.
//!
//! All tracks are merged onto one timeline. Overlapping notes are resolved by
//! truncating the earlier note at the later onset.

use midly::{num::u28, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use super::CorpusError;

const DEFAULT_TEMPO_US_PER_QUARTER: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub onset_s: f64,
    pub duration_s: f64,
    pub pitch: u8,
}

/// Monophonic note list ordered by onset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoteSequence {
    pub notes: Vec<Note>,
}

impl NoteSequence {
    pub fn total_duration_s(&self) -> f64 {
        self.notes
            .last()
            .map(|n| n.onset_s + n.duration_s)
            .unwrap_or(0.0)
    }

    /// Pitch sounding at time `t`, if any.
    pub fn pitch_at(&self, t: f64) -> Option<u8> {
        let idx = self.notes.partition_point(|n| n.onset_s <= t);
        let n = self.notes.get(idx.checked_sub(1)?)?;
        (t < n.onset_s + n.duration_s).then_some(n.pitch)
    }
}

/// Maps absolute ticks to seconds through a piecewise-constant tempo map.
struct TempoMap {
    /// (tick, seconds at tick, seconds per tick from here on)
    segments: Vec<(u64, f64, f64)>,
}

impl TempoMap {
    fn new(timing: Timing, mut changes: Vec<(u64, u32)>) -> Self {
        match timing {
            Timing::Timecode(fps, subframe) => {
                let spt = 1.0 / (fps.as_f32() as f64 * subframe as f64);
                Self {
                    segments: vec![(0, 0.0, spt)],
                }
            }
            Timing::Metrical(tpq) => {
                let tpq = tpq.as_int().max(1) as f64;
                changes.sort_by_key(|&(tick, _)| tick);
                let mut segments = vec![(0u64, 0.0, DEFAULT_TEMPO_US_PER_QUARTER as f64 / 1e6 / tpq)];
                for (tick, us) in changes {
                    let &(t0, s0, spt) = segments.last().unwrap();
                    let at = s0 + (tick - t0) as f64 * spt;
                    let next = (tick, at, us as f64 / 1e6 / tpq);
                    if tick == t0 {
                        *segments.last_mut().unwrap() = next;
                    } else {
                        segments.push(next);
                    }
                }
                Self { segments }
            }
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let idx = self.segments.partition_point(|&(t, _, _)| t <= tick);
        let (t0, s0, spt) = self.segments[idx.saturating_sub(1)];
        s0 + (tick - t0) as f64 * spt
    }
}

enum NoteEvent {
    On(u8),
    Off(u8),
}

/// Parse an SMF (format 0 or 1) into a monophonic [`NoteSequence`].
pub fn parse_midi(bytes: &[u8]) -> Result<NoteSequence, CorpusError> {
    let smf = Smf::parse(bytes).map_err(|e| CorpusError::MalformedMidi(e.to_string()))?;

    let mut tempo_changes = Vec::new();
    // (tick, track, index within track, event)
    let mut events: Vec<(u64, usize, usize, NoteEvent)> = Vec::new();
    for (ti, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        for (ei, ev) in track.iter().enumerate() {
            tick += ev.delta.as_int() as u64;
            match ev.kind {
                TrackEventKind::Meta(MetaMessage::Tempo(us)) => {
                    tempo_changes.push((tick, us.as_int()))
                }
                TrackEventKind::Midi { message, .. } => match message {
                    MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                        events.push((tick, ti, ei, NoteEvent::On(key.as_int())))
                    }
                    MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                        events.push((tick, ti, ei, NoteEvent::Off(key.as_int())))
                    }
                    _ => {}
                },
                _ => {}
            }
        }
    }
    events.sort_by_key(|&(tick, ti, ei, _)| (tick, ti, ei));
    let tempo = TempoMap::new(smf.header.timing, tempo_changes);

    let mut notes: Vec<Note> = Vec::new();
    let mut active: Option<(u8, u64)> = None;
    let close = |key: u8, start: u64, end: u64, notes: &mut Vec<Note>| {
        if end > start {
            let onset_s = tempo.seconds(start);
            notes.push(Note {
                onset_s,
                duration_s: tempo.seconds(end) - onset_s,
                pitch: key,
            });
        }
    };
    for (tick, _, _, ev) in events {
        match ev {
            NoteEvent::On(key) => {
                if let Some((prev, start)) = active.take() {
                    if start == tick && prev != key {
                        return Err(CorpusError::PolyphonyError(format!(
                            "notes {prev} and {key} both start at tick {tick}"
                        )));
                    }
                    close(prev, start, tick, &mut notes);
                }
                active = Some((key, tick));
            }
            NoteEvent::Off(key) => {
                if let Some((prev, start)) = active {
                    if prev == key {
                        close(prev, start, tick, &mut notes);
                        active = None;
                    }
                }
            }
        }
    }
    // A note left hanging at end of file has no usable duration.
    Ok(NoteSequence { notes })
}

/// Write a single-track SMF at 480 ticks per quarter with one tempo event.
///
/// Used to materialize synthetic song catalogs.
pub fn encode_midi(notes: &[(u32, u32, u8)], tempo_us_per_quarter: u32) -> Vec<u8> {
    use midly::{Format, Header};

    let mut track: Vec<TrackEvent> = vec![TrackEvent {
        delta: 0.into(),
        kind: TrackEventKind::Meta(MetaMessage::Tempo(tempo_us_per_quarter.into())),
    }];
    let mut now = 0u32;
    for &(start, len, pitch) in notes {
        let start = start.max(now);
        track.push(TrackEvent {
            delta: u28::new(start - now),
            kind: TrackEventKind::Midi {
                channel: 0.into(),
                message: MidiMessage::NoteOn {
                    key: pitch.into(),
                    vel: 100.into(),
                },
            },
        });
        track.push(TrackEvent {
            delta: u28::new(len),
            kind: TrackEventKind::Midi {
                channel: 0.into(),
                message: MidiMessage::NoteOff {
                    key: pitch.into(),
                    vel: 0.into(),
                },
            },
        });
        now = start + len;
    }
    track.push(TrackEvent {
        delta: 0.into(),
        kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
    });
    let smf = Smf {
        header: Header::new(Format::SingleTrack, Timing::Metrical(480.into())),
        tracks: vec![track],
    };
    let mut out = Vec::new();
    smf.write_std(&mut out).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled SMF, format 0, 480 tpq.
    fn smf(track_body: &[u8]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 1, 0x01, 0xE0]);
        out.extend_from_slice(b"MTrk");
        let mut body = track_body.to_vec();
        body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    #[test]
    fn quarter_note_at_default_tempo() {
        // NoteOn 60 at 0, NoteOff 60 after 480 ticks (0x83 0x60 = 480 VLQ).
        let bytes = smf(&[0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0]);
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.notes.len(), 1);
        let n = seq.notes[0];
        assert_eq!(n.pitch, 60);
        assert!((n.onset_s - 0.0).abs() < 1e-12);
        assert!((n.duration_s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn velocity_zero_ends_note() {
        let bytes = smf(&[0x00, 0x90, 62, 64, 0x83, 0x60, 0x90, 62, 0]);
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.notes.len(), 1);
        assert_eq!(seq.notes[0].pitch, 62);
        assert!((seq.notes[0].duration_s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn overlapping_note_is_truncated() {
        // 60 on at 0, 64 on at 240, 60 off at 480, 64 off at 960.
        let bytes = smf(&[
            0x00, 0x90, 60, 100, //
            0x81, 0x70, 0x90, 64, 100, //
            0x81, 0x70, 0x80, 60, 0, //
            0x83, 0x60, 0x80, 64, 0,
        ]);
        let seq = parse_midi(&bytes).unwrap();
        assert_eq!(seq.notes.len(), 2);
        assert!((seq.notes[0].duration_s - 0.25).abs() < 1e-12);
        assert!((seq.notes[1].onset_s - 0.25).abs() < 1e-12);
        assert!((seq.notes[1].duration_s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn chord_onset_is_polyphony() {
        let bytes = smf(&[0x00, 0x90, 60, 100, 0x00, 0x90, 64, 100, 0x83, 0x60, 0x80, 60, 0]);
        assert!(matches!(parse_midi(&bytes), Err(CorpusError::PolyphonyError(_))));
    }

    #[test]
    fn tempo_event_changes_timing() {
        // 60 bpm = 1_000_000 us per quarter.
        let bytes = smf(&[
            0x00, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40, //
            0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0,
        ]);
        let seq = parse_midi(&bytes).unwrap();
        assert!((seq.notes[0].duration_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(parse_midi(b"MThd\0\0"), Err(CorpusError::MalformedMidi(_))));
        assert!(matches!(parse_midi(b"garbage!"), Err(CorpusError::MalformedMidi(_))));
    }

    #[test]
    fn encoder_round_trip() {
        let notes = [(0, 480, 60), (480, 240, 62), (960, 960, 67)];
        let seq = parse_midi(&encode_midi(&notes, 500_000)).unwrap();
        let got: Vec<_> = seq
            .notes
            .iter()
            .map(|n| (n.onset_s, n.duration_s, n.pitch))
            .collect();
        assert_eq!(got, vec![(0.0, 0.5, 60), (0.5, 0.25, 62), (1.0, 1.0, 67)]);
        assert_eq!(seq.pitch_at(0.6), Some(62));
        assert_eq!(seq.pitch_at(0.8), None);
    }
}
