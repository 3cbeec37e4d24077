//! Pulse-width codec for the IR link.
//!
//! Every message is a train of square pulses on a single channel. Pulse
//! *duration* carries the information:
//!
//! * 2.0 ms — sync ("T") pulse, also used for bare control bursts
//! * 1.5 ms — data bit `1`
//! * 0.5 ms — data bit `0`
//! * 1.0 ms — proximity-sensing pulse (never part of a message)
//!
//! A data frame interleaves sync pulses with nine payload bits
//! (`T b1 T b2 ... T b9 T`): eight data bits MSB-first plus an even-parity
//! bit, 19 pulses total. Control bursts are bare runs of sync pulses:
//! two for a Request, three for Ready/Ack.

use crate::error::{Result, SimError};

/// Timing constants of the pulse-width code, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    pub t_pulse_ms: f64,
    pub bit_one_ms: f64,
    pub bit_zero_ms: f64,
    pub proximity_ms: f64,
    /// Pause between consecutive pulses of one message.
    pub gap_ms: f64,
    /// Maximum deviation from a nominal duration that still classifies.
    pub tolerance_ms: f64,
}

impl Default for CodecParams {
    fn default() -> Self {
        CodecParams {
            t_pulse_ms: 2.0,
            bit_one_ms: 1.5,
            bit_zero_ms: 0.5,
            proximity_ms: 1.0,
            gap_ms: 0.25,
            tolerance_ms: 0.2,
        }
    }
}

impl CodecParams {
    /// Checks that all nominal durations are distinguishable: any two must
    /// differ by more than twice the classification tolerance, otherwise a
    /// duration could sit within tolerance of two nominals at once.
    pub fn validate(&self) -> Result<()> {
        let mut nominals = [
            self.bit_zero_ms,
            self.proximity_ms,
            self.bit_one_ms,
            self.t_pulse_ms,
        ];
        for &n in &nominals {
            if n <= 0.0 {
                return Err(SimError::param("codec", "pulse durations must be positive"));
            }
        }
        if self.gap_ms <= 0.0 || self.tolerance_ms <= 0.0 {
            return Err(SimError::param("codec", "gap and tolerance must be positive"));
        }
        nominals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in nominals.windows(2) {
            if w[1] - w[0] <= 2.0 * self.tolerance_ms {
                return Err(SimError::param(
                    "codec",
                    "nominal pulse durations closer than twice the tolerance",
                ));
            }
        }
        Ok(())
    }

    /// Pulses whose leading edges are further apart than this belong to
    /// different messages.
    pub fn burst_split_ms(&self) -> f64 {
        1.5 * self.gap_ms
    }
}

/// One square pulse: when its leading edge rises and how long it stays high.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub start_ms: f64,
    pub duration_ms: f64,
}

impl Pulse {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.duration_ms
    }
}

/// An ordered, non-overlapping sequence of pulses on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub channel: usize,
    pub pulses: Vec<Pulse>,
}

impl PulseTrain {
    pub fn new(channel: usize, pulses: Vec<Pulse>) -> Result<Self> {
        for w in pulses.windows(2) {
            if w[1].start_ms < w[0].end_ms() {
                return Err(SimError::param("pulses", "pulses overlap or are unordered"));
            }
        }
        if pulses.iter().any(|p| p.duration_ms <= 0.0) {
            return Err(SimError::param("pulses", "pulse durations must be positive"));
        }
        Ok(PulseTrain { channel, pulses })
    }

    pub fn start_ms(&self) -> f64 {
        self.pulses.first().map_or(0.0, |p| p.start_ms)
    }

    pub fn end_ms(&self) -> f64 {
        self.pulses.last().map_or(0.0, |p| p.end_ms())
    }

    /// Time the channel is claimed by this train: from the first leading
    /// edge to one inter-pulse gap past the last trailing edge. The trailing
    /// gap is included so back-to-back airtime sums stay additive.
    pub fn airtime_ms(&self, params: &CodecParams) -> f64 {
        if self.pulses.is_empty() {
            0.0
        } else {
            self.end_ms() + params.gap_ms - self.start_ms()
        }
    }

    /// Concatenates another train after this one, preserving both trains'
    /// internal spacing and inserting exactly one standard gap between them.
    pub fn append(&mut self, other: &PulseTrain, params: &CodecParams) {
        let base = self.end_ms() + params.gap_ms;
        let other_start = other.start_ms();
        for p in &other.pulses {
            self.pulses.push(Pulse {
                start_ms: base + (p.start_ms - other_start),
                duration_ms: p.duration_ms,
            });
        }
    }
}

/// An 8-bit payload with its even-parity bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub data: u8,
    pub parity: bool,
}

impl Frame {
    /// Builds a frame with the correct parity bit: parity is set so the
    /// total number of ones across data and parity is even.
    pub fn new(data: u8) -> Self {
        Frame {
            data,
            parity: data.count_ones() % 2 == 1,
        }
    }

    pub fn parity_ok(&self) -> bool {
        (self.data.count_ones() % 2 == 1) == self.parity
    }
}

/// Bare sync-pulse bursts used by the confirmed-delivery handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Request,
    ReadyOrAck,
}

impl ControlKind {
    pub fn pulse_count(&self) -> usize {
        match self {
            ControlKind::Request => 2,
            ControlKind::ReadyOrAck => 3,
        }
    }
}

fn push_pulse(pulses: &mut Vec<Pulse>, cursor: &mut f64, duration: f64, gap: f64) {
    pulses.push(Pulse {
        start_ms: *cursor,
        duration_ms: duration,
    });
    *cursor += duration + gap;
}

/// Encodes a control burst starting at `start_ms`.
pub fn encode_control(
    kind: ControlKind,
    params: &CodecParams,
    start_ms: f64,
    channel: usize,
) -> PulseTrain {
    let mut pulses = Vec::with_capacity(kind.pulse_count());
    let mut cursor = start_ms;
    for _ in 0..kind.pulse_count() {
        push_pulse(&mut pulses, &mut cursor, params.t_pulse_ms, params.gap_ms);
    }
    PulseTrain { channel, pulses }
}

/// Encodes a data frame, rejecting frames whose parity bit is inconsistent
/// with the payload. Use [`encode_frame_raw`] to produce deliberately bad
/// parity, e.g. for link tests.
pub fn encode_frame(
    frame: &Frame,
    params: &CodecParams,
    start_ms: f64,
    channel: usize,
) -> Result<PulseTrain> {
    if !frame.parity_ok() {
        return Err(SimError::param("frame", "parity bit inconsistent with payload"));
    }
    Ok(encode_frame_raw(frame.data, frame.parity, params, start_ms, channel))
}

/// Encodes nine bits (payload MSB-first, then the given parity bit) between
/// ten sync pulses, without checking parity consistency.
pub fn encode_frame_raw(
    data: u8,
    parity: bool,
    params: &CodecParams,
    start_ms: f64,
    channel: usize,
) -> PulseTrain {
    let mut bits = [false; 9];
    for (i, bit) in bits.iter_mut().take(8).enumerate() {
        *bit = data & (0x80 >> i) != 0;
    }
    bits[8] = parity;

    let mut pulses = Vec::with_capacity(19);
    let mut cursor = start_ms;
    push_pulse(&mut pulses, &mut cursor, params.t_pulse_ms, params.gap_ms);
    for &bit in &bits {
        let dur = if bit { params.bit_one_ms } else { params.bit_zero_ms };
        push_pulse(&mut pulses, &mut cursor, dur, params.gap_ms);
        push_pulse(&mut pulses, &mut cursor, params.t_pulse_ms, params.gap_ms);
    }
    PulseTrain { channel, pulses }
}

/// Encodes a single proximity-sensing pulse.
pub fn encode_proximity(params: &CodecParams, start_ms: f64, channel: usize) -> PulseTrain {
    PulseTrain {
        channel,
        pulses: vec![Pulse {
            start_ms,
            duration_ms: params.proximity_ms,
        }],
    }
}

/// What one received pulse duration looks like to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseClass {
    Sync,
    BitOne,
    BitZero,
    Proximity,
    Unknown,
}

/// Classifies a pulse by nearest nominal duration within the tolerance.
/// `validate` guarantees at most one nominal can be within tolerance.
pub fn classify_pulse(duration_ms: f64, params: &CodecParams) -> PulseClass {
    let nominals = [
        (params.t_pulse_ms, PulseClass::Sync),
        (params.bit_one_ms, PulseClass::BitOne),
        (params.bit_zero_ms, PulseClass::BitZero),
        (params.proximity_ms, PulseClass::Proximity),
    ];
    let mut best = PulseClass::Unknown;
    let mut best_err = f64::INFINITY;
    for (nominal, class) in nominals {
        let err = (duration_ms - nominal).abs();
        if err <= params.tolerance_ms && err < best_err {
            best_err = err;
            best = class;
        }
    }
    best
}

/// One decoded element of a received pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEvent {
    /// A frame with matching parity.
    Frame(Frame),
    /// A structurally valid frame whose parity check failed.
    ParityError,
    Request,
    ReadyOrAck,
    /// A lone proximity pulse, i.e. an echo of someone's range-sensing ping.
    ProximityEcho,
    /// Anything that fits no grammar production.
    Garbage,
}

/// Splits a train into bursts (runs of pulses whose inter-pulse spacing stays
/// within 1.5 gaps) and parses each burst against the message grammar.
pub fn decode_stream(train: &PulseTrain, params: &CodecParams) -> Vec<LinkEvent> {
    let mut events = Vec::new();
    let mut burst: Vec<PulseClass> = Vec::new();
    let mut last_end = f64::NEG_INFINITY;
    for p in &train.pulses {
        if !burst.is_empty() && p.start_ms - last_end > params.burst_split_ms() {
            decode_burst(&burst, &mut events);
            burst.clear();
        }
        burst.push(classify_pulse(p.duration_ms, params));
        last_end = p.end_ms();
    }
    if !burst.is_empty() {
        decode_burst(&burst, &mut events);
    }
    events
}

fn decode_burst(tokens: &[PulseClass], events: &mut Vec<LinkEvent>) {
    // A lone proximity pulse is an echo; proximity pulses inside longer
    // bursts fall through to the frame parser and desynchronize it.
    if tokens == [PulseClass::Proximity] {
        events.push(LinkEvent::ProximityEcho);
        return;
    }
    // Bare sync runs are control bursts.
    if tokens.iter().all(|t| *t == PulseClass::Sync) {
        match tokens.len() {
            2 => events.push(LinkEvent::Request),
            3 => events.push(LinkEvent::ReadyOrAck),
            _ => {
                if events.last() != Some(&LinkEvent::Garbage) {
                    events.push(LinkEvent::Garbage);
                }
            }
        }
        return;
    }

    let mut i = 0;
    while i < tokens.len() {
        match parse_frame(&tokens[i..]) {
            Some((event, consumed)) => {
                events.push(event);
                i += consumed;
            }
            None => {
                // Adjacent debris merges into a single garbage event; what
                // matters to the listener is that noise was present.
                if events.last() != Some(&LinkEvent::Garbage) {
                    events.push(LinkEvent::Garbage);
                }
                // Resynchronize at the next sync pulse strictly after the
                // failure point.
                i += 1;
                while i < tokens.len() && tokens[i] != PulseClass::Sync {
                    i += 1;
                }
            }
        }
    }
}

/// Tries to parse one `T (bit T){9}` frame at the start of `tokens`.
fn parse_frame(tokens: &[PulseClass]) -> Option<(LinkEvent, usize)> {
    if tokens.len() < 19 {
        return None;
    }
    let mut data: u8 = 0;
    let mut parity = false;
    for (k, &tok) in tokens.iter().take(19).enumerate() {
        if k % 2 == 0 {
            if tok != PulseClass::Sync {
                return None;
            }
        } else {
            let bit = match tok {
                PulseClass::BitOne => true,
                PulseClass::BitZero => false,
                _ => return None,
            };
            let bit_index = k / 2; // 0..=8
            if bit_index < 8 {
                data = (data << 1) | bit as u8;
            } else {
                parity = bit;
            }
        }
    }
    let frame = Frame { data, parity };
    let event = if frame.parity_ok() {
        LinkEvent::Frame(frame)
    } else {
        LinkEvent::ParityError
    };
    Some((event, 19))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> CodecParams {
        CodecParams::default()
    }

    #[test]
    fn default_params_are_distinguishable() {
        p().validate().unwrap();
    }

    #[test]
    fn too_tight_tolerance_is_rejected() {
        let mut params = p();
        params.tolerance_ms = 0.3; // 2*0.3 > 0.5 spacing between nominals
        assert!(params.validate().is_err());
    }

    #[test]
    fn parity_matches_popcount() {
        assert!(!Frame::new(0x00).parity);
        assert!(Frame::new(0x01).parity);
        assert!(!Frame::new(0x03).parity);
        assert!(Frame::new(0x07).parity);
        for data in 0..=255u8 {
            assert!(Frame::new(data).parity_ok());
        }
    }

    #[test]
    fn frame_has_19_pulses_and_expected_airtime_range() {
        // 10 sync pulses plus 9 bit pulses, each followed by one gap:
        // minimum 10*2 + 9*0.5 + 19*0.25 = 29.25 ms (all-zero payload and
        // parity), maximum 10*2 + 9*1.5 + 19*0.25 = 38.25 ms (all ones).
        let lo = encode_frame(&Frame::new(0x00), &p(), 0.0, 0).unwrap();
        assert_eq!(lo.pulses.len(), 19);
        assert!((lo.airtime_ms(&p()) - 29.25).abs() < 1e-9);

        // 0xFF has even popcount so its parity bit is 0; the true maximum
        // needs all nine bits set, which only the raw encoder can produce.
        let hi = encode_frame_raw(0xFF, true, &p(), 0.0, 0);
        assert!((hi.airtime_ms(&p()) - 38.25).abs() < 1e-9);

        for data in 0..=255u8 {
            let t = encode_frame(&Frame::new(data), &p(), 0.0, 0).unwrap();
            let a = t.airtime_ms(&p());
            assert!(
                (29.25..=38.25).contains(&a),
                "airtime {a} out of range for data {data}"
            );
        }
    }

    #[test]
    fn control_bursts_encode_and_decode() {
        let req = encode_control(ControlKind::Request, &p(), 0.0, 2);
        assert_eq!(req.pulses.len(), 2);
        assert_eq!(decode_stream(&req, &p()), vec![LinkEvent::Request]);

        let ack = encode_control(ControlKind::ReadyOrAck, &p(), 5.0, 2);
        assert_eq!(ack.pulses.len(), 3);
        assert_eq!(decode_stream(&ack, &p()), vec![LinkEvent::ReadyOrAck]);

        // A run of four sync pulses fits no production.
        let mut four = encode_control(ControlKind::Request, &p(), 0.0, 0);
        let again = encode_control(ControlKind::Request, &p(), 0.0, 0);
        four.append(&again, &p());
        assert_eq!(decode_stream(&four, &p()), vec![LinkEvent::Garbage]);
    }

    #[test]
    fn encode_rejects_bad_parity_frame() {
        let bad = Frame {
            data: 0x01,
            parity: false,
        };
        assert!(encode_frame(&bad, &p(), 0.0, 0).is_err());
    }

    #[test]
    fn all_256_payloads_roundtrip() {
        for data in 0..=255u8 {
            let frame = Frame::new(data);
            let train = encode_frame(&frame, &p(), 0.0, 0).unwrap();
            let events = decode_stream(&train, &p());
            assert_eq!(events, vec![LinkEvent::Frame(frame)], "payload {data}");
        }
    }

    #[test]
    fn every_single_bit_flip_yields_parity_error() {
        // Flipping any one of the nine transmitted bits (eight payload bits
        // or the parity bit) in any of the 256 frames must surface as a
        // parity error, never as a valid frame: 256 x 9 = 2304 cases.
        for data in 0..=255u8 {
            let frame = Frame::new(data);
            for bit_pos in 0..9 {
                let train = if bit_pos < 8 {
                    encode_frame_raw(data ^ (0x80 >> bit_pos), frame.parity, &p(), 0.0, 0)
                } else {
                    encode_frame_raw(data, !frame.parity, &p(), 0.0, 0)
                };
                let events = decode_stream(&train, &p());
                assert_eq!(
                    events,
                    vec![LinkEvent::ParityError],
                    "data {data} bit {bit_pos}"
                );
            }
        }
    }

    #[test]
    fn corrupted_sync_pulse_yields_garbage_not_frame() {
        let mut train = encode_frame(&Frame::new(0xA5), &p(), 0.0, 0).unwrap();
        train.pulses[0].duration_ms = 1.25; // outside tolerance of everything
        let events = decode_stream(&train, &p());
        assert!(!events
            .iter()
            .any(|e| matches!(e, LinkEvent::Frame(_))));
        assert!(events.contains(&LinkEvent::Garbage));
    }

    #[test]
    fn classify_pulse_nominal_and_edges() {
        assert_eq!(classify_pulse(2.0, &p()), PulseClass::Sync);
        assert_eq!(classify_pulse(1.5, &p()), PulseClass::BitOne);
        assert_eq!(classify_pulse(0.5, &p()), PulseClass::BitZero);
        assert_eq!(classify_pulse(1.0, &p()), PulseClass::Proximity);
        // Exactly at tolerance still classifies; just past does not.
        assert_eq!(classify_pulse(1.7, &p()), PulseClass::BitOne);
        assert_eq!(classify_pulse(1.71, &p()), PulseClass::Unknown);
        assert_eq!(classify_pulse(0.29, &p()), PulseClass::Unknown);
        assert_eq!(classify_pulse(3.0, &p()), PulseClass::Unknown);
    }

    #[test]
    fn concatenated_frames_within_gap_decode_as_two_frames() {
        let f1 = Frame::new(0x12);
        let f2 = Frame::new(0xEE);
        let mut train = encode_frame(&f1, &p(), 0.0, 0).unwrap();
        let second = encode_frame(&f2, &p(), 0.0, 0).unwrap();
        train.append(&second, &p());
        let events = decode_stream(&train, &p());
        assert_eq!(events, vec![LinkEvent::Frame(f1), LinkEvent::Frame(f2)]);
    }

    #[test]
    fn widely_separated_messages_split_into_bursts() {
        let f = Frame::new(0x3C);
        let mut train = encode_frame(&f, &p(), 0.0, 0).unwrap();
        let ack = encode_control(ControlKind::ReadyOrAck, &p(), train.end_ms() + 5.0, 0);
        train.pulses.extend(ack.pulses);
        let echo = encode_proximity(&p(), train.end_ms() + 12.0, 0);
        train.pulses.extend(echo.pulses);
        let events = decode_stream(&train, &p());
        assert_eq!(
            events,
            vec![
                LinkEvent::Frame(f),
                LinkEvent::ReadyOrAck,
                LinkEvent::ProximityEcho
            ]
        );
    }

    #[test]
    fn truncated_frame_is_garbage() {
        let mut train = encode_frame(&Frame::new(0x55), &p(), 0.0, 0).unwrap();
        train.pulses.truncate(10);
        let events = decode_stream(&train, &p());
        assert_eq!(events, vec![LinkEvent::Garbage]);
        // A frame cut mid-air must never decode as a (different) frame.
        for keep in 1..19 {
            let mut t = encode_frame(&Frame::new(0x55), &p(), 0.0, 0).unwrap();
            t.pulses.truncate(keep);
            assert!(!decode_stream(&t, &p())
                .iter()
                .any(|e| matches!(e, LinkEvent::Frame(_))));
        }
    }

    #[test]
    fn airtime_is_additive_under_append() {
        let a = encode_frame(&Frame::new(0x0F), &p(), 0.0, 0).unwrap();
        let b = encode_control(ControlKind::Request, &p(), 0.0, 0);
        let mut joined = a.clone();
        joined.append(&b, &p());
        assert!(
            (joined.airtime_ms(&p()) - (a.airtime_ms(&p()) + b.airtime_ms(&p()))).abs() < 1e-9
        );
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let pulses = vec![
            Pulse { start_ms: 0.0, duration_ms: 2.0 },
            Pulse { start_ms: 1.0, duration_ms: 2.0 },
        ];
        assert!(PulseTrain::new(0, pulses).is_err());
    }
}
