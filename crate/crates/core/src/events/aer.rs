//! Address-event binary records.
//!
//! `aer` is the 40-bit N-MNIST layout, five bytes per event:
//!
//! ```text
//! byte 0      x
//! byte 1      y
//! byte 2      bit 7 polarity, bits 6..0 timestamp bits 22..16
//! byte 3      timestamp bits 15..8
//! byte 4      timestamp bits 7..0
//! ```
//!
//! The 23-bit timestamp wraps; a drop of more than 2^22 from the previous
//! record adds 2^23 to a running offset.
//!
//! `aer16` is a 9-byte little-endian record for sensors wider than 256
//! pixels: x u16, y u16, p u8, t u32.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::event::Event;

pub const AER_RECORD: usize = 5;
pub const AER16_RECORD: usize = 9;

const TS_BITS: u32 = 23;
const TS_WRAP: u64 = 1 << TS_BITS;
const TS_MASK: u64 = TS_WRAP - 1;
const WRAP_THRESHOLD: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AerFormat {
    #[default]
    Aer,
    Aer16,
}

impl AerFormat {
    pub fn parse(self, bytes: &[u8]) -> Result<Vec<Event>> {
        match self {
            AerFormat::Aer => parse_aer(bytes),
            AerFormat::Aer16 => parse_aer16(bytes),
        }
    }

    pub fn write(self, events: &[Event]) -> Result<Vec<u8>> {
        match self {
            AerFormat::Aer => write_aer(events),
            AerFormat::Aer16 => write_aer16(events),
        }
    }
}

pub fn parse_aer(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(AER_RECORD) {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last 5-byte record",
            bytes.len() % AER_RECORD
        )));
    }
    let mut events = Vec::with_capacity(bytes.len() / AER_RECORD);
    let mut offset = 0u64;
    let mut prev_raw: Option<u64> = None;
    for rec in bytes.chunks_exact(AER_RECORD) {
        let raw = (u64::from(rec[2] & 0x7f) << 16) | (u64::from(rec[3]) << 8) | u64::from(rec[4]);
        if let Some(prev) = prev_raw {
            if prev > raw && prev - raw > WRAP_THRESHOLD {
                offset += TS_WRAP;
            }
        }
        prev_raw = Some(raw);
        events.push(Event {
            x: u16::from(rec[0]),
            y: u16::from(rec[1]),
            p: rec[2] >> 7,
            t: raw + offset,
        });
    }
    sort_if_needed(&mut events);
    Ok(events)
}

pub fn write_aer(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * AER_RECORD);
    let mut offset = 0u64;
    let mut prev_raw: Option<u64> = None;
    for (i, e) in events.iter().enumerate() {
        if e.x > 255 || e.y > 255 {
            return Err(Error::Encode(format!("event {i}: ({}, {}) exceeds 8-bit address", e.x, e.y)));
        }
        if e.p > 1 {
            return Err(Error::Encode(format!("event {i}: polarity {}", e.p)));
        }
        let raw = e.t & TS_MASK;
        // Replay the decoder's wrap rule; the stored timestamp must decode back to `t`.
        if let Some(prev) = prev_raw {
            if prev > raw && prev - raw > WRAP_THRESHOLD {
                offset += TS_WRAP;
            }
        }
        if raw + offset != e.t {
            return Err(Error::Encode(format!(
                "event {i}: timestamp {} not representable after the previous record",
                e.t
            )));
        }
        prev_raw = Some(raw);
        out.extend_from_slice(&[
            e.x as u8,
            e.y as u8,
            (e.p << 7) | ((raw >> 16) as u8 & 0x7f),
            (raw >> 8) as u8,
            raw as u8,
        ]);
    }
    Ok(out)
}

pub fn parse_aer16(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(AER16_RECORD) {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last 9-byte record",
            bytes.len() % AER16_RECORD
        )));
    }
    let mut events: Vec<Event> = bytes
        .chunks_exact(AER16_RECORD)
        .map(|rec| Event {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            p: rec[4],
            t: u64::from(u32::from_le_bytes([rec[5], rec[6], rec[7], rec[8]])),
        })
        .collect();
    if let Some(bad) = events.iter().position(|e| e.p > 1) {
        return Err(Error::Format(format!("record {bad}: polarity {}", events[bad].p)));
    }
    sort_if_needed(&mut events);
    Ok(events)
}

pub fn write_aer16(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * AER16_RECORD);
    for (i, e) in events.iter().enumerate() {
        if e.p > 1 {
            return Err(Error::Encode(format!("event {i}: polarity {}", e.p)));
        }
        let t = u32::try_from(e.t).map_err(|_| Error::Encode(format!("event {i}: timestamp {} exceeds u32", e.t)))?;
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p);
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

fn sort_if_needed(events: &mut [Event]) {
    if events.windows(2).any(|w| w[1].t < w[0].t) {
        warn!("event timestamps not monotone after overflow handling; sorting");
        events.sort_by_key(|e| e.t);
    }
}
