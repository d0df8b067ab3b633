//! Line protocol for online classification.
//!
//! Input, one command per line:
//!
//! ```text
//! E <x> <y> <p> <t>    feed one event (t in microseconds)
//! R                    reset to the initial state
//! ```
//!
//! Every event produces `<t> <argmax> <p_0> ... <p_{C-1}>`. A reset produces
//! nothing; a malformed line produces `ERR parse` and leaves the state alone.
//! Blank lines are ignored.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::events::Event;
use crate::model::{OnlineClassifier, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Event(Event),
    Reset,
}

pub fn parse_command(line: &str) -> Option<Command> {
    let mut parts = line.split_ascii_whitespace();
    let cmd = match parts.next()? {
        "R" => Command::Reset,
        "E" => {
            let x = parts.next()?.parse().ok()?;
            let y = parts.next()?.parse().ok()?;
            let p: u8 = parts.next()?.parse().ok()?;
            let t = parts.next()?.parse().ok()?;
            if p > 1 {
                return None;
            }
            Command::Event(Event::new(x, y, p, t))
        }
        _ => return None,
    };
    parts.next().is_none().then_some(cmd)
}

/// Probabilities are written in shortest round-trip form.
pub fn format_prediction(pred: &Prediction, out: &mut String) {
    use std::fmt::Write as _;
    let _ = write!(out, "{} {}", pred.t, pred.class);
    let mut buf = ryu::Buffer::new();
    for &p in &pred.probs {
        out.push(' ');
        out.push_str(buf.format(p));
    }
    out.push('\n');
}

/// Counters for one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub events: u64,
    pub resets: u64,
    pub errors: u64,
}

/// Applies one protocol line, appending any response to `out`.
pub fn handle_line(clf: &mut OnlineClassifier<'_>, line: &str, stats: &mut StreamStats, out: &mut String) -> Result<()> {
    if line.trim().is_empty() {
        return Ok(());
    }
    match parse_command(line) {
        Some(Command::Event(e)) => {
            let pred = clf.push(&e)?;
            format_prediction(&pred, out);
            stats.events += 1;
        }
        Some(Command::Reset) => {
            clf.reset()?;
            stats.resets += 1;
        }
        None => {
            out.push_str("ERR parse\n");
            stats.errors += 1;
        }
    }
    Ok(())
}

/// Serves the protocol until end of input. Output is flushed whenever no
/// further input is already buffered, so interactive clients see each
/// answer promptly while piped input is written in large blocks.
pub fn run_session<R: Read, W: Write>(clf: &mut OnlineClassifier<'_>, input: R, mut output: W) -> Result<StreamStats> {
    let mut reader = BufReader::with_capacity(1 << 16, input);
    let io = |e| Error::io("<stream>", e);
    let mut stats = StreamStats::default();
    let mut line = String::new();
    let mut out = String::with_capacity(1 << 16);
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io)? == 0 {
            break;
        }
        handle_line(clf, &line, &mut stats, &mut out)?;
        if reader.buffer().is_empty() || out.len() > 1 << 15 {
            output.write_all(out.as_bytes()).map_err(io)?;
            out.clear();
            if reader.buffer().is_empty() {
                output.flush().map_err(io)?;
            }
        }
    }
    output.write_all(out.as_bytes()).map_err(io)?;
    output.flush().map_err(io)?;
    Ok(stats)
}
