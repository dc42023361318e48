//! Token sequences as JSON Lines.

use std::io::{BufRead, Write};

use crate::tokenizer::TokenSequence;
use crate::{Error, Result};

pub fn write_jsonl<W: Write>(mut w: W, sequences: &[TokenSequence]) -> Result<()> {
    for s in sequences {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_bytes(sequences: &[TokenSequence]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_jsonl(&mut out, sequences)?;
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TokenSequence>> {
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            serde_json::from_str(&line?)
                .map_err(|e| Error::Invalid(format!("token line {}: {e}", i + 1)))
        })
        .collect()
}
