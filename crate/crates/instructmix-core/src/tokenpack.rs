//! Tokenizer contract and fixed-budget packing of rendered examples into
//! parallel input/target token buffers.
//!
//! Inputs and targets live in separate buffers aligned by segment id; each
//! example's slice in either buffer ends with exactly one EOS. Packing is
//! greedy and in-order so the mixture stream's order is preserved; an example
//! that cannot fit even in an empty batch is dropped with a warning.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templating::RenderedExample;

/// Default input-buffer token budget.
pub const DEFAULT_INPUT_BUDGET: usize = 1024;
/// Default target-buffer token budget.
pub const DEFAULT_TARGET_BUDGET: usize = 256;

/// Scoring-side tokenizer contract. Special ids are distinct, lie below
/// `vocab_size`, and are never produced by `encode` on plain text.
pub trait Tokenizer {
    fn name(&self) -> &'static str;
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> Result<String>;
    fn eos_id(&self) -> u32;
    fn pad_id(&self) -> u32;
    fn delimiter_id(&self) -> u32;
    fn vocab_size(&self) -> u32;
}

/// Reference tokenizer: every byte is its own token.
///
/// Exact and dependency-free, which makes packed buffers and length
/// constraints directly checkable in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const EOS: u32 = 256;
    pub const PAD: u32 = 257;
    pub const DELIMITER: u32 = 258;
}

impl Tokenizer for ByteTokenizer {
    fn name(&self) -> &'static str {
        "byte"
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes: Vec<u8> = ids
            .iter()
            .map(|&id| {
                u8::try_from(id).map_err(|_| {
                    Error::Integrity(format!("token id {id} is not a plain byte"))
                })
            })
            .collect::<Result<_>>()?;
        String::from_utf8(bytes)
            .map_err(|e| Error::Integrity(format!("decoded bytes are not UTF-8: {e}")))
    }

    fn eos_id(&self) -> u32 {
        Self::EOS
    }

    fn pad_id(&self) -> u32 {
        Self::PAD
    }

    fn delimiter_id(&self) -> u32 {
        Self::DELIMITER
    }

    fn vocab_size(&self) -> u32 {
        259
    }
}

/// Parallel input/target token buffers with per-position segment ids and a
/// loss mask over the target buffer.
///
/// Segment ids are 1-based example ordinals within the batch; padding
/// positions carry segment id 0 and a false loss mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedBatch {
    pub input_tokens: Vec<u32>,
    pub target_tokens: Vec<u32>,
    pub input_segments: Vec<u32>,
    pub target_segments: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

/// Result of packing a rendered stream.
#[derive(Debug, Clone)]
pub struct PackOutcome {
    pub batches: Vec<PackedBatch>,
    /// Examples dropped because they exceeded a budget on their own.
    pub dropped: usize,
}

struct OpenBatch {
    input_tokens: Vec<u32>,
    target_tokens: Vec<u32>,
    input_segments: Vec<u32>,
    target_segments: Vec<u32>,
    next_ordinal: u32,
}

impl OpenBatch {
    fn new() -> Self {
        OpenBatch {
            input_tokens: Vec::new(),
            target_tokens: Vec::new(),
            input_segments: Vec::new(),
            target_segments: Vec::new(),
            next_ordinal: 1,
        }
    }

    fn is_empty(&self) -> bool {
        self.next_ordinal == 1
    }

    fn push(&mut self, input: &[u32], target: &[u32], eos: u32) {
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.input_tokens.extend_from_slice(input);
        self.input_tokens.push(eos);
        self.input_segments
            .extend(std::iter::repeat(ordinal).take(input.len() + 1));
        self.target_tokens.extend_from_slice(target);
        self.target_tokens.push(eos);
        self.target_segments
            .extend(std::iter::repeat(ordinal).take(target.len() + 1));
    }

    fn seal(mut self, input_budget: usize, target_budget: usize, pad: u32) -> PackedBatch {
        let loss_mask = vec![true; self.target_tokens.len()];
        self.input_tokens.resize(input_budget, pad);
        self.input_segments.resize(input_budget, 0);
        self.target_tokens.resize(target_budget, pad);
        self.target_segments.resize(target_budget, 0);
        let mut mask = loss_mask;
        mask.resize(target_budget, false);
        PackedBatch {
            input_tokens: self.input_tokens,
            target_tokens: self.target_tokens,
            input_segments: self.input_segments,
            target_segments: self.target_segments,
            loss_mask: mask,
        }
    }
}

/// Greedy in-order packing of a rendered stream into fixed-budget batches.
pub fn pack<T: Tokenizer>(
    rendered: &[RenderedExample],
    tok: &T,
    input_budget: usize,
    target_budget: usize,
) -> PackOutcome {
    assert!(input_budget > 1 && target_budget > 1, "budgets must exceed 1");
    let eos = tok.eos_id();
    let pad = tok.pad_id();
    let mut batches = Vec::new();
    let mut open = OpenBatch::new();
    let mut dropped = 0usize;
    for example in rendered {
        let input = tok.encode(&example.input_text);
        let target = tok.encode(&example.target_text);
        if input.len() + 1 > input_budget || target.len() + 1 > target_budget {
            log::warn!(
                "dropping oversize example from {} (input {} + EOS vs budget {}, target {} + EOS vs budget {})",
                example.dataset,
                input.len(),
                input_budget,
                target.len(),
                target_budget
            );
            dropped += 1;
            continue;
        }
        let fits = open.input_tokens.len() + input.len() + 1 <= input_budget
            && open.target_tokens.len() + target.len() + 1 <= target_budget;
        if !fits {
            batches.push(open.seal(input_budget, target_budget, pad));
            open = OpenBatch::new();
        }
        open.push(&input, &target, eos);
    }
    if !open.is_empty() {
        batches.push(open.seal(input_budget, target_budget, pad));
    }
    PackOutcome { batches, dropped }
}

fn segment_slices(tokens: &[u32], segments: &[u32]) -> Result<Vec<(u32, Vec<u32>)>> {
    if tokens.len() != segments.len() {
        return Err(Error::Integrity(
            "token and segment arrays differ in length".into(),
        ));
    }
    let mut slices: Vec<(u32, Vec<u32>)> = Vec::new();
    let mut last_segment = 0u32;
    for (&token, &segment) in tokens.iter().zip(segments) {
        if segment == 0 {
            continue;
        }
        match slices.last_mut() {
            Some((current, slice)) if *current == segment => slice.push(token),
            _ => {
                if segment != last_segment + 1 {
                    return Err(Error::Integrity(format!(
                        "segment ids must be non-decreasing ordinals, found {segment} after {last_segment}"
                    )));
                }
                last_segment = segment;
                slices.push((segment, vec![token]));
            }
        }
    }
    Ok(slices)
}

fn strip_eos(slice: &[u32], eos: u32, ordinal: u32, buffer: &str) -> Result<Vec<u32>> {
    match slice.split_last() {
        Some((&last, body)) if last == eos => {
            if body.contains(&eos) {
                return Err(Error::Integrity(format!(
                    "{buffer} segment {ordinal} contains an interior EOS"
                )));
            }
            Ok(body.to_vec())
        }
        _ => Err(Error::Integrity(format!(
            "{buffer} segment {ordinal} does not end with EOS"
        ))),
    }
}

/// Inverse of [`pack`] for one batch: recovers the (input, target) text
/// pairs. Used as the packing oracle in tests and audits.
pub fn unpack<T: Tokenizer>(batch: &PackedBatch, tok: &T) -> Result<Vec<(String, String)>> {
    let eos = tok.eos_id();
    let inputs = segment_slices(&batch.input_tokens, &batch.input_segments)?;
    let targets = segment_slices(&batch.target_tokens, &batch.target_segments)?;
    if inputs.len() != targets.len() {
        return Err(Error::Integrity(format!(
            "input buffer has {} segments but target buffer has {}",
            inputs.len(),
            targets.len()
        )));
    }
    let mut pairs = Vec::with_capacity(inputs.len());
    for ((ordinal, input), (target_ordinal, target)) in inputs.into_iter().zip(targets) {
        if ordinal != target_ordinal {
            return Err(Error::Integrity(format!(
                "segment ordinal mismatch: input {ordinal} vs target {target_ordinal}"
            )));
        }
        let input_ids = strip_eos(&input, eos, ordinal, "input")?;
        let target_ids = strip_eos(&target, eos, ordinal, "target")?;
        pairs.push((tok.decode(&input_ids)?, tok.decode(&target_ids)?));
    }
    Ok(pairs)
}

fn write_u32_array<W: Write>(writer: &mut W, values: &[u32]) -> Result<()> {
    for &v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes batches in the length-prefixed binary layout: per batch, the two
/// buffer lengths (u32 LE), then input ids, input segments, target ids,
/// target segments, and one mask byte per target position.
pub fn write_batches<W: Write>(writer: &mut W, batches: &[PackedBatch]) -> Result<()> {
    for batch in batches {
        writer.write_all(&(batch.input_tokens.len() as u32).to_le_bytes())?;
        writer.write_all(&(batch.target_tokens.len() as u32).to_le_bytes())?;
        write_u32_array(writer, &batch.input_tokens)?;
        write_u32_array(writer, &batch.input_segments)?;
        write_u32_array(writer, &batch.target_tokens)?;
        write_u32_array(writer, &batch.target_segments)?;
        let mask_bytes: Vec<u8> = batch.loss_mask.iter().map(|&b| u8::from(b)).collect();
        writer.write_all(&mask_bytes)?;
    }
    Ok(())
}

fn read_u32_array<R: Read>(reader: &mut R, len: usize) -> Result<Vec<u32>> {
    let mut buf = vec![0u8; len * 4];
    reader.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads batches written by [`write_batches`] until EOF.
pub fn read_batches<R: Read>(reader: &mut R) -> Result<Vec<PackedBatch>> {
    let mut batches = Vec::new();
    loop {
        let mut header = [0u8; 8];
        match reader.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let n_input = u32::from_le_bytes([header[0], header[1], header[2], header[3]]) as usize;
        let n_target = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        let input_tokens = read_u32_array(reader, n_input)?;
        let input_segments = read_u32_array(reader, n_input)?;
        let target_tokens = read_u32_array(reader, n_target)?;
        let target_segments = read_u32_array(reader, n_target)?;
        let mut mask_bytes = vec![0u8; n_target];
        reader.read_exact(&mut mask_bytes)?;
        batches.push(PackedBatch {
            input_tokens,
            input_segments,
            target_tokens,
            target_segments,
            loss_mask: mask_bytes.into_iter().map(|b| b != 0).collect(),
        });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templating::RenderMode;

    fn rendered(pairs: &[(&str, &str)]) -> Vec<RenderedExample> {
        pairs
            .iter()
            .map(|(input, target)| RenderedExample {
                input_text: input.to_string(),
                target_text: target.to_string(),
                template_id: "t/0".into(),
                dataset: "t".into(),
                render_mode: RenderMode::Natural,
            })
            .collect()
    }

    #[test]
    fn byte_tokenizer_roundtrip() {
        let tok = ByteTokenizer;
        let text = "abc xyz! ñ"; // multi-byte char included
        assert_eq!(tok.decode(&tok.encode(text)).unwrap(), text);
        assert!(tok.decode(&[ByteTokenizer::EOS]).is_err());
    }

    #[test]
    fn hand_packed_two_examples() {
        let tok = ByteTokenizer;
        let outcome = pack(&rendered(&[("ab", "x"), ("cd", "y")]), &tok, 8, 4);
        assert_eq!(outcome.dropped, 0);
        assert_eq!(outcome.batches.len(), 1);
        let batch = &outcome.batches[0];
        let (a, b, c, d, x, y) = (97, 98, 99, 100, 120, 121);
        let (eos, pad) = (ByteTokenizer::EOS, ByteTokenizer::PAD);
        assert_eq!(batch.input_tokens, vec![a, b, eos, c, d, eos, pad, pad]);
        assert_eq!(batch.target_tokens, vec![x, eos, y, eos]);
        assert_eq!(batch.input_segments, vec![1, 1, 1, 2, 2, 2, 0, 0]);
        assert_eq!(batch.target_segments, vec![1, 1, 2, 2]);
        assert_eq!(batch.loss_mask, vec![true, true, true, true]);
        // Verified by the unpack roundtrip.
        let pairs = unpack(batch, &tok).unwrap();
        assert_eq!(
            pairs,
            vec![("ab".to_string(), "x".to_string()), ("cd".to_string(), "y".to_string())]
        );
    }

    #[test]
    fn exact_fill_has_no_padding() {
        let tok = ByteTokenizer;
        let outcome = pack(&rendered(&[("abcdefg", "xyz")]), &tok, 8, 4);
        assert_eq!(outcome.batches.len(), 1);
        let batch = &outcome.batches[0];
        assert!(!batch.input_tokens.contains(&ByteTokenizer::PAD));
        assert!(!batch.target_tokens.contains(&ByteTokenizer::PAD));
        assert!(batch.input_segments.iter().all(|&s| s == 1));
    }

    #[test]
    fn oversize_example_is_dropped_with_count() {
        let tok = ByteTokenizer;
        let outcome = pack(&rendered(&[("123456789", "x"), ("ok", "y")]), &tok, 8, 4);
        assert_eq!(outcome.dropped, 1);
        assert_eq!(outcome.batches.len(), 1);
        let pairs = unpack(&outcome.batches[0], &tok).unwrap();
        assert_eq!(pairs, vec![("ok".to_string(), "y".to_string())]);
    }

    #[test]
    fn overflow_closes_batch() {
        let tok = ByteTokenizer;
        // Third example no longer fits the input budget.
        let outcome = pack(&rendered(&[("ab", "x"), ("cd", "y"), ("ef", "z")]), &tok, 8, 16);
        assert_eq!(outcome.batches.len(), 2);
        let all: Vec<(String, String)> = outcome
            .batches
            .iter()
            .flat_map(|b| unpack(b, &tok).unwrap())
            .collect();
        assert_eq!(all.len(), 3);
        assert_eq!(all[2].0, "ef");
    }

    #[test]
    fn unpack_all_padding_batch_is_empty() {
        let tok = ByteTokenizer;
        let batch = PackedBatch {
            input_tokens: vec![ByteTokenizer::PAD; 4],
            target_tokens: vec![ByteTokenizer::PAD; 2],
            input_segments: vec![0; 4],
            target_segments: vec![0; 2],
            loss_mask: vec![false; 2],
        };
        assert!(unpack(&batch, &tok).unwrap().is_empty());
    }

    #[test]
    fn unpack_rejects_missing_eos() {
        let tok = ByteTokenizer;
        let batch = PackedBatch {
            input_tokens: vec![97, 98],
            target_tokens: vec![120, ByteTokenizer::EOS],
            input_segments: vec![1, 1],
            target_segments: vec![1, 1],
            loss_mask: vec![true, true],
        };
        let err = unpack(&batch, &tok).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn binary_roundtrip() {
        let tok = ByteTokenizer;
        let outcome = pack(&rendered(&[("ab", "x"), ("cd", "y"), ("ef", "z")]), &tok, 8, 4);
        let mut buf = Vec::new();
        write_batches(&mut buf, &outcome.batches).unwrap();
        let read = read_batches(&mut buf.as_slice()).unwrap();
        assert_eq!(read, outcome.batches);
    }
}
