use std::collections::{BTreeMap, HashSet};
use std::fmt::Display;

use super::reader::{Reader, Received, StepPart};
use super::TransportError;

/// All ranks' parts of one step, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledStep {
    pub step: u64,
    pub parts: Vec<StepPart>,
}

impl AssembledStep {
    pub fn payload_bytes(&self) -> u64 {
        self.parts.iter().map(|p| p.payload_bytes).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplaySummary {
    pub steps: usize,
    pub ranks: u32,
    pub payload_bytes: u64,
}

/// Reads until every rank has sent end-of-stream, handing each complete step
/// to `sink` in ascending step order. The sink is called from this thread only.
pub fn replay_loop<F, E>(reader: &mut Reader, mut sink: F) -> Result<ReplaySummary, TransportError>
where
    F: FnMut(AssembledStep) -> Result<(), E>,
    E: Display,
{
    let mut rank_count: Option<u32> = None;
    let mut pending: BTreeMap<u64, Vec<Option<StepPart>>> = BTreeMap::new();
    let mut delivered: HashSet<u64> = HashSet::new();
    let mut ended: HashSet<u32> = HashSet::new();
    let mut summary = ReplaySummary::default();

    let check_rank = |rank_count: &mut Option<u32>, rank: u32, found: u32| -> Result<u32, TransportError> {
        let expected = *rank_count.get_or_insert(found);
        if found != expected {
            return Err(TransportError::RankCountMismatch { rank, expected, found });
        }
        if rank >= expected {
            return Err(TransportError::RankOutOfRange {
                rank,
                rank_count: expected,
            });
        }
        Ok(expected)
    };

    loop {
        match reader.get_step()? {
            Received::Data(part) => {
                let count = check_rank(&mut rank_count, part.rank, part.rank_count)?;
                let (step, rank) = (part.step, part.rank);
                if delivered.contains(&step) || ended.contains(&rank) {
                    return Err(TransportError::DuplicateStep { step, rank });
                }
                let slots = pending
                    .entry(step)
                    .or_insert_with(|| vec![None; count as usize]);
                if slots[rank as usize].is_some() {
                    return Err(TransportError::DuplicateStep { step, rank });
                }
                slots[rank as usize] = Some(part);

                while let Some(entry) = pending.first_entry() {
                    if entry.get().iter().any(Option::is_none) {
                        break;
                    }
                    let (step, slots) = entry.remove_entry();
                    let parts: Vec<StepPart> = slots.into_iter().map(Option::unwrap).collect();
                    let assembled = AssembledStep { step, parts };
                    summary.payload_bytes += assembled.payload_bytes();
                    delivered.insert(step);
                    sink(assembled).map_err(|e| TransportError::Sink {
                        step,
                        message: e.to_string(),
                    })?;
                    summary.steps += 1;
                }
            }
            Received::EndOfStream { rank, rank_count: found } => {
                let count = check_rank(&mut rank_count, rank, found)?;
                ended.insert(rank);
                if ended.len() as u32 == count {
                    if let Some((&step, slots)) = pending.iter().next() {
                        return Err(TransportError::IncompleteStep {
                            step,
                            received: slots.iter().filter(|s| s.is_some()).count() as u32,
                            expected: count,
                        });
                    }
                    summary.ranks = count;
                    return Ok(summary);
                }
            }
        }
    }
}
