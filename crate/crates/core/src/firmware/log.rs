// Licensed under the Apache-2.0 license

//! Simulated microSD experiment store: one file of fixed-size records per
//! experiment number, one file open for writing (logging) and one open for
//! reading (slow-drip) at a time.

use std::collections::BTreeMap;

use super::record::{ExperimentRecord, RECORD_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ReadCursor {
    experiment: u16,
    index: usize,
    end: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentLog {
    files: BTreeMap<u16, Vec<[u8; RECORD_LEN]>>,
    writing: Option<(u16, u32)>,
    reading: Option<ReadCursor>,
}

impl ExperimentLog {
    /// Starts a fresh file for `experiment`, replacing any earlier file with
    /// the same number. Closes whatever was being logged. 0 only closes.
    pub fn mark(&mut self, experiment: u16) {
        self.writing = None;
        if experiment != 0 {
            self.files.insert(experiment, Vec::new());
            self.writing = Some((experiment, 0));
        }
    }

    pub fn logging(&self) -> Option<u16> {
        self.writing.map(|(id, _)| id)
    }

    /// Appends `record` to the file being logged, stamping experiment id and
    /// sequence number. Returns the stored bytes.
    pub fn append(&mut self, mut record: ExperimentRecord) -> Option<[u8; RECORD_LEN]> {
        let (id, seq) = self.writing.as_mut()?;
        record.experiment_id = *id;
        record.seq = *seq;
        *seq += 1;
        let bytes = record.encode();
        self.files.get_mut(id)?.push(bytes);
        Some(bytes)
    }

    pub fn open_for_read(&mut self, experiment: u16) {
        self.reading = self.files.get(&experiment).map(|f| ReadCursor {
            experiment,
            index: 0,
            end: f.is_empty(),
        });
    }

    pub fn close_read(&mut self) {
        self.reading = None;
    }

    /// Advances the read cursor by `k`, clamping at the last record and
    /// raising the end flag if the seek ran past it.
    pub fn seek(&mut self, k: u16) {
        let Some(cursor) = self.reading.as_mut() else {
            return;
        };
        let len = self.files.get(&cursor.experiment).map_or(0, Vec::len);
        let target = cursor.index + k as usize;
        if target >= len {
            cursor.index = len.saturating_sub(1);
            cursor.end = true;
        } else {
            cursor.index = target;
        }
    }

    /// Record under the read cursor, or zeros if nothing is open.
    pub fn current_record(&self) -> [u8; RECORD_LEN] {
        self.reading
            .and_then(|c| self.files.get(&c.experiment)?.get(c.index).copied())
            .unwrap_or([0; RECORD_LEN])
    }

    pub fn read_open(&self) -> bool {
        self.reading.is_some()
    }

    pub fn at_end(&self) -> bool {
        self.reading.is_some_and(|c| c.end)
    }

    pub fn cursor(&self) -> usize {
        self.reading.map_or(0, |c| c.index)
    }

    pub fn open_len(&self) -> usize {
        self.reading
            .and_then(|c| self.files.get(&c.experiment))
            .map_or(0, Vec::len)
    }

    pub fn experiments(&self) -> impl Iterator<Item = (u16, usize)> + '_ {
        self.files.iter().map(|(id, f)| (*id, f.len()))
    }

    pub fn records(&self, experiment: u16) -> Option<&[[u8; RECORD_LEN]]> {
        self.files.get(&experiment).map(Vec::as_slice)
    }

    /// Raw file contents: concatenated records.
    pub fn export(&self, experiment: u16) -> Option<Vec<u8>> {
        self.files
            .get(&experiment)
            .map(|f| f.iter().flatten().copied().collect())
    }

    /// Fault injection: XORs one stored byte.
    pub fn corrupt(&mut self, experiment: u16, record: usize, offset: usize, mask: u8) -> bool {
        match self
            .files
            .get_mut(&experiment)
            .and_then(|f| f.get_mut(record))
        {
            Some(r) if offset < RECORD_LEN => {
                r[offset] ^= mask;
                true
            }
            _ => false,
        }
    }
}
