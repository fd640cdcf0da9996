use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Fixed-capacity FIFO queue. When full, the oldest entry is dropped (and
/// counted) or, in spill mode, moved to an append-only file on disk that is
/// drained before the in-memory entries.
#[derive(Debug)]
pub struct RingBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
    spill: Option<Spill>,
}

#[derive(Debug)]
struct Spill {
    path: PathBuf,
    file: File,
    len: usize,
}

impl<T: Serialize + DeserializeOwned> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
        RingBuffer { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity, dropped: 0, spill: None }
    }

    pub fn with_spill(capacity: usize, path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).truncate(true).read(true).write(true).open(&path)?;
        let mut ring = Self::new(capacity);
        ring.spill = Some(Spill { path, file, len: 0 });
        Ok(ring)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries currently held, including spilled ones.
    pub fn len(&self) -> usize {
        self.items.len() + self.spill.as_ref().map_or(0, |s| s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            let oldest = self.items.pop_front().expect("full ring is non-empty");
            let spilled = match &mut self.spill {
                Some(spill) => serde_json::to_string(&oldest)
                    .ok()
                    .and_then(|line| writeln!(spill.file, "{line}").ok())
                    .map(|_| spill.len += 1)
                    .is_some(),
                None => false,
            };
            if !spilled {
                self.dropped += 1;
            }
        }
        self.items.push_back(item);
    }

    /// Removes up to `max` of the oldest entries, spilled entries first.
    pub fn drain(&mut self, max: usize) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(spill) = &mut self.spill {
            if spill.len > 0 {
                match read_spill(spill) {
                    Ok(mut spilled) => {
                        // whatever does not fit the batch goes back to memory, ahead of newer items
                        let rest = spilled.split_off(spilled.len().min(max));
                        for item in rest.into_iter().rev() {
                            self.items.push_front(item);
                        }
                        out = spilled;
                    }
                    Err(_) => {
                        self.dropped += spill.len as u64;
                        spill.len = 0;
                    }
                }
            }
        }
        let take = max.saturating_sub(out.len()).min(self.items.len());
        out.extend(self.items.drain(..take));
        out
    }
}

fn read_spill<T: DeserializeOwned>(spill: &mut Spill) -> io::Result<Vec<T>> {
    spill.file.flush()?;
    let reader = BufReader::new(File::open(&spill.path)?);
    let mut out = Vec::with_capacity(spill.len);
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    spill.file.set_len(0)?;
    use std::io::Seek;
    spill.file.seek(io::SeekFrom::Start(0))?;
    spill.len = 0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_oldest_and_counts() {
        let mut r = RingBuffer::new(4);
        for i in 0..6u32 {
            r.push(i);
        }
        assert_eq!(r.len(), 4);
        assert_eq!(r.dropped(), 2);
        assert_eq!(r.drain(usize::MAX), vec![2, 3, 4, 5]);
    }

    #[test]
    fn drain_takes_a_prefix() {
        let mut r = RingBuffer::new(8);
        for i in 0..5u32 {
            r.push(i);
        }
        assert_eq!(r.drain(2), vec![0, 1]);
        r.push(9);
        assert_eq!(r.drain(10), vec![2, 3, 4, 9]);
        assert!(r.is_empty());
    }

    #[test]
    fn spill_mode_loses_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RingBuffer::with_spill(3, dir.path().join("spill.jsonl")).unwrap();
        for i in 0..10u32 {
            r.push(i);
        }
        assert_eq!(r.dropped(), 0);
        assert_eq!(r.len(), 10);
        assert_eq!(r.drain(4), vec![0, 1, 2, 3]);
        r.push(10);
        assert_eq!(r.drain(100), (4..=10).collect::<Vec<_>>());
    }
}
