//! Sensor-data upload with bounded retries and a spill queue.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{Request, Response};
use super::transport::{Transport, TransportError};
use crate::data::SensorReading;
use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;
pub const DEFAULT_MAX_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBatch {
    pub client_id: String,
    /// Per-client sequence number; the server ignores repeats.
    pub seq: u64,
    pub readings: Vec<SensorReading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl SensorBatch {
    pub fn new(client_id: impl Into<String>, seq: u64, readings: Vec<SensorReading>, labels: Option<Vec<usize>>) -> Result<Self> {
        let b = Self {
            client_id: client_id.into(),
            seq,
            readings,
            labels,
        };
        b.validate()?;
        Ok(b)
    }

    /// Non-empty, labels aligned, and timestamps non-decreasing per sensor.
    pub fn validate(&self) -> Result<()> {
        if self.readings.is_empty() {
            return Err(Error::InvalidConfig("empty sensor batch".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.readings.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.readings.len(),
                    actual: l.len(),
                });
            }
        }
        let mut last: std::collections::HashMap<&str, u64> = Default::default();
        for r in &self.readings {
            if let Some(&prev) = last.get(r.sensor_id.as_str()) {
                if r.timestamp < prev {
                    return Err(Error::InvalidConfig(format!(
                        "readings of sensor `{}` out of time order ({} after {})",
                        r.sensor_id, r.timestamp, prev
                    )));
                }
            }
            last.insert(&r.sensor_id, r.timestamp);
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sensor reading".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    /// Removes up to `n` of the oldest readings, returning how many went.
    fn drop_front(&mut self, n: usize) -> usize {
        let n = n.min(self.readings.len());
        self.readings.drain(..n);
        if let Some(l) = &mut self.labels {
            l.drain(..n);
        }
        n
    }
}

/// Batches waiting for the link, capped by total reading count.
#[derive(Debug)]
pub struct UploadQueue {
    batches: VecDeque<SensorBatch>,
    capacity: usize,
    readings: usize,
    dropped: u64,
    path: Option<PathBuf>,
}

impl UploadQueue {
    pub fn in_memory(capacity: usize) -> Self {
        Self {
            batches: VecDeque::new(),
            capacity,
            readings: 0,
            dropped: 0,
            path: None,
        }
    }

    /// Queue mirrored to a JSON-lines file; existing entries are restored.
    pub fn persistent(path: impl AsRef<Path>, capacity: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut q = Self::in_memory(capacity);
        if path.exists() {
            let f = fs::File::open(&path)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<SensorBatch>(&line) {
                    Ok(b) => q.push_inner(b),
                    Err(e) => log::warn!("{}:{}: skipping corrupt queued batch: {e}", path.display(), i + 1),
                }
            }
        }
        q.path = Some(path);
        q.flush()?;
        Ok(q)
    }

    pub fn len_readings(&self) -> usize {
        self.readings
    }

    pub fn len_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, batch: SensorBatch) -> Result<()> {
        self.push_inner(batch);
        self.flush()
    }

    fn push_inner(&mut self, batch: SensorBatch) {
        self.readings += batch.len();
        self.batches.push_back(batch);
        while self.readings > self.capacity {
            let excess = self.readings - self.capacity;
            let front = self.batches.front_mut().expect("readings > 0 implies a batch");
            let n = front.drop_front(excess);
            self.readings -= n;
            self.dropped += n as u64;
            if front.is_empty() {
                self.batches.pop_front();
            }
        }
    }

    fn front(&self) -> Option<&SensorBatch> {
        self.batches.front()
    }

    fn pop_front(&mut self) -> Result<()> {
        if let Some(b) = self.batches.pop_front() {
            self.readings -= b.len();
        }
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            for b in &self.batches {
                serde_json::to_writer(&mut f, b).map_err(std::io::Error::other)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UploadReport {
    /// Readings of the new batch the server acknowledged (0 if spilled).
    pub acked: usize,
    /// Previously queued readings delivered during this call.
    pub replayed: usize,
    /// Readings placed in the spill queue during this call.
    pub spilled: usize,
}

pub struct Uploader {
    client_id: String,
    next_seq: u64,
    pub max_retries: usize,
    pub timeout: Duration,
    queue: UploadQueue,
}

impl Uploader {
    pub fn new(client_id: impl Into<String>, queue: UploadQueue) -> Self {
        // Continue numbering after anything restored from disk.
        let next_seq = queue.batches.iter().map(|b| b.seq + 1).max().unwrap_or(0);
        Self {
            client_id: client_id.into(),
            next_seq,
            max_retries: DEFAULT_MAX_RETRIES,
            timeout: Duration::from_secs(2),
            queue,
        }
    }

    pub fn with_first_seq(mut self, seq: u64) -> Self {
        self.next_seq = self.next_seq.max(seq);
        self
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn queue(&self) -> &UploadQueue {
        &self.queue
    }

    pub fn make_batch(&mut self, readings: Vec<SensorReading>, labels: Option<Vec<usize>>) -> Result<SensorBatch> {
        let b = SensorBatch::new(self.client_id.clone(), self.next_seq, readings, labels)?;
        self.next_seq += 1;
        Ok(b)
    }

    /// Sends `batch` with retries; on failure it joins the spill queue. After a
    /// successful send the queue is replayed oldest first until the link fails.
    pub fn upload_batch<T: Transport + ?Sized>(&mut self, transport: &mut T, batch: SensorBatch) -> Result<UploadReport> {
        batch.validate()?;
        let mut report = UploadReport::default();
        match self.send_with_retry(transport, &batch) {
            Ok(n) => report.acked = n,
            Err(e) => {
                log::debug!("upload of batch {} failed: {e}", batch.seq);
                report.spilled = batch.len();
                self.queue.push(batch)?;
                return Ok(report);
            }
        }
        report.replayed = self.replay(transport)?;
        Ok(report)
    }

    /// Replays queued batches until one fails; returns readings delivered.
    pub fn replay<T: Transport + ?Sized>(&mut self, transport: &mut T) -> Result<usize> {
        let mut delivered = 0;
        while let Some(b) = self.queue.front().cloned() {
            match self.send_with_retry(transport, &b) {
                Ok(n) => {
                    delivered += n;
                    self.queue.pop_front()?;
                }
                Err(_) => break,
            }
        }
        Ok(delivered)
    }

    fn send_with_retry<T: Transport + ?Sized>(&self, transport: &mut T, batch: &SensorBatch) -> Result<usize, TransportError> {
        let req = Request::PushData { batch: batch.clone() };
        let mut last = TransportError::Timeout;
        for _ in 0..=self.max_retries {
            match transport.request(&req, self.timeout) {
                Ok(Response::Ack { stored }) => return Ok(stored),
                Ok(Response::Error { code, message }) => {
                    return Err(TransportError::Protocol(format!("{code:?}: {message}")));
                }
                Ok(other) => return Err(TransportError::Protocol(format!("unexpected reply {other:?}"))),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
