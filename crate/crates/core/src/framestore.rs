//! Fixed-size binary chunks of detector frames.
//!
//! A chunk is a `capacity`-sized byte block with three regions:
//!
//! ```text
//! +--------------------------------------------------------------+
//! | hit records (12 B each), growing forward ->                  |
//! |                  ...zero fill...                              |
//! |        <- frame descriptors (28 B each), growing backward    |
//! | u32 frame count (last 4 bytes)                               |
//! +--------------------------------------------------------------+
//! ```
//!
//! A hit record is three little-endian IEEE-754 f32 (x, y, z in mm). A
//! frame descriptor is a little-endian u64 frame id, four u32 hit indices
//! marking where each layer's hits start, and a u32 one-past-the-end index.
//! Descriptor k sits at byte `capacity - 4 - 28*(k+1)`. Frames are packed
//! contiguously, so descriptor k starts where descriptor k-1 ended; the
//! unused middle stays zero, making sealed chunks a pure function of the
//! pushed frame sequence.
//!
//! A chunk file is a plain concatenation of such blocks (extension `.m3c`);
//! capacity and the geometry fingerprint travel in a small JSON sidecar.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DetectorGeometry, NUM_LAYERS};

pub const HIT_BYTES: usize = 12;
pub const DESCRIPTOR_BYTES: usize = 8 + 4 * NUM_LAYERS + 4;
pub const FOOTER_BYTES: usize = 4;
pub const DEFAULT_CHUNK_CAPACITY: usize = 4 * 1024 * 1024;

/// Smallest chunk that can hold one empty frame.
pub const MIN_CHUNK_CAPACITY: usize = DESCRIPTOR_BYTES + FOOTER_BYTES;

/// One stored hit: x, y, z in mm exactly as serialized.
pub type RawHit = [f32; 3];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("chunk capacity {capacity} below minimum {MIN_CHUNK_CAPACITY}")]
    CapacityTooSmall { capacity: usize },
    #[error("frame {frame_id} needs {needed} bytes, exceeding chunk capacity {capacity}")]
    FrameTooLarge {
        frame_id: u64,
        needed: usize,
        capacity: usize,
    },
}

/// Parse failure, naming the first violated layout invariant.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorruptChunk {
    #[error("chunk has {actual} bytes, expected capacity {expected}")]
    WrongLength { expected: usize, actual: usize },
    #[error("frame count {frames} needs more descriptor bytes than capacity {capacity} holds")]
    DescriptorAreaOverflow { frames: u32, capacity: usize },
    #[error("frame {frame}: layer_start[{layer}] exceeds layer_start[{next}]", next = layer + 1)]
    LayerOrder { frame: u32, layer: usize },
    #[error("frame {frame}: end_index below layer_start[3]")]
    EndBeforeStart { frame: u32 },
    #[error("frame {frame}: hits are not contiguous with the previous frame")]
    NotContiguous { frame: u32 },
    #[error("frame {frame}: hit indices reach into the descriptor area")]
    HitAreaOverlap { frame: u32 },
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}: file size {size} is not a multiple of chunk capacity {capacity}")]
    RaggedFile {
        path: PathBuf,
        size: u64,
        capacity: usize,
    },
    #[error("{path}: {source}")]
    Corrupt { path: PathBuf, source: CorruptChunk },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Frame location inside a chunk: hit indices, not byte offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameDescriptor {
    pub frame_id: u64,
    pub layer_start: [u32; NUM_LAYERS],
    pub end_index: u32,
}

impl FrameDescriptor {
    fn write(&self, out: &mut [u8]) {
        out[0..8].copy_from_slice(&self.frame_id.to_le_bytes());
        for (l, s) in self.layer_start.iter().enumerate() {
            out[8 + 4 * l..12 + 4 * l].copy_from_slice(&s.to_le_bytes());
        }
        out[24..28].copy_from_slice(&self.end_index.to_le_bytes());
    }

    fn read(raw: &[u8]) -> Self {
        let u32_at = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap());
        Self {
            frame_id: u64::from_le_bytes(raw[0..8].try_into().unwrap()),
            layer_start: [u32_at(8), u32_at(12), u32_at(16), u32_at(20)],
            end_index: u32_at(24),
        }
    }

    pub fn hit_count(&self) -> usize {
        (self.end_index - self.layer_start[0]) as usize
    }
}

/// Per-layer hit slices of one frame, ready to be pushed into a chunk.
#[derive(Clone, Copy, Debug)]
pub struct FrameHits<'a> {
    pub frame_id: u64,
    pub layers: [&'a [RawHit]; NUM_LAYERS],
}

impl FrameHits<'_> {
    pub fn hit_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    fn byte_cost(&self) -> usize {
        self.hit_count() * HIT_BYTES + DESCRIPTOR_BYTES
    }
}

// ---------------------------------------------------------------------------
// building
// ---------------------------------------------------------------------------

/// Accumulates frames into one chunk until it is full, then seals to bytes.
pub struct ChunkBuilder {
    capacity: usize,
    hit_bytes: Vec<u8>,
    descriptors: Vec<FrameDescriptor>,
    hit_count: u32,
}

impl ChunkBuilder {
    pub fn new(capacity: usize) -> Result<Self, StoreError> {
        if capacity < MIN_CHUNK_CAPACITY || capacity > u32::MAX as usize {
            return Err(StoreError::CapacityTooSmall { capacity });
        }
        Ok(Self {
            capacity,
            hit_bytes: Vec::new(),
            descriptors: Vec::new(),
            hit_count: 0,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    fn bytes_used(&self) -> usize {
        self.hit_bytes.len() + self.descriptors.len() * DESCRIPTOR_BYTES + FOOTER_BYTES
    }

    /// Appends a frame. `Ok(false)` means the chunk is full and must be
    /// sealed first; an error means the frame cannot fit in any chunk of
    /// this capacity.
    pub fn push(&mut self, frame: &FrameHits) -> Result<bool, StoreError> {
        let cost = frame.byte_cost();
        if cost + FOOTER_BYTES > self.capacity {
            return Err(StoreError::FrameTooLarge {
                frame_id: frame.frame_id,
                needed: cost + FOOTER_BYTES,
                capacity: self.capacity,
            });
        }
        if self.bytes_used() + cost > self.capacity {
            return Ok(false);
        }
        let mut layer_start = [0u32; NUM_LAYERS];
        let mut next = self.hit_count;
        for (l, hits) in frame.layers.iter().enumerate() {
            layer_start[l] = next;
            for h in *hits {
                for c in h {
                    self.hit_bytes.extend_from_slice(&c.to_le_bytes());
                }
            }
            next += hits.len() as u32;
        }
        self.hit_count = next;
        self.descriptors.push(FrameDescriptor {
            frame_id: frame.frame_id,
            layer_start,
            end_index: next,
        });
        Ok(true)
    }

    /// Produces the final `capacity`-sized block and resets the builder.
    pub fn seal(&mut self) -> Vec<u8> {
        let mut out = vec![0u8; self.capacity];
        out[..self.hit_bytes.len()].copy_from_slice(&self.hit_bytes);
        for (k, d) in self.descriptors.iter().enumerate() {
            let at = self.capacity - FOOTER_BYTES - DESCRIPTOR_BYTES * (k + 1);
            d.write(&mut out[at..at + DESCRIPTOR_BYTES]);
        }
        let count = self.descriptors.len() as u32;
        out[self.capacity - FOOTER_BYTES..].copy_from_slice(&count.to_le_bytes());
        self.hit_bytes.clear();
        self.descriptors.clear();
        self.hit_count = 0;
        out
    }
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

/// Decoded chunk: all hits plus the descriptor table, fully validated.
#[derive(Debug)]
pub struct ParsedChunk {
    pub hits: Vec<RawHit>,
    pub frames: Vec<FrameDescriptor>,
}

impl ParsedChunk {
    pub fn parse(bytes: &[u8], capacity: usize) -> Result<Self, CorruptChunk> {
        if bytes.len() != capacity || capacity < MIN_CHUNK_CAPACITY {
            return Err(CorruptChunk::WrongLength {
                expected: capacity,
                actual: bytes.len(),
            });
        }
        let count = u32::from_le_bytes(bytes[capacity - FOOTER_BYTES..].try_into().unwrap());
        let table = count as usize * DESCRIPTOR_BYTES + FOOTER_BYTES;
        if table > capacity {
            return Err(CorruptChunk::DescriptorAreaOverflow {
                frames: count,
                capacity,
            });
        }
        let max_hits = (capacity - table) / HIT_BYTES;
        let mut frames = Vec::with_capacity(count as usize);
        let mut prev_end = 0u32;
        for k in 0..count {
            let at = capacity - FOOTER_BYTES - DESCRIPTOR_BYTES * (k as usize + 1);
            let d = FrameDescriptor::read(&bytes[at..at + DESCRIPTOR_BYTES]);
            if d.layer_start[0] != prev_end {
                return Err(CorruptChunk::NotContiguous { frame: k });
            }
            for l in 0..NUM_LAYERS - 1 {
                if d.layer_start[l + 1] < d.layer_start[l] {
                    return Err(CorruptChunk::LayerOrder { frame: k, layer: l });
                }
            }
            if d.end_index < d.layer_start[NUM_LAYERS - 1] {
                return Err(CorruptChunk::EndBeforeStart { frame: k });
            }
            if d.end_index as usize > max_hits {
                return Err(CorruptChunk::HitAreaOverlap { frame: k });
            }
            prev_end = d.end_index;
            frames.push(d);
        }
        let mut hits = Vec::with_capacity(prev_end as usize);
        for i in 0..prev_end as usize {
            let at = i * HIT_BYTES;
            let f = |o: usize| f32::from_le_bytes(bytes[at + o..at + o + 4].try_into().unwrap());
            hits.push([f(0), f(4), f(8)]);
        }
        Ok(Self { hits, frames })
    }

    pub fn frame(&self, i: usize) -> FrameRef<'_> {
        FrameRef {
            chunk: self,
            desc: &self.frames[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FrameRef<'_>> {
        self.frames
            .iter()
            .map(move |desc| FrameRef { chunk: self, desc })
    }
}

/// Borrowed view of one frame inside a parsed chunk.
#[derive(Clone, Copy)]
pub struct FrameRef<'a> {
    chunk: &'a ParsedChunk,
    pub desc: &'a FrameDescriptor,
}

impl<'a> FrameRef<'a> {
    pub fn frame_id(&self) -> u64 {
        self.desc.frame_id
    }

    pub fn layer(&self, l: usize) -> &'a [RawHit] {
        let start = self.desc.layer_start[l] as usize;
        let end = if l + 1 < NUM_LAYERS {
            self.desc.layer_start[l + 1] as usize
        } else {
            self.desc.end_index as usize
        };
        &self.chunk.hits[start..end]
    }

    pub fn layers(&self) -> [&'a [RawHit]; NUM_LAYERS] {
        [self.layer(0), self.layer(1), self.layer(2), self.layer(3)]
    }
}

// ---------------------------------------------------------------------------
// chunk files
// ---------------------------------------------------------------------------

/// Streams frames into consecutive chunks behind any writer.
pub struct ChunkStreamWriter<W: Write> {
    out: W,
    builder: ChunkBuilder,
    chunks: u64,
    frames: u64,
}

impl<W: Write> ChunkStreamWriter<W> {
    pub fn new(out: W, capacity: usize) -> Result<Self, StoreError> {
        Ok(Self {
            out,
            builder: ChunkBuilder::new(capacity)?,
            chunks: 0,
            frames: 0,
        })
    }

    pub fn push(&mut self, frame: &FrameHits) -> Result<(), FileError> {
        if !self.builder.push(frame)? {
            self.flush_chunk()?;
            if !self.builder.push(frame)? {
                unreachable!("frame rejected by an empty builder after the size check");
            }
        }
        self.frames += 1;
        Ok(())
    }

    fn flush_chunk(&mut self) -> Result<(), FileError> {
        if !self.builder.is_empty() {
            let block = self.builder.seal();
            self.out.write_all(&block)?;
            self.chunks += 1;
        }
        Ok(())
    }

    /// Seals the trailing chunk and returns (chunks, frames) written.
    pub fn finish(mut self) -> Result<(u64, u64), FileError> {
        self.flush_chunk()?;
        self.out.flush()?;
        Ok((self.chunks, self.frames))
    }
}

/// Reads a chunk file back as whole validated chunks.
pub fn read_chunk_file(path: &Path, capacity: usize) -> Result<Vec<ParsedChunk>, FileError> {
    let raw = fs::read(path)?;
    split_blocks(&raw, capacity)
        .map_err(|(size, capacity)| FileError::RaggedFile {
            path: path.into(),
            size,
            capacity,
        })?
        .iter()
        .map(|block| {
            ParsedChunk::parse(block, capacity).map_err(|source| FileError::Corrupt {
                path: path.into(),
                source,
            })
        })
        .collect()
}

/// Reads the raw capacity-sized blocks without decoding them.
pub fn read_chunk_blocks(path: &Path, capacity: usize) -> Result<Vec<Vec<u8>>, FileError> {
    let raw = fs::read(path)?;
    let blocks =
        split_blocks(&raw, capacity).map_err(|(size, capacity)| FileError::RaggedFile {
            path: path.into(),
            size,
            capacity,
        })?;
    Ok(blocks.iter().map(|b| b.to_vec()).collect())
}

fn split_blocks(raw: &[u8], capacity: usize) -> Result<Vec<&[u8]>, (u64, usize)> {
    if capacity == 0 || !raw.len().is_multiple_of(capacity) {
        return Err((raw.len() as u64, capacity));
    }
    Ok(raw.chunks(capacity).collect())
}

// ---------------------------------------------------------------------------
// stream metadata sidecar
// ---------------------------------------------------------------------------

/// JSON sidecar describing a chunk file (written next to it as `<file>.meta`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StreamMeta {
    pub capacity: u64,
    pub geometry_hash: String,
    pub frames: u64,
    pub chunks: u64,
}

pub fn meta_path(chunk_path: &Path) -> PathBuf {
    let mut os = chunk_path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

impl StreamMeta {
    pub fn save(&self, chunk_path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("meta serializes");
        fs::write(meta_path(chunk_path), text)
    }

    pub fn load(chunk_path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(meta_path(chunk_path))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Stable fingerprint of the geometry a stream was generated with.
pub fn geometry_fingerprint(geom: &DetectorGeometry<f64>) -> String {
    // FNV-1a over the shortest-roundtrip debug rendering; stable across
    // platforms because Rust pins float formatting.
    let text = format!("{geom:?}");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
