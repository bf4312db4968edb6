use super::NodeError;

pub const MAGIC: &[u8; 8] = b"LDPCSTO1";
pub const HEADER_LEN: usize = 36;

/// Bytes per chunk for a file of `file_size` bytes cut into `n` data chunks.
/// The last data chunk is zero-padded up to this length.
pub fn chunk_len(file_size: u64, n: usize) -> u64 {
    assert!(n >= 1, "n must be at least 1");
    file_size.div_ceil(n as u64)
}

/// Self-describing prefix of every stored chunk. All fields little-endian:
///
/// ```text
/// 0..8    magic "LDPCSTO1"
/// 8..16   file_size (u64)
/// 16..20  n (u32)
/// 20..24  m (u32)
/// 24..28  index (u32)
/// 28..36  graph fingerprint (u64)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChunkHeader {
    pub file_size: u64,
    pub n: u32,
    pub m: u32,
    pub index: u32,
    pub graph_fp: u64,
}

impl ChunkHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(MAGIC);
        out[8..16].copy_from_slice(&self.file_size.to_le_bytes());
        out[16..20].copy_from_slice(&self.n.to_le_bytes());
        out[20..24].copy_from_slice(&self.m.to_le_bytes());
        out[24..28].copy_from_slice(&self.index.to_le_bytes());
        out[28..36].copy_from_slice(&self.graph_fp.to_le_bytes());
        out
    }

    /// Parses the first 36 bytes of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<ChunkHeader, NodeError> {
        if bytes.len() < HEADER_LEN {
            return Err(NodeError::BadChunk(format!("{} bytes is shorter than a header", bytes.len())));
        }
        if &bytes[0..8] != MAGIC {
            return Err(NodeError::BadChunk("bad magic".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let header = ChunkHeader {
            file_size: u64_at(8),
            n: u32_at(16),
            m: u32_at(20),
            index: u32_at(24),
            graph_fp: u64_at(28),
        };
        if header.n == 0 {
            return Err(NodeError::BadChunk("n is zero".into()));
        }
        if u64::from(header.index) >= u64::from(header.n) + u64::from(header.m) {
            return Err(NodeError::BadChunk(format!(
                "index {} out of range for n={} m={}",
                header.index, header.n, header.m
            )));
        }
        Ok(header)
    }

    pub fn payload_len(&self) -> u64 {
        chunk_len(self.file_size, self.n as usize)
    }

    /// Checks a complete stored chunk: valid header and exact payload length.
    pub fn validate_chunk(bytes: &[u8]) -> Result<ChunkHeader, NodeError> {
        let header = ChunkHeader::parse(bytes)?;
        let payload = (bytes.len() - HEADER_LEN) as u64;
        if payload != header.payload_len() {
            return Err(NodeError::BadChunk(format!(
                "payload is {payload} bytes, header implies {}",
                header.payload_len()
            )));
        }
        Ok(header)
    }

    /// The same file's header for another chunk index.
    pub fn with_index(&self, index: usize) -> ChunkHeader {
        ChunkHeader {
            index: index as u32,
            ..*self
        }
    }

    /// Equal apart from the index.
    pub fn same_file(&self, other: &ChunkHeader) -> bool {
        self.with_index(0) == other.with_index(0)
    }
}
