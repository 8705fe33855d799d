//! Frame ingestion: the length-prefixed live stream format and directory sources.
//!
//! Stream records are `u32 width | u32 height | u64 timestamp_ms | w*h*3 RGB
//! bytes`, all integers big-endian.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imaging::{decode_frame, sniff_format, Frame, ImagingError};

/// Upper bound per side for stream records, guarding against corrupt headers.
const MAX_STREAM_DIMENSION: u32 = 1 << 14;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("truncated stream record: expected {expected} pixel bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("implausible stream record dimensions {0}x{1}")]
    BadDimensions(u32, u32),
    #[error("input path {0} is neither a directory nor a file")]
    BadInput(PathBuf),
}

/// Append one frame record to a stream.
pub fn write_frame_record<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.width.to_be_bytes())?;
    w.write_all(&frame.height.to_be_bytes())?;
    w.write_all(&frame.timestamp_ms.to_be_bytes())?;
    w.write_all(&frame.data)
}

/// Read one frame record; `Ok(None)` on clean end of stream. The caller
/// assigns `frame_id`.
pub fn read_frame_record<R: Read>(r: &mut R) -> Result<Option<Frame>, StreamError> {
    let mut header = [0u8; 16];
    match r.read_exact(&mut header[..1]) {
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        other => other?,
    }
    r.read_exact(&mut header[1..])?;
    let width = u32::from_be_bytes(header[0..4].try_into().unwrap());
    let height = u32::from_be_bytes(header[4..8].try_into().unwrap());
    let timestamp_ms = u64::from_be_bytes(header[8..16].try_into().unwrap());
    if width == 0 || height == 0 || width > MAX_STREAM_DIMENSION || height > MAX_STREAM_DIMENSION
    {
        return Err(StreamError::BadDimensions(width, height));
    }
    let expected = width as usize * height as usize * 3;
    let mut data = vec![0u8; expected];
    let mut got = 0usize;
    while got < expected {
        match r.read(&mut data[got..])? {
            0 => return Err(StreamError::Truncated { expected, got }),
            n => got += n,
        }
    }
    let mut frame = Frame::new(width, height, data)?;
    frame.timestamp_ms = timestamp_ms;
    Ok(Some(frame))
}

/// Ordered frame input: a directory of image files or a stream file.
pub enum FrameSource {
    Directory { files: Vec<PathBuf>, next: usize },
    Stream { reader: BufReader<File>, next_id: u64 },
}

impl FrameSource {
    /// Open a path as a frame source. Directories are read as sorted
    /// `.ppm`/`.png` files; regular files as frame streams.
    pub fn open(path: &Path) -> Result<Self, StreamError> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("ppm") | Some("png")
                    )
                })
                .collect();
            files.sort();
            Ok(FrameSource::Directory { files, next: 0 })
        } else if path.is_file() {
            Ok(FrameSource::Stream {
                reader: BufReader::new(File::open(path)?),
                next_id: 0,
            })
        } else {
            Err(StreamError::BadInput(path.to_path_buf()))
        }
    }
}

impl Iterator for FrameSource {
    type Item = Result<Frame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            FrameSource::Directory { files, next } => {
                let path = files.get(*next)?;
                let id = *next as u64;
                *next += 1;
                let item = std::fs::read(path)
                    .map_err(StreamError::from)
                    .and_then(|bytes| {
                        let fmt = sniff_format(&bytes)?;
                        let mut frame = decode_frame(&bytes, fmt)?;
                        frame.frame_id = id;
                        // directory sources carry no capture time; assign a
                        // nominal 10 fps clock so runs stay reproducible
                        frame.timestamp_ms = id * 100;
                        Ok(frame)
                    });
                Some(item)
            }
            FrameSource::Stream { reader, next_id } => match read_frame_record(reader) {
                Ok(Some(mut frame)) => {
                    frame.frame_id = *next_id;
                    *next_id += 1;
                    Some(Ok(frame))
                }
                Ok(None) => None,
                Err(e) => Some(Err(e)),
            },
        }
    }
}
