//! Length-prefixed wire protocol for out-of-process denoisers.
//!
//! Every message is a little-endian `u64` byte count followed by the
//! payload. A request is a JSON header, then one noisy PFM per frame, then
//! per frame the packed condition, its mask and the pooled mask. The
//! response is one PFM per frame. A process serving the protocol reads
//! requests from stdin until EOF.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::ops::Range;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::pfm::{from_bytes, to_bytes, Pfm};
use crate::condition::{DepthNormalization, PackLayout, PackedCondition};
use crate::error::{Error, Result};
use crate::image::{Grid, Rgb};
use crate::sampler::{DenoiseRequest, DenoiseStage, Denoiser};

/// Messages above this size are rejected rather than allocated.
pub const MAX_MESSAGE_BYTES: u64 = 1 << 32;

pub fn write_message(w: &mut impl Write, payload: &[u8]) -> Result<()> {
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

/// `Ok(None)` on a clean EOF before the length prefix.
pub fn read_message(r: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Format("truncated message length".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u64::from_le_bytes(len);
    if len > MAX_MESSAGE_BYTES {
        return Err(Error::SizeGuard(format!("message of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated message payload".into()))?;
    Ok(Some(buf))
}

fn expect_message(r: &mut impl Read) -> Result<Vec<u8>> {
    read_message(r)?.ok_or_else(|| Error::Format("unexpected end of stream".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub clip_index: usize,
    pub stage: DenoiseStage,
    pub frame_start: usize,
    pub frame_end: usize,
    pub layout: PackLayout,
    pub normalization: DepthNormalization,
    pub noise_levels: Vec<f64>,
    pub seed: u64,
    pub view_indices: Vec<usize>,
}

/// A decoded request that owns its buffers.
#[derive(Clone, Debug)]
pub struct OwnedRequest {
    pub header: RequestHeader,
    pub noisy: Vec<Grid<Rgb>>,
    pub conditions: Vec<PackedCondition>,
}

impl OwnedRequest {
    pub fn frames(&self) -> Range<usize> {
        self.header.frame_start..self.header.frame_end
    }

    pub fn as_request(&self) -> DenoiseRequest<'_> {
        DenoiseRequest {
            clip_index: self.header.clip_index,
            stage: self.header.stage,
            frames: self.frames(),
            layout: self.header.layout,
            normalization: self.header.normalization,
            noisy: &self.noisy,
            noise_levels: &self.header.noise_levels,
            conditions: &self.conditions,
            seed: self.header.seed,
        }
    }
}

pub fn write_request(w: &mut impl Write, req: &DenoiseRequest<'_>) -> Result<()> {
    let header = RequestHeader {
        clip_index: req.clip_index,
        stage: req.stage,
        frame_start: req.frames.start,
        frame_end: req.frames.end,
        layout: req.layout,
        normalization: req.normalization,
        noise_levels: req.noise_levels.to_vec(),
        seed: req.seed,
        view_indices: req.conditions.iter().map(|c| c.view_index).collect(),
    };
    write_message(w, &serde_json::to_vec(&header)?)?;
    for g in req.noisy {
        write_message(w, &to_bytes(&Pfm::from_rgb(g))?)?;
    }
    for c in req.conditions {
        write_message(w, &to_bytes(&Pfm::from_rgb(&c.grid))?)?;
        write_message(w, &to_bytes(&Pfm::from_scalar(&c.mask))?)?;
        write_message(w, &to_bytes(&Pfm::from_scalar(&c.pooled_mask))?)?;
    }
    Ok(())
}

/// `Ok(None)` when the stream ends cleanly before a new request.
pub fn read_request(r: &mut impl Read) -> Result<Option<OwnedRequest>> {
    let Some(head) = read_message(r)? else {
        return Ok(None);
    };
    let header: RequestHeader = serde_json::from_slice(&head)?;
    header.layout.validate()?;
    let n = header.frame_end.saturating_sub(header.frame_start);
    if n == 0 || header.noise_levels.len() != n || header.view_indices.len() != n {
        return Err(Error::Format("request header frame counts disagree".into()));
    }
    let (w, h) = (header.layout.width, header.layout.packed_height());
    let check = |g: &Grid<_>| -> Result<()> {
        if g.dims() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "grid is {}x{}, layout expects {w}x{h}",
                g.width(),
                g.height()
            )));
        }
        Ok(())
    };
    let mut noisy = Vec::with_capacity(n);
    for _ in 0..n {
        let g = from_bytes(&expect_message(r)?)?.to_rgb()?;
        check(&g.map(|_| ()))?;
        noisy.push(g);
    }
    let mut conditions = Vec::with_capacity(n);
    for &view_index in &header.view_indices {
        let grid = from_bytes(&expect_message(r)?)?.to_rgb()?;
        let mask = from_bytes(&expect_message(r)?)?.to_scalar()?;
        let pooled_mask = from_bytes(&expect_message(r)?)?.to_scalar()?;
        check(&grid.map(|_| ()))?;
        check(&mask.map(|_| ()))?;
        if pooled_mask.dims() != header.layout.pooled_dims() {
            return Err(Error::DimensionMismatch("pooled mask size".into()));
        }
        conditions.push(PackedCondition {
            view_index,
            layout: header.layout,
            normalization: header.normalization,
            grid,
            mask,
            pooled_mask,
        });
    }
    Ok(Some(OwnedRequest {
        header,
        noisy,
        conditions,
    }))
}

pub fn write_response(w: &mut impl Write, frames: &[Grid<Rgb>]) -> Result<()> {
    for g in frames {
        write_message(w, &to_bytes(&Pfm::from_rgb(g))?)?;
    }
    Ok(())
}

pub fn read_response(r: &mut impl Read, n: usize) -> Result<Vec<Grid<Rgb>>> {
    (0..n)
        .map(|_| from_bytes(&expect_message(r)?)?.to_rgb())
        .collect()
}

/// Answers requests from `reader` until EOF.
pub fn serve_denoiser(reader: &mut impl Read, writer: &mut impl Write, denoiser: &mut impl Denoiser) -> Result<()> {
    while let Some(req) = read_request(reader)? {
        let out = denoiser.denoise(&req.as_request())?;
        write_response(writer, &out)?;
        writer.flush()?;
    }
    Ok(())
}

/// A denoiser running as a child process that speaks the protocol on its
/// stdin and stdout.
pub struct ExternDenoiser {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl ExternDenoiser {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Denoiser(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        })
    }
}

impl Denoiser for ExternDenoiser {
    fn denoise(&mut self, request: &DenoiseRequest<'_>) -> Result<Vec<Grid<Rgb>>> {
        let stdin = self.stdin.as_mut().expect("stdin open until drop");
        let io = |e: Error| Error::Denoiser(format!("external denoiser: {e}"));
        write_request(stdin, request).map_err(io)?;
        stdin.flush().map_err(|e| io(e.into()))?;
        read_response(&mut self.stdout, request.frames.len()).map_err(io)
    }
}

impl Drop for ExternDenoiser {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.wait();
    }
}
