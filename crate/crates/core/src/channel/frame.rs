use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::ChannelError;

pub const HEADER_LEN: usize = 5;
pub const MAX_BODY: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    ClientHello = 1,
    ServerHello = 2,
    ClientFinish = 3,
    Data = 4,
    Alert = 5,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameType::ClientHello,
            2 => FrameType::ServerHello,
            3 => FrameType::ClientFinish,
            4 => FrameType::Data,
            5 => FrameType::Alert,
            _ => return None,
        })
    }
}

/// `u32 BE body length ‖ u8 frame type ‖ body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub body: Vec<u8>,
}

pub fn header(frame_type: FrameType, body_len: usize) -> Result<[u8; HEADER_LEN], ChannelError> {
    if body_len > MAX_BODY {
        return Err(ChannelError::FrameTooLarge(body_len));
    }
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&(body_len as u32).to_be_bytes());
    h[4] = frame_type as u8;
    Ok(h)
}

impl Frame {
    pub fn new(frame_type: FrameType, body: Vec<u8>) -> Self {
        Self { frame_type, body }
    }

    pub fn header(&self) -> Result<[u8; HEADER_LEN], ChannelError> {
        header(self.frame_type, self.body.len())
    }

    pub fn encode(&self) -> Result<Vec<u8>, ChannelError> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&self.header()?);
        out.extend_from_slice(&self.body);
        Ok(out)
    }

    /// Parses exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, ChannelError> {
        if bytes.len() < HEADER_LEN {
            return Err(ChannelError::MalformedFrame("short header".into()));
        }
        let (frame_type, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
        if bytes.len() - HEADER_LEN != len {
            return Err(ChannelError::MalformedFrame("length mismatch".into()));
        }
        Ok(Frame { frame_type, body: bytes[HEADER_LEN..].to_vec() })
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(FrameType, usize), ChannelError> {
    let len = u32::from_be_bytes(h[..4].try_into().unwrap()) as usize;
    if len > MAX_BODY {
        return Err(ChannelError::FrameTooLarge(len));
    }
    let frame_type = FrameType::from_u8(h[4])
        .ok_or_else(|| ChannelError::MalformedFrame(format!("unknown frame type {}", h[4])))?;
    Ok((frame_type, len))
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub async fn read_frame<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Frame>, ChannelError> {
    let mut h = [0u8; HEADER_LEN];
    match reader.read_exact(&mut h[..1]).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    reader.read_exact(&mut h[1..]).await?;
    let (frame_type, len) = parse_header(&h)?;
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).await?;
    Ok(Some(Frame { frame_type, body }))
}

pub async fn write_bytes<W: AsyncWrite + Unpin>(writer: &mut W, bytes: &[u8]) -> Result<(), ChannelError> {
    writer.write_all(bytes).await?;
    writer.flush().await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let f = Frame::new(FrameType::Data, b"abc".to_vec());
        let bytes = f.encode().unwrap();
        assert_eq!(bytes, [0, 0, 0, 3, 4, b'a', b'b', b'c']);
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
        assert!(Frame::decode(&bytes[..7]).is_err());
    }

    #[test]
    fn oversized_and_unknown_type() {
        assert!(matches!(header(FrameType::Data, MAX_BODY + 1), Err(ChannelError::FrameTooLarge(_))));
        assert!(matches!(Frame::decode(&[0, 0, 0, 0, 9]), Err(ChannelError::MalformedFrame(_))));
    }

    #[tokio::test]
    async fn async_read_write() {
        let (mut a, mut b) = tokio::io::duplex(64);
        let f = Frame::new(FrameType::Alert, vec![3]);
        write_bytes(&mut a, &f.encode().unwrap()).await.unwrap();
        drop(a);
        assert_eq!(read_frame(&mut b).await.unwrap(), Some(f));
        assert_eq!(read_frame(&mut b).await.unwrap(), None);
    }
}
