//! Ordered point-to-point channels between parties: in-process queues and
//! length-prefixed TCP frames. Both deliver messages per channel in order.
//!
//! TCP frame layout (big-endian): `len: u32` (payload bytes only),
//! `tag: u64`, `round: u32`, then `len` payload bytes.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use super::MpcError;

pub const FRAME_HEADER_LEN: usize = 16;
/// Largest accepted payload.
pub const MAX_FRAME_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: u64,
    pub round: u32,
    pub payload: Vec<u8>,
}

pub trait Transport: Send {
    fn party_id(&self) -> usize;
    fn num_parties(&self) -> usize;
    fn send(&mut self, to: usize, msg: Message) -> Result<(), MpcError>;
    fn recv(&mut self, from: usize) -> Result<Message, MpcError>;
}

fn check_peer(me: usize, peer: usize, n: usize) -> Result<(), MpcError> {
    if peer == me || peer >= n {
        return Err(MpcError::Transport(format!("party {me} has no channel to {peer}")));
    }
    Ok(())
}

pub struct InProcessTransport {
    id: usize,
    to: Vec<Option<Sender<Message>>>,
    from: Vec<Option<Receiver<Message>>>,
}

/// Fully connected in-process mesh; element `i` belongs to party `i`.
pub fn in_process_mesh(n: usize) -> Vec<InProcessTransport> {
    let mut ends: Vec<InProcessTransport> = (0..n)
        .map(|id| InProcessTransport { id, to: (0..n).map(|_| None).collect(), from: (0..n).map(|_| None).collect() })
        .collect();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (tx, rx) = channel();
                ends[i].to[j] = Some(tx);
                ends[j].from[i] = Some(rx);
            }
        }
    }
    ends
}

impl Transport for InProcessTransport {
    fn party_id(&self) -> usize {
        self.id
    }

    fn num_parties(&self) -> usize {
        self.to.len()
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), MpcError> {
        check_peer(self.id, to, self.to.len())?;
        self.to[to]
            .as_ref()
            .expect("channel exists")
            .send(msg)
            .map_err(|_| MpcError::Transport(format!("party {to} hung up")))
    }

    fn recv(&mut self, from: usize) -> Result<Message, MpcError> {
        check_peer(self.id, from, self.from.len())?;
        self.from[from]
            .as_ref()
            .expect("channel exists")
            .recv()
            .map_err(|_| MpcError::Transport(format!("party {from} hung up")))
    }
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, MpcError> {
    if msg.payload.len() > MAX_FRAME_PAYLOAD {
        return Err(MpcError::Transport(format!("payload of {} bytes exceeds frame limit", msg.payload.len())));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.tag.to_be_bytes());
    out.extend_from_slice(&msg.round.to_be_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Message>, MpcError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(MpcError::Transport("truncated frame header".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(MpcError::Transport(e.to_string())),
        }
    }
    let len = u32::from_be_bytes(header[0..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(MpcError::Transport(format!("frame announces {len} bytes")));
    }
    let tag = u64::from_be_bytes(header[4..12].try_into().expect("8 bytes"));
    let round = u32::from_be_bytes(header[12..16].try_into().expect("4 bytes"));
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| MpcError::Transport(format!("truncated frame payload: {e}")))?;
    Ok(Some(Message { tag, round, payload }))
}

struct TcpPeer {
    outbox: Option<Sender<Vec<u8>>>,
    writer: Option<JoinHandle<()>>,
    reader: BufReader<TcpStream>,
}

/// One party's TCP endpoints. Writes go through a per-peer writer thread so
/// that simultaneous large sends cannot deadlock on socket buffers.
pub struct TcpTransport {
    id: usize,
    peers: Vec<Option<TcpPeer>>,
}

impl TcpTransport {
    fn attach(&mut self, peer: usize, stream: TcpStream) -> Result<(), MpcError> {
        let io = |e: std::io::Error| MpcError::Transport(e.to_string());
        stream.set_nodelay(true).map_err(io)?;
        let write_half = stream.try_clone().map_err(io)?;
        let (tx, rx) = channel::<Vec<u8>>();
        let writer = std::thread::spawn(move || {
            let mut w = BufWriter::new(write_half);
            for frame in rx {
                if w.write_all(&frame).and_then(|_| w.flush()).is_err() {
                    break;
                }
            }
        });
        self.peers[peer] = Some(TcpPeer { outbox: Some(tx), writer: Some(writer), reader: BufReader::new(stream) });
        Ok(())
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for peer in self.peers.iter_mut().flatten() {
            peer.outbox.take();
            if let Some(w) = peer.writer.take() {
                let _ = w.join();
            }
        }
    }
}

/// Fully connected mesh over loopback TCP.
pub fn tcp_mesh(n: usize) -> Result<Vec<TcpTransport>, MpcError> {
    let io = |e: std::io::Error| MpcError::Transport(e.to_string());
    let mut ends: Vec<TcpTransport> =
        (0..n).map(|id| TcpTransport { id, peers: (0..n).map(|_| None).collect() }).collect();
    for i in 0..n {
        for j in i + 1..n {
            let listener = TcpListener::bind("127.0.0.1:0").map_err(io)?;
            let addr = listener.local_addr().map_err(io)?;
            let client = TcpStream::connect(addr).map_err(io)?;
            let (server, _) = listener.accept().map_err(io)?;
            ends[i].attach(j, client)?;
            ends[j].attach(i, server)?;
        }
    }
    Ok(ends)
}

impl Transport for TcpTransport {
    fn party_id(&self) -> usize {
        self.id
    }

    fn num_parties(&self) -> usize {
        self.peers.len()
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), MpcError> {
        check_peer(self.id, to, self.peers.len())?;
        let frame = encode_frame(&msg)?;
        let peer = self.peers[to].as_ref().expect("peer connected");
        peer.outbox
            .as_ref()
            .expect("open outbox")
            .send(frame)
            .map_err(|_| MpcError::Transport(format!("writer to party {to} stopped")))
    }

    fn recv(&mut self, from: usize) -> Result<Message, MpcError> {
        check_peer(self.id, from, self.peers.len())?;
        let peer = self.peers[from].as_mut().expect("peer connected");
        read_frame(&mut peer.reader)?.ok_or_else(|| MpcError::Transport(format!("party {from} closed the connection")))
    }
}
