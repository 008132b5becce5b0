//! Frame transports.

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

use super::frame::Frame;
use super::ProtocolError;

pub trait Channel: Send {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError>;
    fn recv_frame(&mut self) -> Result<Frame, ProtocolError>;
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        (**self).send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Frame, ProtocolError> {
        (**self).recv_frame()
    }
}

/// One end of an in-process byte queue pair.
pub struct MemoryChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl MemoryChannel {
    pub fn pair() -> (MemoryChannel, MemoryChannel) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (MemoryChannel { tx: a_tx, rx: a_rx }, MemoryChannel { tx: b_tx, rx: b_rx })
    }
}

impl Channel for MemoryChannel {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        self.tx.send(frame.encode()).map_err(|_| ProtocolError::ChannelClosed)
    }

    fn recv_frame(&mut self) -> Result<Frame, ProtocolError> {
        let bytes = self.rx.recv().map_err(|_| ProtocolError::ChannelClosed)?;
        Frame::decode(&bytes)
    }
}

pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<Self, ProtocolError> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ProtocolError> {
        Self::new(TcpStream::connect(addr)?)
    }

    pub fn accept(listener: &TcpListener) -> Result<Self, ProtocolError> {
        let (stream, _) = listener.accept()?;
        Self::new(stream)
    }

    /// Both ends of a loopback connection.
    pub fn loopback_pair() -> Result<(TcpChannel, TcpChannel), ProtocolError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let client = TcpChannel::connect(addr)?;
        let server = TcpChannel::accept(&listener)?;
        Ok((client, server))
    }
}

impl Channel for TcpChannel {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        frame.write_to(&mut self.stream)
    }

    fn recv_frame(&mut self) -> Result<Frame, ProtocolError> {
        Frame::read_from(&mut self.stream).map_err(|e| match e {
            ProtocolError::Io(_) => ProtocolError::ChannelClosed,
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

pub type Transcript = Arc<Mutex<Vec<(Direction, Vec<u8>)>>>;

/// Logs every encoded frame passing through the wrapped channel.
pub struct RecordingChannel<C> {
    inner: C,
    log: Transcript,
}

impl<C: Channel> RecordingChannel<C> {
    pub fn new(inner: C) -> (Self, Transcript) {
        let log = Transcript::default();
        (RecordingChannel { inner, log: log.clone() }, log)
    }
}

impl<C: Channel> Channel for RecordingChannel<C> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        self.log.lock().unwrap().push((Direction::Sent, frame.encode()));
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Frame, ProtocolError> {
        let f = self.inner.recv_frame()?;
        self.log.lock().unwrap().push((Direction::Received, f.encode()));
        Ok(f)
    }
}

/// Flips one payload bit of the `target`-th outgoing frame (0-based), standing in for an active attacker.
pub struct TamperingChannel<C> {
    inner: C,
    target: usize,
    bit: usize,
    sent: usize,
}

impl<C: Channel> TamperingChannel<C> {
    pub fn new(inner: C, target: usize, bit: usize) -> Self {
        TamperingChannel { inner, target, bit, sent: 0 }
    }
}

impl<C: Channel> Channel for TamperingChannel<C> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), ProtocolError> {
        let index = self.sent;
        self.sent += 1;
        if index == self.target && !frame.payload.is_empty() {
            let mut forged = frame.clone();
            let bit = self.bit % (8 * forged.payload.len());
            forged.payload[bit / 8] ^= 0x80 >> (bit % 8);
            return self.inner.send_frame(&forged);
        }
        self.inner.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Frame, ProtocolError> {
        self.inner.recv_frame()
    }
}
