//! Federation messaging: one message set carried either over TCP frames or
//! an in-process channel, plus the server/client session logic. For fixed
//! seeds the two transports produce bit-identical merged models, verified
//! via canonical-serialization digests.

mod codec;
mod session;

pub use codec::{
    decimal, decode_payload, deserialize_forest, deserialize_tree, encode_message, forest_digest,
    parse_decimal,
    read_message, serialize_forest, serialize_tree, write_message, KIND_COMPLETE, KIND_ERROR,
    KIND_HELLO, KIND_QUOTA, KIND_TREE_UPLOAD, MAX_FRAME,
};
pub use session::{
    run_client, run_client_on_channel, run_server, run_server_on, serve_connections,
    simulate_federation, ServerOptions, SessionLog,
};

use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Instant;

use crate::error::{Error, Result};

/// Error-frame codes.
pub mod error_code {
    /// Frame or payload failed to decode.
    pub const MALFORMED: u32 = 1;
    /// Well-formed frame at the wrong point in the exchange.
    pub const UNEXPECTED: u32 = 2;
    /// Client rejected (duplicate id, mismatched feature dimension, …).
    pub const REJECTED: u32 = 3;
    /// Server-side failure after uploads (merge error).
    pub const SERVER: u32 = 4;
}

/// The protocol's message set. `TreeUpload` carries trees and grid values
/// in their canonical string encodings so that both transports move the
/// exact same bytes of model content.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        client_id: u64,
        n_local_trees: u64,
        n_samples: u64,
        feature_dim: u64,
    },
    Quota {
        client_id: u64,
        quota: u64,
    },
    TreeUpload {
        client_id: u64,
        trees: Vec<String>,
        grid: Vec<String>,
    },
    Complete {
        digest: String,
    },
    Error {
        code: u32,
        text: String,
    },
}

impl Message {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::Quota { .. } => "Quota",
            Message::TreeUpload { .. } => "TreeUpload",
            Message::Complete { .. } => "Complete",
            Message::Error { .. } => "Error",
        }
    }
}

/// A bidirectional, blocking message pipe. Implementations: [`TcpChannel`]
/// (frames over a socket) and [`LocalChannel`] (in-process mpsc pair).
pub trait MessageChannel: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
    /// Blocking receive that gives up at `deadline`; `Ok(None)` on timeout.
    fn recv_deadline(&mut self, deadline: Instant) -> Result<Option<Message>>;
}

pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Self {
        stream.set_nodelay(true).ok();
        Self { stream }
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Ok(Self::new(TcpStream::connect(addr)?))
    }
}

impl MessageChannel for TcpChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_message(&mut self.stream, msg)
    }

    fn recv(&mut self) -> Result<Message> {
        self.stream.set_read_timeout(None)?;
        read_message(&mut self.stream)
    }

    fn recv_deadline(&mut self, deadline: Instant) -> Result<Option<Message>> {
        let now = Instant::now();
        if deadline <= now {
            return Ok(None);
        }
        self.stream.set_read_timeout(Some(deadline - now))?;
        match read_message(&mut self.stream) {
            Ok(msg) => Ok(Some(msg)),
            Err(Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

pub struct LocalChannel {
    tx: Sender<Message>,
    rx: Receiver<Message>,
}

/// Two connected in-process channel ends.
pub fn local_pair() -> (LocalChannel, LocalChannel) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        LocalChannel { tx: atx, rx: arx },
        LocalChannel { tx: btx, rx: brx },
    )
}

impl MessageChannel for LocalChannel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx
            .send(msg.clone())
            .map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Message> {
        self.rx
            .recv()
            .map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn recv_deadline(&mut self, deadline: Instant) -> Result<Option<Message>> {
        let now = Instant::now();
        if deadline <= now {
            return Ok(None);
        }
        match self.rx.recv_timeout(deadline - now) {
            Ok(msg) => Ok(Some(msg)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("peer hung up".into())),
        }
    }
}
