//! Connected byte-message channels over framed TCP or websocket.

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::framing::{read_frame, write_frame, FrameError, MAX_FRAME_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    TcpFramed,
    WebSocket,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tcp" | "tcp_framed" => Ok(Transport::TcpFramed),
            "ws" | "websocket" => Ok(Transport::WebSocket),
            other => Err(format!("unknown transport `{other}` (expected tcp or ws)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("websocket: {0}")]
    WebSocket(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TransportError {
    /// A read that hit the socket timeout without data.
    pub fn is_timeout(&self) -> bool {
        let kind = match self {
            TransportError::Io(e) | TransportError::Frame(FrameError::Io(e)) => e.kind(),
            _ => return false,
        };
        matches!(kind, ErrorKind::WouldBlock | ErrorKind::TimedOut)
    }
}

impl From<tungstenite::Error> for TransportError {
    fn from(e: tungstenite::Error) -> Self {
        match e {
            tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => TransportError::Closed,
            tungstenite::Error::Io(io) => TransportError::Io(io),
            other => TransportError::WebSocket(other.to_string()),
        }
    }
}

pub enum Connection {
    Tcp(TcpStream),
    Ws(Box<WebSocket<TcpStream>>),
}

impl Connection {
    /// Server side of a freshly accepted socket.
    pub fn accept(stream: TcpStream, transport: Transport) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(match transport {
            Transport::TcpFramed => Connection::Tcp(stream),
            Transport::WebSocket => {
                let ws = tungstenite::accept(stream).map_err(|e| TransportError::WebSocket(e.to_string()))?;
                Connection::Ws(Box::new(ws))
            }
        })
    }

    pub fn connect(addr: &str, transport: Transport, timeout: Duration) -> Result<Self, TransportError> {
        let sock: SocketAddr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(ErrorKind::InvalidInput, format!("cannot resolve `{addr}`")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_nodelay(true)?;
        Ok(match transport {
            Transport::TcpFramed => Connection::Tcp(stream),
            Transport::WebSocket => {
                let url = format!("ws://{addr}/");
                let (ws, _) = tungstenite::client(url.as_str(), stream).map_err(|e| TransportError::WebSocket(e.to_string()))?;
                Connection::Ws(Box::new(ws))
            }
        })
    }

    fn stream(&self) -> &TcpStream {
        match self {
            Connection::Tcp(s) => s,
            Connection::Ws(ws) => ws.get_ref(),
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.stream().set_read_timeout(t)
    }

    pub fn peer_addr(&self) -> io::Result<SocketAddr> {
        self.stream().peer_addr()
    }

    pub fn send(&mut self, payload: &[u8]) -> Result<(), TransportError> {
        match self {
            Connection::Tcp(s) => Ok(write_frame(s, payload)?),
            Connection::Ws(ws) => {
                let msg = match std::str::from_utf8(payload) {
                    Ok(text) => Message::text(text),
                    Err(_) => Message::binary(payload.to_vec()),
                };
                ws.send(msg)?;
                Ok(())
            }
        }
    }

    /// Next message; `Closed` once the peer has gone.
    pub fn recv(&mut self) -> Result<Vec<u8>, TransportError> {
        match self {
            Connection::Tcp(s) => read_frame(s)?.ok_or(TransportError::Closed),
            Connection::Ws(ws) => loop {
                match ws.read()? {
                    Message::Text(t) => return Ok(t.as_bytes().to_vec()),
                    Message::Binary(b) if b.len() <= MAX_FRAME_BYTES => return Ok(b.to_vec()),
                    Message::Binary(b) => return Err(FrameError::TooLarge(b.len()).into()),
                    Message::Close(_) => return Err(TransportError::Closed),
                    _ => {}
                }
            },
        }
    }

    pub fn close(&mut self) {
        match self {
            Connection::Tcp(s) => {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
            Connection::Ws(ws) => {
                let _ = ws.close(None);
                let _ = ws.flush();
                let _ = ws.get_ref().shutdown(std::net::Shutdown::Both);
            }
        }
    }
}
