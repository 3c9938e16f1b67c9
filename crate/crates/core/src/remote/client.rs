use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use super::protocol::{Ack, ClientFrame, CommandMessage, EventMessage, Handshake, Role, ServerFrame};
use super::RemoteError;

/// Blocking protocol client.
pub struct Client {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

fn conn(e: impl std::fmt::Display) -> RemoteError {
    RemoteError::Connection(e.to_string())
}

impl Client {
    /// Connects and sends the handshake. The server's answer is the first frame read.
    pub fn connect(url: &str, role: Role, resume_from: Option<u64>) -> Result<Client, RemoteError> {
        let (mut ws, _) = tungstenite::connect(url).map_err(conn)?;
        if let MaybeTlsStream::Plain(s) = ws.get_mut() {
            let _ = s.set_nodelay(true);
        }
        let hs = ClientFrame::Handshake(Handshake { role, resume_from });
        ws.send(Message::text(hs.encode())).map_err(conn)?;
        Ok(Client { ws })
    }

    pub fn send(&mut self, cmd: &CommandMessage) -> Result<(), RemoteError> {
        self.ws.send(Message::text(ClientFrame::Command(cmd.clone()).encode())).map_err(conn)
    }

    /// Next frame, or `None` once `timeout` passes without one.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<ServerFrame>, RemoteError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            if let MaybeTlsStream::Plain(s) = self.ws.get_mut() {
                s.set_read_timeout(Some(left)).map_err(conn)?;
            }
            match self.ws.read() {
                Ok(Message::Text(t)) => return Ok(Some(ServerFrame::decode(&t)?)),
                Ok(Message::Close(_)) => return Err(conn("closed by server")),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    continue
                }
                Err(e) => return Err(conn(e)),
            }
        }
    }

    /// Waits for the ack of `req_id`, returning the events that arrived before it.
    pub fn await_ack(&mut self, req_id: u64, timeout: Duration) -> Result<(Ack, Vec<EventMessage>), RemoteError> {
        let deadline = Instant::now() + timeout;
        let mut events = Vec::new();
        loop {
            match self.recv(deadline.saturating_duration_since(Instant::now()))? {
                Some(ServerFrame::Ack(a)) if a.req_id == req_id => return Ok((a, events)),
                Some(ServerFrame::Ack(_)) => {}
                Some(ServerFrame::Event(e)) => events.push(e),
                None => return Err(RemoteError::Timeout),
            }
        }
    }

    /// Sends `cmd` and waits for its ack; a refusal becomes [`RemoteError::Rejected`].
    pub fn request(&mut self, cmd: &CommandMessage, timeout: Duration) -> Result<(Ack, Vec<EventMessage>), RemoteError> {
        self.send(cmd)?;
        let (ack, events) = self.await_ack(cmd.req_id, timeout)?;
        if !ack.ok {
            return Err(RemoteError::Rejected {
                code: ack.error.clone().unwrap_or_default(),
                message: ack.message.clone().unwrap_or_default(),
            });
        }
        Ok((ack, events))
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
