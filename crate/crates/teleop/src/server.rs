use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::task::JoinSet;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{ErrorCode, ServerMsg};
use crate::session::{Connection, ServerConfig};

/// A bound listener. Each accepted connection gets its own session, handled
/// one message at a time in arrival order.
pub struct Server {
    listener: TcpListener,
    config: Arc<ServerConfig>,
}

impl Server {
    pub async fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr).await?, config: Arc::new(config) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves, then closes every open connection.
    pub async fn run_until(self, shutdown: impl Future<Output = ()>) -> io::Result<()> {
        let mut connections = JoinSet::new();
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => {
                    let (stream, peer) = accepted?;
                    let config = self.config.clone();
                    connections.spawn(async move {
                        if let Err(e) = serve_connection(stream, config).await {
                            log::warn!("connection {peer}: {e}");
                        }
                    });
                }
                Some(_) = connections.join_next(), if !connections.is_empty() => {}
            }
        }
        connections.shutdown().await;
        Ok(())
    }
}

type WsError = tokio_tungstenite::tungstenite::Error;

async fn serve_connection(stream: TcpStream, config: Arc<ServerConfig>) -> Result<(), WsError> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let mut conn = Some(Connection::new(config));
    while let Some(frame) = rx.next().await {
        let text = match frame? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let err = ServerMsg::error(ErrorCode::Malformed, "binary frames are not part of the protocol");
                tx.send(Message::Text(err.to_text())).await?;
                continue;
            }
            _ => continue,
        };
        let mut c = conn.take().expect("connection is returned after every message");
        let (c, reply) = match tokio::task::spawn_blocking(move || {
            let reply = c.handle_text(&text);
            (c, reply)
        })
        .await
        {
            Ok(done) => done,
            Err(e) => {
                let err = ServerMsg::error(ErrorCode::Internal, format!("handler failed: {e}"));
                tx.send(Message::Text(err.to_text())).await?;
                break;
            }
        };
        conn = Some(c);
        let mut previous_state = false;
        for msg in reply.messages {
            let is_state = matches!(msg, ServerMsg::State { .. });
            if is_state && previous_state && !reply.cadence.is_zero() {
                tx.flush().await?;
                tokio::time::sleep(reply.cadence).await;
            }
            previous_state = is_state;
            tx.feed(Message::Text(msg.to_text())).await?;
        }
        tx.flush().await?;
    }
    Ok(())
}
