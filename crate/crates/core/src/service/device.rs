//! Glucometer line protocol over TCP or any async line stream.

use std::net::SocketAddr;
use std::sync::Arc;

use chrono::Utc;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;

use super::app::{App, ReadingInput};
use super::storage::Storage;
use crate::connectors::{GlucometerSession, Reply};
use crate::domain::UserId;

/// Drives one device stream: stores each accepted reading and writes one
/// `ACK`/`NAK` line per non-blank input line. `user` pre-authenticates the
/// stream; otherwise the device must send `AUTH <token>` first.
pub async fn run_stream<S, R, W>(
    app: &App<S>,
    reader: R,
    mut writer: W,
    user: Option<UserId>,
) -> std::io::Result<(usize, usize)>
where
    S: Storage,
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let thresholds = *app.thresholds();
    let mut session = match user {
        Some(user) => GlucometerSession::authenticated(user, thresholds),
        None => GlucometerSession::new(thresholds),
    };
    let (mut acked, mut naked) = (0, 0);
    let mut lines = reader.lines();
    while let Some(line) = lines.next_line().await? {
        let Some(outcome) =
            session.handle_line(&line, |token| app.authenticate(token, Utc::now()).ok())
        else {
            continue;
        };
        let reply = match (outcome.reply, outcome.reading) {
            (Reply::Ack, Some(reading)) => {
                let input = ReadingInput {
                    value: i64::from(reading.value_mg_dl),
                    context: reading.context,
                    taken_at: Some(reading.taken_at),
                };
                match app.add_reading(reading.user_id, &input, Utc::now()) {
                    Ok(_) => Reply::Ack,
                    Err(e) => {
                        tracing::warn!(error = %e, "glucometer reading not stored");
                        Reply::Nak
                    }
                }
            }
            (reply, _) => {
                if let Some(e) = outcome.error {
                    tracing::debug!(error = %e, "glucometer line refused");
                }
                reply
            }
        };
        match reply {
            Reply::Ack => acked += 1,
            Reply::Nak => naked += 1,
        }
        writer.write_all(reply.as_str().as_bytes()).await?;
        writer.write_all(b"\n").await?;
        writer.flush().await?;
    }
    Ok((acked, naked))
}

/// Accepts device connections until the task is dropped.
pub async fn listen<S: Storage + 'static>(
    app: Arc<App<S>>,
    addr: SocketAddr,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(%addr, "glucometer listener up");
    loop {
        let (socket, peer) = listener.accept().await?;
        let app = Arc::clone(&app);
        tokio::spawn(async move {
            let (read, write) = socket.into_split();
            match run_stream(&app, BufReader::new(read), write, None).await {
                Ok((acked, naked)) => {
                    tracing::info!(%peer, acked, naked, "glucometer disconnected")
                }
                Err(e) => tracing::warn!(%peer, error = %e, "glucometer connection failed"),
            }
        });
    }
}
