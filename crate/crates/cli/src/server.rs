//! HTTP and websocket front end of a [`SteerService`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use quietgait_core::steer::{Health, SteerService};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::protocol::{parse_command, ErrorBody, ServerMessage};

pub fn router(svc: Arc<SteerService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/command", post(command))
        .route("/stream", get(stream))
        .with_state(svc)
}

async fn health(State(svc): State<Arc<SteerService>>) -> Json<Health> {
    Json(svc.health())
}

async fn command(State(svc): State<Arc<SteerService>>, body: Bytes) -> Response {
    let text = String::from_utf8_lossy(&body);
    let cmd = match parse_command(&text) {
        Ok(c) => c,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(e)).into_response(),
    };
    match svc.command(cmd) {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(ErrorBody::from_error(&e))).into_response(),
    }
}

async fn stream(ws: WebSocketUpgrade, State(svc): State<Arc<SteerService>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, svc))
}

fn encode(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).unwrap_or_default().into())
}

async fn session(socket: WebSocket, svc: Arc<SteerService>) {
    let mut frames = svc.subscribe();
    let (mut tx, mut rx) = socket.split();
    loop {
        tokio::select! {
            frame = frames.recv() => {
                let msg = match frame {
                    Ok(f) => ServerMessage::Frame(f),
                    Err(RecvError::Lagged(missed)) => ServerMessage::Lagged { missed },
                    Err(RecvError::Closed) => break,
                };
                if tx.send(encode(&msg)).await.is_err() {
                    break;
                }
            }
            incoming = rx.next() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(text))) => match parse_command(&text) {
                        Ok(cmd) => match svc.command(cmd) {
                            Ok(ack) => ServerMessage::Ack(ack),
                            Err(e) => ServerMessage::Error(ErrorBody::from_error(&e)),
                        },
                        Err(e) => ServerMessage::Error(e),
                    },
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                if tx.send(encode(&reply)).await.is_err() {
                    break;
                }
            }
        }
    }
    log::debug!("stream subscriber disconnected");
}

/// Announces the bound address on stdout and serves until ctrl-c.
pub async fn serve(listener: TcpListener, svc: Arc<SteerService>) -> anyhow::Result<()> {
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
