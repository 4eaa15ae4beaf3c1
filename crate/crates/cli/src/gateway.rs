//! Operator console endpoint: a websocket carrying the line-oriented JSON
//! protocol, the map as JSON, and the console's static files.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use teleop_core::teleop::{gateway_translate, Command};
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

const PLACEHOLDER: &str = "<!doctype html>\n<title>teleop</title>\n<p>Gateway is up. Console assets were not configured; start the server with <code>--assets DIR</code>. The console socket is at <code>/ws</code>.</p>\n";

#[derive(Clone)]
pub struct Gateway {
    pub map_line: Arc<str>,
    pub outbound: broadcast::Sender<String>,
    pub commands: mpsc::Sender<Command>,
}

pub fn router(gw: Gateway, assets: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/map.json", get(map_json))
        .with_state(gw);
    match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.fallback(get(|| async { Html(PLACEHOLDER) })),
    }
}

pub async fn serve(listener: tokio::net::TcpListener, gw: Gateway, assets: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(gw, assets)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

async fn map_json(State(gw): State<Gateway>) -> Response {
    ([("content-type", "application/json")], gw.map_line.to_string()).into_response()
}

async fn upgrade(ws: WebSocketUpgrade, State(gw): State<Gateway>) -> Response {
    ws.on_upgrade(move |socket| session(socket, gw))
}

async fn session(mut socket: WebSocket, gw: Gateway) {
    let mut lines = gw.outbound.subscribe();
    if socket
        .send(Message::Text(gw.map_line.to_string().into()))
        .await
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            line = lines.recv() => match line {
                Ok(line) => {
                    if socket.send(Message::Text(line.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("console fell behind by {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        match gateway_translate(line) {
                            Ok(cmd) => {
                                log::debug!("console command {cmd:?}");
                                if gw.commands.send(cmd).is_err() {
                                    return;
                                }
                            }
                            Err(e) => log::warn!("console: {e}"),
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
