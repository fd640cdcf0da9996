//! Length-prefixed JSON protocol: `connect`, `invoke` and `register`.

use std::sync::Arc;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio_util::codec::{Framed, LengthDelimitedCodec};

use hivemind_core::api::{ApiError, Request, Response, MAX_FRAME};

use crate::service::Service;

pub fn codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder().max_frame_length(MAX_FRAME).new_codec()
}

pub async fn serve(listener: TcpListener, svc: Arc<Service>, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    tracing::debug!(%peer, "tcp client connected");
                    tokio::spawn(session(stream, svc.clone(), shutdown.clone()));
                }
                Err(e) => tracing::warn!(error = %e, "tcp accept failed"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

async fn session(stream: TcpStream, svc: Arc<Service>, mut shutdown: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let mut framed = Framed::new(stream, codec());
    loop {
        let frame = tokio::select! {
            f = framed.next() => f,
            _ = shutdown.changed() => break,
        };
        let bytes = match frame {
            Some(Ok(b)) => b,
            Some(Err(e)) => {
                tracing::debug!(error = %e, "tcp framing error");
                break;
            }
            None => break,
        };
        let reply = match serde_json::from_slice::<Request>(&bytes) {
            Ok(req) => handle(svc.clone(), req).await,
            Err(e) => Response::Error(ApiError::new("bad_request", e)),
        };
        let body = serde_json::to_vec(&reply).expect("responses serialize");
        if framed.send(body.as_slice()).await.is_err() {
            break;
        }
    }
}

async fn handle(svc: Arc<Service>, req: Request) -> Response {
    let work = tokio::task::spawn_blocking(move || match req {
        Request::Connect => svc.connect().map(Response::Connected),
        Request::Invoke(r) => svc.invoke(&r).map(Response::Invoked),
        Request::Register(r) => svc.register(&r).map(Response::Registered),
    });
    match work.await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Response::Error(e),
        Err(e) => Response::Error(ApiError::new("internal", e)),
    }
}
