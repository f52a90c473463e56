//! One wire protocol for every model service the pipeline depends on.

pub mod client;
pub mod media;
pub mod mock;
pub mod protocol;
pub mod transport;

use std::sync::Arc;
use std::time::Duration;

pub use client::{call, BackendClient, BackendError, Endpoint, RetryPolicy};
pub use mock::{mock_embed, MockBackend, MockConfig};
pub use protocol::{BackendKind, BackendRequest, BackendResponse, RequestPayload, ResponseResult};
pub use transport::{EndpointSpec, HttpTransport, PipeTransport, Transport, TransportError};

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub timeout: Duration,
    pub max_concurrency: usize,
    pub bearer_token: Option<String>,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            timeout: Duration::from_secs(120),
            max_concurrency: 4,
            bearer_token: None,
        }
    }
}

/// Builds an endpoint for `spec`. Mock endpoints use a clone of `mock`.
pub fn connect(spec: &EndpointSpec, mock: &MockBackend, opts: &ConnectOptions) -> Endpoint {
    match spec {
        EndpointSpec::Mock => Endpoint::new("mock", Box::new(mock.clone()), opts.max_concurrency),
        EndpointSpec::Http(url) => Endpoint::new(
            url.clone(),
            Box::new(HttpTransport::new(url.clone(), opts.timeout, opts.bearer_token.clone())),
            opts.max_concurrency,
        ),
        EndpointSpec::Pipe(cmd) => Endpoint::new(
            format!("pipe:{cmd}"),
            Box::new(PipeTransport::new(cmd.clone())),
            // a pipe serves one request at a time
            1,
        ),
    }
}

/// A client with every kind routed to the in-process mock.
pub fn mock_client(mock: MockBackend, policy: RetryPolicy) -> BackendClient {
    let endpoint = Arc::new(Endpoint::new("mock", Box::new(mock), 16));
    let mut client = BackendClient::new(policy);
    for kind in BackendKind::ALL {
        client.set_endpoint(kind, endpoint.clone());
    }
    client
}
