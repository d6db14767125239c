//! Container addressing.
//!
//! Canonical grammar: `tcp://<host>:<port>/<path>[?ie=<host>:<port>]`.
//!
//! A worker that sits behind the message proxy advertises the proxy's external
//! address and carries its own datacenter-internal endpoint in the `ie` query
//! parameter. The proxy decodes that parameter to forward messages.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

pub const SCHEME: &str = "tcp";
pub const DEFAULT_PATH: &str = "Aneka";
const INTERNAL_ENDPOINT_KEY: &str = "ie";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UriError {
    #[error("malformed node uri `{input}`: {reason}")]
    MalformedUri { input: String, reason: &'static str },
}

fn malformed(input: &str, reason: &'static str) -> UriError {
    UriError::MalformedUri { input: input.to_string(), reason }
}

/// A `(host, port)` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EndpointAddr {
    pub host: String,
    pub port: u16,
}

impl EndpointAddr {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self { host: host.into(), port }
    }

    fn parse_pair(input: &str, s: &str) -> Result<Self, UriError> {
        let (host, port) = s.rsplit_once(':').ok_or_else(|| malformed(input, "missing port"))?;
        if !valid_host(host) {
            return Err(malformed(input, "invalid host"));
        }
        Ok(Self { host: host.to_string(), port: parse_port(input, port)? })
    }
}

impl fmt::Display for EndpointAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

/// Addressable identity of a container.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeUri {
    pub host: String,
    pub port: u16,
    pub path: String,
    pub internal_endpoint: Option<EndpointAddr>,
}

impl NodeUri {
    /// A URI with the default path and no internal endpoint.
    pub fn direct(host: impl Into<String>, port: u16) -> Self {
        Self {
            host: host.into(),
            port,
            path: DEFAULT_PATH.to_string(),
            internal_endpoint: None,
        }
    }

    /// A proxy-routed URI: the proxy's external address plus the internal
    /// endpoint the proxy forwards to.
    pub fn via_proxy(proxy: &EndpointAddr, internal: EndpointAddr) -> Self {
        Self {
            host: proxy.host.clone(),
            port: proxy.port,
            path: DEFAULT_PATH.to_string(),
            internal_endpoint: Some(internal),
        }
    }

    pub fn parse(s: &str) -> Result<Self, UriError> {
        if s.is_empty() {
            return Err(malformed(s, "empty"));
        }
        let rest = s
            .strip_prefix(SCHEME)
            .and_then(|r| r.strip_prefix("://"))
            .ok_or_else(|| malformed(s, "scheme must be tcp://"))?;

        let (authority_path, query) = match rest.split_once('?') {
            Some((a, q)) => (a, Some(q)),
            None => (rest, None),
        };
        let (authority, path) = match authority_path.split_once('/') {
            Some((a, p)) => (a, p),
            None => (authority_path, DEFAULT_PATH),
        };
        let (host, port) = authority.rsplit_once(':').ok_or_else(|| malformed(s, "missing port"))?;
        if host.is_empty() {
            return Err(malformed(s, "missing host"));
        }
        if !valid_host(host) {
            return Err(malformed(s, "invalid host"));
        }
        let port = parse_port(s, port)?;
        if !valid_token(path) {
            return Err(malformed(s, "invalid path"));
        }

        let internal_endpoint = match query {
            None => None,
            Some(q) => {
                let value = q
                    .strip_prefix(INTERNAL_ENDPOINT_KEY)
                    .and_then(|v| v.strip_prefix('='))
                    .ok_or_else(|| malformed(s, "unknown query component"))?;
                Some(EndpointAddr::parse_pair(s, value)?)
            }
        };

        Ok(Self { host: host.to_string(), port, path: path.to_string(), internal_endpoint })
    }

    /// The address the URI's host and port name (ignoring any internal endpoint).
    pub fn addr(&self) -> EndpointAddr {
        EndpointAddr::new(self.host.clone(), self.port)
    }

    pub fn is_proxied(&self) -> bool {
        self.internal_endpoint.is_some()
    }
}

impl fmt::Display for NodeUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SCHEME}://{}:{}/{}", self.host, self.port, self.path)?;
        if let Some(ie) = &self.internal_endpoint {
            write!(f, "?{INTERNAL_ENDPOINT_KEY}={ie}")?;
        }
        Ok(())
    }
}

impl FromStr for NodeUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

fn parse_port(input: &str, s: &str) -> Result<u16, UriError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || s.len() > 5 {
        return Err(malformed(input, "unparsable port"));
    }
    match s.parse::<u32>() {
        Ok(p) if (1..=65_535).contains(&p) => Ok(p as u16),
        _ => Err(malformed(input, "port out of range")),
    }
}

fn valid_host(h: &str) -> bool {
    !h.is_empty() && h.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'))
}

fn valid_token(t: &str) -> bool {
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'))
}
