//! The strict HTTP/1.1 subset spoken between clients and nodes. One request
//! per connection; bodies are sized by `Content-Length`.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

const MAX_HEAD: usize = 16 * 1024;
const MAX_HEADERS: usize = 32;
pub const MAX_BODY: usize = 1 << 30;

/// Everything but unreserved characters is escaped in chunk paths.
const PATH_SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    /// The connection ended inside the body.
    #[error("transfer cut after {} of {expected} bytes", received.len())]
    Truncated { received: Vec<u8>, expected: usize },
}

pub fn encode_segment(s: &str) -> String {
    utf8_percent_encode(s, PATH_SEGMENT).to_string()
}

pub fn decode_segment(s: &str) -> Option<String> {
    percent_decode_str(s).decode_utf8().ok().map(|c| c.into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
}

impl Request {
    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }
}

/// Reads until the blank line; returns the head bytes and any body prefix.
fn read_head<R: Read>(r: &mut R) -> Result<(Vec<u8>, usize), HttpError> {
    let mut buf = Vec::with_capacity(1024);
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            return Ok((buf, end + 4));
        }
        if buf.len() > MAX_HEAD {
            return Err(HttpError::Protocol("header too large".into()));
        }
        let k = r.read(&mut chunk)?;
        if k == 0 {
            return Err(if buf.is_empty() {
                HttpError::Io(io::ErrorKind::UnexpectedEof.into())
            } else {
                HttpError::Protocol("connection closed inside header".into())
            });
        }
        buf.extend_from_slice(&chunk[..k]);
    }
}

fn content_length(headers: &[(String, String)]) -> Result<usize, HttpError> {
    match header(headers, "content-length") {
        None => Ok(0),
        Some(v) => {
            let len: usize = v.trim().parse().map_err(|_| HttpError::Protocol(format!("bad content-length {v:?}")))?;
            if len > MAX_BODY {
                return Err(HttpError::Protocol(format!("body of {len} bytes too large")));
            }
            Ok(len)
        }
    }
}

fn read_body<R: Read>(r: &mut R, mut body: Vec<u8>, len: usize) -> Result<Vec<u8>, HttpError> {
    body.truncate(len);
    body.reserve(len - body.len());
    let mut chunk = vec![0u8; 64 * 1024];
    while body.len() < len {
        let want = (len - body.len()).min(chunk.len());
        match r.read(&mut chunk[..want]) {
            Ok(0) | Err(_) => {
                return Err(HttpError::Truncated {
                    received: body,
                    expected: len,
                })
            }
            Ok(k) => body.extend_from_slice(&chunk[..k]),
        }
    }
    Ok(body)
}

fn collect_headers(raw: &[httparse::Header<'_>]) -> Result<Vec<(String, String)>, HttpError> {
    raw.iter()
        .map(|h| {
            let value = std::str::from_utf8(h.value).map_err(|_| HttpError::Protocol("non-utf8 header".into()))?;
            Ok((h.name.to_string(), value.trim().to_string()))
        })
        .collect()
}

pub fn read_request<R: Read>(r: &mut R) -> Result<Request, HttpError> {
    let (buf, head_len) = read_head(r)?;
    let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut raw);
    match req.parse(&buf[..head_len]) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(HttpError::Protocol("incomplete request head".into())),
        Err(e) => return Err(HttpError::Protocol(e.to_string())),
    }
    let method = req.method.unwrap_or_default().to_string();
    let path = req.path.unwrap_or_default().to_string();
    let headers = collect_headers(req.headers)?;
    let len = content_length(&headers)?;
    let body = read_body(r, buf[head_len..].to_vec(), len)?;
    Ok(Request { method, path, headers, body })
}

pub fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        206 => "Partial Content",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        416 => "Range Not Satisfiable",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

pub fn write_response<W: Write>(
    w: &mut W,
    status: u16,
    headers: &[(&str, String)],
    body: &[u8],
) -> io::Result<()> {
    let mut head = format!("HTTP/1.1 {status} {}\r\nContent-Length: {}\r\nConnection: close\r\n", reason(status), body.len());
    for (k, v) in headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    w.write_all(head.as_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Inclusive byte range from a `Range: bytes=a-b` header. `b` may be omitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub start: u64,
    pub end: Option<u64>,
}

impl ByteRange {
    pub fn parse(value: &str) -> Option<ByteRange> {
        let spec = value.trim().strip_prefix("bytes=")?;
        let (a, b) = spec.split_once('-')?;
        let start = a.trim().parse().ok()?;
        let end = match b.trim() {
            "" => None,
            b => Some(b.parse().ok()?),
        };
        if end.is_some_and(|e| e < start) {
            return None;
        }
        Some(ByteRange { start, end })
    }

    /// Clamps to a stream of `len` bytes. `None` when unsatisfiable.
    pub fn resolve(&self, len: u64) -> Option<(u64, u64)> {
        if self.start >= len {
            return None;
        }
        Some((self.start, self.end.map_or(len - 1, |e| e.min(len - 1))))
    }

    pub fn to_header(&self) -> String {
        match self.end {
            Some(e) => format!("bytes={}-{}", self.start, e),
            None => format!("bytes={}-", self.start),
        }
    }
}

/// Issues one request and reads the whole response.
pub fn request(
    address: &str,
    method: &str,
    path: &str,
    headers: &[(&str, String)],
    body: &[u8],
    timeout: Duration,
) -> Result<Response, HttpError> {
    let addr = address
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| HttpError::Protocol(format!("cannot resolve {address}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {address}\r\nContent-Length: {}\r\nConnection: close\r\n", body.len());
    for (k, v) in headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes())?;
    stream.write_all(body)?;
    stream.flush()?;
    read_response(&mut stream)
}

pub fn read_response<R: Read>(r: &mut R) -> Result<Response, HttpError> {
    let (buf, head_len) = read_head(r)?;
    let mut raw = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut raw);
    match resp.parse(&buf[..head_len]) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(HttpError::Protocol("incomplete response head".into())),
        Err(e) => return Err(HttpError::Protocol(e.to_string())),
    }
    let status = resp.code.unwrap_or(0);
    let headers = collect_headers(resp.headers)?;
    let len = content_length(&headers)?;
    let body = read_body(r, buf[head_len..].to_vec(), len)?;
    Ok(Response { status, headers, body })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn request_round_trip() {
        let raw = b"PUT /chunks/a%20b.3 HTTP/1.1\r\nHost: x\r\nContent-Length: 5\r\nRange: bytes=1-2\r\n\r\nhello";
        let req = read_request(&mut Cursor::new(&raw[..])).unwrap();
        assert_eq!(req.method, "PUT");
        assert_eq!(req.path, "/chunks/a%20b.3");
        assert_eq!(req.header("range"), Some("bytes=1-2"));
        assert_eq!(req.body, b"hello");
        assert_eq!(decode_segment("a%20b.3").unwrap(), "a b.3");
    }

    #[test]
    fn truncated_body_keeps_prefix() {
        let raw = b"HTTP/1.1 200 OK\r\nContent-Length: 10\r\n\r\nabcd";
        match read_response(&mut Cursor::new(&raw[..])) {
            Err(HttpError::Truncated { received, expected }) => {
                assert_eq!(received, b"abcd");
                assert_eq!(expected, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn response_written_and_read_back() {
        let mut out = Vec::new();
        write_response(&mut out, 206, &[("Content-Range", "bytes 0-1/4".into())], b"ab").unwrap();
        let resp = read_response(&mut Cursor::new(out)).unwrap();
        assert_eq!(resp.status, 206);
        assert_eq!(resp.header("content-range"), Some("bytes 0-1/4"));
        assert_eq!(resp.body, b"ab");
    }

    #[test]
    fn garbage_is_protocol_error() {
        assert!(matches!(read_request(&mut Cursor::new(&b"\x01\x02 nonsense\r\n\r\n"[..])), Err(HttpError::Protocol(_))));
        assert!(matches!(
            read_request(&mut Cursor::new(&b"GET / HTTP/1.1\r\nContent-Length: x\r\n\r\n"[..])),
            Err(HttpError::Protocol(_))
        ));
    }

    #[test]
    fn ranges() {
        assert_eq!(ByteRange::parse("bytes=0-35"), Some(ByteRange { start: 0, end: Some(35) }));
        assert_eq!(ByteRange::parse("bytes=7-"), Some(ByteRange { start: 7, end: None }));
        assert_eq!(ByteRange::parse("bytes=5-4"), None);
        assert_eq!(ByteRange::parse("items=0-1"), None);
        let r = ByteRange::parse("bytes=10-99").unwrap();
        assert_eq!(r.resolve(50), Some((10, 49)));
        assert_eq!(r.resolve(10), None);
        assert_eq!(ByteRange::parse(&r.to_header()), Some(r));
    }

    #[test]
    fn segment_encoding_round_trips() {
        for s in ["plain.0", "sp ace.1", "pct%.2", "ü.3", "a?b#c.4"] {
            let e = encode_segment(s);
            assert!(!e.contains(['/', ' ', '?', '#']));
            assert_eq!(decode_segment(&e).unwrap(), s);
        }
    }
}
