//! Message framing on the two sockets: whole inbound requests from the
//! client and whole responses from the upstream.

use std::io::{self, Read};

use parsegap::http::{find_head_end, parse_raw_request};
use parsegap::reject::{RejectCategory, RejectReason};

pub const MAX_HEAD_BYTES: usize = 64 * 1024;
const MAX_RESPONSE_BYTES: usize = 64 * 1024 * 1024;
const CHUNK: usize = 8 * 1024;

#[derive(Debug)]
pub enum ReadError {
    Io(io::Error),
    /// The request cannot be framed or is refused before its body is read;
    /// the connection cannot continue.
    Refused { status: u16, reason: RejectReason, bytes_in: usize },
}

impl From<io::Error> for ReadError {
    fn from(e: io::Error) -> Self {
        ReadError::Io(e)
    }
}

/// Buffered reader that yields one complete request at a time.
pub struct RequestReader<R> {
    inner: R,
    buf: Vec<u8>,
}

fn refused(status: u16, category: RejectCategory, detail: &str, bytes_in: usize) -> ReadError {
    ReadError::Refused {
        status,
        reason: RejectReason::new(category, detail),
        bytes_in,
    }
}

fn trim(v: &[u8]) -> &[u8] {
    let s = v.iter().position(|b| !matches!(b, b' ' | b'\t')).unwrap_or(v.len());
    let e = v.iter().rposition(|b| !matches!(b, b' ' | b'\t')).map_or(s, |e| e + 1);
    &v[s..e]
}

impl<R: Read> RequestReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, buf: Vec::new() }
    }

    /// Octets received beyond the last request returned.
    pub fn has_buffered(&self) -> bool {
        !self.buf.is_empty()
    }

    fn fill(&mut self) -> io::Result<usize> {
        let mut chunk = [0u8; CHUNK];
        let n = self.inner.read(&mut chunk)?;
        self.buf.extend_from_slice(&chunk[..n]);
        Ok(n)
    }

    /// The next request's raw octets, or `None` when the peer closed the
    /// connection between requests.
    pub fn next_request(&mut self, max_body_bytes: usize) -> Result<Option<Vec<u8>>, ReadError> {
        let head_len = loop {
            if let Some(end) = find_head_end(&self.buf) {
                break end;
            }
            if self.buf.len() > MAX_HEAD_BYTES {
                return Err(refused(400, RejectCategory::MalformedHeader, "header block too large", self.buf.len()));
            }
            if self.fill()? == 0 {
                if self.buf.is_empty() {
                    return Ok(None);
                }
                return Err(ReadError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated request head")));
            }
        };
        let head = parse_raw_request(&self.buf[..head_len])
            .map_err(|e| refused(400, RejectCategory::MalformedHeader, &e.message, head_len))?;
        if head.header("transfer-encoding").is_some() {
            return Err(refused(400, RejectCategory::MalformedHeader, "Transfer-Encoding is not supported", head_len));
        }
        let lengths: Vec<&[u8]> = head.headers_named("content-length").map(|h| trim(&h.value)).collect();
        let body_len = match lengths.as_slice() {
            [] => 0,
            [v] => std::str::from_utf8(v)
                .ok()
                .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| refused(400, RejectCategory::MalformedHeader, "Content-Length is not a decimal number", head_len))?,
            _ => {
                return Err(refused(400, RejectCategory::AmbiguousHeader, "multiple Content-Length headers", head_len));
            }
        };
        if body_len > max_body_bytes {
            return Err(refused(
                413,
                RejectCategory::BodyTooLarge,
                &format!("body of {body_len} octets exceeds {max_body_bytes}"),
                head_len,
            ));
        }
        let total = head_len + body_len;
        while self.buf.len() < total {
            if self.fill()? == 0 {
                return Err(ReadError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated request body")));
            }
        }
        let rest = self.buf.split_off(total);
        Ok(Some(std::mem::replace(&mut self.buf, rest)))
    }
}

/// A complete upstream response as it arrived on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayedResponse {
    pub bytes: Vec<u8>,
    pub status: u16,
    /// The response was delimited by the upstream closing its connection.
    pub until_close: bool,
}

struct ResponseHead {
    status: u16,
    len: usize,
    content_length: Option<usize>,
    chunked: bool,
}

fn parse_response_head(head: &[u8]) -> io::Result<ResponseHead> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let text = String::from_utf8_lossy(head);
    let mut lines = text.split('\n').map(|l| l.trim_end_matches('\r'));
    let status_line = lines.next().ok_or_else(|| bad("empty response"))?;
    let mut fields = status_line.splitn(3, ' ');
    let version = fields.next().unwrap_or_default();
    if !version.starts_with("HTTP/1.") {
        return Err(bad("upstream did not answer with HTTP/1.x"));
    }
    let status: u16 = fields
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|s| (100..600).contains(s))
        .ok_or_else(|| bad("invalid status code"))?;
    let mut content_length = None;
    let mut chunked = false;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else { continue };
        let value = value.trim();
        if name.eq_ignore_ascii_case("content-length") {
            let n: usize = value.parse().map_err(|_| bad("invalid Content-Length"))?;
            if content_length.is_some_and(|c| c != n) {
                return Err(bad("conflicting Content-Length"));
            }
            content_length = Some(n);
        } else if name.eq_ignore_ascii_case("transfer-encoding") {
            chunked = value.to_ascii_lowercase().split(',').next_back().map(str::trim) == Some("chunked");
        }
    }
    Ok(ResponseHead {
        status,
        len: head.len(),
        content_length,
        chunked,
    })
}

struct ResponseReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> ResponseReader<R> {
    fn fill(&mut self) -> io::Result<usize> {
        if self.buf.len() > MAX_RESPONSE_BYTES {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "upstream response too large"));
        }
        let mut chunk = [0u8; CHUNK];
        let n = self.inner.read(&mut chunk)?;
        self.buf.extend_from_slice(&chunk[..n]);
        Ok(n)
    }

    fn need(&mut self, len: usize) -> io::Result<()> {
        while self.buf.len() < len {
            if self.fill()? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "upstream closed mid-response"));
            }
        }
        Ok(())
    }

    fn line_end(&mut self, from: usize) -> io::Result<usize> {
        loop {
            if let Some(p) = self.buf[from..].iter().position(|&b| b == b'\n') {
                return Ok(from + p + 1);
            }
            if self.fill()? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "upstream closed mid-response"));
            }
        }
    }

    fn head_end(&mut self, from: usize) -> io::Result<usize> {
        loop {
            if let Some(end) = find_head_end(&self.buf[from..]) {
                return Ok(from + end);
            }
            if self.buf.len() - from > MAX_HEAD_BYTES {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "upstream header block too large"));
            }
            if self.fill()? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "upstream closed mid-head"));
            }
        }
    }

    fn chunked_end(&mut self, mut pos: usize) -> io::Result<usize> {
        loop {
            let line_end = self.line_end(pos)?;
            let line = String::from_utf8_lossy(&self.buf[pos..line_end]).into_owned();
            let size_text = line.trim_end().split(';').next().unwrap_or_default().trim();
            let size = usize::from_str_radix(size_text, 16)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "invalid chunk size"))?;
            if size == 0 {
                let mut at = line_end;
                loop {
                    let end = self.line_end(at)?;
                    if matches!(&self.buf[at..end], b"\r\n" | b"\n") {
                        return Ok(end);
                    }
                    at = end;
                }
            }
            let data_end = line_end + size;
            self.need(data_end)?;
            pos = self.line_end(data_end)?;
        }
    }
}

/// Reads one response for a request with the given method. Interim 1xx
/// responses are kept in front of the final one.
pub fn read_response<R: Read>(inner: R, method: &[u8]) -> io::Result<RelayedResponse> {
    let mut r = ResponseReader { inner, buf: Vec::new() };
    let mut start = 0;
    loop {
        let end = r.head_end(start)?;
        let head = parse_response_head(&r.buf[start..end])?;
        let body_start = start + head.len;
        if (100..200).contains(&head.status) && head.status != 101 {
            start = body_start;
            continue;
        }
        let bodyless = method == b"HEAD" || head.status == 204 || head.status == 304 || head.status == 101;
        let (total, until_close) = if bodyless {
            (body_start, false)
        } else if head.chunked {
            (r.chunked_end(body_start)?, false)
        } else if let Some(n) = head.content_length {
            r.need(body_start + n)?;
            (body_start + n, false)
        } else {
            while r.fill()? > 0 {}
            (r.buf.len(), true)
        };
        r.buf.truncate(total);
        return Ok(RelayedResponse {
            bytes: r.buf,
            status: head.status,
            until_close,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reader(bytes: &[u8]) -> RequestReader<&[u8]> {
        RequestReader::new(bytes)
    }

    #[test]
    fn splits_keep_alive_requests() {
        let two = b"GET /a HTTP/1.1\r\nHost: x\r\n\r\nPOST /b HTTP/1.1\r\nContent-Length: 3\r\n\r\nabc";
        let mut r = reader(two);
        assert_eq!(r.next_request(100).unwrap().unwrap(), b"GET /a HTTP/1.1\r\nHost: x\r\n\r\n");
        assert!(r.has_buffered());
        assert!(r.next_request(100).unwrap().unwrap().ends_with(b"\r\n\r\nabc"));
        assert!(!r.has_buffered());
        assert!(r.next_request(100).unwrap().is_none());
    }

    #[test]
    fn refuses_unframeable_requests() {
        let cases: &[(&[u8], u16, RejectCategory)] = &[
            (b"POST / HTTP/1.1\r\nContent-Length: 10\r\n\r\n", 413, RejectCategory::BodyTooLarge),
            (b"POST / HTTP/1.1\r\nTransfer-Encoding: chunked\r\n\r\n0\r\n\r\n", 400, RejectCategory::MalformedHeader),
            (b"POST / HTTP/1.1\r\nContent-Length: 1\r\nContent-Length: 2\r\n\r\nab", 400, RejectCategory::AmbiguousHeader),
            (b"POST / HTTP/1.1\r\nContent-Length: -1\r\n\r\n", 400, RejectCategory::MalformedHeader),
            (b"POST /\r\n\r\n", 400, RejectCategory::MalformedHeader),
        ];
        for (bytes, want_status, want_cat) in cases {
            match reader(bytes).next_request(5) {
                Err(ReadError::Refused { status, reason, .. }) => {
                    assert_eq!((status, reason.category), (*want_status, *want_cat));
                }
                other => panic!("{:?}: {other:?}", String::from_utf8_lossy(bytes)),
            }
        }
        assert!(matches!(reader(b"POST / HTTP/1.1\r\nContent-Length: 4\r\n\r\nab").next_request(9), Err(ReadError::Io(_))));
    }

    #[test]
    fn response_framing() {
        let fixed = b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nokEXTRA";
        let r = read_response(&fixed[..], b"GET").unwrap();
        assert_eq!(r.bytes, b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nok");
        assert!(!r.until_close);

        let chunked = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n2\r\nok\r\n0\r\nX: y\r\n\r\n";
        assert_eq!(read_response(&chunked[..], b"GET").unwrap().bytes, chunked);

        let interim = b"HTTP/1.1 100 Continue\r\n\r\nHTTP/1.1 204 No Content\r\n\r\n";
        let r = read_response(&interim[..], b"POST").unwrap();
        assert_eq!((r.status, r.bytes.as_slice()), (204, &interim[..]));

        let eof = b"HTTP/1.0 200 OK\r\n\r\nuntil close";
        let r = read_response(&eof[..], b"GET").unwrap();
        assert!(r.until_close);
        assert_eq!(r.bytes, eof);

        let head = b"HTTP/1.1 200 OK\r\nContent-Length: 50\r\n\r\n";
        assert_eq!(read_response(&head[..], b"HEAD").unwrap().bytes, head);

        assert!(read_response(&b"SSH-2.0\r\n\r\n"[..], b"GET").is_err());
        assert!(read_response(&b"HTTP/1.1 200 OK\r\nContent-Length: 9\r\n\r\nshort"[..], b"GET").is_err());
    }
}
