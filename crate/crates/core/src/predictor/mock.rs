//! Minimal chat-completions server for tests. Each request is answered by a
//! caller-supplied handler and every request body is recorded.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

type Handler = dyn Fn(&Value) -> (u16, Value) + Send + Sync;

pub struct MockServer {
    addr: String,
    requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&Value) -> (u16, Value) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = format!("http://{}", listener.local_addr()?);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let (reqs, flag) = (requests.clone(), stop.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (h, r) = (handler.clone(), reqs.clone());
                std::thread::spawn(move || {
                    let _ = serve(stream, &*h, &r);
                });
            }
        });
        Ok(MockServer {
            addr,
            requests,
            stop,
            thread: Some(thread),
        })
    }

    /// Always answer with one completion whose content is `text`.
    pub fn fixed_text(text: &str) -> std::io::Result<Self> {
        let body = completion(&[text]);
        Self::start(move |_| (200, body.clone()))
    }

    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().map(|r| r.clone()).unwrap_or_default()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A response body with one choice per entry of `texts`.
pub fn completion(texts: &[&str]) -> Value {
    let choices: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "message": {"role": "assistant", "content": t}}))
        .collect();
    json!({"object": "chat.completion", "choices": choices})
}

/// A response carrying `(token, logprob)` alternatives for the first token.
pub fn logprob_completion(top: &[(&str, f64)]) -> Value {
    let first = top.first().map(|t| t.0).unwrap_or("");
    let alts: Vec<Value> = top
        .iter()
        .map(|(t, lp)| json!({"token": t, "logprob": lp}))
        .collect();
    json!({"object": "chat.completion", "choices": [{
        "index": 0,
        "message": {"role": "assistant", "content": first},
        "logprobs": {"content": [{"token": first, "logprob": top.first().map(|t| t.1).unwrap_or(0.0), "top_logprobs": alts}]}
    }]})
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Value>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    if let Ok(mut l) = log.lock() {
        l.push(req.clone());
    }
    let (status, resp) = handler(&req);
    let payload = resp.to_string();
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
