//! Line-oriented JSON subprocess backends for the classifier and OCR ports.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use pso_shield::image::PixelBuffer;
use pso_shield::metadata::ingest::OcrLine;
use pso_shield::metadata::BBox;
use pso_shield::postcorrect::{Classification, ClassifierPort, OcrPort};
use pso_shield::{Error, Result};
use serde::Deserialize;
use serde_json::json;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// One long-lived child process answering one JSON line per request line.
struct LineProcess {
    argv: Vec<String>,
    worker: Mutex<Option<Worker>>,
}

impl LineProcess {
    fn new(argv: Vec<String>) -> Self {
        Self {
            argv,
            worker: Mutex::new(None),
        }
    }

    fn call(&self, request: &serde_json::Value) -> Result<String> {
        let port = |m: String| Error::Port(format!("{}: {m}", self.argv[0]));
        let mut guard = self.worker.lock().map_err(|_| port("worker lock poisoned".into()))?;
        if guard.is_none() {
            let mut child = Command::new(&self.argv[0])
                .args(&self.argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| port(format!("cannot start: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
            *guard = Some(Worker { child, stdin, stdout });
        }
        let w = guard.as_mut().expect("worker started");
        writeln!(w.stdin, "{request}")
            .and_then(|_| w.stdin.flush())
            .map_err(|e| port(format!("write failed: {e}")))?;
        let mut line = String::new();
        let n = w
            .stdout
            .read_line(&mut line)
            .map_err(|e| port(format!("read failed: {e}")))?;
        if n == 0 {
            *guard = None;
            return Err(port("exited without answering".into()));
        }
        Ok(line)
    }
}

impl Drop for LineProcess {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.worker.lock() {
            if let Some(mut w) = guard.take() {
                drop(w.stdin);
                let _ = w.child.wait();
            }
        }
    }
}

/// Request `{"text": ...}`, response `{"label": ..., "confidence": ...}`.
pub struct SubprocessClassifier(LineProcess);

impl SubprocessClassifier {
    pub fn new(argv: Vec<String>) -> Self {
        Self(LineProcess::new(argv))
    }
}

#[derive(Deserialize)]
struct ClassifierReply {
    label: String,
    confidence: f64,
}

impl ClassifierPort for SubprocessClassifier {
    fn classify(&self, text: &str) -> Result<Classification> {
        let line = self.0.call(&json!({ "text": text }))?;
        let reply: ClassifierReply =
            serde_json::from_str(&line).map_err(|e| Error::Port(format!("classifier reply: {e}")))?;
        if !(0.0..=1.0).contains(&reply.confidence) {
            return Err(Error::Port(format!(
                "classifier confidence {} outside [0, 1]",
                reply.confidence
            )));
        }
        Ok(Classification {
            label: reply.label,
            confidence: reply.confidence,
        })
    }
}

/// Request `{"image": path, "bbox": [x, y, w, h]}`, response
/// `{"lines": [{"text": ..., "bbox": [x, y, w, h]}, ...]}`.
pub struct SubprocessOcr {
    process: LineProcess,
    image_path: PathBuf,
}

impl SubprocessOcr {
    pub fn new(argv: Vec<String>, image_path: PathBuf) -> Self {
        Self {
            process: LineProcess::new(argv),
            image_path,
        }
    }
}

#[derive(Deserialize)]
struct OcrReply {
    lines: Vec<OcrLine>,
}

impl OcrPort for SubprocessOcr {
    fn read_region(&self, _image: &PixelBuffer, bbox: BBox) -> Result<Vec<OcrLine>> {
        let request = json!({
            "image": self.image_path.to_string_lossy(),
            "bbox": [bbox.x, bbox.y, bbox.width, bbox.height],
        });
        let line = self.process.call(&request)?;
        let reply: OcrReply = serde_json::from_str(&line).map_err(|e| Error::Port(format!("OCR reply: {e}")))?;
        Ok(reply.lines)
    }
}
