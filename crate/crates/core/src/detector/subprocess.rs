use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use tracing::{debug, warn};

use super::protocol::{validate_predictions, ProtocolError, Request, Response, WireImage};
use super::{Detector, DetectorError, DetectorSpec, ModelHandle, Predictions, TrainRequest};
use crate::dataset::{DatasetCOCO, ImageRecord};

/// Client for a detector running as a child process speaking the line
/// protocol on its stdin/stdout. Stderr is passed through.
pub struct SubprocessDetector {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    batch: bool,
    predict_batch: usize,
    image_root: Option<PathBuf>,
}

impl SubprocessDetector {
    /// Starts the process and waits for its greeting.
    pub fn spawn(spec: &DetectorSpec) -> Result<Self, DetectorError> {
        let command = spec.command.clone().unwrap_or_default();
        let (program, args) = command.split_first().ok_or_else(|| DetectorError::Config("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| DetectorError::Spawn { command: command.clone(), source })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut det = Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            timeout: spec.timeout(),
            batch: false,
            predict_batch: spec.predict_batch,
            image_root: spec.image_root.clone(),
        };
        match det.receive("starting up")? {
            Response::Hello { batch } => det.batch = batch,
            other => return Err(unexpected("a greeting", &other)),
        }
        debug!(batch = det.batch, "detector ready");
        Ok(det)
    }

    pub fn supports_batching(&self) -> bool {
        self.batch
    }

    fn send(&mut self, request: &Request) -> Result<(), DetectorError> {
        let stdin = self.stdin.as_mut().ok_or(DetectorError::Exited("sending a request"))?;
        let mut line = request.to_line();
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|_| DetectorError::Exited("sending a request"))
    }

    fn receive(&mut self, doing: &'static str) -> Result<Response, DetectorError> {
        loop {
            let line = match self.lines.recv_timeout(self.timeout) {
                Ok(line) => line?,
                Err(RecvTimeoutError::Timeout) => return Err(DetectorError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(DetectorError::Exited(doing)),
            };
            if line.trim().is_empty() {
                continue;
            }
            return match Response::parse(&line)? {
                Response::Error { error } => Err(ProtocolError::Remote(error).into()),
                r => Ok(r),
            };
        }
    }

    fn wire_image(&self, img: &ImageRecord) -> WireImage {
        let path = match &self.image_root {
            Some(root) => root.join(&img.file_name).display().to_string(),
            None => img.file_name.clone(),
        };
        WireImage { image_id: img.id, path }
    }
}

fn unexpected(expected: &'static str, got: &Response) -> DetectorError {
    ProtocolError::Unexpected { expected, got: got.to_line() }.into()
}

impl Detector for SubprocessDetector {
    fn train(&mut self, request: &TrainRequest<'_>) -> Result<ModelHandle, DetectorError> {
        let msg = Request::Train {
            images: request.images.iter().map(|i| self.wire_image(i)).collect(),
            labels_dir: request.labels_dir.display().to_string(),
            workdir: request.workdir.display().to_string(),
            warm_start: request.warm_start,
        };
        self.send(&msg)?;
        match self.receive("training")? {
            Response::Trained => Ok(ModelHandle { training_size: request.images.len() }),
            other => Err(unexpected("a `trained` acknowledgement", &other)),
        }
    }

    fn predict(
        &mut self,
        _handle: &ModelHandle,
        images: &[ImageRecord],
        gt: &DatasetCOCO,
    ) -> Result<Predictions, DetectorError> {
        let chunks: Vec<&[ImageRecord]> = images.chunks(self.predict_batch).collect();
        let mut out = Predictions::new();
        let mut collect = |det: &mut Self, chunk: &[ImageRecord]| -> Result<(), DetectorError> {
            let items = match det.receive("predicting")? {
                Response::Predictions { items } => items,
                other => return Err(unexpected("predictions", &other)),
            };
            let ids: Vec<_> = chunk.iter().map(|i| i.id).collect();
            out.extend(validate_predictions(items, &ids, gt.categories())?);
            Ok(())
        };
        if self.batch {
            // pipelined: every request goes out before the answers are read
            for chunk in &chunks {
                let msg = Request::Predict { images: chunk.iter().map(|i| self.wire_image(i)).collect() };
                self.send(&msg)?;
            }
            for chunk in &chunks {
                collect(self, chunk)?;
            }
        } else {
            for chunk in &chunks {
                let msg = Request::Predict { images: chunk.iter().map(|i| self.wire_image(i)).collect() };
                self.send(&msg)?;
                collect(self, chunk)?;
            }
        }
        Ok(out)
    }
}

impl Drop for SubprocessDetector {
    fn drop(&mut self) {
        if self.send(&Request::Shutdown {}).is_ok() {
            // closing stdin as well lets adapters that only watch for EOF exit
            self.stdin.take();
            for _ in 0..50 {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
        self.stdin.take();
        if let Err(e) = self.child.kill() {
            warn!(error = %e, "could not stop detector process");
        }
        let _ = self.child.wait();
    }
}
