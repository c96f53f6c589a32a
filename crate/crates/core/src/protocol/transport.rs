//! Channel endpoints: named pipes and TCP.
//!
//! A node finds its channels through `AUTOLAB_IN` and `AUTOLAB_OUT`, each a
//! filesystem path (FIFO) or a `host:port`. When both name the same address a
//! single TCP connection carries both directions. Nodes open `AUTOLAB_IN`
//! before `AUTOLAB_OUT`.

use std::ffi::CString;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::OpenOptionsExt;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

pub const ENV_IN: &str = "AUTOLAB_IN";
pub const ENV_OUT: &str = "AUTOLAB_OUT";

#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Tcp(SocketAddr),
    Path(PathBuf),
}

impl Endpoint {
    pub fn parse(s: &str) -> Self {
        match s.parse::<SocketAddr>() {
            Ok(addr) => Endpoint::Tcp(addr),
            Err(_) => Endpoint::Path(PathBuf::from(s)),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "{a}"),
            Endpoint::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

pub type BoxedReader = Box<dyn Read + Send>;
pub type BoxedWriter = Box<dyn Write + Send>;

/// Opens the node side of a channel pair.
pub fn connect(input: &Endpoint, output: &Endpoint) -> io::Result<(BoxedReader, BoxedWriter)> {
    if let (Endpoint::Tcp(a), Endpoint::Tcp(b)) = (input, output) {
        if a == b {
            let stream = TcpStream::connect(a)?;
            stream.set_nodelay(true)?;
            let w = stream.try_clone()?;
            return Ok((Box::new(stream), Box::new(w)));
        }
    }
    let reader: BoxedReader = match input {
        Endpoint::Tcp(a) => Box::new(TcpStream::connect(a)?),
        Endpoint::Path(p) => Box::new(File::open(p)?),
    };
    let writer: BoxedWriter = match output {
        Endpoint::Tcp(a) => {
            let s = TcpStream::connect(a)?;
            s.set_nodelay(true)?;
            Box::new(s)
        }
        Endpoint::Path(p) => Box::new(OpenOptions::new().write(true).open(p)?),
    };
    Ok((reader, writer))
}

/// Reads `AUTOLAB_IN` / `AUTOLAB_OUT` and opens the channels.
pub fn connect_from_env() -> io::Result<(BoxedReader, BoxedWriter)> {
    let get = |k: &str| {
        std::env::var(k).map_err(|_| io::Error::new(io::ErrorKind::NotFound, format!("{k} is not set")))
    };
    connect(&Endpoint::parse(&get(ENV_IN)?), &Endpoint::parse(&get(ENV_OUT)?))
}

pub fn make_fifo(path: &Path) -> io::Result<()> {
    let c = CString::new(path.as_os_str().as_bytes())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "path contains NUL"))?;
    // SAFETY: `c` is a valid NUL-terminated path for the duration of the call.
    let rc = unsafe { libc::mkfifo(c.as_ptr(), 0o600) };
    if rc == 0 {
        Ok(())
    } else {
        Err(io::Error::last_os_error())
    }
}

fn clear_nonblocking(file: &File) -> io::Result<()> {
    let fd = file.as_raw_fd();
    // SAFETY: fd is owned by `file` and stays open across both calls.
    unsafe {
        let flags = libc::fcntl(fd, libc::F_GETFL);
        if flags < 0 || libc::fcntl(fd, libc::F_SETFL, flags & !libc::O_NONBLOCK) < 0 {
            return Err(io::Error::last_os_error());
        }
    }
    Ok(())
}

const POLL: Duration = Duration::from_millis(2);

fn gave_up(what: &str) -> io::Error {
    io::Error::new(io::ErrorKind::TimedOut, format!("peer never opened {what}"))
}

/// Host side of a named-pipe pair. The host writes into `to_node` (the
/// node's `AUTOLAB_IN`) and reads `from_node` (its `AUTOLAB_OUT`).
pub struct FifoPair {
    pub to_node: PathBuf,
    pub from_node: PathBuf,
}

impl FifoPair {
    pub fn create(dir: &Path) -> io::Result<Self> {
        let pair = Self {
            to_node: dir.join("to_agent.fifo"),
            from_node: dir.join("from_agent.fifo"),
        };
        make_fifo(&pair.to_node)?;
        make_fifo(&pair.from_node)?;
        Ok(pair)
    }

    pub fn node_env(&self) -> [(&'static str, String); 2] {
        [
            (ENV_IN, self.to_node.display().to_string()),
            (ENV_OUT, self.from_node.display().to_string()),
        ]
    }

    /// Opens the host ends, giving up when `peer_alive` turns false or the
    /// timeout passes, so a node that dies before opening cannot hang us.
    pub fn open_host(
        &self,
        mut peer_alive: impl FnMut() -> bool,
        timeout: Duration,
    ) -> io::Result<(File, File)> {
        let deadline = Instant::now() + timeout;
        let (tx, rx) = mpsc::channel();
        let from = self.from_node.clone();
        thread::spawn(move || {
            let _ = tx.send(File::open(from));
        });

        let release_reader = |path: &Path| {
            // Satisfies the pending blocking open so its thread can finish.
            let _ = OpenOptions::new()
                .write(true)
                .custom_flags(libc::O_NONBLOCK)
                .open(path);
        };

        let writer = loop {
            match OpenOptions::new()
                .write(true)
                .custom_flags(libc::O_NONBLOCK)
                .open(&self.to_node)
            {
                Ok(f) => {
                    clear_nonblocking(&f)?;
                    break f;
                }
                Err(e) if e.raw_os_error() == Some(libc::ENXIO) => {
                    if !peer_alive() || Instant::now() > deadline {
                        release_reader(&self.from_node);
                        return Err(gave_up("its input pipe"));
                    }
                    thread::sleep(POLL);
                }
                Err(e) => {
                    release_reader(&self.from_node);
                    return Err(e);
                }
            }
        };
        let reader = loop {
            match rx.try_recv() {
                Ok(r) => break r?,
                Err(mpsc::TryRecvError::Empty) => {
                    if !peer_alive() || Instant::now() > deadline {
                        release_reader(&self.from_node);
                        if let Ok(Ok(f)) = rx.recv_timeout(Duration::from_secs(1)) {
                            drop(f);
                        }
                        return Err(gave_up("its output pipe"));
                    }
                    thread::sleep(POLL);
                }
                Err(mpsc::TryRecvError::Disconnected) => return Err(gave_up("its output pipe")),
            }
        };
        Ok((reader, writer))
    }
}

/// Host side of a TCP channel: one connection carries both directions.
pub struct TcpRendezvous {
    listener: TcpListener,
}

impl TcpRendezvous {
    pub fn bind_local() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener })
    }

    pub fn addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn node_env(&self) -> io::Result<[(&'static str, String); 2]> {
        let a = self.addr()?.to_string();
        Ok([(ENV_IN, a.clone()), (ENV_OUT, a)])
    }

    pub fn accept(
        &self,
        mut peer_alive: impl FnMut() -> bool,
        timeout: Duration,
    ) -> io::Result<(TcpStream, TcpStream)> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    let w = s.try_clone()?;
                    return Ok((s, w));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if !peer_alive() || Instant::now() > deadline {
                        return Err(gave_up("a connection"));
                    }
                    thread::sleep(POLL);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            Endpoint::parse("127.0.0.1:9000"),
            Endpoint::Tcp("127.0.0.1:9000".parse().unwrap())
        );
        assert_eq!(Endpoint::parse("/tmp/x.fifo"), Endpoint::Path("/tmp/x.fifo".into()));
    }

    #[test]
    fn fifo_host_gives_up_when_peer_is_gone() {
        let dir = tempfile::tempdir().unwrap();
        let pair = FifoPair::create(dir.path()).unwrap();
        let err = pair.open_host(|| false, Duration::from_secs(5)).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::TimedOut);
    }

    #[test]
    fn fifo_pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pair = FifoPair::create(dir.path()).unwrap();
        let (inp, out) = (Endpoint::Path(pair.to_node.clone()), Endpoint::Path(pair.from_node.clone()));
        let node = thread::spawn(move || {
            let (mut r, mut w) = connect(&inp, &out).unwrap();
            let mut buf = [0u8; 5];
            r.read_exact(&mut buf).unwrap();
            w.write_all(&buf).unwrap();
        });
        let (mut r, mut w) = pair.open_host(|| true, Duration::from_secs(5)).unwrap();
        w.write_all(b"hello").unwrap();
        let mut buf = [0u8; 5];
        r.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hello");
        node.join().unwrap();
    }
}
