//! The federation session: a coordinator plans quotas once all clients
//! have said Hello (or timed out), per-connection workers shuttle frames,
//! and everything merges into one global forest whose canonical digest is
//! broadcast back.
//!
//! Fault policy: a client that misses the Hello barrier is excluded before
//! planning, so quota conservation holds over the clients that actually
//! participate. Failures after quota dispatch (upload timeout, malformed
//! frame, disconnect) exclude that client's trees from the merge with a
//! warning, but never trigger a second Quota frame — each successful
//! client sees exactly one Hello/Quota/TreeUpload exchange.

use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::federation::{
    assign_tree_counts, evaluate_trees, local_train, merge_ensemble, sample_trees,
    ClientContribution, ClientState, SamplingStrategy,
};
use crate::rsf::{RsfParams, SurvivalForest, SurvivalTree};
use crate::transport::{
    codec, error_code, local_pair, Message, MessageChannel, TcpChannel,
};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub expected_clients: usize,
    pub ensemble_target: usize,
    /// Recorded for the session log; tree evaluation happens client-side.
    pub strategy: SamplingStrategy,
    pub hello_timeout: Duration,
    pub upload_timeout: Duration,
}

impl ServerOptions {
    pub fn new(expected_clients: usize, ensemble_target: usize, strategy: SamplingStrategy) -> Self {
        Self {
            expected_clients,
            ensemble_target,
            strategy,
            hello_timeout: Duration::from_secs(120),
            upload_timeout: Duration::from_secs(120),
        }
    }
}

/// Server-side frame accounting for one session. A clean K-client run
/// shows every counter equal to K.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    pub hello: usize,
    pub quota: usize,
    pub tree_upload: usize,
    pub complete: usize,
    pub excluded: Vec<String>,
    pub digest: String,
}

enum Report {
    Hello {
        idx: usize,
        client_id: u64,
        n_trees: usize,
        n_samples: usize,
        dim: usize,
    },
    Upload {
        idx: usize,
        contribution: ClientContribution,
    },
    CompleteSent,
    Failed {
        idx: usize,
        reason: String,
    },
}

enum Command {
    Quota(u64),
    Reject { code: u32, text: String },
    Complete(String),
    Shutdown,
}

/// Grace added to coordinator-side waits so a wedged worker thread cannot
/// hang the session (workers themselves respect the same deadlines).
const COORD_GRACE: Duration = Duration::from_secs(5);

fn worker(
    mut chan: Box<dyn MessageChannel>,
    idx: usize,
    hello_deadline: Instant,
    upload_timeout: Duration,
    reports: Sender<Report>,
    commands: Receiver<Command>,
) {
    let fail = |reason: String| {
        let _ = reports.send(Report::Failed { idx, reason });
    };

    // Phase 1: Hello.
    let client_id = match chan.recv_deadline(hello_deadline) {
        Ok(Some(Message::Hello {
            client_id,
            n_local_trees,
            n_samples,
            feature_dim,
        })) => {
            let _ = reports.send(Report::Hello {
                idx,
                client_id,
                n_trees: n_local_trees as usize,
                n_samples: n_samples as usize,
                dim: feature_dim as usize,
            });
            client_id
        }
        Ok(Some(other)) => {
            let _ = chan.send(&Message::Error {
                code: error_code::UNEXPECTED,
                text: format!("expected Hello, got {}", other.kind_name()),
            });
            return fail(format!("sent {} before Hello", other.kind_name()));
        }
        Ok(None) => return fail("Hello timeout".into()),
        Err(e) => {
            let _ = chan.send(&Message::Error {
                code: error_code::MALFORMED,
                text: e.to_string(),
            });
            return fail(format!("malformed Hello: {e}"));
        }
    };

    // Phase 2: wait for the coordinator's verdict, forward the quota.
    let quota = match commands.recv() {
        Ok(Command::Quota(q)) => q,
        Ok(Command::Reject { code, text }) => {
            let _ = chan.send(&Message::Error { code, text });
            return;
        }
        Ok(Command::Shutdown) | Err(_) => return,
        Ok(Command::Complete(_)) => unreachable!("Complete before Quota"),
    };
    if let Err(e) = chan.send(&Message::Quota { client_id, quota }) {
        return fail(format!("Quota write failed: {e}"));
    }

    // Phase 3: collect the upload.
    match chan.recv_deadline(Instant::now() + upload_timeout) {
        Ok(Some(Message::TreeUpload {
            client_id: upload_id,
            trees,
            grid,
        })) => {
            if upload_id != client_id {
                let _ = chan.send(&Message::Error {
                    code: error_code::UNEXPECTED,
                    text: format!("upload for client {upload_id} on client {client_id}'s connection"),
                });
                return fail(format!("client id changed mid-session ({client_id} -> {upload_id})"));
            }
            let decoded: Result<Vec<SurvivalTree>> =
                trees.iter().map(|t| codec::deserialize_tree(t)).collect();
            let grid: Result<Vec<f64>> = grid.iter().map(|g| codec::parse_decimal(g)).collect();
            match (decoded, grid) {
                (Ok(trees), Ok(grid)) => {
                    let _ = reports.send(Report::Upload {
                        idx,
                        contribution: ClientContribution {
                            client_id: client_id as usize,
                            trees,
                            grid,
                        },
                    });
                }
                (Err(e), _) | (_, Err(e)) => {
                    let _ = chan.send(&Message::Error {
                        code: error_code::MALFORMED,
                        text: e.to_string(),
                    });
                    return fail(format!("undecodable upload: {e}"));
                }
            }
        }
        Ok(Some(other)) => {
            let _ = chan.send(&Message::Error {
                code: error_code::UNEXPECTED,
                text: format!("expected TreeUpload, got {}", other.kind_name()),
            });
            return fail(format!("sent {} instead of TreeUpload", other.kind_name()));
        }
        Ok(None) => return fail("upload timeout".into()),
        Err(e) => {
            let _ = chan.send(&Message::Error {
                code: error_code::MALFORMED,
                text: e.to_string(),
            });
            return fail(format!("malformed upload: {e}"));
        }
    }

    // Phase 4: broadcast the digest.
    match commands.recv() {
        Ok(Command::Complete(digest)) => {
            if chan.send(&Message::Complete { digest }).is_ok() {
                let _ = reports.send(Report::CompleteSent);
            } else {
                fail("Complete write failed".into());
            }
        }
        Ok(Command::Reject { code, text }) => {
            let _ = chan.send(&Message::Error { code, text });
        }
        _ => {}
    }
}

/// Run one full session over already-established channels. The Hello
/// barrier closes at `hello_deadline`; quota planning happens exactly once,
/// over the clients that made it.
fn serve_with_deadline<R: Rng>(
    channels: Vec<Box<dyn MessageChannel>>,
    opts: &ServerOptions,
    rng: &mut R,
    hello_deadline: Instant,
) -> Result<(SurvivalForest, SessionLog)> {
    if channels.is_empty() {
        return Err(Error::Protocol("no clients connected".into()));
    }
    let n_conns = channels.len();
    let mut log = SessionLog::default();

    let (report_tx, report_rx) = mpsc::channel::<Report>();
    let mut command_txs: Vec<Sender<Command>> = Vec::with_capacity(n_conns);

    std::thread::scope(|scope| -> Result<(SurvivalForest, SessionLog)> {
        for (idx, chan) in channels.into_iter().enumerate() {
            let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
            command_txs.push(cmd_tx);
            let reports = report_tx.clone();
            let upload_timeout = opts.upload_timeout;
            scope.spawn(move || worker(chan, idx, hello_deadline, upload_timeout, reports, cmd_rx));
        }

        // Hello barrier: every worker reports exactly once in phase 1.
        let mut hellos: Vec<(usize, u64, usize, usize, usize)> = Vec::new();
        let barrier_cutoff = hello_deadline + COORD_GRACE;
        let mut outstanding = n_conns;
        while outstanding > 0 {
            let wait = barrier_cutoff.saturating_duration_since(Instant::now());
            match report_rx.recv_timeout(wait) {
                Ok(Report::Hello {
                    idx,
                    client_id,
                    n_trees,
                    n_samples,
                    dim,
                }) => {
                    log.hello += 1;
                    hellos.push((idx, client_id, n_trees, n_samples, dim));
                    outstanding -= 1;
                }
                Ok(Report::Failed { idx, reason }) => {
                    log.excluded.push(format!("connection {idx}: {reason}"));
                    log::warn!("excluding connection {idx}: {reason}");
                    outstanding -= 1;
                }
                Ok(_) => unreachable!("no uploads before quotas"),
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }

        // Resolve duplicates (first connection with a given id wins) and
        // feature-dimension mismatches against the lowest client id.
        hellos.sort_by_key(|&(idx, client_id, ..)| (client_id, idx));
        let mut admitted: Vec<(usize, u64, usize, usize, usize)> = Vec::new();
        for hello in hellos {
            let (idx, client_id, _, _, dim) = hello;
            if admitted.iter().any(|&(_, id, ..)| id == client_id) {
                log.excluded.push(format!("connection {idx}: duplicate client id {client_id}"));
                let _ = command_txs[idx].send(Command::Reject {
                    code: error_code::REJECTED,
                    text: format!("client id {client_id} already registered"),
                });
                continue;
            }
            if let Some(&(_, _, _, _, dim0)) = admitted.first() {
                if dim != dim0 {
                    log.excluded.push(format!(
                        "connection {idx}: feature dimension {dim} != {dim0}"
                    ));
                    let _ = command_txs[idx].send(Command::Reject {
                        code: error_code::REJECTED,
                        text: format!("feature dimension {dim} does not match the cohort's {dim0}"),
                    });
                    continue;
                }
            }
            admitted.push(hello);
        }
        if admitted.is_empty() {
            for tx in &command_txs {
                let _ = tx.send(Command::Shutdown);
            }
            return Err(Error::Protocol("no client completed the Hello barrier".into()));
        }

        // One quota plan over the admitted clients, in client-id order.
        let loads: Vec<(usize, usize)> = admitted
            .iter()
            .map(|&(_, _, n_trees, n_samples, _)| (n_samples, n_trees))
            .collect();
        let plan = assign_tree_counts(&loads, opts.ensemble_target, rng)?;

        let mut pending: HashMap<usize, u64> = HashMap::new();
        for (&(idx, ..), &quota) in admitted.iter().zip(&plan.quotas) {
            if command_txs[idx].send(Command::Quota(quota as u64)).is_ok() {
                log.quota += 1;
                pending.insert(idx, quota as u64);
            }
        }

        // Upload collection.
        let mut contributions: Vec<ClientContribution> = Vec::new();
        let upload_cutoff = Instant::now() + opts.upload_timeout + COORD_GRACE;
        while !pending.is_empty() {
            let wait = upload_cutoff.saturating_duration_since(Instant::now());
            match report_rx.recv_timeout(wait) {
                Ok(Report::Upload { idx, contribution }) => {
                    if pending.remove(&idx).is_some() {
                        log.tree_upload += 1;
                        contributions.push(contribution);
                    }
                }
                Ok(Report::Failed { idx, reason }) => {
                    if pending.remove(&idx).is_some() {
                        log.excluded.push(format!("connection {idx}: {reason}"));
                        log::warn!("excluding connection {idx}: {reason}");
                    }
                }
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    for idx in pending.keys() {
                        log.excluded.push(format!("connection {idx}: no upload"));
                    }
                    break;
                }
            }
        }
        if contributions.is_empty() {
            for tx in &command_txs {
                let _ = tx.send(Command::Shutdown);
            }
            return Err(Error::Protocol("no client uploaded trees".into()));
        }

        let forest = match merge_ensemble(&contributions) {
            Ok(f) => f,
            Err(e) => {
                for c in &contributions {
                    let idx = admitted
                        .iter()
                        .find(|&&(_, id, ..)| id as usize == c.client_id)
                        .map(|&(idx, ..)| idx);
                    if let Some(idx) = idx {
                        let _ = command_txs[idx].send(Command::Reject {
                            code: error_code::SERVER,
                            text: format!("merge failed: {e}"),
                        });
                    }
                }
                return Err(e);
            }
        };
        let digest = codec::forest_digest(&forest);
        log.digest = digest.clone();

        let uploader_idxs: Vec<usize> = contributions
            .iter()
            .filter_map(|c| {
                admitted
                    .iter()
                    .find(|&&(_, id, ..)| id as usize == c.client_id)
                    .map(|&(idx, ..)| idx)
            })
            .collect();
        for &idx in &uploader_idxs {
            let _ = command_txs[idx].send(Command::Complete(digest.clone()));
        }
        let complete_cutoff = Instant::now() + COORD_GRACE;
        let mut awaiting = uploader_idxs.len();
        while awaiting > 0 {
            let wait = complete_cutoff.saturating_duration_since(Instant::now());
            match report_rx.recv_timeout(wait) {
                Ok(Report::CompleteSent) => {
                    log.complete += 1;
                    awaiting -= 1;
                }
                Ok(Report::Failed { idx, reason }) => {
                    log.excluded.push(format!("connection {idx}: {reason}"));
                    awaiting -= 1;
                }
                Ok(_) => {}
                Err(_) => break,
            }
        }
        for tx in &command_txs {
            let _ = tx.send(Command::Shutdown);
        }
        Ok((forest, log))
    })
}

/// Session over pre-established channels; the Hello clock starts now.
pub fn serve_connections<R: Rng>(
    channels: Vec<Box<dyn MessageChannel>>,
    opts: &ServerOptions,
    rng: &mut R,
) -> Result<(SurvivalForest, SessionLog)> {
    serve_with_deadline(channels, opts, rng, Instant::now() + opts.hello_timeout)
}

/// Accept up to `expected_clients` TCP connections on an already-bound
/// listener, then run the session. Connections and Hellos share one
/// deadline window.
pub fn run_server_on<R: Rng>(
    listener: TcpListener,
    opts: &ServerOptions,
    rng: &mut R,
) -> Result<(SurvivalForest, SessionLog)> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + opts.hello_timeout;
    let mut channels: Vec<Box<dyn MessageChannel>> = Vec::new();
    while channels.len() < opts.expected_clients && Instant::now() < deadline {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                channels.push(Box::new(TcpChannel::new(stream)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if channels.len() < opts.expected_clients {
        log::warn!(
            "only {} of {} expected clients connected before the deadline",
            channels.len(),
            opts.expected_clients
        );
    }
    serve_with_deadline(channels, opts, rng, deadline)
}

/// Bind and serve one federation session.
pub fn run_server<R: Rng>(
    bind: &str,
    opts: &ServerOptions,
    rng: &mut R,
) -> Result<(SurvivalForest, SessionLog)> {
    run_server_on(TcpListener::bind(bind)?, opts, rng)
}

/// The client half of the exchange over any channel. Trains (if needed) and
/// scores the local forest, says Hello, answers the quota with a weighted
/// tree sample, and returns the server's model digest.
pub fn run_client_on_channel<R: Rng>(
    chan: &mut dyn MessageChannel,
    client: &mut ClientState,
    params: &RsfParams,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<String> {
    if client.forest.is_none() {
        local_train(client, params)?;
    }
    let weights = evaluate_trees(client, strategy)?;
    client.tree_weights = Some(weights);
    let forest = client.forest.as_ref().expect("trained above");

    chan.send(&Message::Hello {
        client_id: client.client_id as u64,
        n_local_trees: forest.trees.len() as u64,
        n_samples: client.n_local() as u64,
        feature_dim: client.train.n_features() as u64,
    })?;

    let quota = match chan.recv()? {
        Message::Quota { client_id, quota } => {
            if client_id != client.client_id as u64 {
                return Err(Error::Protocol(format!(
                    "quota addressed to client {client_id}, we are {}",
                    client.client_id
                )));
            }
            quota as usize
        }
        Message::Error { code, text } => {
            return Err(Error::Protocol(format!("server error {code}: {text}")))
        }
        other => {
            return Err(Error::Protocol(format!(
                "expected Quota, got {}",
                other.kind_name()
            )))
        }
    };

    let trees = sample_trees(client, quota, rng)?;
    chan.send(&Message::TreeUpload {
        client_id: client.client_id as u64,
        trees: trees.iter().map(codec::serialize_tree).collect(),
        grid: forest
            .event_time_grid
            .iter()
            .map(|&t| codec::decimal(t))
            .collect(),
    })?;

    match chan.recv()? {
        Message::Complete { digest } => Ok(digest),
        Message::Error { code, text } => {
            Err(Error::Protocol(format!("server error {code}: {text}")))
        }
        other => Err(Error::Protocol(format!(
            "expected Complete, got {}",
            other.kind_name()
        ))),
    }
}

/// TCP client: connect, run the exchange, return the global model digest.
pub fn run_client<R: Rng>(
    addr: &str,
    client: &mut ClientState,
    params: &RsfParams,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<String> {
    let mut chan = TcpChannel::connect(addr)?;
    run_client_on_channel(&mut chan, client, params, strategy, rng)
}

/// Whole-federation run over in-process channels: one thread per client,
/// the coordinator in this thread. `client_seeds` drive each client's
/// sampling rng; with the same seeds a TCP run produces the same digest.
pub fn simulate_federation<R: Rng>(
    clients: &mut [ClientState],
    params: &RsfParams,
    opts: &ServerOptions,
    client_seeds: &[u64],
    server_rng: &mut R,
) -> Result<(SurvivalForest, SessionLog, Vec<Result<String>>)> {
    if client_seeds.len() != clients.len() {
        return Err(Error::InvalidInput(format!(
            "{} seeds for {} clients",
            client_seeds.len(),
            clients.len()
        )));
    }
    let mut server_ends: Vec<Box<dyn MessageChannel>> = Vec::with_capacity(clients.len());
    let mut client_ends = Vec::with_capacity(clients.len());
    for _ in 0..clients.len() {
        let (server_end, client_end) = local_pair();
        server_ends.push(Box::new(server_end));
        client_ends.push(client_end);
    }

    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(client_ends.len());
        for ((client, mut chan), &seed) in clients
            .iter_mut()
            .zip(client_ends.into_iter())
            .zip(client_seeds)
        {
            let params = params.clone();
            let strategy = opts.strategy;
            handles.push(scope.spawn(move || {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
                run_client_on_channel(&mut chan, client, &params, strategy, &mut rng)
            }));
        }
        let served = serve_connections(server_ends, opts, server_rng);
        let outcomes: Vec<Result<String>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("client thread panicked".into()))))
            .collect();
        let (forest, log) = served?;
        Ok((forest, log, outcomes))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasplit::{synth_survival, validation_split};
    use crate::transport::read_message;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::io::Write;
    use std::net::TcpStream;

    fn synth_client(id: usize, n: usize, seed: u64) -> ClientState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let local = synth_survival(n, 3, 0.3, &mut rng).unwrap();
        let (train, validation) = validation_split(&local, 0.3, &mut rng).unwrap();
        ClientState::new(id, train, validation)
    }

    fn quick_opts(k: usize, t: usize) -> ServerOptions {
        let mut o = ServerOptions::new(k, t, SamplingStrategy::Uniform);
        o.hello_timeout = Duration::from_secs(10);
        o.upload_timeout = Duration::from_secs(10);
        o
    }

    #[test]
    fn two_clients_exchange_exactly_one_round() {
        let mut clients = vec![synth_client(0, 60, 1), synth_client(1, 80, 2)];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (forest, log, outcomes) = simulate_federation(
            &mut clients,
            &RsfParams::new(4, 9),
            &quick_opts(2, 6),
            &[11, 22],
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            (log.hello, log.quota, log.tree_upload, log.complete),
            (2, 2, 2, 2)
        );
        assert!(log.excluded.is_empty());
        assert_eq!(forest.trees.len(), 6);
        for outcome in outcomes {
            assert_eq!(outcome.unwrap(), log.digest);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let run = || {
            let mut clients = vec![synth_client(0, 50, 3), synth_client(1, 70, 4)];
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            let mut opts = quick_opts(2, 5);
            opts.strategy = SamplingStrategy::Concordance;
            simulate_federation(&mut clients, &RsfParams::new(4, 8), &opts, &[7, 8], &mut rng)
                .unwrap()
                .1
                .digest
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn silent_client_is_excluded_and_quotas_replanned() {
        // Two live clients plus one channel end that never speaks: the
        // barrier times out for it and the plan covers the survivors, so
        // the full target still lands.
        let mut clients = vec![synth_client(0, 60, 5), synth_client(1, 60, 6)];
        let (server_silent, _client_silent_keepalive) = local_pair();

        let mut server_ends: Vec<Box<dyn MessageChannel>> = Vec::new();
        let mut client_ends = Vec::new();
        for _ in 0..2 {
            let (s, c) = local_pair();
            server_ends.push(Box::new(s));
            client_ends.push(c);
        }
        server_ends.push(Box::new(server_silent));

        let mut opts = quick_opts(3, 6);
        opts.hello_timeout = Duration::from_millis(400);
        let params = RsfParams::new(4, 10);
        let (forest, log) = std::thread::scope(|scope| {
            for (client, mut chan) in clients.iter_mut().zip(client_ends.into_iter()) {
                let params = params.clone();
                scope.spawn(move || {
                    let mut rng = ChaCha12Rng::seed_from_u64(99);
                    run_client_on_channel(
                        &mut chan,
                        client,
                        &params,
                        SamplingStrategy::Uniform,
                        &mut rng,
                    )
                });
            }
            let mut rng = ChaCha12Rng::seed_from_u64(1);
            serve_connections(server_ends, &opts, &mut rng)
        })
        .unwrap();

        assert_eq!(log.hello, 2);
        assert_eq!(log.excluded.len(), 1);
        assert!(log.excluded[0].contains("Hello timeout"));
        // min(T, ΣT_k over survivors) = min(6, 8): conservation holds.
        assert_eq!(forest.trees.len(), 6);
        assert_eq!((log.quota, log.tree_upload, log.complete), (2, 2, 2));
    }

    #[test]
    fn tcp_and_in_process_agree_on_the_digest() {
        let make_clients = || vec![synth_client(0, 50, 7), synth_client(1, 65, 8)];
        let params = RsfParams::new(3, 21);
        let mut opts = quick_opts(2, 4);
        opts.strategy = SamplingStrategy::InverseIbs;

        let mut sim_clients = make_clients();
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let (_, sim_log, _) =
            simulate_federation(&mut sim_clients, &params, &opts, &[41, 42], &mut rng).unwrap();

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let mut tcp_clients = make_clients();
        let tcp_log = std::thread::scope(|scope| {
            let server = scope.spawn({
                let opts = opts.clone();
                move || {
                    let mut rng = ChaCha12Rng::seed_from_u64(1234);
                    run_server_on(listener, &opts, &mut rng).unwrap().1
                }
            });
            for (client, seed) in tcp_clients.iter_mut().zip([41u64, 42]) {
                let addr = addr.clone();
                let params = params.clone();
                scope.spawn(move || {
                    let mut rng = ChaCha12Rng::seed_from_u64(seed);
                    run_client(&addr, client, &params, SamplingStrategy::InverseIbs, &mut rng)
                        .unwrap()
                });
            }
            server.join().unwrap()
        });

        assert_eq!(sim_log.digest, tcp_log.digest);
        assert_eq!(tcp_log.complete, 2);
    }

    #[test]
    fn malformed_first_frame_gets_an_error_reply() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let mut opts = quick_opts(1, 2);
        opts.hello_timeout = Duration::from_secs(5);

        std::thread::scope(|scope| {
            scope.spawn(move || {
                let mut rng = ChaCha12Rng::seed_from_u64(0);
                // The only client is garbage, so the session fails overall.
                assert!(run_server_on(listener, &opts, &mut rng).is_err());
            });
            let mut stream = TcpStream::connect(addr).unwrap();
            // Valid header, kind = Hello, payload that is not JSON.
            let payload = b"\x01this is not json";
            let mut frame = (payload.len() as u32).to_be_bytes().to_vec();
            frame.extend_from_slice(payload);
            stream.write_all(&frame).unwrap();
            match read_message(&mut stream).unwrap() {
                Message::Error { code, .. } => assert_eq!(code, error_code::MALFORMED),
                other => panic!("expected Error frame, got {}", other.kind_name()),
            }
        });
    }

    #[test]
    fn client_surfaces_server_error_frames() {
        let (mut server_end, mut client_end) = local_pair();
        let mut client = synth_client(0, 50, 9);
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha12Rng::seed_from_u64(3);
            run_client_on_channel(
                &mut client_end,
                &mut client,
                &RsfParams::new(2, 4),
                SamplingStrategy::Uniform,
                &mut rng,
            )
        });
        // Swallow the Hello, then refuse.
        assert!(matches!(server_end.recv().unwrap(), Message::Hello { .. }));
        server_end
            .send(&Message::Error {
                code: error_code::REJECTED,
                text: "not today".into(),
            })
            .unwrap();
        let err = handle.join().unwrap().unwrap_err();
        assert!(err.to_string().contains("server error 3"), "{err}");
    }

    #[test]
    fn zero_quota_client_still_completes() {
        // Target 1 with two clients: someone ends up with quota 0 yet must
        // upload (an empty batch) and receive Complete.
        let mut clients = vec![synth_client(0, 60, 11), synth_client(1, 60, 12)];
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (forest, log, outcomes) = simulate_federation(
            &mut clients,
            &RsfParams::new(3, 14),
            &quick_opts(2, 1),
            &[1, 2],
            &mut rng,
        )
        .unwrap();
        assert_eq!(forest.trees.len(), 1);
        assert_eq!((log.quota, log.tree_upload, log.complete), (2, 2, 2));
        for outcome in outcomes {
            assert_eq!(outcome.unwrap(), log.digest);
        }
    }

    #[test]
    fn duplicate_client_ids_are_rejected() {
        let mut a = synth_client(7, 50, 13);
        let mut b = synth_client(7, 50, 14);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let result = std::thread::scope(|scope| {
            let mut server_ends: Vec<Box<dyn MessageChannel>> = Vec::new();
            for client in [&mut a, &mut b] {
                let (s, mut c) = local_pair();
                server_ends.push(Box::new(s));
                let params = RsfParams::new(2, 7);
                scope.spawn(move || {
                    let mut rng = ChaCha12Rng::seed_from_u64(1);
                    let _ = run_client_on_channel(
                        &mut c,
                        client,
                        &params,
                        SamplingStrategy::Uniform,
                        &mut rng,
                    );
                });
            }
            serve_connections(server_ends, &quick_opts(2, 2), &mut rng)
        });
        let (forest, log) = result.unwrap();
        assert_eq!(forest.trees.len(), 2);
        assert_eq!(log.tree_upload, 1);
        assert!(log
            .excluded
            .iter()
            .any(|line| line.contains("duplicate client id 7")));
    }
}
