//! Wall-clock engine loop: sync over UDP, inject/query over TCP.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use epistate::control::handle_line;
use epistate::engine::{Agent, AgentConfig, Module, Role};
use epistate::refmods::{DeviceBank, MockDevice, PowerControl, PowerProbe, RunStateMode, RunStateModule};
use epistate::{build_graph, load_nodes, MutationSet, NodeRecord, SyncDatagram};
use uuid::Uuid;

use crate::{sync_config, LaunchRole, RunArgs};

type Modules = Vec<(String, Box<dyn Module>)>;

fn build_agent(args: &RunArgs, set: MutationSet) -> anyhow::Result<Agent> {
    let devices = DeviceBank::shared();
    let (role, nodes, modules): (Role, Vec<NodeRecord>, Modules) = match args.role {
        LaunchRole::Parent => {
            let path = args.nodes.as_ref().expect("checked");
            let mut nodes = load_nodes(path, set.schema())?;
            let mut bank = devices.lock().expect("fresh lock");
            for n in &mut nodes {
                n.parent.get_or_insert(args.id);
                // Children run as separate processes, so their hosts are up.
                bank.insert(n.id, MockDevice { power: true, ..MockDevice::default() });
            }
            drop(bank);
            let modules: Modules = vec![
                ("power-probe".into(), Box::new(PowerProbe::remote(devices.clone()))),
                ("power-ipmi".into(), Box::new(PowerControl::new(devices.clone(), "ipmi"))),
                ("power-redfish".into(), Box::new(PowerControl::new(devices.clone(), "redfish"))),
                ("runstate".into(), Box::new(RunStateModule::new(devices.clone(), RunStateMode::Parent))),
            ];
            (Role::Parent, nodes, modules)
        }
        LaunchRole::Child => {
            let parent = args.parent_id.expect("checked");
            devices
                .lock()
                .expect("fresh lock")
                .insert(args.id, MockDevice { power: true, ..MockDevice::default() });
            let modules: Modules = vec![
                ("power-probe".into(), Box::new(PowerProbe::local(devices.clone()))),
                ("runstate".into(), Box::new(RunStateModule::new(devices.clone(), RunStateMode::Child))),
            ];
            (Role::Child { parent }, vec![NodeRecord::new(args.id).with_parent(parent)], modules)
        }
    };
    let config = AgentConfig {
        id: args.id,
        role,
        sync: sync_config(args),
    };
    Ok(Agent::new(config, Arc::new(build_graph(&set)), nodes, modules)?)
}

/// Answers every request on each pending control connection.
fn serve_control(listener: &TcpListener, agent: &mut Agent) {
    loop {
        let stream = match listener.accept() {
            Ok((stream, _)) => stream,
            Err(e) if e.kind() == ErrorKind::WouldBlock => return,
            Err(e) => {
                eprintln!("control accept failed: {e}");
                return;
            }
        };
        if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(Duration::from_secs(1))).is_err() {
            continue;
        }
        let Ok(mut writer) = stream.try_clone() else {
            continue;
        };
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else {
                break;
            };
            if line.trim().is_empty() {
                continue;
            }
            let reply = handle_line(agent, &line);
            if writeln!(writer, "{reply}").is_err() {
                break;
            }
        }
    }
}

pub fn run(args: &RunArgs, set: MutationSet) -> anyhow::Result<()> {
    let mut agent = build_agent(args, set)?;
    let socket = UdpSocket::bind(args.listen).with_context(|| format!("binding {}", args.listen))?;
    socket.set_nonblocking(true)?;
    let control = match args.control {
        Some(addr) => {
            let l = TcpListener::bind(addr).with_context(|| format!("binding control {addr}"))?;
            l.set_nonblocking(true)?;
            Some(l)
        }
        None => None,
    };
    let mut peers: HashMap<Uuid, SocketAddr> = HashMap::new();
    if let (Some(id), Some(addr)) = (args.parent_id, args.parent_addr) {
        peers.insert(id, addr);
    }

    let tick = Duration::from_millis(args.tick_ms.max(1));
    let limit = args.ticks.unwrap_or(0);
    let started = Instant::now();
    let mut buf = vec![0u8; 64 * 1024];
    let mut now = 0u64;
    while limit == 0 || now < limit {
        now += 1;
        let due = started + tick * now as u32;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        if let Some(l) = &control {
            serve_control(l, &mut agent);
        }
        let mut inbound = Vec::new();
        loop {
            match socket.recv_from(&mut buf) {
                Ok((n, from)) => {
                    let bytes = buf[..n].to_vec();
                    // Children are addressed wherever they last spoke from.
                    if let Ok(d) = SyncDatagram::decode(&bytes) {
                        if args.role == LaunchRole::Parent {
                            peers.insert(d.src, from);
                        }
                    }
                    inbound.push(bytes);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) => {
                    eprintln!("receive failed: {e}");
                    break;
                }
            }
        }
        let outbound = match agent.tick(now, &inbound) {
            Ok(out) => out,
            Err(e) => {
                eprintln!("sync error: {e}");
                Vec::new()
            }
        };
        for line in agent.take_log() {
            println!("{line}");
        }
        for o in outbound {
            match peers.get(&o.dst) {
                Some(addr) => {
                    if let Err(e) = socket.send_to(&o.bytes, addr) {
                        eprintln!("send to {addr} failed: {e}");
                    }
                }
                None => eprintln!("no address for {}", o.dst),
            }
        }
    }
    Ok(())
}
