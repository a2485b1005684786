//! Addressing shared by the sans-IO parties and their transports.

use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::protocol::ChannelId;

/// An outbound datagram.
///
/// For the server, `channel` names the local socket to send from. For a
/// vehicle or user, it names the server port to send to; `peer` then only
/// supplies the server's IP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmit {
    pub channel: ChannelId,
    pub peer: SocketAddr,
    pub bytes: Vec<u8>,
}

/// The server's five UDP ports, one per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerPorts(pub [u16; 5]);

impl Default for ServerPorts {
    fn default() -> Self {
        Self([7000, 7001, 7002, 7003, 7004])
    }
}

impl ServerPorts {
    pub fn port(&self, channel: ChannelId) -> u16 {
        self.0[usize::from(channel.code())]
    }

    pub fn channel_of(&self, port: u16) -> Option<ChannelId> {
        self.0
            .iter()
            .position(|&p| p == port)
            .and_then(|i| ChannelId::from_code(i as u8))
    }

    /// Server address for `channel`, given any address on the server host.
    pub fn addr(&self, server: SocketAddr, channel: ChannelId) -> SocketAddr {
        SocketAddr::new(server.ip(), self.port(channel))
    }
}

impl std::str::FromStr for ServerPorts {
    type Err = String;

    /// `c,vv,vd,uv,ud`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ports: Vec<u16> = s
            .split(',')
            .map(|p| p.trim().parse::<u16>().map_err(|e| format!("bad port {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let ports: [u16; 5] = ports
            .try_into()
            .map_err(|v: Vec<u16>| format!("expected 5 ports, got {}", v.len()))?;
        let mut sorted = ports;
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err("ports must be distinct".into());
        }
        Ok(Self(ports))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ports_map_channels() {
        let p = ServerPorts::default();
        assert_eq!(p.port(ChannelId::Control), 7000);
        assert_eq!(p.port(ChannelId::UserDataOut), 7004);
        assert_eq!(p.channel_of(7002), Some(ChannelId::VehicleDataIn));
        assert_eq!(p.channel_of(8000), None);
        assert_eq!("1,2,3,4,5".parse::<ServerPorts>().unwrap(), ServerPorts([1, 2, 3, 4, 5]));
        assert!("1,2,3,4".parse::<ServerPorts>().is_err());
        assert!("1,1,3,4,5".parse::<ServerPorts>().is_err());
    }
}
