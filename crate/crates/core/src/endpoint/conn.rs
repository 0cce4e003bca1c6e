use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::netcore::{seq_le, seq_lt, HostAddr, Micros, SeqNum, TcpFlags, TcpSegment};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("operation `{op}` not allowed in state {state:?}")]
    InvalidState { op: &'static str, state: TcpState },
    #[error("refusing to send an empty payload")]
    EmptyPayload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TcpState {
    Closed,
    SynSent,
    SynRcvd,
    Established,
    FinWait,
    CloseWait,
    ClosedFinal,
}

/// How an endpoint picks its initial send sequence number.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum IssPolicy {
    Fixed(SeqNum),
    Random(ChaCha8Rng),
}

impl IssPolicy {
    pub fn next_iss(&mut self) -> SeqNum {
        match self {
            IssPolicy::Fixed(s) => *s,
            IssPolicy::Random(rng) => SeqNum(rng.next_u32()),
        }
    }
}

/// What a segment did to an endpoint.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SegmentOutcome {
    pub emitted: Vec<TcpSegment>,
    pub delivered: Vec<u8>,
}

/// TCP-lite connection state. No retransmission, no windows, no options.
#[derive(Clone, Debug)]
pub struct ConnectionState {
    pub local: HostAddr,
    pub local_port: u16,
    pub remote: HostAddr,
    pub remote_port: u16,
    pub state: TcpState,
    pub iss: SeqNum,
    pub irs: SeqNum,
    pub snd_una: SeqNum,
    pub snd_nxt: SeqNum,
    pub rcv_nxt: SeqNum,
    pub sent_log: Vec<(Vec<u8>, Micros)>,
    pub rcvd_stream: Vec<u8>,
    fin_sent: bool,
    fin_acked: bool,
    peer_fin: bool,
}

impl ConnectionState {
    pub fn new(local: HostAddr, local_port: u16, remote: HostAddr, remote_port: u16) -> Self {
        ConnectionState {
            local,
            local_port,
            remote,
            remote_port,
            state: TcpState::Closed,
            iss: SeqNum(0),
            irs: SeqNum(0),
            snd_una: SeqNum(0),
            snd_nxt: SeqNum(0),
            rcv_nxt: SeqNum(0),
            sent_log: Vec::new(),
            rcvd_stream: Vec::new(),
            fin_sent: false,
            fin_acked: false,
            peer_fin: false,
        }
    }

    /// Active open. Emits the SYN.
    pub fn open(&mut self, iss: &mut IssPolicy, now: Micros) -> Result<TcpSegment, EndpointError> {
        if self.state != TcpState::Closed {
            return Err(self.invalid("open"));
        }
        self.iss = iss.next_iss();
        self.snd_una = self.iss;
        self.snd_nxt = self.iss.add(1);
        self.state = TcpState::SynSent;
        Ok(self.segment(self.iss, SeqNum(0), TcpFlags::SYN, Vec::new(), now))
    }

    /// Passive open from a received SYN. Emits the SYN-ACK.
    pub fn accept(
        local: HostAddr,
        syn: &TcpSegment,
        iss: &mut IssPolicy,
        now: Micros,
    ) -> (ConnectionState, TcpSegment) {
        let mut st = ConnectionState::new(local, syn.dport, syn.src, syn.sport);
        st.iss = iss.next_iss();
        st.irs = syn.seq;
        st.rcv_nxt = syn.seq.add(1);
        st.snd_una = st.iss;
        st.snd_nxt = st.iss.add(1);
        st.state = TcpState::SynRcvd;
        let synack = st.segment(st.iss, st.rcv_nxt, TcpFlags::SYN | TcpFlags::ACK, Vec::new(), now);
        (st, synack)
    }

    pub fn is_established(&self) -> bool {
        self.state == TcpState::Established
    }

    /// True once everything sent has been acknowledged by the peer.
    pub fn all_acked(&self) -> bool {
        self.snd_una == self.snd_nxt
    }

    pub fn on_segment(&mut self, seg: &TcpSegment, now: Micros) -> SegmentOutcome {
        let mut out = SegmentOutcome::default();
        match self.state {
            TcpState::Closed | TcpState::ClosedFinal => return out,
            _ => {}
        }

        if seg.has(TcpFlags::RST) {
            let acceptable = match self.state {
                TcpState::SynSent => seg.has(TcpFlags::ACK) && seg.ack == self.snd_nxt,
                _ => seg.seq == self.rcv_nxt,
            };
            if acceptable {
                self.state = TcpState::ClosedFinal;
            }
            return out;
        }

        match self.state {
            TcpState::SynSent => {
                if seg.has(TcpFlags::SYN | TcpFlags::ACK) && seg.ack == self.snd_nxt {
                    self.irs = seg.seq;
                    self.rcv_nxt = seg.seq.add(1);
                    self.snd_una = seg.ack;
                    self.state = TcpState::Established;
                    out.emitted.push(self.ack_segment(now));
                }
                return out;
            }
            TcpState::SynRcvd => {
                if seg.has(TcpFlags::SYN) || !seg.has(TcpFlags::ACK) || seg.ack != self.snd_nxt {
                    return out;
                }
                self.snd_una = seg.ack;
                self.state = TcpState::Established;
            }
            _ => {}
        }

        if seg.has(TcpFlags::ACK) && seq_lt(self.snd_una, seg.ack) && seq_le(seg.ack, self.snd_nxt) {
            self.snd_una = seg.ack;
            if self.fin_sent && seg.ack == self.snd_nxt {
                self.fin_acked = true;
            }
        }

        let mut need_ack = false;
        if !seg.payload.is_empty() {
            need_ack = true;
            let end = seg.end_seq_data();
            if seq_le(seg.seq, self.rcv_nxt) && seq_lt(self.rcv_nxt, end) {
                let skip = self.rcv_nxt.diff(seg.seq) as usize;
                let fresh = &seg.payload[skip..];
                self.rcvd_stream.extend_from_slice(fresh);
                out.delivered.extend_from_slice(fresh);
                self.rcv_nxt = end;
            }
        }
        if seg.has(TcpFlags::FIN) {
            need_ack = true;
            if !self.peer_fin && seg.end_seq_data() == self.rcv_nxt {
                self.rcv_nxt = self.rcv_nxt.add(1);
                self.peer_fin = true;
                if self.state == TcpState::Established {
                    self.state = TcpState::CloseWait;
                }
            }
        }
        if self.state == TcpState::FinWait && self.fin_acked && self.peer_fin {
            self.state = TcpState::ClosedFinal;
        }
        if need_ack {
            out.emitted.push(self.ack_segment(now));
        }
        out
    }

    /// Queue application bytes as one PSH-ACK segment.
    pub fn app_send(&mut self, data: &[u8], now: Micros) -> Result<TcpSegment, EndpointError> {
        if !matches!(self.state, TcpState::Established | TcpState::CloseWait) {
            return Err(self.invalid("app_send"));
        }
        if data.is_empty() {
            return Err(EndpointError::EmptyPayload);
        }
        let seg = self.segment(
            self.snd_nxt,
            self.rcv_nxt,
            TcpFlags::PSH | TcpFlags::ACK,
            data.to_vec(),
            now,
        );
        self.snd_nxt = self.snd_nxt.add(data.len() as u32);
        self.sent_log.push((data.to_vec(), now));
        Ok(seg)
    }

    pub fn close(&mut self, now: Micros) -> Result<TcpSegment, EndpointError> {
        if !matches!(self.state, TcpState::Established | TcpState::CloseWait) {
            return Err(self.invalid("close"));
        }
        let fin = self.segment(
            self.snd_nxt,
            self.rcv_nxt,
            TcpFlags::FIN | TcpFlags::ACK,
            Vec::new(),
            now,
        );
        self.snd_nxt = self.snd_nxt.add(1);
        self.fin_sent = true;
        self.state = TcpState::FinWait;
        Ok(fin)
    }

    pub fn abort(&mut self, now: Micros) -> Result<TcpSegment, EndpointError> {
        if matches!(self.state, TcpState::Closed | TcpState::ClosedFinal) {
            return Err(self.invalid("abort"));
        }
        let rst = self.segment(self.snd_nxt, SeqNum(0), TcpFlags::RST, Vec::new(), now);
        self.state = TcpState::ClosedFinal;
        Ok(rst)
    }

    fn ack_segment(&self, now: Micros) -> TcpSegment {
        self.segment(self.snd_nxt, self.rcv_nxt, TcpFlags::ACK, Vec::new(), now)
    }

    fn segment(&self, seq: SeqNum, ack: SeqNum, flags: TcpFlags, payload: Vec<u8>, now: Micros) -> TcpSegment {
        TcpSegment {
            src: self.local,
            dst: self.remote,
            sport: self.local_port,
            dport: self.remote_port,
            seq,
            ack,
            flags,
            payload,
            ts_sent: now,
        }
    }

    fn invalid(&self, op: &'static str) -> EndpointError {
        EndpointError::InvalidState { op, state: self.state }
    }
}

trait DataEnd {
    fn end_seq_data(&self) -> SeqNum;
}

impl DataEnd for TcpSegment {
    // End of the payload bytes, ignoring SYN/FIN.
    fn end_seq_data(&self) -> SeqNum {
        self.seq.add(self.payload.len() as u32)
    }
}
