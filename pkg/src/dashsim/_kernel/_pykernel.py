"""Pure-Python packet kernel: shaped links plus two transport endpoints.

This is the fallback for ``_ckernel`` and the reference it is tested against.
Both must schedule the same events in the same order, so any change here has
to be mirrored there (``tests/test_kernel_parity.py`` enforces it).

All quantities are integers: time in microseconds, token credit in
micro-bytes (1e-6 byte), rates in bytes per second.
"""

from __future__ import annotations

from collections import deque

from ..simcore import DEFAULT_EVENT_BUDGET, EventQueue, LivelockError, SimulationError

BACKEND = "python"

CLIENT = 0
SERVER = 1

PKT_DATA = 0
PKT_ACK = 1
PKT_CTRL = 2

_INFLIGHT = 0
_ACKED = 1
_LOST = 2

_UB = 1_000_000  # micro-bytes per byte

MAX_RTO_BACKOFF = 6  # RTO doubles per consecutive timeout, up to 64x


class Link:
    """One direction of the emulated path: token bucket, drop-tail queue, fixed delay.

    ``rates`` are bytes/s for the piecewise-constant steps starting at
    ``starts`` (``starts[0]`` must be 0). A rate of 0 means unshaped.
    """

    def __init__(self, starts, rates, burst, queue_capacity, delay_us,
                 drop_period=0, drop_phase=0):
        if not starts or starts[0] != 0:
            raise ValueError("rate schedule must start at t=0")
        if len(starts) != len(rates):
            raise ValueError("starts and rates differ in length")
        self.starts = [int(s) for s in starts]
        self.rates = [int(r) for r in rates]
        self.burst = int(burst)
        self.queue_capacity = int(queue_capacity)
        self.delay = int(delay_us)
        self.drop_period = int(drop_period)
        self.drop_phase = int(drop_phase)
        self._burst_ub = self.burst * _UB
        self._tokens_ub = self._burst_ub
        self.last_refill = 0
        self.last_depart = 0
        self._idx = 0
        self._q = deque()
        self.queued = 0
        self.drop_count = 0
        self.forced_drops = 0
        self.data_seen = 0
        self.bytes_out = 0
        self.packets_out = 0

    @property
    def tokens(self):
        return self._tokens_ub / _UB

    def rate_at(self, t):
        starts = self.starts
        i = len(starts) - 1
        while starts[i] > t:
            i -= 1
        return self.rates[i]

    def _refill(self, t):
        # credit from last_refill up to t, step by step
        starts = self.starts
        rates = self.rates
        n = len(starts)
        i = self._idx
        cur = self.last_refill
        tok = self._tokens_ub
        cap = self._burst_ub
        while cur < t:
            if i + 1 < n and starts[i + 1] <= t:
                end = starts[i + 1]
            else:
                end = t
            r = rates[i]
            if r == 0:
                tok = cap
            else:
                tok += r * (end - cur)
                if tok > cap:
                    tok = cap
            cur = end
            if i + 1 < n and starts[i + 1] <= cur:
                i += 1
        self._idx = i
        self._tokens_ub = tok
        self.last_refill = t

    def transmit(self, size, now, is_data=False):
        """Admit a packet at ``now``; return its arrival time, or -1 if dropped."""
        if size > self.burst:
            raise ValueError(f"packet of {size} B exceeds bucket depth {self.burst} B")
        if is_data and self.drop_period:
            k = self.data_seen
            self.data_seen = k + 1
            if k % self.drop_period == self.drop_phase:
                self.forced_drops += 1
                return -1
        q = self._q
        while q and q[0][0] <= now:
            self.queued -= q.popleft()[1]
        if self.queued + size > self.queue_capacity:
            self.drop_count += 1
            return -1
        t0 = now if now > self.last_depart else self.last_depart
        self._refill(t0)
        need = size * _UB
        tok = self._tokens_ub
        depart = t0
        if tok < need:
            starts = self.starts
            rates = self.rates
            n = len(starts)
            i = self._idx
            cur = t0
            while True:
                r = rates[i]
                if r == 0:
                    tok = need
                    break
                nxt = starts[i + 1] if i + 1 < n else -1
                dt = -((tok - need) // r)
                if nxt < 0 or cur + dt <= nxt:
                    tok += r * dt
                    cur += dt
                    break
                tok += r * (nxt - cur)
                cur = nxt
                i += 1
            if tok > self._burst_ub:
                tok = self._burst_ub
            self._idx = i
            depart = cur
            self.last_refill = cur
        self._tokens_ub = tok - need
        self.last_depart = depart
        if depart > now:
            q.append((depart, size))
            self.queued += size
        self.bytes_out += size
        self.packets_out += 1
        return depart + self.delay


class _Endpoint:
    __slots__ = (
        "idx", "cwnd", "ssthresh", "mss", "in_flight", "next_pn", "lowest",
        "largest_acked", "sb", "recovery_start", "retx", "newq", "sent_any",
        "rto_deadline", "rto_pending", "rto_backoff", "srtt", "ctrl_pending",
        "snd_off", "rcv_next", "pending",
        "rx_bytes", "tx_bytes", "tx_payload", "tx_retx_payload", "tx_header",
        "tx_ack_bytes", "tx_ctrl_bytes", "data_packets", "retx_packets",
        "rto_count", "loss_events", "lost_packets",
    )

    def __init__(self, idx, mss, init_cwnd, init_ssthresh, init_srtt):
        self.idx = idx
        self.mss = mss
        self.cwnd = init_cwnd
        self.ssthresh = init_ssthresh
        self.in_flight = 0
        self.next_pn = 0
        self.lowest = 0
        self.largest_acked = -1
        self.sb = {}
        self.recovery_start = -1
        self.retx = deque()
        self.newq = deque()
        self.sent_any = False
        self.rto_deadline = 0
        self.rto_pending = False
        self.rto_backoff = 0
        self.srtt = init_srtt
        self.ctrl_pending = False
        self.snd_off = []
        self.rcv_next = []
        self.pending = []
        self.rx_bytes = 0
        self.tx_bytes = 0
        self.tx_payload = 0
        self.tx_retx_payload = 0
        self.tx_header = 0
        self.tx_ack_bytes = 0
        self.tx_ctrl_bytes = 0
        self.data_packets = 0
        self.retx_packets = 0
        self.rto_count = 0
        self.loss_events = 0
        self.lost_packets = 0


class Engine:
    """Two endpoints (client=0, server=1) joined by an uplink and a downlink.

    Data packets get a fresh packet number on every (re)transmission and are
    acknowledged one ack packet per data packet. A packet is declared lost
    once a packet three numbers later has been acked, or on RTO; the RTO
    doubles on each consecutive timeout (Karn backoff).
    """

    def __init__(self, uplink, downlink, *, mss, data_header, first_extra=0,
                 ack_bytes, ctrl_bytes=0, ctrl_interval_us=0, init_cwnd,
                 init_ssthresh, min_rto_us, init_srtt_us, dupthresh=3,
                 log_packets=False, log_deliveries=False,
                 max_events=DEFAULT_EVENT_BUDGET):
        if mss <= first_extra:
            raise ValueError("mss must exceed first-packet header extension")
        self.links = (uplink, downlink)
        self.mss = int(mss)
        self.data_header = int(data_header)
        self.first_extra = int(first_extra)
        self.ack_bytes = int(ack_bytes)
        self.ctrl_bytes = int(ctrl_bytes)
        self.ctrl_interval = int(ctrl_interval_us)
        self.min_rto = int(min_rto_us)
        self.dupthresh = int(dupthresh)
        self.max_events = int(max_events)
        self.eps = (
            _Endpoint(CLIENT, self.mss, init_cwnd, init_ssthresh, init_srtt_us),
            _Endpoint(SERVER, self.mss, init_cwnd, init_ssthresh, init_srtt_us),
        )
        self.q = EventQueue()
        self.nslots = 0
        self.srv_watch = []
        self.cli_watch = []
        self.srv_last_resp = []
        self.resp_plan = []
        self.h_slot = []
        self.h_req_end = []
        self.h_resp_start = []
        self.h_resp_end = []
        self.h_resp_bytes = []
        self.h_jitter = []
        self.h_t_req = []
        self.h_t_first = []
        self.h_t_done = []
        self.h_rx_req = []
        self.h_rx_done = []
        self.log_packets = bool(log_packets)
        self.log_deliveries = bool(log_deliveries)
        self.packet_log = []
        self.delivery_log = []

    # -- clock -------------------------------------------------------------
    @property
    def now(self):
        return self.q.now

    @property
    def events_processed(self):
        return self.q.processed

    def advance_to(self, t):
        self.q.advance_to(t, self.max_events)

    def run_until_idle(self):
        return self.q.run_until_idle(self.max_events)

    def run_until_done(self, h):
        done = self.h_t_done
        q = self.q
        budget = self.max_events
        while done[h] < 0:
            if not q.step():
                raise SimulationError(f"queue drained at t={q.now} before fetch {h} completed")
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {self.max_events} exceeded at t={q.now}")
        return done[h]

    # -- streams and fetches ----------------------------------------------
    def add_stream(self):
        slot = self.nslots
        self.nslots += 1
        for ep in self.eps:
            ep.snd_off.append(0)
            ep.rcv_next.append(0)
            ep.pending.append({})
        self.srv_watch.append(deque())
        self.cli_watch.append(deque())
        self.srv_last_resp.append(0)
        self.resp_plan.append(0)
        return slot

    def write(self, ep_idx, slot, nbytes):
        if not 0 <= slot < self.nslots:
            raise KeyError(f"unknown stream slot {slot}")
        if nbytes <= 0:
            return
        e = self.eps[ep_idx]
        off = e.snd_off[slot]
        e.snd_off[slot] = off + nbytes
        nq = e.newq
        if nq:
            tail = nq[-1]
            if tail[0] == slot and tail[1] + tail[2] == off:
                tail[2] += nbytes
                self._try_send(e)
                return
        nq.append([slot, off, nbytes])
        self._try_send(e)

    def issue(self, slot, req_bytes, resp_bytes, jitter_us):
        """Client sends a request on ``slot``; the server answers ``resp_bytes`` once it has it."""
        if not 0 <= slot < self.nslots:
            raise KeyError(f"unknown stream slot {slot}")
        if req_bytes <= 0 or resp_bytes <= 0:
            raise ValueError("request and response must be non-empty")
        h = len(self.h_slot)
        cli = self.eps[CLIENT]
        start = self.resp_plan[slot]
        self.resp_plan[slot] = start + resp_bytes
        self.h_slot.append(slot)
        self.h_req_end.append(cli.snd_off[slot] + req_bytes)
        self.h_resp_start.append(start)
        self.h_resp_end.append(start + resp_bytes)
        self.h_resp_bytes.append(resp_bytes)
        self.h_jitter.append(int(jitter_us))
        self.h_t_req.append(self.q.now)
        self.h_t_first.append(-1)
        self.h_t_done.append(-1)
        self.h_rx_req.append(cli.rx_bytes)
        self.h_rx_done.append(-1)
        self.srv_watch[slot].append(h)
        self.cli_watch[slot].append(h)
        self.write(CLIENT, slot, req_bytes)
        return h

    def handle_times(self, h):
        return self.h_t_req[h], self.h_t_first[h], self.h_t_done[h]

    def handle_rx(self, h):
        return self.h_rx_req[h], self.h_rx_done[h]

    def account_rx(self, ep_idx, nbytes):
        self.eps[ep_idx].rx_bytes += nbytes

    def delivered(self, ep_idx, slot):
        return self.eps[ep_idx].rcv_next[slot]

    # -- congestion control -------------------------------------------------
    def cc_on_ack(self, ep_idx, acked):
        e = self.eps[ep_idx]
        if e.cwnd < e.ssthresh:
            e.cwnd += acked
        else:
            inc = e.mss * e.mss // e.cwnd
            e.cwnd += inc if inc > 0 else 1

    def cc_on_loss(self, ep_idx):
        e = self.eps[ep_idx]
        half = e.cwnd // 2
        floor = 2 * e.mss
        e.ssthresh = half if half > floor else floor
        e.cwnd = e.ssthresh
        e.loss_events += 1

    def set_window(self, ep_idx, cwnd, ssthresh):
        e = self.eps[ep_idx]
        e.cwnd = int(cwnd)
        e.ssthresh = int(ssthresh)

    def stats(self, ep_idx):
        e = self.eps[ep_idx]
        return {
            "cwnd": e.cwnd, "ssthresh": e.ssthresh, "in_flight": e.in_flight,
            "srtt_us": e.srtt, "rx_bytes": e.rx_bytes, "tx_bytes": e.tx_bytes,
            "tx_payload": e.tx_payload, "tx_retx_payload": e.tx_retx_payload,
            "tx_header": e.tx_header, "tx_ack_bytes": e.tx_ack_bytes,
            "tx_ctrl_bytes": e.tx_ctrl_bytes, "data_packets": e.data_packets,
            "retx_packets": e.retx_packets, "rto_count": e.rto_count,
            "loss_events": e.loss_events, "lost_packets": e.lost_packets,
        }

    # -- sender -------------------------------------------------------------
    def _rto(self, e):
        r = 2 * e.srtt
        return (r if r > self.min_rto else self.min_rto) << e.rto_backoff

    def _try_send(self, e):
        q = self.q
        now = q.now
        link = self.links[e.idx]
        while True:
            if e.retx:
                slot, off, ln = e.retx[0]
                is_retx = True
            elif e.newq:
                c = e.newq[0]
                cap = e.mss if e.sent_any else e.mss - self.first_extra
                slot = c[0]
                off = c[1]
                ln = c[2] if c[2] < cap else cap
                is_retx = False
            else:
                break
            if e.in_flight > 0 and e.in_flight + ln > e.cwnd:
                break
            if is_retx:
                e.retx.popleft()
                e.retx_packets += 1
                e.tx_retx_payload += ln
            else:
                if ln == c[2]:
                    e.newq.popleft()
                else:
                    c[1] += ln
                    c[2] -= ln
                e.tx_payload += ln
            hdr = self.data_header
            if not e.sent_any:
                hdr += self.first_extra
                e.sent_any = True
            size = hdr + ln
            pn = e.next_pn
            e.next_pn = pn + 1
            e.sb[pn] = [slot, off, ln, now, _INFLIGHT]
            if e.in_flight == 0:
                e.rto_deadline = now + self._rto(e)
            e.in_flight += ln
            e.tx_bytes += size
            e.tx_header += hdr
            e.data_packets += 1
            arr = link.transmit(size, now, True)
            if self.log_packets:
                self.packet_log.append((now, e.idx, PKT_DATA, hdr, ln, slot, pn, off, arr))
            if arr >= 0:
                q.schedule(arr, self._on_data, e.idx ^ 1, pn, slot, off, ln, size)
            if not e.rto_pending:
                e.rto_pending = True
                q.schedule(e.rto_deadline, self._on_rto, e.idx)
            if self.ctrl_interval and not e.ctrl_pending:
                e.ctrl_pending = True
                q.schedule(now + self.ctrl_interval, self._on_ctrl, e.idx)

    def _mark_lost(self, e, pn, ent):
        ent[4] = _LOST
        e.in_flight -= ent[2]
        e.retx.append((ent[0], ent[1], ent[2]))
        e.lost_packets += 1
        if ent[3] > e.recovery_start:
            self.cc_on_loss(e.idx)
            e.recovery_start = self.q.now

    def _prune(self, e):
        sb = e.sb
        p = e.lowest
        end = e.next_pn
        while p < end and sb[p][4] != _INFLIGHT:
            del sb[p]
            p += 1
        e.lowest = p

    def _on_ack(self, s_idx, pn):
        e = self.eps[s_idx]
        e.rx_bytes += self.ack_bytes
        ent = e.sb.get(pn)
        if ent is None or ent[4] == _ACKED:
            return
        now = self.q.now
        if ent[4] == _INFLIGHT:
            ln = ent[2]
            e.in_flight -= ln
            if ent[3] > e.recovery_start:
                self.cc_on_ack(s_idx, ln)
            e.srtt = (7 * e.srtt + (now - ent[3])) // 8
            e.rto_backoff = 0
            e.rto_deadline = now + self._rto(e)
        ent[4] = _ACKED
        if pn > e.largest_acked:
            e.largest_acked = pn
        thr = e.largest_acked - self.dupthresh
        sb = e.sb
        p = e.lowest
        while p <= thr:
            ent = sb[p]
            if ent[4] == _INFLIGHT:
                self._mark_lost(e, p, ent)
            p += 1
        self._prune(e)
        self._try_send(e)

    def _on_rto(self, s_idx):
        e = self.eps[s_idx]
        e.rto_pending = False
        if e.in_flight == 0:
            return
        now = self.q.now
        if now < e.rto_deadline:
            e.rto_pending = True
            self.q.schedule(e.rto_deadline, self._on_rto, s_idx)
            return
        e.rto_count += 1
        if e.rto_backoff < MAX_RTO_BACKOFF:
            e.rto_backoff += 1
        half = e.cwnd // 2
        floor = 2 * e.mss
        e.ssthresh = half if half > floor else floor
        e.cwnd = floor
        sb = e.sb
        for p in range(e.lowest, e.next_pn):
            ent = sb[p]
            if ent[4] == _INFLIGHT:
                ent[4] = _LOST
                e.retx.append((ent[0], ent[1], ent[2]))
                e.lost_packets += 1
        e.in_flight = 0
        e.recovery_start = now
        self._prune(e)
        self._try_send(e)

    def _on_ctrl(self, s_idx):
        e = self.eps[s_idx]
        e.ctrl_pending = False
        if e.in_flight == 0:
            return
        q = self.q
        now = q.now
        size = self.ctrl_bytes
        e.tx_bytes += size
        e.tx_ctrl_bytes += size
        arr = self.links[s_idx].transmit(size, now, False)
        if self.log_packets:
            self.packet_log.append((now, s_idx, PKT_CTRL, size, 0, -1, -1, -1, arr))
        if arr >= 0:
            q.schedule(arr, self._on_ctrl_arrival, s_idx ^ 1)
        e.ctrl_pending = True
        q.schedule(now + self.ctrl_interval, self._on_ctrl, s_idx)

    def _on_ctrl_arrival(self, r_idx):
        self.eps[r_idx].rx_bytes += self.ctrl_bytes

    # -- receiver -------------------------------------------------------------
    def _on_data(self, r_idx, pn, slot, off, ln, size):
        r = self.eps[r_idx]
        q = self.q
        now = q.now
        r.rx_bytes += size
        r.tx_bytes += self.ack_bytes
        r.tx_ack_bytes += self.ack_bytes
        arr = self.links[r_idx].transmit(self.ack_bytes, now, False)
        if self.log_packets:
            self.packet_log.append((now, r_idx, PKT_ACK, self.ack_bytes, 0, slot, pn, -1, arr))
        if arr >= 0:
            q.schedule(arr, self._on_ack, r_idx ^ 1, pn)
        nxt = r.rcv_next[slot]
        if off == nxt:
            nxt += ln
            pend = r.pending[slot]
            while pend and nxt in pend:
                nxt += pend.pop(nxt)
            r.rcv_next[slot] = nxt
            if self.log_deliveries:
                self.delivery_log.append((now, r_idx, slot, off, nxt))
            self._on_delivered(r_idx, slot, nxt)
        elif off > nxt:
            pend = r.pending[slot]
            if off not in pend:
                pend[off] = ln

    def _on_delivered(self, r_idx, slot, upto):
        now = self.q.now
        if r_idx == SERVER:
            w = self.srv_watch[slot]
            while w and self.h_req_end[w[0]] <= upto:
                h = w.popleft()
                t = now + self.h_jitter[h]
                if t < self.srv_last_resp[slot]:
                    t = self.srv_last_resp[slot]
                self.srv_last_resp[slot] = t
                self.q.schedule(t, self._on_respond, h)
        else:
            w = self.cli_watch[slot]
            while w:
                h = w[0]
                if self.h_t_first[h] < 0 and upto > self.h_resp_start[h]:
                    self.h_t_first[h] = now
                if upto >= self.h_resp_end[h]:
                    self.h_t_done[h] = now
                    self.h_rx_done[h] = self.eps[CLIENT].rx_bytes
                    w.popleft()
                else:
                    break

    def _on_respond(self, h):
        self.write(SERVER, self.h_slot[h], self.h_resp_bytes[h])
