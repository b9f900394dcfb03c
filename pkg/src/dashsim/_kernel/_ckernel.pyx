# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled packet kernel. Event-for-event twin of ``_pykernel``.

Integer arithmetic only; see ``_pykernel`` for the model description.
"""

from libc.stdlib cimport malloc, realloc, free
from libc.stdint cimport int64_t

from ..simcore import DEFAULT_EVENT_BUDGET, LivelockError, SimulationError

BACKEND = "cython"

CLIENT = 0
SERVER = 1

PKT_DATA = 0
PKT_ACK = 1
PKT_CTRL = 2

cdef enum:
    UB = 1000000

cdef enum:
    INFLIGHT = 0
    ACKED = 1
    LOST = 2

cdef enum:
    EV_DATA = 0
    EV_ACK = 1
    EV_RTO = 2
    EV_CTRL = 3
    EV_CTRL_ARR = 4
    EV_RESPOND = 5

cdef enum:
    MAX_RTO_BACKOFF = 6


cdef inline void* _grow(void* p, Py_ssize_t nbytes) except NULL:
    cdef void* q = realloc(p, nbytes)
    if q == NULL:
        raise MemoryError()
    return q


cdef int64_t _floordiv(int64_t a, int64_t b) nogil:
    # Python floor division for possibly negative a, positive b
    cdef int64_t q = a // b
    if (a % b != 0) and (a < 0):
        q -= 1
    return q


cdef class Link:
    cdef int64_t* _starts
    cdef int64_t* _rates
    cdef Py_ssize_t _n
    cdef public int64_t burst
    cdef public int64_t queue_capacity
    cdef public int64_t delay
    cdef public int64_t drop_period
    cdef public int64_t drop_phase
    cdef int64_t _burst_ub
    cdef int64_t _tokens_ub
    cdef public int64_t last_refill
    cdef public int64_t last_depart
    cdef Py_ssize_t _idx
    cdef int64_t* _qdep
    cdef int64_t* _qsize
    cdef Py_ssize_t _qhead
    cdef Py_ssize_t _qcount
    cdef Py_ssize_t _qcap
    cdef public int64_t queued
    cdef public int64_t drop_count
    cdef public int64_t forced_drops
    cdef public int64_t data_seen
    cdef public int64_t bytes_out
    cdef public int64_t packets_out

    def __cinit__(self):
        self._starts = NULL
        self._rates = NULL
        self._qdep = NULL
        self._qsize = NULL

    def __init__(self, starts, rates, burst, queue_capacity, delay_us,
                 drop_period=0, drop_phase=0):
        starts = [int(s) for s in starts]
        rates = [int(r) for r in rates]
        if not starts or starts[0] != 0:
            raise ValueError("rate schedule must start at t=0")
        if len(starts) != len(rates):
            raise ValueError("starts and rates differ in length")
        self._n = len(starts)
        self._starts = <int64_t*>_grow(NULL, self._n * sizeof(int64_t))
        self._rates = <int64_t*>_grow(NULL, self._n * sizeof(int64_t))
        cdef Py_ssize_t i
        for i in range(self._n):
            self._starts[i] = starts[i]
            self._rates[i] = rates[i]
        self.burst = burst
        self.queue_capacity = queue_capacity
        self.delay = delay_us
        self.drop_period = drop_period
        self.drop_phase = drop_phase
        self._burst_ub = self.burst * UB
        self._tokens_ub = self._burst_ub
        self.last_refill = 0
        self.last_depart = 0
        self._idx = 0
        self._qcap = 64
        self._qdep = <int64_t*>_grow(NULL, self._qcap * sizeof(int64_t))
        self._qsize = <int64_t*>_grow(NULL, self._qcap * sizeof(int64_t))
        self._qhead = 0
        self._qcount = 0
        self.queued = 0
        self.drop_count = 0
        self.forced_drops = 0
        self.data_seen = 0
        self.bytes_out = 0
        self.packets_out = 0

    def __dealloc__(self):
        free(self._starts)
        free(self._rates)
        free(self._qdep)
        free(self._qsize)

    @property
    def starts(self):
        return [self._starts[i] for i in range(self._n)]

    @property
    def rates(self):
        return [self._rates[i] for i in range(self._n)]

    @property
    def tokens(self):
        return self._tokens_ub / <double>UB

    def rate_at(self, int64_t t):
        cdef Py_ssize_t i = self._n - 1
        while self._starts[i] > t:
            i -= 1
        return self._rates[i]

    cdef void _refill(self, int64_t t):
        cdef Py_ssize_t n = self._n
        cdef Py_ssize_t i = self._idx
        cdef int64_t cur = self.last_refill
        cdef int64_t tok = self._tokens_ub
        cdef int64_t cap = self._burst_ub
        cdef int64_t end, r
        while cur < t:
            if i + 1 < n and self._starts[i + 1] <= t:
                end = self._starts[i + 1]
            else:
                end = t
            r = self._rates[i]
            if r == 0:
                tok = cap
            else:
                tok += r * (end - cur)
                if tok > cap:
                    tok = cap
            cur = end
            if i + 1 < n and self._starts[i + 1] <= cur:
                i += 1
        self._idx = i
        self._tokens_ub = tok
        self.last_refill = t

    cdef void _qpush(self, int64_t depart, int64_t size) except *:
        cdef Py_ssize_t newcap, j, k
        cdef int64_t* nd
        cdef int64_t* ns
        if self._qcount == self._qcap:
            newcap = self._qcap * 2
            nd = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
            ns = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
            for j in range(self._qcount):
                k = (self._qhead + j) % self._qcap
                nd[j] = self._qdep[k]
                ns[j] = self._qsize[k]
            free(self._qdep)
            free(self._qsize)
            self._qdep = nd
            self._qsize = ns
            self._qhead = 0
            self._qcap = newcap
        k = (self._qhead + self._qcount) % self._qcap
        self._qdep[k] = depart
        self._qsize[k] = size
        self._qcount += 1

    cpdef int64_t transmit(self, int64_t size, int64_t now, bint is_data=False) except? -2:
        """Admit a packet at ``now``; return its arrival time, or -1 if dropped."""
        cdef int64_t k, t0, need, tok, depart, cur, r, nxt, dt
        cdef Py_ssize_t i
        if size > self.burst:
            raise ValueError(f"packet of {size} B exceeds bucket depth {self.burst} B")
        if is_data and self.drop_period:
            k = self.data_seen
            self.data_seen = k + 1
            if k % self.drop_period == self.drop_phase:
                self.forced_drops += 1
                return -1
        while self._qcount and self._qdep[self._qhead] <= now:
            self.queued -= self._qsize[self._qhead]
            self._qhead = (self._qhead + 1) % self._qcap
            self._qcount -= 1
        if self.queued + size > self.queue_capacity:
            self.drop_count += 1
            return -1
        t0 = now if now > self.last_depart else self.last_depart
        self._refill(t0)
        need = size * UB
        tok = self._tokens_ub
        depart = t0
        if tok < need:
            i = self._idx
            cur = t0
            while True:
                r = self._rates[i]
                if r == 0:
                    tok = need
                    break
                nxt = self._starts[i + 1] if i + 1 < self._n else -1
                dt = -_floordiv(tok - need, r)
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
            self._qpush(depart, size)
            self.queued += size
        self.bytes_out += size
        self.packets_out += 1
        return depart + self.delay


cdef struct Ev:
    int64_t t
    int64_t seq
    int kind
    int ep
    int64_t pn
    int64_t slot
    int64_t off
    int64_t ln
    int64_t size


cdef struct Chunk:
    int64_t slot
    int64_t off
    int64_t ln


cdef struct ChunkQ:
    Chunk* buf
    Py_ssize_t head
    Py_ssize_t count
    Py_ssize_t cap


cdef int _cq_init(ChunkQ* q) except -1:
    q.cap = 16
    q.buf = <Chunk*>_grow(NULL, q.cap * sizeof(Chunk))
    q.head = 0
    q.count = 0
    return 0


cdef int _cq_push(ChunkQ* q, int64_t slot, int64_t off, int64_t ln) except -1:
    cdef Py_ssize_t j, newcap
    cdef Chunk* nb
    if q.count == q.cap:
        newcap = q.cap * 2
        nb = <Chunk*>_grow(NULL, newcap * sizeof(Chunk))
        for j in range(q.count):
            nb[j] = q.buf[(q.head + j) % q.cap]
        free(q.buf)
        q.buf = nb
        q.head = 0
        q.cap = newcap
    j = (q.head + q.count) % q.cap
    q.buf[j].slot = slot
    q.buf[j].off = off
    q.buf[j].ln = ln
    q.count += 1
    return 0


cdef inline Chunk* _cq_front(ChunkQ* q) nogil:
    return &q.buf[q.head]


cdef inline Chunk* _cq_back(ChunkQ* q) nogil:
    return &q.buf[(q.head + q.count - 1) % q.cap]


cdef inline void _cq_pop(ChunkQ* q) nogil:
    q.head = (q.head + 1) % q.cap
    q.count -= 1


cdef struct Ep:
    int idx
    int64_t mss
    int64_t cwnd
    int64_t ssthresh
    int64_t in_flight
    int64_t next_pn
    int64_t lowest
    int64_t largest_acked
    # scoreboard ring indexed by pn & (sb_cap - 1), covers [lowest, next_pn)
    int64_t* sb_slot
    int64_t* sb_off
    int64_t* sb_len
    int64_t* sb_sent
    int* sb_state
    Py_ssize_t sb_cap
    int64_t recovery_start
    ChunkQ retx
    ChunkQ newq
    bint sent_any
    int64_t rto_deadline
    bint rto_pending
    int64_t rto_backoff
    int64_t srtt
    bint ctrl_pending
    int64_t* snd_off
    int64_t* rcv_next
    int64_t* pend_count
    int64_t rx_bytes
    int64_t tx_bytes
    int64_t tx_payload
    int64_t tx_retx_payload
    int64_t tx_header
    int64_t tx_ack_bytes
    int64_t tx_ctrl_bytes
    int64_t data_packets
    int64_t retx_packets
    int64_t rto_count
    int64_t loss_events
    int64_t lost_packets


cdef int _ep_init(Ep* e, int idx, int64_t mss, int64_t cwnd, int64_t ssthresh, int64_t srtt) except -1:
    e.idx = idx
    e.mss = mss
    e.cwnd = cwnd
    e.ssthresh = ssthresh
    e.in_flight = 0
    e.next_pn = 0
    e.lowest = 0
    e.largest_acked = -1
    e.sb_cap = 256
    e.sb_slot = <int64_t*>_grow(NULL, e.sb_cap * sizeof(int64_t))
    e.sb_off = <int64_t*>_grow(NULL, e.sb_cap * sizeof(int64_t))
    e.sb_len = <int64_t*>_grow(NULL, e.sb_cap * sizeof(int64_t))
    e.sb_sent = <int64_t*>_grow(NULL, e.sb_cap * sizeof(int64_t))
    e.sb_state = <int*>_grow(NULL, e.sb_cap * sizeof(int))
    e.recovery_start = -1
    _cq_init(&e.retx)
    _cq_init(&e.newq)
    e.sent_any = False
    e.rto_deadline = 0
    e.rto_pending = False
    e.rto_backoff = 0
    e.srtt = srtt
    e.ctrl_pending = False
    e.snd_off = NULL
    e.rcv_next = NULL
    e.pend_count = NULL
    e.rx_bytes = 0
    e.tx_bytes = 0
    e.tx_payload = 0
    e.tx_retx_payload = 0
    e.tx_header = 0
    e.tx_ack_bytes = 0
    e.tx_ctrl_bytes = 0
    e.data_packets = 0
    e.retx_packets = 0
    e.rto_count = 0
    e.loss_events = 0
    e.lost_packets = 0
    return 0


cdef void _ep_free(Ep* e):
    free(e.sb_slot)
    free(e.sb_off)
    free(e.sb_len)
    free(e.sb_sent)
    free(e.sb_state)
    free(e.retx.buf)
    free(e.newq.buf)
    free(e.snd_off)
    free(e.rcv_next)
    free(e.pend_count)


cdef int _sb_reserve(Ep* e) except -1:
    # make room for pn = next_pn
    cdef Py_ssize_t newcap, mask, nmask
    cdef int64_t p
    cdef int64_t* ns
    cdef int64_t* no
    cdef int64_t* nl
    cdef int64_t* nt
    cdef int* nst
    if e.next_pn - e.lowest < e.sb_cap:
        return 0
    newcap = e.sb_cap * 2
    ns = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
    no = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
    nl = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
    nt = <int64_t*>_grow(NULL, newcap * sizeof(int64_t))
    nst = <int*>_grow(NULL, newcap * sizeof(int))
    mask = e.sb_cap - 1
    nmask = newcap - 1
    p = e.lowest
    while p < e.next_pn:
        ns[p & nmask] = e.sb_slot[p & mask]
        no[p & nmask] = e.sb_off[p & mask]
        nl[p & nmask] = e.sb_len[p & mask]
        nt[p & nmask] = e.sb_sent[p & mask]
        nst[p & nmask] = e.sb_state[p & mask]
        p += 1
    free(e.sb_slot)
    free(e.sb_off)
    free(e.sb_len)
    free(e.sb_sent)
    free(e.sb_state)
    e.sb_slot = ns
    e.sb_off = no
    e.sb_len = nl
    e.sb_sent = nt
    e.sb_state = nst
    e.sb_cap = newcap
    return 0


cdef class Engine:
    cdef Link _up
    cdef Link _down
    cdef Ep _eps[2]
    cdef public int64_t mss
    cdef public int64_t data_header
    cdef public int64_t first_extra
    cdef public int64_t ack_bytes
    cdef public int64_t ctrl_bytes
    cdef public int64_t ctrl_interval
    cdef public int64_t min_rto
    cdef public int64_t dupthresh
    cdef public int64_t max_events
    cdef int64_t _now
    cdef int64_t _seq
    cdef int64_t _processed
    cdef Ev* _heap
    cdef Py_ssize_t _hlen
    cdef Py_ssize_t _hcap
    cdef public Py_ssize_t nslots
    cdef Py_ssize_t _slotcap
    cdef list _pending
    # per slot
    cdef int64_t* _srv_head
    cdef int64_t* _srv_tail
    cdef int64_t* _cli_head
    cdef int64_t* _cli_tail
    cdef int64_t* _srv_last_resp
    cdef int64_t* _resp_plan
    # per handle
    cdef Py_ssize_t _nh
    cdef Py_ssize_t _hcap2
    cdef int64_t* _h_slot
    cdef int64_t* _h_req_end
    cdef int64_t* _h_resp_start
    cdef int64_t* _h_resp_end
    cdef int64_t* _h_resp_bytes
    cdef int64_t* _h_jitter
    cdef int64_t* _h_t_req
    cdef int64_t* _h_t_first
    cdef int64_t* _h_t_done
    cdef int64_t* _h_rx_req
    cdef int64_t* _h_rx_done
    cdef int64_t* _h_next_srv
    cdef int64_t* _h_next_cli
    cdef public bint log_packets
    cdef public bint log_deliveries
    cdef public list packet_log
    cdef public list delivery_log

    def __cinit__(self):
        self._heap = NULL
        self._srv_head = NULL
        self._srv_tail = NULL
        self._cli_head = NULL
        self._cli_tail = NULL
        self._srv_last_resp = NULL
        self._resp_plan = NULL
        self._h_slot = NULL
        self._h_req_end = NULL
        self._h_resp_start = NULL
        self._h_resp_end = NULL
        self._h_resp_bytes = NULL
        self._h_jitter = NULL
        self._h_t_req = NULL
        self._h_t_first = NULL
        self._h_t_done = NULL
        self._h_rx_req = NULL
        self._h_rx_done = NULL
        self._h_next_srv = NULL
        self._h_next_cli = NULL
        self._eps[0].sb_slot = NULL
        self._eps[1].sb_slot = NULL

    def __init__(self, Link uplink, Link downlink, *, mss, data_header, first_extra=0,
                 ack_bytes, ctrl_bytes=0, ctrl_interval_us=0, init_cwnd,
                 init_ssthresh, min_rto_us, init_srtt_us, dupthresh=3,
                 log_packets=False, log_deliveries=False,
                 max_events=DEFAULT_EVENT_BUDGET):
        if mss <= first_extra:
            raise ValueError("mss must exceed first-packet header extension")
        self._up = uplink
        self._down = downlink
        self.mss = mss
        self.data_header = data_header
        self.first_extra = first_extra
        self.ack_bytes = ack_bytes
        self.ctrl_bytes = ctrl_bytes
        self.ctrl_interval = ctrl_interval_us
        self.min_rto = min_rto_us
        self.dupthresh = dupthresh
        self.max_events = max_events
        _ep_init(&self._eps[0], 0, mss, init_cwnd, init_ssthresh, init_srtt_us)
        _ep_init(&self._eps[1], 1, mss, init_cwnd, init_ssthresh, init_srtt_us)
        self._now = 0
        self._seq = 0
        self._processed = 0
        self._hcap = 1024
        self._heap = <Ev*>_grow(NULL, self._hcap * sizeof(Ev))
        self._hlen = 0
        self.nslots = 0
        self._slotcap = 0
        self._pending = [[], []]
        self._nh = 0
        self._hcap2 = 0
        self.log_packets = log_packets
        self.log_deliveries = log_deliveries
        self.packet_log = []
        self.delivery_log = []

    def __dealloc__(self):
        free(self._heap)
        if self._eps[0].sb_slot != NULL:
            _ep_free(&self._eps[0])
        if self._eps[1].sb_slot != NULL:
            _ep_free(&self._eps[1])
        free(self._srv_head)
        free(self._srv_tail)
        free(self._cli_head)
        free(self._cli_tail)
        free(self._srv_last_resp)
        free(self._resp_plan)
        free(self._h_slot)
        free(self._h_req_end)
        free(self._h_resp_start)
        free(self._h_resp_end)
        free(self._h_resp_bytes)
        free(self._h_jitter)
        free(self._h_t_req)
        free(self._h_t_first)
        free(self._h_t_done)
        free(self._h_rx_req)
        free(self._h_rx_done)
        free(self._h_next_srv)
        free(self._h_next_cli)

    @property
    def links(self):
        return (self._up, self._down)

    # -- heap -----------------------------------------------------------------
    cdef inline bint _less(self, Ev* a, Ev* b) nogil:
        return a.t < b.t or (a.t == b.t and a.seq < b.seq)

    cdef int _push(self, int64_t t, int kind, int ep, int64_t pn, int64_t slot,
                   int64_t off, int64_t ln, int64_t size) except -1:
        cdef Py_ssize_t i, parent
        cdef Ev ev
        if t < self._now:
            raise SimulationError(f"past event: at={t} < now={self._now}")
        if self._hlen == self._hcap:
            self._hcap *= 2
            self._heap = <Ev*>_grow(self._heap, self._hcap * sizeof(Ev))
        ev.t = t
        ev.seq = self._seq
        self._seq += 1
        ev.kind = kind
        ev.ep = ep
        ev.pn = pn
        ev.slot = slot
        ev.off = off
        ev.ln = ln
        ev.size = size
        i = self._hlen
        self._hlen += 1
        while i > 0:
            parent = (i - 1) >> 1
            if self._less(&ev, &self._heap[parent]):
                self._heap[i] = self._heap[parent]
                i = parent
            else:
                break
        self._heap[i] = ev
        return 0

    cdef Ev _pop(self) nogil:
        cdef Ev top = self._heap[0]
        cdef Ev last
        cdef Py_ssize_t i, c, n
        self._hlen -= 1
        n = self._hlen
        if n > 0:
            last = self._heap[n]
            i = 0
            while True:
                c = 2 * i + 1
                if c >= n:
                    break
                if c + 1 < n and self._less(&self._heap[c + 1], &self._heap[c]):
                    c += 1
                if self._less(&self._heap[c], &last):
                    self._heap[i] = self._heap[c]
                    i = c
                else:
                    break
            self._heap[i] = last
        return top

    cdef int _step(self) except -1:
        cdef Ev ev
        if self._hlen == 0:
            return 0
        ev = self._pop()
        self._now = ev.t
        self._processed += 1
        if ev.kind == EV_DATA:
            self._on_data(ev.ep, ev.pn, ev.slot, ev.off, ev.ln, ev.size)
        elif ev.kind == EV_ACK:
            self._on_ack(ev.ep, ev.pn)
        elif ev.kind == EV_RTO:
            self._on_rto(ev.ep)
        elif ev.kind == EV_CTRL:
            self._on_ctrl(ev.ep)
        elif ev.kind == EV_CTRL_ARR:
            self._eps[ev.ep].rx_bytes += self.ctrl_bytes
        elif ev.kind == EV_RESPOND:
            self._write(1, self._h_slot[ev.pn], self._h_resp_bytes[ev.pn])
        return 1

    # -- clock ----------------------------------------------------------------
    @property
    def now(self):
        return self._now

    @property
    def events_processed(self):
        return self._processed

    def advance_to(self, int64_t t):
        cdef int64_t budget = self.max_events
        while self._hlen and self._heap[0].t <= t:
            self._step()
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {self.max_events} exceeded at t={self._now}")
        if t > self._now:
            self._now = t

    def run_until_idle(self):
        cdef int64_t budget = self.max_events
        while self._step():
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {self.max_events} exceeded at t={self._now}")
        return self._now

    def run_until_done(self, Py_ssize_t h):
        cdef int64_t budget = self.max_events
        if h < 0 or h >= self._nh:
            raise IndexError(h)
        while self._h_t_done[h] < 0:
            if not self._step():
                raise SimulationError(f"queue drained at t={self._now} before fetch {h} completed")
            budget -= 1
            if budget < 0:
                raise LivelockError(f"event budget of {self.max_events} exceeded at t={self._now}")
        return self._h_t_done[h]

    # -- streams and fetches --------------------------------------------------
    def add_stream(self):
        cdef Py_ssize_t slot = self.nslots
        cdef Py_ssize_t newcap, e
        if slot == self._slotcap:
            newcap = 8 if self._slotcap == 0 else self._slotcap * 2
            for e in range(2):
                self._eps[e].snd_off = <int64_t*>_grow(self._eps[e].snd_off, newcap * sizeof(int64_t))
                self._eps[e].rcv_next = <int64_t*>_grow(self._eps[e].rcv_next, newcap * sizeof(int64_t))
                self._eps[e].pend_count = <int64_t*>_grow(self._eps[e].pend_count, newcap * sizeof(int64_t))
            self._srv_head = <int64_t*>_grow(self._srv_head, newcap * sizeof(int64_t))
            self._srv_tail = <int64_t*>_grow(self._srv_tail, newcap * sizeof(int64_t))
            self._cli_head = <int64_t*>_grow(self._cli_head, newcap * sizeof(int64_t))
            self._cli_tail = <int64_t*>_grow(self._cli_tail, newcap * sizeof(int64_t))
            self._srv_last_resp = <int64_t*>_grow(self._srv_last_resp, newcap * sizeof(int64_t))
            self._resp_plan = <int64_t*>_grow(self._resp_plan, newcap * sizeof(int64_t))
            self._slotcap = newcap
        for e in range(2):
            self._eps[e].snd_off[slot] = 0
            self._eps[e].rcv_next[slot] = 0
            self._eps[e].pend_count[slot] = 0
            self._pending[e].append({})
        self._srv_head[slot] = -1
        self._srv_tail[slot] = -1
        self._cli_head[slot] = -1
        self._cli_tail[slot] = -1
        self._srv_last_resp[slot] = 0
        self._resp_plan[slot] = 0
        self.nslots += 1
        return slot

    def write(self, int ep_idx, Py_ssize_t slot, int64_t nbytes):
        if slot < 0 or slot >= self.nslots:
            raise KeyError(f"unknown stream slot {slot}")
        self._write(ep_idx, slot, nbytes)

    cdef int _write(self, int ep_idx, int64_t slot, int64_t nbytes) except -1:
        cdef Ep* e = &self._eps[ep_idx]
        cdef int64_t off
        cdef Chunk* tail
        if nbytes <= 0:
            return 0
        off = e.snd_off[slot]
        e.snd_off[slot] = off + nbytes
        if e.newq.count:
            tail = _cq_back(&e.newq)
            if tail.slot == slot and tail.off + tail.ln == off:
                tail.ln += nbytes
                self._try_send(e)
                return 0
        _cq_push(&e.newq, slot, off, nbytes)
        self._try_send(e)
        return 0

    cdef int _grow_handles(self) except -1:
        cdef Py_ssize_t n = 16 if self._hcap2 == 0 else self._hcap2 * 2
        cdef Py_ssize_t sz = n * sizeof(int64_t)
        self._h_slot = <int64_t*>_grow(self._h_slot, sz)
        self._h_req_end = <int64_t*>_grow(self._h_req_end, sz)
        self._h_resp_start = <int64_t*>_grow(self._h_resp_start, sz)
        self._h_resp_end = <int64_t*>_grow(self._h_resp_end, sz)
        self._h_resp_bytes = <int64_t*>_grow(self._h_resp_bytes, sz)
        self._h_jitter = <int64_t*>_grow(self._h_jitter, sz)
        self._h_t_req = <int64_t*>_grow(self._h_t_req, sz)
        self._h_t_first = <int64_t*>_grow(self._h_t_first, sz)
        self._h_t_done = <int64_t*>_grow(self._h_t_done, sz)
        self._h_rx_req = <int64_t*>_grow(self._h_rx_req, sz)
        self._h_rx_done = <int64_t*>_grow(self._h_rx_done, sz)
        self._h_next_srv = <int64_t*>_grow(self._h_next_srv, sz)
        self._h_next_cli = <int64_t*>_grow(self._h_next_cli, sz)
        self._hcap2 = n
        return 0

    def issue(self, Py_ssize_t slot, int64_t req_bytes, int64_t resp_bytes, int64_t jitter_us):
        """Client sends a request on ``slot``; the server answers ``resp_bytes`` once it has it."""
        cdef Py_ssize_t h
        cdef int64_t start
        if slot < 0 or slot >= self.nslots:
            raise KeyError(f"unknown stream slot {slot}")
        if req_bytes <= 0 or resp_bytes <= 0:
            raise ValueError("request and response must be non-empty")
        if self._nh == self._hcap2:
            self._grow_handles()
        h = self._nh
        self._nh += 1
        start = self._resp_plan[slot]
        self._resp_plan[slot] = start + resp_bytes
        self._h_slot[h] = slot
        self._h_req_end[h] = self._eps[0].snd_off[slot] + req_bytes
        self._h_resp_start[h] = start
        self._h_resp_end[h] = start + resp_bytes
        self._h_resp_bytes[h] = resp_bytes
        self._h_jitter[h] = jitter_us
        self._h_t_req[h] = self._now
        self._h_t_first[h] = -1
        self._h_t_done[h] = -1
        self._h_rx_req[h] = self._eps[0].rx_bytes
        self._h_rx_done[h] = -1
        self._h_next_srv[h] = -1
        self._h_next_cli[h] = -1
        if self._srv_tail[slot] >= 0:
            self._h_next_srv[self._srv_tail[slot]] = h
        else:
            self._srv_head[slot] = h
        self._srv_tail[slot] = h
        if self._cli_tail[slot] >= 0:
            self._h_next_cli[self._cli_tail[slot]] = h
        else:
            self._cli_head[slot] = h
        self._cli_tail[slot] = h
        self._write(0, slot, req_bytes)
        return h

    def handle_times(self, Py_ssize_t h):
        if h < 0 or h >= self._nh:
            raise IndexError(h)
        return self._h_t_req[h], self._h_t_first[h], self._h_t_done[h]

    def handle_rx(self, Py_ssize_t h):
        if h < 0 or h >= self._nh:
            raise IndexError(h)
        return self._h_rx_req[h], self._h_rx_done[h]

    def account_rx(self, int ep_idx, int64_t nbytes):
        self._eps[ep_idx].rx_bytes += nbytes

    def delivered(self, int ep_idx, Py_ssize_t slot):
        if slot < 0 or slot >= self.nslots:
            raise KeyError(f"unknown stream slot {slot}")
        return self._eps[ep_idx].rcv_next[slot]

    # -- congestion control ---------------------------------------------------
    def cc_on_ack(self, int ep_idx, int64_t acked):
        self._cc_on_ack(&self._eps[ep_idx], acked)

    def cc_on_loss(self, int ep_idx):
        self._cc_on_loss(&self._eps[ep_idx])

    cdef inline void _cc_on_ack(self, Ep* e, int64_t acked) nogil:
        cdef int64_t inc
        if e.cwnd < e.ssthresh:
            e.cwnd += acked
        else:
            inc = e.mss * e.mss // e.cwnd
            e.cwnd += inc if inc > 0 else 1

    cdef inline void _cc_on_loss(self, Ep* e) nogil:
        cdef int64_t half = e.cwnd // 2
        cdef int64_t floor = 2 * e.mss
        e.ssthresh = half if half > floor else floor
        e.cwnd = e.ssthresh
        e.loss_events += 1

    def set_window(self, int ep_idx, int64_t cwnd, int64_t ssthresh):
        self._eps[ep_idx].cwnd = cwnd
        self._eps[ep_idx].ssthresh = ssthresh

    def stats(self, int ep_idx):
        cdef Ep* e = &self._eps[ep_idx]
        return {
            "cwnd": e.cwnd, "ssthresh": e.ssthresh, "in_flight": e.in_flight,
            "srtt_us": e.srtt, "rx_bytes": e.rx_bytes, "tx_bytes": e.tx_bytes,
            "tx_payload": e.tx_payload, "tx_retx_payload": e.tx_retx_payload,
            "tx_header": e.tx_header, "tx_ack_bytes": e.tx_ack_bytes,
            "tx_ctrl_bytes": e.tx_ctrl_bytes, "data_packets": e.data_packets,
            "retx_packets": e.retx_packets, "rto_count": e.rto_count,
            "loss_events": e.loss_events, "lost_packets": e.lost_packets,
        }

    # -- sender ---------------------------------------------------------------
    cdef inline int64_t _rto(self, Ep* e) nogil:
        cdef int64_t r = 2 * e.srtt
        return (r if r > self.min_rto else self.min_rto) << e.rto_backoff

    cdef int _try_send(self, Ep* e) except -1:
        cdef int64_t now = self._now
        cdef Link link = self._up if e.idx == 0 else self._down
        cdef int64_t slot, off, ln, cap, hdr, size, pn, arr
        cdef Py_ssize_t m
        cdef bint is_retx
        cdef Chunk* c = NULL
        while True:
            if e.retx.count:
                c = _cq_front(&e.retx)
                slot = c.slot
                off = c.off
                ln = c.ln
                is_retx = True
            elif e.newq.count:
                c = _cq_front(&e.newq)
                cap = e.mss if e.sent_any else e.mss - self.first_extra
                slot = c.slot
                off = c.off
                ln = c.ln if c.ln < cap else cap
                is_retx = False
            else:
                break
            if e.in_flight > 0 and e.in_flight + ln > e.cwnd:
                break
            if is_retx:
                _cq_pop(&e.retx)
                e.retx_packets += 1
                e.tx_retx_payload += ln
            else:
                if ln == c.ln:
                    _cq_pop(&e.newq)
                else:
                    c.off += ln
                    c.ln -= ln
                e.tx_payload += ln
            hdr = self.data_header
            if not e.sent_any:
                hdr += self.first_extra
                e.sent_any = True
            size = hdr + ln
            _sb_reserve(e)
            pn = e.next_pn
            e.next_pn = pn + 1
            m = pn & (e.sb_cap - 1)
            e.sb_slot[m] = slot
            e.sb_off[m] = off
            e.sb_len[m] = ln
            e.sb_sent[m] = now
            e.sb_state[m] = INFLIGHT
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
                self._push(arr, EV_DATA, e.idx ^ 1, pn, slot, off, ln, size)
            if not e.rto_pending:
                e.rto_pending = True
                self._push(e.rto_deadline, EV_RTO, e.idx, 0, 0, 0, 0, 0)
            if self.ctrl_interval and not e.ctrl_pending:
                e.ctrl_pending = True
                self._push(now + self.ctrl_interval, EV_CTRL, e.idx, 0, 0, 0, 0, 0)
        return 0

    cdef int _mark_lost(self, Ep* e, Py_ssize_t m) except -1:
        e.sb_state[m] = LOST
        e.in_flight -= e.sb_len[m]
        _cq_push(&e.retx, e.sb_slot[m], e.sb_off[m], e.sb_len[m])
        e.lost_packets += 1
        if e.sb_sent[m] > e.recovery_start:
            self._cc_on_loss(e)
            e.recovery_start = self._now
        return 0

    cdef inline void _prune(self, Ep* e) nogil:
        cdef int64_t p = e.lowest
        cdef Py_ssize_t mask = e.sb_cap - 1
        while p < e.next_pn and e.sb_state[p & mask] != INFLIGHT:
            p += 1
        e.lowest = p

    cdef int _on_ack(self, int s_idx, int64_t pn) except -1:
        cdef Ep* e = &self._eps[s_idx]
        cdef Py_ssize_t m, mask
        cdef int64_t ln, now, thr, p
        e.rx_bytes += self.ack_bytes
        if pn < e.lowest or pn >= e.next_pn:
            return 0
        mask = e.sb_cap - 1
        m = pn & mask
        if e.sb_state[m] == ACKED:
            return 0
        now = self._now
        if e.sb_state[m] == INFLIGHT:
            ln = e.sb_len[m]
            e.in_flight -= ln
            if e.sb_sent[m] > e.recovery_start:
                self._cc_on_ack(e, ln)
            e.srtt = (7 * e.srtt + (now - e.sb_sent[m])) // 8
            e.rto_backoff = 0
            e.rto_deadline = now + self._rto(e)
        e.sb_state[m] = ACKED
        if pn > e.largest_acked:
            e.largest_acked = pn
        thr = e.largest_acked - self.dupthresh
        p = e.lowest
        while p <= thr:
            m = p & mask
            if e.sb_state[m] == INFLIGHT:
                self._mark_lost(e, m)
            p += 1
        self._prune(e)
        self._try_send(e)
        return 0

    cdef int _on_rto(self, int s_idx) except -1:
        cdef Ep* e = &self._eps[s_idx]
        cdef int64_t now, half, floor, p
        cdef Py_ssize_t m, mask
        e.rto_pending = False
        if e.in_flight == 0:
            return 0
        now = self._now
        if now < e.rto_deadline:
            e.rto_pending = True
            self._push(e.rto_deadline, EV_RTO, s_idx, 0, 0, 0, 0, 0)
            return 0
        e.rto_count += 1
        if e.rto_backoff < MAX_RTO_BACKOFF:
            e.rto_backoff += 1
        half = e.cwnd // 2
        floor = 2 * e.mss
        e.ssthresh = half if half > floor else floor
        e.cwnd = floor
        mask = e.sb_cap - 1
        p = e.lowest
        while p < e.next_pn:
            m = p & mask
            if e.sb_state[m] == INFLIGHT:
                e.sb_state[m] = LOST
                _cq_push(&e.retx, e.sb_slot[m], e.sb_off[m], e.sb_len[m])
                e.lost_packets += 1
            p += 1
        e.in_flight = 0
        e.recovery_start = now
        self._prune(e)
        self._try_send(e)
        return 0

    cdef int _on_ctrl(self, int s_idx) except -1:
        cdef Ep* e = &self._eps[s_idx]
        cdef int64_t now, size, arr
        cdef Link link
        e.ctrl_pending = False
        if e.in_flight == 0:
            return 0
        now = self._now
        size = self.ctrl_bytes
        e.tx_bytes += size
        e.tx_ctrl_bytes += size
        link = self._up if s_idx == 0 else self._down
        arr = link.transmit(size, now, False)
        if self.log_packets:
            self.packet_log.append((now, s_idx, PKT_CTRL, size, 0, -1, -1, -1, arr))
        if arr >= 0:
            self._push(arr, EV_CTRL_ARR, s_idx ^ 1, 0, 0, 0, 0, 0)
        e.ctrl_pending = True
        self._push(now + self.ctrl_interval, EV_CTRL, s_idx, 0, 0, 0, 0, 0)
        return 0

    # -- receiver -------------------------------------------------------------
    cdef int _on_data(self, int r_idx, int64_t pn, int64_t slot, int64_t off,
                      int64_t ln, int64_t size) except -1:
        cdef Ep* r = &self._eps[r_idx]
        cdef int64_t now = self._now
        cdef int64_t arr, nxt
        cdef Link link = self._up if r_idx == 0 else self._down
        cdef dict pend
        r.rx_bytes += size
        r.tx_bytes += self.ack_bytes
        r.tx_ack_bytes += self.ack_bytes
        arr = link.transmit(self.ack_bytes, now, False)
        if self.log_packets:
            self.packet_log.append((now, r_idx, PKT_ACK, self.ack_bytes, 0, slot, pn, -1, arr))
        if arr >= 0:
            self._push(arr, EV_ACK, r_idx ^ 1, pn, 0, 0, 0, 0)
        nxt = r.rcv_next[slot]
        if off == nxt:
            nxt += ln
            if r.pend_count[slot]:
                pend = self._pending[r_idx][slot]
                while pend and nxt in pend:
                    nxt += pend.pop(nxt)
                r.pend_count[slot] = len(pend)
            r.rcv_next[slot] = nxt
            if self.log_deliveries:
                self.delivery_log.append((now, r_idx, slot, off, nxt))
            self._on_delivered(r_idx, slot, nxt)
        elif off > nxt:
            pend = self._pending[r_idx][slot]
            if off not in pend:
                pend[off] = ln
                r.pend_count[slot] = len(pend)
        return 0

    cdef int _on_delivered(self, int r_idx, int64_t slot, int64_t upto) except -1:
        cdef int64_t now = self._now
        cdef int64_t h, t
        if r_idx == 1:
            h = self._srv_head[slot]
            while h >= 0 and self._h_req_end[h] <= upto:
                self._srv_head[slot] = self._h_next_srv[h]
                if self._srv_head[slot] < 0:
                    self._srv_tail[slot] = -1
                t = now + self._h_jitter[h]
                if t < self._srv_last_resp[slot]:
                    t = self._srv_last_resp[slot]
                self._srv_last_resp[slot] = t
                self._push(t, EV_RESPOND, 1, h, 0, 0, 0, 0)
                h = self._srv_head[slot]
        else:
            h = self._cli_head[slot]
            while h >= 0:
                if self._h_t_first[h] < 0 and upto > self._h_resp_start[h]:
                    self._h_t_first[h] = now
                if upto >= self._h_resp_end[h]:
                    self._h_t_done[h] = now
                    self._h_rx_done[h] = self._eps[0].rx_bytes
                    self._cli_head[slot] = self._h_next_cli[h]
                    if self._cli_head[slot] < 0:
                        self._cli_tail[slot] = -1
                    h = self._cli_head[slot]
                else:
                    break
        return 0
