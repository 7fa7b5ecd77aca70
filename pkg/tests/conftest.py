import pytest

from tcpdiag.dataset import DatasetSpec, iter_samples, signature_meta
from tcpdiag.features import signature_from_traces
from tcpdiag.network import train_cf_classifier
from tcpdiag.pcap import TcpFlags, TcpOptionSet, make_packet
from tcpdiag.sigdb import SignatureDB, append_signature

CLIENT = ("10.0.0.1", 40000)
SERVER = ("10.0.1.1", 80)
T0_US = 1_300_000_000_000_000

SYN, ACK, FIN, PSH, RST = TcpFlags.SYN, TcpFlags.ACK, TcpFlags.FIN, TcpFlags.PSH, TcpFlags.RST


def seg(t_ms, a2b, seq, ack=0, flags=ACK, window=65535, payload=0, options=None,
        client=CLIENT, server=SERVER):
    """One crafted packet; ``a2b`` is client to server."""
    src, dst = (client, server) if a2b else (server, client)
    return make_packet(T0_US + int(t_ms * 1000), src[0], dst[0], src[1], dst[1],
                       seq, ack, flags, window, payload, options or TcpOptionSet())


def handshake(client=CLIENT, server=SERVER, sack=True):
    opts = TcpOptionSet(mss=1460, sack_permitted=sack)
    return [
        seg(0, True, 0, 0, SYN, options=opts, client=client, server=server),
        seg(10, False, 0, 1, SYN | ACK, options=opts, client=client, server=server),
        seg(20, True, 1, 1, ACK, client=client, server=server),
    ]


def signatures(spec):
    out = []
    for s in iter_samples(spec):
        e = s.entry
        out.append(signature_from_traces(s.result.client, s.result.server, id=e["id"],
                                         labels=e["labels"], meta=signature_meta(e)))
    return out


@pytest.fixture(scope="session")
def train_sigs():
    return signatures(DatasetSpec(seed=1))


@pytest.fixture(scope="session")
def train_db(train_sigs):
    db = SignatureDB()
    for s in train_sigs:
        append_signature(db, s)
    return db


@pytest.fixture(scope="session")
def models(train_db):
    return [train_cf_classifier(train_db, f) for f in ("cf_1", "cf_2", "cf_3", "cf_4")]
