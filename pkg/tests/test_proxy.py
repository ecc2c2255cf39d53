import pytest

import samples
from sipnat.media_controller import LEG_A, LEG_B
from sipnat.net import TransportAddress
from sipnat.proxy import Phase, ProxyConfig, SipProxy
from sipnat.sdp import parse_sdp
from sipnat.sip_message import Method, build_response, parse_message, serialize_message

A_CONN, B_CONN = 1, 2
A_REMOTE = TransportAddress("68.92.25.44", 4325)
B_REMOTE = TransportAddress("77.224.10.9", 6001)


def make_proxy(**overrides) -> SipProxy:
    config = ProxyConfig(
        public_ip="200.1.1.1", media_port_range=overrides.pop("media_port_range", (40000, 40099)),
        **overrides,
    )
    proxy = SipProxy(config)
    proxy.connection_opened(A_CONN, A_REMOTE)
    proxy.connection_opened(B_CONN, B_REMOTE)
    return proxy


def register_both(proxy, now=0.0):
    out_a = proxy.handle_message(
        A_CONN, samples.make_register("ClientA", "local1.com", "192.168.1.11"), now
    )
    out_b = proxy.handle_message(
        B_CONN, samples.make_register("ClientB", "local2.com", "10.0.0.4"), now
    )
    return out_a, out_b


def invite_from_b(call_id="call-1@local2.com"):
    """The callee-facing example flow: ClientB places the call to ClientA."""
    return samples.make_invite(
        caller="ClientB", caller_domain="local2.com", caller_host="10.0.0.4",
        callee="ClientA", callee_domain="local1.com", call_id=call_id,
    )


def only_message(outbound):
    assert len(outbound) == 1
    return outbound[0][0], parse_message(outbound[0][1])


def test_config_rejects_media_range_containing_sip_port():
    with pytest.raises(ValueError):
        ProxyConfig(public_ip="200.1.1.1", sip_tcp_port=40050, media_port_range=(40000, 40099))


def test_register_gets_200_on_same_connection():
    proxy = make_proxy()
    out_a, out_b = register_both(proxy)
    conn, msg = only_message(out_a)
    assert conn == A_CONN
    assert msg.status_code == 200
    conn, msg = only_message(out_b)
    assert conn == B_CONN
    assert proxy.registrar.route_to("sip:ClientA@local1.com") == A_CONN


def test_full_call_ladder_phases_and_teardown():
    proxy = make_proxy()
    register_both(proxy)
    pool_at_rest = proxy.media.pool.free_pairs()

    conn, fwd_invite = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    assert conn == A_CONN
    call = proxy.calls["call-1@local2.com"]
    assert call.phase is Phase.INVITING
    assert call.caller_aor == "sip:ClientB@local2.com"
    assert call.callee_aor == "sip:ClientA@local1.com"

    # Callee answers: 200 with its own (private) description, rewritten on the way back.
    answer = build_response(
        fwd_invite, 200, "OK",
        body=samples.sample_invite_body(), content_type="application/sdp",
        contact="sip:ClientA@192.168.1.11",
    )
    conn, fwd_answer = only_message(proxy.handle_message(A_CONN, serialize_message(answer), 1.1))
    assert conn == B_CONN
    assert call.phase is Phase.INVITING

    ack = fwd_invite  # reuse identity headers to build the ACK
    from dataclasses import replace
    ack = replace(
        ack, method=Method.ACK, cseq_method=Method.ACK, body=b"", content_type=None,
        contact=None,
    )
    conn, _ = only_message(proxy.handle_message(B_CONN, serialize_message(ack), 1.2))
    assert conn == A_CONN
    assert call.phase is Phase.ESTABLISHED

    bye = replace(ack, method=Method.BYE, cseq_method=Method.BYE, cseq_num=2)
    conn, _ = only_message(proxy.handle_message(B_CONN, serialize_message(bye), 2.0))
    assert conn == A_CONN
    assert call.phase is Phase.TERMINATED
    assert proxy.media.pool.free_pairs() == pool_at_rest  # all ports back


def test_forwarded_descriptions_use_proxy_pool_ports():
    proxy = make_proxy()
    register_both(proxy)
    _, fwd_invite = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    offer = parse_sdp(fwd_invite.body)
    assert offer.connection_ip == "200.1.1.1"
    lo, hi = proxy.config.media_port_range
    assert lo <= offer.media[0].port <= hi
    session = proxy.calls["call-1@local2.com"].media
    assert offer.media[0].port == session.legs[LEG_B].rtp_port

    answer = build_response(
        fwd_invite, 200, "OK",
        body=samples.sample_invite_body(), content_type="application/sdp",
    )
    _, fwd_answer = only_message(proxy.handle_message(A_CONN, serialize_message(answer), 1.1))
    answered = parse_sdp(fwd_answer.body)
    assert answered.connection_ip == "200.1.1.1"
    assert answered.media[0].port == session.legs[LEG_A].rtp_port
    # Declared (private) addresses were recorded, not used for sending.
    assert session.legs[LEG_A].declared == TransportAddress("10.0.0.4", 6580)
    assert session.legs[LEG_B].declared == TransportAddress("192.168.1.11", 49570)


def test_invite_request_is_stamped_with_source():
    proxy = make_proxy()
    register_both(proxy)
    _, fwd_invite = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    assert fwd_invite.via.received == B_REMOTE


def test_invite_for_unregistered_callee_404():
    proxy = make_proxy()
    conn, msg = only_message(proxy.handle_message(B_CONN, invite_from_b(), 0.0))
    assert conn == B_CONN
    assert msg.status_code == 404


def test_invite_with_pool_exhausted_503_no_leak():
    proxy = make_proxy(media_port_range=(40000, 40003))
    register_both(proxy)
    proxy.media.allocate_session("hog")  # consume the only two pairs
    before = proxy.media.pool.free_pairs()
    conn, msg = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    assert (conn, msg.status_code) == (B_CONN, 503)
    assert proxy.media.pool.free_pairs() == before
    assert "call-1@local2.com" not in proxy.calls


def test_invite_with_multi_media_offer_400_releases_ports():
    proxy = make_proxy()
    register_both(proxy)
    pool_at_rest = proxy.media.pool.free_pairs()
    body = samples.crlf_body(samples.INVITE_BODY_LINES + ["m=video 50000 RTP/AVP 96"])
    raw = samples.make_invite(call_id="call-mm@local2.com", body=body)
    conn, msg = only_message(proxy.handle_message(B_CONN, raw, 1.0))
    assert (conn, msg.status_code) == (B_CONN, 400)
    assert proxy.media.pool.free_pairs() == pool_at_rest


def test_duplicate_invite_400():
    proxy = make_proxy()
    register_both(proxy)
    proxy.handle_message(B_CONN, invite_from_b(), 1.0)
    conn, msg = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.1))
    assert (conn, msg.status_code) == (B_CONN, 400)


def test_register_without_contact_400():
    proxy = make_proxy()
    conn, msg = only_message(
        proxy.handle_message(A_CONN, samples.make_register(contact=False), 0.0)
    )
    assert (conn, msg.status_code) == (A_CONN, 400)


def test_garbage_bytes_get_400_never_silence():
    proxy = make_proxy()
    conn, msg = only_message(proxy.handle_message(A_CONN, b"\x00\xffnot sip\r\n\r\n", 0.0))
    assert (conn, msg.status_code) == (A_CONN, 400)


def test_bye_for_unknown_call_481():
    proxy = make_proxy()
    register_both(proxy)
    raw = samples.make_invite(call_id="ghost@local2.com").replace(b"INVITE", b"BYE", 1)
    raw = raw.replace(b"CSeq: 1 INVITE", b"CSeq: 1 BYE")
    conn, msg = only_message(proxy.handle_message(B_CONN, raw, 0.0))
    assert (conn, msg.status_code) == (B_CONN, 481)


def test_error_response_to_invite_terminates_and_forwards():
    proxy = make_proxy()
    register_both(proxy)
    pool_at_rest = proxy.media.pool.free_pairs()
    _, fwd_invite = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    busy = build_response(fwd_invite, 486, "Busy Here")
    conn, msg = only_message(proxy.handle_message(A_CONN, serialize_message(busy), 1.1))
    assert (conn, msg.status_code) == (B_CONN, 486)
    assert proxy.calls["call-1@local2.com"].phase is Phase.TERMINATED
    assert proxy.media.pool.free_pairs() == pool_at_rest


def test_unanswered_invite_times_out_and_frees_ports():
    proxy = make_proxy()
    register_both(proxy)
    pool_at_rest = proxy.media.pool.free_pairs()
    proxy.handle_message(B_CONN, invite_from_b(), 10.0)
    assert proxy.tick(41.9) == []
    actions = proxy.tick(42.0)  # guard is 32 s
    assert [a.kind for a in actions] == ["invite_timeout"]
    assert proxy.calls["call-1@local2.com"].phase is Phase.TERMINATED
    assert proxy.media.pool.free_pairs() == pool_at_rest


def test_tick_expires_registrations():
    proxy = make_proxy(registration_ttl=100.0)
    register_both(proxy, now=0.0)
    actions = proxy.tick(100.0)
    assert sorted(a.detail for a in actions if a.kind == "registration_expired") == [
        "sip:ClientA@local1.com",
        "sip:ClientB@local2.com",
    ]


def test_tick_noop_returns_empty():
    proxy = make_proxy()
    register_both(proxy)
    assert proxy.tick(1.0) == []


def test_delivery_failure_of_invite_yields_404_to_caller():
    proxy = make_proxy()
    register_both(proxy)
    pool_at_rest = proxy.media.pool.free_pairs()
    outbound = proxy.handle_message(B_CONN, invite_from_b(), 1.0)
    (conn, raw), = outbound
    assert conn == A_CONN
    followup = proxy.delivery_failed(A_CONN, raw, 1.1)
    (fail_conn, fail_raw), = followup
    assert fail_conn == B_CONN
    assert parse_message(fail_raw).status_code == 404
    assert proxy.calls["call-1@local2.com"].phase is Phase.TERMINATED
    assert proxy.media.pool.free_pairs() == pool_at_rest
    with pytest.raises(Exception):
        proxy.registrar.route_to("sip:ClientA@local1.com")


def test_connection_close_invalidates_registrations():
    proxy = make_proxy()
    register_both(proxy)
    assert proxy.connection_closed(A_CONN) == ["sip:ClientA@local1.com"]
    conn, msg = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    assert (conn, msg.status_code) == (B_CONN, 404)


def test_relay_disabled_forwards_bodies_untouched():
    proxy = make_proxy(media_relay=False)
    register_both(proxy)
    raw = invite_from_b()
    original_body = parse_message(raw).body
    _, fwd_invite = only_message(proxy.handle_message(B_CONN, raw, 1.0))
    assert fwd_invite.body == original_body
    assert proxy.media.pool.allocated_count == 0


def test_media_datagram_path_through_proxy():
    proxy = make_proxy()
    register_both(proxy)
    _, fwd_invite = only_message(proxy.handle_message(B_CONN, invite_from_b(), 1.0))
    answer = build_response(
        fwd_invite, 200, "OK", body=samples.sample_invite_body(),
        content_type="application/sdp",
    )
    proxy.handle_message(A_CONN, serialize_message(answer), 1.1)
    session = proxy.calls["call-1@local2.com"].media
    b_port = session.legs[LEG_B].rtp_port
    a_port = session.legs[LEG_A].rtp_port
    b_media = TransportAddress("77.224.10.9", 6200)
    a_media = TransportAddress("68.92.25.44", 62001)

    assert proxy.handle_media(b_port, b_media, b"from-b", 2.0) == []  # buffered
    sends = proxy.handle_media(a_port, a_media, b"from-a", 2.1)
    assert [(s.from_port, s.to, s.payload) for s in sends] == [
        (a_port, a_media, b"from-b"),
        (b_port, b_media, b"from-a"),
    ]
