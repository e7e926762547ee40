//! End-to-end checks of the wire protocol over both transports: the
//! in-process duplex pipe and real TCP sockets.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use edgesim::bus::tcp::{serve_tcp, ClientError, WireClient};
use edgesim::bus::transport::{duplex_pair, serve_duplex};
use edgesim::bus::wire::{code, read_frame, write_frame, Frame};
use edgesim::bus::Broker;
use edgesim::clock::SimClock;

fn test_broker() -> Broker {
    let clock = SimClock::new();
    Broker::new(Arc::new(clock.handle()))
}

#[test]
fn duplex_pipe_handshake_publish_deliver() {
    let broker = test_broker();
    broker.register("sensor", "tok-a");
    broker.register("collector", "tok-b");

    let ((mut sub_rx, mut sub_tx), (srv_r, srv_w)) = duplex_pair();
    let b = broker.clone();
    let sub_srv = thread::spawn(move || serve_duplex(b, srv_r, srv_w));

    write_frame(
        &mut sub_tx,
        &Frame::Connect {
            client_id: "collector".into(),
            token: "tok-b".into(),
        },
    )
    .unwrap();
    assert_eq!(
        read_frame(&mut sub_rx).unwrap().unwrap(),
        Frame::ConnAck { code: code::OK }
    );
    write_frame(
        &mut sub_tx,
        &Frame::Sub {
            pattern: "telemetry/+/spo2_pct".into(),
        },
    )
    .unwrap();
    match read_frame(&mut sub_rx).unwrap().unwrap() {
        Frame::SubAck { code: c, pattern } => {
            assert_eq!(c, code::OK);
            assert_eq!(pattern, "telemetry/+/spo2_pct");
        }
        other => panic!("wanted SUBACK, got {other:?}"),
    }

    // Publisher rides a second connection of the same broker.
    let ((mut pub_rx, mut pub_tx), (srv_r2, srv_w2)) = duplex_pair();
    let b2 = broker.clone();
    let pub_srv = thread::spawn(move || serve_duplex(b2, srv_r2, srv_w2));
    write_frame(
        &mut pub_tx,
        &Frame::Connect {
            client_id: "sensor".into(),
            token: "tok-a".into(),
        },
    )
    .unwrap();
    assert_eq!(
        read_frame(&mut pub_rx).unwrap().unwrap(),
        Frame::ConnAck { code: code::OK }
    );
    write_frame(
        &mut pub_tx,
        &Frame::pub_from_bytes("telemetry/dev-1/spo2_pct", b"96.5"),
    )
    .unwrap();
    match read_frame(&mut pub_rx).unwrap().unwrap() {
        Frame::PubAck { code: c, .. } => assert_eq!(c, code::OK),
        other => panic!("wanted PUBACK, got {other:?}"),
    }

    match read_frame(&mut sub_rx).unwrap().unwrap() {
        Frame::Msg {
            topic,
            payload,
            publisher_id,
            msg_id,
            ..
        } => {
            assert_eq!(topic, "telemetry/dev-1/spo2_pct");
            assert_eq!(Frame::decode_payload(&payload).unwrap(), b"96.5");
            assert_eq!(publisher_id, "sensor");
            write_frame(
                &mut sub_tx,
                &Frame::PubAck {
                    msg_id,
                    code: code::OK,
                },
            )
            .unwrap();
        }
        other => panic!("wanted MSG, got {other:?}"),
    }

    drop(sub_tx);
    drop(pub_tx);
    sub_srv.join().unwrap().unwrap();
    pub_srv.join().unwrap().unwrap();
}

#[test]
fn duplex_pipe_rejects_bad_token() {
    let broker = test_broker();
    broker.register("sensor", "right");
    let ((mut rx, mut tx), (srv_r, srv_w)) = duplex_pair();
    let srv = thread::spawn(move || serve_duplex(broker, srv_r, srv_w));
    write_frame(
        &mut tx,
        &Frame::Connect {
            client_id: "sensor".into(),
            token: "wrong".into(),
        },
    )
    .unwrap();
    assert_eq!(
        read_frame(&mut rx).unwrap().unwrap(),
        Frame::ConnAck {
            code: code::AUTH_FAILURE
        }
    );
    // Server hangs up after a refused handshake.
    assert_eq!(read_frame(&mut rx).unwrap(), None);
    srv.join().unwrap().unwrap();
}

#[test]
fn duplex_pipe_first_frame_must_be_connect() {
    let broker = test_broker();
    let ((mut rx, mut tx), (srv_r, srv_w)) = duplex_pair();
    let srv = thread::spawn(move || serve_duplex(broker, srv_r, srv_w));
    write_frame(&mut tx, &Frame::Ping).unwrap();
    assert_eq!(
        read_frame(&mut rx).unwrap().unwrap(),
        Frame::Close {
            code: code::PROTOCOL_ERROR
        }
    );
    srv.join().unwrap().unwrap();
}

#[test]
fn tcp_roundtrip_in_order() {
    let broker = test_broker();
    broker.register("gw-1", "alpha");
    broker.register("cloud", "beta");
    let server = serve_tcp(broker, "127.0.0.1:0").unwrap();
    let addr = server.addr().to_string();

    let mut collector = WireClient::connect(&addr, "cloud", "beta").unwrap();
    collector.subscribe("alerts/#").unwrap();

    let mut gateway = WireClient::connect(&addr, "gw-1", "alpha").unwrap();
    for i in 0..100u32 {
        gateway.publish("alerts/gw-1/info", &i.to_be_bytes()).unwrap();
    }

    let mut seen = Vec::new();
    while seen.len() < 100 {
        let msg = collector
            .next_msg(Duration::from_secs(5))
            .unwrap()
            .expect("message within timeout");
        assert_eq!(msg.topic, "alerts/gw-1/info");
        assert_eq!(msg.publisher_id, "gw-1");
        seen.push(u32::from_be_bytes(msg.payload[..4].try_into().unwrap()));
    }
    assert_eq!(seen, (0..100).collect::<Vec<_>>());

    gateway.ping().unwrap();
    collector.close().unwrap();
    gateway.close().unwrap();
    server.shutdown();
}

#[test]
fn tcp_refuses_unknown_client() {
    let broker = test_broker();
    let server = serve_tcp(broker, "127.0.0.1:0").unwrap();
    let addr = server.addr().to_string();
    match WireClient::connect(&addr, "ghost", "nope") {
        Err(ClientError::Refused(c)) => assert_eq!(c, code::AUTH_FAILURE),
        Err(other) => panic!("wanted auth refusal, got {other:?}"),
        Ok(_) => panic!("handshake unexpectedly accepted"),
    }
    server.shutdown();
}

#[test]
fn tcp_second_connect_supersedes_first() {
    let broker = test_broker();
    broker.register("gw-1", "alpha");
    let server = serve_tcp(broker, "127.0.0.1:0").unwrap();
    let addr = server.addr().to_string();

    let mut first = WireClient::connect(&addr, "gw-1", "alpha").unwrap();
    first.subscribe("x/#").unwrap();
    let _second = WireClient::connect(&addr, "gw-1", "alpha").unwrap();

    // The superseded connection ends with CLOSE carrying the supersede code.
    let outcome = first.next_msg(Duration::from_secs(5));
    match outcome {
        Err(ClientError::Closed(c)) => assert_eq!(c, code::SUPERSEDED),
        other => panic!("wanted CLOSE(superseded), got {other:?}"),
    }
    server.shutdown();
}

#[test]
fn tcp_unacked_message_redelivered_on_reconnect() {
    let broker = test_broker();
    broker.register("pub", "p");
    broker.register("sub", "s");
    let server = serve_tcp(broker.clone(), "127.0.0.1:0").unwrap();
    let addr = server.addr().to_string();

    {
        let mut subscriber = WireClient::connect(&addr, "sub", "s").unwrap();
        subscriber.subscribe("jobs/#").unwrap();
        // Connection dropped without reading the delivery: no ack is sent.
        let mut publisher = WireClient::connect(&addr, "pub", "p").unwrap();
        publisher.publish("jobs/1", b"payload").unwrap();
        publisher.close().unwrap();
    }

    // Give the server threads a moment to retire the old connection, then
    // reconnect; the broker must replay the undelivered message.
    let mut again = WireClient::connect(&addr, "sub", "s").unwrap();
    let msg = again
        .next_msg(Duration::from_secs(5))
        .unwrap()
        .expect("replayed message");
    assert_eq!(msg.topic, "jobs/1");
    assert_eq!(msg.payload, b"payload");
    server.shutdown();
}
