//! Wire-protocol tour: build typed messages, encode them into frames,
//! decode them back, walk the session state machine, and pretty-print a
//! captured stream.

use disaggrl::proto::{
    decode_frame, dump_frames, encode_frame, session_step, Dtype, Message, ObsSpecEntry,
    SessionState, WireTensor,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hello = Message::Hello {
        replica_id: 0,
        num_envs: 4,
        obs_spec: vec![
            ObsSpecEntry {
                name: "depth".into(),
                dtype: Dtype::F32,
                dims: vec![1, 32, 32],
            },
            ObsSpecEntry {
                name: "proprio".into(),
                dtype: Dtype::F32,
                dims: vec![7],
            },
        ],
    };
    let actions = Message::Actions {
        actions: WireTensor::f32(vec![4, 3], vec![0.25; 12])?,
    };
    let shutdown = Message::Shutdown;

    // every frame costs exactly 10 bytes of overhead
    for msg in [&hello, &actions, &shutdown] {
        let bytes = encode_frame(msg)?;
        let (back, used) = decode_frame(&bytes)?;
        assert_eq!(&back, msg);
        assert_eq!(used, bytes.len());
        println!(
            "{:<10} -> {} bytes ({} payload)",
            msg.type_name(),
            bytes.len(),
            bytes.len() - 10
        );
    }

    // the session machine enforces the Hello/InitialObs/Actions/StepResult
    // ordering; out-of-order messages are fatal
    let mut state = SessionState::AwaitHello;
    state = session_step(state, &hello)?;
    let err = session_step(state, &actions).unwrap_err();
    println!("out-of-order rejected: {err}");

    // capture a short stream and dump it
    let mut capture = Vec::new();
    capture.extend(encode_frame(&hello)?);
    capture.extend(encode_frame(&actions)?);
    capture.extend(encode_frame(&shutdown)?);
    println!("\ncaptured stream:");
    dump_frames(&capture, &mut std::io::stdout())?;
    Ok(())
}
