//! A mutually authenticated handshake over an in-memory pipe for each
//! built-in suite the client prefers, then sealed frames and what happens to
//! a replayed one.
//!
//! ```text
//! cargo run --example channel
//! ```

use pqc2::agents::Cast;
use pqc2::channel::{accept_secure, connect_secure, read_frame, ChannelConfig, CipherSuite};
use pqc2::crypto::SchemeId;
use pqc2::pki::Role;
use pqc2::SystemClock;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let members = [("operator", Role::GroundStation, 6), ("broker", Role::Broker, 6)];
    let pq = Cast::generate(SchemeId::HASH_MERKLE, &members)?;
    let classical = Cast::generate(SchemeId::RSA_2048, &members)?;

    for suite in CipherSuite::all_builtin() {
        let cast = if suite.signature == SchemeId::HASH_MERKLE { &pq } else { &classical };
        let (client_creds, server_creds) = (cast.credentials("operator")?, cast.credentials("broker")?);
        let (mut client_io, mut server_io) = tokio::io::duplex(64 * 1024);

        let server = tokio::spawn(async move {
            let first = read_frame(&mut server_io).await?.expect("client hello");
            accept_secure(&mut server_io, first, &ChannelConfig::default(), &server_creds, &SystemClock, &()).await
        });
        let started = std::time::Instant::now();
        let mut client = connect_secure(
            &mut client_io,
            &ChannelConfig::with_suites(vec![suite]),
            &client_creds,
            &SystemClock,
            &(),
        )
        .await?;
        let elapsed = started.elapsed();
        let mut server = server.await??;
        assert_eq!(client.keys().c2s_key, server.keys().c2s_key);

        let frame = client.seal_frame(b"v=0.5 omega=0.0")?;
        let opened = server.open_frame(&frame)?;
        let replayed = server.open_frame(&frame);
        println!(
            "{:<42} {:>7.2} ms  frame {:>3} B  opened {:?}  replay {}",
            suite.to_string(),
            elapsed.as_secs_f64() * 1e3,
            frame.len(),
            String::from_utf8_lossy(&opened),
            match replayed {
                Ok(_) => "accepted".to_string(),
                Err(e) => format!("refused ({e})"),
            }
        );
    }
    Ok(())
}
