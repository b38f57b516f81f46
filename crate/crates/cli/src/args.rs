use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "smartrescue",
    version,
    about = "Emergency sensing over content-based publish/subscribe"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the broker until interrupted.
    Broker(BrokerArgs),
    /// Publish one event, or replay a recorded event log.
    Publish(PublishArgs),
    /// Print matching events as they arrive, one line each exactly as published.
    Subscribe(SubscribeArgs),
    /// Drive a ship-fire scenario's simulated phones against a broker.
    Simulate(SimulateArgs),
    /// Archive every event and serve the query API and dashboard.
    Aggregate(AggregateArgs),
    /// Measure fan-out delivery and latency with in-process clients.
    Loadtest(LoadtestArgs),
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    #[arg(long, default_value_t = smartrescue_broker::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    pub bind: String,
    /// Serve a JSON metrics snapshot over HTTP on this port.
    #[arg(long)]
    pub stats_port: Option<u16>,
    /// Frames buffered per session before new ones are dropped.
    #[arg(long, default_value_t = smartrescue_broker::DEFAULT_QUEUE_CAP)]
    pub queue_cap: usize,
    #[arg(long, default_value_t = smartrescue_broker::MAX_SUBSCRIPTIONS_PER_SESSION)]
    pub max_subscriptions: usize,
}

#[derive(Debug, Args)]
pub struct PublishArgs {
    #[arg(long, default_value = "127.0.0.1:7470")]
    pub broker: String,
    #[arg(long, default_value = "cli-publisher")]
    pub client_id: String,
    /// Replay event lines from this file, one session per publisher.
    #[arg(long, conflicts_with_all = ["kind", "value", "lat", "lon"])]
    pub from_file: Option<PathBuf>,
    /// Replay speed multiplier applied to the recorded timestamp gaps.
    #[arg(long, default_value_t = 1.0, requires = "from_file")]
    pub speed: f64,
    #[arg(long, required_unless_present = "from_file")]
    pub kind: Option<String>,
    /// A number, or `x,y,z` for the accelerometer.
    #[arg(long, required_unless_present = "from_file", allow_hyphen_values = true)]
    pub value: Option<String>,
    #[arg(long, required_unless_present = "from_file", allow_hyphen_values = true)]
    pub lat: Option<f64>,
    #[arg(long, required_unless_present = "from_file", allow_hyphen_values = true)]
    pub lon: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub accuracy: f64,
    /// Event time; defaults to now.
    #[arg(long)]
    pub timestamp_ms: Option<i64>,
}

#[derive(Debug, Args)]
pub struct SubscribeArgs {
    #[arg(long, default_value = "127.0.0.1:7470")]
    pub broker: String,
    /// Subscription predicate, e.g. `kind=THERMOMETER and value>60`. Empty
    /// matches everything.
    #[arg(long, default_value = "")]
    pub filter: String,
    #[arg(long)]
    pub client_id: Option<String>,
    /// Exit after this many events.
    #[arg(long)]
    pub count: Option<u64>,
    /// Also print PRESENCE frames.
    #[arg(long)]
    pub presence: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7470")]
    pub broker: String,
    /// Override the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Publish as fast as possible with timestamps from a fixed epoch.
    #[arg(long)]
    pub virtual_clock: bool,
    /// Real-time pacing multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long, default_value = "127.0.0.1:7470")]
    pub broker: String,
    #[arg(long, default_value = "smartrescue-events.ndjson")]
    pub store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub http_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub http_bind: String,
    /// Built dashboard directory served under /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = smartrescue_aggregate::DEFAULT_STORE_CAP)]
    pub cap: usize,
    #[arg(long, default_value = smartrescue_aggregate::service::DEFAULT_CLIENT_ID)]
    pub client_id: String,
}

#[derive(Debug, Args)]
pub struct LoadtestArgs {
    #[arg(short = 'P', long, default_value_t = 1)]
    pub publishers: usize,
    #[arg(short = 'S', long, default_value_t = 30)]
    pub subscribers: usize,
    /// Events per second, per publisher.
    #[arg(short = 'R', long, default_value_t = 5.0)]
    pub rate: f64,
    /// Seconds of publishing.
    #[arg(short = 'T', long, default_value_t = 60.0)]
    pub duration: f64,
    /// Use an external broker instead of an in-process one.
    #[arg(long)]
    pub broker: Option<String>,
    #[arg(long, default_value_t = smartrescue_broker::DEFAULT_QUEUE_CAP)]
    pub queue_cap: usize,
    /// Subscribers that never read, to provoke slow-consumer drops.
    #[arg(long, default_value_t = 0)]
    pub stalled: usize,
    #[arg(long, default_value_t = 3.0)]
    pub drain_timeout: f64,
}
