//! Prints the stock synthetic scenario as JSON, ready for `hoianom synth`.
//!
//! ```sh
//! cargo run -p hoi-anomaly --example stock_scenario > scenario.json
//! ```

use hoi_anomaly::synth::ScenarioSpec;

fn main() {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(42);
    println!(
        "{}",
        serde_json::to_string_pretty(&ScenarioSpec::example(seed)).expect("serializable")
    );
}
