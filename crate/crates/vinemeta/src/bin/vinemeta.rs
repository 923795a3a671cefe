fn main() {
    eprintln!("vinemeta: CLI not wired up yet");
    std::process::exit(3);
}
