fn main() {
    // Placeholder until the CLI module lands.
    eprintln!("bdmlab: command-line interface not wired up yet");
    std::process::exit(2);
}
