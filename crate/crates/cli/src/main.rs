fn main() {
    std::process::exit(egosocial_cli::run(std::env::args()));
}
