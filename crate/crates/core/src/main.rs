fn main() {
    std::process::exit(playlist_sim::cli::run());
}
