fn main() {
    std::process::exit(convex_wgan::cli::run(std::env::args_os()));
}
