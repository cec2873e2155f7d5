fn main() {
    std::process::exit(ecgcrn::cli::run(std::env::args_os()));
}
