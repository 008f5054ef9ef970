fn main() {
    std::process::exit(flowcast_cli::run(std::env::args_os()));
}
