fn main() {
    std::process::exit(thema_cli::run(std::env::args_os()));
}
