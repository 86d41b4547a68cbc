fn main() {
    std::process::exit(dispatcher::cli::run(std::env::args_os()));
}
